"""Resample → crop → clamp → standardize, in that order."""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from ..numerics.kernels import trilinear_sample
from .records import CtVolume

HU_MIN = -1000.0
HU_MAX = 400.0
AIR_HU = -1000.0
STD_EPS = 1e-8


def resample_isotropic(vol: CtVolume, target_mm: float = 1.0) -> CtVolume:
    """Trilinear resampling onto a grid with spacing ``target_mm`` on every axis.

    Output voxel k sits at k·target_mm from the first input voxel centre;
    the grid stops at the last position that still lies inside the input.
    """
    if target_mm <= 0:
        raise DataError(f"target spacing must be positive, got {target_mm}")
    src = np.asarray(vol.voxels, dtype=np.float64)
    if src.ndim != 3 or min(src.shape) < 1:
        raise DataError(f"cannot resample a volume of shape {src.shape}")
    axes = []
    for n, sp in zip(src.shape, vol.spacing):
        extent = (n - 1) * sp
        m = int(np.floor(extent / target_mm + 1e-9)) + 1
        axes.append(np.arange(m) * (target_mm / sp))
    z, y, x = np.meshgrid(*axes, indexing="ij")
    out = trilinear_sample(src, z, y, x, fill=AIR_HU)
    return CtVolume(out, (target_mm, target_mm, target_mm))


def crop_cube(vol: CtVolume, center_mm, size: int = 32) -> np.ndarray:
    """``size``³ voxels around the voxel nearest ``center_mm``; outside is air (−1000 HU)."""
    sp = vol.spacing
    if not (sp[0] == sp[1] == sp[2]):
        raise DataError(f"crop_cube needs an isotropic volume, got spacing {sp}")
    data = np.asarray(vol.voxels, dtype=np.float64)
    center = [int(np.floor(c / sp[0] + 0.5)) for c in center_mm]
    if any(c < 0 or c >= n for c, n in zip(center, data.shape)):
        raise DataError(f"centre {tuple(center_mm)} mm lies outside the volume")
    out = np.full((size, size, size), AIR_HU)
    src_sl, dst_sl = [], []
    for c, n in zip(center, data.shape):
        lo = c - size // 2
        a, b = max(lo, 0), min(lo + size, n)
        src_sl.append(slice(a, b))
        dst_sl.append(slice(a - lo, b - lo))
    out[tuple(dst_sl)] = data[tuple(src_sl)]
    return out


def clamp_hu(x) -> np.ndarray:
    return np.clip(np.asarray(x, dtype=np.float64), HU_MIN, HU_MAX)


def standardize(cube) -> np.ndarray:
    """Zero mean, unit standard deviation; a constant cube becomes all zeros."""
    cube = np.asarray(cube, dtype=np.float64)
    mean = cube.mean()
    std = cube.std()
    if std <= STD_EPS:
        return np.zeros_like(cube)
    return (cube - mean) / std


def preprocess(vol: CtVolume, center_mm, size: int = 32, target_mm: float = 1.0) -> tuple[np.ndarray, float]:
    """Full pipeline for one nodule; also returns where air lands after standardization."""
    iso = resample_isotropic(vol, target_mm)
    cube = clamp_hu(crop_cube(iso, center_mm, size))
    mean, std = cube.mean(), cube.std()
    if std <= STD_EPS:
        return np.zeros_like(cube), 0.0
    return (cube - mean) / std, float((AIR_HU - mean) / std)

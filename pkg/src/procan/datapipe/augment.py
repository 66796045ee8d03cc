"""Rotation augmentation: 3 axes × 7 angles = 21 views of one cube."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from ..numerics.kernels import trilinear_sample

AXES = ("z", "y", "x")
ANGLES = (0, 45, 90, 135, 180, 225, 270)
# plane rotated by a turn about each axis
_PLANES = {"z": (1, 2), "y": (0, 2), "x": (0, 1)}


def _check_cube(cube) -> np.ndarray:
    cube = np.asarray(cube, dtype=np.float64)
    if cube.ndim != 3 or not (cube.shape[0] == cube.shape[1] == cube.shape[2]):
        raise DimensionError(f"augmentation needs a cubic volume, got shape {cube.shape}")
    return cube


def rotate90(cube: np.ndarray, axis: str, k: int = 1) -> np.ndarray:
    """Exact quarter turns: an index permutation, no interpolation."""
    return np.rot90(cube, k % 4, axes=_PLANES[axis])


def rotate(cube, axis: str, angle: float, fill: float = 0.0) -> np.ndarray:
    """Rotate about ``axis`` through the cube centre.

    Quarter-turn angles are routed to :func:`rotate90`; any other angle is
    resampled trilinearly with ``fill`` outside the source cube. Both paths
    turn in the same direction, so the interpolated 90° agrees with the exact one.
    """
    cube = _check_cube(cube)
    if axis not in _PLANES:
        raise DimensionError(f"axis must be one of {AXES}, got {axis!r}")
    if float(angle) % 90 == 0:
        return rotate90(cube, axis, int(angle) // 90).copy()
    return rotate_interp(cube, axis, angle, fill)


def rotate_interp(cube: np.ndarray, axis: str, angle: float, fill: float = 0.0) -> np.ndarray:
    """Trilinear rotation for any angle."""
    n = cube.shape[0]
    c = (n - 1) / 2.0
    theta = np.deg2rad(angle)
    cos, sin = np.cos(theta), np.sin(theta)
    a_ax, b_ax = _PLANES[axis]
    grid = np.meshgrid(*(np.arange(n, dtype=np.float64),) * 3, indexing="ij")
    a = grid[a_ax] - c
    b = grid[b_ax] - c
    src = list(grid)
    src[a_ax] = cos * a + sin * b + c
    src[b_ax] = -sin * a + cos * b + c
    # sin/cos rounding must not push on-grid edge points outside the cube
    src = [np.where(np.abs(s - np.rint(s)) < 1e-9, np.rint(s), s) for s in src]
    return trilinear_sample(cube, src[0], src[1], src[2], fill=fill)


def augment(cube, fill: float | None = None, dedupe: bool = False) -> list[np.ndarray]:
    """All rotations, axis-major then angle-minor.

    ``fill`` should be the standardized value of air for this cube; when not
    given the cube minimum is used, which is that value whenever air is present.
    With ``dedupe`` the identity is kept once, giving 19 views.
    """
    cube = _check_cube(cube)
    fill = float(cube.min()) if fill is None else float(fill)
    out = []
    for i, axis in enumerate(AXES):
        for angle in ANGLES:
            if angle == 0:
                if dedupe and i > 0:
                    continue
                out.append(cube.copy())
            else:
                out.append(rotate(cube, axis, angle, fill))
    return out


def augment_one(cube, index: int, fill: float | None = None) -> np.ndarray:
    """The ``index``-th entry of :func:`augment` without building the others."""
    cube = _check_cube(cube)
    if not 0 <= index < len(AXES) * len(ANGLES):
        raise DimensionError(f"augmentation index {index} outside 0-20")
    axis, angle = AXES[index // len(ANGLES)], ANGLES[index % len(ANGLES)]
    fill = float(cube.min()) if fill is None else float(fill)
    return cube.copy() if angle == 0 else rotate(cube, axis, angle, fill)

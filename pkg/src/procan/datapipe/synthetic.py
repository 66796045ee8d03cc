"""Seeded stand-in dataset: soft, rippled spheres in noisy lung parenchyma.

Malignancy is driven by size (malignant iff d + N(0, 1.5) > 10 mm) with a
second cue in surface roughness and interior texture, so mid-sized nodules
are separable but not trivially so.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from .records import CtVolume, NoduleRecord

SIZES = (16, 32)
MIN_RECORDS = 20
DIAMETER_RANGE_MM = (3.0, 30.0)
LABEL_THRESHOLD_MM = 10.0
LABEL_NOISE_MM = 1.5
PARENCHYMA_HU = -850.0
NODULE_HU = 40.0
ANISOTROPY = 1.25  # z spacing relative to in-plane spacing
FIELD_MM = 40.0


def target_spacing(size: int) -> float:
    """Isotropic spacing giving a 32 mm field of view for a ``size``³ cube."""
    return 32.0 / size


def _unit_vectors(rng: np.random.Generator, k: int) -> np.ndarray:
    v = rng.normal(size=(k, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _rating(label: int, diameter: float, rng: np.random.Generator) -> int:
    score = (diameter - LABEL_THRESHOLD_MM) / 5.0 + rng.normal(0.0, 0.7)
    if label:
        return 5 if score > 0.8 else 4
    return 1 if score < -0.8 else 2


def synth_record(index: int, rng: np.random.Generator, size: int) -> NoduleRecord:
    lo, hi = DIAMETER_RANGE_MM
    d = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    label = int(d + rng.normal(0.0, LABEL_NOISE_MM) > LABEL_THRESHOLD_MM)
    roughness = max(0.0, 0.06 + 0.22 * label + rng.normal(0.0, 0.06))
    texture = 40.0 + 120.0 * label + abs(rng.normal(0.0, 30.0))

    t = target_spacing(size)
    spacing = (ANISOTROPY * t, t, t)
    dims = tuple(int(np.ceil(FIELD_MM / s)) + 1 for s in spacing)
    extent = np.array([(n - 1) * s for n, s in zip(dims, spacing)])
    center = extent / 2 + rng.uniform(-2.0, 2.0, size=3)

    zz, yy, xx = np.meshgrid(*(np.arange(n) * s for n, s in zip(dims, spacing)), indexing="ij")
    rel = np.stack([zz - center[0], yy - center[1], xx - center[2]])
    r = np.sqrt((rel**2).sum(axis=0))
    u = rel / np.maximum(r, 1e-9)

    # angular ripple of the surface: a few random directional cosines
    k = 5
    dirs = _unit_vectors(rng, k)
    freq = rng.uniform(2.0, 5.0, size=k)
    phase = rng.uniform(0.0, 2 * np.pi, size=k)
    proj = np.tensordot(dirs, u, axes=(1, 0))
    ripple = np.cos(freq[:, None, None, None] * np.pi * proj + phase[:, None, None, None]).mean(axis=0)
    radius = (d / 2) * (1.0 + roughness * ripple)

    soft = 0.6 * t
    occupancy = 1.0 / (1.0 + np.exp(-(radius - r) / soft))
    interior = NODULE_HU + texture * rng.normal(size=r.shape)
    background = PARENCHYMA_HU + 35.0 * rng.normal(size=r.shape)
    hu = occupancy * interior + (1.0 - occupancy) * background

    voxels = np.clip(np.rint(hu), -1024, 3071).astype(np.int16)
    rid = f"syn{index:05d}"
    return NoduleRecord(
        id=rid,
        volume_file=f"{rid}.vol",
        center_mm=tuple(float(c) for c in center),
        diameter_mm=round(d, 6),
        median_rating=_rating(label, d, rng),
        label="malignant" if label else "benign",
        volume=CtVolume(voxels, spacing),
    )


def gen_synthetic(n: int, seed: int = 0, size: int = 16) -> list[NoduleRecord]:
    """``n`` records, each drawn from its own child stream of ``seed``."""
    if size not in SIZES:
        raise ConfigurationError(f"synthetic cube size must be one of {SIZES}, got {size}")
    if n < MIN_RECORDS:
        raise ConfigurationError(f"need at least {MIN_RECORDS} records for a stratified split, got {n}")
    children = np.random.SeedSequence(seed).spawn(n)
    return [synth_record(i, np.random.default_rng(ss), size) for i, ss in enumerate(children)]

"""Ingestion, preprocessing, augmentation and the synthetic dataset."""

from .augment import ANGLES, AXES, augment, augment_one, rotate, rotate90
from .preprocess import (
    AIR_HU,
    HU_MAX,
    HU_MIN,
    clamp_hu,
    crop_cube,
    preprocess,
    resample_isotropic,
    standardize,
)
from .records import (
    INDEX_HEADER,
    CtVolume,
    NoduleRecord,
    Sample,
    load_dataset,
    read_volume,
    write_dataset,
    write_volume,
)
from .synthetic import gen_synthetic, target_spacing

__all__ = [
    "ANGLES",
    "AXES",
    "AIR_HU",
    "HU_MAX",
    "HU_MIN",
    "INDEX_HEADER",
    "CtVolume",
    "NoduleRecord",
    "Sample",
    "augment",
    "augment_one",
    "clamp_hu",
    "crop_cube",
    "gen_synthetic",
    "load_dataset",
    "preprocess",
    "read_volume",
    "resample_isotropic",
    "rotate",
    "rotate90",
    "standardize",
    "target_spacing",
    "write_dataset",
    "write_volume",
]

"""Record types plus the dataset index and raw volume file formats.

Index: CSV with header
``id,volume_file,center_z_mm,center_y_mm,center_x_mm,diameter_mm,median_rating,label``
where ``label`` is ``benign``/``malignant`` and ``median_rating`` may be empty.
Centres are millimetres from the centre of voxel (0, 0, 0).

Volume file: ASCII header lines ::

    PROCANVOL 1
    dims D H W
    spacing Z Y X
    type int16le
    end

followed by D·H·W little-endian int16 HU values in row-major (z, y, x) order.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError

log = logging.getLogger(__name__)

INDEX_HEADER = (
    "id",
    "volume_file",
    "center_z_mm",
    "center_y_mm",
    "center_x_mm",
    "diameter_mm",
    "median_rating",
    "label",
)
LABELS = ("benign", "malignant")
VOLUME_MAGIC = "PROCANVOL 1"
MAX_DIAMETER_MM = 30.0


@dataclass
class CtVolume:
    voxels: np.ndarray  # (D, H, W) Hounsfield units
    spacing: tuple[float, float, float]  # (z, y, x) mm per voxel

    def __post_init__(self):
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise DataError(f"voxel spacing must be three positive values, got {self.spacing}")
        if self.voxels.ndim != 3 or min(self.voxels.shape) < 1:
            raise DataError(f"volume must be a non-empty 3-d array, got shape {self.voxels.shape}")


@dataclass
class NoduleRecord:
    id: str
    volume_file: str
    center_mm: tuple[float, float, float]
    diameter_mm: float
    median_rating: int | None
    label: str
    volume: CtVolume | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.center_mm = tuple(float(c) for c in self.center_mm)
        if self.label not in LABELS:
            raise DataError(f"record {self.id}: label must be benign or malignant, got {self.label!r}")
        if not 0 < self.diameter_mm <= MAX_DIAMETER_MM:
            raise DataError(f"record {self.id}: diameter {self.diameter_mm} mm outside (0, 30]")
        r = self.median_rating
        if r is not None:
            if r not in (1, 2, 3, 4, 5):
                raise DataError(f"record {self.id}: median rating {r} outside 1-5")
            if (r <= 2 and self.label != "benign") or (r >= 4 and self.label != "malignant"):
                raise DataError(f"record {self.id}: rating {r} inconsistent with label {self.label}")

    @property
    def y(self) -> int:
        return int(self.label == "malignant")


@dataclass
class Sample:
    cube: np.ndarray
    label: int
    difficulty: str
    id: str = ""
    fill: float = 0.0  # standardized image of air, used when rotating


def write_volume(path, vol: CtVolume) -> None:
    d, h, w = vol.voxels.shape
    header = (
        f"{VOLUME_MAGIC}\ndims {d} {h} {w}\n"
        f"spacing {vol.spacing[0]!r} {vol.spacing[1]!r} {vol.spacing[2]!r}\ntype int16le\nend\n"
    )
    data = np.clip(np.rint(vol.voxels), -32768, 32767).astype("<i2")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes(order="C"))


def read_volume(path) -> CtVolume:
    path = Path(path)
    with open(path, "rb") as fh:
        lines = []
        while True:
            line = fh.readline()
            if not line:
                raise DataError(f"{path}: volume header is not terminated by 'end'")
            text = line.decode("ascii", errors="replace").strip()
            if text == "end":
                break
            lines.append(text)
        payload = fh.read()
    if not lines or lines[0] != VOLUME_MAGIC:
        raise DataError(f"{path}: not a procan volume file")
    fields = {}
    for text in lines[1:]:
        key, *vals = text.split()
        fields[key] = vals
    try:
        dims = tuple(int(v) for v in fields["dims"])
        spacing = tuple(float(v) for v in fields["spacing"])
        dtype = fields["type"][0]
    except (KeyError, ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed volume header") from exc
    if dtype != "int16le":
        raise DataError(f"{path}: unsupported voxel type {dtype}")
    expected = int(np.prod(dims)) * 2
    if len(payload) != expected:
        raise DataError(f"{path}: expected {expected} voxel bytes, found {len(payload)}")
    voxels = np.frombuffer(payload, dtype="<i2").reshape(dims).astype(np.int16)
    return CtVolume(voxels, spacing)


def _parse_row(row: dict, lineno: int) -> NoduleRecord:
    try:
        rating_text = (row["median_rating"] or "").strip()
        rating = int(rating_text) if rating_text else None
        center = (float(row["center_z_mm"]), float(row["center_y_mm"]), float(row["center_x_mm"]))
        diameter = float(row["diameter_mm"])
        if not all(math.isfinite(v) for v in (*center, diameter)):
            raise ValueError("non-finite value")
        return NoduleRecord(row["id"], row["volume_file"], center, diameter, rating, row["label"].strip())
    except (KeyError, ValueError, TypeError, DataError) as exc:
        raise DataError(f"index row {lineno}: {exc}") from exc


def load_dataset(index_path, volumes_dir=None) -> list[NoduleRecord]:
    """Read and validate an index; rating-3 records are dropped with a logged count."""
    index_path = Path(index_path)
    volumes_dir = Path(volumes_dir) if volumes_dir is not None else index_path.parent
    if not index_path.exists():
        raise DataError(f"index file {index_path} does not exist")
    records = []
    excluded = 0
    with open(index_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != INDEX_HEADER:
            raise DataError(f"index header must be {','.join(INDEX_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise DataError(f"index row {lineno}: wrong number of fields")
            rec = _parse_row(row, lineno)
            if rec.median_rating == 3:
                excluded += 1
                continue
            vol_path = volumes_dir / rec.volume_file
            if not vol_path.exists():
                raise DataError(f"record {rec.id}: volume file {vol_path} is missing")
            rec.volume = read_volume(vol_path)
            records.append(rec)
    log.info("loaded %d records, excluded %d with median rating 3", len(records), excluded)
    load_dataset.last_excluded = excluded
    return records


load_dataset.last_excluded = 0


def write_dataset(records, out_dir, index_name: str = "index.csv") -> Path:
    """Write every record's volume plus the index; returns the index path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index_path = out_dir / index_name
    with open(index_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(INDEX_HEADER)
        for rec in records:
            if rec.volume is None:
                raise DataError(f"record {rec.id} has no volume to write")
            write_volume(out_dir / rec.volume_file, rec.volume)
            writer.writerow(
                [
                    rec.id,
                    rec.volume_file,
                    repr(rec.center_mm[0]),
                    repr(rec.center_mm[1]),
                    repr(rec.center_mm[2]),
                    repr(rec.diameter_mm),
                    "" if rec.median_rating is None else rec.median_rating,
                    rec.label,
                ]
            )
    return index_path

"""64-bit perceptual hashes, Hamming distance, and identical-hash dedup groups.

Pipeline, fixed as the interchange-critical convention: Rec. 601 luma ->
bilinear resize to 32x32 -> unnormalized 2-D type-II DCT -> top-left 8x8
coefficient block -> median of those 64 values (DC included) -> bit i set
iff coefficient_i > median, row-major, first coefficient in the most
significant bit. Uniqueness downstream means exact hash equality.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

RESIZE_SIZE = 32
BLOCK_SIZE = 8

# Rec. 601 luma weights.
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class PHash64:
    bits: int
    image_id: str = ""

    def hex(self) -> str:
        return f"{self.bits:016x}"


class ImageDecodeError(ValueError):
    pass


def _dct_matrix(n: int) -> np.ndarray:
    u = np.arange(n).reshape(-1, 1)
    x = np.arange(n).reshape(1, -1)
    return np.cos(np.pi * (2 * x + 1) * u / (2 * n))


_DCT32 = _dct_matrix(RESIZE_SIZE)


def dct2d(block: np.ndarray) -> np.ndarray:
    """Unnormalized 2-D type-II DCT: C[u,v] = sum_xy A[x,y] cos(..u..) cos(..v..)."""
    a = np.asarray(block, dtype=np.float64)
    rows, cols = a.shape
    m_rows = _DCT32 if rows == RESIZE_SIZE else _dct_matrix(rows)
    m_cols = _DCT32 if cols == RESIZE_SIZE else _dct_matrix(cols)
    return m_rows @ a @ m_cols.T


def to_luminance(image: Image.Image) -> np.ndarray:
    """Rec. 601 grayscale as float64 in [0, 255]."""
    if image.mode == "L":
        return np.asarray(image, dtype=np.float64)
    if image.mode == "F":
        return np.asarray(image, dtype=np.float64)
    rgb = np.asarray(image.convert("RGB"), dtype=np.float64)
    return rgb @ _LUMA


def compute_phash(image: Image.Image, image_id: str = "") -> PHash64:
    gray = to_luminance(image)
    small = Image.fromarray(gray.astype(np.float32), mode="F").resize(
        (RESIZE_SIZE, RESIZE_SIZE), Image.BILINEAR)
    coeffs = dct2d(np.asarray(small, dtype=np.float64))
    block = coeffs[:BLOCK_SIZE, :BLOCK_SIZE].copy()
    # Coefficients that are analytically zero come out as ~1e-11 matrix-product
    # dust; snap them so flat images hash identically across BLAS builds.
    block[np.abs(block) < 1e-8] = 0.0
    median = float(np.median(block))
    bits = 0
    for value in block.ravel():
        bits = (bits << 1) | int(value > median)
    return PHash64(bits=bits, image_id=image_id)


def hash_file(path: str | Path, image_id: str = "") -> PHash64:
    try:
        with Image.open(path) as img:
            img.load()
            return compute_phash(img, image_id or str(path))
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageDecodeError(f"cannot decode {path}: {exc}") from exc


def hash_bytes(data: bytes, image_id: str = "") -> PHash64:
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
            return compute_phash(img, image_id)
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageDecodeError(f"cannot decode image bytes: {exc}") from exc


def hamming(a: PHash64, b: PHash64) -> int:
    return (a.bits ^ b.bits).bit_count()


def dedup_groups(records: Iterable[PHash64]) -> dict[int, list[PHash64]]:
    """Partition by exact hash equality; group count is the unique-image count."""
    groups: dict[int, list[PHash64]] = {}
    for rec in records:
        groups.setdefault(rec.bits, []).append(rec)
    return groups


def near_duplicate_groups(records: Sequence[PHash64], max_distance: int) -> list[list[PHash64]]:
    """Union-find clustering at Hamming <= max_distance. Off the default path:
    dataset uniqueness counting uses exact equality only."""
    parent = list(range(len(records)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(records)):
        for j in range(i + 1, len(records)):
            if hamming(records[i], records[j]) <= max_distance:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[rj] = ri
    clusters: dict[int, list[PHash64]] = {}
    for i, rec in enumerate(records):
        clusters.setdefault(find(i), []).append(rec)
    return list(clusters.values())


def write_hashes(records: Iterable[PHash64], dest: str | Path) -> None:
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "phash_hex"])
        for rec in records:
            writer.writerow([rec.image_id, rec.hex()])


def read_hashes(path: str | Path) -> list[PHash64]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(PHash64(bits=int(row["phash_hex"], 16), image_id=row["image_id"]))
    return out

"""Dataset ingestion (IDX), resampling, label filtering and file export."""

from __future__ import annotations

import csv
import gzip
import io
import math
import os
import struct
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

IMAGES_MAGIC = 0x00000803  # u8 payload, 3 dimensions
LABELS_MAGIC = 0x00000801  # u8 payload, 1 dimension


class IDXError(ValueError):
    pass


@dataclass
class LabeledImageSet:
    images: np.ndarray  # (n, side, side) floats in [0, 1]
    labels: np.ndarray  # (n,) ints 0-9
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.ndim != 3:
            raise ValueError("images must be an (n, rows, cols) array")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("image values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "LabeledImageSet":
        return LabeledImageSet(self.images[idx], self.labels[idx], dict(self.source))


def _read_header(data: bytes, magic: int, what: str) -> tuple[tuple[int, ...], int]:
    if len(data) < 4:
        raise IDXError(f"{what}: truncated header")
    (got,) = struct.unpack(">I", data[:4])
    if got != magic:
        raise IDXError(f"{what}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    end = 4 + 4 * ndim
    if len(data) < end:
        raise IDXError(f"{what}: truncated header")
    dims = struct.unpack(f">{ndim}I", data[4:end])
    return dims, end


def _payload(data: bytes, dims: tuple[int, ...], offset: int, what: str) -> np.ndarray:
    count = math.prod(dims)
    if len(data) - offset < count:
        raise IDXError(f"{what}: payload truncated ({len(data) - offset} of {count} bytes)")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=offset).reshape(dims)


def _maybe_gunzip(data: bytes) -> bytes:
    if data[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(data)
        except (OSError, EOFError, zlib.error) as exc:
            raise IDXError(f"corrupt gzip stream: {exc}") from None
    return data


def parse_idx(images: bytes, labels: bytes) -> LabeledImageSet:
    """Decode an IDX image file and its label file (raw or gzip bytes)."""
    images = _maybe_gunzip(bytes(images))
    labels = _maybe_gunzip(bytes(labels))
    idims, ioff = _read_header(images, IMAGES_MAGIC, "images")
    ldims, loff = _read_header(labels, LABELS_MAGIC, "labels")
    if idims[0] != ldims[0]:
        raise IDXError(f"count mismatch: {idims[0]} images vs {ldims[0]} labels")
    pix = _payload(images, idims, ioff, "images")
    lab = _payload(labels, ldims, loff, "labels")
    return LabeledImageSet(pix / 255.0, lab.astype(int), {"rows": idims[1], "cols": idims[2]})


def load_idx(images_path: str | os.PathLike, labels_path: str | os.PathLike) -> LabeledImageSet:
    with open(images_path, "rb") as fh:
        img = fh.read()
    with open(labels_path, "rb") as fh:
        lab = fh.read()
    out = parse_idx(img, lab)
    out.source.update(images=str(images_path), labels=str(labels_path))
    return out


def encode_idx(images: np.ndarray, labels: Sequence[int]) -> tuple[bytes, bytes]:
    """Inverse of :func:`parse_idx` for uint8 images (or floats in [0, 1])."""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        images = np.clip(np.round(images * 255), 0, 255).astype(np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, r, c = images.shape
    img = struct.pack(">IIII", IMAGES_MAGIC, n, r, c) + images.tobytes()
    lab = struct.pack(">II", LABELS_MAGIC, len(labels)) + labels.tobytes()
    return img, lab


def resample(image: np.ndarray, side: int) -> np.ndarray:
    """Bilinear resize of a square image to ``side x side``.

    Corner samples are aligned, so ``side`` equal to the input size is the
    identity. The output never leaves the input's value range.
    """
    image = np.asarray(image, dtype=float)
    if side < 1:
        raise ValueError("target side must be >= 1")
    out = image
    for axis in (0, 1):
        out = _resample_axis(out, side, axis)
    return out


def _resample_axis(a: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = a.shape[axis]
    if n_out == 1 or n_in == 1:
        pos = np.full(n_out, (n_in - 1) / 2.0)
    else:
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    i0 = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = pos - i0
    a0 = np.take(a, i0, axis=axis)
    a1 = np.take(a, i1, axis=axis)
    shape = [1] * a.ndim
    shape[axis] = n_out
    w = w.reshape(shape)
    return (1 - w) * a0 + w * a1


def resample_all(images: np.ndarray, side: int) -> np.ndarray:
    images = np.asarray(images, dtype=float)
    if images.shape[1] == side and images.shape[2] == side:
        return images.copy()
    out = _resample_axis(images, side, 1)
    return _resample_axis(out, side, 2)


def filter_labels(data: LabeledImageSet, wanted: Iterable[int]) -> LabeledImageSet:
    wanted = [int(v) for v in wanted]
    if not wanted:
        raise ValueError("no labels requested")
    keep = np.isin(data.labels, wanted)
    if not keep.any():
        raise ValueError(f"no samples with labels {wanted}")
    return data.take(np.flatnonzero(keep))


def balanced_subset(data: LabeledImageSet, per_class: int, rng: np.random.Generator | None = None
                    ) -> LabeledImageSet:
    """Up to ``per_class`` samples of every label present, in original order
    unless ``rng`` is given."""
    idx = []
    for lab in np.unique(data.labels):
        where = np.flatnonzero(data.labels == lab)
        if rng is not None:
            where = rng.permutation(where)
        idx.extend(where[:per_class])
    return data.take(np.sort(np.asarray(idx, dtype=int)))


# -- exports -----------------------------------------------------------------


def to_uint8(image: np.ndarray, normalize: bool = True) -> tuple[np.ndarray, float]:
    """Quantise to 8 bits; with ``normalize`` the maximum maps to 255.

    Returns the 8-bit array and the scale (value represented by 255).
    """
    a = np.asarray(image, dtype=float)
    scale = float(a.max()) if normalize and a.size and a.max() > 0 else 1.0
    q = np.clip(np.round(a / scale * 255.0), 0, 255).astype(np.uint8)
    return q, scale


def write_pgm(path: str | os.PathLike, image: np.ndarray, normalize: bool = True) -> float:
    """Write a binary (P5) PGM and return the intensity scale mapped to 255."""
    q, scale = to_uint8(image, normalize)
    rows, cols = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(q.tobytes())
    return scale


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM (P5) file")
    cols, rows, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError("only 8-bit PGM files are supported")
    pos += 1
    if len(data) - pos < rows * cols:
        raise ValueError("truncated PGM payload")
    return np.frombuffer(data, dtype=np.uint8, count=rows * cols, offset=pos).reshape(rows, cols).copy()


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()

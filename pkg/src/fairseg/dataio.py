"""File codecs: binary PGM for images and masks, a float32 soft-prediction
format, and the attribute CSV table.

Soft-prediction file layout::

    b"FSPRED1\n"
    b"<H> <W> <K>\n"            ASCII decimal
    H*W*K little-endian float32, ordered [row][col][class]
"""

from __future__ import annotations

import csv
import io
import os
import re
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import ATTRIBUTE_GROUPS, NUM_CLASSES, PROB_SUM_TOL, SPLITS, AttributeRecord, LabelMask

MAX_DIM = 16384
PRED_MAGIC = b"FSPRED1\n"
ATTRIBUTE_HEADER = ("id", "race", "gender", "ethnicity", "language", "split")


class DataFormatError(ValueError):
    """Malformed file content. ``code`` identifies the kind of failure."""

    code = "format"

    def __init__(self, message: str, field: str | None = None, offset: int | None = None):
        where = []
        if field is not None:
            where.append(f"field {field!r}")
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"[{self.code}] {message}" + (f" ({', '.join(where)})" if where else ""))
        self.field = field
        self.offset = offset


class BadMagicError(DataFormatError):
    code = "bad_magic"


class HeaderError(DataFormatError):
    code = "bad_header"


class DimensionLimitError(DataFormatError):
    code = "dimension_limit"


class PayloadSizeError(DataFormatError):
    code = "payload_mismatch"


class LabelRangeError(DataFormatError):
    code = "label_range"


class ProbabilityRangeError(DataFormatError):
    code = "probability_range"


class NormalizationError(DataFormatError):
    code = "normalization"


class ClassCountError(DataFormatError):
    code = "class_count"


class DuplicateIdError(DataFormatError):
    code = "duplicate_id"


class CategoryError(DataFormatError):
    code = "unknown_category"


class ColumnError(DataFormatError):
    code = "bad_columns"


def _check_dims(h: int, w: int, field: str = "dimensions") -> None:
    if not (0 < h <= MAX_DIM and 0 < w <= MAX_DIM):
        raise DimensionLimitError(f"dimensions {h}x{w} outside 1..{MAX_DIM}", field=field)


# --- PGM ----------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def encode_pgm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValueError(f"PGM payload must be 2-D, got shape {pixels.shape}")
    h, w = pixels.shape
    _check_dims(h, w)
    if pixels.size and (pixels.min() < 0 or pixels.max() > 255):
        raise ValueError("PGM values must lie in 0..255")
    return b"P5\n%d %d\n255\n" % (w, h) + pixels.astype(np.uint8).tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    """Parse a binary (P5) PGM with maxval 255 into a ``uint8`` array."""
    if not data.startswith(b"P5"):
        raise BadMagicError("not a binary PGM", field="magic", offset=0)
    pos = 2
    values = []
    for name in ("width", "height", "maxval"):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise HeaderError("truncated header", field=name, offset=pos)
        token = m.group(1)
        if not token.isdigit():
            raise HeaderError(f"expected an integer, got {token[:16]!r}", field=name, offset=m.start(1))
        values.append(int(token))
        pos = m.end(1)
    w, h, maxval = values
    if maxval != 255:
        raise HeaderError(f"maxval must be 255, got {maxval}", field="maxval")
    _check_dims(h, w)
    if pos >= len(data) or data[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise HeaderError("missing whitespace after maxval", field="maxval", offset=pos)
    pos += 1
    if len(data) - pos != h * w:
        raise PayloadSizeError(f"expected {h * w} payload bytes, found {len(data) - pos}", field="payload", offset=pos)
    return np.frombuffer(data, dtype=np.uint8, offset=pos).reshape(h, w).copy()


def encode_mask(mask: LabelMask) -> bytes:
    return encode_pgm(mask.labels)


def decode_mask(data: bytes) -> LabelMask:
    labels = decode_pgm(data)
    bad = np.flatnonzero(labels > NUM_CLASSES - 1)
    if bad.size:
        raise LabelRangeError(f"label {labels.flat[bad[0]]} is not in 0..{NUM_CLASSES - 1}", field="label", offset=int(bad[0]))
    return LabelMask(labels)


def quantize_image(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_image(image: np.ndarray) -> bytes:
    """Intensity in [0, 1] quantised to 0..255."""
    return encode_pgm(quantize_image(image))


def decode_image(data: bytes) -> np.ndarray:
    return decode_pgm(data).astype(np.float64) / 255.0


def visual_mask(mask: LabelMask) -> np.ndarray:
    """Labels spread over 0..255 for viewing."""
    return (mask.labels.astype(np.uint16) * 127).astype(np.uint8)


# --- soft predictions ---------------------------------------------------------


def encode_pred(probs: np.ndarray) -> bytes:
    probs = np.asarray(probs)
    if probs.ndim != 3:
        raise ValueError(f"prediction must be (H, W, K), got shape {probs.shape}")
    h, w, k = probs.shape
    _check_dims(h, w)
    _validate_probs(probs.astype("<f4"), k)
    return PRED_MAGIC + b"%d %d %d\n" % (h, w, k) + probs.astype("<f4").tobytes()


def _validate_probs(probs: np.ndarray, k: int) -> None:
    if k != NUM_CLASSES:
        raise ClassCountError(f"expected {NUM_CLASSES} classes, got {k}", field="K")
    flat = probs.reshape(-1)
    bad = np.flatnonzero(~((flat >= 0.0) & (flat <= 1.0)))
    if bad.size:
        raise ProbabilityRangeError(
            f"value {flat[bad[0]]!r} outside [0, 1]", field="probs", offset=len(PRED_MAGIC) + 4 * int(bad[0])
        )
    sums = probs.astype(np.float64).sum(axis=-1).reshape(-1)
    off = np.flatnonzero(np.abs(sums - 1.0) > PROB_SUM_TOL)
    if off.size:
        raise NormalizationError(
            f"pixel {int(off[0])} sums to {sums[off[0]]:.6f}, not 1", field="probs", offset=int(off[0])
        )


def decode_pred(data: bytes) -> np.ndarray:
    """Return the ``(H, W, K)`` float32 probability array."""
    if not data.startswith(PRED_MAGIC):
        raise BadMagicError("missing FSPRED1 magic", field="magic", offset=0)
    pos = len(PRED_MAGIC)
    end = data.find(b"\n", pos, pos + 64)
    if end < 0:
        raise HeaderError("unterminated dimension line", field="header", offset=pos)
    parts = data[pos:end].split(b" ")
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        raise HeaderError(f"expected 'H W K', got {data[pos:end][:32]!r}", field="header", offset=pos)
    h, w, k = (int(p) for p in parts)
    _check_dims(h, w)
    if k != NUM_CLASSES:
        raise ClassCountError(f"expected {NUM_CLASSES} classes, got {k}", field="K", offset=pos)
    pos = end + 1
    expected = h * w * k * 4
    if len(data) - pos != expected:
        raise PayloadSizeError(f"expected {expected} payload bytes, found {len(data) - pos}", field="payload", offset=pos)
    probs = np.frombuffer(data, dtype="<f4", offset=pos).reshape(h, w, k).copy()
    _validate_probs(probs, k)
    return probs


# --- attribute table ----------------------------------------------------------


def encode_attributes(records: Iterable[AttributeRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ATTRIBUTE_HEADER)
    seen = set()
    for r in records:
        if r.id in seen:
            raise DuplicateIdError(f"duplicate id {r.id!r}", field="id")
        seen.add(r.id)
        writer.writerow([getattr(r, col) for col in ATTRIBUTE_HEADER])
    return buf.getvalue()


def decode_attributes(text: str, required: Sequence[str] = ()) -> list[AttributeRecord]:
    """Parse the attribute CSV. ``required`` names columns that must be present."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ColumnError("empty attribute table", field="header")
    header = tuple(rows[0])
    for col in required:
        if col not in header:
            raise ColumnError(f"missing column {col!r}", field=col)
    if header != ATTRIBUTE_HEADER:
        missing = [c for c in ATTRIBUTE_HEADER if c not in header]
        name = missing[0] if missing else "header"
        raise ColumnError(f"header must be {','.join(ATTRIBUTE_HEADER)}, got {','.join(header)}", field=name)
    vocab = dict(ATTRIBUTE_GROUPS, split=SPLITS)
    records, seen = [], set()
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != len(ATTRIBUTE_HEADER):
            raise ColumnError(f"line {line}: expected {len(ATTRIBUTE_HEADER)} fields, got {len(row)}", field="row", offset=line)
        values = dict(zip(ATTRIBUTE_HEADER, row))
        if not values["id"]:
            raise ColumnError(f"line {line}: empty id", field="id", offset=line)
        if values["id"] in seen:
            raise DuplicateIdError(f"line {line}: duplicate id {values['id']!r}", field="id", offset=line)
        seen.add(values["id"])
        for col, allowed in vocab.items():
            if values[col] not in allowed:
                raise CategoryError(f"line {line}: unknown {col} {values[col]!r}", field=col, offset=line)
        records.append(AttributeRecord(**values))
    return records


# --- file helpers -------------------------------------------------------------


def atomic_write(path: str | os.PathLike, data: bytes | str) -> None:
    """Write via a sibling temp file and rename."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    kwargs = {} if isinstance(data, bytes) else {"encoding": "utf-8", "newline": ""}
    with open(tmp, mode, **kwargs) as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_mask(path, mask: LabelMask) -> None:
    atomic_write(path, encode_mask(mask))


def read_mask(path) -> LabelMask:
    return decode_mask(Path(path).read_bytes())


def write_image(path, image: np.ndarray) -> None:
    atomic_write(path, encode_image(image))


def read_image(path) -> np.ndarray:
    return decode_image(Path(path).read_bytes())


def write_pred(path, probs: np.ndarray) -> None:
    atomic_write(path, encode_pred(probs))


def read_pred(path) -> np.ndarray:
    return decode_pred(Path(path).read_bytes())


def write_attributes(path, records: Iterable[AttributeRecord]) -> None:
    atomic_write(path, encode_attributes(records))


def read_attributes(path, required: Sequence[str] = ()) -> list[AttributeRecord]:
    return decode_attributes(Path(path).read_text(encoding="utf-8"), required)


# --- dataset directories ------------------------------------------------------
#   <root>/attributes.csv
#   <root>/images/<id>.pgm
#   <root>/masks/<id>.pgm
#   <root>/masks_visual/<id>.pgm   (optional, labels scaled for viewing)


def write_dataset(root, images, masks, records, visual: bool = False) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(exist_ok=True)
    if visual:
        (root / "masks_visual").mkdir(exist_ok=True)
    for image, mask, record in zip(images, masks, records, strict=True):
        write_image(root / "images" / f"{record.id}.pgm", image)
        write_mask(root / "masks" / f"{record.id}.pgm", mask)
        if visual:
            atomic_write(root / "masks_visual" / f"{record.id}.pgm", encode_pgm(visual_mask(mask)))
    write_attributes(root / "attributes.csv", records)


def load_dataset(root, required: Sequence[str] = ()):
    """Return ``(images, masks, records)`` in attribute-table order."""
    root = Path(root)
    records = read_attributes(root / "attributes.csv", required)
    images = [read_image(root / "images" / f"{r.id}.pgm") for r in records]
    masks = [read_mask(root / "masks" / f"{r.id}.pgm") for r in records]
    for r, img, m in zip(records, images, masks):
        if img.shape != m.shape:
            raise PayloadSizeError(f"image {img.shape} and mask {m.shape} differ for {r.id!r}", field=r.id)
    return images, masks, records

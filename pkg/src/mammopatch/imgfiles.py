"""File formats for images, masks, and patch datasets.

Raw formats share a 16-byte little-endian header: 4-byte magic, u32 rows,
u32 cols, u32 reserved. "GIMG" carries u16 intensities row-major, "GMSK"
carries u8 mask bytes (nonzero = mass). 16-bit single-channel PNG and
8-bit PNG masks are accepted interchangeably via Pillow.
"""

import csv
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .patches import GrayImage, LabeledPatch, MassMask

GIMG_MAGIC = b"GIMG"
GMSK_MAGIC = b"GMSK"
_HEADER = struct.Struct("<4sIII")

MANIFEST_FIELDS = ["filename", "source_id", "origin_row", "origin_col", "label", "augment"]


def _read_header(data: bytes, magic: bytes, path):
    if len(data) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    got, rows, cols, _ = _HEADER.unpack_from(data)
    if got != magic:
        raise DataError(f"{path}: bad magic {got!r}, expected {magic!r}")
    if rows == 0 or cols == 0:
        raise DataError(f"{path}: zero-sized image")
    return rows, cols


def write_gimg(path, pixels: np.ndarray):
    px = np.ascontiguousarray(np.asarray(pixels), dtype="<u2")
    rows, cols = px.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(GIMG_MAGIC, rows, cols, 0))
        fh.write(px.tobytes())


def read_gimg(path) -> np.ndarray:
    data = Path(path).read_bytes()
    rows, cols = _read_header(data, GIMG_MAGIC, path)
    body = data[_HEADER.size :]
    if len(body) != rows * cols * 2:
        raise DataError(f"{path}: expected {rows * cols * 2} data bytes, got {len(body)}")
    return np.frombuffer(body, dtype="<u2").reshape(rows, cols).copy()


def write_gmsk(path, bits: np.ndarray):
    b = np.asarray(bits).astype(np.uint8)
    rows, cols = b.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(GMSK_MAGIC, rows, cols, 0))
        fh.write(np.ascontiguousarray(b).tobytes())


def read_gmsk(path) -> np.ndarray:
    data = Path(path).read_bytes()
    rows, cols = _read_header(data, GMSK_MAGIC, path)
    body = data[_HEADER.size :]
    if len(body) != rows * cols:
        raise DataError(f"{path}: expected {rows * cols} data bytes, got {len(body)}")
    return (np.frombuffer(body, dtype=np.uint8).reshape(rows, cols) != 0).copy()


def write_png16(path, pixels: np.ndarray):
    """16-bit single-channel PNG."""
    px = np.asarray(pixels, dtype=np.uint16)
    Image.fromarray(px).save(path, format="PNG")


def write_png_mask(path, bits: np.ndarray):
    """8-bit PNG, 255 where mass."""
    b = (np.asarray(bits).astype(bool) * np.uint8(255))
    Image.fromarray(b, mode="L").save(path, format="PNG")


def read_image_file(path, image_id=None) -> GrayImage:
    """Load a GIMG or 16-bit PNG image; the format is sniffed from the bytes."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such image file")
    head = path.open("rb").read(4)
    if head == GIMG_MAGIC:
        px = read_gimg(path)
    else:
        try:
            with Image.open(path) as im:
                px = np.asarray(im)
        except Exception as exc:
            raise DataError(f"{path}: unreadable image ({exc})") from exc
        if px.ndim != 2:
            raise DataError(f"{path}: expected single-channel image, got shape {px.shape}")
        px = px.astype(np.int64)
        if px.min() < 0 or px.max() > 16383:
            raise DataError(f"{path}: intensities outside the 14-bit range")
        px = px.astype(np.uint16)
    return GrayImage(px, image_id if image_id is not None else path.stem)


def read_mask_file(path) -> MassMask:
    """Load a GMSK or PNG mask; any nonzero pixel counts as mass."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such mask file")
    head = path.open("rb").read(4)
    if head == GMSK_MAGIC:
        bits = read_gmsk(path)
    else:
        try:
            with Image.open(path) as im:
                bits = np.asarray(im) != 0
        except Exception as exc:
            raise DataError(f"{path}: unreadable mask ({exc})") from exc
        if bits.ndim != 2:
            raise DataError(f"{path}: expected single-channel mask, got shape {bits.shape}")
    return MassMask(bits)


def write_patch_dataset(patches, out_dir):
    """Write raw patch files plus manifest.csv into a directory.

    One row per patch: filename, source_id, origin_row, origin_col, label,
    augment. Filenames are sequential, so manifest order is dataset order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for i, p in enumerate(patches):
            name = f"patch_{i:06d}.gimg"
            write_gimg(out_dir / name, p.pixels)
            writer.writerow(
                [name, p.source_id, p.origin_row, p.origin_col, p.label, p.augment]
            )
    return manifest


def read_patch_dataset(dir_path):
    """Load every patch listed in a dataset directory's manifest.csv."""
    dir_path = Path(dir_path)
    manifest = dir_path / "manifest.csv"
    if not manifest.is_file():
        raise DataError(f"{manifest}: patch manifest not found")
    patches = []
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_FIELDS:
            raise DataError(f"{manifest}: unexpected columns {reader.fieldnames}")
        for row in reader:
            pixels = read_gimg(dir_path / row["filename"])
            patches.append(
                LabeledPatch(
                    pixels,
                    row["label"],
                    row["augment"],
                    row["source_id"],
                    int(row["origin_row"]),
                    int(row["origin_col"]),
                )
            )
    return patches

"""Readers and writers for PGM images, PFM disparities, 16-bit PNG
disparities, cost-volume snapshots and distribution-curve CSV files."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .errors import FormatError
from .volume import CostVolume, DisparityMap

CURVE_HEADER = ["pixel_m", "pixel_n", "disparity_index", "target_phi", "predicted_prob"]


def _read_tokens(data: bytes, count: int, start=0):
    """Split ``count`` whitespace-separated header tokens, skipping ``#`` comments.

    Returns the tokens and the offset just past the single whitespace byte
    that terminates the last one.
    """
    tokens = []
    pos = start
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        begin = pos
        while pos < n and not data[pos:pos + 1].isspace():
            pos += 1
        if begin == pos:
            raise FormatError("truncated header", pos)
        tokens.append((data[begin:pos], begin))
    if pos >= n:
        raise FormatError("header not terminated by whitespace", pos)
    return tokens, pos + 1


def _int_token(token, what):
    raw, offset = token
    try:
        value = int(raw)
    except ValueError:
        raise FormatError(f"bad {what} {raw!r}", offset) from None
    if value <= 0:
        raise FormatError(f"{what} must be positive, got {value}", offset)
    return value


# PGM -----------------------------------------------------------------------

def quantize8(image) -> np.ndarray:
    """Intensities in ``[0, 1]`` to 8 bits, rounding halves up."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(img * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, image):
    """Write a binary (P5) 8-bit PGM. Float input is taken as ``[0, 1]``."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"PGM images are 2-D, got shape {img.shape}")
    data = img if img.dtype == np.uint8 else quantize8(img)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data).tobytes())


def read_pgm_raw(path) -> np.ndarray:
    """Read a binary PGM as stored: ``uint8`` for maxval <= 255 else ``uint16``."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise FormatError(f"not a binary PGM (magic {data[:2]!r})", 0)
    tokens, pos = _read_tokens(data, 3, 2)
    w = _int_token(tokens[0], "width")
    h = _int_token(tokens[1], "height")
    maxval = _int_token(tokens[2], "maxval")
    if maxval > 65535:
        raise FormatError(f"maxval {maxval} exceeds 65535", tokens[2][1])
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    need = w * h * dtype.itemsize
    if len(data) - pos < need:
        raise FormatError(f"truncated payload: expected {need} bytes, found {len(data) - pos}", len(data))
    return np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w).copy(), maxval


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM to float intensities in ``[0, 1]``."""
    raw, maxval = read_pgm_raw(path)
    return raw.astype(np.float64) / maxval


def write_mask(path, mask):
    write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def read_mask(path) -> np.ndarray:
    raw, _ = read_pgm_raw(path)
    return raw > 0


# PFM -----------------------------------------------------------------------

def write_pfm(path, array):
    """Write a PFM: little-endian (negative scale), rows stored bottom to top.

    Values are stored as float32; a float32 array round-trips bit for bit.
    """
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim == 2:
        magic = "Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = "PF"
    else:
        raise ValueError(f"PFM stores H x W or H x W x 3 arrays, got shape {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{magic}\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM into a float32 array, top row first."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"Pf", b"PF"):
        raise FormatError(f"not a PFM file (magic {magic!r})", 0)
    tokens, pos = _read_tokens(data, 3, 2)
    w = _int_token(tokens[0], "width")
    h = _int_token(tokens[1], "height")
    try:
        scale = float(tokens[2][0])
    except ValueError:
        raise FormatError(f"bad scale {tokens[2][0]!r}", tokens[2][1]) from None
    if scale == 0 or not math.isfinite(scale):
        raise FormatError("scale must be finite and non-zero", tokens[2][1])
    channels = 3 if magic == b"PF" else 1
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    count = w * h * channels
    if len(data) - pos < count * 4:
        raise FormatError(f"truncated payload: expected {count * 4} bytes, found {len(data) - pos}", len(data))
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float32)
    arr = arr.reshape((h, w, 3) if channels == 3 else (h, w))
    return np.ascontiguousarray(arr[::-1])


def mask_sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + "_mask.pgm")


def write_disparity_pfm(path, dmap: DisparityMap, mask_path=None):
    """Write a disparity map as PFM; invalid pixels become 0 and the mask goes
    to a same-size 0/255 PGM sidecar (``<stem>_mask.pgm`` by default)."""
    values = np.where(dmap.valid, dmap.values, 0.0)
    write_pfm(path, values)
    write_mask(mask_path or mask_sidecar_path(path), dmap.valid)


def read_disparity_pfm(path, mask_path=None) -> DisparityMap:
    """Read a PFM disparity map plus its mask sidecar.

    Without a sidecar every finite pixel is valid.
    """
    values = read_pfm(path)
    if values.ndim != 2:
        raise FormatError("disparity PFM must be single channel (Pf)", 0)
    side = Path(mask_path) if mask_path else mask_sidecar_path(path)
    if side.exists():
        mask = read_mask(side)
        if mask.shape != values.shape:
            raise FormatError(f"mask sidecar {side} is {mask.shape}, map is {values.shape}")
    else:
        if mask_path:
            raise FileNotFoundError(side)
        mask = np.isfinite(values)
    return DisparityMap(values.astype(np.float64), mask)


# 16-bit PNG ----------------------------------------------------------------

PNG16_SCALE = 256.0


def write_disparity_png16(path, dmap: DisparityMap):
    """KITTI-style fixed point: ``round(d * 256)`` in a 16-bit PNG, 0 = invalid.

    Valid disparities below 1/256 px are stored as the smallest code, 1.
    """
    from PIL import Image

    code = np.clip(np.rint(dmap.values * PNG16_SCALE), 1, 65535).astype(np.uint16)
    code[~dmap.valid] = 0
    Image.fromarray(code).save(path, format="PNG")


def read_disparity_png16(path) -> DisparityMap:
    from PIL import Image

    with Image.open(path) as im:
        code = np.array(im)
    if code.ndim != 2:
        raise FormatError("16-bit disparity PNG must be single channel", 0)
    code = code.astype(np.float64)
    return DisparityMap(code / PNG16_SCALE, code > 0)


# cost volumes --------------------------------------------------------------

def save_volume(path, volume):
    costs = volume.costs if isinstance(volume, CostVolume) else np.asarray(volume)
    with open(path, "wb") as fh:
        np.save(fh, np.asarray(costs), allow_pickle=False)


def load_volume(path) -> CostVolume:
    try:
        arr = np.load(path, allow_pickle=False)
    except ValueError as exc:
        raise FormatError(f"cannot read volume snapshot {path}: {exc}") from None
    return CostVolume(arr, allow_float32=True)


# distribution curves -------------------------------------------------------

def write_curve_csv(path_or_file, rows):
    """Write ``(m, n, index, phi, prob)`` rows; ``phi=None`` leaves the cell empty."""
    def emit(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for m, n, i, phi, prob in rows:
            writer.writerow([int(m), int(n), int(i), "" if phi is None else repr(float(phi)),
                             repr(float(prob))])

    if hasattr(path_or_file, "write"):
        emit(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            emit(fh)


def read_curve_csv(path):
    """Inverse of :func:`write_curve_csv`; empty ``target_phi`` cells read as ``None``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CURVE_HEADER:
            raise FormatError(f"unexpected curve CSV header {header!r}", 0)
        rows = []
        for line_no, rec in enumerate(reader, start=2):
            if len(rec) != 5:
                raise FormatError(f"line {line_no}: expected 5 fields, got {len(rec)}")
            m, n, i = (int(v) for v in rec[:3])
            phi = None if rec[3] == "" else float(rec[3])
            rows.append((m, n, i, phi, float(rec[4])))
    return rows

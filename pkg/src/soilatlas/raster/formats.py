"""Decoding of uploaded raster files.

Two formats are accepted: a baseline subset of georeferenced TIFF (classic
header, striped layout, uncompressed or deflate) and the ESRI ASCII grid.
The TIFF reader is intentionally minimal; anything outside the subset is
refused with a clear error instead of being half-read.
"""

from __future__ import annotations

import io
import math
import struct
import zlib

import numpy as np

from .. import errors
from .types import GridData

# TIFF tag ids
_IMAGE_WIDTH = 256
_IMAGE_LENGTH = 257
_BITS_PER_SAMPLE = 258
_COMPRESSION = 259
_STRIP_OFFSETS = 273
_SAMPLES_PER_PIXEL = 277
_ROWS_PER_STRIP = 278
_STRIP_BYTE_COUNTS = 279
_PLANAR_CONFIG = 284
_PREDICTOR = 317
_TILE_WIDTH = 322
_SAMPLE_FORMAT = 339
_MODEL_PIXEL_SCALE = 33550
_MODEL_TIEPOINT = 33922
_GDAL_NODATA = 42113

_COMPRESSION_NONE = 1
_COMPRESSION_DEFLATE_ADOBE = 8
_COMPRESSION_DEFLATE_OLD = 32946

# field type -> (struct letter, byte size)
_FIELD_TYPES = {
    1: ("B", 1),   # BYTE
    2: ("s", 1),   # ASCII
    3: ("H", 2),   # SHORT
    4: ("I", 4),   # LONG
    5: ("II", 8),  # RATIONAL
    6: ("b", 1),
    8: ("h", 2),
    9: ("i", 4),
    11: ("f", 4),  # FLOAT
    12: ("d", 8),  # DOUBLE
}


def _read_entry_values(data: bytes, endian: str, field_type: int, count: int, raw: bytes):
    if field_type not in _FIELD_TYPES:
        return None
    letter, size = _FIELD_TYPES[field_type]
    total = size * count
    if total <= 4:
        payload = raw[:total]
    else:
        (offset,) = struct.unpack(endian + "I", raw)
        payload = data[offset : offset + total]
        if len(payload) < total:
            raise errors.UnsupportedFormat("truncated TIFF: tag payload out of bounds")
    if field_type == 2:
        return payload.split(b"\0")[0].decode("ascii", "replace")
    if field_type == 5:
        pairs = struct.unpack(endian + "II" * count, payload)
        return tuple(n / d if d else math.nan for n, d in zip(pairs[0::2], pairs[1::2]))
    return struct.unpack(endian + letter * count, payload)


def _dtype_for(bits: int, sample_format: int, endian: str) -> np.dtype:
    kind = {1: "u", 2: "i", 3: "f"}.get(sample_format)
    if kind is None:
        raise errors.UnsupportedFormat(f"unsupported TIFF sample format {sample_format}")
    if kind == "f" and bits not in (32, 64):
        raise errors.UnsupportedFormat(f"unsupported float depth {bits}")
    if kind != "f" and bits not in (8, 16, 32):
        raise errors.UnsupportedFormat(f"unsupported integer depth {bits}")
    return np.dtype(f"{'<' if endian == '<' else '>'}{kind}{bits // 8}")


def decode_tiff(data: bytes) -> GridData:
    if len(data) < 8:
        raise errors.UnsupportedFormat("file too small for a TIFF header")
    if data[:2] == b"II":
        endian = "<"
    elif data[:2] == b"MM":
        endian = ">"
    else:
        raise errors.UnsupportedFormat("not a TIFF file")
    (magic,) = struct.unpack(endian + "H", data[2:4])
    if magic == 43:
        raise errors.UnsupportedFormat("BigTIFF is not supported")
    if magic != 42:
        raise errors.UnsupportedFormat("not a TIFF file")
    (ifd_offset,) = struct.unpack(endian + "I", data[4:8])

    tags: dict[int, object] = {}
    (n_entries,) = struct.unpack(endian + "H", data[ifd_offset : ifd_offset + 2])
    pos = ifd_offset + 2
    for _ in range(n_entries):
        tag, field_type, count = struct.unpack(endian + "HHI", data[pos : pos + 8])
        values = _read_entry_values(data, endian, field_type, count, data[pos + 8 : pos + 12])
        if values is not None:
            tags[tag] = values
        pos += 12

    def scalar(tag: int, default=None):
        v = tags.get(tag)
        if v is None:
            return default
        return v[0] if isinstance(v, tuple) else v

    if _TILE_WIDTH in tags:
        raise errors.UnsupportedFormat("tiled TIFF layout is not supported, use strips")
    compression = scalar(_COMPRESSION, 1)
    if compression not in (_COMPRESSION_NONE, _COMPRESSION_DEFLATE_ADOBE, _COMPRESSION_DEFLATE_OLD):
        raise errors.UnsupportedFormat(f"unsupported TIFF compression {compression}")
    if scalar(_PLANAR_CONFIG, 1) != 1:
        raise errors.UnsupportedFormat("planar TIFF layout is not supported")
    if scalar(_PREDICTOR, 1) != 1:
        raise errors.UnsupportedFormat("TIFF predictor is not supported")

    width = scalar(_IMAGE_WIDTH)
    height = scalar(_IMAGE_LENGTH)
    if not width or not height:
        raise errors.UnsupportedFormat("TIFF misses image dimensions")
    samples = int(scalar(_SAMPLES_PER_PIXEL, 1))
    bits_values = tags.get(_BITS_PER_SAMPLE, (8,) * samples)
    if len(set(bits_values)) != 1:
        raise errors.UnsupportedFormat("mixed per-band bit depths are not supported")
    bits = int(bits_values[0])
    sample_format = int(scalar(_SAMPLE_FORMAT, 1))
    dtype = _dtype_for(bits, sample_format, endian)

    offsets = tags.get(_STRIP_OFFSETS)
    counts = tags.get(_STRIP_BYTE_COUNTS)
    if not offsets or not counts or len(offsets) != len(counts):
        raise errors.UnsupportedFormat("TIFF misses strip layout")
    raw = bytearray()
    for off, cnt in zip(offsets, counts):
        chunk = bytes(data[off : off + cnt])
        if len(chunk) < cnt:
            raise errors.UnsupportedFormat("truncated TIFF strip")
        if compression != _COMPRESSION_NONE:
            try:
                chunk = zlib.decompress(chunk)
            except zlib.error as exc:
                raise errors.UnsupportedFormat(f"bad deflate strip: {exc}") from None
        raw.extend(chunk)

    expected = width * height * samples * (bits // 8)
    if len(raw) < expected:
        raise errors.UnsupportedFormat(
            f"TIFF pixel data too short: {len(raw)} bytes for {expected}"
        )
    flat = np.frombuffer(bytes(raw[:expected]), dtype=dtype)
    pixels = flat.reshape(height, width, samples).transpose(2, 0, 1).astype(np.float64)

    scale = tags.get(_MODEL_PIXEL_SCALE)
    tiepoint = tags.get(_MODEL_TIEPOINT)
    if not scale or not tiepoint or len(scale) < 2 or len(tiepoint) < 6:
        raise errors.BadGeoreference("TIFF carries no pixel scale / tiepoint")
    sx, sy = float(scale[0]), float(scale[1])
    if sx <= 0 or sy <= 0 or not (math.isfinite(sx) and math.isfinite(sy)):
        raise errors.BadGeoreference(f"bad pixel scale ({sx}, {sy})")
    i, j, _k, x, y, _z = (float(v) for v in tiepoint[:6])
    origin = (x - i * sx, y + j * sy)

    nodata = None
    nodata_text = tags.get(_GDAL_NODATA)
    if isinstance(nodata_text, str) and nodata_text.strip():
        try:
            nodata = float(nodata_text.strip())
        except ValueError:
            raise errors.BadGeoreference(f"unreadable nodata marker {nodata_text!r}") from None

    if nodata is not None:
        if math.isnan(nodata):
            pass  # float NaNs in the data already mean missing
        else:
            pixels = np.where(pixels == nodata, np.nan, pixels)
    return GridData(pixels=pixels, origin=origin, pixel_size=(sx, sy), nodata=nodata)


def decode_ascii_grid(data: bytes) -> GridData:
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError:
        raise errors.UnsupportedFormat("ASCII grid is not ASCII") from None
    tokens = text.split()
    header: dict[str, float] = {}
    pos = 0
    while pos + 1 < len(tokens):
        key = tokens[pos].lower()
        if key not in ("ncols", "nrows", "xllcorner", "yllcorner", "xllcenter", "yllcenter",
                       "cellsize", "nodata_value"):
            break
        try:
            header[key] = float(tokens[pos + 1])
        except ValueError:
            raise errors.UnsupportedFormat(f"bad ASCII grid header value for {key}") from None
        pos += 2
    for required in ("ncols", "nrows", "cellsize"):
        if required not in header:
            raise errors.UnsupportedFormat(f"ASCII grid misses {required}")
    if ("xllcorner" in header) == ("xllcenter" in header):
        raise errors.UnsupportedFormat("ASCII grid needs exactly one of xllcorner/xllcenter")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    cell = header["cellsize"]
    if ncols < 1 or nrows < 1:
        raise errors.UnsupportedFormat("ASCII grid header out of range")
    if cell <= 0 or not math.isfinite(cell):
        raise errors.BadGeoreference(f"cellsize must be positive, got {cell:g}")
    body = tokens[pos:]
    if len(body) != ncols * nrows:
        raise errors.UnsupportedFormat(
            f"ASCII grid body has {len(body)} values, expected {ncols * nrows}"
        )
    try:
        values = np.array([float(t) for t in body], dtype=np.float64)
    except ValueError:
        raise errors.UnsupportedFormat("non-numeric value in ASCII grid body") from None
    pixels = values.reshape(1, nrows, ncols)
    nodata = header.get("nodata_value")
    if nodata is not None and not math.isnan(nodata):
        pixels = np.where(pixels == nodata, np.nan, pixels)
    if "xllcorner" in header:
        xll, yll = header["xllcorner"], header["yllcorner"]
    else:
        xll = header["xllcenter"] - cell / 2
        yll = header["yllcenter"] - cell / 2
    origin = (xll, yll + nrows * cell)
    return GridData(pixels=pixels, origin=origin, pixel_size=(cell, cell), nodata=nodata)


def decode(data: bytes, filename: str = "") -> GridData:
    """Sniff the format from content, falling back to the filename suffix."""
    if data[:2] in (b"II", b"MM") and len(data) >= 4:
        return decode_tiff(data)
    head = data[:200].lstrip().lower()
    if head.startswith(b"ncols") or filename.lower().endswith((".asc", ".agr")):
        return decode_ascii_grid(data)
    raise errors.UnsupportedFormat("unrecognized raster format (need TIFF or ASCII grid)")

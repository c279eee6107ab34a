# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
Raster types shared by every stage of the segmentation pipeline.

Images are immutable numpy-backed values. Binary images use 1 = ink and
0 = background whatever the polarity of the scan they came from; the
binarisation step is responsible for getting that right.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np

# Awkward hack to allow importing into tests
try:
    from errors import BoundsError, ConfigurationError, FormatError, ShapeError
except ImportError:
    from .errors import BoundsError, ConfigurationError, FormatError, ShapeError

ROW = "row"
COLUMN = "column"
AXES = (ROW, COLUMN)

PGM_MAGIC = b"P5"
PBM_MAGIC = b"P4"
_WHITESPACE = b" \t\n\r\x0b\x0c"
_DIGITS = b"0123456789"

OVERLAY_INK = 0
OVERLAY_BACKGROUND = 255
OVERLAY_OUTLINE = 128
OVERLAY_SHADE = 208


def _as_raster(pixels, upper: int, kind: str) -> np.ndarray:
    raw = np.asarray(pixels)
    if raw.ndim != 2 or raw.shape[0] < 1 or raw.shape[1] < 1:
        raise ShapeError(f"{kind} needs a non-empty 2-D pixel array, got shape {raw.shape}")
    if raw.dtype == bool:
        raw = raw.astype(np.uint8)
    if not np.issubdtype(raw.dtype, np.number):
        raise ShapeError(f"{kind} pixels must be numeric, got {raw.dtype}")
    if raw.min() < 0 or raw.max() > upper:
        raise ShapeError(f"{kind} pixels must lie in [0, {upper}]")
    if np.issubdtype(raw.dtype, np.floating) and not np.array_equal(raw, np.floor(raw)):
        raise ShapeError(f"{kind} pixels must be integral")
    arr = raw.astype(np.uint8)
    arr.setflags(write=False)
    return arr


class _Raster:
    pixels: np.ndarray

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self):
        return hash((type(self).__name__, self.pixels.shape, self.pixels.tobytes()))

    def __repr__(self):
        return f"{type(self).__name__}({self.width}x{self.height})"


@dataclass(frozen=True, eq=False, repr=False)
class GrayImage(_Raster):
    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", _as_raster(self.pixels, 255, "GrayImage"))


@dataclass(frozen=True, eq=False, repr=False)
class BinaryImage(_Raster):
    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", _as_raster(self.pixels, 1, "BinaryImage"))

    @classmethod
    def blank(cls, width: int, height: int) -> "BinaryImage":
        return cls(np.zeros((height, width), dtype=np.uint8))

    @property
    def ink_count(self) -> int:
        return int(self.pixels.sum())

    def is_blank(self) -> bool:
        return not self.pixels.any()


Image = Union[GrayImage, BinaryImage]


@dataclass(frozen=True)
class Box:
    """Pixel rectangle, inclusive on top/left and exclusive on bottom/right."""

    top: int
    left: int
    bottom: int
    right: int

    def __post_init__(self):
        for name in ("top", "left", "bottom", "right"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.top < 0 or self.left < 0 or self.top >= self.bottom or self.left >= self.right:
            raise ShapeError(f"Degenerate box {self.as_list()}")

    @property
    def height(self) -> int:
        return self.bottom - self.top

    @property
    def width(self) -> int:
        return self.right - self.left

    @property
    def area(self) -> int:
        return self.height * self.width

    def fits(self, width: int, height: int) -> bool:
        return self.bottom <= height and self.right <= width

    def translate(self, rows: int = 0, columns: int = 0) -> "Box":
        return Box(self.top + rows, self.left + columns, self.bottom + rows, self.right + columns)

    def intersection_area(self, other: "Box") -> int:
        rows = min(self.bottom, other.bottom) - max(self.top, other.top)
        columns = min(self.right, other.right) - max(self.left, other.left)
        if rows <= 0 or columns <= 0:
            return 0
        return rows * columns

    def iou(self, other: "Box") -> float:
        overlap = self.intersection_area(other)
        if overlap == 0:
            return 0.0
        return overlap / (self.area + other.area - overlap)

    def union(self, other: "Box") -> "Box":
        return Box(
            min(self.top, other.top),
            min(self.left, other.left),
            max(self.bottom, other.bottom),
            max(self.right, other.right),
        )

    def as_list(self) -> List[int]:
        return [self.top, self.left, self.bottom, self.right]


@dataclass(frozen=True, eq=False)
class Projection:
    axis: str
    sums: np.ndarray

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigurationError(f"Unknown projection axis {self.axis!r}")
        sums = np.asarray(self.sums, dtype=np.int64).copy()
        sums.setflags(write=False)
        object.__setattr__(self, "sums", sums)

    def __len__(self) -> int:
        return len(self.sums)

    def __getitem__(self, index):
        return self.sums[index]

    def __eq__(self, other):
        if not isinstance(other, Projection):
            return NotImplemented
        return self.axis == other.axis and bool(np.array_equal(self.sums, other.sums))

    __hash__ = None


def project(img: BinaryImage, axis: str) -> Projection:
    if axis == ROW:
        return Projection(ROW, img.pixels.sum(axis=1, dtype=np.int64))
    if axis == COLUMN:
        return Projection(COLUMN, img.pixels.sum(axis=0, dtype=np.int64))
    raise ConfigurationError(f"Unknown projection axis {axis!r}")


def invert(img: BinaryImage) -> BinaryImage:
    return BinaryImage(1 - img.pixels)


def crop(img: Image, box: Box) -> Image:
    if not box.fits(img.width, img.height):
        raise BoundsError(f"Box {box.as_list()} falls outside a {img.width}x{img.height} image")
    return type(img)(img.pixels[box.top : box.bottom, box.left : box.right])


def ink_box(img: BinaryImage) -> Union[Box, None]:
    """Tight bounding box of the ink, or None for a blank image."""
    rows = np.flatnonzero(img.pixels.any(axis=1))
    if rows.size == 0:
        return None
    columns = np.flatnonzero(img.pixels.any(axis=0))
    return Box(rows[0], columns[0], rows[-1] + 1, columns[-1] + 1)


def to_gray(img: BinaryImage) -> GrayImage:
    return GrayImage(np.where(img.pixels == 1, OVERLAY_INK, OVERLAY_BACKGROUND))


def render_overlay(img: BinaryImage, boxes: Sequence[Box], shaded: Sequence[Box] = ()) -> GrayImage:
    """Ink in black on white, box outlines in mid-gray and shaded regions
    (spaces, residue) in light gray, for eyeballing segmentation output."""
    canvas = np.where(img.pixels == 1, OVERLAY_INK, OVERLAY_BACKGROUND).astype(np.uint8)
    for box in shaded:
        region = canvas[box.top : box.bottom, box.left : box.right]
        region[region == OVERLAY_BACKGROUND] = OVERLAY_SHADE
    for box in boxes:
        canvas[box.top, box.left : box.right] = OVERLAY_OUTLINE
        canvas[box.bottom - 1, box.left : box.right] = OVERLAY_OUTLINE
        canvas[box.top : box.bottom, box.left] = OVERLAY_OUTLINE
        canvas[box.top : box.bottom, box.right - 1] = OVERLAY_OUTLINE
    return GrayImage(canvas)


def _parse_header(data: bytes, field_count: int, path) -> Tuple[List[int], List[int], int]:
    # PNM header: magic, whitespace/comment separated decimal fields, then exactly one whitespace byte
    if len(data) < 3 or data[2] not in _WHITESPACE:
        raise FormatError("missing magic number", path, 0)
    pos = 2
    fields = []
    offsets = []
    while len(fields) < field_count:
        while pos < len(data) and (data[pos] in _WHITESPACE or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                end = data.find(b"\n", pos)
                if end < 0:
                    raise FormatError("unterminated header comment", path, pos)
                pos = end + 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and data[pos] in _DIGITS:
            pos += 1
        if start == pos:
            raise FormatError("expected an unsigned integer header field", path, start)
        fields.append(int(data[start:pos]))
        offsets.append(start)
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise FormatError("expected a whitespace byte before the raster", path, pos)
    return fields, offsets, pos + 1


def decode_pgm(data: bytes, path=None) -> GrayImage:
    if data[:2] != PGM_MAGIC:
        raise FormatError("not a binary PGM (P5) file", path, 0)
    (width, height, maxval), offsets, start = _parse_header(data, 3, path)
    if width < 1 or height < 1:
        raise FormatError(f"invalid dimensions {width}x{height}", path, offsets[0])
    if not 1 <= maxval <= 255:
        raise FormatError(f"unsupported maxval {maxval}", path, offsets[2])
    expected = width * height
    raster = data[start : start + expected]
    if len(raster) < expected:
        raise FormatError(f"truncated raster: expected {expected} bytes, found {len(raster)}", path, start + len(raster))
    values = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    too_bright = np.flatnonzero(values.ravel() > maxval)
    if too_bright.size:
        raise FormatError(f"pixel value above maxval {maxval}", path, start + int(too_bright[0]))
    if maxval != 255:
        values = np.rint(values.astype(np.float64) * 255.0 / maxval)
    return GrayImage(values)


def encode_pgm(img: GrayImage) -> bytes:
    return b"P5\n%d %d\n255\n" % (img.width, img.height) + img.pixels.tobytes()


def decode_pbm(data: bytes, path=None) -> BinaryImage:
    if data[:2] != PBM_MAGIC:
        raise FormatError("not a binary PBM (P4) file", path, 0)
    (width, height), offsets, start = _parse_header(data, 2, path)
    if width < 1 or height < 1:
        raise FormatError(f"invalid dimensions {width}x{height}", path, offsets[0])
    row_bytes = (width + 7) // 8
    expected = row_bytes * height
    raster = data[start : start + expected]
    if len(raster) < expected:
        raise FormatError(f"truncated raster: expected {expected} bytes, found {len(raster)}", path, start + len(raster))
    packed = np.frombuffer(raster, dtype=np.uint8).reshape(height, row_bytes)
    # PBM stores 1 = black, which is our ink convention; padding bits are ignored
    return BinaryImage(np.unpackbits(packed, axis=1)[:, :width])


def encode_pbm(img: BinaryImage) -> bytes:
    return b"P4\n%d %d\n" % (img.width, img.height) + np.packbits(img.pixels, axis=1).tobytes()


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fp:
            return fp.read()
    except OSError as ex:
        raise FormatError(f"cannot read image file ({ex.strerror or ex})", str(path)) from ex


def _write_bytes(path, payload: bytes) -> None:
    with open(path, "wb") as fp:
        fp.write(payload)


def read_gray(path) -> GrayImage:
    return decode_pgm(_read_bytes(path), str(path))


def read_binary(path) -> BinaryImage:
    return decode_pbm(_read_bytes(path), str(path))


def read_image(path) -> Image:
    data = _read_bytes(path)
    if data[:2] == PGM_MAGIC:
        return decode_pgm(data, str(path))
    if data[:2] == PBM_MAGIC:
        return decode_pbm(data, str(path))
    raise FormatError("unrecognised image format (expected P5 or P4)", str(path), 0)


def write_gray(path, img: GrayImage) -> None:
    _write_bytes(path, encode_pgm(img))


def write_binary(path, img: BinaryImage) -> None:
    _write_bytes(path, encode_pbm(img))

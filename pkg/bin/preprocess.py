# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
Scan clean-up ahead of segmentation: noise removal, enhancement (histogram
equalisation plus high-boost sharpening), binarisation and normalisation
(skew correction, tight crop, fixed-size rescale).
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Tuple

import numpy as np
from scipy import ndimage

# Awkward hack to allow importing into tests
try:
    from errors import ConfigurationError, EmptyInputError
    from raster import BinaryImage, GrayImage, crop, ink_box
except ImportError:
    from .errors import ConfigurationError, EmptyInputError
    from .raster import BinaryImage, GrayImage, crop, ink_box

logger = logging.getLogger(__name__)

MIN_NORMALIZED_SIDE = 8


@dataclass(frozen=True)
class PreprocessConfig:
    median_window: int = 3
    high_boost_factor: float = 1.5
    normalized_size: Tuple[int, int] = (32, 32)  # (width, height)
    deskew_range: float = 10.0
    deskew_step: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "normalized_size", tuple(int(v) for v in self.normalized_size))
        if len(self.normalized_size) != 2:
            raise ConfigurationError(f"normalized_size needs (width, height), got {self.normalized_size}")
        _check_window(self.median_window)
        if self.high_boost_factor < 1:
            raise ConfigurationError(f"high_boost_factor must be >= 1, got {self.high_boost_factor}")
        if min(self.normalized_size) < MIN_NORMALIZED_SIDE:
            raise ConfigurationError(f"normalized_size must be at least {MIN_NORMALIZED_SIDE}x{MIN_NORMALIZED_SIDE}")
        if self.deskew_step <= 0:
            raise ConfigurationError(f"deskew_step must be positive, got {self.deskew_step}")
        if self.deskew_range < 0:
            raise ConfigurationError(f"deskew_range must not be negative, got {self.deskew_range}")

    @property
    def vector_length(self) -> int:
        return self.normalized_size[0] * self.normalized_size[1]

    def for_glyphs(self) -> "PreprocessConfig":
        # Individual glyphs and segment candidates are never deskewed
        return replace(self, deskew_range=0.0)


def _check_window(window: int) -> None:
    if int(window) != window or window < 1 or window % 2 == 0:
        raise ConfigurationError(f"Median window must be a positive odd pixel count, got {window}")


def denoise(img: GrayImage, window: int) -> GrayImage:
    _check_window(window)
    return GrayImage(ndimage.median_filter(img.pixels, size=int(window), mode="nearest"))


def equalize(img: GrayImage) -> GrayImage:
    hist = np.bincount(img.pixels.ravel(), minlength=256)
    levels = np.flatnonzero(hist)
    if levels.size <= 1:
        return img
    cdf = np.cumsum(hist)
    cdf_min = cdf[levels[0]]
    lut = np.rint((cdf - cdf_min) * 255.0 / (img.pixels.size - cdf_min))
    lut = np.clip(lut, 0, 255).astype(np.uint8)
    return GrayImage(lut[img.pixels])


def high_boost(img: GrayImage, boost: float) -> GrayImage:
    if boost < 1:
        raise ConfigurationError(f"High-boost factor must be >= 1, got {boost}")
    original = img.pixels.astype(np.float64)
    lowpass = ndimage.uniform_filter(original, size=3, mode="nearest")
    boosted = boost * original - (boost - 1.0) * lowpass
    return GrayImage(np.clip(np.rint(boosted), 0, 255))


def enhance(img: GrayImage, boost: float) -> GrayImage:
    return high_boost(equalize(img), boost)


def otsu_threshold(img: GrayImage) -> int:
    """Threshold t in 1..255 maximising the between-class variance of
    {pixel < t} against {pixel >= t}; 0 when no split separates anything."""
    hist = [int(v) for v in np.bincount(img.pixels.ravel(), minlength=256)]
    total_count = sum(hist)
    total_sum = sum(level * count for level, count in enumerate(hist))

    best_t, best_num, best_den = 0, 0, 1
    below_count = below_sum = 0
    for t in range(1, 256):
        below_count += hist[t - 1]
        below_sum += (t - 1) * hist[t - 1]
        above_count = total_count - below_count
        if below_count == 0 or above_count == 0:
            continue
        above_sum = total_sum - below_sum
        # Between-class variance up to the constant 1/N^2, kept as an exact fraction
        num = (below_sum * above_count - above_sum * below_count) ** 2
        den = below_count * above_count
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def binarize(img: GrayImage) -> BinaryImage:
    threshold = otsu_threshold(img)
    return BinaryImage(img.pixels < threshold)


def preprocess_page(img: GrayImage, cfg: PreprocessConfig) -> BinaryImage:
    return binarize(enhance(denoise(img, cfg.median_window), cfg.high_boost_factor))


def rotate(img: BinaryImage, angle: float) -> BinaryImage:
    if angle == 0:
        return img
    rotated = ndimage.rotate(img.pixels, angle, reshape=True, order=0, mode="constant", cval=0, prefilter=False)
    return BinaryImage(rotated)


def _sweep_angles(cfg: PreprocessConfig) -> List[float]:
    steps = int(math.floor(cfg.deskew_range / cfg.deskew_step + 1e-9))
    angles = [k * cfg.deskew_step for k in range(-steps, steps + 1)]
    return sorted(angles, key=lambda a: (abs(a), a))


def _projection_spread(frame: np.ndarray) -> int:
    # rows * sum(p^2) - sum(p)^2 is rows^2 times the variance of the row projection
    sums = frame.sum(axis=1, dtype=np.int64)
    return len(sums) * int(np.dot(sums, sums)) - int(sums.sum()) ** 2


def estimate_skew(img: BinaryImage, cfg: PreprocessConfig) -> float:
    """Rotation (degrees) that best levels the text, i.e. maximises the
    variance of the row projection over the configured sweep."""
    if cfg.deskew_range == 0:
        return 0.0
    side = int(math.ceil(math.hypot(img.height, img.width))) + 2
    frame = np.zeros((side, side), dtype=np.uint8)
    top = (side - img.height) // 2
    left = (side - img.width) // 2
    frame[top : top + img.height, left : left + img.width] = img.pixels

    best_angle, best_spread = 0.0, None
    for angle in _sweep_angles(cfg):
        if angle == 0:
            candidate = frame
        else:
            candidate = ndimage.rotate(frame, angle, reshape=False, order=0, mode="constant", cval=0, prefilter=False)
        spread = _projection_spread(candidate)
        if best_spread is None or spread > best_spread:
            best_angle, best_spread = angle, spread
    logger.debug("Skew sweep picked %.2f degrees", best_angle)
    return best_angle


def deskew(img: BinaryImage, cfg: PreprocessConfig) -> Tuple[BinaryImage, float]:
    angle = estimate_skew(img, cfg)
    return rotate(img, angle), angle


def resize_nearest(img: BinaryImage, size: Tuple[int, int]) -> BinaryImage:
    width, height = size
    rows = np.minimum(((np.arange(height) + 0.5) * img.height / height).astype(np.int64), img.height - 1)
    columns = np.minimum(((np.arange(width) + 0.5) * img.width / width).astype(np.int64), img.width - 1)
    return BinaryImage(img.pixels[np.ix_(rows, columns)])


def normalize(img: BinaryImage, cfg: PreprocessConfig) -> BinaryImage:
    if img.is_blank():
        raise EmptyInputError("Cannot normalize an image without ink")
    straightened, _ = deskew(img, cfg)
    box = ink_box(straightened)
    if box is None:
        straightened, box = img, ink_box(img)
    return resize_nearest(crop(straightened, box), cfg.normalized_size)

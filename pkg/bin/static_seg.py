# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
Projection-based (static) dissection of a binary page.

Rows with ink form line bands; inside a line, columns with ink form
character boxes, and unusually wide blank column runs are word spaces.
Boundaries are the ends of maximal zero-projection runs at least
`min_gap` long. Headline (matra) removal, zone estimation and lower-zone
modifier separation work off the same row projection.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

# Awkward hack to allow importing into tests
try:
    from errors import ConfigurationError, EmptyInputError, ShapeError
    from raster import COLUMN, ROW, BinaryImage, Box, crop, project
except ImportError:
    from .errors import ConfigurationError, EmptyInputError, ShapeError
    from .raster import COLUMN, ROW, BinaryImage, Box, crop, project

logger = logging.getLogger(__name__)

HEADLINE_WIDTH_FRACTION = 0.7
ZONE_PEAK_FRACTION = 0.5
VALLEY_DEPTH_RATIO = 0.25
WORD_GAP_MULTIPLIER = 2.0
SOLO_GAP_HEIGHT_FRACTION = 0.5

Interval = Tuple[int, int]


@dataclass(frozen=True)
class StaticSegConfig:
    min_gap: int = 1
    modifier_factor: float = 1.5
    dilate_for_word_spacing: bool = False
    dilate_radius: int = 2

    def __post_init__(self):
        if self.min_gap < 1:
            raise ConfigurationError(f"min_gap must be >= 1, got {self.min_gap}")
        if self.modifier_factor <= 0:
            raise ConfigurationError(f"modifier_factor must be positive, got {self.modifier_factor}")
        if self.dilate_radius < 1:
            raise ConfigurationError(f"dilate_radius must be >= 1, got {self.dilate_radius}")


@dataclass(frozen=True)
class LineBand:
    box: Box
    headline_row: Optional[int] = None
    zones: Optional[Tuple[int, int]] = None  # (upper_end, middle_end), band-relative rows

    def __post_init__(self):
        if self.zones is None:
            object.__setattr__(self, "zones", (0, self.box.height))
        upper_end, middle_end = self.zones
        if not 0 <= upper_end <= middle_end <= self.box.height:
            raise ShapeError(f"Zones {self.zones} do not fit a band of height {self.box.height}")
        if self.headline_row is not None and not 0 <= self.headline_row * 3 < self.box.height:
            raise ShapeError(f"Headline row {self.headline_row} is outside the upper third of the band")


@dataclass(frozen=True)
class Dissection:
    lines: Tuple[LineBand, ...] = ()
    characters_per_line: Tuple[Tuple[Box, ...], ...] = ()
    spaces: Tuple[Tuple[int, Interval], ...] = ()  # (line index, page column interval)
    words_per_line: Tuple[Tuple[Box, ...], ...] = ()
    modifiers: Tuple[Optional[Box], ...] = field(default=())

    @property
    def character_count(self) -> int:
        return sum(len(boxes) for boxes in self.characters_per_line)


def _runs(mask: np.ndarray) -> List[Interval]:
    """Maximal runs of True as half-open intervals."""
    padded = np.concatenate(([0], np.asarray(mask, dtype=np.int8), [0]))
    edges = np.diff(padded)
    return list(zip(np.flatnonzero(edges == 1).tolist(), np.flatnonzero(edges == -1).tolist()))


def ink_runs(sums: np.ndarray, min_gap: int) -> List[Interval]:
    merged: List[Interval] = []
    for start, end in _runs(sums > 0):
        if merged and start - merged[-1][1] < min_gap:
            merged[-1] = (merged[-1][0], end)
        else:
            merged.append((start, end))
    return merged


def dissect_rows(page: BinaryImage, cfg: StaticSegConfig) -> List[LineBand]:
    bands = []
    for top, bottom in ink_runs(project(page, ROW).sums, cfg.min_gap):
        columns = np.flatnonzero(page.pixels[top:bottom].any(axis=0))
        bands.append(LineBand(Box(top, columns[0], bottom, columns[-1] + 1)))
    return bands


def _word_spaces(gaps: Sequence[Interval], line_height: int) -> List[Interval]:
    """Gaps of at least twice the median gap; a lone gap is measured
    against the line height instead."""
    if not gaps:
        return []
    widths = np.array([right - left for left, right in gaps])
    if len(gaps) < 2:
        threshold = SOLO_GAP_HEIGHT_FRACTION * line_height
    else:
        threshold = WORD_GAP_MULTIPLIER * float(np.median(widths))
    return [gap for gap, width in zip(gaps, widths) if width >= threshold]


def dissect_columns(line: BinaryImage, cfg: StaticSegConfig) -> Tuple[List[Box], List[Interval]]:
    runs = ink_runs(project(line, COLUMN).sums, cfg.min_gap)
    characters = []
    for left, right in runs:
        rows = np.flatnonzero(line.pixels[:, left:right].any(axis=1))
        characters.append(Box(rows[0], left, rows[-1] + 1, right))

    if cfg.dilate_for_word_spacing:
        # Dilation closes the narrow gaps; whatever blank run survives is a word space
        radius = cfg.dilate_radius
        widened = ink_runs(project(dilate(line, radius), COLUMN).sums, cfg.min_gap)
        spaces = [(widened[i][1] - radius, widened[i + 1][0] + radius) for i in range(len(widened) - 1)]
    else:
        gaps = [(runs[i][1], runs[i + 1][0]) for i in range(len(runs) - 1)]
        spaces = _word_spaces(gaps, line.height)
    return characters, spaces


def group_words(characters: Sequence[Box], spaces: Sequence[Interval]) -> List[Box]:
    words: List[Box] = []
    previous = None
    for box in characters:
        split = previous is None or any(previous.right <= left and right <= box.left for left, right in spaces)
        if split:
            words.append(box)
        else:
            words[-1] = words[-1].union(box)
        previous = box
    return words


def find_headline(line: BinaryImage) -> Optional[Tuple[int, int]]:
    """(first row, thickness) of the headline bar, if the line has one."""
    sums = project(line, ROW).sums
    peak = int(np.argmax(sums))
    limit = HEADLINE_WIDTH_FRACTION * line.width
    if sums[peak] <= limit or peak * 3 >= line.height:
        return None
    start, end = peak, peak + 1
    while start > 0 and sums[start - 1] > limit:
        start -= 1
    while end < line.height and sums[end] > limit:
        end += 1
    return start, end - start


def remove_headline(line: BinaryImage) -> Tuple[BinaryImage, Optional[int]]:
    headline = find_headline(line)
    if headline is None:
        return line, None
    row, thickness = headline
    stripped = line.pixels.copy()
    stripped[row : row + thickness] = 0
    return BinaryImage(stripped), row


def find_modifier_valley(sums: np.ndarray, start: int = 0) -> Optional[int]:
    """Row splitting a band's core from a lower-zone modifier, if any.

    A valley is a run of thinly inked rows (0 < p <= ratio x median of the
    inked rows) with heavier ink both above and below it, at or below
    `start`. The deepest row wins; ties go to the lower row."""
    sums = np.asarray(sums)
    inked = sums[sums > 0]
    if inked.size == 0:
        return None
    level = VALLEY_DEPTH_RATIO * float(np.median(inked))
    best_row, best_depth = None, None
    for top, bottom in _runs((sums > 0) & (sums <= level)):
        if top < max(start, 1) or bottom >= len(sums):
            continue
        if not (np.any(sums[:top] > level) and np.any(sums[bottom:] > level)):
            continue
        for row in range(top, bottom):
            if best_depth is None or sums[row] <= best_depth:
                best_row, best_depth = row, sums[row]
    return best_row


def separate_modifiers(
    lines: Sequence[LineBand],
    page: BinaryImage,
    cfg: StaticSegConfig = StaticSegConfig(),
) -> List[Tuple[Box, Optional[Box]]]:
    if not lines:
        raise EmptyInputError("Modifier separation needs at least one line band")
    average_height = sum(line.box.height for line in lines) / len(lines)
    threshold = cfg.modifier_factor * average_height

    output = []
    for line in lines:
        box = line.box
        valley = None
        if box.height > threshold:
            valley = find_modifier_valley(project(crop(page, box), ROW).sums)
        if valley is None:
            output.append((box, None))
        else:
            logger.debug("Band %s: lower modifier split at band row %d", box.as_list(), valley)
            output.append((Box(box.top, box.left, box.top + valley, box.right), Box(box.top + valley, box.left, box.bottom, box.right)))
    return output


def estimate_zones(line: LineBand, img: BinaryImage) -> Tuple[int, int]:
    band = crop(img, line.box)
    sums = project(band, ROW).sums
    headline = find_headline(band)
    if headline is not None:
        upper_end = headline[0] + headline[1]
    else:
        upper_end = int(np.argmax(sums >= ZONE_PEAK_FRACTION * sums.max()))
    valley = find_modifier_valley(sums, start=upper_end)
    middle_end = band.height if valley is None else valley
    return upper_end, middle_end


def dilate(img: BinaryImage, radius: int) -> BinaryImage:
    if radius < 1:
        raise ConfigurationError(f"Dilation radius must be >= 1, got {radius}")
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    return BinaryImage(ndimage.binary_dilation(img.pixels, structure=structure))


def dissect(page: BinaryImage, cfg: StaticSegConfig) -> Dissection:
    """Full static pipeline: lines, modifier split, zones, headline removal,
    then characters, spaces and words per line (all in page coordinates)."""
    bands = dissect_rows(page, cfg)
    if not bands:
        return Dissection()

    lines, characters_per_line, spaces, words_per_line, modifiers = [], [], [], [], []
    for index, (band, (core, modifier)) in enumerate(zip(bands, separate_modifiers(bands, page, cfg))):
        zones = estimate_zones(band, page)
        stripped, headline_row = remove_headline(crop(page, core))
        characters, line_spaces = dissect_columns(stripped, cfg)
        characters = [box.translate(core.top, core.left) for box in characters]
        line_spaces = [(left + core.left, right + core.left) for left, right in line_spaces]

        lines.append(replace(band, headline_row=headline_row, zones=zones))
        characters_per_line.append(tuple(characters))
        spaces.extend((index, interval) for interval in line_spaces)
        words_per_line.append(tuple(group_words(characters, line_spaces)))
        modifiers.append(modifier)

    return Dissection(
        lines=tuple(lines),
        characters_per_line=tuple(characters_per_line),
        spaces=tuple(spaces),
        words_per_line=tuple(words_per_line),
        modifiers=tuple(modifiers),
    )

# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
Recognition-driven (dynamic) segmentation.

A line is over-segmented into narrow slices at a fixed fraction of its
width, and the edges of every ink run join the cut positions. Starting
from the leftmost unconsumed cut, slices are accumulated one at a time and
each accumulation is normalised and fed to the trained network. A boundary
is fixed once the network is confident about a class and the candidate
also resembles a template of that class closely enough.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

# Awkward hack to allow importing into tests
try:
    from errors import ConfigurationError, ShapeError
    from mlp import Mlp, classify
    from preprocess import PreprocessConfig, normalize
    from raster import COLUMN, BinaryImage, Box, crop, project
    from similarity import CharacterTemplate, SimilarityScore, best_match
    from static_seg import StaticSegConfig, dissect_rows, ink_runs, remove_headline, separate_modifiers
except ImportError:
    from .errors import ConfigurationError, ShapeError
    from .mlp import Mlp, classify
    from .preprocess import PreprocessConfig, normalize
    from .raster import COLUMN, BinaryImage, Box, crop, project
    from .similarity import CharacterTemplate, SimilarityScore, best_match
    from .static_seg import StaticSegConfig, dissect_rows, ink_runs, remove_headline, separate_modifiers

logger = logging.getLogger(__name__)

Interval = Tuple[int, int]


@dataclass(frozen=True)
class DynamicSegConfig:
    interval_fraction: float = 0.025
    confidence_threshold: float = 0.8
    similarity_floor: float = 80.0
    max_segments_per_char: int = 12
    remove_headline: bool = True

    def __post_init__(self):
        if not 0 < self.interval_fraction < 1:
            raise ConfigurationError(f"interval_fraction must lie in (0, 1), got {self.interval_fraction}")
        if not 0 < self.confidence_threshold < 1:
            raise ConfigurationError(f"confidence_threshold must lie in (0, 1), got {self.confidence_threshold}")
        if self.similarity_floor > 100:
            raise ConfigurationError(f"similarity_floor cannot exceed 100, got {self.similarity_floor}")
        if self.max_segments_per_char < 1:
            raise ConfigurationError(f"max_segments_per_char must be >= 1, got {self.max_segments_per_char}")


@dataclass(frozen=True)
class SegmentCandidate:
    start_cut: int
    end_cut: int
    image: BinaryImage  # ink columns only

    def __post_init__(self):
        if self.start_cut >= self.end_cut:
            raise ShapeError(f"Candidate cuts {self.start_cut}..{self.end_cut} are not increasing")


@dataclass(frozen=True)
class DynamicCharacter:
    box: Box
    label: str
    confidence: float
    similarity: SimilarityScore
    start_cut: int
    end_cut: int


@dataclass(frozen=True)
class DynamicResult:
    characters: Tuple[DynamicCharacter, ...] = ()
    residue: Optional[Interval] = None
    skipped: Tuple[Interval, ...] = ()

    @property
    def boxes(self) -> List[Box]:
        return [character.box for character in self.characters]


def over_segment(line: BinaryImage, cfg: DynamicSegConfig) -> List[int]:
    """Cut columns round(k * fraction * width), k = 0..floor(1 / fraction), always ending at the width."""
    width = line.width if isinstance(line, BinaryImage) else int(line)
    if width < 1:
        raise ShapeError(f"Cannot over-segment a line of width {width}")
    fraction = cfg.interval_fraction
    if width * fraction < 1:
        return [0, width]
    steps = int(math.floor(1.0 / fraction + 1e-9))
    cuts = sorted({min(width, int(math.floor(k * fraction * width + 0.5))) for k in range(steps + 1)})
    if cuts[-1] != width:
        cuts.append(width)
    return cuts


def _candidate(line: BinaryImage, cuts: Sequence[int], start: int, end: int) -> Optional[SegmentCandidate]:
    region = line.pixels[:, cuts[start] : cuts[end]]
    columns = np.flatnonzero(region.any(axis=0))
    if columns.size == 0:
        return None
    return SegmentCandidate(start, end, BinaryImage(region[:, columns[0] : columns[-1] + 1]))


def _check_recognizer(net: Mlp, templates: Sequence[CharacterTemplate]) -> PreprocessConfig:
    if not templates:
        raise ConfigurationError("Dynamic segmentation needs at least one template")
    width, height = templates[0].image.width, templates[0].image.height
    if net.config.input_len != width * height:
        raise ConfigurationError(f"Network expects {net.config.input_len} inputs but templates are {width}x{height}")
    missing = set(net.labels) - {template.label for template in templates}
    if missing:
        raise ConfigurationError(f"No templates for classes: {', '.join(sorted(missing))}")
    return PreprocessConfig(normalized_size=(width, height), deskew_range=0.0)


@dataclass(frozen=True)
class _Reading:
    candidate: SegmentCandidate
    label: str
    confidence: float
    score: SimilarityScore


def segment_line(
    line: BinaryImage,
    net: Mlp,
    templates: Sequence[CharacterTemplate],
    cfg: DynamicSegConfig,
    cuts: Optional[Sequence[int]] = None,
) -> DynamicResult:
    """Greedy recognition-driven cutting of one line.

    The cut lattice is the over-segmentation plus both edges of every ink
    run (columns separated by blank columns), so no candidate ever reaches
    across a blank gap. A run that fits in `max_segments_per_char` slices is
    first read whole; if the whole run is not confirmed, the greedy scan
    inside the run is kept only when it covers the run with several
    characters that match their templates better than the whole run does.
    Longer runs go straight to the scan."""
    glyph_cfg = _check_recognizer(net, templates)
    by_label: Dict[str, List[CharacterTemplate]] = {}
    for template in templates:
        by_label.setdefault(template.label, []).append(template)

    cuts = list(cuts) if cuts is not None else over_segment(line, cfg)
    column_ink = project(line, COLUMN).sums
    runs = [(max(left, cuts[0]), min(right, cuts[-1])) for left, right in ink_runs(column_ink, 1) if left < cuts[-1] and right > cuts[0]]
    cuts = sorted(set(cuts) | {edge for run in runs for edge in run})
    position = {cut: index for index, cut in enumerate(cuts)}
    threshold = cfg.confidence_threshold

    def read(start: int, end: int) -> _Reading:
        candidate = _candidate(line, cuts, start, end)
        glyph = normalize(candidate.image, glyph_cfg)
        index, confidence = classify(net, glyph.pixels.ravel())
        label = net.labels[index]
        _, score = best_match(glyph, by_label[label])
        logger.debug("Cuts %d..%d: %s at %.3f, similarity %s", start, end, label, confidence, score)
        return _Reading(candidate, label, confidence, score)

    def confirmed(reading: _Reading) -> bool:
        return reading.confidence >= threshold and reading.score.value >= cfg.similarity_floor

    def scan(first: int, stop: int) -> Tuple[List[_Reading], List[Interval]]:
        readings: List[_Reading] = []
        skipped: List[Interval] = []
        start = first
        while start < stop:
            if not column_ink[cuts[start] : cuts[start + 1]].any():
                start += 1
                continue
            accepted = best = None
            for end in range(start + 1, min(start + cfg.max_segments_per_char, stop) + 1):
                reading = read(start, end)
                if best is None or reading.confidence > best.confidence:
                    best = reading
                if confirmed(reading):
                    accepted = reading
                    break
            if accepted is None and best.confidence > threshold / 2:
                accepted = best
            if accepted is None:
                skipped.append((cuts[start], cuts[start + 1]))
                start += 1
                continue
            readings.append(accepted)
            start = accepted.candidate.end_cut
        return readings, skipped

    readings: List[_Reading] = []
    skipped: List[Interval] = []
    for left, right in runs:
        first, stop = position[left], position[right]
        if stop - first > cfg.max_segments_per_char:
            pieces, gaps = scan(first, stop)
        else:
            whole = read(first, stop)
            if confirmed(whole):
                pieces, gaps = [whole], []
            else:
                pieces, gaps = scan(first, stop)
                split_wins = len(pieces) > 1 and not gaps and np.mean([p.score.value for p in pieces]) > whole.score.value
                if not split_wins and whole.confidence > threshold / 2:
                    pieces, gaps = [whole], []
        readings.extend(pieces)
        skipped.extend(gaps)

    characters = []
    for reading in readings:
        candidate = reading.candidate
        region = line.pixels[:, cuts[candidate.start_cut] : cuts[candidate.end_cut]]
        rows = np.flatnonzero(region.any(axis=1))
        box = Box(rows[0], cuts[candidate.start_cut], rows[-1] + 1, cuts[candidate.end_cut])
        characters.append(DynamicCharacter(box, reading.label, reading.confidence, reading.score, candidate.start_cut, candidate.end_cut))

    consumed = characters[-1].box.right if characters else 0
    residue = (consumed, line.width) if column_ink[consumed:].any() else None
    return DynamicResult(tuple(characters), residue, tuple(skipped))


def _shift(result: DynamicResult, rows: int, columns: int) -> DynamicResult:
    characters = tuple(
        DynamicCharacter(c.box.translate(rows, columns), c.label, c.confidence, c.similarity, c.start_cut, c.end_cut) for c in result.characters
    )
    residue = None if result.residue is None else (result.residue[0] + columns, result.residue[1] + columns)
    skipped = tuple((left + columns, right + columns) for left, right in result.skipped)
    return DynamicResult(characters, residue, skipped)


def segment_page(
    page: BinaryImage,
    net: Mlp,
    templates: Sequence[CharacterTemplate],
    static_cfg: StaticSegConfig,
    dyn_cfg: DynamicSegConfig,
) -> Dict[int, DynamicResult]:
    """Lines come from the static row dissection, with lower-zone modifiers
    split off the same way; each line core is then segmented independently.
    Boxes and intervals are returned in page coordinates."""
    output = {}
    bands = dissect_rows(page, static_cfg)
    if not bands:
        return output
    for index, (core, _) in enumerate(separate_modifiers(bands, page, static_cfg)):
        line = crop(page, core)
        if dyn_cfg.remove_headline:
            line, _ = remove_headline(line)
        result = segment_line(line, net, templates, dyn_cfg)
        output[index] = _shift(result, core.top, core.left)
        logger.debug("Line %d: %d characters, %d skipped intervals", index, len(result.characters), len(result.skipped))
    return output

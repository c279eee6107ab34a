# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
Pixel-count similarity between a segmented glyph and a reference template.

    literal:  S = (1 - ink(seg) / ink(ref)) * 100
    mismatch: S = (1 - mismatches(seg, ref) / ink(ref)) * 100

The literal form scores a perfect match as 0, so everything that ranks or
confirms segmentations uses mismatch mode; literal mode is kept for
comparison with the measure as it is usually quoted.
"""

import logging
import os
import re
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

# Awkward hack to allow importing into tests
try:
    from errors import BlankReferenceError, ConfigurationError, EmptyInputError, FormatError, ShapeError
    from preprocess import PreprocessConfig, normalize
    from raster import BinaryImage, decode_pbm
    from utils import load_image_files
except ImportError:
    from .errors import BlankReferenceError, ConfigurationError, EmptyInputError, FormatError, ShapeError
    from .preprocess import PreprocessConfig, normalize
    from .raster import BinaryImage, decode_pbm
    from .utils import load_image_files

logger = logging.getLogger(__name__)

LITERAL = "literal"
MISMATCH = "mismatch"
MODES = (LITERAL, MISMATCH)

TEMPLATE_FILENAME = re.compile(r"^(?P<label>[^_]+)_(?P<writer>[^_]+)_(?P<n>\d+)\.pbm$")


@dataclass(frozen=True)
class SimilarityScore:
    value: float
    mode: str = MISMATCH

    def __str__(self):
        return f"{self.value:.1f}"


@dataclass(frozen=True)
class CharacterTemplate:
    label: str
    image: BinaryImage
    ordinal: int = 0

    def __post_init__(self):
        if self.image.is_blank():
            raise EmptyInputError(f"Template {self.label!r} has no ink")


def similarity(seg: BinaryImage, ref: BinaryImage, mode: str = MISMATCH) -> SimilarityScore:
    if mode not in MODES:
        raise ConfigurationError(f"Unknown similarity mode {mode!r}")
    if seg.pixels.shape != ref.pixels.shape:
        raise ShapeError(f"Cannot compare a {seg.width}x{seg.height} segment with a {ref.width}x{ref.height} reference")
    ref_ink = ref.ink_count
    if ref_ink == 0:
        raise BlankReferenceError("Reference image has no ink")
    if mode == LITERAL:
        count = seg.ink_count
    else:
        count = int(np.count_nonzero(seg.pixels != ref.pixels))
    return SimilarityScore((ref_ink - count) * 100.0 / ref_ink, mode)


def best_match(seg: BinaryImage, templates: Sequence[CharacterTemplate]) -> Tuple[str, SimilarityScore]:
    """Highest mismatch-mode score over the templates; ties go to the lowest ordinal."""
    if not templates:
        raise ConfigurationError("Cannot match against an empty template set")
    best = None
    for template in templates:
        score = similarity(seg, template.image, MISMATCH)
        if best is None or score.value > best[1].value or (score.value == best[1].value and template.ordinal < best[0].ordinal):
            best = (template, score)
    return best[0].label, best[1]


def _ordinals(labels: Sequence[str]) -> Dict[str, int]:
    return {label: index for index, label in enumerate(labels)}


def templates_from_glyphs(
    glyphs: Mapping[str, Sequence[BinaryImage]],
    cfg: PreprocessConfig,
    labels: Optional[Sequence[str]] = None,
) -> List[CharacterTemplate]:
    glyph_cfg = cfg.for_glyphs()
    ordinals = _ordinals(labels if labels is not None else list(glyphs))
    output = []
    for label, exemplars in glyphs.items():
        if label not in ordinals:
            raise ConfigurationError(f"Template label {label!r} is not a known class")
        for exemplar in exemplars:
            output.append(CharacterTemplate(label, normalize(exemplar, glyph_cfg), ordinals[label]))
    return output


def load_templates(directory: str, cfg: PreprocessConfig, labels: Optional[Sequence[str]] = None) -> List[CharacterTemplate]:
    """Templates from `<label>_<writer>_<n>.pbm` files, normalised to the configured size."""
    grouped: Dict[str, List[BinaryImage]] = {}
    for filename, payload in load_image_files(directory, ".pbm").items():
        found = TEMPLATE_FILENAME.match(filename)
        if not found:
            raise FormatError("template files must be named <label>_<writer>_<n>.pbm", os.path.join(directory, filename))
        grouped.setdefault(found.group("label"), []).append(decode_pbm(payload, os.path.join(directory, filename)))
    if not grouped:
        raise ConfigurationError(f"No templates found in {directory}")
    if labels is None:
        labels = sorted(grouped)
    logger.info("Loaded %d templates for %d classes from %s", sum(len(v) for v in grouped.values()), len(grouped), directory)
    return templates_from_glyphs(grouped, cfg, labels)

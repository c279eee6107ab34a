# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
Synthetic handwriting corpus.

A GlyphSet holds labelled exemplar images (the bundled one is drawn
procedurally, but any `<label>/<n>.pbm` directory works). `generate`
lays glyphs out into pages of lines and words with sampled gaps, scale
and rotation jitter, optional headline bars and lower-zone modifiers,
then sprinkles salt-and-pepper noise, recording everything it placed.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

# Awkward hack to allow importing into tests
try:
    from errors import ConfigurationError, EmptyInputError, FormatError
    from mlp import TrainingSet
    from preprocess import PreprocessConfig, normalize, resize_nearest, rotate
    from raster import BinaryImage, Box, crop, decode_pbm, ink_box, write_binary
    from utils import load_image_files
except ImportError:
    from .errors import ConfigurationError, EmptyInputError, FormatError
    from .mlp import TrainingSet
    from .preprocess import PreprocessConfig, normalize, resize_nearest, rotate
    from .raster import BinaryImage, Box, crop, decode_pbm, ink_box, write_binary
    from .utils import load_image_files

logger = logging.getLogger(__name__)

Interval = Tuple[int, int]

# Stroke skeletons on the unit square, (x, y) with y pointing down
_SEGMENT = "segment"
_CIRCLE = "circle"
SHAPES = {
    "ring": [(_CIRCLE, (0.5, 0.5, 0.38))],
    "plus": [(_SEGMENT, (0.5, 0.1, 0.5, 0.9)), (_SEGMENT, (0.1, 0.5, 0.9, 0.5))],
    "ex": [(_SEGMENT, (0.12, 0.12, 0.88, 0.88)), (_SEGMENT, (0.88, 0.12, 0.12, 0.88))],
    "tri": [(_SEGMENT, (0.5, 0.1, 0.1, 0.88)), (_SEGMENT, (0.5, 0.1, 0.9, 0.88)), (_SEGMENT, (0.1, 0.88, 0.9, 0.88))],
    "box": [
        (_SEGMENT, (0.15, 0.15, 0.85, 0.15)),
        (_SEGMENT, (0.85, 0.15, 0.85, 0.85)),
        (_SEGMENT, (0.85, 0.85, 0.15, 0.85)),
        (_SEGMENT, (0.15, 0.85, 0.15, 0.15)),
    ],
    "ell": [(_SEGMENT, (0.25, 0.1, 0.25, 0.88)), (_SEGMENT, (0.25, 0.88, 0.85, 0.88))],
    "tee": [(_SEGMENT, (0.1, 0.12, 0.9, 0.12)), (_SEGMENT, (0.5, 0.12, 0.5, 0.9))],
    "zed": [(_SEGMENT, (0.12, 0.12, 0.88, 0.12)), (_SEGMENT, (0.88, 0.12, 0.12, 0.88)), (_SEGMENT, (0.12, 0.88, 0.88, 0.88))],
    "aitch": [(_SEGMENT, (0.2, 0.1, 0.2, 0.9)), (_SEGMENT, (0.8, 0.1, 0.8, 0.9)), (_SEGMENT, (0.2, 0.5, 0.8, 0.5))],
    "vee": [(_SEGMENT, (0.12, 0.1, 0.5, 0.9)), (_SEGMENT, (0.88, 0.1, 0.5, 0.9))],
}
SHAPE_JITTER = 0.04
AUGMENT_SCALE = (0.8, 1.2)
AUGMENT_ROTATION = (-8.0, 8.0)
MAX_SALT_PEPPER = 0.1


@dataclass(frozen=True)
class GlyphSet:
    glyphs: Mapping[str, Tuple[BinaryImage, ...]]

    def __post_init__(self):
        glyphs = {str(label): tuple(exemplars) for label, exemplars in self.glyphs.items()}
        if len(glyphs) < 2:
            raise ConfigurationError(f"A glyph set needs at least 2 classes, got {len(glyphs)}")
        for label, exemplars in glyphs.items():
            if not exemplars:
                raise ConfigurationError(f"Class {label!r} has no exemplars")
            if any(exemplar.is_blank() for exemplar in exemplars):
                raise EmptyInputError(f"Class {label!r} has a blank exemplar")
        object.__setattr__(self, "glyphs", glyphs)

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(self.glyphs)

    @property
    def min_exemplars(self) -> int:
        return min(len(exemplars) for exemplars in self.glyphs.values())

    def exemplar(self, label: str, index: int) -> BinaryImage:
        return self.glyphs[label][index]


def _tight(pixels: np.ndarray) -> BinaryImage:
    img = BinaryImage(pixels)
    box = ink_box(img)
    if box is None:
        raise EmptyInputError("Rendered glyph has no ink")
    return crop(img, box)


def draw_shape(name: str, size: int, rng: Optional[np.random.Generator] = None) -> BinaryImage:
    """Rasterise one of the stroke skeletons on a size x size canvas, with
    endpoints nudged by the generator when one is given."""
    if size < 8:
        raise ConfigurationError(f"Glyph size must be at least 8, got {size}")
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    half_width = max(1.0, size / 10.0)
    ink = np.zeros((size, size), dtype=bool)

    def nudge(values):
        values = np.asarray(values, dtype=np.float64)
        if rng is not None:
            values = values + rng.uniform(-SHAPE_JITTER, SHAPE_JITTER, size=values.shape)
        return values * size

    for kind, params in SHAPES[name]:
        if kind == _CIRCLE:
            cx, cy = nudge(params[:2])
            radius = params[2] * size
            ink |= np.abs(np.hypot(xx - cx, yy - cy) - radius) <= half_width
        else:
            x0, y0, x1, y1 = nudge(params)
            dx, dy = x1 - x0, y1 - y0
            t = np.clip(((xx - x0) * dx + (yy - y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
            ink |= np.hypot(xx - (x0 + t * dx), yy - (y0 + t * dy)) <= half_width
    return _tight(ink)


def default_glyph_set(exemplars_per_class: int = 5, size: int = 16, seed: int = 0) -> GlyphSet:
    if exemplars_per_class < 1:
        raise ConfigurationError(f"exemplars_per_class must be >= 1, got {exemplars_per_class}")
    rng = np.random.default_rng(seed)
    return GlyphSet({name: tuple(draw_shape(name, size, rng) for _ in range(exemplars_per_class)) for name in SHAPES})


def render_glyph(img: BinaryImage, scale: float = 1.0, rotation: float = 0.0) -> BinaryImage:
    if scale <= 0:
        raise ConfigurationError(f"Scale must be positive, got {scale}")
    output = img
    if scale != 1.0:
        size = (max(1, int(math.floor(img.width * scale + 0.5))), max(1, int(math.floor(img.height * scale + 0.5))))
        output = resize_nearest(output, size)
    if rotation != 0.0:
        output = rotate(output, rotation)
    if output is img:
        return img
    return _tight(output.pixels)


def load_glyph_set(directory: str) -> GlyphSet:
    glyphs = {}
    for label in sorted(os.listdir(directory)):
        class_dir = os.path.join(directory, label)
        if not os.path.isdir(class_dir):
            continue
        exemplars = []
        for filename, payload in load_image_files(class_dir, ".pbm").items():
            stem = filename[: -len(".pbm")]
            if not stem.isdigit():
                raise FormatError("glyph files must be named <n>.pbm", os.path.join(class_dir, filename))
            exemplars.append((int(stem), decode_pbm(payload, os.path.join(class_dir, filename))))
        glyphs[label] = tuple(img for _, img in sorted(exemplars, key=lambda pair: pair[0]))
    logger.info("Loaded %d glyph classes from %s", len(glyphs), directory)
    return GlyphSet(glyphs)


def save_glyph_set(directory: str, glyphs: GlyphSet) -> None:
    for label, exemplars in glyphs.glyphs.items():
        os.makedirs(os.path.join(directory, label), exist_ok=True)
        for index, img in enumerate(exemplars):
            write_binary(os.path.join(directory, label, f"{index}.pbm"), img)


def _range(name: str, values, minimum=None) -> Tuple:
    values = tuple(values)
    if len(values) != 2 or values[0] > values[1]:
        raise ConfigurationError(f"{name} must be a non-empty [low, high] range, got {list(values)}")
    if minimum is not None and values[0] < minimum:
        raise ConfigurationError(f"{name} must not go below {minimum}, got {list(values)}")
    return values


@dataclass(frozen=True)
class CorpusSpec:
    seed: int = 0
    pages: int = 1
    lines_per_page: int = 5
    glyphs_per_line: int = 8
    glyphs_per_word: Tuple[int, int] = (2, 4)
    inter_glyph_gap: Tuple[int, int] = (3, 6)
    inter_word_gap: Tuple[int, int] = (14, 20)
    scale_jitter: Tuple[float, float] = (0.8, 1.2)
    rotation_jitter: Tuple[float, float] = (0.0, 0.0)
    salt_pepper_rate: float = 0.0
    headline_bar: bool = True
    lower_modifier_rate: float = 0.0
    touching_rate: float = 0.0
    line_gap: int = 8
    margin: int = 6
    page_size: Optional[Tuple[int, int]] = None  # (width, height)

    def __post_init__(self):
        for name in ("pages", "lines_per_page", "glyphs_per_line"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        object.__setattr__(self, "glyphs_per_word", _range("glyphs_per_word", self.glyphs_per_word, 1))
        object.__setattr__(self, "inter_glyph_gap", _range("inter_glyph_gap", self.inter_glyph_gap, 0))
        object.__setattr__(self, "inter_word_gap", _range("inter_word_gap", self.inter_word_gap, 1))
        object.__setattr__(self, "scale_jitter", _range("scale_jitter", self.scale_jitter))
        object.__setattr__(self, "rotation_jitter", _range("rotation_jitter", self.rotation_jitter))
        if self.scale_jitter[0] <= 0:
            raise ConfigurationError(f"scale_jitter must be positive, got {list(self.scale_jitter)}")
        if not 0 <= self.salt_pepper_rate <= MAX_SALT_PEPPER:
            raise ConfigurationError(f"salt_pepper_rate must lie in [0, {MAX_SALT_PEPPER}], got {self.salt_pepper_rate}")
        for name in ("lower_modifier_rate", "touching_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if self.line_gap < 1 or self.margin < 0:
            raise ConfigurationError("line_gap must be >= 1 and margin >= 0")
        if self.page_size is not None:
            object.__setattr__(self, "page_size", tuple(int(v) for v in self.page_size))


@dataclass(frozen=True)
class GlyphTruth:
    label: str
    exemplar: int
    box: Box
    scale: float = 1.0
    rotation: float = 0.0
    modifier: Optional[Box] = None

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "exemplar": self.exemplar,
            "box": self.box.as_list(),
            "scale": round(self.scale, 6),
            "rotation": round(self.rotation, 6),
            "modifier": self.modifier.as_list() if self.modifier else None,
        }


@dataclass(frozen=True)
class LineTruth:
    band: Box
    glyphs: Tuple[GlyphTruth, ...]
    spaces: Tuple[Interval, ...] = ()
    headline_row: Optional[int] = None  # band-relative
    headline_thickness: int = 0
    headline: Optional[Box] = None

    @property
    def boxes(self) -> List[Box]:
        return [glyph.box for glyph in self.glyphs]

    @property
    def modifiers(self) -> List[Box]:
        return [glyph.modifier for glyph in self.glyphs if glyph.modifier is not None]

    def to_dict(self) -> dict:
        return {
            "band": self.band.as_list(),
            "headline_row": self.headline_row,
            "headline_thickness": self.headline_thickness,
            "spaces": [list(space) for space in self.spaces],
            "glyphs": [glyph.to_dict() for glyph in self.glyphs],
        }


@dataclass(frozen=True)
class PageTruth:
    width: int
    height: int
    lines: Tuple[LineTruth, ...]

    @property
    def boxes(self) -> List[Box]:
        return [box for line in self.lines for box in line.boxes]

    @property
    def glyphs(self) -> List[GlyphTruth]:
        return [glyph for line in self.lines for glyph in line.glyphs]

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "lines": [line.to_dict() for line in self.lines]}


@dataclass(frozen=True)
class GroundTruth:
    pages: Tuple[PageTruth, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.pages)

    def glyph_count(self) -> int:
        return sum(len(page.glyphs) for page in self.pages)


@dataclass
class _Placement:
    label: str
    exemplar: int
    image: BinaryImage
    left: int
    scale: float
    rotation: float
    modified: bool


def _word_sizes(spec: CorpusSpec, rng: np.random.Generator) -> List[int]:
    sizes, remaining = [], spec.glyphs_per_line
    low, high = spec.glyphs_per_word
    while remaining > 0:
        size = min(remaining, int(rng.integers(low, high + 1)))
        sizes.append(size)
        remaining -= size
    return sizes


def _compose_line(glyphs: GlyphSet, spec: CorpusSpec, rng: np.random.Generator) -> Tuple[np.ndarray, LineTruth]:
    labels = glyphs.labels
    placements: List[_Placement] = []
    spaces = []
    x = 0
    for word_index, size in enumerate(_word_sizes(spec, rng)):
        if word_index:
            gap = int(rng.integers(spec.inter_word_gap[0], spec.inter_word_gap[1] + 1))
            spaces.append((x, x + gap))
            x += gap
        for glyph_index in range(size):
            touching = rng.random() < spec.touching_rate
            gap = int(rng.integers(spec.inter_glyph_gap[0], spec.inter_glyph_gap[1] + 1))
            if glyph_index:
                x += 0 if touching else gap
            label = labels[int(rng.integers(len(labels)))]
            exemplar = int(rng.integers(len(glyphs.glyphs[label])))
            scale = float(rng.uniform(*spec.scale_jitter))
            rotation = float(rng.uniform(*spec.rotation_jitter))
            modified = bool(rng.random() < spec.lower_modifier_rate)
            image = render_glyph(glyphs.exemplar(label, exemplar), scale, rotation)
            placements.append(_Placement(label, exemplar, image, x, scale, rotation, modified))
            x += image.width

    body = max(p.image.height for p in placements)
    bar = max(1, int(math.floor(body / 8.0 + 0.5))) if spec.headline_bar else 0
    baseline = bar + body
    stem = max(2, body // 4)
    blob = max(2, body // 3)
    height = baseline + (stem + blob if any(p.modified for p in placements) else 0)

    canvas = np.zeros((height, x), dtype=np.uint8)
    headline = None
    if bar:
        # One bar across the whole line, spaces included
        canvas[0:bar, :] = 1
        headline = Box(0, 0, bar, x)

    truths = []
    for p in placements:
        top, width = bar, p.image.width
        canvas[top : top + p.image.height, p.left : p.left + width] = p.image.pixels
        modifier = None
        if p.modified:
            # Stem hangs from the glyph to below the line's baseline, blob underneath it
            centre = p.left + width // 2
            blob_width = max(1, min(width, int(math.floor(0.8 * width + 0.5))))
            blob_left = p.left + (width - blob_width) // 2
            canvas[top + p.image.height : baseline + stem, centre] = 1
            canvas[baseline + stem : baseline + stem + blob, blob_left : blob_left + blob_width] = 1
            modifier = Box(top + p.image.height, min(centre, blob_left), baseline + stem + blob, max(centre + 1, blob_left + blob_width))
        truths.append(GlyphTruth(p.label, p.exemplar, Box(top, p.left, top + p.image.height, p.left + width), p.scale, p.rotation, modifier))

    line = LineTruth(
        band=Box(0, 0, height, x),
        glyphs=tuple(truths),
        spaces=tuple(spaces),
        headline_row=0 if bar else None,
        headline_thickness=bar,
        headline=headline,
    )
    return canvas, line


def _shift_line(line: LineTruth, rows: int, columns: int) -> LineTruth:
    glyphs = tuple(
        GlyphTruth(
            g.label,
            g.exemplar,
            g.box.translate(rows, columns),
            g.scale,
            g.rotation,
            g.modifier.translate(rows, columns) if g.modifier else None,
        )
        for g in line.glyphs
    )
    return LineTruth(
        band=line.band.translate(rows, columns),
        glyphs=glyphs,
        spaces=tuple((left + columns, right + columns) for left, right in line.spaces),
        headline_row=line.headline_row,
        headline_thickness=line.headline_thickness,
        headline=line.headline.translate(rows, columns) if line.headline else None,
    )


def generate(glyphs: GlyphSet, spec: CorpusSpec) -> Tuple[List[BinaryImage], GroundTruth]:
    rng = np.random.default_rng(spec.seed)
    pages, truths = [], []
    for _ in range(spec.pages):
        lines = [_compose_line(glyphs, spec, rng) for _ in range(spec.lines_per_page)]
        width = 2 * spec.margin + max(canvas.shape[1] for canvas, _ in lines)
        height = 2 * spec.margin + sum(canvas.shape[0] for canvas, _ in lines) + spec.line_gap * (len(lines) - 1)
        if spec.page_size is not None:
            if spec.page_size[0] < width or spec.page_size[1] < height:
                raise ConfigurationError(f"Content needs a {width}x{height} page but page_size is {spec.page_size[0]}x{spec.page_size[1]}")
            width, height = spec.page_size

        page = np.zeros((height, width), dtype=np.uint8)
        line_truths = []
        top = spec.margin
        for canvas, line in lines:
            page[top : top + canvas.shape[0], spec.margin : spec.margin + canvas.shape[1]] = canvas
            line_truths.append(_shift_line(line, top, spec.margin))
            top += canvas.shape[0] + spec.line_gap

        if spec.salt_pepper_rate > 0:
            page ^= (rng.random(page.shape) < spec.salt_pepper_rate).astype(np.uint8)
        pages.append(BinaryImage(page))
        truths.append(PageTruth(width, height, tuple(line_truths)))
    logger.info("Generated %d pages, %d glyphs", len(pages), sum(len(t.glyphs) for t in truths))
    return pages, GroundTruth(tuple(truths))


@dataclass(frozen=True, eq=False)
class LabeledGlyphs:
    training: TrainingSet
    holdout_inputs: np.ndarray
    holdout_labels: Tuple[int, ...]
    labels: Tuple[str, ...]


def glyph_vector(img: BinaryImage, cfg: PreprocessConfig) -> np.ndarray:
    return normalize(img, cfg.for_glyphs()).pixels.ravel().astype(np.float64)


def training_set(glyphs: GlyphSet, cfg: PreprocessConfig, augment: int = 0, seed: int = 0, holdout: bool = True) -> LabeledGlyphs:
    """Normalised network inputs for every exemplar plus `augment` jittered
    renderings of each. With `holdout`, the last exemplar of every class is
    kept back (never augmented) for measuring classification."""
    if augment < 0:
        raise ConfigurationError(f"augment must not be negative, got {augment}")
    if holdout and glyphs.min_exemplars < 2:
        raise ConfigurationError("Held-out evaluation needs at least 2 exemplars per class")
    rng = np.random.default_rng(seed)
    inputs: List[np.ndarray] = []
    indices: List[int] = []
    held_inputs: List[np.ndarray] = []
    held_indices: List[int] = []
    for index, label in enumerate(glyphs.labels):
        exemplars = glyphs.glyphs[label]
        kept = exemplars[:-1] if holdout else exemplars
        for exemplar in kept:
            inputs.append(glyph_vector(exemplar, cfg))
            indices.append(index)
            for _ in range(augment):
                variant = render_glyph(exemplar, float(rng.uniform(*AUGMENT_SCALE)), float(rng.uniform(*AUGMENT_ROTATION)))
                inputs.append(glyph_vector(variant, cfg))
                indices.append(index)
        if holdout:
            held_inputs.append(glyph_vector(exemplars[-1], cfg))
            held_indices.append(index)

    training = TrainingSet.from_labels(np.vstack(inputs), indices, len(glyphs.labels))
    holdout_inputs = np.vstack(held_inputs) if held_inputs else np.zeros((0, cfg.vector_length))
    return LabeledGlyphs(training, holdout_inputs, tuple(held_indices), glyphs.labels)


def truth_records(truth: GroundTruth) -> List[Dict]:
    return [dict(page=index, **page.to_dict()) for index, page in enumerate(truth.pages)]

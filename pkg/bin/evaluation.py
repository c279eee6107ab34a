# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
Evaluation harness: static segmentation quality, recogniser training
benchmarks and the static-versus-dynamic comparison, plus the trend checks
and the text/CSV report writers.
"""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

# Awkward hack to allow importing into tests
try:
    from corpus import GlyphSet, GroundTruth, LabeledGlyphs, training_set
    from dynamic_seg import DynamicSegConfig, segment_page
    from errors import ConfigurationError
    from mlp import GDBP, GDMALRBP, METHODS, Mlp, MlpConfig, TrainSpec, classify, init, train
    from preprocess import PreprocessConfig, normalize
    from raster import BinaryImage, Box, crop
    from similarity import CharacterTemplate, best_match, similarity
    from static_seg import StaticSegConfig, dissect
except ImportError:
    from .corpus import GlyphSet, GroundTruth, LabeledGlyphs, training_set
    from .dynamic_seg import DynamicSegConfig, segment_page
    from .errors import ConfigurationError
    from .mlp import GDBP, GDMALRBP, METHODS, Mlp, MlpConfig, TrainSpec, classify, init, train
    from .preprocess import PreprocessConfig, normalize
    from .raster import BinaryImage, Box, crop
    from .similarity import CharacterTemplate, best_match, similarity
    from .static_seg import StaticSegConfig, dissect

logger = logging.getLogger(__name__)

MIN_IOU = 0.3
DEFAULT_EPOCHS_GRID = (1000, 2000, 3000, 4000)
ORDERING_EPOCHS = 2000

STATIC_REPORT = "static_similarity"
TRAINING_MSE_REPORT = "training_mse"
CLASSIFICATION_REPORT = "classification"
DYNAMIC_REPORT = "dynamic_comparison"


def match_boxes(detected: Sequence[Box], truth: Sequence[Box], min_iou: float = MIN_IOU) -> List[Tuple[int, int]]:
    """Greedy one-to-one matching by descending IoU. Returns (detected, truth) index pairs."""
    pairs = []
    for d_index, d_box in enumerate(detected):
        for t_index, t_box in enumerate(truth):
            overlap = d_box.iou(t_box)
            if overlap >= min_iou:
                pairs.append((-overlap, t_index, d_index))
    pairs.sort()
    used_detected, used_truth, matches = set(), set(), []
    for _, t_index, d_index in pairs:
        if d_index in used_detected or t_index in used_truth:
            continue
        used_detected.add(d_index)
        used_truth.add(t_index)
        matches.append((d_index, t_index))
    return sorted(matches, key=lambda pair: pair[1])


@dataclass(frozen=True)
class SegmentationScore:
    """Per-class mean similarity (unmatched truth glyphs score 0) and count accuracy."""

    per_class: Mapping[str, float]
    counts: Mapping[str, int]
    matched: int
    detected: int
    truth: int
    denominator: int
    similarity_total: float

    @property
    def count_accuracy(self) -> float:
        return 100.0 * self.matched / self.denominator if self.denominator else 100.0

    @property
    def mean_similarity(self) -> float:
        return self.similarity_total / self.truth if self.truth else 0.0


def _score_pages(
    pages: Sequence[BinaryImage],
    truth: GroundTruth,
    glyphs: GlyphSet,
    detections: Sequence[Sequence[Box]],
    cfg: PreprocessConfig,
    templates: Optional[Sequence[CharacterTemplate]] = None,
) -> SegmentationScore:
    """Matched segments are compared with the exemplar that drew the glyph or,
    given `templates`, with the best matching template of the true class."""
    glyph_cfg = cfg.for_glyphs()
    references: Dict[Tuple[str, int], BinaryImage] = {}
    by_label: Dict[str, List[CharacterTemplate]] = {}
    for template in templates or ():
        by_label.setdefault(template.label, []).append(template)
    totals = {label: 0.0 for label in glyphs.labels}
    counts = {label: 0 for label in glyphs.labels}
    matched = detected_count = truth_count = denominator = 0
    similarity_total = 0.0

    for page, page_truth, boxes in zip(pages, truth.pages, detections):
        truth_glyphs = page_truth.glyphs
        matches = dict((t, d) for d, t in match_boxes(boxes, [g.box for g in truth_glyphs]))
        for t_index, glyph in enumerate(truth_glyphs):
            counts[glyph.label] += 1
            if t_index not in matches:
                continue
            segment = normalize(crop(page, boxes[matches[t_index]]), glyph_cfg)
            if glyph.label in by_label:
                value = best_match(segment, by_label[glyph.label])[1].value
            else:
                key = (glyph.label, glyph.exemplar)
                if key not in references:
                    references[key] = normalize(glyphs.exemplar(*key), glyph_cfg)
                value = similarity(segment, references[key]).value
            totals[glyph.label] += value
            similarity_total += value
        matched += len(matches)
        detected_count += len(boxes)
        truth_count += len(truth_glyphs)
        denominator += max(len(boxes), len(truth_glyphs))

    per_class = {label: totals[label] / counts[label] for label in glyphs.labels if counts[label]}
    return SegmentationScore(per_class, counts, matched, detected_count, truth_count, denominator, similarity_total)


def _ordered_map(jobs: int, func: Callable, items: Iterable) -> List:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(func, items))


def static_detections(pages: Sequence[BinaryImage], static_cfg: StaticSegConfig, jobs: int = 1) -> List[List[Box]]:
    def run(page):
        dissection = dissect(page, static_cfg)
        return [box for line in dissection.characters_per_line for box in line]

    return _ordered_map(jobs, run, pages)


def evaluate_static(
    pages: Sequence[BinaryImage],
    truth: GroundTruth,
    glyphs: GlyphSet,
    static_cfg: StaticSegConfig,
    cfg: PreprocessConfig,
    jobs: int = 1,
) -> SegmentationScore:
    if len(pages) != len(truth):
        raise ConfigurationError(f"{len(pages)} pages but truth for {len(truth)}")
    return _score_pages(pages, truth, glyphs, static_detections(pages, static_cfg, jobs), cfg)


@dataclass(frozen=True)
class TrainingCell:
    method: str
    epochs: int
    mse: Tuple[float, ...]  # per seed
    rates: Tuple[float, ...]  # held-out classification %, per seed

    @property
    def median_mse(self) -> float:
        return float(np.median(self.mse))

    @property
    def median_rate(self) -> float:
        return float(np.median(self.rates))


@dataclass(frozen=True)
class TrainingReport:
    methods: Tuple[str, ...]
    epochs_grid: Tuple[int, ...]
    cells: Mapping[Tuple[str, int], TrainingCell] = field(default_factory=dict)

    def cell(self, method: str, epochs: int) -> TrainingCell:
        return self.cells[(method, epochs)]


def holdout_rate(net: Mlp, data: LabeledGlyphs) -> float:
    if not data.holdout_labels:
        return 0.0
    hits = sum(1 for inputs, label in zip(data.holdout_inputs, data.holdout_labels) if classify(net, inputs)[0] == label)
    return 100.0 * hits / len(data.holdout_labels)


def train_checkpoints(
    config: MlpConfig,
    data: LabeledGlyphs,
    spec: TrainSpec,
    epochs_grid: Sequence[int],
) -> Tuple[Dict[int, Mlp], Dict[int, float]]:
    """One training run, snapshotting the network at every grid point."""
    grid = sorted(set(int(e) for e in epochs_grid))
    run_spec = replace(spec, epochs=grid[-1])
    nets, errors = {}, {}

    def keep(epoch, snapshot, error):
        nets[epoch] = snapshot
        errors[epoch] = error

    train(init(config, spec.seed, data.labels), data.training, run_spec, checkpoints=grid, on_checkpoint=keep)
    return nets, errors


def evaluate_training(
    glyphs: GlyphSet,
    cfg: PreprocessConfig,
    hidden_lens: Sequence[int],
    base_spec: TrainSpec,
    methods: Sequence[str] = METHODS,
    epochs_grid: Sequence[int] = DEFAULT_EPOCHS_GRID,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    augment: int = 0,
    data_seed: int = 0,
    jobs: int = 1,
) -> TrainingReport:
    if len(glyphs.labels) < 2:
        raise ConfigurationError("Training evaluation needs at least 2 classes")
    if not seeds:
        raise ConfigurationError("Training evaluation needs at least one seed")
    data = training_set(glyphs, cfg, augment=augment, seed=data_seed, holdout=True)
    config = MlpConfig(cfg.vector_length, len(glyphs.labels), tuple(hidden_lens))
    grid = tuple(sorted(set(int(e) for e in epochs_grid)))
    runs = [(method, seed) for method in methods for seed in seeds]

    def run(job):
        method, seed = job
        spec = replace(base_spec, method=method, seed=seed)
        nets, errors = train_checkpoints(config, data, spec, grid)
        logger.info("%s seed %d: final MSE %.6f", method, seed, errors[grid[-1]])
        return {epochs: (errors[epochs], holdout_rate(nets[epochs], data)) for epochs in grid}

    results = dict(zip(runs, _ordered_map(jobs, run, runs)))
    cells = {}
    for method in methods:
        for epochs in grid:
            per_seed = [results[(method, seed)][epochs] for seed in seeds]
            cells[(method, epochs)] = TrainingCell(method, epochs, tuple(v[0] for v in per_seed), tuple(v[1] for v in per_seed))
    return TrainingReport(tuple(methods), grid, cells)


@dataclass(frozen=True)
class DynamicReport:
    static: SegmentationScore
    dynamic: Mapping[int, SegmentationScore]  # keyed by training epochs

    @property
    def epochs_grid(self) -> Tuple[int, ...]:
        return tuple(sorted(self.dynamic))


def dynamic_detections(
    pages: Sequence[BinaryImage],
    net: Mlp,
    templates: Sequence[CharacterTemplate],
    static_cfg: StaticSegConfig,
    dyn_cfg: DynamicSegConfig,
    jobs: int = 1,
) -> List[List[Box]]:
    def run(page):
        results = segment_page(page, net, templates, static_cfg, dyn_cfg)
        return [box for index in sorted(results) for box in results[index].boxes]

    return _ordered_map(jobs, run, pages)


def evaluate_dynamic(
    pages: Sequence[BinaryImage],
    truth: GroundTruth,
    glyphs: GlyphSet,
    nets: Mapping[int, Mlp],
    templates: Sequence[CharacterTemplate],
    static_cfg: StaticSegConfig,
    dyn_cfg: DynamicSegConfig,
    cfg: PreprocessConfig,
    jobs: int = 1,
) -> DynamicReport:
    if not nets:
        raise ConfigurationError("Dynamic evaluation needs at least one trained network")
    static = evaluate_static(pages, truth, glyphs, static_cfg, cfg, jobs)
    dynamic = {}
    for epochs in sorted(nets):
        detections = dynamic_detections(pages, nets[epochs], templates, static_cfg, dyn_cfg, jobs)
        dynamic[epochs] = _score_pages(pages, truth, glyphs, detections, cfg, templates)
        logger.info("Dynamic segmentation with the %d-epoch network: mean S %.1f", epochs, dynamic[epochs].mean_similarity)
    return DynamicReport(static, dynamic)


def check_training_trends(report: TrainingReport) -> List[str]:
    violations = []
    grid = report.epochs_grid
    for method in report.methods:
        errors = [report.cell(method, epochs).median_mse for epochs in grid]
        if any(later >= earlier for earlier, later in zip(errors, errors[1:])):
            violations.append(f"{method}: median MSE does not strictly decrease over epochs {list(grid)}")

    point = ORDERING_EPOCHS if ORDERING_EPOCHS in grid else grid[-1]
    ordered = [method for method in reversed(METHODS) if method in report.methods]
    for better, worse in zip(ordered, ordered[1:]):
        if report.cell(better, point).median_mse >= report.cell(worse, point).median_mse:
            violations.append(f"At {point} epochs, {better} median MSE is not below {worse}")

    if GDMALRBP in report.methods:
        first, last = report.cell(GDMALRBP, grid[0]).median_rate, report.cell(GDMALRBP, grid[-1]).median_rate
        if last < first:
            violations.append(f"{GDMALRBP} classification fell from {first:.1f}% at {grid[0]} to {last:.1f}% at {grid[-1]} epochs")
        if GDBP in report.methods:
            for epochs in grid:
                if report.cell(GDMALRBP, epochs).median_rate < report.cell(GDBP, epochs).median_rate:
                    violations.append(f"At {epochs} epochs, {GDMALRBP} classifies worse than {GDBP}")
    return violations


def check_dynamic_trends(report: DynamicReport) -> List[str]:
    violations = []
    static = report.static
    for epochs in report.epochs_grid:
        dynamic = report.dynamic[epochs]
        if dynamic.mean_similarity <= static.mean_similarity:
            violations.append(f"{epochs}-epoch dynamic mean similarity {dynamic.mean_similarity:.1f} does not beat static {static.mean_similarity:.1f}")
        if dynamic.count_accuracy < static.count_accuracy:
            violations.append(f"{epochs}-epoch dynamic count accuracy {dynamic.count_accuracy:.1f}% is below static {static.count_accuracy:.1f}%")
    return violations


Table = Tuple[List[str], List[List[str]]]


def _pct(value: float) -> str:
    return f"{value:.1f}"


def _mse(value: float) -> str:
    return f"{value:.6f}"


def static_table(score: SegmentationScore) -> Table:
    headers = ["label", "similarity", "glyphs"]
    rows = [[label, _pct(value), str(score.counts[label])] for label, value in score.per_class.items()]
    rows.append(["(all)", _pct(score.mean_similarity), str(score.truth)])
    rows.append(["(count accuracy)", _pct(score.count_accuracy), str(score.detected)])
    return headers, rows


def training_mse_table(report: TrainingReport) -> Table:
    headers = ["epochs"] + list(report.methods)
    rows = [[str(epochs)] + [_mse(report.cell(m, epochs).median_mse) for m in report.methods] for epochs in report.epochs_grid]
    return headers, rows


def classification_table(report: TrainingReport) -> Table:
    headers = ["epochs"] + list(report.methods)
    rows = [[str(epochs)] + [_pct(report.cell(m, epochs).median_rate) for m in report.methods] for epochs in report.epochs_grid]
    return headers, rows


def dynamic_table(report: DynamicReport) -> Table:
    headers = ["label", "static"] + [f"dynamic_{epochs}" for epochs in report.epochs_grid]
    rows = []
    for label in report.static.per_class:
        rows.append([label, _pct(report.static.per_class[label])] + [_pct(report.dynamic[e].per_class.get(label, 0.0)) for e in report.epochs_grid])
    rows.append(["(all)", _pct(report.static.mean_similarity)] + [_pct(report.dynamic[e].mean_similarity) for e in report.epochs_grid])
    rows.append(["(count accuracy)", _pct(report.static.count_accuracy)] + [_pct(report.dynamic[e].count_accuracy) for e in report.epochs_grid])
    return headers, rows


def render_table(table: Table) -> str:
    headers, rows = table
    widths = [max(len(str(row[i])) for row in [headers] + rows) for i in range(len(headers))]
    lines = []
    for index, row in enumerate([headers] + rows):
        cells = [str(cell).ljust(width) if i == 0 else str(cell).rjust(width) for i, (cell, width) in enumerate(zip(row, widths))]
        lines.append("  ".join(cells).rstrip())
        if index == 0:
            lines.append("  ".join("-" * width for width in widths))
    return "\n".join(lines) + "\n"


def write_report(directory: str, name: str, table: Table) -> List[str]:
    """Write `<name>.txt` (aligned) and `<name>.csv` (header row, fixed field order)."""
    text_path = f"{directory}/{name}.txt"
    csv_path = f"{directory}/{name}.csv"
    with open(text_path, "w") as fp:
        fp.write(render_table(table))
    headers, rows = table
    with open(csv_path, "w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(headers)
        writer.writerows(rows)
    return [text_path, csv_path]


def report_names() -> Tuple[str, ...]:
    return (STATIC_REPORT, TRAINING_MSE_REPORT, CLASSIFICATION_REPORT, DYNAMIC_REPORT)

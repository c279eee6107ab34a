# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

from dataclasses import replace
from unittest.mock import patch

import pytest

from bin.config import load_config
from bin.corpus import CorpusSpec, default_glyph_set, generate, training_set
from bin.dynamic_seg import DynamicSegConfig
from bin.errors import ConfigurationError
from bin.evaluation import (
    DynamicReport,
    SegmentationScore,
    TrainingCell,
    TrainingReport,
    _ordered_map,
    check_dynamic_trends,
    check_training_trends,
    classification_table,
    dynamic_table,
    evaluate_dynamic,
    evaluate_static,
    evaluate_training,
    match_boxes,
    render_table,
    report_names,
    static_detections,
    train_checkpoints,
    training_mse_table,
    write_report,
)
from bin.mlp import GDALBP, GDBP, GDMALRBP, GDMBP, METHODS, TrainSpec
from bin.raster import Box
from bin.similarity import templates_from_glyphs
from bin.static_seg import StaticSegConfig

GRID = (1000, 2000, 3000)
HEALTHY_MSE = {
    GDBP: (0.09, 0.08, 0.07),
    GDMBP: (0.08, 0.07, 0.06),
    GDALBP: (0.07, 0.06, 0.05),
    GDMALRBP: (0.05, 0.04, 0.03),
}
HEALTHY_RATES = {GDBP: (50.0, 60.0, 70.0), GDMBP: (60.0, 65.0, 70.0), GDALBP: (60.0, 70.0, 75.0), GDMALRBP: (80.0, 85.0, 90.0)}


def _training_report(errors=None, rates=None):
    errors = {**HEALTHY_MSE, **(errors or {})}
    rates = {**HEALTHY_RATES, **(rates or {})}
    cells = {}
    for method in METHODS:
        for index, epochs in enumerate(GRID):
            cells[(method, epochs)] = TrainingCell(method, epochs, (errors[method][index],), (rates[method][index],))
    return TrainingReport(METHODS, GRID, cells)


def _score(similarity_total, matched):
    return SegmentationScore({"a": similarity_total / 10}, {"a": 10}, matched, 10, 10, 10, similarity_total)


def test_match_boxes__greedy_one_to_one():
    truth = [Box(0, 0, 10, 10), Box(0, 20, 10, 30)]
    detected = [Box(0, 21, 10, 30), Box(0, 0, 10, 9), Box(0, 1, 10, 10), Box(50, 50, 60, 60)]
    assert match_boxes(detected, truth) == [(1, 0), (0, 1)]


def test_match_boxes__respects_min_iou():
    assert match_boxes([Box(0, 0, 10, 10)], [Box(0, 8, 10, 18)]) == []
    assert match_boxes([Box(0, 0, 10, 10)], [Box(0, 8, 10, 18)], min_iou=0.1) == [(0, 0)]


def test_segmentation_score__empty_truth():
    score = SegmentationScore({}, {}, 0, 0, 0, 0, 0.0)
    assert score.count_accuracy == 100.0
    assert score.mean_similarity == 0.0


def test_ordered_map__keeps_input_order():
    assert _ordered_map(3, lambda value: value * value, range(10)) == [value * value for value in range(10)]


def test_evaluate_static__clean_page(clean_corpus, glyphs, glyph_cfg):
    pages, truth = clean_corpus
    score = evaluate_static(pages, truth, glyphs, StaticSegConfig(), glyph_cfg)
    assert score.truth == 18
    assert score.count_accuracy == 100.0
    assert score.mean_similarity > 90.0
    assert sum(score.counts.values()) == 18


@patch("bin.evaluation.static_detections")
def test_evaluate_static__nothing_detected(mock_detections, clean_corpus, glyphs, glyph_cfg):
    mock_detections.return_value = [[]]
    pages, truth = clean_corpus
    score = evaluate_static(pages, truth, glyphs, StaticSegConfig(), glyph_cfg)
    assert score.matched == 0
    assert score.count_accuracy == 0.0
    assert score.mean_similarity == 0.0
    assert all(value == 0.0 for value in score.per_class.values())


def test_evaluate_static__page_count_mismatch(clean_corpus, glyphs, glyph_cfg):
    pages, truth = clean_corpus
    with pytest.raises(ConfigurationError):
        evaluate_static(pages * 2, truth, glyphs, StaticSegConfig(), glyph_cfg)


def test_evaluate_training__structure_and_determinism(glyphs, glyph_cfg):
    kwargs = dict(methods=(GDBP, GDMALRBP), epochs_grid=(40, 20), seeds=(0, 1))
    report = evaluate_training(glyphs, glyph_cfg, (20,), TrainSpec(), **kwargs)
    assert report.methods == (GDBP, GDMALRBP)
    assert report.epochs_grid == (20, 40)
    assert len(report.cells) == 4
    cell = report.cell(GDMALRBP, 40)
    assert len(cell.mse) == len(cell.rates) == 2
    assert all(0.0 <= rate <= 100.0 for rate in cell.rates)
    assert evaluate_training(glyphs, glyph_cfg, (20,), TrainSpec(), jobs=2, **kwargs).cells == report.cells


def test_check_training_trends__healthy():
    assert check_training_trends(_training_report()) == []


def test_check_training_trends__rising_error():
    violations = check_training_trends(_training_report(errors={GDBP: (0.07, 0.08, 0.09)}))
    assert len(violations) == 1
    assert violations[0].startswith("GDBP")


def test_check_training_trends__method_ordering():
    violations = check_training_trends(_training_report(errors={GDALBP: (0.075, 0.07, 0.05)}))
    assert violations == ["At 2000 epochs, GDALBP median MSE is not below GDMBP"]


def test_check_training_trends__classification_falls():
    violations = check_training_trends(_training_report(rates={GDMALRBP: (90.0, 85.0, 80.0)}))
    assert len(violations) == 1
    assert "fell from 90.0%" in violations[0]


def test_check_dynamic_trends():
    static = _score(600.0, 8)
    assert check_dynamic_trends(DynamicReport(static, {1000: _score(800.0, 9)})) == []
    violations = check_dynamic_trends(DynamicReport(static, {1000: _score(500.0, 7)}))
    assert len(violations) == 2


def test_evaluate_dynamic__needs_a_network(clean_corpus, glyphs, glyph_cfg, templates):
    pages, truth = clean_corpus
    with pytest.raises(ConfigurationError):
        evaluate_dynamic(pages, truth, glyphs, {}, templates, StaticSegConfig(), DynamicSegConfig(), glyph_cfg)


def test_evaluate_dynamic__scores_every_network(clean_corpus, glyphs, glyph_cfg, recogniser, templates):
    pages, truth = clean_corpus
    report = evaluate_dynamic(pages, truth, glyphs, {600: recogniser}, templates, StaticSegConfig(), DynamicSegConfig(), glyph_cfg)
    assert report.epochs_grid == (600,)
    assert report.dynamic[600].truth == report.static.truth == 18
    assert report.dynamic[600].matched > 0


def test_tables_and_render():
    headers, rows = training_mse_table(_training_report())
    assert headers == ["epochs", GDBP, GDMBP, GDALBP, GDMALRBP]
    assert rows[0] == ["1000", "0.090000", "0.080000", "0.070000", "0.050000"]
    assert classification_table(_training_report())[1][2][-1] == "90.0"
    text = render_table((headers, rows)).splitlines()
    assert text[0].split() == headers
    assert set(text[1].replace(" ", "")) == {"-"}
    assert len(text) == 2 + len(GRID)


def test_write_report(tmp_path):
    table = dynamic_table(DynamicReport(_score(600.0, 8), {1000: _score(800.0, 9)}))
    paths = write_report(str(tmp_path), "dynamic_comparison", table)
    assert [path.rsplit("/", 1)[1] for path in paths] == ["dynamic_comparison.txt", "dynamic_comparison.csv"]
    assert (tmp_path / "dynamic_comparison.csv").read_text() == (
        "label,static,dynamic_1000\n" "a,60.0,80.0\n" "(all),60.0,80.0\n" "(count accuracy),80.0,90.0\n"
    )


def test_report_names():
    assert report_names() == ("static_similarity", "training_mse", "classification", "dynamic_comparison")


def _quick_run():
    run = load_config("data/glyphseg-quick.yaml")
    return run, default_glyph_set(run.glyphs.exemplars_per_class, run.glyphs.glyph_size, run.corpus.seed)


def test_evaluate_static__exact_on_clean_pages(glyphs, glyph_cfg):
    spec = CorpusSpec(seed=21, pages=20, lines_per_page=3, glyphs_per_line=6, scale_jitter=(1.0, 1.0))
    pages, truth = generate(glyphs, spec)
    score = evaluate_static(pages, truth, glyphs, StaticSegConfig(), glyph_cfg)
    assert score.count_accuracy == 100.0
    for boxes, page_truth in zip(static_detections(pages, StaticSegConfig()), truth.pages):
        expected = [glyph.box for glyph in page_truth.glyphs]
        pairs = match_boxes(boxes, expected)
        assert len(pairs) == len(expected) == len(boxes)
        assert all(boxes[d].iou(expected[t]) >= 0.8 for d, t in pairs)


def test_evaluate_static__touching_pairs_merge(glyphs, glyph_cfg):
    spec = CorpusSpec(seed=8, lines_per_page=3, glyphs_per_line=6, glyphs_per_word=(2, 2), scale_jitter=(1.0, 1.0), touching_rate=1.0)
    pages, truth = generate(glyphs, spec)
    score = evaluate_static(pages, truth, glyphs, StaticSegConfig(), glyph_cfg)
    assert score.count_accuracy < 100.0
    boxes = static_detections(pages, StaticSegConfig())[0]
    expected = [glyph.box for glyph in truth.pages[0].glyphs]
    assert len(boxes) < len(expected)
    for box in boxes:
        covered = [t for t in expected if box.left <= t.left and t.right <= box.right and box.top <= t.bottom and t.top <= box.bottom]
        assert len(covered) >= 2


@patch("bin.evaluation.dynamic_detections")
def test_evaluate_dynamic__segments_are_scored_against_the_best_template(mock_detections, clean_corpus, glyphs, glyph_cfg, recogniser, templates):
    pages, truth = clean_corpus
    mock_detections.return_value = static_detections(pages, StaticSegConfig())
    report = evaluate_dynamic(pages, truth, glyphs, {600: recogniser}, templates, StaticSegConfig(), DynamicSegConfig(), glyph_cfg)
    dynamic = report.dynamic[600]
    assert dynamic.matched == report.static.matched
    assert dynamic.count_accuracy == report.static.count_accuracy
    assert all(dynamic.per_class[label] >= value for label, value in report.static.per_class.items())


@pytest.mark.slow
def test_evaluate_training__quick_profile_trends_hold():
    run, glyphs = _quick_run()
    cfg, settings = run.preprocess, run.evaluation
    report = evaluate_training(
        glyphs,
        cfg,
        run.mlp.resolved_hidden_lens(cfg.vector_length),
        run.mlp.train_spec(),
        methods=settings.methods,
        epochs_grid=settings.epochs_grid,
        seeds=settings.seeds,
        augment=run.glyphs.augment,
        data_seed=run.corpus.seed,
        jobs=settings.jobs,
    )
    assert check_training_trends(report) == []


@pytest.mark.slow
def test_evaluate_dynamic__quick_profile_beats_static_on_scale_jittered_pages():
    run, glyphs = _quick_run()
    cfg, settings = run.preprocess, run.evaluation
    jittered = replace(run.corpus, seed=run.corpus.seed + 1, scale_jitter=settings.jittered_scale, inter_glyph_gap=settings.jittered_gap)
    pages, truth = generate(glyphs, jittered)
    data = training_set(glyphs, cfg, augment=run.glyphs.augment, seed=run.corpus.seed, holdout=False)
    nets, _ = train_checkpoints(run.mlp.mlp_config(cfg.vector_length, len(glyphs.labels)), data, run.mlp.train_spec(), settings.epochs_grid)
    templates = templates_from_glyphs(glyphs.glyphs, cfg, glyphs.labels)
    report = evaluate_dynamic(pages, truth, glyphs, nets, templates, run.static, run.dynamic, cfg, settings.jobs)
    assert check_dynamic_trends(report) == []

# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

from dataclasses import replace
from unittest.mock import patch

import numpy as np
import pytest

from bin.dynamic_seg import DynamicSegConfig, _candidate, over_segment, segment_line, segment_page
from bin.errors import ConfigurationError, ShapeError
from bin.mlp import MlpConfig, init
from bin.raster import BinaryImage, Box
from bin.similarity import MISMATCH, CharacterTemplate, SimilarityScore
from bin.static_seg import StaticSegConfig, dissect, remove_headline

TEN_SLICES = DynamicSegConfig(interval_fraction=0.1, max_segments_per_char=3)


def _toy_recogniser():
    net = init(MlpConfig(64, 2, (4,)), seed=0, labels=["a", "b"])
    solid = BinaryImage(np.ones((8, 8)))
    return net, [CharacterTemplate("a", solid, 0), CharacterTemplate("b", solid, 1)]


def _slice_classifier(confidences):
    """Patch helpers: confidence depends only on how many slices the candidate spans."""
    spans = []

    def fake_candidate(line, cuts, start, end):
        spans.append(end - start)
        return _candidate(line, cuts, start, end)

    def fake_classify(net, inputs):
        return 0, confidences.get(spans[-1], 0.0)

    return fake_candidate, fake_classify


def _slice_reader(confidences, similarities):
    """Like _slice_classifier, with the template similarity also keyed on the span."""
    spans = []

    def fake_candidate(line, cuts, start, end):
        spans.append(end - start)
        return _candidate(line, cuts, start, end)

    def fake_classify(net, inputs):
        return 0, confidences.get(spans[-1], 0.0)

    def fake_best_match(glyph, templates):
        return templates[0].label, SimilarityScore(similarities.get(spans[-1], 0.0), MISMATCH)

    return fake_candidate, fake_classify, fake_best_match


def _read_with(reader, line, cfg, cuts=None):
    net, templates = _toy_recogniser()
    fake_candidate, fake_classify, fake_best_match = reader
    with patch("bin.dynamic_seg._candidate", side_effect=fake_candidate), patch("bin.dynamic_seg.classify", side_effect=fake_classify), patch(
        "bin.dynamic_seg.best_match", side_effect=fake_best_match
    ):
        return segment_line(line, net, templates, cfg, cuts=cuts)


def test_over_segment__regular_cuts():
    cuts = over_segment(200, DynamicSegConfig())
    assert cuts == list(range(0, 201, 5))


def test_over_segment__rounds_half_up_and_ends_at_width():
    cuts = over_segment(100, DynamicSegConfig())
    assert cuts[:4] == [0, 3, 5, 8]
    assert cuts[-1] == 100
    assert all(a < b for a, b in zip(cuts, cuts[1:]))


def test_over_segment__narrow_line_is_one_segment():
    assert over_segment(10, DynamicSegConfig()) == [0, 10]
    assert over_segment(BinaryImage.blank(10, 3), DynamicSegConfig()) == [0, 10]


def test_over_segment__empty_width():
    with pytest.raises(ShapeError):
        over_segment(0, DynamicSegConfig())


def test_dynamic_seg_config__validation():
    with pytest.raises(ConfigurationError):
        DynamicSegConfig(interval_fraction=1.5)
    with pytest.raises(ConfigurationError):
        DynamicSegConfig(confidence_threshold=1.0)
    with pytest.raises(ConfigurationError):
        DynamicSegConfig(max_segments_per_char=0)


def test_segment_line__template_size_must_match_network():
    net, _ = _toy_recogniser()
    small = [CharacterTemplate("a", BinaryImage(np.ones((4, 4)))), CharacterTemplate("b", BinaryImage(np.ones((4, 4))))]
    with pytest.raises(ConfigurationError):
        segment_line(BinaryImage(np.ones((8, 40))), net, small, TEN_SLICES)


def test_segment_line__every_class_needs_a_template():
    net, templates = _toy_recogniser()
    with pytest.raises(ConfigurationError):
        segment_line(BinaryImage(np.ones((8, 40))), net, templates[:1], TEN_SLICES)


def test_segment_line__accepts_first_confident_candidate():
    net, templates = _toy_recogniser()
    fake_candidate, fake_classify = _slice_classifier({1: 0.3, 2: 0.95, 3: 0.99})
    with patch("bin.dynamic_seg._candidate", side_effect=fake_candidate), patch("bin.dynamic_seg.classify", side_effect=fake_classify):
        result = segment_line(BinaryImage(np.ones((8, 40))), net, templates, TEN_SLICES)
    assert [(c.start_cut, c.end_cut) for c in result.characters] == [(0, 2), (2, 4), (4, 6), (6, 8), (8, 10)]
    assert result.boxes[1] == Box(0, 8, 8, 16)
    assert all(c.label == "a" and c.similarity.value == 100.0 for c in result.characters)
    assert result.residue is None
    assert result.skipped == ()


def test_segment_line__falls_back_to_most_confident_candidate():
    net, templates = _toy_recogniser()
    fake_candidate, fake_classify = _slice_classifier({1: 0.3, 2: 0.6, 3: 0.5})
    with patch("bin.dynamic_seg._candidate", side_effect=fake_candidate), patch("bin.dynamic_seg.classify", side_effect=fake_classify):
        result = segment_line(BinaryImage(np.ones((8, 40))), net, templates, TEN_SLICES)
    assert [(c.start_cut, c.end_cut) for c in result.characters] == [(0, 2), (2, 4), (4, 6), (6, 8), (8, 10)]
    assert all(c.confidence == 0.6 for c in result.characters)


def test_segment_line__similarity_floor_blocks_early_acceptance():
    net, templates = _toy_recogniser()
    cfg = replace(TEN_SLICES, similarity_floor=100.0)
    line = np.ones((8, 40), dtype=np.uint8)
    line[0, 1] = 0  # the first slice alone no longer matches the solid template
    fake_candidate, fake_classify = _slice_classifier({1: 0.9, 2: 0.85, 3: 0.5})
    with patch("bin.dynamic_seg._candidate", side_effect=fake_candidate), patch("bin.dynamic_seg.classify", side_effect=fake_classify):
        result = segment_line(BinaryImage(line), net, templates, cfg)
    assert (result.characters[0].start_cut, result.characters[0].end_cut) == (0, 1)
    assert result.characters[0].similarity.value < 100.0


def test_segment_line__skips_unrecognisable_slices():
    net, templates = _toy_recogniser()
    fake_candidate, fake_classify = _slice_classifier({1: 0.3, 2: 0.3, 3: 0.3})
    with patch("bin.dynamic_seg._candidate", side_effect=fake_candidate), patch("bin.dynamic_seg.classify", side_effect=fake_classify):
        result = segment_line(BinaryImage(np.ones((8, 40))), net, templates, TEN_SLICES)
    assert result.characters == ()
    assert result.skipped == tuple((left, left + 4) for left in range(0, 40, 4))
    assert result.residue == (0, 40)


def test_segment_line__blank_slices_are_passed_over():
    net, templates = _toy_recogniser()
    line = np.ones((8, 40), dtype=np.uint8)
    line[:, :8] = 0
    fake_candidate, fake_classify = _slice_classifier({1: 0.3, 2: 0.95})
    with patch("bin.dynamic_seg._candidate", side_effect=fake_candidate), patch("bin.dynamic_seg.classify", side_effect=fake_classify):
        result = segment_line(BinaryImage(line), net, templates, TEN_SLICES)
    assert result.characters[0].start_cut == 2
    assert result.skipped == ()


def test_segment_line__pure_noise_yields_no_characters(glyph_cfg, recogniser, templates):
    weights, biases = list(recogniser.weights), list(recogniser.biases)
    weights[-1] = np.zeros_like(weights[-1])
    biases[-1] = np.full_like(biases[-1], -20.0)
    silent = replace(recogniser, weights=tuple(weights), biases=tuple(biases))
    noise = BinaryImage(np.random.default_rng(0).random((16, 120)) < 0.3)
    result = segment_line(noise, silent, templates, DynamicSegConfig())
    assert result.characters == ()
    assert result.residue == (0, 120)
    assert len(result.skipped) > 0


def test_segment_line__decisions_ignore_columns_beyond_the_window(clean_corpus, recogniser, templates):
    pages, truth = clean_corpus
    band = truth.pages[0].lines[0].band
    line, _ = remove_headline(BinaryImage(pages[0].pixels[band.top : band.bottom, band.left : band.right]))
    cfg = DynamicSegConfig()
    cuts = over_segment(line, cfg)
    k = 30
    full = segment_line(line, recogniser, templates, cfg, cuts=cuts)
    truncated = segment_line(line, recogniser, templates, cfg, cuts=cuts[: k + 1])

    def settled(result):
        return [c for c in result.characters if c.start_cut + cfg.max_segments_per_char <= k]

    assert settled(full)
    assert settled(full) == settled(truncated)


def test_segment_line__characters_are_ordered_and_disjoint(clean_corpus, recogniser, templates):
    pages, truth = clean_corpus
    band = truth.pages[0].lines[1].band
    line, _ = remove_headline(BinaryImage(pages[0].pixels[band.top : band.bottom, band.left : band.right]))
    result = segment_line(line, recogniser, templates, DynamicSegConfig())
    boxes = result.boxes
    assert boxes
    assert all(a.right <= b.left for a, b in zip(boxes, boxes[1:]))
    assert all(box.fits(line.width, line.height) for box in boxes)


def test_segment_page__results_in_page_coordinates():
    net, templates = _toy_recogniser()
    page = np.zeros((20, 60), dtype=np.uint8)
    page[5:13, 10:50] = 1
    fake_candidate, fake_classify = _slice_classifier({1: 0.3, 2: 0.95})
    cfg = replace(TEN_SLICES, remove_headline=False)
    with patch("bin.dynamic_seg._candidate", side_effect=fake_candidate), patch("bin.dynamic_seg.classify", side_effect=fake_classify):
        results = segment_page(BinaryImage(page), net, templates, StaticSegConfig(), cfg)
    assert list(results) == [0]
    assert results[0].boxes[0] == Box(5, 10, 13, 18)
    assert results[0].boxes[-1].right == 50


def test_segment_page__one_result_per_line(clean_corpus, recogniser, templates):
    pages, truth = clean_corpus
    results = segment_page(pages[0], recogniser, templates, StaticSegConfig(), DynamicSegConfig())
    lines = truth.pages[0].lines
    assert sorted(results) == list(range(len(lines)))
    for index, line in enumerate(lines):
        assert all(line.band.top <= box.top and box.bottom <= line.band.bottom for box in results[index].boxes)


def test_over_segment__random_widths_are_increasing_and_bounded():
    rng = np.random.default_rng(11)
    for width in rng.integers(1, 5000, size=1000):
        fraction = float(rng.uniform(0.005, 0.5))
        cuts = over_segment(int(width), DynamicSegConfig(interval_fraction=fraction))
        assert cuts[0] == 0
        assert cuts[-1] == width
        assert all(a < b for a, b in zip(cuts, cuts[1:]))
        if width * fraction >= 1:
            expected = {min(int(width), int(np.floor(k * fraction * width + 0.5))) for k in range(int(np.floor(1 / fraction + 1e-9)) + 1)}
            assert set(cuts) == expected | {int(width)}


@patch("bin.dynamic_seg.classify", return_value=(0, 0.95))
def test_segment_line__ink_runs_become_cut_positions(mock_classify):
    net, templates = _toy_recogniser()
    line = np.zeros((8, 40), dtype=np.uint8)
    line[:, 3:11] = 1
    line[:, 21:31] = 1
    result = segment_line(BinaryImage(line), net, templates, TEN_SLICES)
    assert result.boxes == [Box(0, 3, 8, 11), Box(0, 21, 8, 31)]
    assert result.residue is None
    assert result.skipped == ()


@patch("bin.dynamic_seg.classify", return_value=(0, 0.95))
def test_segment_line__candidates_stop_at_blank_columns(mock_classify):
    net, templates = _toy_recogniser()
    line = np.zeros((8, 40), dtype=np.uint8)
    line[:, 0:2] = 1
    line[:, 3:40] = 1
    result = segment_line(BinaryImage(line), net, templates, TEN_SLICES)
    assert result.boxes[0] == Box(0, 0, 8, 2)
    assert all(box.right <= 2 or box.left >= 3 for box in result.boxes)


def test_segment_line__split_replaces_an_unconfirmed_run_when_it_matches_better():
    reader = _slice_reader({1: 0.95, 3: 0.5}, {1: 90.0, 3: 40.0})
    result = _read_with(reader, BinaryImage(np.ones((8, 12))), TEN_SLICES, cuts=[0, 4, 8, 12])
    assert [(c.start_cut, c.end_cut) for c in result.characters] == [(0, 1), (1, 2), (2, 3)]


def test_segment_line__unconfirmed_run_stays_whole_when_the_split_is_worse():
    reader = _slice_reader({1: 0.95, 3: 0.5}, {1: 60.0, 3: 70.0})
    result = _read_with(reader, BinaryImage(np.ones((8, 12))), TEN_SLICES, cuts=[0, 4, 8, 12])
    assert [(c.start_cut, c.end_cut) for c in result.characters] == [(0, 3)]
    assert result.boxes == [Box(0, 0, 8, 12)]
    assert result.characters[0].confidence == 0.5


def test_segment_line__confirmed_run_is_taken_whole():
    reader = _slice_reader({1: 0.95, 3: 0.9}, {1: 100.0, 3: 85.0})
    result = _read_with(reader, BinaryImage(np.ones((8, 12))), TEN_SLICES, cuts=[0, 4, 8, 12])
    assert [(c.start_cut, c.end_cut) for c in result.characters] == [(0, 3)]


def test_segment_line__unrecognisable_run_is_skipped_slice_by_slice():
    reader = _slice_reader({1: 0.1, 2: 0.1, 3: 0.1}, {1: 90.0, 2: 90.0, 3: 90.0})
    result = _read_with(reader, BinaryImage(np.ones((8, 12))), TEN_SLICES, cuts=[0, 4, 8, 12])
    assert result.characters == ()
    assert result.skipped == ((0, 4), (4, 8), (8, 12))
    assert result.residue == (0, 12)


def test_segment_line__boxes_never_bridge_a_blank_column(clean_corpus, recogniser, templates):
    pages, truth = clean_corpus
    static = dissect(pages[0], StaticSegConfig())
    results = segment_page(pages[0], recogniser, templates, StaticSegConfig(), DynamicSegConfig())
    for index, boxes in enumerate(static.characters_per_line):
        for box in results[index].boxes:
            assert any(run.left <= box.left and box.right <= run.right for run in boxes)


def test_segment_page__splits_off_lower_modifiers_like_the_static_pipeline():
    net, templates = _toy_recogniser()
    page = np.zeros((38, 40), dtype=np.uint8)
    page[0:8, :] = 1
    page[10:18, :] = 1
    page[20:28, :] = 1
    page[28:32, 10] = 1
    page[32:38, :] = 1
    fake_candidate, fake_classify = _slice_classifier({1: 0.3, 2: 0.95})
    cfg = replace(TEN_SLICES, remove_headline=False)
    with patch("bin.dynamic_seg._candidate", side_effect=fake_candidate), patch("bin.dynamic_seg.classify", side_effect=fake_classify):
        results = segment_page(BinaryImage(page), net, templates, StaticSegConfig(), cfg)
    assert sorted(results) == [0, 1, 2]
    assert results[2].boxes
    assert all(box.bottom <= 31 for box in results[2].boxes)
    assert any(box.bottom == 31 for box in results[2].boxes)

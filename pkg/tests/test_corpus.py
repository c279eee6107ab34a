# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

import json

import numpy as np
import pytest

from bin.corpus import (
    SHAPES,
    CorpusSpec,
    GlyphSet,
    default_glyph_set,
    draw_shape,
    generate,
    glyph_vector,
    load_glyph_set,
    render_glyph,
    save_glyph_set,
    training_set,
    truth_records,
)
from bin.errors import ConfigurationError, EmptyInputError, FormatError
from bin.raster import BinaryImage, crop, write_binary


def test_default_glyph_set(glyphs):
    assert glyphs.labels == tuple(SHAPES)
    assert glyphs.min_exemplars == 4
    assert not any(img.is_blank() for exemplars in glyphs.glyphs.values() for img in exemplars)
    assert default_glyph_set(4, 16, seed=0) == glyphs
    assert default_glyph_set(4, 16, seed=1) != glyphs


def test_draw_shape__tight_and_bounded():
    img = draw_shape("plus", 20)
    assert img.width <= 20 and img.height <= 20
    assert img.pixels[0].any() and img.pixels[-1].any()
    assert img.pixels[:, 0].any() and img.pixels[:, -1].any()


def test_draw_shape__too_small():
    with pytest.raises(ConfigurationError):
        draw_shape("ring", 6)


def test_glyph_set__needs_two_classes():
    with pytest.raises(ConfigurationError):
        GlyphSet({"ring": (draw_shape("ring", 16),)})


def test_glyph_set__blank_exemplar():
    with pytest.raises(EmptyInputError):
        GlyphSet({"ring": (draw_shape("ring", 16),), "dot": (BinaryImage.blank(3, 3),)})


def test_render_glyph__identity_and_scale():
    img = draw_shape("box", 16)
    assert render_glyph(img) is img
    doubled = render_glyph(img, scale=2.0)
    assert abs(doubled.width - 2 * img.width) <= 1
    assert abs(doubled.height - 2 * img.height) <= 1


def test_save_and_load_glyph_set(tmp_path, glyphs):
    save_glyph_set(str(tmp_path), glyphs)
    assert load_glyph_set(str(tmp_path)).glyphs == glyphs.glyphs


def test_load_glyph_set__bad_filename(tmp_path):
    (tmp_path / "ring").mkdir()
    (tmp_path / "plus").mkdir()
    write_binary(tmp_path / "ring" / "first.pbm", draw_shape("ring", 16))
    write_binary(tmp_path / "plus" / "0.pbm", draw_shape("plus", 16))
    with pytest.raises(FormatError):
        load_glyph_set(str(tmp_path))


def test_corpus_spec__validation():
    with pytest.raises(ConfigurationError):
        CorpusSpec(salt_pepper_rate=0.2)
    with pytest.raises(ConfigurationError):
        CorpusSpec(inter_glyph_gap=(6, 3))
    with pytest.raises(ConfigurationError):
        CorpusSpec(lines_per_page=0)


def test_generate__deterministic(glyphs):
    spec = CorpusSpec(seed=9, lines_per_page=2, glyphs_per_line=4)
    first_pages, first_truth = generate(glyphs, spec)
    second_pages, second_truth = generate(glyphs, spec)
    assert first_pages == second_pages
    assert first_truth == second_truth
    assert generate(glyphs, CorpusSpec(seed=10, lines_per_page=2, glyphs_per_line=4))[0] != first_pages


def test_generate__ink_conservation(glyphs):
    pages, truth = generate(glyphs, CorpusSpec(seed=4, pages=2, lines_per_page=3, glyphs_per_line=6))
    assert len(pages) == len(truth) == 2
    assert truth.glyph_count() == 36
    for page, page_truth in zip(pages, truth.pages):
        glyph_ink = sum(crop(page, glyph.box).ink_count for glyph in page_truth.glyphs)
        bar_ink = sum(line.headline.area for line in page_truth.lines)
        assert page.ink_count == glyph_ink + bar_ink
        assert all(not crop(page, glyph.box).is_blank() for glyph in page_truth.glyphs)


def test_generate__without_headline(glyphs):
    pages, truth = generate(glyphs, CorpusSpec(seed=4, headline_bar=False, lines_per_page=2))
    line = truth.pages[0].lines[0]
    assert line.headline is None
    assert line.headline_row is None
    assert line.glyphs[0].box.top == line.band.top


def test_generate__spaces_lie_between_words(glyphs):
    _, truth = generate(glyphs, CorpusSpec(seed=2, lines_per_page=2, glyphs_per_line=8))
    for line in truth.pages[0].lines:
        for left, right in line.spaces:
            assert 14 <= right - left <= 20
            assert not any(box.left < right and left < box.right for box in line.boxes)


def test_generate__page_size(glyphs):
    pages, truth = generate(glyphs, CorpusSpec(seed=1, lines_per_page=1, glyphs_per_line=2, page_size=(400, 300)))
    assert (pages[0].width, pages[0].height) == (400, 300)
    assert (truth.pages[0].width, truth.pages[0].height) == (400, 300)
    with pytest.raises(ConfigurationError):
        generate(glyphs, CorpusSpec(seed=1, page_size=(20, 20)))


def test_generate__noise_is_applied_last(glyphs):
    clean_pages, clean_truth = generate(glyphs, CorpusSpec(seed=5, lines_per_page=2))
    noisy_pages, noisy_truth = generate(glyphs, CorpusSpec(seed=5, lines_per_page=2, salt_pepper_rate=0.05))
    assert noisy_truth == clean_truth
    flipped = np.mean(clean_pages[0].pixels != noisy_pages[0].pixels)
    assert 0.02 < flipped < 0.08


def test_generate__lower_modifiers(glyphs):
    _, truth = generate(glyphs, CorpusSpec(seed=6, lines_per_page=1, glyphs_per_line=5, lower_modifier_rate=1.0))
    line = truth.pages[0].lines[0]
    assert len(line.modifiers) == 5
    for glyph in line.glyphs:
        assert glyph.modifier.top == glyph.box.bottom
        assert glyph.box.left <= glyph.modifier.left and glyph.modifier.right <= glyph.box.right
        assert glyph.modifier.bottom == line.band.bottom


def test_generate__touching_glyphs(glyphs):
    _, truth = generate(glyphs, CorpusSpec(seed=7, lines_per_page=1, glyphs_per_line=6, touching_rate=1.0))
    line = truth.pages[0].lines[0]
    space_lefts = {left for left, _ in line.spaces}
    for a, b in zip(line.boxes, line.boxes[1:]):
        if a.right not in space_lefts:
            assert a.right == b.left


def test_training_set__holdout(glyphs, glyph_cfg):
    data = training_set(glyphs, glyph_cfg, augment=1, seed=0, holdout=True)
    assert len(data.training) == 10 * 3 * 2
    assert data.holdout_inputs.shape == (10, glyph_cfg.vector_length)
    assert data.holdout_labels == tuple(range(10))
    assert data.labels == glyphs.labels


def test_training_set__everything(glyphs, glyph_cfg):
    data = training_set(glyphs, glyph_cfg, augment=0, holdout=False)
    assert len(data.training) == 40
    assert data.holdout_labels == ()
    assert np.array_equal(data.training.inputs[0], glyph_vector(glyphs.exemplar("ring", 0), glyph_cfg))


def test_training_set__holdout_needs_two_exemplars(glyph_cfg):
    single = default_glyph_set(exemplars_per_class=1)
    with pytest.raises(ConfigurationError):
        training_set(single, glyph_cfg, holdout=True)


def test_truth_records__serialisable(clean_corpus):
    _, truth = clean_corpus
    records = truth_records(truth)
    assert [record["page"] for record in records] == [0]
    decoded = json.loads(json.dumps(records[0]))
    assert len(decoded["lines"]) == 3
    assert decoded["lines"][0]["headline_row"] == 0
    assert len(decoded["lines"][0]["glyphs"]) == 6

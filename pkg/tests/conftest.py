# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

import numpy as np
import pytest

from bin.corpus import CorpusSpec, default_glyph_set, generate, training_set
from bin.mlp import MlpConfig, TrainSpec, fit
from bin.preprocess import PreprocessConfig
from bin.similarity import templates_from_glyphs


@pytest.fixture(scope="session")
def glyphs():
    return default_glyph_set(exemplars_per_class=4, size=16, seed=0)


@pytest.fixture(scope="session")
def glyph_cfg():
    return PreprocessConfig(normalized_size=(10, 10), deskew_range=0.0)


@pytest.fixture(scope="session")
def recogniser(glyphs, glyph_cfg):
    """A small network trained on every exemplar of the bundled glyph set."""
    data = training_set(glyphs, glyph_cfg, augment=1, seed=0, holdout=False)
    config = MlpConfig(glyph_cfg.vector_length, len(glyphs.labels), (60,))
    net, _ = fit(config, data.training, TrainSpec(epochs=600, seed=0), labels=glyphs.labels)
    return net


@pytest.fixture(scope="session")
def templates(glyphs, glyph_cfg):
    return templates_from_glyphs(glyphs.glyphs, glyph_cfg, glyphs.labels)


@pytest.fixture(scope="session")
def clean_corpus(glyphs):
    spec = CorpusSpec(seed=3, pages=1, lines_per_page=3, glyphs_per_line=6, inter_glyph_gap=(3, 4), scale_jitter=(1.0, 1.0))
    return generate(glyphs, spec)


def ink(rows):
    """BinaryImage-ready array from strings of '#' (ink) and '.'."""
    return np.array([[1 if ch == "#" else 0 for ch in row] for row in rows], dtype=np.uint8)

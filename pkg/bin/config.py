# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
Run configuration, loaded from YAML (see data/glyphseg.yaml).

Each top-level section maps onto one settings type and its keys are that
type's field names. Values may pull from the environment with
`!ENV ${VAR:default}`.
"""

import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, Optional, Tuple

import yaml
from pyaml_env import parse_config

# Awkward hack to allow importing into tests
try:
    from corpus import CorpusSpec
    from dynamic_seg import DynamicSegConfig
    from errors import ConfigurationError
    from evaluation import DEFAULT_EPOCHS_GRID
    from mlp import METHODS, MlpConfig, TrainSpec, default_hidden_lens
    from preprocess import PreprocessConfig
    from static_seg import StaticSegConfig
    from utils import _get_configuration_path
except ImportError:
    from .corpus import CorpusSpec
    from .dynamic_seg import DynamicSegConfig
    from .errors import ConfigurationError
    from .evaluation import DEFAULT_EPOCHS_GRID
    from .mlp import METHODS, MlpConfig, TrainSpec, default_hidden_lens
    from .preprocess import PreprocessConfig
    from .static_seg import StaticSegConfig
    from .utils import _get_configuration_path

DEFAULT_CONFIG_FILEPATH = os.environ.get("GLYPHSEG_CONFIG", "data/glyphseg.yaml")


@dataclass(frozen=True)
class MlpSettings:
    hidden_lens: Tuple[int, ...] = ()
    layers: int = 1
    activation: str = "sigmoid"
    method: str = "GDMALRBP"
    epochs: int = 1000
    learning_rate: float = 0.4
    momentum: float = 0.9
    lr_increase: float = 1.05
    lr_decrease: float = 0.7
    err_ratio_cap: float = 1.04
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_lens", tuple(int(v) for v in self.hidden_lens or ()))
        if not self.hidden_lens:
            default_hidden_lens(1, self.layers)
        self.train_spec()

    def train_spec(self) -> TrainSpec:
        return TrainSpec(
            method=self.method,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            lr_increase=self.lr_increase,
            lr_decrease=self.lr_decrease,
            err_ratio_cap=self.err_ratio_cap,
            epochs=self.epochs,
            seed=self.seed,
        )

    def resolved_hidden_lens(self, input_len: int) -> Tuple[int, ...]:
        return self.hidden_lens or default_hidden_lens(input_len, self.layers)

    def mlp_config(self, input_len: int, output_len: int) -> MlpConfig:
        return MlpConfig(input_len, output_len, self.resolved_hidden_lens(input_len), self.activation)


@dataclass(frozen=True)
class GlyphSettings:
    exemplars_per_class: int = 5
    glyph_size: int = 16
    augment: int = 2

    def __post_init__(self):
        if self.exemplars_per_class < 1:
            raise ConfigurationError(f"exemplars_per_class must be >= 1, got {self.exemplars_per_class}")
        if self.glyph_size < 8:
            raise ConfigurationError(f"glyph_size must be >= 8, got {self.glyph_size}")
        if self.augment < 0:
            raise ConfigurationError(f"augment must not be negative, got {self.augment}")


@dataclass(frozen=True)
class EvaluationSettings:
    methods: Tuple[str, ...] = METHODS
    epochs_grid: Tuple[int, ...] = DEFAULT_EPOCHS_GRID
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    jobs: int = 1
    jittered_scale: Tuple[float, float] = (0.8, 1.2)
    jittered_gap: Tuple[int, int] = (3, 6)

    def __post_init__(self):
        for name in ("methods", "epochs_grid", "seeds", "jittered_scale", "jittered_gap"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown or not self.methods:
            raise ConfigurationError(f"methods must be a non-empty subset of {', '.join(METHODS)}")
        if not self.epochs_grid or min(self.epochs_grid) < 1:
            raise ConfigurationError(f"epochs_grid must list positive epoch counts, got {list(self.epochs_grid)}")
        if not self.seeds:
            raise ConfigurationError("seeds must not be empty")
        if self.jobs < 1:
            raise ConfigurationError(f"jobs must be >= 1, got {self.jobs}")


@dataclass(frozen=True)
class PathSettings:
    glyph_dir: str = ""
    template_dir: str = ""
    model_file: str = ""
    output_dir: str = "output"


SECTIONS = {
    "preprocess": PreprocessConfig,
    "static": StaticSegConfig,
    "dynamic": DynamicSegConfig,
    "mlp": MlpSettings,
    "corpus": None,  # split between CorpusSpec and GlyphSettings
    "evaluation": EvaluationSettings,
    "paths": PathSettings,
}


@dataclass(frozen=True)
class RunConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    static: StaticSegConfig = field(default_factory=StaticSegConfig)
    dynamic: DynamicSegConfig = field(default_factory=DynamicSegConfig)
    mlp: MlpSettings = field(default_factory=MlpSettings)
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    glyphs: GlyphSettings = field(default_factory=GlyphSettings)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    paths: PathSettings = field(default_factory=PathSettings)

    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[str] = None, jobs: Optional[int] = None) -> "RunConfig":
        config = self
        if seed is not None:
            config = replace(config, corpus=replace(config.corpus, seed=seed), mlp=replace(config.mlp, seed=seed))
        if output_dir:
            config = replace(config, paths=replace(config.paths, output_dir=output_dir))
        if jobs is not None:
            config = replace(config, evaluation=replace(config.evaluation, jobs=jobs))
        return config


def _field_names(cls) -> set:
    return {f.name for f in fields(cls)}


def _build(section: str, cls, values: Dict[str, Any]):
    unknown = sorted(set(values) - _field_names(cls))
    if unknown:
        raise ConfigurationError(f"Unknown key(s) in [{section}]: {', '.join(unknown)}")
    values = {key: tuple(value) if isinstance(value, list) else value for key, value in values.items()}
    try:
        return cls(**values)
    except ConfigurationError as ex:
        raise ConfigurationError(f"[{section}] {ex}") from ex
    except (TypeError, ValueError) as ex:
        raise ConfigurationError(f"[{section}] invalid value: {ex}") from ex


def _section(data: Dict[str, Any], name: str) -> Dict[str, Any]:
    values = data.get(name) or {}
    if not isinstance(values, dict):
        raise ConfigurationError(f"Section [{name}] must be a mapping of keys to values")
    return values


def parse_run_config(data: Optional[Dict[str, Any]]) -> RunConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigurationError("Configuration must be a mapping of sections")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigurationError(f"Unknown configuration section(s): {', '.join(unknown)}")

    built = {name: _build(name, cls, _section(data, name)) for name, cls in SECTIONS.items() if cls is not None}
    corpus_values = _section(data, "corpus")
    glyph_keys = _field_names(GlyphSettings)
    built["glyphs"] = _build("corpus", GlyphSettings, {k: v for k, v in corpus_values.items() if k in glyph_keys})
    built["corpus"] = _build("corpus", CorpusSpec, {k: v for k, v in corpus_values.items() if k not in glyph_keys})
    return RunConfig(**built)


def load_config(path: Optional[str] = None) -> RunConfig:
    pathname = _get_configuration_path(path or DEFAULT_CONFIG_FILEPATH)
    if not os.path.exists(pathname):
        raise ConfigurationError(f"Configuration file {pathname} not found")
    try:
        data = parse_config(pathname)
    except yaml.YAMLError as ex:
        raise ConfigurationError(f"Could not parse {pathname}: {ex}") from ex
    return parse_run_config(data)

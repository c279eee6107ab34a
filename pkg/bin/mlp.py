# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
Sigmoid multilayer perceptron with full-batch back-propagation.

Four training methods are supported:

    GDBP      plain gradient descent
    GDMBP     gradient descent with momentum
    GDALBP    gradient descent with an adaptive learning rate
    GDMALRBP  momentum and adaptive learning rate

The loss is the mean squared error over every example and output unit.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

# Awkward hack to allow importing into tests
try:
    from errors import ConfigurationError, DivergenceError, FormatError, ShapeError
except ImportError:
    from .errors import ConfigurationError, DivergenceError, FormatError, ShapeError

logger = logging.getLogger(__name__)

GDBP = "GDBP"
GDMBP = "GDMBP"
GDALBP = "GDALBP"
GDMALRBP = "GDMALRBP"
METHODS = (GDBP, GDMBP, GDALBP, GDMALRBP)
MOMENTUM_METHODS = frozenset({GDMBP, GDMALRBP})
ADAPTIVE_METHODS = frozenset({GDALBP, GDMALRBP})

ACTIVATIONS = ("sigmoid",)
MAX_HIDDEN_LAYERS = 4
MAX_EPOCHS = 10000
TARGET_ON = 0.9
TARGET_OFF = 0.1

MODEL_HEADER = "glyphseg-mlp v1"


def default_hidden_lens(input_len: int, layers: int = 1) -> Tuple[int, ...]:
    # First layer is 1.5x the input, each deeper layer half the previous one
    if not 1 <= layers <= MAX_HIDDEN_LAYERS:
        raise ConfigurationError(f"Hidden layer count must be between 1 and {MAX_HIDDEN_LAYERS}, got {layers}")
    lens = [max(1, int(math.floor(1.5 * input_len + 0.5)))]
    while len(lens) < layers:
        lens.append(max(1, lens[-1] // 2))
    return tuple(lens)


@dataclass(frozen=True)
class MlpConfig:
    input_len: int
    output_len: int
    hidden_lens: Tuple[int, ...] = ()
    activation: str = "sigmoid"

    def __post_init__(self):
        if self.input_len < 1 or self.output_len < 1:
            raise ConfigurationError(f"Layer lengths must be >= 1, got input={self.input_len} output={self.output_len}")
        hidden = tuple(int(v) for v in self.hidden_lens) or default_hidden_lens(self.input_len)
        object.__setattr__(self, "hidden_lens", hidden)
        if not 1 <= len(hidden) <= MAX_HIDDEN_LAYERS:
            raise ConfigurationError(f"Between 1 and {MAX_HIDDEN_LAYERS} hidden layers are supported, got {len(hidden)}")
        if min(hidden) < 1:
            raise ConfigurationError(f"Hidden layer lengths must be >= 1, got {hidden}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"Unsupported activation {self.activation!r}")

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return (self.input_len,) + self.hidden_lens + (self.output_len,)


def _frozen(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Mlp:
    config: MlpConfig
    weights: Tuple[np.ndarray, ...]  # one (fan_out, fan_in) matrix per layer
    biases: Tuple[np.ndarray, ...]
    labels: Tuple[str, ...] = ()

    def __post_init__(self):
        sizes = self.config.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ShapeError(f"Expected {len(sizes) - 1} layers of parameters")
        weights = tuple(_frozen(w) for w in self.weights)
        biases = tuple(_frozen(b) for b in self.biases)
        for index, (w, b) in enumerate(zip(weights, biases)):
            expected = (sizes[index + 1], sizes[index])
            if w.shape != expected or b.shape != (expected[0],):
                raise ShapeError(f"Layer {index}: weights {w.shape} / biases {b.shape} do not chain as {expected}")
        labels = tuple(str(v) for v in self.labels) or tuple(str(i) for i in range(self.config.output_len))
        if len(labels) != self.config.output_len:
            raise ShapeError(f"{len(labels)} labels for {self.config.output_len} output units")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "labels", labels)

    def __eq__(self, other):
        if not isinstance(other, Mlp):
            return NotImplemented
        return (
            self.config == other.config
            and self.labels == other.labels
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Gradient:
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]


def init(config: MlpConfig, seed: int, labels: Optional[Sequence[str]] = None) -> Mlp:
    """Uniform weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases."""
    rng = np.random.default_rng(seed)
    sizes = config.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(config, tuple(weights), tuple(biases), tuple(labels or ()))


def _activations(weights, biases, inputs: np.ndarray) -> List[np.ndarray]:
    layers = [inputs]
    for w, b in zip(weights, biases):
        layers.append(expit(layers[-1] @ w.T + b))
    return layers


def _as_batch(values, width: int, what: str) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(values, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ShapeError(f"{what} must have length {width}, got shape {np.shape(values)}")
    return arr, single


def forward(net: Mlp, inputs) -> np.ndarray:
    batch, single = _as_batch(inputs, net.config.input_len, "Input")
    output = _activations(net.weights, net.biases, batch)[-1]
    return output[0] if single else output


def _mse(weights, biases, inputs, targets) -> float:
    return float(np.mean((_activations(weights, biases, inputs)[-1] - targets) ** 2))


def mse(net: Mlp, inputs, targets) -> float:
    batch, _ = _as_batch(inputs, net.config.input_len, "Input")
    goal, _ = _as_batch(targets, net.config.output_len, "Target")
    return _mse(net.weights, net.biases, batch, goal)


def _backprop(weights, biases, inputs, targets):
    layers = _activations(weights, biases, inputs)
    output = layers[-1]
    delta = 2.0 * (output - targets) / output.size * output * (1.0 - output)
    grad_w, grad_b = [None] * len(weights), [None] * len(weights)
    for index in range(len(weights) - 1, -1, -1):
        grad_w[index] = delta.T @ layers[index]
        grad_b[index] = delta.sum(axis=0)
        if index:
            below = layers[index]
            delta = (delta @ weights[index]) * below * (1.0 - below)
    return grad_w, grad_b


def gradient(net: Mlp, inputs, target) -> Gradient:
    """Analytic gradient of the mean squared error for one example or a batch."""
    batch, _ = _as_batch(inputs, net.config.input_len, "Input")
    goal, _ = _as_batch(target, net.config.output_len, "Target")
    if batch.shape[0] != goal.shape[0]:
        raise ShapeError(f"{batch.shape[0]} inputs but {goal.shape[0]} targets")
    grad_w, grad_b = _backprop(net.weights, net.biases, batch, goal)
    return Gradient(tuple(grad_w), tuple(grad_b))


def classify(net: Mlp, inputs) -> Tuple[int, float]:
    output = forward(net, np.asarray(inputs, dtype=np.float64).ravel())
    index = int(np.argmax(output))
    return index, float(output[index])


@dataclass(frozen=True)
class TrainSpec:
    method: str = GDMALRBP
    learning_rate: float = 0.4
    momentum: float = 0.9
    lr_increase: float = 1.05
    lr_decrease: float = 0.7
    err_ratio_cap: float = 1.04
    epochs: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"Unknown training method {self.method!r}; expected one of {', '.join(METHODS)}")
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning_rate must not be negative, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.lr_increase < 1:
            raise ConfigurationError(f"lr_increase must be >= 1, got {self.lr_increase}")
        if not 0 < self.lr_decrease < 1:
            raise ConfigurationError(f"lr_decrease must lie in (0, 1), got {self.lr_decrease}")
        if self.err_ratio_cap < 1:
            raise ConfigurationError(f"err_ratio_cap must be >= 1, got {self.err_ratio_cap}")
        if not 1 <= self.epochs <= MAX_EPOCHS:
            raise ConfigurationError(f"epochs must lie in [1, {MAX_EPOCHS}], got {self.epochs}")

    @property
    def uses_momentum(self) -> bool:
        return self.method in MOMENTUM_METHODS

    @property
    def adaptive(self) -> bool:
        return self.method in ADAPTIVE_METHODS


@dataclass(frozen=True, eq=False)
class TrainingSet:
    inputs: np.ndarray  # (examples, input_len)
    targets: np.ndarray  # (examples, output_len)

    def __post_init__(self):
        inputs = _frozen(self.inputs)
        targets = _frozen(self.targets)
        if inputs.ndim != 2 or targets.ndim != 2 or inputs.shape[0] != targets.shape[0]:
            raise ShapeError(f"Inputs {inputs.shape} and targets {targets.shape} do not pair up")
        if inputs.shape[0] == 0:
            raise ConfigurationError("Training data is empty")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @classmethod
    def from_labels(cls, inputs, label_indices: Sequence[int], output_len: int) -> "TrainingSet":
        label_indices = np.asarray(label_indices, dtype=np.int64)
        if label_indices.size == 0:
            raise ConfigurationError("Training data is empty")
        if label_indices.min() < 0 or label_indices.max() >= output_len:
            raise ConfigurationError(f"Labels must index one of {output_len} outputs")
        targets = np.full((label_indices.size, output_len), TARGET_OFF)
        targets[np.arange(label_indices.size), label_indices] = TARGET_ON
        return cls(np.asarray(inputs, dtype=np.float64).reshape(label_indices.size, -1), targets)


@dataclass(frozen=True)
class TrainReport:
    mse_per_epoch: Tuple[float, ...]
    final_mse: float
    epochs_run: int
    final_learning_rate: float
    rejected_steps: int = 0
    checkpoints: Tuple[int, ...] = field(default=())


CheckpointCallback = Callable[[int, Mlp, float], None]


def train(
    net: Mlp,
    data: TrainingSet,
    spec: TrainSpec,
    checkpoints: Iterable[int] = (),
    on_checkpoint: Optional[CheckpointCallback] = None,
) -> Tuple[Mlp, TrainReport]:
    """Full-batch training. `on_checkpoint(epoch, snapshot, mse)` is called after
    each listed epoch with an immutable copy of the network at that point."""
    if data.inputs.shape[1] != net.config.input_len or data.targets.shape[1] != net.config.output_len:
        raise ShapeError(f"Training data {data.inputs.shape[1]}->{data.targets.shape[1]} does not fit the network's layer sizes")
    marks = sorted({int(epoch) for epoch in checkpoints if 1 <= int(epoch) <= spec.epochs})

    weights = [w.copy() for w in net.weights]
    biases = [b.copy() for b in net.biases]
    velocity_w = [np.zeros_like(w) for w in weights]
    velocity_b = [np.zeros_like(b) for b in biases]
    rate = spec.learning_rate
    error = _mse(weights, biases, data.inputs, data.targets)
    history, rejected = [], 0

    for epoch in range(1, spec.epochs + 1):
        grad_w, grad_b = _backprop(weights, biases, data.inputs, data.targets)
        if spec.uses_momentum:
            velocity_w = [spec.momentum * v - rate * g for v, g in zip(velocity_w, grad_w)]
            velocity_b = [spec.momentum * v - rate * g for v, g in zip(velocity_b, grad_b)]
            step_w, step_b = velocity_w, velocity_b
        else:
            step_w = [-rate * g for g in grad_w]
            step_b = [-rate * g for g in grad_b]
        trial_w = [w + s for w, s in zip(weights, step_w)]
        trial_b = [b + s for b, s in zip(biases, step_b)]
        trial_error = _mse(trial_w, trial_b, data.inputs, data.targets)
        if not math.isfinite(trial_error):
            raise DivergenceError(epoch, trial_error)

        if spec.adaptive and trial_error > spec.err_ratio_cap * error:
            rate *= spec.lr_decrease
            velocity_w = [np.zeros_like(w) for w in weights]
            velocity_b = [np.zeros_like(b) for b in biases]
            rejected += 1
        elif spec.uses_momentum and not spec.adaptive and trial_error > error:
            # Restart: drop the step and the velocity, the next step is plain descent
            velocity_w = [np.zeros_like(w) for w in weights]
            velocity_b = [np.zeros_like(b) for b in biases]
            rejected += 1
        else:
            if spec.adaptive and trial_error < error:
                rate *= spec.lr_increase
            weights, biases, error = trial_w, trial_b, trial_error
        history.append(error)

        if epoch in marks:
            logger.info("%s epoch %d: MSE %.6f (learning rate %.4g)", spec.method, epoch, error, rate)
            if on_checkpoint is not None:
                on_checkpoint(epoch, replace(net, weights=tuple(weights), biases=tuple(biases)), error)

    trained = replace(net, weights=tuple(weights), biases=tuple(biases))
    report = TrainReport(
        mse_per_epoch=tuple(history),
        final_mse=history[-1],
        epochs_run=spec.epochs,
        final_learning_rate=rate,
        rejected_steps=rejected,
        checkpoints=tuple(marks),
    )
    return trained, report


def fit(config: MlpConfig, data: TrainingSet, spec: TrainSpec, labels: Optional[Sequence[str]] = None, **kwargs) -> Tuple[Mlp, TrainReport]:
    return train(init(config, spec.seed, labels), data, spec, **kwargs)


def dumps_model(net: Mlp) -> str:
    config = net.config
    lines = [
        MODEL_HEADER,
        f"{config.input_len} {','.join(str(v) for v in config.hidden_lens)} {config.output_len} {config.activation}",
    ]
    for w, b in zip(net.weights, net.biases):
        lines.append(" ".join(repr(float(v)) for v in np.concatenate([w.ravel(), b])))
    lines.extend(f"label {index} {name}" for index, name in enumerate(net.labels))
    return "\n".join(lines) + "\n"


def loads_model(text: str, path: Optional[str] = None) -> Mlp:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MODEL_HEADER:
        raise FormatError(f"line 1: expected header {MODEL_HEADER!r}", path)
    try:
        input_len, hidden, output_len, activation = lines[1].split()
        config = MlpConfig(int(input_len), int(output_len), tuple(int(v) for v in hidden.split(",")), activation)
    except (IndexError, ValueError, ConfigurationError) as ex:
        raise FormatError(f"line 2: malformed config line ({ex})", path) from ex

    sizes = config.layer_sizes
    weights, biases = [], []
    for index, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        lineno = index + 3
        try:
            values = np.array([float(v) for v in lines[lineno - 1].split()])
        except (IndexError, ValueError) as ex:
            raise FormatError(f"line {lineno}: malformed layer parameters ({ex})", path) from ex
        if values.size != fan_out * fan_in + fan_out:
            raise FormatError(f"line {lineno}: expected {fan_out * fan_in + fan_out} values, found {values.size}", path)
        weights.append(values[: fan_out * fan_in].reshape(fan_out, fan_in))
        biases.append(values[fan_out * fan_in :])

    labels = {}
    for lineno, line in enumerate(lines[len(sizes) + 1 :], start=len(sizes) + 2):
        if not line.strip():
            continue
        parts = line.split(maxsplit=2)
        if len(parts) != 3 or parts[0] != "label" or not parts[1].isdigit():
            raise FormatError(f"line {lineno}: expected 'label <index> <name>'", path)
        labels[int(parts[1])] = parts[2]
    if labels and sorted(labels) != list(range(config.output_len)):
        raise FormatError(f"label lines must cover indices 0..{config.output_len - 1}", path)
    return Mlp(config, tuple(weights), tuple(biases), tuple(labels[i] for i in sorted(labels)))


def save_model(path, net: Mlp) -> None:
    with open(path, "w") as fp:
        fp.write(dumps_model(net))


def load_model(path) -> Mlp:
    try:
        with open(path) as fp:
            text = fp.read()
    except (OSError, UnicodeDecodeError) as ex:
        raise FormatError(f"cannot read model file ({getattr(ex, 'strerror', None) or ex})", str(path)) from ex
    return loads_model(text, str(path))

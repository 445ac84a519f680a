"""Dense feed-forward regressor trained with backpropagation and Adam.

Hidden layers use ReLU, the output layer is affine so the network can emit
negative angles and positions.  Weights are stored as ``(out, in)`` matrices
and batches as rows, so a layer computes ``h @ W.T + b``.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Normalizer, fmt
from .errors import ConfigError, DatasetFormatError, TrainingDiverged

__all__ = [
    "MlpConfig",
    "Mlp",
    "PRESETS",
    "TrainConfig",
    "TrainReport",
    "init_mlp",
    "train",
    "evaluate",
    "r_squared",
    "save_weights",
    "load_weights",
    "save_report",
]

PRESETS = {
    "pendulum": (8, 16, 12, 8, 4, 1),
    "cartpole": (18, 64, 64, 64, 64, 64, 64, 2),
    "tanks": (20, 24, 24, 16, 12, 3),
}


@dataclass(frozen=True)
class MlpConfig:
    widths: tuple
    seed: int = 0
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2:
            raise ConfigError(f"a network needs at least input and output widths, got {widths}")
        if any(w < 1 for w in widths):
            raise ConfigError(f"layer widths must be >= 1, got {widths}")
        if (self.hidden_activation, self.output_activation) != ("relu", "identity"):
            raise ConfigError("only ReLU hidden layers with an identity output are supported")

    @classmethod
    def preset(cls, name, seed=0):
        try:
            return cls(PRESETS[name], seed)
        except KeyError:
            raise ConfigError(f"unknown network preset {name!r}; expected one of {sorted(PRESETS)}") from None


class Mlp:
    """Weights, biases and the metadata needed to use them as a predictor.

    ``normalizer`` and ``lookback`` describe the data the network was trained
    on; the controller uses them to build input rows in the same layout.
    """

    def __init__(self, config, weights, biases, normalizer=None, lookback=None):
        self.config = config
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.normalizer = normalizer
        self.lookback = lookback
        self._check_shapes()

    def _check_shapes(self):
        widths = self.config.widths
        if len(self.weights) != len(widths) - 1 or len(self.biases) != len(widths) - 1:
            raise ValueError(f"expected {len(widths) - 1} layers, got {len(self.weights)}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[i + 1], widths[i]) or b.shape != (widths[i + 1],):
                raise ValueError(
                    f"layer {i}: expected weight {(widths[i + 1], widths[i])} and bias ({widths[i + 1]},), "
                    f"got {w.shape} and {b.shape}"
                )

    @property
    def n_features(self):
        return self.config.widths[0]

    @property
    def n_outputs(self):
        return self.config.widths[-1]

    def copy(self):
        return Mlp(self.config, [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   self.normalizer, self.lookback)

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None] if single else x
        if h.shape[-1] != self.n_features:
            raise ValueError(f"network expects {self.n_features} features, got {h.shape[-1]}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h[0] if single else h

    predict = forward

    @np.errstate(over="ignore", invalid="ignore")
    def loss(self, x, y):
        err = self.forward(x) - np.asarray(y, dtype=float)
        return float(np.mean(err**2))

    @np.errstate(over="ignore", invalid="ignore")
    def gradient(self, x, y):
        """Gradient of the mean squared error over rows and output channels.

        Returns ``(loss, weight_grads, bias_grads)``.  The ReLU derivative at
        zero is taken as zero.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim != 2 or len(x) == 0:
            raise ValueError("gradient needs a non-empty 2-D batch")
        if x.shape[1] != self.n_features or y.shape != (len(x), self.n_outputs):
            raise ValueError(
                f"batch shapes {x.shape} / {y.shape} do not match network {self.n_features} -> {self.n_outputs}"
            )
        activations = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i < last:
                h = np.maximum(h, 0.0)
            activations.append(h)
        err = activations[-1] - y
        loss = float(np.mean(err**2))
        delta = (2.0 / err.size) * err
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for i in range(last, -1, -1):
            gw[i] = delta.T @ activations[i]
            gb[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i]) * (activations[i] > 0.0)
        return loss, gw, gb


def init_mlp(config, normalizer=None, lookback=None):
    """He-uniform weights (std ``sqrt(2 / fan_in)``) and zero biases."""
    rng = np.random.default_rng(config.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(config.widths[:-1], config.widths[1:]):
        limit = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(config, weights, biases, normalizer, lookback)


# --------------------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("Adam moments must lie in [0, 1) and eps must be > 0")


@dataclass
class TrainReport:
    train_mse: list = field(default_factory=list)
    test_mse: list = field(default_factory=list)
    initial_train_mse: float = math.nan
    wall_time: float = 0.0


def _check_dataset(net, ds, what):
    if ds.n_features != net.n_features or ds.n_outputs != net.n_outputs:
        raise ConfigError(
            f"{what} set has D={ds.n_features}, K={ds.n_outputs} but the network maps "
            f"{net.n_features} -> {net.n_outputs}"
        )


@np.errstate(over="ignore", invalid="ignore")
def train(net, train_set, test_set, cfg):
    """Mini-batch Adam on the mean squared error.

    Each epoch is one pass over a seeded shuffle of the training rows (the
    last partial batch is kept).  Returns a trained copy of ``net`` and the
    per-epoch losses on the full training and test sets.
    """
    _check_dataset(net, train_set, "training")
    if test_set is not None and len(test_set):
        _check_dataset(net, test_set, "test")
    net = net.copy()
    if net.normalizer is None:
        net.normalizer = train_set.normalizer
    if net.lookback is None:
        net.lookback = train_set.lookback
    rng = np.random.default_rng(cfg.seed)
    # one flat parameter vector with the layer arrays as views into it
    shapes = [p.shape for p in net.weights + net.biases]
    flat = np.concatenate([p.ravel() for p in net.weights + net.biases])
    views, offset = [], 0
    for shape in shapes:
        size = math.prod(shape)
        views.append(flat[offset : offset + size].reshape(shape))
        offset += size
    n_layers = len(net.weights)
    net.weights, net.biases = views[:n_layers], views[n_layers:]
    m = np.zeros_like(flat)
    v = np.zeros_like(flat)
    x_all, y_all = train_set.features, train_set.labels
    n = len(x_all)
    report = TrainReport(initial_train_mse=net.loss(x_all, y_all))
    t0 = time.perf_counter()
    step = 0
    b1, b2 = cfg.beta1, cfg.beta2
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            rows = order[start : start + cfg.batch_size]
            loss, gw, gb = net.gradient(x_all[rows], y_all[rows])
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became non-finite in epoch {epoch + 1}; lower the learning rate "
                    f"(currently {cfg.learning_rate})",
                    report=report,
                )
            g = np.concatenate([a.ravel() for a in gw + gb])
            step += 1
            lr = cfg.learning_rate * math.sqrt(1.0 - b2**step) / (1.0 - b1**step)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            flat -= lr * m / (np.sqrt(v) + cfg.eps)
        report.train_mse.append(net.loss(x_all, y_all))
        report.test_mse.append(evaluate(net, test_set) if test_set is not None and len(test_set) else math.nan)
        if not math.isfinite(report.train_mse[-1]):
            raise TrainingDiverged(f"training loss is non-finite after epoch {epoch + 1}", report=report)
    report.wall_time = time.perf_counter() - t0
    return net, report


def evaluate(net, ds):
    """Mean squared error over all rows and output channels."""
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    _check_dataset(net, ds, "evaluation")
    return net.loss(ds.features, ds.labels)


def r_squared(net, ds):
    """Per-channel coefficient of determination of one-step predictions."""
    if len(ds) == 0:
        raise ValueError("cannot score an empty dataset")
    pred = net.forward(ds.features)
    resid = np.sum((ds.labels - pred) ** 2, axis=0)
    total = np.sum((ds.labels - ds.labels.mean(axis=0)) ** 2, axis=0)
    return 1.0 - resid / total


def save_report(report, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_mse", "test_mse"])
        for i, (a, b) in enumerate(zip(report.train_mse, report.test_mse), start=1):
            writer.writerow([i, fmt(a), fmt(b)])


# --------------------------------------------------------------------------- persistence


def save_weights(net, path):
    doc = {
        "config": {
            "widths": list(net.config.widths),
            "seed": net.config.seed,
            "hidden_activation": net.config.hidden_activation,
            "output_activation": net.config.output_activation,
        },
        "lookback": net.lookback,
        "normalizer": None if net.normalizer is None else net.normalizer.to_dict(),
        "layers": [
            {"rows": int(w.shape[0]), "cols": int(w.shape[1]), "w": w.ravel().tolist(), "b": b.tolist()}
            for w, b in zip(net.weights, net.biases)
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_weights(path, n_features=None, n_outputs=None):
    """Read a weight file, optionally checking it fits a ``D -> K`` problem."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: not a weight file: {exc}") from None
    try:
        c = doc["config"]
        config = MlpConfig(tuple(c["widths"]), c.get("seed", 0), c.get("hidden_activation", "relu"),
                           c.get("output_activation", "identity"))
        layers = doc["layers"]
    except (KeyError, TypeError) as exc:
        raise DatasetFormatError(f"{path}: missing field {exc}") from None
    if len(layers) != len(config.widths) - 1:
        raise DatasetFormatError(f"{path}: config lists {len(config.widths) - 1} layers, file has {len(layers)}")
    weights, biases = [], []
    for i, layer in enumerate(layers):
        rows, cols = layer["rows"], layer["cols"]
        if (rows, cols) != (config.widths[i + 1], config.widths[i]):
            raise DatasetFormatError(
                f"{path}: layer {i} is {rows}x{cols}, config expects {config.widths[i + 1]}x{config.widths[i]}"
            )
        if len(layer["w"]) != rows * cols or len(layer["b"]) != rows:
            raise DatasetFormatError(
                f"{path}: layer {i} has {len(layer['w'])} weights and {len(layer['b'])} biases, "
                f"expected {rows * cols} and {rows}"
            )
        weights.append(np.array(layer["w"], dtype=float).reshape(rows, cols))
        biases.append(np.array(layer["b"], dtype=float))
    normalizer = Normalizer.from_dict(doc["normalizer"]) if doc.get("normalizer") else None
    net = Mlp(config, weights, biases, normalizer, doc.get("lookback"))
    if n_features is not None and net.n_features != n_features:
        raise ConfigError(f"{path}: network takes {net.n_features} features but this run needs {n_features}")
    if n_outputs is not None and net.n_outputs != n_outputs:
        raise ConfigError(f"{path}: network predicts {net.n_outputs} outputs but this run needs {n_outputs}")
    return net

"""Excitation episodes and the lookback-window dataset pipeline.

An episode is a recorded session of ``N`` applied inputs ``i_1..i_N`` and the
outputs ``o_1..o_N`` observed after each of them.  The pipeline

1. merges and shifts, pairing every input with the *previous* output
   (``(i_t, o_{t-1})`` for ``t = 2..N``),
2. groups ``L + 1`` consecutive merged rows into one flat feature row, oldest
   first, each row laid out as input channels then output channels,
3. labels each window with the output observed right after its newest input,
4. concatenates the windows of all episodes in order.

The window layout lives in :func:`window_features` and is reused verbatim by
the controller when it rebuilds a network input row from live history.
"""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DatasetFormatError

log = logging.getLogger(__name__)

__all__ = [
    "Episode",
    "Dataset",
    "Normalizer",
    "generate_episodes",
    "merge_and_shift",
    "window_features",
    "window_and_label",
    "assemble_dataset",
    "split",
    "save_dataset",
    "load_dataset",
    "save_episodes",
    "feature_width",
    "fmt",
]


def fmt(value):
    """Decimal text with 17 significant digits (lossless for float64)."""
    return format(float(value), ".17g")


def feature_width(lookback, n_inputs, n_outputs):
    return (lookback + 1) * (n_inputs + n_outputs)


@dataclass
class Episode:
    inputs: np.ndarray  # (N, d_u)
    outputs: np.ndarray  # (N, d_y)

    def __post_init__(self):
        # a flat sequence is one channel over time
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(len(self.inputs), -1)
        self.outputs = np.asarray(self.outputs, dtype=float).reshape(len(self.outputs), -1)
        if len(self.inputs) != len(self.outputs):
            raise ValueError(f"episode has {len(self.inputs)} inputs but {len(self.outputs)} outputs")

    def __len__(self):
        return len(self.inputs)

    @property
    def n_inputs(self):
        return self.inputs.shape[1]

    @property
    def n_outputs(self):
        return self.outputs.shape[1]


class Normalizer:
    """Min-max scaling of input and output channels to ``[0, 1]``.

    The ranges are declared, not fitted: they come from the configured
    input/output ranges of the plant.
    """

    def __init__(self, input_ranges, output_ranges):
        inp = np.asarray(input_ranges, dtype=float).reshape(-1, 2)
        out = np.asarray(output_ranges, dtype=float).reshape(-1, 2)
        for lo, hi in np.vstack([inp, out]):
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise ConfigError(f"normalizer range needs finite lo < hi, got ({lo}, {hi})")
        self.input_lo, self.input_hi = inp[:, 0].copy(), inp[:, 1].copy()
        self.output_lo, self.output_hi = out[:, 0].copy(), out[:, 1].copy()

    def __eq__(self, other):
        if not isinstance(other, Normalizer):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"Normalizer({self.to_dict()})"

    @property
    def n_inputs(self):
        return len(self.input_lo)

    @property
    def n_outputs(self):
        return len(self.output_lo)

    @property
    def row_lo(self):
        return np.concatenate([self.input_lo, self.output_lo])

    @property
    def row_hi(self):
        return np.concatenate([self.input_hi, self.output_hi])

    def scale_inputs(self, u):
        return (np.asarray(u, dtype=float) - self.input_lo) / (self.input_hi - self.input_lo)

    def scale_outputs(self, y):
        return (np.asarray(y, dtype=float) - self.output_lo) / (self.output_hi - self.output_lo)

    def unscale_outputs(self, y):
        return np.asarray(y, dtype=float) * (self.output_hi - self.output_lo) + self.output_lo

    def scale_features(self, features):
        features = np.asarray(features, dtype=float)
        reps = features.shape[-1] // (self.n_inputs + self.n_outputs)
        lo, hi = np.tile(self.row_lo, reps), np.tile(self.row_hi, reps)
        return (features - lo) / (hi - lo)

    def unscale_features(self, features):
        features = np.asarray(features, dtype=float)
        reps = features.shape[-1] // (self.n_inputs + self.n_outputs)
        lo, hi = np.tile(self.row_lo, reps), np.tile(self.row_hi, reps)
        return features * (hi - lo) + lo

    def to_dict(self):
        return {
            "inputs": [[float(a), float(b)] for a, b in zip(self.input_lo, self.input_hi)],
            "outputs": [[float(a), float(b)] for a, b in zip(self.output_lo, self.output_hi)],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["inputs"], d["outputs"])


@dataclass
class Dataset:
    features: np.ndarray  # (rows, D)
    labels: np.ndarray  # (rows, K)
    lookback: int
    normalizer: Normalizer | None = None
    n_inputs: int = field(default=0)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float).reshape(len(self.features), -1)
        self.labels = np.asarray(self.labels, dtype=float).reshape(len(self.labels), -1)
        if len(self.features) != len(self.labels):
            raise ValueError(f"{len(self.features)} feature rows but {len(self.labels)} label rows")
        per_row, rem = divmod(self.features.shape[1], self.lookback + 1)
        if rem or per_row <= self.n_outputs:
            raise ValueError(
                f"feature width {self.features.shape[1]} does not fit lookback {self.lookback} "
                f"with {self.n_outputs} outputs"
            )
        derived = per_row - self.n_outputs
        if self.n_inputs and self.n_inputs != derived:
            raise ValueError(f"n_inputs={self.n_inputs} but the feature width implies {derived}")
        self.n_inputs = derived

    def __len__(self):
        return len(self.features)

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def n_outputs(self):
        return self.labels.shape[1]

    def subset(self, rows):
        return Dataset(self.features[rows], self.labels[rows], self.lookback, self.normalizer, self.n_inputs)


# --------------------------------------------------------------------------- generation


def _draw_inputs(rng, steps, lo, hi, hold):
    n_moves = -(-steps // hold)
    moves = rng.uniform(lo, hi, size=(n_moves, len(lo)))
    return np.repeat(moves, hold, axis=0)[:steps]


def generate_episodes(
    plant,
    n_samples,
    steps,
    input_ranges,
    seed,
    lookback=None,
    hold=1,
    initial_ranges=None,
    max_retries=100,
):
    """Drive ``plant`` with random inputs and record ``n_samples`` episodes.

    Each episode starts from the plant's rest state (or, when
    ``initial_ranges`` is given, from a state drawn uniformly per component)
    and applies ``steps`` inputs drawn uniformly inside ``input_ranges``,
    held for ``hold`` steps each.  Episode ``k`` uses its own generator
    spawned from ``seed``, so the result does not depend on generation order.
    Episodes whose state turns non-finite are redrawn and counted.

    Returns the list of episodes and the number of rejected draws.
    """
    ranges = np.asarray(input_ranges, dtype=float).reshape(-1, 2)
    if ranges.shape[0] != plant.n_inputs:
        raise ConfigError(f"{plant.kind} has {plant.n_inputs} inputs but {ranges.shape[0]} input ranges were given")
    lo, hi = ranges[:, 0], ranges[:, 1]
    if not (np.all(np.isfinite(ranges)) and np.all(hi > lo)):
        raise ConfigError(f"input ranges need finite lo < hi, got {ranges.tolist()}")
    min_steps = 2 if lookback is None else lookback + 2
    if steps < min_steps:
        raise ConfigError(f"episodes need at least {min_steps} steps (lookback + 2), got {steps}")
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    if hold < 1:
        raise ConfigError(f"hold must be >= 1, got {hold}")
    if initial_ranges is not None:
        initial_ranges = np.asarray(initial_ranges, dtype=float).reshape(-1, 2)
        if initial_ranges.shape[0] != plant.n_states:
            raise ConfigError(f"{plant.kind} initial ranges need {plant.n_states} rows")

    episodes = []
    rejected = 0
    for child in np.random.SeedSequence(seed).spawn(n_samples):
        rng = np.random.default_rng(child)
        for _ in range(max_retries):
            start = None
            if initial_ranges is not None:
                start = rng.uniform(initial_ranges[:, 0], initial_ranges[:, 1])
            plant.reset(start)
            inputs = _draw_inputs(rng, steps, lo, hi, hold)
            states = np.empty((steps, plant.n_states))
            state = plant.state
            for t in range(steps):
                state = plant.advance(state, inputs[t])
                states[t] = state
            if np.all(np.isfinite(states)):
                plant.state = state
                episodes.append(Episode(inputs, plant.outputs_of(states)))
                break
            rejected += 1
        else:
            raise RuntimeError(f"gave up after {max_retries} non-finite episodes; check plant parameters")
    plant.reset()
    if rejected:
        log.warning("rejected %d non-finite episodes during generation", rejected)
    return episodes, rejected


# --------------------------------------------------------------------------- transforms


def merge_and_shift(episode):
    """Pair each input with the previous output: rows ``(i_t, o_{t-1})``, ``t = 2..N``."""
    if len(episode) < 2:
        raise ValueError(f"merge needs an episode of length >= 2, got {len(episode)}")
    return np.hstack([episode.inputs[1:], episode.outputs[:-1]])


def window_features(merged, lookback):
    """Flatten every run of ``lookback + 1`` merged rows into one feature row.

    Rows are taken oldest first; ``(T, width)`` becomes
    ``(T - lookback, (lookback + 1) * width)``.  Leading batch axes are
    carried through unchanged.
    """
    merged = np.asarray(merged, dtype=float)
    *batch, n_rows, width = merged.shape
    if n_rows <= lookback:
        return np.empty((*batch, 0, (lookback + 1) * width))
    windows = sliding_window_view(merged, lookback + 1, axis=-2)  # (..., T - L, width, L + 1)
    windows = np.swapaxes(windows, -1, -2)
    return windows.reshape(*batch, n_rows - lookback, (lookback + 1) * width)


def window_and_label(merged, episode, lookback):
    """Feature rows and the labels that follow them, for one episode."""
    merged = np.asarray(merged, dtype=float)
    if len(merged) <= lookback:
        log.warning("episode of length %d yields no rows with lookback %d", len(episode), lookback)
        return np.empty((0, (lookback + 1) * merged.shape[1])), np.empty((0, episode.n_outputs))
    features = window_features(merged, lookback)
    # merged row m holds (i_{m+2}, o_{m+1}); the window ending at m is labelled o_{m+2}
    labels = episode.outputs[lookback + 1 :]
    return features, labels


def assemble_dataset(episodes, lookback, normalizer=None):
    """Run the pipeline over all episodes and concatenate the rows in order."""
    if not episodes:
        raise ValueError("no episodes to assemble")
    first = episodes[0]
    shape = (len(first), first.n_inputs, first.n_outputs)
    feats, labels = [], []
    for k, ep in enumerate(episodes):
        if (len(ep), ep.n_inputs, ep.n_outputs) != shape:
            raise ValueError(
                f"episode {k} has layout {(len(ep), ep.n_inputs, ep.n_outputs)}, expected {shape}"
            )
        f, y = window_and_label(merge_and_shift(ep), ep, lookback)
        feats.append(f)
        labels.append(y)
    features = np.vstack(feats)
    targets = np.vstack(labels)
    if normalizer is not None:
        if (normalizer.n_inputs, normalizer.n_outputs) != shape[1:]:
            raise ValueError("normalizer channels do not match the episodes")
        features = normalizer.scale_features(features)
        targets = normalizer.scale_outputs(targets)
    return Dataset(features, targets, lookback, normalizer, shape[1])


def split(dataset, test_fraction, seed):
    """Seeded row-wise shuffle, then ``ceil((1 - f) * rows)`` training rows."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test fraction must lie in (0, 1), got {test_fraction}")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_train = math.ceil((1.0 - test_fraction) * n - 1e-9)
    return dataset.subset(order[:n_train]), dataset.subset(order[n_train:])


# --------------------------------------------------------------------------- file formats


def save_dataset(dataset, path):
    norm = "none" if dataset.normalizer is None else "minmax"
    ranges = "null" if dataset.normalizer is None else json.dumps(dataset.normalizer.to_dict(), separators=(",", ":"))
    buf = io.StringIO()
    buf.write(f"# D={dataset.n_features} K={dataset.n_outputs} L={dataset.lookback} norm={norm} ranges={ranges}\n")
    for f, y in zip(dataset.features, dataset.labels):
        buf.write(",".join(fmt(v) for v in np.concatenate([f, y])))
        buf.write("\n")
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def _parse_header(line, path):
    if not line.startswith("# "):
        raise DatasetFormatError(f"{path}:1: missing '# D=.. K=.. L=.. norm=.. ranges=..' header")
    body = line[2:].strip()
    head, sep, ranges = body.partition(" ranges=")
    if not sep:
        raise DatasetFormatError(f"{path}:1: header lacks ranges=")
    meta = {}
    for token in head.split():
        key, eq, value = token.partition("=")
        if not eq:
            raise DatasetFormatError(f"{path}:1: bad header token {token!r}")
        meta[key] = value
    try:
        d, k, lookback = int(meta["D"]), int(meta["K"]), int(meta["L"])
        norm = meta["norm"]
        ranges = json.loads(ranges)
    except (KeyError, ValueError) as exc:
        raise DatasetFormatError(f"{path}:1: bad header: {exc}") from None
    if norm not in ("none", "minmax"):
        raise DatasetFormatError(f"{path}:1: unknown norm {norm!r}")
    normalizer = None
    if norm == "minmax":
        try:
            normalizer = Normalizer.from_dict(ranges)
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"{path}:1: bad ranges: {exc}") from None
    return d, k, lookback, normalizer


def load_dataset(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty dataset file")
    d, k, lookback, normalizer = _parse_header(lines[0], path)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != d + k:
            raise DatasetFormatError(f"{path}:{lineno}: expected {d + k} fields (D={d}, K={k}), got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DatasetFormatError(f"{path}: dataset has a header but no rows")
    data = np.array(rows)
    try:
        return Dataset(data[:, :d], data[:, d:], lookback, normalizer)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None


def save_episodes(episodes, path):
    d_u, d_y = episodes[0].n_inputs, episodes[0].n_outputs
    header = ["episode", "step"] + [f"u{j}" for j in range(d_u)] + [f"y{j}" for j in range(d_y)]
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for k, ep in enumerate(episodes):
        for t in range(len(ep)):
            vals = [fmt(v) for v in ep.inputs[t]] + [fmt(v) for v in ep.outputs[t]]
            buf.write(f"{k},{t}," + ",".join(vals) + "\n")
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def load_episodes(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["episode", "step"]:
            raise DatasetFormatError(f"{path}:1: expected 'episode,step,...' header")
        d_u = sum(1 for h in header if h.startswith("u"))
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    episodes = []
    for k in np.unique(rows[:, 0]).astype(int):
        block = rows[rows[:, 0] == k]
        episodes.append(Episode(block[:, 2 : 2 + d_u], block[:, 2 + d_u :]))
    return episodes

"""Receding-horizon control with a genetic optimizer in the loop.

Timing convention: at control step ``t`` the controller picks ``u_t``; the
plant then returns ``y_t``, its output after that input.  The history holds
``(u_k, y_k)`` for ``k < t``.  Prediction models map candidate sequences
``(P, H, d_u)`` to predicted outputs ``(P, H, d_y)`` for ``y_t .. y_{t+H-1}``.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from .data import fmt, window_features
from .errors import ConfigError, OptimizerError, SimulationError, WarmupRequired
from .ga import GaConfig, ga_run

log = logging.getLogger(__name__)

__all__ = [
    "ReferenceTrajectory",
    "ControllerConfig",
    "History",
    "SessionLog",
    "PerfectModel",
    "NetworkModel",
    "perfect_rollout",
    "build_corrected_features",
    "dnn_rollout",
    "tracking_cost",
    "control_step",
    "run_session",
    "save_session",
    "load_session",
    "prediction_session",
]


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Piecewise-constant setpoints: ``setpoints[i]`` is active from ``starts[i]``."""

    starts: tuple
    setpoints: tuple
    length: int

    def __post_init__(self):
        starts = tuple(int(s) for s in self.starts)
        setpoints = tuple(tuple(float(v) for v in np.atleast_1d(sp)) for sp in self.setpoints)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "setpoints", setpoints)
        if self.length < 0:
            raise ConfigError(f"reference length must be >= 0, got {self.length}")
        if len(starts) != len(setpoints) or not starts:
            raise ConfigError("reference needs one start step per setpoint and at least one setpoint")
        if starts[0] != 0 or any(b <= a for a, b in zip(starts, starts[1:])):
            raise ConfigError(f"reference start steps must begin at 0 and strictly increase, got {starts}")
        if len({len(sp) for sp in setpoints}) != 1:
            raise ConfigError("all setpoints need the same number of channels")
        if not all(math.isfinite(v) for sp in setpoints for v in sp):
            raise ConfigError("setpoints must be finite")

    @property
    def n_outputs(self):
        return len(self.setpoints[0])

    def at(self, step):
        i = int(np.searchsorted(self.starts, step, side="right")) - 1
        return np.array(self.setpoints[i])

    def series(self):
        return np.array([self.at(t) for t in range(self.length)]).reshape(self.length, self.n_outputs)


@dataclass(frozen=True)
class ControllerConfig:
    horizon: int
    weights: tuple
    lower: tuple
    upper: tuple
    ga: GaConfig
    move_penalty: float = 0.0
    warmup: tuple | None = None
    lookback: int = 0
    block: int = 1
    warm_start: bool = False
    timing: bool = False

    def __post_init__(self):
        for name in ("weights", "lower", "upper"):
            object.__setattr__(self, name, tuple(float(v) for v in np.atleast_1d(getattr(self, name))))
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if any(w < 0 or not math.isfinite(w) for w in self.weights) or not any(w > 0 for w in self.weights):
            raise ConfigError(f"output weights must be >= 0 with at least one positive, got {self.weights}")
        if self.move_penalty < 0:
            raise ConfigError(f"move penalty must be >= 0, got {self.move_penalty}")
        if self.lookback < 0:
            raise ConfigError(f"lookback must be >= 0, got {self.lookback}")
        if not 1 <= self.block <= self.horizon:
            raise ConfigError(f"block length must lie in [1, horizon], got {self.block}")
        if (self.ga.lower, self.ga.upper) != (self.lower, self.upper):
            raise ConfigError("GA bounds must equal the actuator bounds")
        if self.warmup is None:
            object.__setattr__(self, "warmup", tuple((lo + hi) / 2 for lo, hi in zip(self.lower, self.upper)))
        warmup = tuple(float(v) for v in np.atleast_1d(self.warmup))
        object.__setattr__(self, "warmup", warmup)
        if len(warmup) != len(self.lower) or any(not lo <= w <= hi for w, lo, hi in zip(warmup, self.lower, self.upper)):
            raise ConfigError(f"warmup input {warmup} must lie inside the actuator bounds")

    @property
    def warmup_steps(self):
        return self.lookback + 1

    @property
    def n_moves(self):
        """Genes per chromosome: each one is held for ``block`` steps."""
        return -(-self.horizon // self.block)

    def expand(self, population):
        """Blocked moves ``(P, n_moves, d_u)`` to per-step inputs ``(P, H, d_u)``."""
        return np.repeat(population, self.block, axis=1)[:, : self.horizon]


class History:
    """Append-only record of applied inputs and the outputs that followed them."""

    def __init__(self, n_inputs, n_outputs):
        self._u = np.empty((0, n_inputs))
        self._y = np.empty((0, n_outputs))
        self._n = 0

    def __len__(self):
        return self._n

    def append(self, u, y):
        if self._n == len(self._u):
            grow = max(16, self._n)
            self._u = np.vstack([self._u, np.empty((grow, self._u.shape[1]))])
            self._y = np.vstack([self._y, np.empty((grow, self._y.shape[1]))])
        self._u[self._n] = u
        self._y[self._n] = y
        self._n += 1

    @property
    def inputs(self):
        return self._u[: self._n]

    @property
    def outputs(self):
        return self._y[: self._n]

    @classmethod
    def from_arrays(cls, inputs, outputs):
        inputs = np.asarray(inputs, dtype=float)
        outputs = np.asarray(outputs, dtype=float)
        if len(inputs) != len(outputs):
            raise ValueError("history inputs and outputs differ in length")
        h = cls(inputs.shape[1], outputs.shape[1])
        for u, y in zip(inputs, outputs):
            h.append(u, y)
        return h


# --------------------------------------------------------------------------- prediction models


def perfect_rollout(plant, inputs):
    """Step ``plant`` through ``inputs`` and restore it; returns the observed outputs."""
    blob = plant.snapshot()
    try:
        return np.array([plant.step(u) for u in np.asarray(inputs, dtype=float)])
    finally:
        plant.restore(blob)


class PerfectModel:
    """Predicts by running the live plant's own dynamics from its current state."""

    def __init__(self, plant):
        self.plant = plant

    @np.errstate(over="ignore", invalid="ignore")
    def rollout(self, history, candidates):
        candidates = np.asarray(candidates, dtype=float)
        state = np.broadcast_to(self.plant.state, candidates.shape[:1] + self.plant.state.shape)
        out = np.empty(candidates.shape[:2] + (self.plant.n_outputs,))
        for h in range(candidates.shape[1]):
            state = self.plant.advance(state, candidates[:, h])
            out[:, h] = self.plant.outputs_of(state)
        return out


def _merged_window(history, lookback, next_input):
    """Raw ``(L + 1, d_u + d_y)`` window ending with ``(next_input, y_{t-1})``."""
    n = len(history)
    if n < lookback + 1:
        raise WarmupRequired(f"need {lookback + 1} recorded steps, have {n}")
    inputs = np.vstack([history.inputs[n - lookback :], np.reshape(next_input, (1, -1))])
    return np.hstack([inputs, history.outputs[n - lookback - 1 :]])


def build_corrected_features(history, lookback, next_input, normalizer=None):
    """The network input row for choosing ``next_input``, built only from true plant data."""
    row = window_features(_merged_window(history, lookback, next_input), lookback)[0]
    return row if normalizer is None else normalizer.scale_features(row)


@np.errstate(over="ignore", invalid="ignore")
def dnn_rollout(net, history, candidates, lookback, normalizer=None):
    """Recursive H-step prediction with the network fed its own outputs inside the horizon."""
    candidates = np.asarray(candidates, dtype=float)
    n_cand, horizon, d_u = candidates.shape
    base = build_corrected_features(history, lookback, candidates[0, 0], normalizer)
    window = np.repeat(base.reshape(1, lookback + 1, -1), n_cand, axis=0)
    scaled = candidates if normalizer is None else normalizer.scale_inputs(candidates)
    out = np.empty((n_cand, horizon, window.shape[2] - d_u))
    for h in range(horizon):
        window[:, -1, :d_u] = scaled[:, h]
        pred = net.forward(window_features(window, lookback)[:, 0])
        out[:, h] = pred
        window[:, :-1] = window[:, 1:]
        window[:, -1, d_u:] = pred
    return out if normalizer is None else normalizer.unscale_outputs(out)


class NetworkModel:
    """Prediction model around a trained network, corrected from history every call."""

    def __init__(self, net, lookback=None, normalizer=None):
        self.net = net
        self.lookback = getattr(net, "lookback", None) if lookback is None else lookback
        self.normalizer = getattr(net, "normalizer", None) if normalizer is None else normalizer
        if self.lookback is None:
            raise ConfigError("network model needs a lookback")

    def rollout(self, history, candidates):
        return dnn_rollout(self.net, history, candidates, self.lookback, self.normalizer)


# --------------------------------------------------------------------------- optimisation


@np.errstate(over="ignore", invalid="ignore")
def tracking_cost(predicted, reference, inputs, weights, move_penalty=0.0, last_input=None):
    """Weighted squared tracking error plus an optional input-move penalty.

    ``predicted`` is ``(P, H, K)`` or ``(H, K)``; returns one cost per candidate.
    """
    predicted = np.asarray(predicted, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    single = predicted.ndim == 2
    if single:
        predicted, inputs = predicted[None], inputs[None]
    err = predicted - np.asarray(reference, dtype=float)
    cost = np.sum(err * err * np.asarray(weights, dtype=float), axis=(1, 2))
    if move_penalty:
        prev = inputs[:, :1] if last_input is None else np.broadcast_to(last_input, inputs[:, :1].shape)
        moves = np.diff(np.concatenate([prev, inputs], axis=1), axis=1)
        cost = cost + move_penalty * np.sum(moves * moves, axis=(1, 2))
    return cost[0] if single else cost


@dataclass
class StepResult:
    input: np.ndarray
    predicted: np.ndarray
    cost: float
    warmup: bool = False
    plan: np.ndarray | None = None


def step_seed(seed, step):
    return int(np.random.SeedSequence([seed, step]).generate_state(1)[0])


def _seeded_population(previous, ga, n_moves, seed):
    """Random population with the previous plan and its one-move shift in front."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    pop = rng.uniform(ga.lo, ga.hi, size=(ga.population, n_moves, len(ga.lo)))
    pop[0] = previous
    if ga.population > 1:
        pop[1] = np.concatenate([previous[1:], previous[-1:]])
    return pop


def control_step(pm, history, reference, step, cfg, previous=None):
    """Choose the input for ``step``: warmup input, or the first move of the GA's best plan.

    With ``cfg.warm_start`` the previous step's plan seeds the population.
    """
    n_out = len(cfg.weights)
    if len(history) < cfg.warmup_steps:
        return StepResult(np.array(cfg.warmup), np.full(n_out, np.nan), math.nan, warmup=True)
    target = np.broadcast_to(reference.at(step), (cfg.horizon, n_out))
    last = history.inputs[-1] if len(history) else np.array(cfg.warmup)

    def fitness(population):
        inputs = cfg.expand(population)
        return tracking_cost(pm.rollout(history, inputs), target, inputs, cfg.weights, cfg.move_penalty, last)

    ga = dataclasses.replace(cfg.ga, seed=step_seed(cfg.ga.seed, step))
    initial = None
    if cfg.warm_start and previous is not None:
        initial = _seeded_population(previous, ga, cfg.n_moves, ga.seed)
    res = ga_run(fitness, ga, cfg.n_moves, initial=initial)
    u = np.clip(res.best[0], cfg.lower, cfg.upper)
    predicted = pm.rollout(history, cfg.expand(res.best[None]))[0, 0]
    return StepResult(u, predicted, res.cost, plan=res.best)


# --------------------------------------------------------------------------- sessions


@dataclass
class SessionLog:
    reference: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    predicted: np.ndarray
    cost: np.ndarray
    ms: np.ndarray
    valid: bool = True
    error: str = ""

    def __len__(self):
        return len(self.reference)


def run_session(plant, pm, reference, cfg):
    """Closed-loop run over the whole reference; faults end it with a partial, invalid log."""
    n_in, n_out = plant.n_inputs, plant.n_outputs
    if reference.n_outputs != n_out or len(cfg.weights) != n_out:
        raise ConfigError(f"{plant.kind} has {n_out} outputs; reference/weights do not match")
    history = History(n_in, n_out)
    rows = {k: [] for k in ("r", "u", "y", "yhat", "cost", "ms")}
    valid, error = True, ""
    plan = None
    for step in range(reference.length):
        start = time.perf_counter()
        try:
            res = control_step(pm, history, reference, step, cfg, plan)
            y = plant.step(res.input)
        except (SimulationError, OptimizerError) as exc:
            valid, error = False, f"step {step}: {exc}"
            log.error("session aborted at %s", error)
            break
        elapsed = (time.perf_counter() - start) * 1e3 if cfg.timing else 0.0
        history.append(res.input, y)
        plan = res.plan
        for key, val in zip(rows, (reference.at(step), res.input, y, res.predicted, res.cost, elapsed)):
            rows[key].append(val)

    def stack(key, width):
        return np.array(rows[key], dtype=float).reshape(len(rows[key]), width)

    return SessionLog(
        stack("r", n_out), stack("u", n_in), stack("y", n_out), stack("yhat", n_out),
        np.array(rows["cost"], dtype=float), np.array(rows["ms"], dtype=float), valid, error,
    )


def save_session(log_, path):
    n_out, n_in = log_.outputs.shape[1], log_.inputs.shape[1]
    header = (["step"] + [f"r{j}" for j in range(n_out)] + [f"u{j}" for j in range(n_in)]
              + [f"y{j}" for j in range(n_out)] + [f"yhat{j}" for j in range(n_out)] + ["cost", "ms"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t in range(len(log_)):
            vals = np.concatenate([log_.reference[t], log_.inputs[t], log_.outputs[t], log_.predicted[t],
                                   [log_.cost[t], log_.ms[t]]])
            writer.writerow([t] + [fmt(v) for v in vals])


def load_session(path):
    """Read a session CSV back (the ``valid`` flag is not stored)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader], dtype=float).reshape(-1, len(header))
    n_out = sum(h.startswith("r") for h in header)
    n_in = sum(h.startswith("u") for h in header)
    cols = np.cumsum([1, n_out, n_in, n_out, n_out])
    return SessionLog(
        data[:, cols[0] : cols[1]], data[:, cols[1] : cols[2]], data[:, cols[2] : cols[3]],
        data[:, cols[3] : cols[4]], data[:, -2], data[:, -1],
    )


def prediction_session(plant, model, inputs):
    """Drive ``plant`` open-loop and predict every output twice.

    ``corrected[t]`` comes from a window rebuilt from the true history before
    step ``t``; ``uncorrected`` is one free run that starts from the first
    full window and then only ever sees its own predictions.  Steps inside
    the first window are NaN in both.  Returns ``(outputs, corrected,
    uncorrected)``.
    """
    inputs = np.asarray(inputs, dtype=float).reshape(len(inputs), plant.n_inputs)
    outputs = np.array([plant.step(u) for u in inputs]).reshape(len(inputs), plant.n_outputs)
    start = model.lookback + 1
    corrected = np.full(outputs.shape, np.nan)
    uncorrected = np.full(outputs.shape, np.nan)
    if len(inputs) > start:
        for t in range(start, len(inputs)):
            head = History.from_arrays(inputs[:t], outputs[:t])
            corrected[t] = model.rollout(head, inputs[None, t : t + 1])[0, 0]
        head = History.from_arrays(inputs[:start], outputs[:start])
        uncorrected[start:] = model.rollout(head, inputs[None, start:])[0]
    return outputs, corrected, uncorrected

"""Experiment configuration: per-plant presets, YAML overrides, up-front validation.

A config file only needs the keys it changes; everything else comes from
the preset of its plant kind.  All cross-field checks run in
:func:`validate`, before any simulation or training starts.
"""

from __future__ import annotations

import copy
import dataclasses
import math
from pathlib import Path

import numpy as np
import yaml

from .data import Normalizer, feature_width
from .errors import ConfigError
from .ga import GaConfig
from .mlp import PRESETS, MlpConfig, TrainConfig
from .mpc import ControllerConfig, ReferenceTrajectory
from .plants import PLANT_KINDS, canonical_kind, make_plant

__all__ = ["PRESET_CONFIGS", "Experiment", "load_config", "preset_config", "validate"]

_GA_DEFAULTS = dict(population=64, generations=100, elite=2, tournament=3, crossover=0.9, mutation=0.15,
                    mutation_scale=0.1)

PRESET_CONFIGS = {
    "pendulum": {
        "plant": {"kind": "pendulum", "params": {}},
        "seed": 0,
        "data": {"samples": 1056, "steps": 34, "input_ranges": [[-10.0, 10.0]], "output_ranges": [[-8.0, 8.0]],
                 "hold": 1, "initial_ranges": None},
        "pipeline": {"lookback": 3, "normalize": False, "test_fraction": 0.2},
        "network": {"preset": "pendulum", "widths": None},
        "training": {"epochs": 64, "batch_size": 32, "learning_rate": 1e-3},
        "ga": dict(_GA_DEFAULTS),
        "controller": {"horizon": 5, "block": 1, "weights": [1.0], "move_penalty": 0.0, "warmup": None,
                       "warm_start": False, "timing": False},
        "reference": {"length": 300, "starts": [0, 100, 200], "setpoints": [[0.5], [-0.5], [1.0]]},
        "demo": {"steps": 200},
        "output": "runs/pendulum",
    },
    "cartpole": {
        "plant": {"kind": "cartpole", "params": {}},
        "seed": 0,
        "data": {"samples": 7012, "steps": 12, "input_ranges": [[-20.0, 20.0]],
                 "output_ranges": [[-8.0, 8.0], [-11.0, 11.0]], "hold": 1,
                 # random starts cover the states the controller visits; rest starts only reach |x| < 0.2
                 "initial_ranges": [[-2.0, 2.0], [-4.0, 4.0], [-0.8, 0.8], [-3.0, 3.0]]},
        "pipeline": {"lookback": 5, "normalize": False, "test_fraction": 0.2},
        "network": {"preset": "cartpole", "widths": None},
        "training": {"epochs": 150, "batch_size": 32, "learning_rate": 1e-3},
        "ga": dict(_GA_DEFAULTS, population=128),
        "controller": {"horizon": 50, "block": 5, "weights": [1.0, 1.0], "move_penalty": 5e-4, "warmup": None,
                       "warm_start": True, "timing": False},
        "reference": {"length": 300, "starts": [0, 100, 200], "setpoints": [[1.0, 0.0], [-1.0, 0.0], [0.5, 0.0]]},
        "demo": {"steps": 200},
        "output": "runs/cartpole",
    },
    "tanks": {
        "plant": {"kind": "tanks", "params": {}},
        "seed": 0,
        "data": {"samples": 806, "steps": 24, "input_ranges": [[0.0, 1e-4], [0.0, 1e-4]],
                 "output_ranges": [[0.0, 1.0]] * 3, "hold": 1, "initial_ranges": None},
        "pipeline": {"lookback": 3, "normalize": True, "test_fraction": 0.2},
        "network": {"preset": "tanks", "widths": None},
        "training": {"epochs": 80, "batch_size": 32, "learning_rate": 1e-3},
        "ga": dict(_GA_DEFAULTS),
        "controller": {"horizon": 10, "block": 1, "weights": [0.0, 1.0, 0.0], "move_penalty": 0.0,
                       "warmup": None, "warm_start": False, "timing": False},
        "reference": {"length": 400, "starts": [0, 100, 200, 300],
                      "setpoints": [[0.0, 0.2, 0.0], [0.0, 0.5, 0.0], [0.0, 0.3, 0.0], [0.0, 0.6, 0.0]]},
        "demo": {"steps": 200},
        "output": "runs/tanks",
    },
}


def preset_config(kind):
    return copy.deepcopy(PRESET_CONFIGS[canonical_kind(kind)])


def _merge(base, override, path, problems):
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            problems.append(f"unknown key {where!r}")
        elif isinstance(base[key], dict) and key != "params":
            if not isinstance(value, dict):
                problems.append(f"{where} must be a mapping")
            else:
                _merge(base[key], value, where, problems)
        else:
            base[key] = value


def _ranges(value, n, where, problems):
    try:
        arr = np.asarray(value, dtype=float).reshape(-1, 2)
    except (TypeError, ValueError):
        problems.append(f"{where} must be a list of [lo, hi] pairs")
        return None
    if arr.shape[0] != n:
        problems.append(f"{where} needs {n} [lo, hi] pairs, got {arr.shape[0]}")
        return None
    for lo, hi in arr:
        if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
            problems.append(f"{where} needs finite lo < hi, got ({lo}, {hi})")
            return None
    return arr


def _try(problems, where, fn):
    try:
        return fn()
    except (ConfigError, TypeError, ValueError) as exc:
        problems.append(f"{where}: {exc}")
        return None


@dataclasses.dataclass
class Experiment:
    """A validated configuration plus the objects every command needs."""

    raw: dict
    plant_kind: str
    normalizer: Normalizer | None
    mlp: MlpConfig
    training: TrainConfig
    ga: GaConfig
    controller: ControllerConfig
    reference: ReferenceTrajectory

    @property
    def seed(self):
        return self.raw["seed"]

    @property
    def lookback(self):
        return self.raw["pipeline"]["lookback"]

    @property
    def tracked(self):
        return [j for j, w in enumerate(self.controller.weights) if w > 0]

    def make_plant(self):
        return make_plant(self.plant_kind, dict(self.raw["plant"]["params"]))

    def dump(self):
        return yaml.safe_dump(self.raw, sort_keys=True, default_flow_style=None)


def validate(raw):
    """Check every field and cross-field law; raises one ConfigError listing all problems."""
    problems = []
    kind = _try(problems, "plant.kind", lambda: canonical_kind(raw["plant"]["kind"]))
    if kind is None:
        raise ConfigError("; ".join(problems))
    cls = PLANT_KINDS[kind]
    d_u, d_y = cls.n_inputs, cls.n_outputs
    params = raw["plant"].get("params") or {}
    if not isinstance(params, dict):
        problems.append("plant.params must be a mapping")
        params = {}
    _try(problems, "plant.params", lambda: make_plant(kind, dict(params)))
    seed = raw.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        problems.append(f"seed must be a non-negative integer, got {seed!r}")
        seed = 0

    data, pipe = raw["data"], raw["pipeline"]
    in_ranges = _ranges(data["input_ranges"], d_u, "data.input_ranges", problems)
    out_ranges = _ranges(data["output_ranges"], d_y, "data.output_ranges", problems)
    if data["initial_ranges"] is not None:
        init = _ranges(data["initial_ranges"], cls.n_states, "data.initial_ranges", problems)
        del init
    lookback = pipe["lookback"]
    if not isinstance(lookback, int) or lookback < 0:
        problems.append(f"pipeline.lookback must be a non-negative integer, got {lookback!r}")
        lookback = 0
    for key in ("samples", "steps", "hold"):
        if not isinstance(data[key], int) or data[key] < 1:
            problems.append(f"data.{key} must be a positive integer, got {data[key]!r}")
    if isinstance(data["steps"], int) and data["steps"] < lookback + 2:
        problems.append(f"data.steps must be >= lookback + 2 = {lookback + 2}, got {data['steps']}")
    if not 0.0 < float(pipe["test_fraction"]) < 1.0:
        problems.append(f"pipeline.test_fraction must lie in (0, 1), got {pipe['test_fraction']}")
    normalizer = None
    if pipe["normalize"] and in_ranges is not None and out_ranges is not None:
        normalizer = Normalizer(in_ranges, out_ranges)

    net = raw["network"]
    widths = net["widths"]
    if widths is None:
        if net["preset"] not in PRESETS:
            problems.append(f"network.preset must be one of {sorted(PRESETS)}, got {net['preset']!r}")
            widths = None
        else:
            widths = PRESETS[net["preset"]]
    mlp = _try(problems, "network", lambda: MlpConfig(tuple(widths), seed=seed)) if widths else None
    width = feature_width(lookback, d_u, d_y)
    if mlp is not None and (mlp.widths[0], mlp.widths[-1]) != (width, d_y):
        problems.append(
            f"network takes {mlp.widths[0]} features and gives {mlp.widths[-1]} outputs, but a {kind} run with "
            f"lookback {lookback} needs D={width}, K={d_y}"
        )
    tr = raw["training"]
    training = _try(problems, "training", lambda: TrainConfig(
        epochs=tr["epochs"], batch_size=tr["batch_size"], learning_rate=tr["learning_rate"], seed=seed))

    lo = [] if in_ranges is None else in_ranges[:, 0].tolist()
    hi = [] if in_ranges is None else in_ranges[:, 1].tolist()
    ga = _try(problems, "ga", lambda: GaConfig(lo, hi, seed=seed, **raw["ga"])) if in_ranges is not None else None
    ctl = raw["controller"]
    controller = None
    if ga is not None:
        controller = _try(problems, "controller", lambda: ControllerConfig(
            horizon=ctl["horizon"], weights=tuple(ctl["weights"]), lower=lo, upper=hi, ga=ga,
            move_penalty=float(ctl["move_penalty"]), warmup=ctl["warmup"], lookback=lookback,
            block=ctl["block"], warm_start=bool(ctl["warm_start"]), timing=bool(ctl["timing"])))
        if controller is not None and len(controller.weights) != d_y:
            problems.append(f"controller.weights needs {d_y} entries, got {len(controller.weights)}")
    ref_raw = raw["reference"]
    reference = _try(problems, "reference", lambda: ReferenceTrajectory(
        ref_raw["starts"], ref_raw["setpoints"], ref_raw["length"]))
    if reference is not None:
        if reference.n_outputs != d_y:
            problems.append(f"reference setpoints need {d_y} channels, got {reference.n_outputs}")
        elif out_ranges is not None:
            sp = np.array(reference.setpoints)
            if np.any(sp < out_ranges[:, 0]) or np.any(sp > out_ranges[:, 1]):
                problems.append("reference setpoints must lie inside data.output_ranges")
    if not isinstance(raw["demo"]["steps"], int) or raw["demo"]["steps"] < lookback + 2:
        problems.append(f"demo.steps must be an integer >= lookback + 2, got {raw['demo']['steps']!r}")
    if problems:
        raise ConfigError("invalid configuration: " + "; ".join(problems))
    return Experiment(raw, kind, normalizer, mlp, training, ga, controller, reference)


def load_config(source, seed=None, output=None):
    """Resolve ``source`` (a YAML path, a mapping, or a preset name) into an Experiment."""
    if isinstance(source, dict):
        user = copy.deepcopy(source)
    elif isinstance(source, (str, Path)) and Path(source).is_file():
        try:
            user = yaml.safe_load(Path(source).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{source}: not valid YAML ({exc})") from None
    elif isinstance(source, str) and source in list(PRESET_CONFIGS) + ["three-tank", "three_tank", "threetank"]:
        user = {"plant": {"kind": source}}
    else:
        raise ConfigError(f"config {source!r} is neither a readable file nor a preset name")
    if not isinstance(user, dict):
        raise ConfigError("config file must hold a mapping at top level")
    kind = (user.get("plant") or {}).get("kind")
    if kind is None:
        raise ConfigError("config needs plant.kind")
    raw = preset_config(kind)
    problems = []
    _merge(raw, user, "", problems)
    if problems:
        raise ConfigError("invalid configuration: " + "; ".join(problems))
    raw["plant"]["kind"] = canonical_kind(kind)
    if seed is not None:
        raw["seed"] = seed
    if output is not None:
        raw["output"] = str(output)
    return validate(raw)

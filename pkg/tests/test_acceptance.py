"""Acceptance suite: one test per criterion, reported by conftest as PASS/FAIL lines.

The criteria that need trained networks share one fixture that runs the full
gen-data -> train -> compare chain twice per plant preset (plus the pendulum
prediction demo), so the whole module takes roughly a quarter of an hour.
"""

import dataclasses
import math
import time

import numpy as np
import pytest

from mlmpc.cli import cmd_gen_data, cmd_predict_demo, cmd_train, cmd_compare
from mlmpc.config import load_config
from mlmpc.data import (
    Episode,
    assemble_dataset,
    feature_width,
    generate_episodes,
    load_dataset,
    merge_and_shift,
    split,
    window_and_label,
)
from mlmpc.ga import GaConfig, brute_force_best, ga_run
from mlmpc.metrics import holds_after_settling
from mlmpc.mlp import load_weights, r_squared
from mlmpc.mpc import History, NetworkModel, PerfectModel, perfect_rollout, tracking_cost
from mlmpc.plants import ThreeTank, ThreeTankParams, make_plant, tank_flows, tank_rates
from oracles import central_difference, random_small_net, relative_error
from stubs import SimulatorStub

PLANTS = ("pendulum", "cartpole", "tanks")
# (state box, input box) used to draw random states and inputs per plant
BOXES = {
    "pendulum": ([[-3, 3], [-3, 3]], [[-10, 10]]),
    "cartpole": ([[-3, 3], [-3, 3], [-1, 1], [-3, 3]], [[-20, 20]]),
    "tanks": ([[0, 1], [0, 1], [0, 1]], [[0, 1e-4], [0, 1e-4]]),
}


def uniform(rng, box, n):
    box = np.asarray(box, dtype=float)
    return rng.uniform(box[:, 0], box[:, 1], size=(n, len(box)))


def worst_relative(a, b):
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), np.finfo(float).tiny)
    return float(np.max(np.abs(a - b) / scale))


# --------------------------------------------------------------------------- fast criteria


@pytest.mark.criterion(1, "simulator fixed points and sign-flip symmetry")
def test_fixed_points_and_symmetry(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for kind in PLANTS:
        plant = make_plant(kind)
        rest = plant.initial_state()
        assert plant.advance(rest, np.zeros(plant.n_inputs)).tobytes() == rest.tobytes(), kind
        states = uniform(rng, BOXES[kind][0], 1000)
        if kind == "tanks":
            q12, q23, _ = tank_flows(states, plant.params)
            s12, _, _ = tank_flows(states[:, [1, 0, 2]], plant.params)
            _, s23, _ = tank_flows(states[:, [0, 2, 1]], plant.params)
            worst = max(worst, worst_relative(q12, -s12), worst_relative(q23, -s23))
        else:
            actions = uniform(rng, BOXES[kind][1], 1000)
            worst = max(worst, worst_relative(plant.advance(states, actions), -plant.advance(-states, -actions)))
    elapsed = time.perf_counter() - start
    record_property("detail", f"worst relative asymmetry {worst:.1e}, {elapsed:.2f} s")
    assert worst <= 1e-12
    assert elapsed < 1.0


@pytest.mark.criterion(2, "three-tank volume conservation and bookkeeping")
def test_tank_conservation(record_property):
    start = time.perf_counter()
    p = ThreeTankParams(alpha3=0.0)
    plant = ThreeTank(p, [0.9, 0.1, 0.4])
    v0 = float(np.sum(p.areas * plant.state))
    for _ in range(10_000):
        plant.step([0.0, 0.0])
    drift = abs(float(np.sum(p.areas * plant.state)) - v0) / v0

    rng = np.random.default_rng(2)
    p = ThreeTankParams()
    levels = uniform(rng, BOXES["tanks"][0], 1000)
    inflows = uniform(rng, BOXES["tanks"][1], 1000)
    moved = np.sum(p.areas * p.tau * tank_rates(levels, inflows, p), axis=-1)
    expected = p.tau * (inflows[:, 0] + inflows[:, 1] - tank_flows(levels, p)[2])
    identity = worst_relative(moved, expected)
    elapsed = time.perf_counter() - start
    record_property("detail", f"sealed drift {drift:.1e}, bookkeeping {identity:.1e}, {elapsed:.2f} s")
    assert drift <= 1e-9
    assert identity <= 1e-12
    assert elapsed < 1.0


@pytest.mark.criterion(3, "explicit Euler is first order")
def test_euler_order(record_property):
    probes = {
        "pendulum": ([0.4, 0.3], [2.0]),
        "cartpole": ([0.1, 0.2, 0.05, -0.1], [3.0]),
        "tanks": ([0.6, 0.35, 0.15], [5e-5, 2e-5]),
    }
    ratios = {}
    for kind, (x0, u) in probes.items():
        base = make_plant(kind).params

        def integrate(step_size):
            plant = make_plant(kind, dataclasses.replace(base, tau=step_size), x0)
            for _ in range(round(base.tau / step_size)):
                plant.step(u)
            return plant.state

        ref = integrate(base.tau / 1000)
        ratios[kind] = np.linalg.norm(integrate(base.tau) - ref) / np.linalg.norm(integrate(base.tau / 2) - ref)
    record_property("detail", ", ".join(f"{k} {r:.3f}" for k, r in ratios.items()))
    for ratio in ratios.values():
        assert 1.8 <= ratio <= 2.2


@pytest.mark.criterion(4, "pipeline dimension laws and no label leakage")
def test_dimension_laws(record_property):
    widths = {}
    for kind in PLANTS:
        exp = load_config(kind)
        plant = exp.make_plant()
        steps, lookback = exp.raw["data"]["steps"], exp.lookback
        episodes, _ = generate_episodes(plant, 3, steps, exp.raw["data"]["input_ranges"], 0, lookback=lookback)
        ds = assemble_dataset(episodes, lookback, exp.normalizer)
        widths[kind] = ds.n_features
        assert ds.n_features == feature_width(lookback, plant.n_inputs, plant.n_outputs) == exp.mlp.widths[0]
        assert len(ds) == 3 * (steps - 1 - lookback)
    assert widths == {"pendulum": 8, "cartpole": 18, "tanks": 20}

    # symbolic fixtures: value = 100 * t + channel (outputs offset by 10000)
    for d_u, d_y, lookback in [(1, 1, 3), (1, 2, 5), (2, 3, 3)]:
        t = np.arange(1, 16)[:, None]
        ep = Episode(100.0 * t + np.arange(d_u), 10000.0 + 100.0 * t + np.arange(d_y))
        feats, labels = window_and_label(merge_and_shift(ep), ep, lookback)
        assert len(feats) == 15 - 1 - lookback
        blocks = feats.reshape(len(feats), lookback + 1, d_u + d_y)
        in_time = (blocks[:, :, :d_u] % 10000) // 100
        out_time = (blocks[:, :, d_u:] % 10000) // 100
        label_time = (labels[:, 0] % 10000) // 100
        assert np.all(label_time == in_time.max(axis=(1, 2)))
        assert np.all(label_time == out_time.max(axis=(1, 2)) + 1)
    record_property("detail", "widths " + "/".join(str(widths[k]) for k in PLANTS))


@pytest.mark.criterion(5, "analytic gradient matches central differences")
def test_gradient_check(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        net = random_small_net(rng)
        x = rng.normal(size=(7, net.n_features))
        y = rng.normal(size=(7, net.n_outputs))
        _, gw, gb = net.gradient(x, y)
        worst = max(worst, relative_error(gw + gb, central_difference(net, x, y)))
    elapsed = time.perf_counter() - start
    record_property("detail", f"max relative error {worst:.1e}, {elapsed:.2f} s")
    assert worst <= 1e-4
    assert elapsed < 10.0


@pytest.mark.criterion(8, "network rollout with a simulator stub equals the perfect rollout")
def test_stub_rollout_equivalence(record_property):
    rng = np.random.default_rng(8)
    lookbacks = {"pendulum": 3, "cartpole": 5, "tanks": 3}
    checked = 0
    for kind in PLANTS:
        plant = make_plant(kind)
        state_box, input_box = BOXES[kind]
        if kind == "cartpole":
            state_box = [[-0.5, 0.5]] * 4
        lookback = lookbacks[kind]
        for horizon in (1, 2, 5):
            for _ in range(100):
                plant.reset(uniform(rng, state_box, 1)[0])
                history = History(plant.n_inputs, plant.n_outputs)
                for u in uniform(rng, input_box, int(rng.integers(lookback + 1, lookback + 15))):
                    history.append(u, plant.step(u))
                candidates = uniform(rng, input_box, 4 * horizon).reshape(4, horizon, -1)
                stub = SimulatorStub(plant, lookback).register(history, plant.state)
                got = NetworkModel(stub, lookback=lookback).rollout(history, candidates)
                want = np.stack([perfect_rollout(plant, c) for c in candidates])
                assert got.tobytes() == want.tobytes(), (kind, horizon)
                checked += 1
    record_property("detail", f"{checked} histories bit-identical")


@pytest.mark.criterion(9, "GA within 5% of a 9-point grid oracle")
def test_ga_versus_brute_force(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(9)
    ratios = []
    for i in range(10):
        plant = make_plant("pendulum", state=[rng.uniform(-1, 1), rng.uniform(-2, 2)])
        model = PerfectModel(plant)
        target = np.full((2, 1), rng.uniform(-1, 1))
        seen = []

        def fitness(pop):
            seen.append((pop.min(), pop.max()))
            return tracking_cost(model.rollout(None, pop), target, pop, (1.0,))

        res = ga_run(fitness, GaConfig([-10.0], [10.0], seed=i), 2)
        _, oracle = brute_force_best(lambda pop: tracking_cost(model.rollout(None, pop), target, pop, (1.0,)),
                                     [-10.0], [10.0], 2, 9)
        ratios.append(res.cost / oracle)
        assert res.cost <= 1.05 * oracle
        assert all(b <= a for a, b in zip(res.history, res.history[1:]))
        assert res.history[-1] == res.cost
        assert min(lo for lo, _ in seen) >= -10.0 and max(hi for _, hi in seen) <= 10.0
    elapsed = time.perf_counter() - start
    record_property("detail", f"worst GA/oracle cost ratio {max(ratios):.4f}, {elapsed:.1f} s")
    assert elapsed < 60.0


# --------------------------------------------------------------------------- full pipeline runs


@pytest.fixture(scope="module")
def pipelines(tmp_path_factory):
    """Two identical gen-data -> train -> compare runs per preset, plus the pendulum demo."""
    runs = {}
    for kind in PLANTS:
        exp = load_config(kind)
        for copy in ("a", "b"):
            out = tmp_path_factory.mktemp(f"{kind}_{copy}")
            run = {"exp": exp, "out": out}
            start = time.perf_counter()
            try:
                cmd_gen_data(exp, out)
                t0 = time.perf_counter()
                cmd_train(exp, out / "dataset.csv", out)
                run["train_seconds"] = time.perf_counter() - t0
                run["compare"] = cmd_compare(exp, out / "weights.json", out)
                run["seconds"] = time.perf_counter() - start
                if kind == "pendulum":
                    t0 = time.perf_counter()
                    run["demo"] = cmd_predict_demo(exp, out / "weights.json", out)
                    run["demo_seconds"] = time.perf_counter() - t0
            except Exception as exc:  # reported by the criteria that need this run
                run["error"] = repr(exc)
            runs[kind, copy] = run
    return runs


def completed(run):
    assert "error" not in run, run["error"]
    return run


@pytest.mark.slow
@pytest.mark.criterion(6, "held-out R^2 > 0.9 per preset, bit-identical retraining, <= 5 min")
def test_training_quality(pipelines, record_property):
    notes = []
    failures = []
    for kind in PLANTS:
        a, b = completed(pipelines[kind, "a"]), completed(pipelines[kind, "b"])
        exp = a["exp"]
        net = load_weights(a["out"] / "weights.json")
        _, test_set = split(load_dataset(a["out"] / "dataset.csv"), exp.raw["pipeline"]["test_fraction"], exp.seed)
        r2 = r_squared(net, test_set)
        same = (a["out"] / "weights.json").read_bytes() == (b["out"] / "weights.json").read_bytes()
        notes.append(f"{kind} R^2 min {r2.min():.4f} in {a['train_seconds']:.0f} s")
        if not (np.all(r2 > 0.9) and same and a["train_seconds"] <= 300):
            failures.append(kind)
    record_property("detail", ", ".join(notes))
    assert not failures


@pytest.mark.slow
@pytest.mark.criterion(7, "state correction beats free-running prediction without accumulating error")
def test_state_correction(pipelines, record_property):
    run = completed(pipelines["pendulum", "a"])
    s = run["demo"]
    record_property("detail", f"corrected {s['corrected']:.4g} vs uncorrected {s['uncorrected']:.4g}, "
                              f"quarters {s['first_quarter']:.4g} -> {s['final_quarter']:.4g}, "
                              f"{run['demo_seconds']:.1f} s")
    assert run["exp"].raw["demo"]["steps"] == 200
    assert s["corrected"] < s["uncorrected"]
    assert s["final_quarter"] <= 2 * s["first_quarter"]
    assert run["demo_seconds"] < 30


@pytest.mark.slow
@pytest.mark.criterion(10, "perfect-model MPC settles within 5% of each jump inside 100 steps")
def test_perfect_model_baseline(pipelines, record_property):
    notes, failures = [], []
    for kind in PLANTS:
        run = completed(pipelines[kind, "a"])
        log = run["compare"]["perfect"].log
        rows = holds_after_settling(log, channels=run["exp"].tracked, band=0.05, within=100)
        notes.append(f"{kind} {sum(r[-1] for r in rows)}/{len(rows)} jumps")
        if not (log.valid and len(rows) >= 3 and all(r[-1] for r in rows)):
            failures.append(kind)
    record_property("detail", ", ".join(notes))
    assert not failures


@pytest.mark.slow
@pytest.mark.criterion(11, "MSE(C-MPC) <= MSE(ML-MPC) on every plant, whole pipeline <= 30 min")
def test_comparison_direction(pipelines, record_property):
    notes, failures, total = [], [], 0.0
    for kind in PLANTS:
        run = completed(pipelines[kind, "a"])
        ml, perfect = run["compare"]["ml"].metrics.mse, run["compare"]["perfect"].metrics.mse
        total += run["seconds"]
        notes.append(f"{kind} C {perfect:.4g} / ML {ml:.4g}")
        if not (math.isfinite(ml) and math.isfinite(perfect) and perfect <= ml):
            failures.append(kind)
    record_property("detail", ", ".join(notes) + f", {total / 60:.1f} min")
    assert not failures
    assert total <= 1800


@pytest.mark.slow
@pytest.mark.criterion(12, "every CSV byte-identical across two runs")
def test_reproducibility(pipelines, record_property):
    count, differing = 0, []
    for kind in PLANTS:
        a, b = completed(pipelines[kind, "a"]), completed(pipelines[kind, "b"])
        names = sorted(p.name for p in a["out"].glob("*.csv"))
        assert names == sorted(p.name for p in b["out"].glob("*.csv"))
        for name in names:
            count += 1
            if (a["out"] / name).read_bytes() != (b["out"] / name).read_bytes():
                differing.append(f"{kind}/{name}")
    record_property("detail", f"{count} CSVs compared" + (f", differing: {differing}" if differing else ""))
    assert count == 19
    assert not differing

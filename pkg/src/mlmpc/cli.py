"""Command-line front end: gen-data, train, control, compare, predict-demo, pipeline.

Exit codes: 0 success, 1 invalid configuration or input files, 2 runtime fault.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import load_config
from .data import assemble_dataset, fmt, generate_episodes, load_dataset, save_dataset, save_episodes, split
from .errors import ConfigError, DatasetFormatError, OptimizerError, SimulationError, TrainingDiverged
from .metrics import compute_metrics
from .mlp import evaluate, init_mlp, load_weights, r_squared, save_report, save_weights, train
from .mpc import NetworkModel, PerfectModel, prediction_session, run_session, save_session
from .plotting import plot_comparison, plot_prediction, plot_session

log = logging.getLogger("mlmpc")

PERFECT = "perfect"


class SessionFault(RuntimeError):
    """A control session ended early; its partial log has been written."""


@dataclass
class ControlResult:
    log: object
    metrics: object
    path: Path


def _out_dir(exp, out):
    path = Path(out if out is not None else exp.raw["output"])
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.yaml").write_text(exp.dump())
    return path


# --------------------------------------------------------------------------- commands


def cmd_gen_data(exp, out=None):
    """Generate episodes and the assembled dataset; returns both paths."""
    out = _out_dir(exp, out)
    data, pipe = exp.raw["data"], exp.raw["pipeline"]
    plant = exp.make_plant()
    episodes, rejected = generate_episodes(
        plant, data["samples"], data["steps"], data["input_ranges"], exp.seed, lookback=pipe["lookback"],
        hold=data["hold"], initial_ranges=data["initial_ranges"],
    )
    ds = assemble_dataset(episodes, pipe["lookback"], exp.normalizer)
    expected = (data["steps"] - 1 - pipe["lookback"]) * data["samples"]
    if len(ds) != expected or ds.n_features != exp.mlp.widths[0]:
        raise RuntimeError(f"dataset has {len(ds)} x {ds.n_features}, expected {expected} x {exp.mlp.widths[0]}")
    save_episodes(episodes, out / "episodes.csv")
    save_dataset(ds, out / "dataset.csv")
    print(f"episodes: {len(episodes)} x {data['steps']} steps ({rejected} rejected)")
    print(f"dataset: {len(ds)} rows, D={ds.n_features} K={ds.n_outputs} L={ds.lookback} "
          f"norm={'minmax' if exp.normalizer else 'none'}")
    return out / "episodes.csv", out / "dataset.csv"


def cmd_train(exp, dataset_path, out=None):
    """Train the configured network; returns ``(net, report)``."""
    out = _out_dir(exp, out)
    ds = load_dataset(dataset_path)
    if (ds.n_features, ds.n_outputs, ds.lookback) != (exp.mlp.widths[0], exp.mlp.widths[-1], exp.lookback):
        raise ConfigError(
            f"{dataset_path} holds D={ds.n_features} K={ds.n_outputs} L={ds.lookback}, but the config needs "
            f"D={exp.mlp.widths[0]} K={exp.mlp.widths[-1]} L={exp.lookback}"
        )
    train_set, test_set = split(ds, exp.raw["pipeline"]["test_fraction"], exp.seed)
    try:
        net, report = train(init_mlp(exp.mlp, exp.normalizer, exp.lookback), train_set, test_set, exp.training)
    except TrainingDiverged as exc:
        if exc.report is not None:
            save_report(exc.report, out / "train_report.csv")
        raise
    save_weights(net, out / "weights.json")
    save_report(report, out / "train_report.csv")
    r2 = r_squared(net, test_set)
    print(f"trained {len(train_set)} rows for {exp.training.epochs} epochs in {report.wall_time:.1f} s")
    print(f"final train MSE {report.train_mse[-1]:.6g}, test MSE {evaluate(net, test_set):.6g} "
          f"({len(test_set)} held-out rows)")
    print("held-out R^2: " + " ".join(f"{v:.4f}" for v in r2))
    return net, report


def _model(exp, weights, plant):
    if str(weights) == PERFECT:
        return PerfectModel(plant), PERFECT
    net = load_weights(weights, n_features=exp.mlp.widths[0], n_outputs=exp.mlp.widths[-1])
    if net.lookback is not None and net.lookback != exp.lookback:
        raise ConfigError(f"{weights} was trained with lookback {net.lookback}, config has {exp.lookback}")
    return NetworkModel(net, lookback=exp.lookback), "ml"


def _session(exp, weights, out, label=None):
    plant = exp.make_plant()
    model, kind = _model(exp, weights, plant)
    label = label or kind
    start = time.perf_counter()
    session = run_session(plant, model, exp.reference, exp.controller)
    elapsed = time.perf_counter() - start
    path = out / f"session_{label}.csv"
    save_session(session, path)
    metrics = compute_metrics(session, channels=exp.tracked)
    print(f"{label}: {len(session)} steps in {elapsed:.1f} s, MSE {metrics.mse:.6g}, MAE {metrics.mae:.6g}")
    if not session.valid:
        raise SessionFault(f"{label} session ended early at {session.error}; partial log in {path}")
    return ControlResult(session, metrics, path)


def cmd_control(exp, weights, out=None):
    """Run one closed-loop session with a trained network or the perfect model."""
    out = _out_dir(exp, out)
    res = _session(exp, weights, out)
    label = "perfect" if str(weights) == PERFECT else "ml"
    plot_session(res.log, out / f"session_{label}.svg", exp.tracked, title=f"{exp.plant_kind}: {label} MPC")
    _write_metrics({label: res.metrics}, out / f"metrics_{label}.csv")
    return res


def _write_metrics(metrics, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["controller", "metric", "value"])
        for label, m in metrics.items():
            for name, value in m.as_rows():
                writer.writerow([label, name, value if isinstance(value, str) else fmt(value)])


def cmd_compare(exp, weights, out=None):
    """Network MPC against perfect-model MPC on the same reference and seeds."""
    out = _out_dir(exp, out)
    ml = _session(exp, weights, out, "ml")
    perfect = _session(exp, PERFECT, out, "perfect")
    _write_metrics({"ml": ml.metrics, "perfect": perfect.metrics}, out / "metrics.csv")
    plot_comparison({"ML-MPC": ml.log, "C-MPC": perfect.log}, out / "compare.svg", exp.tracked,
                    title=f"{exp.plant_kind}: ML-MPC versus C-MPC")
    ratio = ml.metrics.mse / perfect.metrics.mse if perfect.metrics.mse > 0 else float("inf")
    print(f"MSE ratio ML/C: {ratio:.4g}")
    return {"ml": ml, "perfect": perfect, "ratio": ratio}


def cmd_predict_demo(exp, weights, out=None):
    """Corrected vs free-running prediction over a random-input session."""
    out = _out_dir(exp, out)
    plant = exp.make_plant()
    model, _ = _model(exp, weights, plant)
    if str(weights) == PERFECT:
        raise ConfigError("predict-demo needs trained weights")
    steps = exp.raw["demo"]["steps"]
    ranges = np.asarray(exp.raw["data"]["input_ranges"], dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence([exp.seed, 7]))
    inputs = rng.uniform(ranges[:, 0], ranges[:, 1], size=(steps, len(ranges)))
    outputs, corrected, uncorrected = prediction_session(plant, model, inputs)
    err_c = np.abs(corrected - outputs)
    err_u = np.abs(uncorrected - outputs)
    with open(out / "demo.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        k = outputs.shape[1]
        writer.writerow(["step"] + [f"u{j}" for j in range(inputs.shape[1])] + [f"y{j}" for j in range(k)]
                        + [f"corrected{j}" for j in range(k)] + [f"uncorrected{j}" for j in range(k)])
        for t in range(steps):
            writer.writerow([t] + [fmt(v) for v in np.concatenate([inputs[t], outputs[t], corrected[t],
                                                                    uncorrected[t]])])
    plot_prediction(outputs, corrected, uncorrected, out / "demo.svg",
                    title=f"{exp.plant_kind}: prediction with and without state correction")
    summary = demo_summary(err_c, err_u)
    print(f"mean |error| corrected {summary['corrected']:.6g}, uncorrected {summary['uncorrected']:.6g}")
    print(f"corrected error first quarter {summary['first_quarter']:.6g}, "
          f"final quarter {summary['final_quarter']:.6g}")
    return summary


def demo_summary(err_corrected, err_uncorrected):
    """Mean absolute errors, and the corrected error over the first and last quarter of the session."""
    n = len(err_corrected)
    q = n // 4
    return {
        "corrected": float(np.nanmean(err_corrected)),
        "uncorrected": float(np.nanmean(err_uncorrected)),
        "first_quarter": float(np.nanmean(err_corrected[:q])),
        "final_quarter": float(np.nanmean(err_corrected[n - q :])),
    }


def cmd_pipeline(exp, out=None):
    """gen-data, train and compare in one go."""
    _, dataset = cmd_gen_data(exp, out)
    cmd_train(exp, dataset, out)
    out = _out_dir(exp, out)
    return cmd_compare(exp, out / "weights.json", out)


# --------------------------------------------------------------------------- entry point


def build_parser():
    parser = argparse.ArgumentParser(prog="mlmpc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML config file or preset name (pendulum, cartpole, tanks)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory (default: the config's output entry)")
        return p

    command("gen-data", "simulate episodes and build the dataset")
    command("train", "train the network").add_argument("--dataset", required=True, help="dataset CSV")
    for name, help_text in (("control", "run one closed-loop session"),
                            ("compare", "network MPC versus perfect-model MPC"),
                            ("predict-demo", "prediction with and without state correction")):
        p = command(name, help_text)
        p.add_argument("--weights", required=True,
                       help="weights JSON" + (", or 'perfect' for the plant itself" if name == "control" else ""))
    command("pipeline", "gen-data, train and compare in one run")
    return parser


def run(args):
    exp = load_config(args.config, seed=args.seed)
    if args.command == "gen-data":
        cmd_gen_data(exp, args.out)
    elif args.command == "train":
        cmd_train(exp, args.dataset, args.out)
    elif args.command == "control":
        cmd_control(exp, args.weights, args.out)
    elif args.command == "compare":
        cmd_compare(exp, args.weights, args.out)
    elif args.command == "predict-demo":
        cmd_predict_demo(exp, args.weights, args.out)
    elif args.command == "pipeline":
        cmd_pipeline(exp, args.out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except (ConfigError, DatasetFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDiverged, SimulationError, OptimizerError, SessionFault) as exc:
        print(f"fault: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

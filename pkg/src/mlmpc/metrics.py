"""Tracking metrics computed from a session log."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Metrics", "compute_metrics", "settling_step", "jump_segments"]

HOLD = 10


@dataclass
class Metrics:
    mse: float
    mae: float
    settling: list = field(default_factory=list)  # (jump step, channel, settle step or None)
    mean_ms: float = 0.0
    valid: bool = True

    def as_rows(self):
        rows = [("mse", self.mse), ("mae", self.mae), ("mean_ms", self.mean_ms), ("valid", int(self.valid))]
        for jump, ch, s in self.settling:
            rows.append((f"settle_{jump}_y{ch}", "not settled" if s is None else s))
        return rows


def jump_segments(reference, initial=None):
    """``(start, end, previous, new)`` for each setpoint change in a ``(T, K)`` reference.

    The first segment starts at step 0 and is measured from ``initial``,
    defaulting to the first setpoint (no jump).
    """
    reference = np.asarray(reference, dtype=float)
    if len(reference) == 0:
        return []
    change = np.flatnonzero(np.any(reference[1:] != reference[:-1], axis=1)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [len(reference)]])
    prev = reference[0] if initial is None else np.asarray(initial, dtype=float)
    segments = []
    for s, e in zip(starts, ends):
        segments.append((int(s), int(e), prev, reference[s]))
        prev = reference[s]
    return segments


def settling_step(error, band, start, end, hold=HOLD):
    """First step in ``[start, end)`` opening ``hold`` consecutive steps with ``|error| < band``."""
    inside = np.abs(np.asarray(error[start:end])) < band
    run = 0
    for i, ok in enumerate(inside):
        run = run + 1 if ok else 0
        if run == hold:
            return start + i - hold + 1
    return None


def compute_metrics(log, band=0.05, channels=None):
    """MSE/MAE against the reference plus per-jump settling steps.

    ``band`` is a fraction of each jump's magnitude; the first setpoint is
    measured from the first logged output.  Channels whose setpoint does not
    move at a jump get no settling entry.  ``channels`` restricts everything
    to the tracked outputs.
    """
    ref = np.asarray(log.reference, dtype=float)
    out = np.asarray(log.outputs, dtype=float)
    if channels is None:
        channels = range(ref.shape[1])
    channels = list(channels)
    err = out[:, channels] - ref[:, channels]
    valid = bool(getattr(log, "valid", True)) and len(err) > 0 and bool(np.all(np.isfinite(err)))
    mse = float(np.mean(err * err)) if len(err) else float("nan")
    mae = float(np.mean(np.abs(err))) if len(err) else float("nan")
    settling = []
    initial = out[0] if len(out) else None
    for start, end, prev, new in jump_segments(ref, initial):
        for k, ch in enumerate(channels):
            size = abs(new[ch] - prev[ch])
            if size > 0:
                settling.append((start, ch, settling_step(err[:, k], band * size, start, end)))
    ms = np.asarray(log.ms, dtype=float)
    mean_ms = float(np.mean(ms)) if len(ms) else 0.0
    return Metrics(mse, mae, settling, mean_ms, valid)


def holds_after_settling(log, channels=None, band=0.05, within=100, hold=HOLD):
    """Per jump: settled within ``within`` steps and stayed inside the band until the next jump.

    Returns ``[(jump step, channel, settle step or None, worst error after settling, band, ok)]``.
    """
    ref = np.asarray(log.reference, dtype=float)
    out = np.asarray(log.outputs, dtype=float)
    channels = range(ref.shape[1]) if channels is None else channels
    rows = []
    for start, end, prev, new in jump_segments(ref, out[0] if len(out) else None):
        for ch in channels:
            size = abs(new[ch] - prev[ch])
            if size == 0:
                continue
            err = out[:, ch] - ref[:, ch]
            s = settling_step(err, band * size, start, end, hold)
            worst = float(np.max(np.abs(err[s:end]))) if s is not None else float("inf")
            ok = s is not None and s - start <= within and worst < band * size
            rows.append((start, ch, s, worst, band * size, ok))
    return rows

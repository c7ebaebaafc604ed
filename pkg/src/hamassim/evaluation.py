"""Metrics and report tables: RMSE, moving averages, energy conservation.

The moving average follows the trailing-window definition with a partial
head: entry k is the mean of the last n values for k >= n and the mean of
the first k values before that (1-based k).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import systems
from .errors import GridMismatch
from .integrators import Trajectory

__all__ = [
    "MetricSeries",
    "rmse",
    "sma",
    "energy_series",
    "compare_report",
    "MODEL_ORDER",
]

# Expected accuracy ordering, best first (checked, not enforced).
MODEL_ORDER = ("ahnn", "hnn", "node", "mlp")


@dataclass(frozen=True)
class MetricSeries:
    times: np.ndarray
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if t.shape != v.shape:
            raise GridMismatch(f"times {t.shape} vs values {v.shape}")

    def __len__(self):
        return len(self.times)


def _as_block(trajs) -> tuple[np.ndarray, np.ndarray]:
    """Stack trajectories into (M, T+1, 2n) plus a shared time grid."""
    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    if isinstance(trajs, np.ndarray):
        block = trajs if trajs.ndim == 3 else trajs[None]
        return block, None
    times = trajs[0].times
    for tr in trajs[1:]:
        if len(tr.times) != len(times) or not np.allclose(tr.times, times, rtol=0, atol=1e-9):
            raise GridMismatch("trajectories live on different time grids")
    return np.stack([tr.states for tr in trajs]), times


def _component_index(selector, dim: int) -> np.ndarray:
    dof = dim // 2
    if isinstance(selector, str):
        if selector == "all":
            return np.arange(dim)
        if selector in ("pos", "position", "q"):
            return np.arange(dof)
        if selector in ("vel", "velocity", "momentum", "p"):
            return np.arange(dof, dim)
        raise ValueError(f"unknown component selector {selector!r}")
    return np.asarray(selector, dtype=int)


def rmse(predicted, truth, components="all") -> tuple[float, MetricSeries]:
    """RMSE over selected components; returns (scalar, per-step series)."""
    pred, times_p = _as_block(predicted)
    true, times_t = _as_block(truth)
    if pred.shape != true.shape:
        raise GridMismatch(f"prediction block {pred.shape} vs truth {true.shape}")
    if times_p is not None and times_t is not None:
        if len(times_p) != len(times_t) or not np.allclose(times_p, times_t, rtol=0, atol=1e-9):
            raise GridMismatch("prediction and truth time grids differ")
    idx = _component_index(components, pred.shape[2])
    err2 = (pred[:, :, idx] - true[:, :, idx]) ** 2
    per_step = np.sqrt(err2.mean(axis=(0, 2)))
    times = times_p if times_p is not None else np.arange(pred.shape[1], dtype=np.float64)
    return float(np.sqrt(err2.mean())), MetricSeries(times, per_step, "rmse")


def sma(series: MetricSeries, window: int) -> MetricSeries:
    """Simple moving average over a trailing window (partial head)."""
    if window < 1:
        raise ValueError("window must be >= 1")
    v = series.values
    csum = np.concatenate([[0.0], np.cumsum(v)])
    out = np.empty_like(v)
    for k in range(len(v)):
        lo = max(0, k - window + 1)
        out[k] = (csum[k + 1] - csum[lo]) / (k + 1 - lo)
    return MetricSeries(series.times, out, f"{series.label}_sma{window}")


def energy_series(model_or_spec, trajectory: Trajectory) -> tuple[MetricSeries, float]:
    """Energy along a trajectory plus its RMSE against the initial value.

    ``model_or_spec`` is a SystemSpec (true Hamiltonian) or an energy model
    exposing ``energy(states)`` (learned Hamiltonian, arbitrary units).
    """
    states = trajectory.states
    if isinstance(model_or_spec, (systems.MassSpring, systems.TwoBodyJ2)):
        h = systems.hamiltonian_batch(model_or_spec, states)
    else:
        h = np.asarray(model_or_spec.energy(states), dtype=np.float64)
    dev = h - h[0]
    return MetricSeries(trajectory.times, h, "energy"), float(np.sqrt(np.mean(dev * dev)))


def _order_rank(model: str) -> int:
    name = model.lower()
    for rank, prefix in enumerate(MODEL_ORDER):
        if name.startswith(prefix):
            return rank
    return len(MODEL_ORDER)


def compare_report(rows: list[dict]) -> tuple[str, str]:
    """Comparison table across models/scenarios/modes.

    Each row: {model, scenario, mode, pos_rmse, vel_rmse}.  Returns
    (csv_text, summary_text); the summary flags whether the expected
    AHNN <= HNN <= NODE <= MLP ordering held per column.
    """
    header = "model,scenario,mode,pos_rmse,vel_rmse"
    lines = [header]
    for row in rows:
        lines.append(
            f"{row['model']},{row['scenario']},{row['mode']},"
            f"{row['pos_rmse']:.17g},{row['vel_rmse']:.17g}"
        )
    csv_text = "\n".join(lines) + "\n"

    summary = ["model comparison"]
    groups: dict = {}
    for row in rows:
        groups.setdefault((row["scenario"], row["mode"]), []).append(row)
    for (scenario, mode), members in sorted(groups.items()):
        summary.append(f"\n[{scenario} initial, {mode}]")
        for row in sorted(members, key=lambda r: r["pos_rmse"]):
            summary.append(
                f"  {row['model']:<8s} pos_rmse={row['pos_rmse']:.6e} vel_rmse={row['vel_rmse']:.6e}"
            )
        ranked = sorted(members, key=lambda r: _order_rank(r["model"]))
        for metric in ("pos_rmse", "vel_rmse"):
            vals = [r[metric] for r in ranked]
            held = all(vals[i] <= vals[i + 1] for i in range(len(vals) - 1))
            summary.append(f"  ordering({metric}) AHNN<=HNN<=NODE<=MLP: {'holds' if held else 'violated'}")
    return csv_text, "\n".join(summary) + "\n"

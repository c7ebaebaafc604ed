"""Dataset construction, losses, AdamW, LR schedule, pruner, and the epoch loop.

Training always happens in min-max normalized coordinates (statistics
fitted on the train split only).  The W-step autoregressive loss rolls the
predictor out on its own outputs and averages per-step Huber distances;
gradients flow through all W composed steps on the reverse-mode tape.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import curve_fit

from . import autodiff as ad
from . import integrators, systems
from .errors import (
    FixedPointDiverged,
    MissingArtifact,
    NonFiniteLoss,
    NonFiniteState,
    NonFiniteValue,
    ShapeMismatch,
)
from .io_utils import atomic_savetxt, atomic_write_text
from .models import NormalizationStats, Predictor, symplectic_matrix

__all__ = [
    "TrajectoryDataset",
    "TrainConfig",
    "AdamWConfig",
    "PrunerConfig",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
    "dataset_energy_spread",
    "huber",
    "loss_one_step",
    "loss_ahnn",
    "batch_loss",
    "adamw_init",
    "adamw_step",
    "lr_schedule",
    "pfl_prune",
    "train",
    "orbit_elements_to_state",
    "orbit_period",
]

SPLIT_FRACTIONS = (0.80, 0.15, 0.05)


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------


@dataclass
class TrajectoryDataset:
    """Uniform-length trajectories with per-trajectory split assignment."""

    states: np.ndarray  # (N, T+1, 2n)
    dt: float
    system: object  # SystemSpec
    seed: int
    splits: dict  # name -> np.ndarray of trajectory indices
    norm: NormalizationStats

    def __post_init__(self):
        self._normalized = None

    @property
    def n_steps(self) -> int:
        return self.states.shape[1] - 1

    def normalized_states(self) -> np.ndarray:
        if self._normalized is None:
            self._normalized = self.norm.normalize(self.states)
        return self._normalized

    def windows(self, split: str, window: int) -> np.ndarray:
        """(M, 2) array of (trajectory index, start step) pairs, stride 1."""
        n_starts = self.n_steps - window + 1
        if n_starts < 1:
            raise ValueError(f"window {window} exceeds trajectory length {self.n_steps}")
        traj = np.repeat(self.splits[split], n_starts)
        start = np.tile(np.arange(n_starts), len(self.splits[split]))
        return np.stack([traj, start], axis=1)

    def trajectories(self, split: str) -> np.ndarray:
        return self.states[self.splits[split]]


def _split_indices(count: int) -> dict:
    n_train = int(count * SPLIT_FRACTIONS[0])
    n_trainval = int(count * (SPLIT_FRACTIONS[0] + SPLIT_FRACTIONS[1]))
    idx = np.arange(count)
    return {
        "train": idx[:n_train],
        "val": idx[n_train:n_trainval],
        "test": idx[n_trainval:],
    }


def mass_spring_sampler(rng: np.random.Generator) -> np.ndarray:
    """Initial (q, p) uniform on [-1, 1]^2."""
    return rng.uniform(-1.0, 1.0, size=2)


def orbit_elements_to_state(
    spec: systems.TwoBodyJ2,
    periapsis_alt_km: float,
    eccentricity: float,
    inclination: float,
    raan: float,
    arg_periapsis: float,
    true_anomaly: float,
) -> np.ndarray:
    """Classical elements -> Cartesian (q, p) with unit mass; angles in radians."""
    r_p = spec.r_eq + periapsis_alt_km
    a = r_p / (1.0 - eccentricity)
    p_sl = a * (1.0 - eccentricity**2)
    r_mag = p_sl / (1.0 + eccentricity * np.cos(true_anomaly))
    r_pf = r_mag * np.array([np.cos(true_anomaly), np.sin(true_anomaly), 0.0])
    v_pf = np.sqrt(spec.mu / p_sl) * np.array(
        [-np.sin(true_anomaly), eccentricity + np.cos(true_anomaly), 0.0]
    )
    co, so = np.cos(raan), np.sin(raan)
    ci, si = np.cos(inclination), np.sin(inclination)
    cw, sw = np.cos(arg_periapsis), np.sin(arg_periapsis)
    rot = np.array(
        [
            [co * cw - so * sw * ci, -co * sw - so * cw * ci, so * si],
            [so * cw + co * sw * ci, -so * sw + co * cw * ci, -co * si],
            [sw * si, cw * si, ci],
        ]
    )
    q = rot @ r_pf
    v = rot @ v_pf
    return np.concatenate([q, spec.m * v])


def orbit_period(spec: systems.TwoBodyJ2, x: np.ndarray) -> float:
    """Keplerian period from the point-mass energy at x (J2 ignored)."""
    x = np.asarray(x, dtype=np.float64)
    r = float(np.linalg.norm(x[:3]))
    v = float(np.linalg.norm(x[3:] / spec.m))
    a = 1.0 / (2.0 / r - v * v / spec.mu)
    return 2.0 * np.pi * np.sqrt(a**3 / spec.mu)


def orbit_sampler(rng: np.random.Generator, spec: systems.TwoBodyJ2) -> np.ndarray:
    """Periapsis altitude U[540,560] km, e U[0.7,0.8], i U[60,66] deg; other angles uniform."""
    alt = rng.uniform(540.0, 560.0)
    ecc = rng.uniform(0.7, 0.8)
    inc = np.deg2rad(rng.uniform(60.0, 66.0))
    raan, argp, nu = rng.uniform(0.0, 2.0 * np.pi, size=3)
    return orbit_elements_to_state(spec, alt, ecc, inc, raan, argp, nu)


def default_stepper(system) -> integrators.StepperSpec:
    if isinstance(system, systems.MassSpring):
        return integrators.gl4()
    return integrators.composition("kahanli8", substeps=2)


def generate_dataset(
    system,
    count: int,
    n_steps: int,
    dt: float,
    seed: int,
    stepper: integrators.StepperSpec | None = None,
    sampler=None,
    max_retries: int = 10,
    jobs: int = 1,
) -> TrajectoryDataset:
    """Propagate ``count`` trajectories with a symplectic stepper.

    Deterministic for a fixed seed regardless of ``jobs``: initial
    conditions are drawn up front in trajectory order, propagation fans out
    over a thread pool, and any failed trajectory is regenerated serially
    from the next draws (capped at ``max_retries`` per slot).
    """
    if count < 1 or n_steps < 1:
        raise ValueError("count and n_steps must be >= 1")
    stepper = stepper or default_stepper(system)
    if sampler is None:
        if isinstance(system, systems.MassSpring):
            sampler = mass_spring_sampler
        else:
            sampler = lambda rng: orbit_sampler(rng, system)
    rng = np.random.default_rng(seed)
    initials = [sampler(rng) for _ in range(count)]
    states = np.empty((count, n_steps + 1, 2 * system.dof))

    def run_one(x0):
        return integrators.propagate(stepper, system, x0, dt, n_steps).states

    failed = []
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        def safe(pair):
            i, x0 = pair
            try:
                return i, run_one(x0)
            except (NonFiniteState, FixedPointDiverged):
                return i, None

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for i, result in pool.map(safe, enumerate(initials)):
                if result is None:
                    failed.append(i)
                else:
                    states[i] = result
    else:
        for i, x0 in enumerate(initials):
            try:
                states[i] = run_one(x0)
            except (NonFiniteState, FixedPointDiverged):
                failed.append(i)

    for i in failed:
        for attempt in range(max_retries):
            try:
                states[i] = run_one(sampler(rng))
                break
            except (NonFiniteState, FixedPointDiverged):
                if attempt == max_retries - 1:
                    raise

    splits = _split_indices(count)
    norm = NormalizationStats.fit(states[splits["train"]].reshape(-1, 2 * system.dof))
    return TrajectoryDataset(states, dt, system, seed, splits, norm)


def dataset_energy_spread(ds: TrajectoryDataset) -> float:
    """Max over trajectories of (max H - min H) / |H(x0)|; sanity gate."""
    worst = 0.0
    for traj in ds.states:
        h = systems.hamiltonian_batch(ds.system, traj)
        h0 = abs(h[0]) if h[0] != 0.0 else 1.0
        worst = max(worst, float(h.max() - h.min()) / h0)
    return worst


# -- csv / manifest io ----------------------------------------------------


def _system_to_dict(system) -> dict:
    if isinstance(system, systems.MassSpring):
        return {"kind": "mass_spring", "k": system.k, "m": system.m}
    return {
        "kind": "two_body_j2",
        "mu": system.mu,
        "r_eq": system.r_eq,
        "j2": system.j2,
        "m": system.m,
    }


def system_from_dict(doc: dict):
    if doc["kind"] == "mass_spring":
        return systems.MassSpring(k=doc["k"], m=doc["m"])
    if doc["kind"] == "two_body_j2":
        return systems.TwoBodyJ2(mu=doc["mu"], r_eq=doc["r_eq"], j2=doc["j2"], m=doc["m"])
    raise ValueError(f"unknown system kind {doc['kind']!r}")


def save_dataset(ds: TrajectoryDataset, outdir: str) -> None:
    """One CSV per split (traj_id, step, t, q.., p..) plus manifest.json."""
    os.makedirs(outdir, exist_ok=True)
    dof = ds.system.dof
    header = ",".join(
        ["traj_id", "step", "t"]
        + [f"q{i + 1}" for i in range(dof)]
        + [f"p{i + 1}" for i in range(dof)]
    )
    n_samples = ds.n_steps + 1
    t_col = np.arange(n_samples) * ds.dt
    for name, idx in ds.splits.items():
        rows = np.empty((len(idx) * n_samples, 3 + 2 * dof))
        for j, traj_id in enumerate(idx):
            block = rows[j * n_samples : (j + 1) * n_samples]
            block[:, 0] = traj_id
            block[:, 1] = np.arange(n_samples)
            block[:, 2] = t_col
            block[:, 3:] = ds.states[traj_id]
        fmt = ["%d", "%d"] + ["%.17g"] * (1 + 2 * dof)
        atomic_savetxt(os.path.join(outdir, f"{name}.csv"), rows, fmt, header)
    manifest = {
        "format_version": 1,
        "system": _system_to_dict(ds.system),
        "dt": ds.dt,
        "seed": ds.seed,
        "count": int(ds.states.shape[0]),
        "n_steps": int(ds.n_steps),
        "splits": {k: [int(i) for i in v] for k, v in ds.splits.items()},
        "norm_min": [float(v).hex() for v in ds.norm.lo],
        "norm_max": [float(v).hex() for v in ds.norm.hi],
    }
    atomic_write_text(os.path.join(outdir, "manifest.json"), json.dumps(manifest, indent=1) + "\n")


def load_dataset(directory: str) -> TrajectoryDataset:
    manifest_path = os.path.join(directory, "manifest.json")
    if not os.path.exists(manifest_path):
        raise MissingArtifact(f"no dataset manifest at {manifest_path}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    system = system_from_dict(manifest["system"])
    dof = system.dof
    count = manifest["count"]
    n_samples = manifest["n_steps"] + 1
    states = np.empty((count, n_samples, 2 * dof))
    seen = np.zeros(count, dtype=bool)
    for name in ("train", "val", "test"):
        path = os.path.join(directory, f"{name}.csv")
        if not os.path.exists(path):
            raise MissingArtifact(f"missing split file {path}")
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if raw.size == 0:
            continue
        ids = raw[:, 0].astype(int)
        steps = raw[:, 1].astype(int)
        states[ids, steps] = raw[:, 3:]
        seen[ids] = True
    if not seen.all():
        raise MissingArtifact(f"dataset in {directory} is missing trajectories")
    splits = {k: np.asarray(v, dtype=int) for k, v in manifest["splits"].items()}
    norm = NormalizationStats(
        np.array([float.fromhex(v) for v in manifest["norm_min"]]),
        np.array([float.fromhex(v) for v in manifest["norm_max"]]),
    )
    return TrajectoryDataset(states, manifest["dt"], system, manifest["seed"], splits, norm)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def huber(residual: np.ndarray, delta: float) -> float:
    """Sum over components of the Huber branches (quadratic within delta)."""
    if delta <= 0:
        raise ValueError("huber delta must be positive")
    r = np.asarray(residual, dtype=np.float64)
    a = np.abs(r)
    quad = 0.5 * r * r
    lin = delta * (a - 0.5 * delta)
    return float(np.sum(np.where(a <= delta, quad, lin)))


def loss_ahnn(predictor: Predictor, x_k: np.ndarray, targets: np.ndarray, delta: float = 1.0) -> float:
    """W-step autoregressive loss for one window; states in physical units."""
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    w = targets.shape[0]
    xn = predictor.norm.normalize(np.asarray(x_k, dtype=np.float64))[None, :]
    tn = predictor.norm.normalize(targets)
    total = 0.0
    for i in range(w):
        xn = predictor.step_normalized(xn)
        total += huber(xn[0] - tn[i], delta)
    return total / w


def loss_one_step(predictor: Predictor, x_k: np.ndarray, x_k1: np.ndarray, delta: float = 1.0) -> float:
    """Single-step prediction loss; identical to loss_ahnn with W = 1."""
    return loss_ahnn(predictor, x_k, np.asarray(x_k1)[None, :], delta)


def batch_loss(predictor: Predictor, x0n: np.ndarray, targets_n: np.ndarray, delta: float = 1.0) -> float:
    """Mean window loss over a normalized batch: x0n (B, 2n), targets_n (B, W, 2n)."""
    b, w = targets_n.shape[0], targets_n.shape[1]
    xn = x0n
    total = 0.0
    for i in range(w):
        xn = predictor.step_normalized(xn)
        r = xn - targets_n[:, i, :]
        total += huber(r, delta)
    return total / (b * w)


def build_batch_loss(
    tape: ad.Tape,
    predictor: Predictor,
    w_vars,
    b_vars,
    x0n: np.ndarray,
    targets_n: np.ndarray,
    delta: float,
) -> ad.Var:
    """Recorded twin of :func:`batch_loss` as a function of the parameter Vars."""
    b, w = targets_n.shape[0], targets_n.shape[1]
    jt = None
    if predictor.kind in ("hnn", "ahnn"):
        jt = tape.constant(symplectic_matrix(predictor.dof).T)
    x = tape.constant(x0n)
    total = None
    for i in range(w):
        x = predictor.build_step(tape, w_vars, b_vars, x, jt)
        r = x - targets_n[:, i, :]
        c = ad.minimum(ad.maximum(r, -delta), delta)
        step_sum = ad.vsum(c * r - (c * c) * 0.5)
        total = step_sum if total is None else total + step_sum
    return total * (1.0 / (b * w))


# ---------------------------------------------------------------------------
# optimizer / schedule / pruner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamWConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class AdamWState:
    m: list
    v: list
    t: int = 0


def adamw_init(params: list[np.ndarray]) -> AdamWState:
    return AdamWState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adamw_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamWState,
    lr: float,
    config: AdamWConfig,
) -> list[np.ndarray]:
    """Bias-corrected Adam step with decoupled weight decay; mutates state."""
    if len(params) != len(grads):
        raise ShapeMismatch("params and grads must have equal length")
    state.t += 1
    bc1 = 1.0 - config.beta1**state.t
    bc2 = 1.0 - config.beta2**state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeMismatch(f"param {i}: {p.shape} vs grad {g.shape}")
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        new = p * (1.0 - lr * config.weight_decay) - lr * m_hat / (np.sqrt(v_hat) + config.eps)
        out.append(new)
    return out


@dataclass(frozen=True)
class PrunerConfig:
    threshold: float
    fit_epochs: int = 10
    horizon: int = 50


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 250
    batch_size: int = 256
    lr0: float = 1e-3
    lr_inf: float = 1e-5
    adamw: AdamWConfig = AdamWConfig()
    huber_delta: float = 1.0
    window: int = 1
    seed: int = 0
    pruner: PrunerConfig | None = None
    val_window_cap: int | None = None  # deterministic subset for large val sets

    def __post_init__(self):
        if not (0.0 < self.lr_inf <= self.lr0):
            raise ValueError("need 0 < lr_inf <= lr0")
        if self.window < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("window, batch_size must be >= 1 and epochs >= 0")


def lr_schedule(config: TrainConfig, epoch: int) -> float:
    """Exponential decay from lr0 toward the lr_inf floor, tau = epochs/5."""
    tau = max(config.epochs, 1) / 5.0
    return config.lr_inf + (config.lr0 - config.lr_inf) * np.exp(-epoch / tau)


def pfl_prune(val_losses, horizon: int, threshold: float) -> str:
    """Forecast the validation loss at ``horizon`` from the first epochs.

    Fits a * exp(-b e) + c (falling back to the c = 0 form when the full
    fit is degenerate) and returns "stop" when the forecast exceeds the
    threshold.  Fit failures mean "continue": pruning is best-effort.
    """
    y = np.asarray(val_losses, dtype=np.float64)
    e = np.arange(len(y), dtype=np.float64)
    prediction = None
    try:
        c0 = max(float(y.min()), 1e-12)
        a0 = max(float(y[0]) - c0, 1e-12)
        popt, _ = curve_fit(
            lambda t, a, b, c: a * np.exp(-b * t) + c,
            e,
            y,
            p0=(a0, 0.1, c0),
            maxfev=5000,
        )
        if np.all(np.isfinite(popt)):
            prediction = popt[0] * np.exp(-popt[1] * horizon) + popt[2]
    except (RuntimeError, TypeError, ValueError):
        prediction = None
    if prediction is None or not np.isfinite(prediction):
        try:
            coef = np.polyfit(e, np.log(y), 1)
            prediction = float(np.exp(coef[1] + coef[0] * horizon))
        except (np.linalg.LinAlgError, ValueError):
            return "continue"
    if not np.isfinite(prediction):
        return "continue"
    return "stop" if prediction > threshold else "continue"


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def _gather_windows(states_n: np.ndarray, windows: np.ndarray, w: int):
    traj = windows[:, 0]
    start = windows[:, 1]
    x0 = states_n[traj, start]
    targets = states_n[traj[:, None], start[:, None] + 1 + np.arange(w)[None, :]]
    return x0, targets


def train(predictor: Predictor, dataset: TrajectoryDataset, config: TrainConfig):
    """Mini-batch AdamW training; returns (best-validation predictor, history).

    The gradient of every batch flows through the recorded W-step rollout.
    History carries per-epoch train/val losses and the learning rates.
    """
    w = config.window
    states_n = dataset.normalized_states()
    train_windows = dataset.windows("train", w)
    val_windows = dataset.windows("val", w)
    seq = np.random.SeedSequence(config.seed)
    rng_train, rng_val = [np.random.default_rng(s) for s in seq.spawn(2)]
    if config.val_window_cap is not None and len(val_windows) > config.val_window_cap:
        pick = rng_val.permutation(len(val_windows))[: config.val_window_cap]
        val_windows = val_windows[np.sort(pick)]
    val_x0, val_targets = _gather_windows(states_n, val_windows, w)

    params = [p.copy() for p in predictor.net.param_list()]
    opt_state = adamw_init(params)
    history = {"train": [], "val": [], "lr": [], "pruned": False}
    best_val = np.inf
    best_params = [p.copy() for p in params]

    for epoch in range(config.epochs):
        lr = lr_schedule(config, epoch)
        order = rng_train.permutation(len(train_windows))
        epoch_loss = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = train_windows[order[lo : lo + config.batch_size]]
            x0, targets = _gather_windows(states_n, batch, w)
            current = predictor.net.with_params(params)
            work = dataclasses.replace(predictor, net=current)
            try:
                tape = ad.Tape()
                in_vars = [tape.input(p) for p in params]  # param_list order: W1, b1, ...
                w_vars = [in_vars[2 * i] for i in range(len(current.weights))]
                b_vars = [in_vars[2 * i + 1] for i in range(len(current.biases))]
                loss_var = build_batch_loss(tape, work, w_vars, b_vars, x0, targets, config.huber_delta)
            except NonFiniteValue as exc:
                raise NonFiniteLoss(f"epoch {epoch}, batch at window {lo}: {exc}") from exc
            loss = float(loss_var.value)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"epoch {epoch}, batch at window {lo}: loss={loss}")
            grads = ad.backward(tape, loss_var)
            params = adamw_step(params, grads, opt_state, lr, config.adamw)
            epoch_loss += loss * len(batch)
        history["train"].append(epoch_loss / len(train_windows))
        history["lr"].append(lr)

        eval_pred = dataclasses.replace(predictor, net=predictor.net.with_params(params))
        if len(val_x0) == 0:  # degenerate split: fall back to the train loss
            val_loss = history["train"][-1]
        else:
            try:
                val_loss = _chunked_loss(eval_pred, val_x0, val_targets, config.huber_delta)
                if not np.isfinite(val_loss):
                    val_loss = np.inf
            except NonFiniteState:  # diverged rollout counts as an infinite loss
                val_loss = np.inf
        history["val"].append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_params = [p.copy() for p in params]

        if (
            config.pruner is not None
            and epoch + 1 == config.pruner.fit_epochs
            and pfl_prune(history["val"], config.pruner.horizon, config.pruner.threshold) == "stop"
        ):
            history["pruned"] = True
            break

    best_net = predictor.net.with_params(best_params)
    return dataclasses.replace(predictor, net=best_net), history


def _chunked_loss(predictor, x0n, targets_n, delta, chunk: int = 8192) -> float:
    if len(x0n) == 0:
        return np.nan
    total = 0.0
    for lo in range(0, len(x0n), chunk):
        part = batch_loss(predictor, x0n[lo : lo + chunk], targets_n[lo : lo + chunk], delta)
        total += part * len(x0n[lo : lo + chunk])
    return total / len(x0n)

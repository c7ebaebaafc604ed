"""Learnable dynamics models behind a common one-step-predictor interface.

Four predictor kinds share one container:

* ``hnn`` / ``ahnn`` — a scalar tanh network is the energy function; one
  step integrates the field J grad(H) with RK4.  The two kinds differ only
  in the training window W; the runtime map is identical.
* ``node`` — an unconstrained learned vector field integrated by RK4.
* ``mlp`` — a direct next-state network, no structural prior.

All networks operate on min-max normalized states, and the time step is
absorbed into the learned field: one data interval is one unit of
normalized time, so RK4 uses step 1/substeps regardless of the physical
sampling interval (kept in ``dt`` for bookkeeping and reports).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from . import kernels
from ._accel import NUMBA_ENABLED
from .errors import DimensionMismatch, MalformedCheckpoint, NonFiniteState
from .integrators import Trajectory

__all__ = [
    "MlpParams",
    "NormalizationStats",
    "Predictor",
    "forward_mlp",
    "mlp_input_gradient",
    "rollout",
    "rollout_batch",
    "save_checkpoint",
    "load_checkpoint",
]

KINDS = ("hnn", "ahnn", "mlp", "node")
CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    """Affine/tanh stack; weights[i] is (d_in, d_out), final layer linear."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise DimensionMismatch("weights and biases must pair up")
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise DimensionMismatch(
                    f"layer {i} output {self.weights[i].shape[1]} vs layer {i + 1} input"
                )
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise DimensionMismatch(f"bias shape {b.shape} vs weight {w.shape}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @classmethod
    def init(cls, layer_sizes, rng: np.random.Generator) -> "MlpParams":
        """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
        weights, biases = [], []
        for d_in, d_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = np.sqrt(6.0 / (d_in + d_out))
            weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
            biases.append(np.zeros(d_out))
        return cls(weights, biases)

    def param_list(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def with_params(self, params: list[np.ndarray]) -> "MlpParams":
        weights = [params[2 * i] for i in range(len(self.weights))]
        biases = [params[2 * i + 1] for i in range(len(self.biases))]
        return MlpParams(weights, biases)


@dataclass(frozen=True)
class NormalizationStats:
    """Per-dimension min/max of the training states.

    States map affinely onto [-1, 1]: the range midpoint goes to 0, which
    keeps tanh inputs centered and makes a zero network decode to the
    midpoint of the training box.
    """

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionMismatch("normalization bounds must be equal-length vectors")
        if not np.all(hi > lo):
            raise ValueError("normalization requires max > min in every dimension")

    @classmethod
    def fit(cls, states: np.ndarray) -> "NormalizationStats":
        states = np.asarray(states, dtype=np.float64).reshape(-1, np.shape(states)[-1])
        return cls(states.min(axis=0), states.max(axis=0))

    @property
    def span(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.hi + self.lo)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.center) / (0.5 * self.span)

    def denormalize(self, xn: np.ndarray) -> np.ndarray:
        return self.center + np.asarray(xn, dtype=np.float64) * (0.5 * self.span)

    @classmethod
    def identity(cls, dim: int) -> "NormalizationStats":
        """No-op stats (lo=-1, hi=1); used by exact test models."""
        return cls(-np.ones(dim), np.ones(dim))


def forward_mlp(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Alternating affine/tanh, final layer affine. x: (d0,) or (B, d0)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.weights[0].shape[0]:
        raise DimensionMismatch(f"input dim {x.shape[-1]} vs first layer {params.weights[0].shape[0]}")
    h = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = np.tanh(h @ w + b)
    return h @ params.weights[-1] + params.biases[-1]


def mlp_input_gradient(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """d(scalar output)/d(input) for a batch x (B, d0) -> (B, d0).

    Closed-form composition of the same affine/tanh primitives; reused, in
    recorded form, when training differentiates through the HNN field.
    """
    weights, biases = params.weights, params.biases
    if weights[-1].shape[1] != 1:
        raise DimensionMismatch("input gradient needs a scalar-output network")
    acts = []
    h = np.asarray(x, dtype=np.float64)
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.tanh(h @ w + b)
        acts.append(h)
    g = (1.0 - acts[-1] * acts[-1]) * weights[-1][:, 0]
    for i in range(len(weights) - 2, 0, -1):
        g = (g @ weights[i].T) * (1.0 - acts[i - 1] * acts[i - 1])
    return g @ weights[0].T


def build_mlp_forward(tape: ad.Tape, w_vars, b_vars, x: ad.Var) -> ad.Var:
    h = x
    for w, b in zip(w_vars[:-1], b_vars[:-1]):
        h = ad.tanh(ad.dot(h, w) + b)
    return ad.dot(h, w_vars[-1]) + b_vars[-1]


def build_mlp_input_gradient(tape: ad.Tape, w_vars, b_vars, x: ad.Var) -> ad.Var:
    """Recorded twin of :func:`mlp_input_gradient` (x must be 2-D)."""
    acts = []
    h = x
    for w, b in zip(w_vars[:-1], b_vars[:-1]):
        h = ad.tanh(ad.dot(h, w) + b)
        acts.append(h)
    g = (1.0 - acts[-1] * acts[-1]) * ad.transpose(w_vars[-1])
    for i in range(len(w_vars) - 2, 0, -1):
        g = ad.dot(g, ad.transpose(w_vars[i])) * (1.0 - acts[i - 1] * acts[i - 1])
    return ad.dot(g, ad.transpose(w_vars[0]))


def symplectic_matrix(dof: int) -> np.ndarray:
    """Canonical J = [[0, I], [-I, 0]]."""
    j = np.zeros((2 * dof, 2 * dof))
    j[:dof, dof:] = np.eye(dof)
    j[dof:, :dof] = -np.eye(dof)
    return j


@dataclass
class Predictor:
    """One-step state predictor in physical units."""

    kind: str
    net: MlpParams
    norm: NormalizationStats
    dt: float
    substeps: int = 1
    window: int = 1
    seed: int | None = None
    system: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        if self.dt <= 0 or self.substeps < 1 or self.window < 1:
            raise ValueError("dt, substeps, and window must be positive")
        sizes = self.net.layer_sizes
        if sizes[0] != self.norm.dim:
            raise DimensionMismatch(f"net input {sizes[0]} vs state dim {self.norm.dim}")
        expected_out = 1 if self.kind in ("hnn", "ahnn") else self.norm.dim
        if sizes[-1] != expected_out:
            raise DimensionMismatch(f"net output {sizes[-1]}, expected {expected_out}")

    @property
    def dof(self) -> int:
        return self.norm.dim // 2

    @property
    def input_dim(self) -> int:
        return self.norm.dim

    # -- energy surface (hnn/ahnn only) -------------------------------
    def energy(self, x: np.ndarray) -> np.ndarray:
        """H_theta at physical state(s); scalar units are arbitrary."""
        if self.kind not in ("hnn", "ahnn"):
            raise ValueError(f"{self.kind} predictor has no energy function")
        out = forward_mlp(self.net, self.norm.normalize(x))
        return out[..., 0]

    def build_energy(self, tape: ad.Tape, xv: ad.Var) -> ad.Var:
        if self.kind not in ("hnn", "ahnn"):
            raise ValueError(f"{self.kind} predictor has no energy function")
        xn = (xv - self.norm.center) * (2.0 / self.norm.span)
        w_vars = [tape.constant(w) for w in self.net.weights]
        b_vars = [tape.constant(b) for b in self.net.biases]
        return build_mlp_forward(tape, w_vars, b_vars, xn)

    # -- stepping ------------------------------------------------------
    def field_normalized(self, xn: np.ndarray) -> np.ndarray:
        """Learned normalized-time vector field at normalized states (B, 2n)."""
        if self.kind in ("hnn", "ahnn"):
            g = mlp_input_gradient(self.net, xn)
            out = np.empty_like(g)
            out[:, : self.dof] = g[:, self.dof :]
            out[:, self.dof :] = -g[:, : self.dof]
            return out
        return forward_mlp(self.net, xn)

    def step_normalized(self, xn: np.ndarray) -> np.ndarray:
        xn = np.asarray(xn, dtype=np.float64)
        if self.kind == "mlp":
            return forward_mlp(self.net, xn)
        h = 1.0 / self.substeps
        x = xn
        for _ in range(self.substeps):
            k1 = self.field_normalized(x)
            k2 = self.field_normalized(x + (0.5 * h) * k1)
            k3 = self.field_normalized(x + (0.5 * h) * k2)
            k4 = self.field_normalized(x + h * k3)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return x

    def step_batch(self, x: np.ndarray) -> np.ndarray:
        """Advance a batch (M, 2n) of physical states by one data interval."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.norm.dim:
            raise DimensionMismatch(f"step_batch: {x.shape} vs state dim {self.norm.dim}")
        out = self.norm.denormalize(self.step_normalized(self.norm.normalize(x)))
        if not np.all(np.isfinite(out)):
            raise NonFiniteState("predictor produced a non-finite state")
        return out

    def step(self, x: np.ndarray) -> np.ndarray:
        return self.step_batch(np.asarray(x, dtype=np.float64)[None, :])[0]

    # -- recorded twin for training -----------------------------------
    def build_step(self, tape: ad.Tape, w_vars, b_vars, xn: ad.Var, jt_const=None) -> ad.Var:
        """Record one normalized step as a function of the parameter Vars."""
        if self.kind == "mlp":
            return build_mlp_forward(tape, w_vars, b_vars, xn)
        if self.kind in ("hnn", "ahnn") and jt_const is None:
            jt_const = tape.constant(symplectic_matrix(self.dof).T)

        def fieldv(z):
            if self.kind == "node":
                return build_mlp_forward(tape, w_vars, b_vars, z)
            g = build_mlp_input_gradient(tape, w_vars, b_vars, z)
            return ad.dot(g, jt_const)

        h = 1.0 / self.substeps
        x = xn
        for _ in range(self.substeps):
            k1 = fieldv(x)
            k2 = fieldv(x + k1 * (0.5 * h))
            k3 = fieldv(x + k2 * (0.5 * h))
            k4 = fieldv(x + k3 * h)
            x = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
        return x


def rollout(predictor: Predictor, x0: np.ndarray, k: int) -> Trajectory:
    """Autoregressive k-step composition from a single physical state."""
    states = rollout_batch(predictor, np.asarray(x0, dtype=np.float64)[None, :], k)[0]
    times = np.arange(k + 1, dtype=np.float64) * predictor.dt
    return Trajectory(times, states)


def rollout_batch(predictor: Predictor, x0: np.ndarray, k: int) -> np.ndarray:
    """(M, 2n) starts -> (M, k+1, 2n) trajectories."""
    if k < 1:
        raise ValueError("rollout needs k >= 1")
    x0 = np.asarray(x0, dtype=np.float64)
    if NUMBA_ENABLED and isinstance(predictor, Predictor) and predictor.kind in ("hnn", "ahnn"):
        xn = predictor.norm.normalize(x0)
        trajn = kernels.hnn_rollout_batch(
            xn,
            tuple(predictor.net.weights),
            tuple(predictor.net.biases),
            1.0 / predictor.substeps,
            predictor.substeps,
            k,
            predictor.dof,
        )
        out = predictor.norm.denormalize(trajn)
        if not np.all(np.isfinite(out)):
            raise NonFiniteState("rollout produced a non-finite state")
        return out
    out = np.empty((x0.shape[0], k + 1, x0.shape[1]))
    out[:, 0, :] = x0
    x = x0
    for step in range(k):
        try:
            x = predictor.step_batch(x)
        except NonFiniteState as exc:
            raise NonFiniteState(f"rollout step {step}: {exc}") from exc
        out[:, step + 1, :] = x
    return out


# -- checkpoint io ------------------------------------------------------


def _hex_list(a: np.ndarray) -> list[str]:
    return [float(v).hex() for v in np.asarray(a, dtype=np.float64).ravel()]


def _from_hex(items, shape) -> np.ndarray:
    return np.array([float.fromhex(v) for v in items], dtype=np.float64).reshape(shape)


def save_checkpoint(predictor: Predictor, path: str) -> None:
    """Write a bit-exact (hex-float) checkpoint; atomic replace on success."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "kind": predictor.kind,
        "layer_sizes": predictor.net.layer_sizes,
        "activation": "tanh",
        "weights": [_hex_list(w) for w in predictor.net.weights],
        "biases": [_hex_list(b) for b in predictor.net.biases],
        "norm_min": _hex_list(predictor.norm.lo),
        "norm_max": _hex_list(predictor.norm.hi),
        "dt": float(predictor.dt).hex(),
        "substeps": predictor.substeps,
        "W": predictor.window,
        "seed": predictor.seed,
        "system": predictor.system,
    }
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> Predictor:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedCheckpoint(f"{path}: {exc}") from exc
    try:
        version = doc["format_version"]
        if version != CHECKPOINT_VERSION:
            raise MalformedCheckpoint(f"unsupported format_version {version}")
        sizes = doc["layer_sizes"]
        weights = [
            _from_hex(w, (sizes[i], sizes[i + 1])) for i, w in enumerate(doc["weights"])
        ]
        biases = [_from_hex(b, (sizes[i + 1],)) for i, b in enumerate(doc["biases"])]
        dim = sizes[0]
        norm = NormalizationStats(_from_hex(doc["norm_min"], (dim,)), _from_hex(doc["norm_max"], (dim,)))
        return Predictor(
            kind=doc["kind"],
            net=MlpParams(weights, biases),
            norm=norm,
            dt=float.fromhex(doc["dt"]),
            substeps=int(doc["substeps"]),
            window=int(doc["W"]),
            seed=doc["seed"],
            system=doc.get("system") or {},
        )
    except MalformedCheckpoint:
        raise
    except (KeyError, ValueError, TypeError, IndexError, DimensionMismatch) as exc:
        raise MalformedCheckpoint(f"{path}: {exc}") from exc

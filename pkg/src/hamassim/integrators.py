"""Fixed-step time integrators.

Three steppers: classical explicit RK4 (also the integrator inside the
learned one-step map), the 4th-order Gauss-Legendre implicit symplectic
method with fixed-point stage iteration (mass-spring data generation), and
explicit symplectic compositions of leapfrog substeps for separable
Hamiltonians (orbit data generation).

All steppers are stateless pure functions; :func:`propagate` dispatches to
the numba kernels in :mod:`hamassim.kernels` for the two hot
(system, stepper) combinations when acceleration is enabled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels, systems
from ._accel import NUMBA_ENABLED
from .errors import FixedPointDiverged, NonFiniteState

__all__ = [
    "StepperSpec",
    "Trajectory",
    "rk4_step",
    "gl4_step",
    "symplectic_composition_step",
    "propagate",
    "rk4",
    "gl4",
    "composition",
    "LEAPFROG",
    "YOSHIDA4",
    "YOSHIDA6",
    "KAHAN_LI8",
    "COMPOSITIONS",
]

# Composition substep fractions (each entry is one leapfrog of size gamma*dt).
LEAPFROG = np.array([1.0])

_CBRT2 = 2.0 ** (1.0 / 3.0)
YOSHIDA4 = np.array(
    [1.0 / (2.0 - _CBRT2), -_CBRT2 / (2.0 - _CBRT2), 1.0 / (2.0 - _CBRT2)]
)

# Yoshida (1990) 6th-order, solution A.
_Y6_W1 = -1.17767998417887
_Y6_W2 = 0.235573213359357
_Y6_W3 = 0.784513610477560
_Y6_W0 = 1.0 - 2.0 * (_Y6_W1 + _Y6_W2 + _Y6_W3)
YOSHIDA6 = np.array([_Y6_W3, _Y6_W2, _Y6_W1, _Y6_W0, _Y6_W1, _Y6_W2, _Y6_W3])

# Kahan & Li (1997) 17-stage symmetric 8th-order composition.
_KL8_HALF = [
    0.13020248308889008087881763,
    0.56116298177510838456196441,
    -0.38947496264484728640807860,
    0.15884190655515560089621075,
    -0.39590389413323757733623154,
    0.18453964097831570709183254,
    0.25837438768632204729397911,
    0.29501172360931029887096624,
]
KAHAN_LI8 = np.array(_KL8_HALF + [1.0 - 2.0 * sum(_KL8_HALF)] + _KL8_HALF[::-1])

COMPOSITIONS = {
    "leapfrog": (LEAPFROG, 2),
    "yoshida4": (YOSHIDA4, 4),
    "yoshida6": (YOSHIDA6, 6),
    "kahanli8": (KAHAN_LI8, 8),
}

_GL4_A = np.array(
    [
        [0.25, 0.25 - np.sqrt(3.0) / 6.0],
        [0.25 + np.sqrt(3.0) / 6.0, 0.25],
    ]
)


@dataclass(frozen=True)
class StepperSpec:
    """Stepper kind plus its tuning knobs.

    ``substeps`` subdivides each output interval (states are recorded every
    dt regardless).  Composition coefficients must sum to 1.
    """

    kind: str  # "rk4" | "gl4" | "composition"
    fp_tol: float = 1e-12
    fp_max_iter: int = 50
    coefficients: np.ndarray | None = None
    order: int | None = None
    substeps: int = 1

    def __post_init__(self):
        if self.kind not in ("rk4", "gl4", "composition"):
            raise ValueError(f"unknown stepper kind {self.kind!r}")
        if self.fp_tol <= 0 or self.fp_max_iter < 1 or self.substeps < 1:
            raise ValueError("fp_tol, fp_max_iter, and substeps must be positive")
        if self.kind == "composition":
            if self.coefficients is None:
                raise ValueError("composition stepper needs coefficients")
            coeffs = np.asarray(self.coefficients, dtype=np.float64)
            object.__setattr__(self, "coefficients", coeffs)
            if abs(float(coeffs.sum()) - 1.0) > 1e-12:
                raise ValueError("composition coefficients must sum to 1")


def rk4(substeps: int = 1) -> StepperSpec:
    return StepperSpec(kind="rk4", substeps=substeps)


def gl4(fp_tol: float = 1e-12, fp_max_iter: int = 50, substeps: int = 1) -> StepperSpec:
    return StepperSpec(kind="gl4", fp_tol=fp_tol, fp_max_iter=fp_max_iter, substeps=substeps)


def composition(name: str = "kahanli8", substeps: int = 1) -> StepperSpec:
    coeffs, order = COMPOSITIONS[name]
    return StepperSpec(kind="composition", coefficients=coeffs, order=order, substeps=substeps)


def _check_finite(x: np.ndarray, context: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(f"non-finite state in {context}")
    return x


def rk4_step(field: Callable, x: np.ndarray, dt: float) -> np.ndarray:
    """Classical RK4 with weights (1, 2, 2, 1)/6."""
    x = np.asarray(x, dtype=np.float64)
    k1 = _check_finite(np.asarray(field(x)), "rk4 stage 1")
    k2 = _check_finite(np.asarray(field(x + 0.5 * dt * k1)), "rk4 stage 2")
    k3 = _check_finite(np.asarray(field(x + 0.5 * dt * k2)), "rk4 stage 3")
    k4 = _check_finite(np.asarray(field(x + dt * k3)), "rk4 stage 4")
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def gl4_step(
    field: Callable,
    x: np.ndarray,
    dt: float,
    fp_tol: float = 1e-12,
    fp_max_iter: int = 50,
) -> np.ndarray:
    """Two-stage Gauss-Legendre step, stages solved by fixed-point iteration.

    Stage slopes start at the explicit value f(x); iteration stops when the
    max-norm change drops to fp_tol, else FixedPointDiverged is raised.
    """
    x = np.asarray(x, dtype=np.float64)
    f0 = _check_finite(np.asarray(field(x)), "gl4 init")
    k1 = f0.copy()
    k2 = f0.copy()
    a = _GL4_A
    for _ in range(fp_max_iter):
        y1 = x + dt * (a[0, 0] * k1 + a[0, 1] * k2)
        y2 = x + dt * (a[1, 0] * k1 + a[1, 1] * k2)
        n1 = _check_finite(np.asarray(field(y1)), "gl4 stage 1")
        n2 = _check_finite(np.asarray(field(y2)), "gl4 stage 2")
        diff = max(float(np.max(np.abs(n1 - k1))), float(np.max(np.abs(n2 - k2))))
        k1, k2 = n1, n2
        if diff <= fp_tol:
            return x + dt * 0.5 * (k1 + k2)
    raise FixedPointDiverged(f"gl4 stages not converged to {fp_tol} in {fp_max_iter} iterations")


def symplectic_composition_step(
    spec, x: np.ndarray, dt: float, coefficients: np.ndarray
) -> np.ndarray:
    """Composition of leapfrog (kick-drift-kick) substeps gamma_i * dt.

    Requires a separable Hamiltonian T(p) + U(q); both supported systems
    qualify.  Reversing the coefficient order gives the exact inverse map.
    """
    x = np.asarray(x, dtype=np.float64)
    n = spec.dof
    q = x[:n].copy()
    p = x[n:].copy()
    for gamma in np.asarray(coefficients, dtype=np.float64):
        h = gamma * dt
        p -= 0.5 * h * systems.potential_gradient(spec, q)
        q += h * p / spec.m
        p -= 0.5 * h * systems.potential_gradient(spec, q)
    out = np.concatenate([q, p])
    return _check_finite(out, "composition step")


@dataclass(frozen=True)
class Trajectory:
    """States on a uniform time grid; states[k] is the state at times[k]."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have equal length")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def __len__(self) -> int:
        return len(self.times)


def _generic_step(stepper: StepperSpec, system, field, x: np.ndarray, dt: float) -> np.ndarray:
    h = dt / stepper.substeps
    for _ in range(stepper.substeps):
        if stepper.kind == "rk4":
            x = rk4_step(field, x, h)
        elif stepper.kind == "gl4":
            x = gl4_step(field, x, h, stepper.fp_tol, stepper.fp_max_iter)
        else:
            x = symplectic_composition_step(system, x, h, stepper.coefficients)
    return x


def propagate(stepper: StepperSpec, system, x0: np.ndarray, dt: float, n_steps: int) -> Trajectory:
    """Integrate n_steps output intervals of size dt, recording every state.

    ``system`` is a SystemSpec or (for rk4/gl4) a bare field callable.
    Stepper failures are re-raised with the failing step index attached.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x0 = np.asarray(x0, dtype=np.float64)
    times = np.arange(n_steps + 1, dtype=np.float64) * dt

    fast = _fast_path(stepper, system, x0, dt, n_steps)
    if fast is not None:
        return Trajectory(times, fast)

    if callable(system):
        field = system
        if stepper.kind == "composition":
            raise ValueError("composition stepper needs a SystemSpec, not a bare field")
    else:
        field = lambda x: systems.vector_field(system, x)

    states = np.empty((n_steps + 1, x0.shape[0]))
    states[0] = x0
    x = x0
    for step in range(n_steps):
        try:
            x = _generic_step(stepper, system, field, x, dt)
        except (NonFiniteState, FixedPointDiverged) as exc:
            raise type(exc)(f"step {step}: {exc}") from exc
        states[step + 1] = x
    return Trajectory(times, states)


def _fast_path(stepper, system, x0, dt, n_steps):
    """Numba kernel dispatch for the two hot generation paths."""
    if not NUMBA_ENABLED:
        return None
    if stepper.kind == "gl4" and isinstance(system, systems.MassSpring) and stepper.substeps == 1:
        states, status = kernels.gl4_mass_spring_propagate(
            x0, dt, n_steps, system.k, system.m, stepper.fp_tol, stepper.fp_max_iter
        )
        if status >= 0:
            raise FixedPointDiverged(
                f"step {status}: gl4 stages not converged to {stepper.fp_tol}"
            )
        return states
    if stepper.kind == "composition" and isinstance(system, systems.TwoBodyJ2):
        states, status = kernels.composition_two_body_propagate(
            x0,
            dt,
            n_steps,
            stepper.substeps,
            np.asarray(stepper.coefficients, dtype=np.float64),
            system.mu,
            system.r_eq,
            system.j2,
            system.m,
        )
        if status >= 0:
            raise NonFiniteState(f"step {status}: non-finite state in composition step")
        return states
    return None

"""Ground-truth Hamiltonians, their phase-space vector fields, and observation models.

Two systems are supported: a frictionless mass-spring oscillator
(H = p^2/2m + k q^2/2) and a two-body orbit around an oblate primary whose
potential keeps the leading zonal term (J2) of the spherical-harmonic
expansion.  Orbit states are km / km/s with unit satellite mass, so momenta
are numerically velocities.

The J2 potential gradient is evaluated by recording the potential on the
reverse-mode tape and differentiating it, rather than through a hand-derived
acceleration formula; the closed-form kernel twin in :mod:`hamassim.kernels`
is cross-checked against this path in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DimensionMismatch, SingularRadius
from .linalg import cholesky_lower

__all__ = [
    "MU_EARTH",
    "R_EQ_EARTH",
    "J2_EARTH",
    "MassSpring",
    "TwoBodyJ2",
    "ObservationSpec",
    "position_only",
    "full_state",
    "hamiltonian",
    "hamiltonian_batch",
    "zonal_potential",
    "potential_gradient",
    "vector_field",
    "observe",
]

MU_EARTH = 398600.4418  # km^3/s^2
R_EQ_EARTH = 6378.1363  # km
J2_EARTH = 1.0826e-3


@dataclass(frozen=True)
class MassSpring:
    """Frictionless oscillator; k in N/m, m in kg."""

    k: float = 5.0
    m: float = 1.0

    def __post_init__(self):
        if self.k <= 0 or self.m <= 0:
            raise ValueError("k and m must be positive")

    @property
    def dof(self) -> int:
        return 1


@dataclass(frozen=True)
class TwoBodyJ2:
    """Two-body orbit with J2 zonal perturbation; km, km/s, s units, m in kg."""

    mu: float = MU_EARTH
    r_eq: float = R_EQ_EARTH
    j2: float = J2_EARTH
    m: float = 1.0

    def __post_init__(self):
        if self.mu <= 0 or self.r_eq <= 0 or self.m <= 0:
            raise ValueError("mu, r_eq, and m must be positive")
        if self.j2 < 0:
            raise ValueError("j2 must be non-negative")

    @property
    def dof(self) -> int:
        return 3


SystemSpec = MassSpring | TwoBodyJ2


def _check_state(spec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (2 * spec.dof,):
        raise DimensionMismatch(f"state shape {x.shape}, expected ({2 * spec.dof},)")
    return x


def zonal_potential(spec: TwoBodyJ2, q: np.ndarray) -> float:
    """Potential energy -(mu m / r) [1 - J2 (r_eq/r)^2 P2(sin phi)].

    P2 is the degree-2 Legendre polynomial and sin(phi) = z/r, so the
    expression is smooth in Cartesian q away from r = 0 and carries no
    longitude dependence (tesseral terms are truncated away).
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (3,):
        raise DimensionMismatch(f"zonal_potential needs a 3-vector, got {q.shape}")
    r2 = float(q @ q)
    if r2 == 0.0:
        raise SingularRadius("zonal_potential at r = 0")
    r = np.sqrt(r2)
    point_mass = -spec.mu * spec.m / r
    if spec.j2 == 0.0:
        return point_mass
    s = q[2] / r
    p2 = 0.5 * (3.0 * s * s - 1.0)
    return point_mass * (1.0 - spec.j2 * (spec.r_eq * spec.r_eq / r2) * p2)


def build_zonal_potential(spec: TwoBodyJ2, tape: ad.Tape, qv: ad.Var) -> ad.Var:
    """Record zonal_potential on a tape (same formula, Var arithmetic)."""
    r2 = ad.dot(qv, qv)
    r = ad.sqrt(r2)
    point_mass = (-spec.mu * spec.m) / r
    if spec.j2 == 0.0:
        return point_mass
    z = ad.dot(qv, np.array([0.0, 0.0, 1.0]))
    s = z / r
    p2 = (s * s * 3.0 - 1.0) * 0.5
    return point_mass * (1.0 - (spec.j2 * spec.r_eq * spec.r_eq) * p2 / r2)


def potential_gradient(spec, q: np.ndarray) -> np.ndarray:
    """dU/dq. Mass-spring is analytic; the J2 potential goes through the tape."""
    if isinstance(spec, MassSpring):
        return spec.k * np.asarray(q, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (3,):
        raise DimensionMismatch(f"potential_gradient needs a 3-vector, got {q.shape}")
    if float(q @ q) == 0.0:
        raise SingularRadius("potential_gradient at r = 0")
    tape = ad.Tape()
    qv = tape.input(q)
    u = build_zonal_potential(spec, tape, qv)
    return ad.backward(tape, u)[0]


def hamiltonian(spec, x: np.ndarray) -> float:
    """Total energy at phase point x = (q, p)."""
    x = _check_state(spec, x)
    n = spec.dof
    q, p = x[:n], x[n:]
    kinetic = float(p @ p) / (2.0 * spec.m)
    if isinstance(spec, MassSpring):
        return kinetic + 0.5 * spec.k * float(q @ q)
    return kinetic + zonal_potential(spec, q)


def hamiltonian_batch(spec, states: np.ndarray) -> np.ndarray:
    """Vectorized energy over rows of states (T, 2n)."""
    states = np.asarray(states, dtype=np.float64)
    n = spec.dof
    if states.ndim != 2 or states.shape[1] != 2 * n:
        raise DimensionMismatch(f"states shape {states.shape}, expected (*, {2 * n})")
    q, p = states[:, :n], states[:, n:]
    kinetic = np.einsum("ij,ij->i", p, p) / (2.0 * spec.m)
    if isinstance(spec, MassSpring):
        return kinetic + 0.5 * spec.k * np.einsum("ij,ij->i", q, q)
    r2 = np.einsum("ij,ij->i", q, q)
    if np.any(r2 == 0.0):
        raise SingularRadius("hamiltonian_batch at r = 0")
    r = np.sqrt(r2)
    u = -spec.mu * spec.m / r
    if spec.j2 != 0.0:
        s = q[:, 2] / r
        p2 = 0.5 * (3.0 * s * s - 1.0)
        u = u * (1.0 - spec.j2 * (spec.r_eq * spec.r_eq / r2) * p2)
    return kinetic + u


def vector_field(spec, x: np.ndarray) -> np.ndarray:
    """Hamilton's equations J grad(H) = (dH/dp, -dH/dq) at x."""
    x = _check_state(spec, x)
    n = spec.dof
    q, p = x[:n], x[n:]
    return np.concatenate([p / spec.m, -potential_gradient(spec, q)])


@dataclass(frozen=True)
class ObservationSpec:
    """Linear observation y = H x + eta, eta ~ N(0, noise_cov)."""

    h_matrix: np.ndarray
    noise_cov: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        h = np.asarray(self.h_matrix, dtype=np.float64)
        r = np.asarray(self.noise_cov, dtype=np.float64)
        object.__setattr__(self, "h_matrix", h)
        object.__setattr__(self, "noise_cov", r)
        if h.ndim != 2:
            raise DimensionMismatch("h_matrix must be 2-D")
        if r.shape != (h.shape[0], h.shape[0]):
            raise DimensionMismatch(f"noise_cov shape {r.shape} vs {h.shape[0]} outputs")

    @property
    def n_out(self) -> int:
        return self.h_matrix.shape[0]


def position_only(dof: int, noise_cov=None) -> ObservationSpec:
    h = np.zeros((dof, 2 * dof))
    h[:, :dof] = np.eye(dof)
    r = np.zeros((dof, dof)) if noise_cov is None else np.asarray(noise_cov, dtype=np.float64)
    return ObservationSpec(h, r, name="position_only")


def full_state(dof: int, noise_cov=None) -> ObservationSpec:
    h = np.eye(2 * dof)
    r = np.zeros((2 * dof, 2 * dof)) if noise_cov is None else np.asarray(noise_cov, dtype=np.float64)
    return ObservationSpec(h, r, name="full_state")


def observe(obs: ObservationSpec, x: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """Apply the observation model with a Gaussian draw from noise_cov."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (obs.h_matrix.shape[1],):
        raise DimensionMismatch(f"observe: state {x.shape} vs H columns {obs.h_matrix.shape[1]}")
    y = obs.h_matrix @ x
    if np.any(obs.noise_cov):
        if rng is None:
            raise ValueError("observe with nonzero noise needs an rng")
        y = y + cholesky_lower(obs.noise_cov) @ rng.standard_normal(obs.n_out)
    return y

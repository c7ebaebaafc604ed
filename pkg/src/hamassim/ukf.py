"""Unscented transform and the full predictor-driven UKF cycle.

Sigma points follow the scaled unscented transform: offsets are the
columns of the lower Cholesky factor of (L + lambda) P, with
lambda = alpha^2 (L + kappa) - L and weights

    W0_m = lambda / (L + lambda)
    W0_P = W0_m + (1 - alpha^2 + beta)
    Wi_m = Wi_P = 1 / (2 (L + lambda)).

Process noise is additive: it is summed onto the predicted covariance
(set it to zero to drop the term entirely).  Sigma points are regenerated
from the posterior at every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import (
    CovarianceCollapse,
    DimensionMismatch,
    NegativeScaledCov,
    NonFiniteState,
    NotPositiveDefinite,
)
from .linalg import cholesky_lower, solve_spd, symmetrize
from .systems import ObservationSpec

__all__ = [
    "GaussianBelief",
    "UtConfig",
    "SigmaPointSet",
    "UkfConfig",
    "make_sigma_points",
    "ut_predict",
    "ut_update",
    "run_filter",
    "FilterStep",
]


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and SPD covariance of the filter state estimate."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if mean.ndim != 1 or cov.shape != (mean.shape[0], mean.shape[0]):
            raise DimensionMismatch(f"belief shapes: mean {mean.shape}, cov {cov.shape}")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class UtConfig:
    """Scaled unscented transform tuning parameters."""

    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    def lam(self, dim: int) -> float:
        return self.alpha**2 * (dim + self.kappa) - dim


@dataclass(frozen=True)
class SigmaPointSet:
    """2L+1 points with mean- and covariance-weights; point 0 is the mean."""

    points: np.ndarray  # (2L+1, L)
    w_mean: np.ndarray
    w_cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class UkfConfig:
    ut: UtConfig
    process_noise: np.ndarray
    obs: ObservationSpec
    update_every: int = 60

    def __post_init__(self):
        q = np.asarray(self.process_noise, dtype=np.float64)
        object.__setattr__(self, "process_noise", q)
        if self.update_every < 1:
            raise ValueError("update_every must be >= 1")
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise DimensionMismatch("process_noise must be square")


def make_sigma_points(belief: GaussianBelief, ut: UtConfig) -> SigmaPointSet:
    """Sigma points mean +- columns of chol((L + lambda) P), plus weights."""
    dim = belief.dim
    lam = ut.lam(dim)
    scale = dim + lam
    if scale <= 0:
        raise NegativeScaledCov(f"L + lambda = {scale} <= 0")
    root = cholesky_lower(scale * belief.cov)
    points = np.empty((2 * dim + 1, dim))
    points[0] = belief.mean
    points[1 : dim + 1] = belief.mean + root.T  # row i of root.T is column i of root
    points[dim + 1 :] = belief.mean - root.T
    w_mean = np.full(2 * dim + 1, 1.0 / (2.0 * scale))
    w_cov = w_mean.copy()
    w_mean[0] = lam / scale
    w_cov[0] = lam / scale + (1.0 - ut.alpha**2 + ut.beta)
    return SigmaPointSet(points, w_mean, w_cov)


def _weighted_moments(points: np.ndarray, w_mean, w_cov):
    mean = w_mean @ points
    dev = points - mean
    cov = (dev * w_cov[:, None]).T @ dev
    return mean, cov


def ut_predict(points: SigmaPointSet, predictor, process_noise: np.ndarray):
    """Advance all sigma points one step; returns (prior belief, propagated set).

    predictor must offer step_batch((M, L)) -> (M, L).
    """
    try:
        propagated = predictor.step_batch(points.points)
    except NonFiniteState as exc:
        raise NonFiniteState(f"sigma-point propagation failed: {exc}") from exc
    if not np.all(np.isfinite(propagated)):
        bad = int(np.argwhere(~np.isfinite(propagated).all(axis=1))[0][0])
        raise NonFiniteState(f"sigma point {bad} diverged")
    mean, cov = _weighted_moments(propagated, points.w_mean, points.w_cov)
    cov = symmetrize(cov + np.asarray(process_noise, dtype=np.float64))
    belief = GaussianBelief(mean, cov)
    return belief, SigmaPointSet(propagated, points.w_mean.copy(), points.w_cov.copy())


def ut_update(
    prior: GaussianBelief,
    propagated: SigmaPointSet,
    obs: ObservationSpec,
    ut: UtConfig,
    y: np.ndarray,
) -> GaussianBelief:
    """Kalman measurement update from the propagated sigma points."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (obs.n_out,):
        raise DimensionMismatch(f"measurement {y.shape} vs observation dim {obs.n_out}")
    y_sigma = propagated.points @ obs.h_matrix.T
    y_hat = propagated.w_mean @ y_sigma
    dev_y = y_sigma - y_hat
    dev_x = propagated.points - prior.mean
    p_yy = (dev_y * propagated.w_cov[:, None]).T @ dev_y + obs.noise_cov
    p_xy = (dev_x * propagated.w_cov[:, None]).T @ dev_y
    p_yy = symmetrize(p_yy)
    gain = solve_spd(p_yy, p_xy.T).T  # K = Pxy Pyy^-1
    mean = prior.mean + gain @ (y - y_hat)
    cov = symmetrize(prior.cov - gain @ p_yy @ gain.T)
    try:
        cholesky_lower(cov)
    except NotPositiveDefinite:
        cov = symmetrize(cov + 1e-12 * np.eye(cov.shape[0]))
        try:
            cholesky_lower(cov)
        except NotPositiveDefinite as exc:
            raise CovarianceCollapse(f"updated covariance not SPD: {exc}") from exc
    return GaussianBelief(mean, cov)


@dataclass(frozen=True)
class FilterStep:
    """Belief after one filter step (post-update when a measurement arrived)."""

    step: int
    belief: GaussianBelief
    updated: bool


def run_filter(
    predictor,
    config: UkfConfig,
    belief0: GaussianBelief,
    measurements: dict,
    n_steps: int,
) -> list[FilterStep]:
    """Alg-style loop: regenerate sigma points, predict, update when measured.

    ``measurements`` maps step index (1-based, on the prediction grid) to a
    measurement vector; steps without an entry skip the update.
    """
    belief = belief0
    out = []
    for step in range(1, n_steps + 1):
        points = make_sigma_points(belief, config.ut)
        try:
            belief, propagated = ut_predict(points, predictor, config.process_noise)
            updated = False
            if step in measurements:
                belief = ut_update(belief, propagated, config.obs, config.ut, measurements[step])
                updated = True
        except (NonFiniteState, NotPositiveDefinite, CovarianceCollapse) as exc:
            raise type(exc)(f"filter step {step}: {exc}") from exc
        out.append(FilterStep(step, belief, updated))
    return out

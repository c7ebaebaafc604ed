"""Test-only predictors and analytic oracles shared across the suite."""

import numpy as np

from hamassim import systems
from hamassim.models import NormalizationStats


def analytic_mass_spring(x0, times, k=5.0, m=1.0):
    """Closed-form oscillator flow for each t in times; returns (T, 2)."""
    w = np.sqrt(k / m)
    q0, p0 = x0
    t = np.asarray(times, dtype=np.float64)
    q = q0 * np.cos(w * t) + (p0 / (m * w)) * np.sin(w * t)
    p = -q0 * m * w * np.sin(w * t) + p0 * np.cos(w * t)
    return np.stack([q, p], axis=1)


class ExactFlowPredictor:
    """One-step map equal to the exact mass-spring flow over dt."""

    def __init__(self, dt, k=5.0, m=1.0):
        self.dt = dt
        self.k = k
        self.m = m
        self.norm = NormalizationStats.identity(2)
        w = np.sqrt(k / m)
        c, s = np.cos(w * dt), np.sin(w * dt)
        self._a = np.array([[c, s / (m * w)], [-m * w * s, c]])

    def step_normalized(self, xn):
        return xn @ self._a.T

    def step_batch(self, x):
        return np.asarray(x, dtype=np.float64) @ self._a.T

    def step(self, x):
        return self.step_batch(np.asarray(x)[None, :])[0]


class ExactFieldPredictor:
    """RK4 over the true Hamiltonian field, mimicking the learned map.

    Uses identity normalization and the absorbed-time convention: the
    normalized field is dt * J grad(H), stepped with RK4 step 1/substeps.
    """

    kind = "hnn"

    def __init__(self, system, dt, substeps=1):
        self.system = system
        self.dt = dt
        self.substeps = substeps
        self.norm = NormalizationStats.identity(2 * system.dof)
        self.window = 1

    @property
    def dof(self):
        return self.system.dof

    @property
    def input_dim(self):
        return 2 * self.system.dof

    def energy(self, states):
        return systems.hamiltonian_batch(self.system, np.atleast_2d(states))

    def field_normalized(self, xn):
        xn = np.atleast_2d(xn)
        out = np.empty_like(xn)
        for i, row in enumerate(xn):
            out[i] = self.dt * systems.vector_field(self.system, row)
        return out

    def step_normalized(self, xn):
        h = 1.0 / self.substeps
        x = np.asarray(xn, dtype=np.float64)
        for _ in range(self.substeps):
            k1 = self.field_normalized(x)
            k2 = self.field_normalized(x + (0.5 * h) * k1)
            k3 = self.field_normalized(x + (0.5 * h) * k2)
            k4 = self.field_normalized(x + h * k3)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return x

    def step_batch(self, x):
        return self.step_normalized(x)

    def step(self, x):
        return self.step_batch(np.asarray(x)[None, :])[0]


class ExactMassSpringEnergy:
    """Energy-model stand-in with the true mass-spring Hamiltonian."""

    def __init__(self, k=5.0, m=1.0):
        self.k = k
        self.m = m
        self.input_dim = 2

    def energy(self, states):
        states = np.atleast_2d(states)
        return states[:, 1] ** 2 / (2 * self.m) + 0.5 * self.k * states[:, 0] ** 2

    def build_energy(self, tape, xv):
        from hamassim import autodiff as ad

        q = ad.dot(xv, np.array([1.0, 0.0]))
        p = ad.dot(xv, np.array([0.0, 1.0]))
        return p * p * (0.5 / self.m) + q * q * (0.5 * self.k)


class LinearPredictor:
    """x -> A x, the UT exactness / Kalman equivalence workhorse."""

    def __init__(self, a):
        self.a = np.asarray(a, dtype=np.float64)

    def step_batch(self, x):
        return np.asarray(x, dtype=np.float64) @ self.a.T

    def step(self, x):
        return self.a @ np.asarray(x, dtype=np.float64)


class IdentityPredictor(LinearPredictor):
    def __init__(self, dim):
        super().__init__(np.eye(dim))


def kalman_posterior(mean, cov, a, q, h, r, y):
    """Closed-form linear Kalman predict + update step."""
    mean_pred = a @ mean
    cov_pred = a @ cov @ a.T + q
    s = h @ cov_pred @ h.T + r
    gain = cov_pred @ h.T @ np.linalg.inv(s)
    mean_post = mean_pred + gain @ (y - h @ mean_pred)
    cov_post = (np.eye(len(mean)) - gain @ h) @ cov_pred
    return (mean_pred, cov_pred), (mean_post, cov_post)


def random_spd(rng, dim, scale=1.0, eps=1e-3):
    m = rng.standard_normal((dim, dim))
    return scale * (m.T @ m + eps * np.eye(dim))


# ---------------------------------------------------------------------------
# random differentiable programs over every tape primitive
# ---------------------------------------------------------------------------


class _NumpyOps:
    """Numpy twin of the tape API, with the same arcsin/arccos clamp."""

    _CLIP = 1.0 - 1e-12

    @staticmethod
    def tanh(v):
        return np.tanh(v)

    @staticmethod
    def sin(v):
        return np.sin(v)

    @staticmethod
    def cos(v):
        return np.cos(v)

    @staticmethod
    def exp(v):
        return np.exp(v)

    @staticmethod
    def log(v):
        return np.log(v)

    @staticmethod
    def sqrt(v):
        return np.sqrt(v)

    @staticmethod
    def arcsin(v):
        return np.arcsin(np.clip(v, -_NumpyOps._CLIP, _NumpyOps._CLIP))

    @staticmethod
    def arccos(v):
        return np.arccos(np.clip(v, -_NumpyOps._CLIP, _NumpyOps._CLIP))

    @staticmethod
    def minimum(v, c):
        return np.minimum(v, c)

    @staticmethod
    def maximum(v, c):
        return np.maximum(v, c)

    @staticmethod
    def vsum(v, axis=None):
        return np.sum(v, axis=axis)

    @staticmethod
    def dot(a, b):
        return np.dot(a, b)


_UNARY_OPS = [
    lambda v, m, c: m.tanh(v),
    lambda v, m, c: m.sin(v * c),
    lambda v, m, c: m.cos(v + c),
    lambda v, m, c: m.exp(m.tanh(v)),
    lambda v, m, c: m.log(v * v + 0.5),
    lambda v, m, c: m.sqrt(v * v + 0.5),
    lambda v, m, c: (v * v + 0.5) ** 1.7,
    lambda v, m, c: m.arcsin(m.tanh(v)),
    lambda v, m, c: m.arccos(m.tanh(v * c)),
    lambda v, m, c: m.minimum(v, c),
    lambda v, m, c: m.maximum(v, -c),
    lambda v, m, c: -v,
]

_BINARY_OPS = [
    lambda a, b, m: a + b,
    lambda a, b, m: a - b,
    lambda a, b, m: a * b,
    lambda a, b, m: a / (b * b + 0.7),
]


def random_program(rng, depth=6):
    """A plan of op choices; apply with apply_program at any input point."""
    plan = {
        "c0": rng.uniform(-1.0, 1.0, size=3),
        "c1": rng.uniform(-1.0, 1.0, size=3),
        "steps": [],
    }
    n_pool = 2
    for _ in range(rng.integers(2, depth + 1)):
        if rng.random() < 0.6:
            plan["steps"].append(
                ("u", int(rng.integers(len(_UNARY_OPS))), int(rng.integers(n_pool)), float(rng.uniform(0.2, 1.5)))
            )
        else:
            plan["steps"].append(
                ("b", int(rng.integers(len(_BINARY_OPS))), int(rng.integers(n_pool)), int(rng.integers(n_pool)))
            )
        n_pool += 1
    return plan


def apply_program(plan, x, mode="np"):
    """Evaluate a plan at vector input x through numpy or the tape."""
    if mode == "np":
        m = _NumpyOps
        xv = np.asarray(x, dtype=np.float64)
        pool = [m.dot(xv, plan["c0"]), m.vsum(xv * plan["c1"])]
    else:
        from hamassim import autodiff as ad

        m = ad
        tape = ad.Tape()
        xv = tape.input(np.asarray(x, dtype=np.float64))
        pool = [ad.dot(xv, plan["c0"]), ad.vsum(xv * plan["c1"])]
    for step in plan["steps"]:
        if step[0] == "u":
            _, op, src, const = step
            pool.append(_UNARY_OPS[op](pool[src], m, const))
        else:
            _, op, a, b = step
            pool.append(_BINARY_OPS[op](pool[a], pool[b], m))
    out = pool[-1]
    for v in pool[:-1]:
        out = out + v * 1e-3  # keep every node alive in the gradient
    if mode == "np":
        return float(out)
    return out, tape


def central_difference(f, x, i, h):
    step = np.zeros_like(x)
    step[i] = h
    return (f(x + step) - f(x - step)) / (2 * h)


def gradcheck_program(plan, x, h=1e-6, rtol=1e-6, atol=1e-9):
    """Reverse-mode vs central finite differences; returns worst excess.

    The oracle Richardson-extrapolates the h and 2h central differences,
    which removes the O(h^2) truncation term that deep compositions with
    large third derivatives would otherwise leak into the comparison.
    """
    from hamassim import autodiff as ad

    out, tape = apply_program(plan, x, mode="var")
    grad = ad.backward(tape, out)[0]
    f = lambda z: apply_program(plan, z)
    worst = 0.0
    for i in range(len(x)):
        d1 = central_difference(f, x, i, h)
        d2 = central_difference(f, x, i, 2 * h)
        fd = (4.0 * d1 - d2) / 3.0
        err = abs(grad[i] - fd)
        tol = atol + rtol * max(abs(fd), abs(grad[i]))
        worst = max(worst, err - tol)
    return worst

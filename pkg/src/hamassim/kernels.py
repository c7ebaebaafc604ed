"""Hot numeric kernels, JIT-compiled with numba when enabled.

Each kernel is plain Python/numpy that numba can compile in nopython mode;
with ``HAMASSIM_NUMBA=0`` (or numba missing) the same source runs as-is.
The generic, callable-field integrators in :mod:`hamassim.integrators` are
the reference implementations these kernels are tested against.

Status codes: propagation kernels return (trajectory, status) with
status < 0 for success and the failing step index otherwise, so wrappers
can raise the right exception outside nopython mode.
"""

import numpy as np

from ._accel import maybe_njit

_SQRT3_6 = np.sqrt(3.0) / 6.0


@maybe_njit(nogil=True)
def gl4_mass_spring_propagate(x0, dt, n_steps, k, m, fp_tol, fp_max_iter):
    """Gauss-Legendre-4 trajectory of the mass-spring system.

    Two-stage implicit RK solved by fixed-point iteration on the stage
    slopes, initialized at the explicit value f(x).
    """
    a11 = 0.25
    a12 = 0.25 - _SQRT3_6
    a21 = 0.25 + _SQRT3_6
    a22 = 0.25
    out = np.empty((n_steps + 1, 2))
    q = x0[0]
    p = x0[1]
    out[0, 0] = q
    out[0, 1] = p
    for step in range(n_steps):
        k1q = p / m
        k1p = -k * q
        k2q = k1q
        k2p = k1p
        converged = False
        for _ in range(fp_max_iter):
            y1q = q + dt * (a11 * k1q + a12 * k2q)
            y1p = p + dt * (a11 * k1p + a12 * k2p)
            y2q = q + dt * (a21 * k1q + a22 * k2q)
            y2p = p + dt * (a21 * k1p + a22 * k2p)
            n1q = y1p / m
            n1p = -k * y1q
            n2q = y2p / m
            n2p = -k * y2q
            diff = max(
                max(abs(n1q - k1q), abs(n1p - k1p)),
                max(abs(n2q - k2q), abs(n2p - k2p)),
            )
            k1q, k1p, k2q, k2p = n1q, n1p, n2q, n2p
            if diff <= fp_tol:
                converged = True
                break
        if not converged:
            return out, step
        q = q + dt * 0.5 * (k1q + k2q)
        p = p + dt * 0.5 * (k1p + k2p)
        out[step + 1, 0] = q
        out[step + 1, 1] = p
    return out, -1


@maybe_njit(inline="always")
def j2_potential_gradient(qx, qy, qz, mu, r_eq, j2, m):
    """Closed-form dU/dq for the J2-truncated zonal potential."""
    r2 = qx * qx + qy * qy + qz * qz
    r = np.sqrt(r2)
    r3 = r2 * r
    r5 = r3 * r2
    gx = mu * m * qx / r3
    gy = mu * m * qy / r3
    gz = mu * m * qz / r3
    if j2 != 0.0:
        c3 = 1.5 * mu * m * j2 * r_eq * r_eq
        z2_r2 = qz * qz / r2
        gx += c3 * qx * (1.0 - 5.0 * z2_r2) / r5
        gy += c3 * qy * (1.0 - 5.0 * z2_r2) / r5
        gz += c3 * qz * (3.0 - 5.0 * z2_r2) / r5
    return gx, gy, gz


@maybe_njit(nogil=True)
def composition_two_body_propagate(x0, dt, n_steps, substeps, gammas, mu, r_eq, j2, m):
    """Symplectic-composition trajectory of the two-body + J2 system.

    Each output interval dt is integrated with ``substeps`` applications of
    the leapfrog composition with substep fractions ``gammas``.
    """
    out = np.empty((n_steps + 1, 6))
    qx, qy, qz = x0[0], x0[1], x0[2]
    px, py, pz = x0[3], x0[4], x0[5]
    out[0, 0], out[0, 1], out[0, 2] = qx, qy, qz
    out[0, 3], out[0, 4], out[0, 5] = px, py, pz
    h_sub = dt / substeps
    for step in range(n_steps):
        for _ in range(substeps):
            for g in gammas:
                h = g * h_sub
                gx, gy, gz = j2_potential_gradient(qx, qy, qz, mu, r_eq, j2, m)
                px -= 0.5 * h * gx
                py -= 0.5 * h * gy
                pz -= 0.5 * h * gz
                qx += h * px / m
                qy += h * py / m
                qz += h * pz / m
                gx, gy, gz = j2_potential_gradient(qx, qy, qz, mu, r_eq, j2, m)
                px -= 0.5 * h * gx
                py -= 0.5 * h * gy
                pz -= 0.5 * h * gz
        if not (
            np.isfinite(qx)
            and np.isfinite(qy)
            and np.isfinite(qz)
            and np.isfinite(px)
            and np.isfinite(py)
            and np.isfinite(pz)
        ):
            return out, step
        out[step + 1, 0], out[step + 1, 1], out[step + 1, 2] = qx, qy, qz
        out[step + 1, 3], out[step + 1, 4], out[step + 1, 5] = px, py, pz
    return out, -1


@maybe_njit()
def hnn_rollout_batch(x0n, weights, biases, h, substeps, n_steps, dof):
    """Autoregressive HNN rollout in normalized coordinates.

    x0n: (M, 2n) normalized start states.  weights/biases: per-layer tuples
    for the scalar-output energy net.  Each data interval is one RK4 step
    of size ``h`` (repeated ``substeps`` times) over the field J grad(H).
    Returns (M, n_steps + 1, 2n).
    """
    m_batch = x0n.shape[0]
    dim = x0n.shape[1]
    out = np.empty((m_batch, n_steps + 1, dim))
    x = x0n.copy()
    out[:, 0, :] = x
    n_layers = len(weights)
    for step in range(n_steps):
        for _ in range(substeps):
            k1 = _hnn_field(x, weights, biases, n_layers, dof)
            k2 = _hnn_field(x + (0.5 * h) * k1, weights, biases, n_layers, dof)
            k3 = _hnn_field(x + (0.5 * h) * k2, weights, biases, n_layers, dof)
            k4 = _hnn_field(x + h * k3, weights, biases, n_layers, dof)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[:, step + 1, :] = x
    return out


@maybe_njit(inline="always")
def _hnn_field(x, weights, biases, n_layers, dof):
    """J grad(H_theta) for a batch of normalized states."""
    # forward pass, keeping hidden activations for the input-gradient sweep
    acts = []
    h = x
    for i in range(n_layers - 1):
        h = np.tanh(np.dot(h, weights[i]) + biases[i])
        acts.append(h)
    # d(out)/d(input): backpropagate a ones-seed through the affine/tanh stack
    g = (1.0 - acts[n_layers - 2] * acts[n_layers - 2]) * weights[n_layers - 1][:, 0]
    for i in range(n_layers - 2, 0, -1):
        g = np.dot(g, weights[i].T) * (1.0 - acts[i - 1] * acts[i - 1])
    g = np.dot(g, weights[0].T)
    # J grad(H) = (dH/dp, -dH/dq)
    field = np.empty_like(g)
    field[:, :dof] = g[:, dof:]
    field[:, dof:] = -g[:, :dof]
    return field

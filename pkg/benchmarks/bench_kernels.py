#!/usr/bin/env python3
"""Benchmark the numba-compiled kernels against their pure-numpy fallbacks.

The jitted function and its ``py_func`` share one source, so this measures
exactly the JIT speedup on the package's hot loops:

* GL4 mass-spring trajectory generation
* Kahan-Li-8 two-body + J2 trajectory generation
* batched HNN rollout (inference / UKF inner loop)

Run:  python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from hamassim import integrators, kernels, models, training
from hamassim._accel import NUMBA_ENABLED, py_func_of
from hamassim import systems


def timeit(fn, *args, repeat=3, warmup=1):
    for _ in range(warmup):
        fn(*args)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_gl4():
    x0 = np.array([0.7, -0.3])
    args = (x0, 0.01, 100_000, 5.0, 1.0, 1e-12, 50)
    return (
        timeit(kernels.gl4_mass_spring_propagate, *args),
        timeit(py_func_of(kernels.gl4_mass_spring_propagate), *args, repeat=1),
    )


def bench_composition():
    spec = systems.TwoBodyJ2()
    x0 = training.orbit_elements_to_state(spec, 550.0, 0.75, np.deg2rad(63.0), 1.0, 2.0, 3.0)
    args = (x0, 60.0, 2000, 2, integrators.KAHAN_LI8, spec.mu, spec.r_eq, spec.j2, spec.m)
    return (
        timeit(kernels.composition_two_body_propagate, *args),
        timeit(py_func_of(kernels.composition_two_body_propagate), *args, repeat=1),
    )


def bench_hnn_rollout():
    rng = np.random.default_rng(0)
    net = models.MlpParams.init([2, 32, 32, 1], rng)
    x0 = rng.uniform(-0.5, 0.5, size=(16, 2))
    args = (x0, tuple(net.weights), tuple(net.biases), 1.0, 1, 1000, 1)
    return (
        timeit(kernels.hnn_rollout_batch, *args),
        timeit(py_func_of(kernels.hnn_rollout_batch), *args, repeat=1),
    )


def main():
    if not NUMBA_ENABLED:
        print("numba is disabled (HAMASSIM_NUMBA=0 or not installed); nothing to compare")
        return
    rows = [
        ("gl4 mass-spring, 1e5 steps", *bench_gl4()),
        ("kahanli8 two-body J2, 2000 steps x2 substeps", *bench_composition()),
        ("hnn rollout, batch 16 x 1000 steps", *bench_hnn_rollout()),
    ]
    print(f"{'kernel':<46s} {'numba':>10s} {'numpy':>10s} {'speedup':>9s}")
    for name, jit_t, py_t in rows:
        print(f"{name:<46s} {jit_t * 1e3:>8.1f}ms {py_t * 1e3:>8.1f}ms {py_t / jit_t:>8.1f}x")


if __name__ == "__main__":
    main()

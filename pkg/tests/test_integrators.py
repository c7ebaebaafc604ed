import numpy as np
import pytest

from hamassim import integrators, kernels, systems
from hamassim._accel import NUMBA_ENABLED, py_func_of
from hamassim.errors import FixedPointDiverged, NonFiniteState
from helpers import analytic_mass_spring


MS = systems.MassSpring()
OMEGA = np.sqrt(5.0)


def fitted_slope(dts, errors):
    return np.polyfit(np.log(dts), np.log(errors), 1)[0]


def test_rk4_zero_field():
    x = np.array([1.0, -2.0])
    assert np.array_equal(integrators.rk4_step(lambda z: np.zeros_like(z), x, 0.1), x)


def test_rk4_exponential_taylor_value():
    got = integrators.rk4_step(lambda x: x, np.array([1.0]), 0.1)[0]
    expect = 1 + 0.1 + 0.1**2 / 2 + 0.1**3 / 6 + 0.1**4 / 24  # 1.1051708333...
    assert got == expect
    assert f"{got:.10f}" == "1.1051708333"


def test_rk4_long_run_against_analytic():
    field = lambda x: systems.vector_field(MS, x)
    x = np.array([1.0, 0.0])
    for _ in range(1000):
        x = integrators.rk4_step(field, x, 0.01)
    expect = analytic_mass_spring([1.0, 0.0], [10.0])[0]
    assert np.max(np.abs(x - expect)) <= 1e-6


def test_rk4_non_finite_state():
    with pytest.raises(NonFiniteState):
        integrators.rk4_step(lambda x: x * np.inf, np.array([1.0]), 0.1)


def test_gl4_zero_field_converges_first_iteration():
    x = np.array([0.3, 0.4])
    got = integrators.gl4_step(lambda z: np.zeros_like(z), x, 0.1, fp_max_iter=1)
    assert np.array_equal(got, x)


def test_gl4_linear_field_is_pade22():
    z = 0.1
    got = integrators.gl4_step(lambda x: x, np.array([1.0]), z, fp_tol=1e-15)[0]
    pade = (1 + z / 2 + z * z / 12) / (1 - z / 2 + z * z / 12)
    assert abs(got - pade) <= 1e-14


def test_gl4_diverges_with_tiny_iteration_cap():
    field = lambda x: systems.vector_field(MS, x)
    with pytest.raises(FixedPointDiverged):
        integrators.gl4_step(field, np.array([1.0, 0.0]), 0.01, fp_tol=1e-14, fp_max_iter=2)


def test_gl4_energy_conservation_short():
    spec = integrators.gl4(fp_tol=1e-14)
    traj = integrators.propagate(spec, MS, np.array([1.0, 0.0]), 0.01, 10_000)
    h = systems.hamiltonian_batch(MS, traj.states)
    assert np.max(np.abs(h - h[0])) / abs(h[0]) <= 1e-9


def test_composition_leapfrog_energy_bounded():
    spec = integrators.composition("leapfrog")
    traj = integrators.propagate(spec, MS, np.array([1.0, 0.0]), 0.01, 10_000)
    h = systems.hamiltonian_batch(MS, traj.states)
    # leapfrog energy error oscillates at O(dt^2), no secular drift
    assert np.max(np.abs(h - h[0])) / abs(h[0]) <= 1e-3
    first = np.max(np.abs(h[:100] - h[0]))
    last = np.max(np.abs(h[-100:] - h[0]))
    assert last <= 2.0 * max(first, 1e-12)


def test_composition_time_reversibility():
    x = np.array([0.8, -0.5])
    for name in ("leapfrog", "yoshida4", "kahanli8"):
        coeffs, _ = integrators.COMPOSITIONS[name]
        fwd = integrators.symplectic_composition_step(MS, x, 0.05, coeffs)
        back = integrators.symplectic_composition_step(MS, fwd, -0.05, coeffs[::-1])
        assert np.max(np.abs(back - x)) <= 1e-12


def test_composition_coefficients_sum_to_one():
    for name, (coeffs, order) in integrators.COMPOSITIONS.items():
        assert abs(coeffs.sum() - 1.0) <= 1e-12, name


def test_empirical_orders():
    x0 = np.array([1.0, 0.0])

    def global_error(stepper, dt):
        n = int(round(1.0 / dt))
        traj = integrators.propagate(stepper, MS, x0, dt, n)
        expect = analytic_mass_spring(x0, traj.times)
        return np.max(np.abs(traj.states[-1] - expect[-1]))

    cases = [
        (integrators.rk4(), [0.02, 0.01, 0.005], 4.0, 0.2),
        (integrators.gl4(fp_tol=1e-14), [0.02, 0.01, 0.005], 4.0, 0.2),
        (integrators.composition("yoshida4"), [4e-3, 2e-3, 1e-3], 4.0, 0.3),
        (integrators.composition("yoshida6"), [0.04, 0.02, 0.01], 6.0, 0.5),
        (integrators.composition("kahanli8"), [0.14, 0.10, 0.07], 8.0, 0.7),
    ]
    for stepper, dts, order, tol in cases:
        errs = [global_error(stepper, dt) for dt in dts]
        slope = fitted_slope(dts, errs)
        assert abs(slope - order) <= tol, f"{stepper.kind}/{stepper.order}: slope {slope}"


def test_propagate_single_step_and_counts():
    spec = integrators.rk4()
    field = lambda x: systems.vector_field(MS, x)
    traj = integrators.propagate(spec, field, np.array([1.0, 0.0]), 0.1, 1)
    assert len(traj) == 2
    assert np.array_equal(traj.states[1], integrators.rk4_step(field, np.array([1.0, 0.0]), 0.1))
    # paper-scale sampling: [0, 10] s at 0.01 s -> 1001 samples
    traj = integrators.propagate(integrators.gl4(), MS, np.array([0.3, 0.1]), 0.01, 1000)
    assert len(traj) == 1001
    assert traj.times[-1] == pytest.approx(10.0)


def test_propagate_continuation_is_bit_identical():
    spec = integrators.gl4()
    x0 = np.array([0.9, -0.2])
    full = integrators.propagate(spec, MS, x0, 0.01, 50)
    first = integrators.propagate(spec, MS, x0, 0.01, 30)
    rest = integrators.propagate(spec, MS, first.states[-1], 0.01, 20)
    assert np.array_equal(full.states[:31], first.states)
    assert np.array_equal(full.states[30:], rest.states)


def test_propagate_rejects_bad_args():
    with pytest.raises(ValueError):
        integrators.propagate(integrators.rk4(), MS, np.array([1.0, 0.0]), 0.1, 0)
    with pytest.raises(ValueError):
        integrators.propagate(
            integrators.composition("leapfrog"), lambda x: x, np.array([1.0, 0.0]), 0.1, 5
        )
    with pytest.raises(ValueError):
        integrators.StepperSpec(kind="composition", coefficients=np.array([0.5, 0.4]))


@pytest.mark.skipif(not NUMBA_ENABLED, reason="numba disabled")
def test_numba_kernels_match_python_fallback():
    x0 = np.array([0.7, -0.3])
    jit_traj, s1 = kernels.gl4_mass_spring_propagate(x0, 0.01, 500, 5.0, 1.0, 1e-12, 50)
    py_traj, s2 = py_func_of(kernels.gl4_mass_spring_propagate)(x0, 0.01, 500, 5.0, 1.0, 1e-12, 50)
    assert s1 == s2 == -1
    assert np.array_equal(jit_traj, py_traj)

    orbit = systems.TwoBodyJ2()
    from hamassim.training import orbit_elements_to_state

    x0o = orbit_elements_to_state(orbit, 550.0, 0.75, np.deg2rad(63.0), 1.0, 2.0, 3.0)
    args = (x0o, 60.0, 200, 2, integrators.KAHAN_LI8, orbit.mu, orbit.r_eq, orbit.j2, orbit.m)
    jit_traj, s1 = kernels.composition_two_body_propagate(*args)
    py_traj, s2 = py_func_of(kernels.composition_two_body_propagate)(*args)
    assert s1 == s2 == -1
    assert np.array_equal(jit_traj, py_traj)


def test_fast_path_matches_generic_gl4():
    x0 = np.array([0.4, 0.9])
    fast = integrators.propagate(integrators.gl4(), MS, x0, 0.01, 200)
    generic = integrators.StepperSpec(kind="gl4")
    states = [x0]
    x = x0
    for _ in range(200):
        x = integrators.gl4_step(lambda z: systems.vector_field(MS, z), x, 0.01)
        states.append(x)
    assert np.allclose(fast.states, np.array(states), rtol=0, atol=1e-14)


def test_fast_path_matches_generic_composition():
    orbit = systems.TwoBodyJ2()
    from hamassim.training import orbit_elements_to_state

    x0 = orbit_elements_to_state(orbit, 545.0, 0.72, np.deg2rad(61.0), 0.3, 0.9, 2.2)
    stepper = integrators.composition("yoshida4")
    fast = integrators.propagate(stepper, orbit, x0, 60.0, 20)
    x = x0
    states = [x0]
    for _ in range(20):
        x = integrators.symplectic_composition_step(orbit, x, 60.0, integrators.YOSHIDA4)
        states.append(x)
    assert np.allclose(fast.states, np.array(states), rtol=1e-13, atol=1e-9)

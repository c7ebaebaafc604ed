import dataclasses

import numpy as np
import pytest

from hamassim import autodiff as ad
from hamassim import models, systems
from hamassim.errors import DimensionMismatch, MalformedCheckpoint
from helpers import ExactFieldPredictor, analytic_mass_spring


def small_net(rng, sizes=(2, 8, 8, 1)):
    return models.MlpParams.init(list(sizes), rng)


def hnn_predictor(rng, dt=0.01, sizes=(2, 8, 8, 1)):
    return models.Predictor(
        kind="hnn",
        net=small_net(rng, sizes),
        norm=models.NormalizationStats(np.array([-1.5, -3.0]), np.array([1.5, 3.0])),
        dt=dt,
    )


def test_forward_mlp_zero_network():
    net = models.MlpParams(
        [np.zeros((2, 4)), np.zeros((4, 1))], [np.zeros(4), np.zeros(1)]
    )
    assert np.array_equal(models.forward_mlp(net, np.array([0.3, -0.7])), [0.0])


def test_forward_mlp_single_linear_identity():
    net = models.MlpParams([np.eye(3)], [np.zeros(3)])
    x = np.array([0.1, -0.5, 2.0])
    assert np.array_equal(models.forward_mlp(net, x), x)


def test_forward_mlp_hand_computed_1_2_1():
    w1 = np.array([[0.5, -1.0]])
    b1 = np.array([0.2, 0.1])
    w2 = np.array([[1.5], [-0.7]])
    b2 = np.array([0.05])
    net = models.MlpParams([w1, w2], [b1, b2])
    x = 1.0
    hidden = np.tanh(np.array([0.5 * x + 0.2, -1.0 * x + 0.1]))
    expect = 1.5 * hidden[0] - 0.7 * hidden[1] + 0.05
    got = models.forward_mlp(net, np.array([x]))[0]
    assert abs(got - expect) <= 1e-12


def test_forward_mlp_dimension_mismatch(rng):
    with pytest.raises(DimensionMismatch):
        models.forward_mlp(small_net(rng), np.array([1.0, 2.0, 3.0]))


def test_mlp_input_gradient_matches_tape(rng):
    net = small_net(rng)
    x = rng.uniform(-1, 1, size=(4, 2))
    closed = models.mlp_input_gradient(net, x)
    for i in range(len(x)):
        out, tape = ad.record(lambda v: _forward_scalar(net, v), [x[i]])
        g = ad.backward(tape, out)[0]
        assert np.allclose(closed[i], g, rtol=1e-13, atol=1e-15)


def _forward_scalar(net, v):
    h = v
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        h = ad.tanh(ad.dot(h, w) + b)
    return ad.dot(h, net.weights[-1][:, 0]) + net.biases[-1][0]


def test_normalization_round_trip(rng):
    norm = models.NormalizationStats(np.array([-2.0, 0.5]), np.array([3.0, 1.5]))
    x = rng.uniform([-2.0, 0.5], [3.0, 1.5], size=(50, 2))
    back = norm.denormalize(norm.normalize(x))
    assert np.max(np.abs(back - x)) <= 1e-12
    assert np.allclose(norm.normalize(norm.lo), -1.0)
    assert np.allclose(norm.normalize(norm.hi), 1.0)


def test_normalization_rejects_constant_dimension():
    with pytest.raises(ValueError):
        models.NormalizationStats(np.array([1.0, 0.0]), np.array([1.0, 2.0]))


def test_step_hnn_zero_network_is_identity(rng):
    pred = hnn_predictor(rng)
    zero_net = models.MlpParams(
        [np.zeros_like(w) for w in pred.net.weights],
        [np.zeros_like(b) for b in pred.net.biases],
    )
    pred = dataclasses.replace(pred, net=zero_net)
    x = rng.uniform(-1, 1, size=(3, 2))
    assert np.array_equal(pred.step_batch(x), x)


def test_step_hnn_exact_hamiltonian_matches_analytic_flow():
    pred = ExactFieldPredictor(systems.MassSpring(), dt=0.01)
    got = pred.step(np.array([1.0, 0.0]))
    expect = analytic_mass_spring([1.0, 0.0], [0.01])[0]
    # one RK4 truncation at omega*dt = sqrt(5)/100 sits right at 1e-10
    assert np.max(np.abs(got - expect)) <= 2e-10


def test_step_hnn_energy_error_scales_like_rk4(rng):
    # per-step true-energy drift shrinks at least like dt^5 under halvings
    spec = systems.MassSpring()
    x = np.array([0.9, 0.3])
    dts = [0.2, 0.1, 0.05]
    errs = []
    for dt in dts:
        pred = ExactFieldPredictor(spec, dt=dt)
        h0 = systems.hamiltonian(spec, x)
        h1 = systems.hamiltonian(spec, pred.step(x))
        errs.append(abs(h1 - h0))
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert slope >= 4.7


def test_step_mlp_zero_network_maps_to_midpoint(rng):
    norm = models.NormalizationStats(np.array([-1.0, 1.0]), np.array([3.0, 2.0]))
    net = models.MlpParams(
        [np.zeros((2, 4)), np.zeros((4, 2))], [np.zeros(4), np.zeros(2)]
    )
    pred = models.Predictor(kind="mlp", net=net, norm=norm, dt=0.1)
    got = pred.step(np.array([2.0, 1.4]))
    assert np.array_equal(got, norm.center)


def test_step_mlp_identity_head(rng):
    norm = models.NormalizationStats(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    net = models.MlpParams([np.eye(2)], [np.zeros(2)])
    pred = models.Predictor(kind="mlp", net=net, norm=norm, dt=0.1)
    x = rng.uniform(-1, 1, size=2)
    assert np.allclose(pred.step(x), x, rtol=0, atol=1e-15)


def test_step_node_equals_rk4_of_true_field():
    from hamassim.integrators import rk4_step

    spec = systems.MassSpring()
    pred = ExactFieldPredictor(spec, dt=0.02)
    x = np.array([0.4, -0.8])
    got = pred.step(x)
    expect = rk4_step(lambda z: systems.vector_field(spec, z), x, 0.02)
    assert np.allclose(got, expect, rtol=1e-14, atol=1e-16)


def test_rollout_composition_law(rng):
    pred = hnn_predictor(rng)
    x0 = rng.uniform(-1, 1, size=2)
    full = models.rollout(pred, x0, 7)
    head = models.rollout(pred, x0, 3)
    tail = models.rollout(pred, head.states[-1], 4)
    assert np.allclose(full.states[:4], head.states, rtol=0, atol=1e-15)
    assert np.allclose(full.states[3:], tail.states, rtol=0, atol=1e-15)


def test_rollout_exact_predictor_long_horizon():
    pred = ExactFieldPredictor(systems.MassSpring(), dt=0.01)
    traj = models.rollout(pred, np.array([1.0, 0.0]), 1000)
    expect = analytic_mass_spring([1.0, 0.0], traj.times)
    pos_rmse = np.sqrt(np.mean((traj.states[:, 0] - expect[:, 0]) ** 2))
    assert pos_rmse <= 1e-6


def test_rollout_batch_matches_numpy_loop(rng):
    pred = hnn_predictor(rng)
    x0 = rng.uniform(-1, 1, size=(4, 2))
    block = models.rollout_batch(pred, x0, 20)
    x = x0
    for step in range(20):
        x = pred.step_batch(x)
        assert np.allclose(block[:, step + 1], x, rtol=0, atol=1e-12)


def test_step_determinism(rng):
    pred = hnn_predictor(rng)
    x = rng.uniform(-1, 1, size=(5, 2))
    assert np.array_equal(pred.step_batch(x), pred.step_batch(x))


def test_field_is_hamiltonian_vector_field(rng):
    # A = J S with S symmetric: check J^-1 (dfield/dx) symmetric by FD
    pred = hnn_predictor(rng)
    j = models.symplectic_matrix(1)
    j_inv = -j
    for _ in range(5):
        xn = rng.uniform(-0.8, 0.8, size=2)
        jac = np.empty((2, 2))
        h = 1e-6
        for col in range(2):
            e = np.zeros(2)
            e[col] = h
            fp = pred.field_normalized((xn + e)[None, :])[0]
            fm = pred.field_normalized((xn - e)[None, :])[0]
            jac[:, col] = (fp - fm) / (2 * h)
        s = j_inv @ jac
        assert np.max(np.abs(s - s.T)) <= 1e-5


def test_field_orthogonal_to_gradient(rng):
    pred = hnn_predictor(rng)
    xn = rng.uniform(-1, 1, size=(6, 2))
    g = models.mlp_input_gradient(pred.net, xn)
    f = pred.field_normalized(xn)
    dots = np.einsum("ij,ij->i", g, f)
    assert np.max(np.abs(dots)) <= 1e-15 * max(1.0, np.max(np.abs(g) * np.abs(f)))


def test_checkpoint_round_trip(tmp_path, rng):
    pred = hnn_predictor(rng)
    pred = dataclasses.replace(pred, window=5, seed=7, system={"kind": "mass_spring", "k": 5.0, "m": 1.0})
    path = tmp_path / "model.json"
    models.save_checkpoint(pred, str(path))
    loaded = models.load_checkpoint(str(path))
    x = rng.uniform(-1, 1, size=(10, 2))
    assert np.array_equal(pred.step_batch(x), loaded.step_batch(x))
    assert loaded.window == 5 and loaded.kind == "hnn" and loaded.seed == 7
    # save -> load -> save is byte-identical
    path2 = tmp_path / "model2.json"
    models.save_checkpoint(loaded, str(path2))
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_truncated_file(tmp_path, rng):
    pred = hnn_predictor(rng)
    path = tmp_path / "model.json"
    models.save_checkpoint(pred, str(path))
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(MalformedCheckpoint):
        models.load_checkpoint(str(path))


def test_checkpoint_missing_field(tmp_path, rng):
    import json

    pred = hnn_predictor(rng)
    path = tmp_path / "model.json"
    models.save_checkpoint(pred, str(path))
    doc = json.loads(path.read_text())
    del doc["weights"]
    path.write_text(json.dumps(doc))
    with pytest.raises(MalformedCheckpoint):
        models.load_checkpoint(str(path))

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrobust import dra, qsim
from qrobust.dra import DepolarizedDra, DraModel
from qrobust.errors import EmptyDatasetError, FormatError, InvalidArgument
from qrobust.qsim import NoiseChannel, NoiseModel

seeds = st.integers(0, 2**32 - 1)


def random_model(seed, layers=4, dim=2, classes=2, ansatz="alternating", noise=None):
    rng = np.random.default_rng(seed)
    return DraModel(rng.uniform(-2, 2, (layers, dim + 1)), dra.label_states(classes), ansatz, noise)


def oracle_forward(model: DraModel, x):
    """Gate-by-gate circuit on the value-level simulator."""
    xa = np.append(x, 1.0)
    state = qsim.ground_state()
    for l, w in enumerate(model.theta, start=1):
        for axis in dra.layer_gates(model.ansatz, l):
            state = qsim.apply_rotation(state, axis, float(w @ xa))
            state = qsim.apply_noise(state, model.noise)
    p = np.array([qsim.projection_probability(state, s) for s in model.label_states])
    if model.noise is not None and model.noise.readout_flip:
        p = qsim.apply_readout_flip(p, model.noise.readout_flip)
    return p / p.sum()


def test_augment():
    np.testing.assert_array_equal(dra.augment([0.3, -0.7]), [0.3, -0.7, 1.0])
    np.testing.assert_array_equal(dra.augment([]), [1.0])
    assert dra.augment(np.zeros(5)).shape == (6,)


def test_zero_theta_is_identity():
    model = DraModel(np.zeros((7, 3)), dra.label_states(2))
    out = dra.forward_batch(model, np.random.default_rng(0).standard_normal((10, 2)))
    np.testing.assert_array_equal(out, np.tile([1.0, 0.0], (10, 1)))


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10))
def test_single_z_layer_keeps_ground(w0, w1, x):
    model = DraModel(np.array([[w0, w1]]), dra.label_states(2))
    np.testing.assert_allclose(dra.forward(model, [x]), [1.0, 0.0], atol=1e-15)


def test_second_layer_flip():
    model = DraModel(np.array([[0.4, 0.2], [0.0, math.pi]]), dra.label_states(2))
    np.testing.assert_allclose(dra.forward(model, [1.7]), [0.0, 1.0], atol=1e-15)


def test_predict_tie_rule():
    assert dra.predict_from_probabilities([0.9, 0.1]) == 0
    assert dra.predict_from_probabilities([0.5, 0.5]) == 0
    assert dra.predict_from_probabilities([0.2, 0.3, 0.5]) == 2
    np.testing.assert_array_equal(dra.predict_from_probabilities(np.array([[0.1, 0.9], [0.5, 0.5]])), [1, 0])


def test_layer_parity():
    assert dra.layer_gates("alternating", 1) == ("z",)
    assert dra.layer_gates("alternating", 2) == ("y",)
    assert dra.layer_gates("zy_pair", 3) == ("y", "z")
    with pytest.raises(InvalidArgument):
        dra.layer_gates("xx", 1)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_label_states_pure_and_separated(n):
    states = dra.label_states(n)
    assert len(states) == n and all(s.is_pure() for s in states)
    vecs = np.array([s.bloch() for s in states])
    dots = vecs @ vecs.T
    off = dots[~np.eye(n, dtype=bool)]
    np.testing.assert_allclose(off, -1.0 / (n - 1), atol=1e-12)


def test_label_states_range():
    with pytest.raises(InvalidArgument):
        dra.label_states(5)


@given(seeds, st.sampled_from(dra.ANSATZE), st.sampled_from([2, 3, 4]),
       st.sampled_from(["noiseless", "device_like"]))
@settings(max_examples=40)
def test_forward_matches_gate_oracle(seed, ansatz, classes, preset):
    model = random_model(seed, ansatz=ansatz, classes=classes, noise=qsim.noise_preset(preset))
    x = np.random.default_rng(seed + 1).standard_normal(2)
    np.testing.assert_allclose(dra.forward(model, x), oracle_forward(model, x), atol=1e-12)


@given(seeds, st.integers(0, 3), st.integers(-3, 3))
@settings(max_examples=40)
def test_two_pi_shift_invariance(seed, layer, turns):
    model = random_model(seed)
    x = np.random.default_rng(seed + 2).standard_normal((5, 2))
    theta = model.theta.copy()
    theta[layer, -1] += 2 * math.pi * turns   # bias slot shifts the layer angle by 2*pi*turns
    shifted = DraModel(theta, model.label_states)
    np.testing.assert_allclose(dra.forward_batch(shifted, x), dra.forward_batch(model, x), atol=1e-10)


@given(seeds)
@settings(max_examples=30)
def test_binary_probabilities_sum_to_one_without_renormalizing(seed):
    model = random_model(seed)
    state = dra.encode_batch(model.theta, np.random.default_rng(seed).standard_normal((8, 2)), model.ansatz)
    raw = sum(qsim.batch_projection(state, s) for s in model.label_states)
    np.testing.assert_allclose(raw, 1.0, atol=1e-9)


@given(seeds, st.floats(0.001, 1.0), st.sampled_from([2, 3, 4]))
@settings(max_examples=40)
def test_depolarizing_lowers_confidence(seed, p, classes):
    model = random_model(seed, classes=classes)
    noisy = model.with_noise(qsim.single_channel_model("depolarizing", p))
    x = np.random.default_rng(seed).standard_normal((6, 2))
    assert np.all(dra.forward_batch(noisy, x).max(axis=1) <= dra.forward_batch(model, x).max(axis=1) + 1e-12)


def test_batch_size_does_not_change_results():
    model = random_model(3, layers=7)
    x = np.random.default_rng(4).standard_normal((64, 2))
    whole = dra.forward_batch(model, x)
    parts = np.concatenate([dra.forward_batch(model, x[i:i + 5]) for i in range(0, 64, 5)])
    np.testing.assert_array_equal(whole, parts)
    stacked = dra.encode_batch(np.stack([model.theta, model.theta]), x, model.ansatz)
    np.testing.assert_array_equal(stacked[0][1], dra.encode_batch(model.theta, x, model.ansatz)[0])


def test_expand_tied():
    g = np.arange(6.0)
    np.testing.assert_array_equal(dra.expand_tied(g, 5, 2), [[0, 1, 2], [3, 4, 5], [0, 1, 2], [3, 4, 5], [0, 1, 2]])


def test_model_validation():
    with pytest.raises(InvalidArgument):
        DraModel(np.zeros(3), dra.label_states(2))
    with pytest.raises(InvalidArgument):
        DraModel(np.zeros((2, 3)), dra.label_states(2), ansatz="xy")
    with pytest.raises(InvalidArgument):
        DraModel(np.zeros((2, 3)), (qsim.ground_state(), qsim.maximally_mixed()))
    model = DraModel(np.zeros((2, 3)), dra.label_states(2))
    with pytest.raises(InvalidArgument):
        dra.forward_batch(model, np.zeros((1, 4)))
    assert model.param_count == 6


def test_evaluate_accuracy_and_determinism():
    model = DraModel(np.array([[0.0, 0.0], [math.pi, 0.0]]), dra.label_states(2))
    # Ry(pi * x): x = 0 stays |0>, x = 1 flips to |1>
    x = np.array([[0.0], [1.0]] * 5)
    y = np.array([0, 1] * 5)
    acc, records = dra.evaluate(model, x, y)
    assert acc == 1.0
    acc2, records2 = dra.evaluate(model, x, y)
    assert [r.to_dict() for r in records] == [r.to_dict() for r in records2]
    with pytest.raises(EmptyDatasetError):
        dra.evaluate(model, np.zeros((0, 1)), np.zeros(0, dtype=int))


def test_evaluate_shot_mode_is_seeded():
    model = random_model(5)
    x = np.random.default_rng(6).standard_normal((20, 2))
    y = np.zeros(20, dtype=int)
    _, a = dra.evaluate(model, x, y, shots=256, seed=11)
    _, b = dra.evaluate(model, x, y, shots=256, seed=11)
    assert [r.to_dict() for r in a] == [r.to_dict() for r in b]
    assert all(r.shot_counts.sum() == 256 for r in a)


def test_depolarized_model_records_states():
    model = random_model(7)
    wrapped = DepolarizedDra(model, 0.2)
    x = np.random.default_rng(8).standard_normal((4, 2))
    _, records = dra.evaluate(wrapped, x, np.zeros(4, dtype=int))
    for xi, r in zip(x, records):
        np.testing.assert_allclose(r.state.matrix, dra.encoded_state(model, xi).matrix, atol=1e-15)
        expected = qsim.apply_channel(r.state, NoiseChannel("depolarizing", 0.2))
        p0 = qsim.projection_probability(expected, model.label_states[0])
        assert r.probabilities[0] == pytest.approx(p0, abs=1e-12)
        assert r.r_dp is not None
    np.testing.assert_allclose(wrapped.forward_batch(x), [r.probabilities for r in records], atol=1e-15)


def test_save_load_round_trip(tmp_path):
    model = random_model(9, classes=3, noise=qsim.noise_preset("device_like"))
    path = tmp_path / "m.json"
    dra.save(model, path)
    again = dra.load(path)
    x = np.random.default_rng(1).standard_normal((5, 2))
    np.testing.assert_array_equal(dra.forward_batch(again, x), dra.forward_batch(model, x))
    assert again.noise == model.noise


def test_load_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(FormatError):
        dra.load(bad)
    bad.write_text('{"format": "other"}')
    with pytest.raises(FormatError):
        dra.load(bad)

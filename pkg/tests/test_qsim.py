import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrobust import qsim
from qrobust.errors import InvalidArgument
from qrobust.qsim import NoiseChannel, NoiseModel, QubitState

TOL = 1e-12

angles = st.floats(-4 * math.pi, 4 * math.pi, allow_nan=False)
probabilities = st.floats(0.0, 1.0, allow_nan=False)
kinds = st.sampled_from(qsim.CHANNEL_KINDS)


def bloch_vectors():
    return st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(
        lambda v: v[0] ** 2 + v[1] ** 2 + v[2] ** 2 <= 1.0
    )


def assert_physical(state: QubitState, tol=TOL):
    m = state.matrix
    assert np.max(np.abs(m - m.conj().T)) < tol
    assert abs(np.trace(m) - 1) < tol
    assert np.min(np.linalg.eigvalsh(m)) > -tol


def test_ground_state():
    g = qsim.ground_state()
    np.testing.assert_array_equal(g.matrix, np.diag([1, 0]))
    assert np.trace(g.matrix) == 1
    assert g.purity() == 1


def test_ry_pi_flips_ground():
    s = qsim.apply_rotation(qsim.ground_state(), "y", math.pi)
    np.testing.assert_allclose(s.matrix, np.diag([0, 1]), atol=1e-15)


def test_ry_half_pi_balances():
    s = qsim.apply_rotation(qsim.ground_state(), "y", math.pi / 2)
    np.testing.assert_allclose(s.populations(), [0.5, 0.5], atol=1e-15)


@given(angles)
def test_rz_fixes_ground(theta):
    s = qsim.apply_rotation(qsim.ground_state(), "z", theta)
    np.testing.assert_allclose(s.matrix, np.diag([1, 0]), atol=1e-15)


def test_channel_examples():
    g = qsim.ground_state()
    np.testing.assert_allclose(qsim.apply_channel(g, NoiseChannel("depolarizing", 0.5)).matrix,
                               np.diag([0.75, 0.25]), atol=1e-15)
    np.testing.assert_allclose(qsim.apply_channel(g, NoiseChannel("bit_flip", 1.0)).matrix,
                               np.diag([0, 1]), atol=1e-15)


@given(bloch_vectors())
def test_full_depolarizing_gives_maximally_mixed(v):
    s = qsim.apply_channel(QubitState.from_bloch(v), NoiseChannel("depolarizing", 1.0))
    np.testing.assert_allclose(s.matrix, np.eye(2) / 2, atol=1e-15)


def test_projection_examples():
    zero = qsim.ground_state()
    one = QubitState(np.diag([0, 1]))
    assert qsim.projection_probability(zero, zero) == 1
    assert qsim.projection_probability(zero, one) == 0
    psi = QubitState.from_amplitudes([0.6, 0.8j])
    assert qsim.projection_probability(qsim.maximally_mixed(), psi) == pytest.approx(0.5, abs=1e-15)


def test_projection_rejects_mixed_label():
    with pytest.raises(InvalidArgument):
        qsim.projection_probability(qsim.ground_state(), qsim.maximally_mixed())


def test_sample_counts_examples():
    np.testing.assert_array_equal(qsim.sample_counts([1.0, 0.0], 100, seed=3), [100, 0])
    counts = qsim.sample_counts([0.5, 0.5], 10**6, seed=7)
    assert counts.sum() == 10**6
    assert np.all(np.abs(counts - 5e5) <= 5 * 500)
    np.testing.assert_array_equal(counts, qsim.sample_counts([0.5, 0.5], 10**6, seed=7))


@pytest.mark.parametrize("probs, shots", [([0.5, 0.6], 10), ([1.0, 0.0], 0), ([-0.1, 1.1], 10)])
def test_sample_counts_rejects_bad_input(probs, shots):
    with pytest.raises(InvalidArgument):
        qsim.sample_counts(probs, shots, seed=0)


@pytest.mark.parametrize("matrix", [
    np.array([[1, 1], [0, 0]]),          # not Hermitian
    np.diag([0.6, 0.6]),                 # trace 1.2
    np.diag([1.5, -0.5]),                # negative eigenvalue
    np.eye(3) / 3,
])
def test_state_validation(matrix):
    with pytest.raises(InvalidArgument):
        QubitState(matrix)


def test_channel_validation():
    with pytest.raises(InvalidArgument):
        NoiseChannel("amplitude_damping", 0.1)
    with pytest.raises(InvalidArgument):
        NoiseChannel("bit_flip", 1.5)
    with pytest.raises(InvalidArgument):
        NoiseModel((), readout_flip=-0.1)


@given(kinds, probabilities)
def test_kraus_completeness(kind, p):
    ks = NoiseChannel(kind, p).kraus()
    total = sum(k.conj().T @ k for k in ks)
    np.testing.assert_allclose(total, np.eye(2), atol=TOL)


@given(bloch_vectors(), st.lists(st.tuples(st.sampled_from("xyz"), angles), max_size=20),
       st.lists(st.tuples(kinds, probabilities), max_size=5))
def test_outputs_stay_physical(v, gates, channels):
    s = QubitState.from_bloch(v)
    for axis, theta in gates:
        s = qsim.apply_rotation(s, axis, theta)
    for kind, p in channels:
        s = qsim.apply_channel(s, NoiseChannel(kind, p))
    assert_physical(s)


@given(bloch_vectors(), st.sampled_from("xyz"), angles, angles)
def test_rotation_group_law(v, axis, t1, t2):
    s = QubitState.from_bloch(v)
    twice = qsim.apply_rotation(qsim.apply_rotation(s, axis, t1), axis, t2)
    once = qsim.apply_rotation(s, axis, t1 + t2)
    np.testing.assert_allclose(twice.matrix, once.matrix, atol=1e-10)


@given(bloch_vectors(), probabilities)
def test_depolarizing_lowers_purity(v, p):
    s = QubitState.from_bloch(v)
    out = qsim.apply_channel(s, NoiseChannel("depolarizing", p))
    assert out.purity() <= s.purity() + TOL


@given(bloch_vectors())
def test_bloch_round_trip(v):
    np.testing.assert_allclose(QubitState.from_bloch(v).bloch(), v, atol=1e-15)


def test_trace_distance_of_orthogonal_states():
    one = QubitState(np.diag([0, 1]))
    assert qsim.trace_distance(qsim.ground_state(), one) == pytest.approx(1.0)
    assert qsim.trace_distance(one, one) == pytest.approx(0.0, abs=1e-15)


def test_noise_presets():
    assert qsim.noise_preset("noiseless").is_noiseless
    dev = qsim.noise_preset("device_like")
    assert [c.kind for c in dev.per_gate_channels] == ["depolarizing", "bit_flip", "phase_flip"]
    assert [c.probability for c in dev.per_gate_channels] == [0.01, 0.005, 0.005]
    assert dev.readout_flip == 0.01
    assert NoiseModel.from_dict(dev.to_dict()) == dev
    with pytest.raises(InvalidArgument):
        qsim.noise_preset("ion_trap")


# batched kernels against the value-level API


@given(bloch_vectors(), st.lists(st.tuples(st.sampled_from("yz"), angles), max_size=10),
       st.lists(st.tuples(kinds, probabilities), max_size=4))
def test_batch_kernels_match_value_api(v, gates, channels):
    s = QubitState.from_bloch(v)
    b = qsim.batch_from_states([s])
    for axis, theta in gates:
        s = qsim.apply_rotation(s, axis, theta)
        b = qsim.batch_rotate(b, axis, np.array([theta]))
    for kind, p in channels:
        ch = NoiseChannel(kind, p)
        s = qsim.apply_channel(s, ch)
        b = qsim.batch_channel(b, ch)
    np.testing.assert_allclose(qsim.batch_to_states(b)[0].matrix, s.matrix, atol=1e-12)
    label = QubitState.from_amplitudes([0.6, 0.8j])
    assert qsim.batch_projection(b, label)[0] == pytest.approx(qsim.projection_probability(s, label), abs=1e-12)


def test_batch_rotate_rejects_x():
    with pytest.raises(InvalidArgument):
        qsim.batch_rotate(qsim.batch_ground(3), "x", np.zeros(3))

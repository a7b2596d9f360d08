"""Exact single-qubit simulation on 2x2 density matrices.

Two layers live here:

* a value-level API (``QubitState``, ``apply_rotation``, ``apply_channel``,
  ``projection_probability``) used for clarity and as the test oracle, and
* batched kernels operating on arrays of states, used by the classifiers.

A batched state is the triple of real arrays ``(a, x, y)`` with
``a = rho[0, 0]`` and ``x + iy = rho[0, 1]``. Hermiticity and unit trace fix
the remaining entries, so the triple is a complete density-matrix
representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArgument

STATE_TOL = 1e-10

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)

CHANNEL_KINDS = ("depolarizing", "bit_flip", "phase_flip")


@dataclass(frozen=True, eq=False)
class QubitState:
    """Immutable single-qubit density matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (2, 2):
            raise InvalidArgument(f"density matrix must be 2x2, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidArgument("density matrix has non-finite entries")
        if np.max(np.abs(m - m.conj().T)) > STATE_TOL:
            raise InvalidArgument("density matrix is not Hermitian")
        if abs(np.trace(m) - 1) > STATE_TOL:
            raise InvalidArgument("density matrix does not have unit trace")
        if np.min(np.linalg.eigvalsh(m)) < -STATE_TOL:
            raise InvalidArgument("density matrix is not positive semidefinite")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_amplitudes(cls, amplitudes: Sequence[complex]) -> "QubitState":
        v = np.asarray(amplitudes, dtype=complex).reshape(2)
        norm = np.linalg.norm(v)
        if norm == 0:
            raise InvalidArgument("zero state vector")
        v = v / norm
        return cls(np.outer(v, v.conj()))

    @classmethod
    def from_bloch(cls, vector: Sequence[float]) -> "QubitState":
        x, y, z = (float(c) for c in vector)
        if x * x + y * y + z * z > 1 + STATE_TOL:
            raise InvalidArgument("Bloch vector lies outside the unit ball")
        return cls(0.5 * (IDENTITY + x * PAULI_X + y * PAULI_Y + z * PAULI_Z))

    def bloch(self) -> np.ndarray:
        m = self.matrix
        return np.array([2 * m[0, 1].real, -2 * m[0, 1].imag, (m[0, 0] - m[1, 1]).real])

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.matrix)).copy()

    def is_pure(self, tol: float = 1e-9) -> bool:
        return abs(self.purity() - 1.0) < tol

    def __repr__(self) -> str:
        return f"QubitState(bloch={np.round(self.bloch(), 6).tolist()})"


@dataclass(frozen=True)
class NoiseChannel:
    kind: str
    probability: float

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise InvalidArgument(f"unknown channel kind {self.kind!r}")
        p = float(self.probability)
        if not (0.0 <= p <= 1.0) or not math.isfinite(p):
            raise InvalidArgument(f"channel probability {p} outside [0, 1]")
        object.__setattr__(self, "probability", p)

    def kraus(self) -> list[np.ndarray]:
        p = self.probability
        if self.kind == "depolarizing":
            # sigma -> (1 - p) sigma + p I/2, written as a Pauli mixture
            return [
                math.sqrt(1 - 3 * p / 4) * IDENTITY,
                math.sqrt(p / 4) * PAULI_X,
                math.sqrt(p / 4) * PAULI_Y,
                math.sqrt(p / 4) * PAULI_Z,
            ]
        pauli = PAULI_X if self.kind == "bit_flip" else PAULI_Z
        return [math.sqrt(1 - p) * IDENTITY, math.sqrt(p) * pauli]


@dataclass(frozen=True)
class NoiseModel:
    """Channels applied after every gate, plus a classical readout flip."""

    per_gate_channels: tuple[NoiseChannel, ...] = ()
    readout_flip: float = 0.0
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "per_gate_channels", tuple(self.per_gate_channels))
        r = float(self.readout_flip)
        if not (0.0 <= r <= 1.0):
            raise InvalidArgument(f"readout_flip {r} outside [0, 1]")
        object.__setattr__(self, "readout_flip", r)

    @property
    def is_noiseless(self) -> bool:
        return self.readout_flip == 0.0 and all(c.probability == 0.0 for c in self.per_gate_channels)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "per_gate_channels": [{"kind": c.kind, "probability": c.probability} for c in self.per_gate_channels],
            "readout_flip": self.readout_flip,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseModel":
        return cls(
            tuple(NoiseChannel(c["kind"], c["probability"]) for c in data.get("per_gate_channels", ())),
            data.get("readout_flip", 0.0),
            name=data.get("name", "custom"),
        )


NOISELESS = NoiseModel((), 0.0, name="noiseless")
# Uncalibrated defaults standing in for a trapped-ion device.
DEVICE_LIKE = NoiseModel(
    (
        NoiseChannel("depolarizing", 0.01),
        NoiseChannel("bit_flip", 0.005),
        NoiseChannel("phase_flip", 0.005),
    ),
    0.01,
    name="device_like",
)
PRESETS = {"noiseless": NOISELESS, "device_like": DEVICE_LIKE}


def noise_preset(name: str) -> NoiseModel:
    try:
        return PRESETS[name]
    except KeyError:
        raise InvalidArgument(f"unknown noise preset {name!r}; known: {sorted(PRESETS)}") from None


def single_channel_model(kind: str, probability: float) -> NoiseModel:
    return NoiseModel((NoiseChannel(kind, probability),), 0.0, name=f"{kind}:{probability:g}")


# ---------------------------------------------------------------------------
# value-level operations
# ---------------------------------------------------------------------------


def ground_state() -> QubitState:
    return QubitState(np.array([[1, 0], [0, 0]], dtype=complex))


def maximally_mixed() -> QubitState:
    return QubitState(0.5 * IDENTITY)


def rotation_matrix(axis: str, angle: float) -> np.ndarray:
    """``exp(-i angle sigma_axis / 2)`` for axis in {x, y, z}."""
    if not math.isfinite(angle):
        raise InvalidArgument(f"rotation angle must be finite, got {angle}")
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    if axis == "y":
        return np.array([[c, -s], [s, c]], dtype=complex)
    if axis == "z":
        return np.array([[c - 1j * s, 0], [0, c + 1j * s]], dtype=complex)
    if axis == "x":
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    raise InvalidArgument(f"unknown rotation axis {axis!r}")


def apply_unitary(state: QubitState, unitary: np.ndarray) -> QubitState:
    m = unitary @ state.matrix @ unitary.conj().T
    return QubitState(0.5 * (m + m.conj().T))


def apply_rotation(state: QubitState, axis: str, angle: float) -> QubitState:
    return apply_unitary(state, rotation_matrix(axis, float(angle)))


def apply_channel(state: QubitState, channel: NoiseChannel) -> QubitState:
    m = sum(k @ state.matrix @ k.conj().T for k in channel.kraus())
    return QubitState(0.5 * (m + m.conj().T))


def apply_noise(state: QubitState, noise: NoiseModel | None) -> QubitState:
    if noise is not None:
        for channel in noise.per_gate_channels:
            state = apply_channel(state, channel)
    return state


def projection_probability(state: QubitState, label_state: QubitState) -> float:
    """Population of ``state`` along the pure ``label_state``."""
    if not label_state.is_pure():
        raise InvalidArgument("label state must be pure")
    p = float(np.real(np.trace(state.matrix @ label_state.matrix)))
    return min(1.0, max(0.0, p))


def apply_readout_flip(probability, flip: float):
    """Classical flip of a two-outcome readout."""
    return (1.0 - flip) * probability + flip * (1.0 - probability)


def trace_distance(rho: QubitState, sigma: QubitState) -> float:
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(rho.matrix - sigma.matrix))))


def sample_counts(probabilities: Sequence[float], shots: int, seed: int) -> np.ndarray:
    """Multinomial shot counts; bit-reproducible for a fixed seed."""
    p = np.asarray(probabilities, dtype=float)
    if shots <= 0:
        raise InvalidArgument("shots must be a positive integer")
    if p.ndim != 1 or np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidArgument("probabilities must be a non-negative vector summing to 1")
    p = np.clip(p, 0.0, None)
    p = p / p.sum()
    rng = np.random.default_rng(seed)
    return rng.multinomial(int(shots), p).astype(np.int64)


# ---------------------------------------------------------------------------
# batched kernels over arrays of states
# ---------------------------------------------------------------------------


def batch_ground(shape) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return np.ones(shape), np.zeros(shape), np.zeros(shape)


def batch_rotate(state, axis: str, angles: np.ndarray):
    """Apply R_axis(angles) elementwise to a batched state."""
    a, x, y = state
    c = np.cos(angles)
    s = np.sin(angles)
    if axis == "z":
        # rho01 -> rho01 * exp(-i angle)
        return a, x * c + y * s, y * c - x * s
    if axis == "y":
        h = a - 0.5
        return 0.5 + c * h - s * x, s * h + c * x, y
    raise InvalidArgument(f"batched rotation supports axes y and z, got {axis!r}")


def batch_channel(state, channel: NoiseChannel):
    p = channel.probability
    if p == 0.0:
        return state
    a, x, y = state
    if channel.kind == "depolarizing":
        return (1 - p) * a + 0.5 * p, (1 - p) * x, (1 - p) * y
    if channel.kind == "bit_flip":
        return (1 - p) * a + p * (1.0 - a), x, (1 - 2 * p) * y
    return a, (1 - 2 * p) * x, (1 - 2 * p) * y


def batch_noise(state, noise: NoiseModel | None):
    if noise is not None:
        for channel in noise.per_gate_channels:
            state = batch_channel(state, channel)
    return state


def batch_projection(state, label_state: QubitState) -> np.ndarray:
    """Tr(rho P) for the projector P onto ``label_state``, elementwise."""
    a, x, y = state
    P = label_state.matrix
    p = a * P[0, 0].real + (1.0 - a) * P[1, 1].real + 2.0 * (x * P[1, 0].real - y * P[1, 0].imag)
    return np.clip(p, 0.0, 1.0)


def batch_to_states(state) -> list[QubitState]:
    a, x, y = (np.ravel(v) for v in state)
    return [QubitState(np.array([[ai, xi + 1j * yi], [xi - 1j * yi, 1 - ai]])) for ai, xi, yi in zip(a, x, y)]


def batch_from_states(states: Sequence[QubitState]):
    a = np.array([s.matrix[0, 0].real for s in states])
    x = np.array([s.matrix[0, 1].real for s in states])
    y = np.array([s.matrix[0, 1].imag for s in states])
    return a, x, y

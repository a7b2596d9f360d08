"""Feature-based data re-uploading classifier on one qubit.

Each layer ``l = 1..L`` rotates the qubit by the angle ``theta_l . [x, 1]``.
Two ansatz variants:

* ``alternating``: a single rotation per layer, R_z on odd layers and R_y on
  even layers (layer 1 is odd);
* ``zy_pair``: R_z(a) R_y(a) per layer, i.e. R_y applied first.

Noise channels of the model's ``NoiseModel`` follow every gate. The class
probabilities are the projections onto fixed pure label states, flipped by
the readout error and normalized to sum to one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import qsim
from .errors import EmptyDatasetError, FormatError, InvalidArgument
from .qsim import NoiseModel, QubitState
from .robustness import make_record

ANSATZE = ("alternating", "zy_pair")
FORMAT = "qrobust.dra"
FORMAT_VERSION = 1


def label_states(n: int) -> tuple[QubitState, ...]:
    """Maximally separated pure label states for ``n`` classes.

    2: |0>, |1>; 3: x-z great circle at 120 degrees; 4: tetrahedron vertices.
    """
    if n == 2:
        vecs = [(0, 0, 1), (0, 0, -1)]
    elif n == 3:
        vecs = [(math.sin(a), 0.0, math.cos(a)) for a in (0.0, 2 * math.pi / 3, 4 * math.pi / 3)]
    elif n == 4:
        s = 1 / 3
        r = math.sqrt(8) / 3
        vecs = [
            (0.0, 0.0, 1.0),
            (r, 0.0, -s),
            (-r / 2, r * math.sqrt(3) / 2, -s),
            (-r / 2, -r * math.sqrt(3) / 2, -s),
        ]
    else:
        raise InvalidArgument(f"label states are defined for 2 to 4 classes, got {n}")
    return tuple(QubitState.from_bloch(v) for v in vecs)


def layer_gates(ansatz: str, layer: int) -> tuple[str, ...]:
    """Rotation axes applied by 1-indexed ``layer``, in application order."""
    if ansatz == "alternating":
        return ("z",) if layer % 2 == 1 else ("y",)
    if ansatz == "zy_pair":
        return ("y", "z")
    raise InvalidArgument(f"unknown ansatz {ansatz!r}")


def augment(features) -> np.ndarray:
    """Append the constant bias input 1."""
    x = np.asarray(features, dtype=float)
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1) if x.ndim else np.array([float(x), 1.0])


def expand_tied(genome: np.ndarray, layers: int, groups: int) -> np.ndarray:
    """Map ``groups`` weight vectors onto ``layers`` layers cyclically."""
    g = np.asarray(genome, dtype=float).reshape(groups, -1)
    return g[np.arange(layers) % groups]


@dataclass(frozen=True, eq=False)
class DraModel:
    theta: np.ndarray
    label_states: tuple[QubitState, ...]
    ansatz: str = "alternating"
    noise: NoiseModel | None = None
    parameter_groups: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.ndim != 2 or theta.shape[0] < 1:
            raise InvalidArgument("theta must be an (L, feature_dim + 1) array")
        if self.ansatz not in ANSATZE:
            raise InvalidArgument(f"unknown ansatz {self.ansatz!r}")
        if len(self.label_states) < 2:
            raise InvalidArgument("need at least two label states")
        if not all(s.is_pure() for s in self.label_states):
            raise InvalidArgument("label states must be pure")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "label_states", tuple(self.label_states))

    @property
    def layers(self) -> int:
        return self.theta.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.theta.shape[1] - 1

    @property
    def num_classes(self) -> int:
        return len(self.label_states)

    @property
    def param_count(self) -> int:
        groups = self.parameter_groups or self.layers
        return groups * self.theta.shape[1]

    def with_noise(self, noise: NoiseModel | None) -> "DraModel":
        return DraModel(self.theta, self.label_states, self.ansatz, noise, self.parameter_groups, dict(self.meta))


def encode_batch(theta: np.ndarray, features: np.ndarray, ansatz: str, noise: NoiseModel | None = None):
    """Run the circuit for every row of ``features``.

    ``theta`` may be (L, d+1) or stacked (P, L, d+1); the result is the batched
    state with arrays of shape (n,) or (P, n).
    """
    x = augment(np.atleast_2d(np.asarray(features, dtype=float)))
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != x.shape[1]:
        raise InvalidArgument(f"feature length {x.shape[1] - 1} does not match weights ({theta.shape[-1] - 1})")
    # elementwise products summed over d: the result for one sample does not
    # depend on how many samples or weight sets share the call
    angles = (theta[..., None, :, :] * x[:, None, :]).sum(axis=-1)
    state = qsim.batch_ground(angles.shape[:-1])
    for l in range(theta.shape[-2]):
        for axis in layer_gates(ansatz, l + 1):
            state = qsim.batch_rotate(state, axis, angles[..., l])
            state = qsim.batch_noise(state, noise)
    return state


def readout(state, states: Sequence[QubitState], noise: NoiseModel | None = None) -> np.ndarray:
    """Class probability vectors from batched states; last axis is the class."""
    flip = noise.readout_flip if noise is not None else 0.0
    probs = np.stack([qsim.batch_projection(state, s) for s in states], axis=-1)
    if flip:
        probs = qsim.apply_readout_flip(probs, flip)
    total = probs.sum(axis=-1, keepdims=True)
    n = probs.shape[-1]
    return np.where(total > 0, probs / np.where(total > 0, total, 1.0), 1.0 / n)


def forward_batch(model: DraModel, features) -> np.ndarray:
    state = encode_batch(model.theta, features, model.ansatz, model.noise)
    return readout(state, model.label_states, model.noise)


def forward(model: DraModel, features) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim != 1:
        raise InvalidArgument("forward takes a single feature vector; use forward_batch for many")
    return forward_batch(model, x[None, :])[0]


def predict_from_probabilities(probs) -> np.ndarray | int:
    """Argmax with ties resolved to the lowest class index."""
    p = np.asarray(probs)
    out = np.argmax(p, axis=-1)
    return int(out) if p.ndim == 1 else out


def predict(model: DraModel, features) -> int:
    return predict_from_probabilities(forward(model, features))


def encoded_state(model: DraModel, features) -> QubitState:
    state = encode_batch(model.theta, np.asarray(features, dtype=float)[None, :], model.ansatz, model.noise)
    return qsim.batch_to_states(state)[0]


@dataclass(frozen=True)
class DepolarizedDra:
    """A DRA model measured behind a declared depolarizing channel of rate ``p``.

    This is the classifier that the depolarization certificate speaks about:
    ``classify_state`` takes the encoded qubit state (possibly perturbed) and
    returns class probabilities.
    """

    model: DraModel
    p: float

    def encode(self, features) -> QubitState:
        return encoded_state(self.model, features)

    def classify_states_batch(self, state) -> np.ndarray:
        state = qsim.batch_channel(state, qsim.NoiseChannel("depolarizing", self.p))
        return readout(state, self.model.label_states, self.model.noise)

    def classify_state(self, state: QubitState) -> np.ndarray:
        return self.classify_states_batch(qsim.batch_from_states([state]))[0]

    def forward_batch(self, features) -> np.ndarray:
        return self.classify_states_batch(encode_batch(self.model.theta, features, self.model.ansatz, self.model.noise))


def evaluate(model, features, labels, shots: int | None = None, seed: int = 0, level: float = 0.9, depolarization: float | None = None):
    """Accuracy and per-sample ``PredictionRecord``s.

    ``model`` is a ``DraModel`` or ``DepolarizedDra``; the latter also stores
    the encoded state in each record and declares its rate. With ``shots``, each
    sample's class outcome is sampled ``shots`` times (seed offset by sample
    index) and certification uses the shot-count confidence bounds.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=np.int64)
    if len(y) == 0:
        raise EmptyDatasetError("cannot evaluate on an empty dataset")
    if isinstance(model, DraModel):
        probs = forward_batch(model, x)
        states = [None] * len(y)
    else:
        encoded = encode_batch(model.model.theta, x, model.model.ansatz, model.model.noise)
        probs = model.classify_states_batch(encoded)
        states = qsim.batch_to_states(encoded)
        if depolarization is None:
            depolarization = model.p
    records = []
    for i, (p, t) in enumerate(zip(probs, y)):
        counts = qsim.sample_counts(p, shots, seed + i) if shots else None
        records.append(make_record(p, int(t), counts, level=level, depolarization=depolarization, state=states[i]))
    accuracy = float(np.mean([r.predicted == r.truth for r in records]))
    return accuracy, records


# ---------------------------------------------------------------------------
# persistence (JSON, self-describing)
# ---------------------------------------------------------------------------


def _state_to_list(s: QubitState) -> list:
    return [[s.matrix[i, j].real, s.matrix[i, j].imag] for i in range(2) for j in range(2)]


def _state_from_list(v) -> QubitState:
    m = np.array([complex(re, im) for re, im in v]).reshape(2, 2)
    return QubitState(m)


def to_dict(model: DraModel) -> dict:
    return {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "ansatz": model.ansatz,
        "layers": model.layers,
        "feature_dim": model.feature_dim,
        "parameter_groups": model.parameter_groups,
        "theta": model.theta.tolist(),
        "label_states": [_state_to_list(s) for s in model.label_states],
        "noise": None if model.noise is None else model.noise.to_dict(),
        "meta": model.meta,
    }


def from_dict(data: dict) -> DraModel:
    if data.get("format") != FORMAT:
        raise FormatError(f"not a DRA model file (format={data.get('format')!r})")
    if data.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported DRA model version {data.get('version')}")
    noise = None if data.get("noise") is None else NoiseModel.from_dict(data["noise"])
    return DraModel(
        np.asarray(data["theta"], dtype=float),
        tuple(_state_from_list(v) for v in data["label_states"]),
        data["ansatz"],
        noise,
        data.get("parameter_groups"),
        data.get("meta", {}),
    )


def save(model: DraModel, path) -> None:
    Path(path).write_text(json.dumps(to_dict(model), indent=1, sort_keys=True) + "\n")


def load(path) -> DraModel:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON in {path}: {exc}") from exc
    return from_dict(data)

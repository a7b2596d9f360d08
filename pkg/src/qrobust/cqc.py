"""Convolutional quantum classifier built from single-qubit re-uploading units.

Layer ``l`` owns a grid of qubits. The qubit at output cell (h, w) reads the
receptive field of the previous tensor centred at (p_h, q_w), uploads it K
times, each time as the angle ``sum_ij theta[k, i, j] * T[p+i, q+j]``, and is
projected onto a fixed pure state. The projection probability becomes the
next tensor's value at (h, w). Weights are shared by every qubit in a layer.

Centres: ``p_h = floor((h + 0.5) * in / out - 0.5 + 0.5)`` (round half up),
with zero padding outside the tensor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import qsim
from .dra import ANSATZE, layer_gates, predict_from_probabilities
from .errors import EmptyDatasetError, FormatError, InvalidArgument
from .qsim import NoiseModel, QubitState
from .robustness import make_record

HEADS = ("normalize", "softmax_fc")
FORMAT = "qrobust.cqc"
FORMAT_VERSION = 1


def excited_state() -> QubitState:
    return QubitState(np.array([[0, 0], [0, 1]], dtype=complex))


@dataclass(frozen=True, eq=False)
class CqcLayerSpec:
    in_height: int
    in_width: int
    out_height: int
    out_width: int
    field_radius: int = 1
    depth: int = 5
    projection_state: QubitState = field(default_factory=excited_state)

    def __post_init__(self):
        if min(self.in_height, self.in_width, self.out_height, self.out_width) < 1:
            raise InvalidArgument("layer dimensions must be at least 1")
        if self.field_radius < 0:
            raise InvalidArgument("field_radius must be non-negative")
        if self.depth < 1:
            raise InvalidArgument("depth must be at least 1")
        if not self.projection_state.is_pure():
            raise InvalidArgument("projection state must be pure")

    @property
    def field_size(self) -> int:
        return 2 * self.field_radius + 1

    @property
    def weight_shape(self) -> tuple[int, int, int]:
        return (self.depth, self.field_size, self.field_size)

    @property
    def weight_count(self) -> int:
        return self.depth * self.field_size**2


def centers(n_in: int, n_out: int) -> np.ndarray:
    return np.floor((np.arange(n_out) + 0.5) * n_in / n_out - 0.5 + 0.5).astype(np.int64)


@dataclass(frozen=True, eq=False)
class CqcModel:
    layers: tuple[CqcLayerSpec, ...]
    weights: tuple[np.ndarray, ...]
    num_classes: int = 2
    head: str = "normalize"
    ansatz: str = "alternating"
    fc_weights: np.ndarray | None = None
    fc_bias: np.ndarray | None = None
    noise: NoiseModel | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise InvalidArgument("need at least one layer")
        if len(self.weights) != len(layers):
            raise InvalidArgument("one weight tensor per layer is required")
        for prev, nxt in zip(layers, layers[1:]):
            if (prev.out_height, prev.out_width) != (nxt.in_height, nxt.in_width):
                raise InvalidArgument("consecutive layer shapes do not chain")
        weights = []
        for spec, w in zip(layers, self.weights):
            w = np.array(w, dtype=float)
            if w.shape != spec.weight_shape:
                raise InvalidArgument(f"weight shape {w.shape} != {spec.weight_shape}")
            w.setflags(write=False)
            weights.append(w)
        last = layers[-1]
        if not 2 <= self.num_classes <= last.out_height * last.out_width:
            raise InvalidArgument("num_classes must fit in the final qubit grid")
        if self.head not in HEADS:
            raise InvalidArgument(f"unknown head {self.head!r}")
        if self.ansatz not in ANSATZE:
            raise InvalidArgument(f"unknown ansatz {self.ansatz!r}")
        if self.head == "softmax_fc":
            c = self.num_classes
            fw = np.zeros((c, c)) if self.fc_weights is None else np.array(self.fc_weights, dtype=float)
            fb = np.zeros(c) if self.fc_bias is None else np.array(self.fc_bias, dtype=float)
            if fw.shape != (c, c) or fb.shape != (c,):
                raise InvalidArgument("fully connected head must be (C, C) weights and (C,) bias")
            object.__setattr__(self, "fc_weights", fw)
            object.__setattr__(self, "fc_bias", fb)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "weights", tuple(weights))

    @property
    def input_shape(self) -> tuple[int, int]:
        return self.layers[0].in_height, self.layers[0].in_width

    def with_noise(self, noise: NoiseModel | None) -> "CqcModel":
        return CqcModel(self.layers, self.weights, self.num_classes, self.head, self.ansatz,
                        self.fc_weights, self.fc_bias, noise, dict(self.meta))

    def flat_parameters(self) -> np.ndarray:
        parts = [w.ravel() for w in self.weights]
        if self.head == "softmax_fc":
            parts += [self.fc_weights.ravel(), self.fc_bias]
        return np.concatenate(parts)

    def with_parameters(self, flat: np.ndarray) -> "CqcModel":
        flat = np.asarray(flat, dtype=float)
        if flat.size != param_count(self):
            raise InvalidArgument(f"expected {param_count(self)} parameters, got {flat.size}")
        weights, pos = [], 0
        for spec in self.layers:
            weights.append(flat[pos:pos + spec.weight_count].reshape(spec.weight_shape))
            pos += spec.weight_count
        fw = fb = None
        if self.head == "softmax_fc":
            c = self.num_classes
            fw = flat[pos:pos + c * c].reshape(c, c)
            fb = flat[pos + c * c:pos + c * c + c]
        return CqcModel(self.layers, tuple(weights), self.num_classes, self.head, self.ansatz, fw, fb,
                        self.noise, dict(self.meta))


def param_count(model: CqcModel) -> int:
    n = sum(spec.weight_count for spec in model.layers)
    if model.head == "softmax_fc":
        n += model.num_classes**2 + model.num_classes
    return n


def build_architecture(
    input_shape: tuple[int, int] = (28, 28),
    grids: Sequence[tuple[int, int]] = ((7, 7), (3, 3)),
    depths: int | Sequence[int] = 5,
    field_radius: int | Sequence[int] = 1,
) -> tuple[CqcLayerSpec, ...]:
    """Layer specs for a chain of qubit grids (defaults: 28x28 -> 7x7 -> 3x3, K=5, 3x3 fields)."""
    n = len(grids)
    depths = [depths] * n if isinstance(depths, int) else list(depths)
    radii = [field_radius] * n if isinstance(field_radius, int) else list(field_radius)
    specs, (h, w) = [], input_shape
    for (oh, ow), k, r in zip(grids, depths, radii):
        specs.append(CqcLayerSpec(h, w, oh, ow, r, k))
        h, w = oh, ow
    return tuple(specs)


def patch_angle(tensor, center: tuple[int, int], weights_k: np.ndarray) -> float:
    """Weighted sum over the receptive field around ``center``; zero outside the tensor."""
    t = tensor.values if hasattr(tensor, "values") else np.asarray(tensor, dtype=float)
    w = np.asarray(weights_k, dtype=float)
    if w.ndim != 2 or w.shape[0] % 2 == 0 or w.shape[1] % 2 == 0:
        raise InvalidArgument("field weights must have odd shape (2dp+1, 2dq+1)")
    dp, dq = w.shape[0] // 2, w.shape[1] // 2
    p, q = center
    total = 0.0
    for i in range(-dp, dp + 1):
        for j in range(-dq, dq + 1):
            if 0 <= p + i < t.shape[0] and 0 <= q + j < t.shape[1]:
                total += w[i + dp, j + dq] * t[p + i, q + j]
    return total


def qubit_forward_batch(angles: np.ndarray, projection_state: QubitState, noise: NoiseModel | None = None,
                        ansatz: str = "alternating") -> np.ndarray:
    """Projection probability after K re-upload gates; ``angles`` has K on the last axis."""
    angles = np.asarray(angles, dtype=float)
    if angles.shape[-1] < 1:
        raise InvalidArgument("need at least one sub-layer angle")
    state = qsim.batch_ground(angles.shape[:-1])
    for k in range(angles.shape[-1]):
        for axis in layer_gates(ansatz, k + 1):
            state = qsim.batch_rotate(state, axis, angles[..., k])
            state = qsim.batch_noise(state, noise)
    p = qsim.batch_projection(state, projection_state)
    if noise is not None and noise.readout_flip:
        p = qsim.apply_readout_flip(p, noise.readout_flip)
    return p


def qubit_forward(angles: Sequence[float], projection_state: QubitState, noise: NoiseModel | None = None,
                  ansatz: str = "alternating") -> float:
    return float(qubit_forward_batch(np.asarray(angles, dtype=float)[None, :], projection_state, noise, ansatz)[0])


class _PatchIndex:
    """Precomputed gather indices for one layer's receptive fields."""

    def __init__(self, spec: CqcLayerSpec):
        r = spec.field_radius
        rows = centers(spec.in_height, spec.out_height)[:, None] + np.arange(-r, r + 1)[None, :] + r
        cols = centers(spec.in_width, spec.out_width)[:, None] + np.arange(-r, r + 1)[None, :] + r
        # (out_h, out_w, F, F) index grids into the padded tensor
        self.rows = np.broadcast_to(rows[:, None, :, None], (spec.out_height, spec.out_width, 2 * r + 1, 2 * r + 1))
        self.cols = np.broadcast_to(cols[None, :, None, :], (spec.out_height, spec.out_width, 2 * r + 1, 2 * r + 1))
        self.radius = r
        self.spec = spec

    def patches(self, tensors: np.ndarray) -> np.ndarray:
        """(n, H, W) -> (n, out_h, out_w, F*F)."""
        r = self.radius
        padded = np.pad(tensors, ((0, 0), (r, r), (r, r))) if r else tensors
        n = tensors.shape[0]
        return padded[:, self.rows, self.cols].reshape(n, self.spec.out_height, self.spec.out_width, -1)


_INDEX_CACHE: dict = {}


def _index(spec: CqcLayerSpec) -> _PatchIndex:
    key = (spec.in_height, spec.in_width, spec.out_height, spec.out_width, spec.field_radius)
    idx = _INDEX_CACHE.get(key)
    if idx is None:
        idx = _INDEX_CACHE[key] = _PatchIndex(spec)
    return idx


def layer_forward_batch(tensors: np.ndarray, spec: CqcLayerSpec, weights: np.ndarray, noise: NoiseModel | None = None,
                        ansatz: str = "alternating", patches: np.ndarray | None = None) -> np.ndarray:
    tensors = np.asarray(tensors, dtype=float)
    if tensors.shape[1:] != (spec.in_height, spec.in_width):
        raise InvalidArgument(f"tensor shape {tensors.shape[1:]} does not match layer input "
                              f"{(spec.in_height, spec.in_width)}")
    if patches is None:
        patches = _index(spec).patches(tensors)
    angles = patches @ np.asarray(weights, dtype=float).reshape(spec.depth, -1).T
    return qubit_forward_batch(angles, spec.projection_state, noise, ansatz)


def layer_forward(tensor, spec: CqcLayerSpec, weights: np.ndarray, noise: NoiseModel | None = None,
                  ansatz: str = "alternating") -> np.ndarray:
    t = tensor.values if hasattr(tensor, "values") else np.asarray(tensor, dtype=float)
    return layer_forward_batch(t[None], spec, weights, noise, ansatz)[0]


def head_probabilities(readouts: np.ndarray, model: CqcModel) -> np.ndarray:
    r = np.asarray(readouts, dtype=float)
    if model.head == "normalize":
        total = r.sum(axis=-1, keepdims=True)
        c = r.shape[-1]
        return np.where(total > 0, r / np.where(total > 0, total, 1.0), 1.0 / c)
    logits = r @ model.fc_weights.T + model.fc_bias
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def forward_batch(model: CqcModel, images, first_patches: np.ndarray | None = None) -> np.ndarray:
    """(n, H, W) images in [0, 1] -> (n, num_classes) probabilities.

    ``first_patches`` lets training reuse the first layer's gathered patches.
    """
    t = np.asarray(images, dtype=float)
    if t.ndim == 2:
        t = t[None]
    if t.shape[1:] != model.input_shape:
        raise InvalidArgument(f"image shape {t.shape[1:]} does not match model input {model.input_shape}")
    for i, (spec, w) in enumerate(zip(model.layers, model.weights)):
        t = layer_forward_batch(t, spec, w, model.noise, model.ansatz, first_patches if i == 0 else None)
    readouts = t.reshape(len(t), -1)[:, :model.num_classes]
    return head_probabilities(readouts, model)


def forward(model: CqcModel, image) -> np.ndarray:
    t = image.values if hasattr(image, "values") else np.asarray(image, dtype=float)
    return forward_batch(model, t[None])[0]


def first_layer_patches(model: CqcModel, images) -> np.ndarray:
    return _index(model.layers[0]).patches(np.asarray(images, dtype=float))


def predict(model: CqcModel, image) -> int:
    return predict_from_probabilities(forward(model, image))


def evaluate(model: CqcModel, images, labels, shots: int | None = None, seed: int = 0, level: float = 0.9,
             depolarization: float | None = None):
    """Accuracy and per-sample ``PredictionRecord``s (see ``dra.evaluate``)."""
    y = np.asarray(labels, dtype=np.int64)
    if len(y) == 0:
        raise EmptyDatasetError("cannot evaluate on an empty dataset")
    probs = forward_batch(model, images)
    records = []
    for i, (p, t) in enumerate(zip(probs, y)):
        counts = qsim.sample_counts(p, shots, seed + i) if shots else None
        records.append(make_record(p, int(t), counts, level=level, depolarization=depolarization))
    accuracy = float(np.mean([r.predicted == r.truth for r in records]))
    return accuracy, records


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _state_to_list(s: QubitState) -> list:
    return [[s.matrix[i, j].real, s.matrix[i, j].imag] for i in range(2) for j in range(2)]


def _state_from_list(v) -> QubitState:
    return QubitState(np.array([complex(re, im) for re, im in v]).reshape(2, 2))


def to_dict(model: CqcModel) -> dict:
    return {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "num_classes": model.num_classes,
        "head": model.head,
        "ansatz": model.ansatz,
        "layers": [
            {
                "in": [s.in_height, s.in_width],
                "out": [s.out_height, s.out_width],
                "field_radius": s.field_radius,
                "depth": s.depth,
                "projection_state": _state_to_list(s.projection_state),
                "weights": w.tolist(),
            }
            for s, w in zip(model.layers, model.weights)
        ],
        "fc_weights": None if model.fc_weights is None else model.fc_weights.tolist(),
        "fc_bias": None if model.fc_bias is None else model.fc_bias.tolist(),
        "noise": None if model.noise is None else model.noise.to_dict(),
        "meta": model.meta,
    }


def from_dict(data: dict) -> CqcModel:
    if data.get("format") != FORMAT:
        raise FormatError(f"not a CQC model file (format={data.get('format')!r})")
    if data.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported CQC model version {data.get('version')}")
    specs, weights = [], []
    for layer in data["layers"]:
        specs.append(CqcLayerSpec(*layer["in"], *layer["out"], layer["field_radius"], layer["depth"],
                                  _state_from_list(layer["projection_state"])))
        weights.append(np.asarray(layer["weights"], dtype=float))
    noise = None if data.get("noise") is None else NoiseModel.from_dict(data["noise"])
    return CqcModel(tuple(specs), tuple(weights), data["num_classes"], data["head"], data["ansatz"],
                    data.get("fc_weights"), data.get("fc_bias"), noise, data.get("meta", {}))


def save(model: CqcModel, path) -> None:
    Path(path).write_text(json.dumps(to_dict(model), indent=1, sort_keys=True) + "\n")


def load(path) -> CqcModel:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON in {path}: {exc}") from exc
    return from_dict(data)

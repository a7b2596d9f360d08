"""Linear and kernel PCA feeding the feature-based classifier.

Model file layout (little-endian)::

    bytes 0-3    b"QPCA"
    uint16       format version (1)
    uint8        kind code (0 linear, 1 kernel_rbf, 2 kernel_linear)
    uint8        reserved (0)
    uint32       input_dim   d
    uint32       output_dim  k
    uint32       n_train     n   (0 for linear)
    float64      kernel_gamma
    float64[d]   mean
    float64[k]   explained variance
    float64[k]   explained variance ratio
    linear:  float64[k*d]  components (row-major, one component per row)
    kernel:  float64[n*d]  training inputs
             float64[n*k]  dual coefficients
             float64[n]    training kernel column means
             float64       training kernel grand mean
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from .errors import FormatError, InvalidArgument, RankDeficiencyError

MAGIC = b"QPCA"
VERSION = 1
KINDS = ("linear", "kernel_rbf", "kernel_linear")
_HEADER = struct.Struct("<4sHBBIIId")

RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class PcaModel:
    kind: str
    mean: np.ndarray
    components: np.ndarray | None
    output_dim: int
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    kernel_gamma: float = 0.0
    train_inputs: np.ndarray | None = None
    dual_coefs: np.ndarray | None = None
    kernel_col_means: np.ndarray | None = None
    kernel_grand_mean: float = 0.0

    @property
    def input_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def is_kernel(self) -> bool:
        return self.kind != "linear"


def _canonical_sign(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so that its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def default_gamma(x: np.ndarray) -> float:
    """1 / (d * median pairwise squared distance)."""
    d2 = pdist(x, metric="sqeuclidean")
    med = float(np.median(d2)) if d2.size else 0.0
    if med <= 0:
        raise RankDeficiencyError("all training points coincide; cannot pick a kernel bandwidth")
    return 1.0 / (x.shape[1] * med)


def _kernel(kind: str, x: np.ndarray, y: np.ndarray, gamma: float) -> np.ndarray:
    if kind == "kernel_linear":
        return x @ y.T
    sq = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * (x @ y.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


def _as_matrix(data) -> np.ndarray:
    if hasattr(data, "flat") and callable(data.flat):
        return data.flat()
    x = np.asarray(data, dtype=float)
    return x.reshape(len(x), -1)


def fit(data, kind: str = "linear", output_dim: int = 2, kernel_gamma: float | None = None) -> PcaModel:
    """Fit PCA on a ``LabeledDataset`` or an (n, ...) array of samples."""
    if kind not in KINDS:
        raise InvalidArgument(f"unknown PCA kind {kind!r}")
    x = _as_matrix(data)
    n, d = x.shape
    if output_dim < 1:
        raise InvalidArgument("output_dim must be at least 1")
    if n < output_dim + 1:
        raise InvalidArgument(f"need at least {output_dim + 1} samples, got {n}")
    mean = x.mean(axis=0)
    xc = x - mean

    if kind == "linear":
        # eigh on the smaller Gram/covariance side; both give the same spectrum
        if n < d:
            evals, u = np.linalg.eigh(xc @ xc.T)
            evals, u = evals[::-1], u[:, ::-1]
            keep = evals[:output_dim]
            if keep[-1] <= RANK_TOL * max(evals[0], 1.0):
                raise RankDeficiencyError(f"covariance rank below output_dim={output_dim}")
            vecs = xc.T @ u[:, :output_dim] / np.sqrt(keep)
        else:
            evals, v = np.linalg.eigh(xc.T @ xc)
            evals, v = evals[::-1], v[:, ::-1]
            keep = evals[:output_dim]
            if keep[-1] <= RANK_TOL * max(evals[0], 1.0):
                raise RankDeficiencyError(f"covariance rank below output_dim={output_dim}")
            vecs = v[:, :output_dim]
        vecs = _canonical_sign(vecs)
        total = float(np.sum(xc * xc))
        var = keep / (n - 1)
        return PcaModel(
            kind="linear",
            mean=mean,
            components=np.ascontiguousarray(vecs.T),
            output_dim=output_dim,
            explained_variance=var,
            explained_variance_ratio=keep / total,
        )

    gamma = float(kernel_gamma) if kernel_gamma is not None else (default_gamma(x) if kind == "kernel_rbf" else 0.0)
    if kind == "kernel_rbf" and gamma <= 0:
        raise InvalidArgument("kernel_gamma must be positive")
    k = _kernel(kind, x, x, gamma)
    col_means = k.mean(axis=0)
    grand = float(col_means.mean())
    kc = k - col_means[None, :] - col_means[:, None] + grand
    evals, v = np.linalg.eigh(0.5 * (kc + kc.T))
    evals, v = evals[::-1], v[:, ::-1]
    keep = evals[:output_dim]
    if keep[-1] <= RANK_TOL * max(evals[0], 1.0):
        raise RankDeficiencyError(f"centered kernel rank below output_dim={output_dim}")
    v = _canonical_sign(v[:, :output_dim])
    positive = evals[evals > 0]
    return PcaModel(
        kind=kind,
        mean=mean,
        components=None,
        output_dim=output_dim,
        explained_variance=keep / n,
        explained_variance_ratio=keep / positive.sum(),
        kernel_gamma=gamma,
        train_inputs=x.copy(),
        dual_coefs=v / np.sqrt(keep),
        kernel_col_means=col_means,
        kernel_grand_mean=grand,
    )


def transform_batch(model: PcaModel, data) -> np.ndarray:
    x = _as_matrix(data)
    if x.shape[1] != model.input_dim:
        raise InvalidArgument(f"input dimension {x.shape[1]} does not match fitted {model.input_dim}")
    if model.kind == "linear":
        return (x - model.mean) @ model.components.T
    k = _kernel(model.kind, x, model.train_inputs, model.kernel_gamma)
    kc = k - model.kernel_col_means[None, :] - k.mean(axis=1, keepdims=True) + model.kernel_grand_mean
    return kc @ model.dual_coefs


def transform(model: PcaModel, image) -> np.ndarray:
    values = image.values if hasattr(image, "values") else np.asarray(image, dtype=float)
    return transform_batch(model, values.reshape(1, -1))[0]


def fitted_projections(model: PcaModel) -> np.ndarray:
    """Training-set coordinates as computed at fit time (kernel models only)."""
    if not model.is_kernel:
        raise InvalidArgument("fitted projections are stored only for kernel models")
    # eigenvector * sqrt(eigenvalue), recovered from the stored dual coefficients
    eigenvalues = model.explained_variance * model.train_inputs.shape[0]
    return model.dual_coefs * eigenvalues


def reconstruction_error(model: PcaModel, data) -> float:
    """Mean squared reconstruction error of a linear model."""
    if model.kind != "linear":
        raise InvalidArgument("reconstruction is defined for linear PCA only")
    x = _as_matrix(data)
    z = transform_batch(model, x)
    recon = z @ model.components + model.mean
    return float(np.mean(np.sum((x - recon) ** 2, axis=1)))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def to_bytes(model: PcaModel) -> bytes:
    n = 0 if model.train_inputs is None else model.train_inputs.shape[0]
    parts = [
        _HEADER.pack(MAGIC, VERSION, KINDS.index(model.kind), 0, model.input_dim, model.output_dim, n, model.kernel_gamma),
        np.asarray(model.mean, "<f8").tobytes(),
        np.asarray(model.explained_variance, "<f8").tobytes(),
        np.asarray(model.explained_variance_ratio, "<f8").tobytes(),
    ]
    if model.kind == "linear":
        parts.append(np.asarray(model.components, "<f8").tobytes())
    else:
        parts += [
            np.asarray(model.train_inputs, "<f8").tobytes(),
            np.asarray(model.dual_coefs, "<f8").tobytes(),
            np.asarray(model.kernel_col_means, "<f8").tobytes(),
            struct.pack("<d", model.kernel_grand_mean),
        ]
    return b"".join(parts)


def from_bytes(data: bytes) -> PcaModel:
    if len(data) < _HEADER.size:
        raise FormatError("truncated PCA header", offset=len(data))
    magic, version, kind_code, _, d, k, n, gamma = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad PCA magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported PCA format version {version}", offset=4)
    if kind_code >= len(KINDS):
        raise FormatError(f"unknown PCA kind code {kind_code}", offset=6)
    kind = KINDS[kind_code]
    pos = _HEADER.size

    def take(count: int) -> np.ndarray:
        nonlocal pos
        end = pos + 8 * count
        if end > len(data):
            raise FormatError("truncated PCA payload", offset=len(data))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(float)
        pos = end
        return arr

    mean = take(d)
    var = take(k)
    ratio = take(k)
    if kind == "linear":
        return PcaModel(kind, mean, take(k * d).reshape(k, d), k, var, ratio)
    train = take(n * d).reshape(n, d)
    coefs = take(n * k).reshape(n, k)
    col_means = take(n)
    (grand,) = take(1)
    return PcaModel(kind, mean, None, k, var, ratio, gamma, train, coefs, col_means, float(grand))


def save(model: PcaModel, path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load(path) -> PcaModel:
    return from_bytes(Path(path).read_bytes())

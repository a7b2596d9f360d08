"""Certification metrics for classifier outputs.

* ``min_robustness_fidelity``: the fidelity threshold r_F computed from the
  two largest output probabilities.
* ``certified_accuracy``: fraction of records that are correct and certified
  at fidelity ``1 - epsilon``.
* ``depolarization_radius``: the trace-distance radius r_DP guaranteed by a
  depolarizing channel of rate ``p``.
* ``confidence_bounds``: one-sided Clopper-Pearson bounds from shot counts.

In shot mode a record is certified only when the lower bound on the top class
beats the upper bound on the runner-up. Uncertified records report r_F = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import beta

from .errors import EmptyDatasetError, InvalidArgument, NumericDomainError
from .qsim import QubitState

# Highest p_A fed to the depolarization radius; exactly 1 has no finite radius.
MAX_P_A = 1.0 - 1e-12


def min_robustness_fidelity(p_a: float, p_b: float) -> float:
    """r_F for top-two probabilities ``p_a >= p_b``.

    The square root of the defining radicand is evaluated as
    ``sqrt((1-p_a)(1-p_b)) + sqrt(p_a p_b)``, which is the same quantity
    without the cancellation of the expanded form.
    """
    p_a, p_b = float(p_a), float(p_b)
    if not (math.isfinite(p_a) and math.isfinite(p_b)):
        raise InvalidArgument("probabilities must be finite")
    if not 0.0 <= p_b <= p_a <= 1.0:
        raise InvalidArgument(f"need 1 >= p_A >= p_B >= 0, got p_A={p_a}, p_B={p_b}")
    root = math.sqrt((1.0 - p_a) * (1.0 - p_b)) + math.sqrt(p_a * p_b)
    return min(1.0, 0.5 * (1.0 + root))


def depolarization_radius(p: float, p_a: float) -> float:
    """Certified trace-distance radius under depolarization rate ``p``; 0 when p_A <= 1/2."""
    p, p_a = float(p), float(p_a)
    if not 0.0 <= p <= 1.0:
        raise InvalidArgument(f"depolarization rate {p} outside [0, 1)")
    if p == 1.0:
        raise InvalidArgument("depolarization rate 1 destroys all information")
    if not 0.0 <= p_a <= 1.0:
        raise InvalidArgument(f"p_A {p_a} outside [0, 1]")
    if p_a in (0.0, 1.0):
        raise NumericDomainError(f"p_A = {p_a} gives an undefined radius")
    r = p / (2.0 * (1.0 - p)) * (math.sqrt(p_a / (1.0 - p_a)) - 1.0)
    return max(0.0, r)


def _top_two(values: np.ndarray) -> tuple[int, int]:
    order = np.argsort(-values, kind="stable")
    return int(order[0]), int(order[1])


def confidence_bounds(shot_counts: Sequence[int], shots: int, level: float) -> tuple[float, float]:
    """(lower bound on the top class, upper bound on the runner-up), each one-sided at ``level``."""
    counts = np.asarray(shot_counts, dtype=np.int64)
    if counts.ndim != 1 or counts.size < 2:
        raise InvalidArgument("need a count per class, at least two classes")
    if np.any(counts < 0) or int(counts.sum()) != int(shots) or shots <= 0:
        raise InvalidArgument(f"counts {counts.tolist()} must be non-negative and sum to shots={shots}")
    if not 0.0 < level < 1.0:
        raise InvalidArgument(f"level must lie in (0, 1), got {level}")
    top, runner = _top_two(counts.astype(float))
    k_a, k_b = int(counts[top]), int(counts[runner])
    lower = 0.0 if k_a == 0 else float(beta.ppf(1.0 - level, k_a, shots - k_a + 1))
    upper = 1.0 if k_b == shots else float(beta.ppf(level, k_b + 1, shots - k_b))
    return lower, upper


@dataclass(frozen=True, eq=False)
class PredictionRecord:
    """Per-sample classifier output and its certificate.

    ``p_a`` and ``p_b`` are the values the certificate is computed from: the
    exact top-two probabilities, or in shot mode the confidence bounds.
    """

    probabilities: np.ndarray
    shot_counts: np.ndarray | None
    predicted: int
    truth: int
    p_a: float
    p_b: float
    r_f: float
    certified: bool
    r_dp: float | None = None
    state: QubitState | None = None

    @property
    def correct(self) -> bool:
        return self.predicted == self.truth

    def to_dict(self) -> dict:
        return {
            "probabilities": [float(v) for v in self.probabilities],
            "shot_counts": None if self.shot_counts is None else [int(v) for v in self.shot_counts],
            "predicted": self.predicted,
            "truth": self.truth,
            "p_a": self.p_a,
            "p_b": self.p_b,
            "r_f": self.r_f,
            "certified": self.certified,
            "r_dp": self.r_dp,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PredictionRecord":
        counts = data.get("shot_counts")
        return cls(
            np.asarray(data["probabilities"], dtype=float),
            None if counts is None else np.asarray(counts, dtype=np.int64),
            int(data["predicted"]),
            int(data["truth"]),
            float(data["p_a"]),
            float(data["p_b"]),
            float(data["r_f"]),
            bool(data["certified"]),
            data.get("r_dp"),
        )


def make_record(
    probabilities,
    truth: int,
    shot_counts=None,
    level: float = 0.9,
    depolarization: float | None = None,
    state: QubitState | None = None,
) -> PredictionRecord:
    """Build a record from exact probabilities, or from shot counts when given.

    In shot mode the prediction is the most frequent outcome and the
    certificate uses the confidence bounds at ``level``.
    """
    probs = np.asarray(probabilities, dtype=float)
    if probs.ndim != 1 or probs.size < 2:
        raise InvalidArgument("need a probability per class, at least two classes")
    if shot_counts is None:
        predicted, runner = _top_two(probs)
        p_a, p_b = float(probs[predicted]), float(probs[runner])
        certified = True
        counts = None
    else:
        counts = np.asarray(shot_counts, dtype=np.int64)
        if counts.shape != probs.shape:
            raise InvalidArgument("shot counts and probabilities disagree in length")
        predicted, _ = _top_two(counts.astype(float))
        p_a, p_b = confidence_bounds(counts, int(counts.sum()), level)
        certified = p_a >= p_b
    r_f = min_robustness_fidelity(p_a, p_b) if certified else 0.0
    r_dp = None
    if depolarization is not None:
        r_dp = depolarization_radius(depolarization, min(max(p_a, 1e-300), MAX_P_A)) if certified else 0.0
    return PredictionRecord(probs.copy(), counts, predicted, int(truth), p_a, p_b, r_f, certified, r_dp, state)


def certified_accuracy(records: Sequence[PredictionRecord], epsilon: float) -> float:
    """Fraction of records that are correct, certified and have r_F <= 1 - epsilon."""
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidArgument(f"epsilon must lie in [0, 1], got {epsilon}")
    if not records:
        raise EmptyDatasetError("no records")
    hits = sum(1 for r in records if r.correct and r.certified and r.r_f <= 1.0 - epsilon)
    return hits / len(records)


@dataclass(frozen=True)
class CertificationErrors:
    certified: int
    certified_errors: int
    uncertified: int
    uncertified_errors: int

    @property
    def certified_error_rate(self) -> float:
        return self.certified_errors / self.certified if self.certified else math.nan

    @property
    def uncertified_error_rate(self) -> float:
        return self.uncertified_errors / self.uncertified if self.uncertified else math.nan


def error_rates_by_certification(records: Sequence[PredictionRecord]) -> CertificationErrors:
    cert = [r for r in records if r.certified]
    unc = [r for r in records if not r.certified]
    return CertificationErrors(
        len(cert), sum(not r.correct for r in cert), len(unc), sum(not r.correct for r in unc)
    )


def perturb_bloch(vector: np.ndarray, distance: float, rng: np.random.Generator, trials: int) -> np.ndarray:
    """``trials`` Bloch vectors at trace distance ``distance`` from ``vector`` in uniform random
    directions, pulled back onto the unit sphere when they would leave the ball."""
    r = np.asarray(vector, dtype=float)
    u = rng.standard_normal((trials, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    step = 2.0 * distance
    # largest t <= step with |r + t u| <= 1
    ru = u @ r
    reach = -ru + np.sqrt(np.maximum(ru * ru - (r @ r - 1.0), 0.0))
    t = np.minimum(step, np.maximum(reach, 0.0))
    return r + t[:, None] * u


def empirical_robustness_check(model, record: PredictionRecord, radius: float, trials: int = 1000,
                               seed: int = 0) -> int:
    """Count label changes over ``trials`` random state perturbations of size ``radius``.

    ``model`` must provide ``classify_states_batch`` (e.g. ``dra.DepolarizedDra``),
    and ``record.state`` must hold the encoded state before the declared noise.
    """
    if record.state is None:
        raise InvalidArgument("record carries no encoded state")
    if radius < 0:
        raise InvalidArgument("radius must be non-negative")
    if radius == 0 or trials <= 0:
        return 0
    rng = np.random.default_rng(seed)
    bloch = perturb_bloch(record.state.bloch(), radius, rng, trials)
    # Bloch (x, y, z) -> batched (rho00, Re rho01, Im rho01)
    state = (0.5 * (1.0 + bloch[:, 2]), 0.5 * bloch[:, 0], -0.5 * bloch[:, 1])
    probs = model.classify_states_batch(state)
    labels = np.argmax(probs, axis=1)
    return int(np.count_nonzero(labels != record.predicted))


def certification_table(records: Sequence[PredictionRecord]) -> str:
    """Tab-separated rows: index, truth, predicted, p_A, p_B, r_F, r_DP, certified, correct."""
    lines = ["index\ttruth\tpredicted\tp_a\tp_b\tr_f\tr_dp\tcertified\tcorrect"]
    for i, r in enumerate(records):
        r_dp = "" if r.r_dp is None else repr(r.r_dp)
        lines.append(f"{i}\t{r.truth}\t{r.predicted}\t{r.p_a!r}\t{r.p_b!r}\t{r.r_f!r}\t{r_dp}\t"
                     f"{int(r.certified)}\t{int(r.correct)}")
    return "\n".join(lines) + "\n"


def certified_accuracy_curve(records: Sequence[PredictionRecord], epsilons: Sequence[float]) -> list[tuple[float, float]]:
    return [(float(e), certified_accuracy(records, e)) for e in epsilons]

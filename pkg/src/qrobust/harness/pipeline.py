"""Experiment steps behind the CLI: prepare, train, eval, attack, certify, noise-sweep.

Every step writes its outputs into the configured output directory. Reports
are JSON with sorted keys, JSONL for per-sample rows and TSV for plot-ready
tables. Wall-clock timings go to a separate ``timing.json`` so that all other
reports are byte-identical for a fixed master seed.

Sub-seeds are ``sha256(f"{master}/{tag}")`` truncated to 63 bits, so adding a
new tag never shifts an existing stream.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import __version__, attack, cqc, dra, evolve, features, mnist, qsim, robustness
from ..errors import EvaluationError, FormatError
from ..robustness import PredictionRecord
from .config import ExperimentConfig

log = logging.getLogger(__name__)

MODEL_FILE = "model.json"
PCA_FILE = "pca.bin"
MODEL_FORMAT = "qrobust.classifier"
# Accuracy enters the training fitness only to break likelihood ties.
ACCURACY_TIE_BREAK = 1e-6
LOG_FLOOR = 1e-12


def sub_seed(master: int, tag: str) -> int:
    digest = hashlib.sha256(f"{int(master)}/{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFFFFFFFFFFFFFF


def write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=1) + "\n")


def write_jsonl(path: Path, rows: Sequence[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))


def read_jsonl(path: Path) -> list[dict]:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from None
    try:
        return [json.loads(line) for line in lines if line.strip()]
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSONL in {path}: {exc}") from None


def record_timing(out_dir: Path, step: str, seconds: float) -> None:
    path = out_dir / "timing.json"
    data = json.loads(path.read_text()) if path.is_file() else {}
    data[step] = round(seconds, 3)
    write_json(path, data)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Splits:
    train: mnist.LabeledDataset
    test: mnist.LabeledDataset


def splits(cfg: ExperimentConfig) -> Splits:
    """Class-balanced train/test subsets, reproducible from the master seed."""
    d = cfg.data
    c = cfg.num_classes
    train = mnist.load_dataset(d.train_images, d.train_labels)
    test = mnist.load_dataset(d.test_images, d.test_labels)
    return Splits(
        mnist.subset(train, d.digits, d.train_size // c, sub_seed(cfg.seed, "split/train")),
        mnist.subset(test, d.digits, d.test_size // c, sub_seed(cfg.seed, "split/test")),
    )


def cmd_prepare(cfg: ExperimentConfig) -> dict:
    s = splits(cfg)
    out = cfg.output_dir / "data"
    out.mkdir(parents=True, exist_ok=True)
    for name, ds in (("train", s.train), ("test", s.test)):
        (out / f"{name}-images-idx3-ubyte").write_bytes(mnist.write_idx_images(ds.images))
        (out / f"{name}-labels-idx1-ubyte").write_bytes(mnist.write_idx_labels(ds.labels))
    report = {
        "class_map": {str(k): v for k, v in s.train.class_map.items()},
        "train_size": len(s.train),
        "test_size": len(s.test),
        "train_class_counts": np.bincount(s.train.labels, minlength=cfg.num_classes).tolist(),
        "test_class_counts": np.bincount(s.test.labels, minlength=cfg.num_classes).tolist(),
        "version": __version__,
    }
    write_json(cfg.output_dir / "prepare.json", report)
    return report


# ---------------------------------------------------------------------------
# classifiers behind one interface
# ---------------------------------------------------------------------------


class PcaDraClassifier:
    kind = "pca_dra"

    def __init__(self, pca: features.PcaModel, model: dra.DraModel):
        self.pca = pca
        self.model = model

    @property
    def num_classes(self) -> int:
        return self.model.num_classes

    def with_noise(self, noise: qsim.NoiseModel | None) -> "PcaDraClassifier":
        return PcaDraClassifier(self.pca, self.model.with_noise(noise))

    def _features(self, images) -> np.ndarray:
        x = np.asarray(images, dtype=float)
        return features.transform_batch(self.pca, x.reshape(len(x), -1))

    def probabilities(self, images) -> np.ndarray:
        return dra.forward_batch(self.model, self._features(images))

    def evaluate(self, images, labels, shots=None, seed=0, level=0.9, depolarization=None):
        return dra.evaluate(self.model, self._features(images), labels, shots, seed, level, depolarization)

    def param_count(self) -> int:
        return self.model.param_count

    def save(self, directory: Path) -> Path:
        features.save(self.pca, directory / PCA_FILE)
        path = directory / MODEL_FILE
        write_json(path, {"format": MODEL_FORMAT, "classifier": self.kind, "pca_file": PCA_FILE,
                          "model": dra.to_dict(self.model)})
        return path


class CqcClassifier:
    kind = "cqc"

    def __init__(self, model: cqc.CqcModel):
        self.model = model

    @property
    def num_classes(self) -> int:
        return self.model.num_classes

    def with_noise(self, noise: qsim.NoiseModel | None) -> "CqcClassifier":
        return CqcClassifier(self.model.with_noise(noise))

    def probabilities(self, images) -> np.ndarray:
        return cqc.forward_batch(self.model, images)

    def evaluate(self, images, labels, shots=None, seed=0, level=0.9, depolarization=None):
        return cqc.evaluate(self.model, images, labels, shots, seed, level, depolarization)

    def param_count(self) -> int:
        return cqc.param_count(self.model)

    def save(self, directory: Path) -> Path:
        path = directory / MODEL_FILE
        write_json(path, {"format": MODEL_FORMAT, "classifier": self.kind, "model": cqc.to_dict(self.model)})
        return path


def load_classifier(path) -> PcaDraClassifier | CqcClassifier:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except OSError as exc:
        raise FormatError(f"cannot read model file {p}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON in model file {p}: {exc}") from None
    if not isinstance(data, dict) or data.get("format") != MODEL_FORMAT:
        raise FormatError(f"{p} is not a classifier file")
    if data.get("classifier") == "pca_dra":
        try:
            pca = features.load(p.parent / data["pca_file"])
        except OSError as exc:
            raise FormatError(f"cannot read PCA file: {exc}") from None
        return PcaDraClassifier(pca, dra.from_dict(data["model"]))
    if data.get("classifier") == "cqc":
        return CqcClassifier(cqc.from_dict(data["model"]))
    raise FormatError(f"unknown classifier kind {data.get('classifier')!r}")


def _classifier_for(cfg: ExperimentConfig, model_path) -> PcaDraClassifier | CqcClassifier:
    clf = load_classifier(model_path or cfg.output_dir / MODEL_FILE)
    return clf.with_noise(qsim.noise_preset(cfg.noise))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def likelihood_fitness(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Mean log-probability of the true class (negative cross-entropy) plus a tiny accuracy term.

    ``probs`` is (P, n, C); the result has one value per parameter set.
    """
    n = len(labels)
    p_true = probs[:, np.arange(n), labels]
    loglik = np.log(np.clip(p_true, LOG_FLOOR, 1.0)).mean(axis=1)
    accuracy = (probs.argmax(axis=2) == labels[None, :]).mean(axis=1)
    return loglik + ACCURACY_TIE_BREAK * accuracy


def _train_pca_dra(cfg: ExperimentConfig, train: mnist.LabeledDataset):
    s = cfg.pca_dra
    pca = features.fit(train, s.pca_kind, s.pca_dim, s.kernel_gamma)
    x = features.transform_batch(pca, train)
    labels = train.labels
    states = dra.label_states(cfg.num_classes)
    groups = s.parameter_groups or s.layers
    width = s.pca_dim + 1

    def theta_of(genomes: np.ndarray) -> np.ndarray:
        g = genomes.reshape(len(genomes), groups, width)
        return g[:, np.arange(s.layers) % groups]

    def fitness(genomes: np.ndarray) -> np.ndarray:
        state = dra.encode_batch(theta_of(genomes), x, s.ansatz)
        return likelihood_fitness(dra.readout(state, states), labels)

    ga = cfg.train_ga.to_ga(groups * width, sub_seed(cfg.seed, "train"), cfg.workers)
    result = evolve.run(ga, fitness)
    model = dra.DraModel(theta_of(result.best.genome[None])[0], states, s.ansatz, None,
                         s.parameter_groups, {"digits": cfg.data.digits})
    return PcaDraClassifier(pca, model), result


def _train_cqc(cfg: ExperimentConfig, train: mnist.LabeledDataset):
    s = cfg.cqc
    specs = cqc.build_architecture(train.images.shape[1:], [tuple(g) for g in s.grids], s.depth, s.field_radius)
    base = cqc.CqcModel(specs, tuple(np.zeros(sp.weight_shape) for sp in specs), cfg.num_classes, s.head,
                        meta={"digits": cfg.data.digits})
    patches = cqc.first_layer_patches(base, train.images)
    labels = train.labels

    def fitness(genomes: np.ndarray) -> np.ndarray:
        probs = np.stack([cqc.forward_batch(base.with_parameters(g), train.images, patches) for g in genomes])
        return likelihood_fitness(probs, labels)

    ga = cfg.train_ga.to_ga(cqc.param_count(base), sub_seed(cfg.seed, "train"), cfg.workers)
    result = evolve.run(ga, fitness)
    return CqcClassifier(base.with_parameters(result.best.genome)), result


def cmd_train(cfg: ExperimentConfig) -> dict:
    """Train the configured classifier; writes the model, a generation log and ``train.json``."""
    start = time.perf_counter()
    data = splits(cfg)
    trainer = _train_pca_dra if cfg.classifier == "pca_dra" else _train_cqc
    clf, result = trainer(cfg, data.train)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    clf.save(out)
    (out / "training_log.tsv").write_text(evolve.format_log(result.log_rows))
    train_probs = clf.probabilities(data.train.images)
    train_acc = float(np.mean(train_probs.argmax(axis=1) == data.train.labels))
    improved = result.history[-1] > result.history[0]
    status = "ok" if improved or result.stopped_by == "stagnation" else "warning"
    if status == "warning":
        log.warning("training did not improve on the initial population in %d generations", result.generations)
    report = {
        "classifier": clf.kind,
        "param_count": clf.param_count(),
        "generations": result.generations,
        "stopped_by": result.stopped_by,
        "evaluations": result.evaluations,
        "best_fitness": result.best.fitness,
        "train_accuracy": train_acc,
        "train_size": len(data.train),
        "status": status,
        "config": cfg.snapshot(),
        "version": __version__,
    }
    write_json(out / "train.json", report)
    record_timing(out, "train", time.perf_counter() - start)
    return report


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def aggregate_records(records: Sequence[PredictionRecord] | Sequence[dict]) -> dict:
    """Aggregates that a report must reproduce from its per-sample rows."""
    rows = [r.to_dict() if isinstance(r, PredictionRecord) else r for r in records]
    n = len(rows)
    correct = sum(1 for r in rows if r["predicted"] == r["truth"])
    certified = sum(1 for r in rows if r["certified"])
    return {"n": n, "correct": correct, "accuracy": correct / n if n else 0.0, "certified": certified}


def cmd_eval(cfg: ExperimentConfig, model_path=None) -> dict:
    start = time.perf_counter()
    clf = _classifier_for(cfg, model_path)
    test = splits(cfg).test
    out = cfg.output_dir
    _, records = clf.evaluate(test.images, test.labels)
    write_jsonl(out / "records.jsonl", [r.to_dict() for r in records])
    report = {
        "classifier": clf.kind,
        "noise": cfg.noise,
        "exact": aggregate_records(records),
        "config": cfg.snapshot(),
        "version": __version__,
    }
    if cfg.shots:
        _, shot_records = clf.evaluate(test.images, test.labels, cfg.shots, sub_seed(cfg.seed, "shots"),
                                       cfg.certify.level)
        write_jsonl(out / "records_shots.jsonl", [r.to_dict() for r in shot_records])
        report["shots"] = {"shots": cfg.shots, "level": cfg.certify.level, **aggregate_records(shot_records)}
    write_json(out / "eval.json", report)
    record_timing(out, "eval", time.perf_counter() - start)
    return report


# ---------------------------------------------------------------------------
# attack
# ---------------------------------------------------------------------------


def cmd_attack(cfg: ExperimentConfig, model_path=None) -> dict:
    start = time.perf_counter()
    clf = _classifier_for(cfg, model_path)
    test = splits(cfg).test
    a = cfg.attack
    n = min(a.num_seeds, len(test))
    results = []
    for i in range(n):
        ga = a.ga.to_ga(test.images[i].size, sub_seed(cfg.seed, f"attack/{i}"), cfg.workers,
                        lower=0.0, upper=attack.PIXEL_MAX)
        config = attack.AttackConfig(clf.probabilities, int(test.labels[i]), None, clf.num_classes,
                                     a.w0, a.w1, a.mode, ga)
        res = attack.generate(test.tensor(i), config)
        log.info("attack %d/%d: truth %d predicted %d success %s perturbation %.3f",
                 i + 1, n, res.truth, res.predicted, res.success, res.avg_pixel_perturbation)
        results.append(res)
    out = cfg.output_dir / "attack"
    attack.save_adversarial_set(results, out)
    clean = clf.probabilities(test.images[:n]).argmax(axis=1)
    report = {"classifier": clf.kind, "noise": cfg.noise, **attack_summary(results),
              "clean_accuracy": float(np.mean(clean == test.labels[:n])),
              "config": cfg.snapshot(), "version": __version__}
    write_json(cfg.output_dir / "attack.json", report)
    record_timing(cfg.output_dir, "attack", time.perf_counter() - start)
    return report


def attack_summary(results: Sequence[attack.AdversarialResult] | Sequence[dict]) -> dict:
    rows = [r.report_row() if isinstance(r, attack.AdversarialResult) else r for r in results]
    ok = [r for r in rows if r["success"]]
    return {
        "num_attacks": len(rows),
        "adversarial_accuracy": sum(r["predicted"] == r["truth"] for r in rows) / len(rows),
        "success_rate": len(ok) / len(rows),
        "mean_perturbation": float(np.mean([r["avg_pixel_perturbation"] for r in rows])),
        "mean_perturbation_successful": float(np.mean([r["avg_pixel_perturbation"] for r in ok])) if ok else None,
        "mean_rmse": float(np.mean([r["rmse"] for r in rows])),
        "classifier_calls": int(sum(r["classifier_calls"] for r in rows)),
    }


# ---------------------------------------------------------------------------
# certification and noise sweeps
# ---------------------------------------------------------------------------


def _with_radius(record: PredictionRecord, p: float) -> PredictionRecord:
    p_a = min(max(record.p_a, 1e-300), robustness.MAX_P_A)
    r_dp = robustness.depolarization_radius(p, p_a) if record.certified else 0.0
    return PredictionRecord(record.probabilities, record.shot_counts, record.predicted, record.truth,
                            record.p_a, record.p_b, record.r_f, record.certified, r_dp)


def cmd_certify(cfg: ExperimentConfig, records_path=None) -> dict:
    """Certificates for shot-mode records: per-record table, accuracy-vs-epsilon curve, error split."""
    start = time.perf_counter()
    path = Path(records_path) if records_path else cfg.output_dir / "records_shots.jsonl"
    rows = read_jsonl(path)
    records = [PredictionRecord.from_dict(r) for r in rows]
    if not records or any(r.shot_counts is None for r in records):
        raise EvaluationError(f"{path} holds no shot-count records; run eval with shots set")
    c = cfg.certify
    records = [_with_radius(r, c.depolarization) for r in records]
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "certify.tsv").write_text(robustness.certification_table(records))
    curve = robustness.certified_accuracy_curve(records, c.epsilons)
    (out / "certify_curve.tsv").write_text(
        "epsilon\tcertified_accuracy\n" + "".join(f"{e!r}\t{a!r}\n" for e, a in curve))
    errs = robustness.error_rates_by_certification(records)
    report = {
        "level": c.level,
        "depolarization": c.depolarization,
        **aggregate_records(records),
        "certified_errors": errs.certified_errors,
        "uncertified": errs.uncertified,
        "uncertified_errors": errs.uncertified_errors,
        "curve": [[e, a] for e, a in curve],
        "mean_r_dp": float(np.mean([r.r_dp for r in records])),
        "version": __version__,
    }
    write_json(out / "certify.json", report)
    record_timing(out, "certify", time.perf_counter() - start)
    return report


def cmd_noise_sweep(cfg: ExperimentConfig, model_path=None, channels: Sequence[str] | None = None,
                    grid: Sequence[float] | None = None) -> list[dict]:
    """Exact-mode accuracy and mean r_DP per (channel, probability); the base model is noiseless."""
    start = time.perf_counter()
    clf = load_classifier(model_path or cfg.output_dir / MODEL_FILE)
    test = splits(cfg).test
    channels = list(channels or cfg.sweep.channels)
    grid = sorted(grid if grid is not None else cfg.sweep.grid)
    rows = []
    for kind in channels:
        for p in grid:
            noisy = clf.with_noise(qsim.single_channel_model(kind, p))
            acc, records = noisy.evaluate(test.images, test.labels, depolarization=p if p < 1 else None)
            r_dp = [r.r_dp for r in records if r.r_dp is not None]
            rows.append({"channel": kind, "probability": float(p), "accuracy": acc, "n": len(records),
                         "mean_r_dp": float(np.mean(r_dp)) if r_dp else None})
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    lines = ["channel\tprobability\taccuracy\tmean_r_dp\tn"]
    lines += [f"{r['channel']}\t{r['probability']!r}\t{r['accuracy']!r}\t"
              f"{'' if r['mean_r_dp'] is None else repr(r['mean_r_dp'])}\t{r['n']}" for r in rows]
    (out / "noise_sweep.tsv").write_text("\n".join(lines) + "\n")
    write_json(out / "noise_sweep.json", {"classifier": clf.kind, "rows": rows, "version": __version__})
    record_timing(out, "noise_sweep", time.perf_counter() - start)
    return rows

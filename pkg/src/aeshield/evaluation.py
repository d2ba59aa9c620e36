"""Scoring: confusion matrices, classification reports, sweeps and CSV/JSON exports."""

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_labels
from .attacks import AttackSpec, run_attack
from .exceptions import ConfigError, InvalidInputError, ShapeError

N_CLASSES = 10


def confusion(preds, labels, n_classes=N_CLASSES):
    """Counts with rows = true label, columns = predicted label."""
    preds = check_labels(preds, n_classes=n_classes)
    labels = check_labels(labels, n_classes=n_classes)
    if preds.shape != labels.shape:
        raise InvalidInputError(f"{len(preds)} predictions for {len(labels)} labels")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def accuracy(cm):
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise InvalidInputError("accuracy of an empty confusion matrix")
    return float(np.trace(cm) / total)


def _ratio(num, den):
    num = num.astype(np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


@dataclass
class ClassReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def to_dict(self):
        return {
            "classes": [
                {
                    "class": c,
                    "precision": float(self.precision[c]),
                    "recall": float(self.recall[c]),
                    "f1": float(self.f1[c]),
                    "support": int(self.support[c]),
                }
                for c in range(len(self.support))
            ],
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
        }


def report(cm):
    """Per-class precision/recall/F1; undefined ratios are reported as 0."""
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ShapeError(f"confusion matrix must be square, got {cm.shape}")
    tp = np.diag(cm)
    support = cm.sum(axis=1)
    precision = _ratio(tp, cm.sum(axis=0))
    recall = _ratio(tp, support)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return ClassReport(
        precision,
        recall,
        f1,
        support.astype(np.int64),
        accuracy(cm),
        float(precision.mean()),
        float(recall.mean()),
        float(f1.mean()),
    )


def misprediction_heatmap(cm):
    """Off-diagonal counts, each row scaled to sum to 1 (all-zero rows stay zero)."""
    m = np.asarray(cm, dtype=np.float64).copy()
    np.fill_diagonal(m, 0.0)
    return _ratio(m, m.sum(axis=1, keepdims=True))


def fooling_rate(batch, pipeline, targets=None, targeted=None):
    """Fraction of samples the attack fooled.

    Non-targeted: among samples classified correctly before the attack, the
    share misclassified after it. Targeted: share of adversarials predicted as
    exactly ``targets[y]``.
    """
    if targeted is None:
        targeted = targets is not None or batch.attack.targets is not None
    adv = pipeline.predict(batch.adversarials)
    if targeted:
        targets = targets if targets is not None else batch.attack.targets
        if targets is None:
            raise ConfigError("targeted fooling rate needs a target map")
        return float(np.mean(adv == targets.lookup(batch.true_labels)))
    correct = pipeline.predict(batch.originals) == batch.true_labels
    if not correct.any():
        return 0.0
    return float(np.mean(adv[correct] != batch.true_labels[correct]))


@dataclass
class EvalReport:
    confusion: np.ndarray
    report: ClassReport
    attack: dict | None = None
    extras: dict = field(default_factory=dict)

    @property
    def accuracy(self):
        return self.report.accuracy

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "report": self.report.to_dict(),
            "attack": self.attack,
            **self.extras,
        }


def evaluate(pipeline, x, y, batch=None):
    """Score ``pipeline`` on clean ``x`` or on ``batch.adversarials``."""
    inputs = x if batch is None else batch.adversarials
    cm = confusion(pipeline.predict(inputs), y)
    extras = {}
    attack = None
    if batch is not None:
        attack = batch.attack.describe()
        extras["fooling_rate"] = fooling_rate(batch, pipeline, targeted=False)
        if batch.attack.targets is not None:
            extras["targeted_fooling_rate"] = fooling_rate(batch, pipeline, targeted=True)
        extras["mean_linf"] = float(batch.linf().mean())
        extras["mean_l2"] = float(batch.l2().mean())
    return EvalReport(cm, report(cm), attack, extras)


@dataclass
class SweepResult:
    variant: str
    attack_kind: str
    epsilons: list
    accuracies: list
    seed: int | None = None

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.epsilons, self.epsilons[1:])):
            raise ConfigError("sweep epsilons must be strictly increasing")

    def rows(self):
        return [(self.variant, e, a) for e, a in zip(self.epsilons, self.accuracies)]


def epsilon_sweep(pipeline_with, pipeline_without, attack_kind, epsilons, x, y, seed=None, **attack_params):
    """Accuracy at every epsilon for the defended and undefended pipelines.

    Each pipeline is attacked with its own gradients; the models are trained
    once and reused across the grid.
    """
    epsilons = [float(e) for e in epsilons]
    if not epsilons:
        raise ConfigError("epsilon list is empty")
    out = []
    for variant, pipe in (("defended", pipeline_with), ("undefended", pipeline_without)):
        accs = []
        for eps in epsilons:
            spec = AttackSpec(attack_kind, eps, **attack_params)
            batch = run_attack(pipe, x, y, spec)
            accs.append(float(np.mean(pipe.predict(batch.adversarials) == batch.true_labels)))
        out.append(SweepResult(variant, attack_kind, epsilons, accs, seed))
    return tuple(out)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return repr(float(v))


def write_confusion_csv(path, cm):
    cm = np.asarray(cm)
    rows = [(t, p, int(cm[t, p])) for t in range(cm.shape[0]) for p in range(cm.shape[1])]
    _write_rows(path, ("true", "pred", "count"), rows)


def write_report_csv(path, rep):
    rows = [
        (c, _fmt(rep.precision[c]), _fmt(rep.recall[c]), _fmt(rep.f1[c]), int(rep.support[c]))
        for c in range(len(rep.support))
    ]
    _write_rows(path, ("class", "precision", "recall", "f1", "support"), rows)


def write_sweep_csv(path, results):
    rows = [(v, _fmt(e), _fmt(a)) for res in results for v, e, a in res.rows()]
    _write_rows(path, ("variant", "epsilon", "accuracy"), rows)


def write_heatmap_csv(path, heat):
    heat = np.asarray(heat)
    rows = [(t, p, _fmt(heat[t, p])) for t in range(heat.shape[0]) for p in range(heat.shape[1])]
    _write_rows(path, ("true", "pred", "weight"), rows)


def write_loss_csv(path, history):
    _write_rows(path, ("epoch", "loss"), [(i + 1, _fmt(v)) for i, v in enumerate(history)])


def write_table_csv(path, header, rows):
    _write_rows(path, header, [[_fmt(v) if isinstance(v, float) else v for v in r] for r in rows])


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dump_json(path, payload):
    """Deterministic JSON (sorted keys, fixed separators)."""
    text = json.dumps(payload, default=_jsonable, sort_keys=True, indent=1)
    with open(path, "w") as f:
        f.write(text + "\n")


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

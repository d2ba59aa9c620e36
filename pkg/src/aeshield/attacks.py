"""Gradient-based evasion attacks against :class:`DefendedClassifier` pipelines.

Two families:

* linear-model attacks (``nontargeted_linear``, ``targeted_linear``) that step
  along a normalized loss gradient on the raw 0-255 pixel scale, and
* gradient-sign attacks (``fgsm``, ``tfgsm``, ``bim``) on unit-scale inputs.

Under the default ``"oblivious"`` threat model the gradient comes from the bare
classifier, so the attacker does not see the autoencoder filter.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from ._validation import RAW, SCALE_MAX, check_labels, check_matrix
from .data import one_hot
from .exceptions import ConfigError, InvalidInputError, StateError

ATTACK_KINDS = ("nontargeted_linear", "targeted_linear", "fgsm", "tfgsm", "bim")
TARGETED_KINDS = ("targeted_linear", "tfgsm")
THREATS = ("oblivious", "adaptive")
LINEAR_NORMS = ("linf", "l2", "sign")
ROW_BLOCK = 8


@dataclass(frozen=True)
class TargetMap:
    """Digit-to-digit attack targets; ``fallbacks`` lists digits whose target was not derived."""

    targets: tuple
    fallbacks: tuple = ()

    def __post_init__(self):
        t = tuple(int(v) for v in self.targets)
        if len(t) != 10 or any(not 0 <= v <= 9 for v in t):
            raise InvalidInputError(f"a target map needs ten digits in 0..9, got {self.targets}")
        for d, v in enumerate(t):
            if v == d:
                raise InvalidInputError(f"digit {d} cannot target itself")
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "fallbacks", tuple(int(v) for v in self.fallbacks))

    def __getitem__(self, digit):
        return self.targets[digit]

    def lookup(self, labels):
        return np.asarray(self.targets)[np.asarray(labels, dtype=np.int64)]


def _fallback(d):
    return (d + 1) % 10


def _derive(cm, pick):
    cm = np.asarray(cm)
    if cm.shape != (10, 10):
        raise InvalidInputError(f"confusion matrix must be 10x10, got {cm.shape}")
    targets, fallbacks = [], []
    for d in range(10):
        row = cm[d].astype(np.float64).copy()
        off = np.delete(np.arange(10), d)
        if not np.any(row[off] > 0):
            targets.append(_fallback(d))
            fallbacks.append(d)
            continue
        targets.append(int(pick(row, off)))
    return TargetMap(tuple(targets), tuple(fallbacks))


def derive_natural_targets(cm):
    """Each digit's most frequent misprediction (ties to the lowest digit)."""
    return _derive(cm, lambda row, off: off[np.argmax(row[off])])


def derive_nonnatural_targets(cm):
    """Each digit's least frequent misprediction (ties to the lowest digit)."""
    return _derive(cm, lambda row, off: off[np.argmin(row[off])])


def constant_target(digit):
    """Every digit maps to ``digit``; ``digit`` itself falls back to ``digit + 1``."""
    if not 0 <= digit <= 9:
        raise InvalidInputError(f"target digit must be in 0..9, got {digit}")
    targets = [digit] * 10
    targets[digit] = _fallback(digit)
    return TargetMap(tuple(targets), (digit,))


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    epsilon: float
    iterations: int = 1
    step: float | None = None
    targets: TargetMap | None = None
    threat: str = "oblivious"
    norm: str = "linf"

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack {self.kind!r}")
        if not self.epsilon >= 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.threat not in THREATS:
            raise ConfigError(f"unknown threat model {self.threat!r}")
        if self.norm not in LINEAR_NORMS:
            raise ConfigError(f"unknown step normalization {self.norm!r}")
        if self.kind == "bim":
            if self.iterations < 1:
                raise ConfigError("bim needs at least one iteration")
            if self.step is None or self.step <= 0:
                raise ConfigError("bim needs a positive step size")
        if self.kind in TARGETED_KINDS and self.targets is None:
            raise ConfigError(f"{self.kind} needs a target map")

    def describe(self):
        out = {
            "kind": self.kind,
            "epsilon": self.epsilon,
            "threat": self.threat,
        }
        if self.kind == "bim":
            out.update(iterations=self.iterations, step=self.step)
        if self.kind in ("nontargeted_linear", "targeted_linear"):
            out["norm"] = self.norm
        if self.targets is not None:
            out["targets"] = list(self.targets.targets)
        return out


@dataclass
class AdversarialBatch:
    originals: np.ndarray
    adversarials: np.ndarray
    true_labels: np.ndarray
    attack: AttackSpec
    extras: dict = field(default_factory=dict)

    @property
    def perturbation(self):
        return self.adversarials - self.originals

    def linf(self):
        return np.max(np.abs(self.perturbation), axis=1)

    def l2(self):
        return np.linalg.norm(self.perturbation, axis=1)

    @property
    def adversarial_targets(self):
        if self.attack.targets is None:
            return None
        return self.attack.targets.lookup(self.true_labels)


def _prepare(pipeline, x, y):
    x = check_matrix(x, cols=784)
    y = check_labels(y, n=x.shape[0])
    return x, y, SCALE_MAX[pipeline.scale]


def _pad_rows(a, n_pad):
    return np.vstack([a, np.zeros((n_pad, a.shape[1]))]) if n_pad else a


def _gradient(pipeline, x, targets, threat):
    """``pipeline.loss_input_gradient`` on rows padded to a multiple of ``ROW_BLOCK``.

    Blocked BLAS kernels treat leftover rows differently, so without padding a
    row's gradient could change in the last bits with the batch it travels in.
    """
    n = x.shape[0]
    n_pad = (-n) % ROW_BLOCK
    g = pipeline.loss_input_gradient(_pad_rows(x, n_pad), _pad_rows(targets, n_pad), threat)
    return g[:n]


def _normalize_step(g, norm):
    if norm == "sign":
        return np.sign(g)
    if norm == "l2":
        size = np.linalg.norm(g, axis=1, keepdims=True)
    else:
        size = np.max(np.abs(g), axis=1, keepdims=True)
    # zero-gradient rows stay put
    return np.divide(g, size, out=np.zeros_like(g), where=size > 0)


def _require_raw(pipeline):
    if pipeline.scale != RAW:
        raise StateError(f"linear attacks operate on {RAW} inputs; pipeline scale is {pipeline.scale}")


def nontargeted_linear(pipeline, x, y, epsilon, norm="linf", threat="oblivious"):
    """Push each image up the true-class loss by a step of size ``epsilon``.

    ``norm`` picks how the per-sample gradient is scaled before the step:
    ``"linf"`` divides by its largest magnitude (the largest pixel change is
    exactly ``epsilon``), ``"l2"`` by its Euclidean norm, ``"sign"`` takes the sign.
    """
    spec = AttackSpec("nontargeted_linear", epsilon, threat=threat, norm=norm)
    _require_raw(pipeline)
    x, y, hi = _prepare(pipeline, x, y)
    g = _gradient(pipeline, x, one_hot(y, len(pipeline.classes_)), threat)
    adv = np.clip(x + epsilon * _normalize_step(g, norm), 0.0, hi)
    return AdversarialBatch(x, adv, y, spec)


def targeted_linear(pipeline, x, y, targets, epsilon, norm="linf", threat="oblivious"):
    """Step down the loss toward ``targets[y]`` for every image."""
    if targets is None:
        raise ConfigError("targeted_linear needs a target map")
    spec = AttackSpec("targeted_linear", epsilon, targets=targets, threat=threat, norm=norm)
    _require_raw(pipeline)
    x, y, hi = _prepare(pipeline, x, y)
    g = _gradient(pipeline, x, one_hot(targets.lookup(y), len(pipeline.classes_)), threat)
    adv = np.clip(x - epsilon * _normalize_step(g, norm), 0.0, hi)
    return AdversarialBatch(x, adv, y, spec)


def fgsm(pipeline, x, y, epsilon, threat="oblivious"):
    spec = AttackSpec("fgsm", epsilon, threat=threat)
    x, y, hi = _prepare(pipeline, x, y)
    g = _gradient(pipeline, x, one_hot(y, len(pipeline.classes_)), threat)
    adv = np.clip(x + epsilon * np.sign(g), 0.0, hi)
    return AdversarialBatch(x, adv, y, spec)


def tfgsm(pipeline, x, y, targets, epsilon, threat="oblivious"):
    """Targeted FGSM: one signed step down the loss toward ``targets[y]``."""
    if targets is None:
        raise ConfigError("tfgsm needs a target map")
    spec = AttackSpec("tfgsm", epsilon, targets=targets, threat=threat)
    x, y, hi = _prepare(pipeline, x, y)
    g = _gradient(pipeline, x, one_hot(targets.lookup(y), len(pipeline.classes_)), threat)
    adv = np.clip(x - epsilon * np.sign(g), 0.0, hi)
    return AdversarialBatch(x, adv, y, spec)


def bim(pipeline, x, y, epsilon, step, iterations, threat="oblivious"):
    """Iterated FGSM, projected onto the epsilon ball and pixel range after each step."""
    spec = AttackSpec("bim", epsilon, iterations=iterations, step=step, threat=threat)
    x, y, hi = _prepare(pipeline, x, y)
    target = one_hot(y, len(pipeline.classes_))
    lo_ball, hi_ball = x - epsilon, x + epsilon
    adv = x.copy()
    for _ in range(iterations):
        g = _gradient(pipeline, adv, target, threat)
        adv = np.clip(np.clip(adv + step * np.sign(g), lo_ball, hi_ball), 0.0, hi)
    return AdversarialBatch(x, adv, y, spec)


def run_attack(pipeline, x, y, spec):
    """Dispatch on ``spec.kind``."""
    if spec.kind == "nontargeted_linear":
        return nontargeted_linear(pipeline, x, y, spec.epsilon, spec.norm, spec.threat)
    if spec.kind == "targeted_linear":
        return targeted_linear(pipeline, x, y, spec.targets, spec.epsilon, spec.norm, spec.threat)
    if spec.kind == "fgsm":
        return fgsm(pipeline, x, y, spec.epsilon, spec.threat)
    if spec.kind == "tfgsm":
        return tfgsm(pipeline, x, y, spec.targets, spec.epsilon, spec.threat)
    return bim(pipeline, x, y, spec.epsilon, spec.step, spec.iterations, spec.threat)


BATCH_CSV_HEADER = ("index", "true_label", "clean_pred", "adv_pred", "linf", "l2")


def write_batch_csv(path, batch, pipeline):
    """One row per sample: labels, clean and adversarial predictions, perturbation norms."""
    clean = pipeline.predict(batch.originals)
    adv = pipeline.predict(batch.adversarials)
    linf, l2 = batch.linf(), batch.l2()
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(BATCH_CSV_HEADER)
        for i in range(len(batch.true_labels)):
            w.writerow([i, int(batch.true_labels[i]), int(clean[i]), int(adv[i]), repr(float(linf[i])), repr(float(l2[i]))])


def write_pgm(path, image, scale_max=255.0):
    """Binary PGM (P5), 28x28, maxval 255."""
    img = np.asarray(image, dtype=np.float64).reshape(28, 28)
    pixels = np.clip(np.round(img * (255.0 / scale_max)), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n28 28\n255\n")
        f.write(pixels.tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    header, _, rest = data.partition(b"\n255\n")
    magic, dims = header.split(b"\n", 1)
    if magic != b"P5":
        raise InvalidInputError("not a binary PGM file")
    w, h = (int(v) for v in dims.split())
    return np.frombuffer(rest[: w * h], dtype=np.uint8).reshape(h, w)

"""End-to-end experiment steps shared by the command line and the acceptance tests.

Trained models are cached under ``<output>/cache`` with file names derived from
a hash of everything that influences training, so repeated runs reuse them.
Every file written through a :class:`Workspace` is recorded in
``<output>/manifest.json`` with its SHA-256.
"""

import json
import logging
import os

import numpy as np

from ._validation import RAW
from .attacks import (
    AttackSpec,
    constant_target,
    derive_natural_targets,
    derive_nonnatural_targets,
    run_attack,
    write_batch_csv,
    write_pgm,
)
from .autoencoders import KINDS, Autoencoder, compare_activations, latent_grid, latent_scatter
from .classifiers import DefendedClassifier, NeuralNetClassifier, SoftmaxRegression
from .config import DEFAULT_LINEAR_EPSILONS, config_hash
from .data import load_idx, normalize, subset
from .evaluation import (
    dump_json,
    epsilon_sweep,
    evaluate,
    file_sha256,
    misprediction_heatmap,
    write_confusion_csv,
    write_heatmap_csv,
    write_loss_csv,
    write_report_csv,
    write_sweep_csv,
    write_table_csv,
)
from .exceptions import MissingArtifactError
from .serialization import load_model, save_model

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"


class Workspace:
    """Output directory that records what it writes."""

    def __init__(self, root):
        self.root = os.path.abspath(root)
        os.makedirs(self.root, exist_ok=True)
        self.written = set()

    def path(self, *parts):
        p = os.path.join(self.root, *parts)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        self.written.add(os.path.relpath(p, self.root))
        return p

    def exists(self, *parts):
        return os.path.exists(os.path.join(self.root, *parts))

    def manifest(self):
        p = os.path.join(self.root, MANIFEST)
        if not os.path.exists(p):
            return {}
        with open(p) as f:
            return json.load(f)["files"]

    def finalize(self):
        files = self.manifest()
        for rel in self.written:
            files[rel] = file_sha256(os.path.join(self.root, rel))
        with open(os.path.join(self.root, MANIFEST), "w") as f:
            json.dump({"files": dict(sorted(files.items()))}, f, indent=1, sort_keys=True)
            f.write("\n")
        return files


_DATA_CACHE = {}


def load_data(cfg):
    """Train/test splits at unit scale plus the raw-scale test images."""
    key = config_hash(cfg.data_key())
    if key in _DATA_CACHE:
        return _DATA_CACHE[key]
    paths = cfg.data.paths()
    train_raw = load_idx(*paths["train"], split="train")
    test_raw = load_idx(*paths["test"], split="test")
    if not cfg.data.full:
        train_raw = subset(train_raw, min(cfg.data.train_size, len(train_raw)), cfg.seed)
        test_raw = subset(test_raw, min(cfg.data.test_size, len(test_raw)), cfg.seed)
    out = {"train": normalize(train_raw), "test": normalize(test_raw), "test_raw": test_raw}
    _DATA_CACHE[key] = out
    return out


def _ae_cache_name(cfg, kind):
    return os.path.join("cache", f"ae-{kind}-{config_hash(cfg.ae_key(kind))[:16]}.aesh")


def _clf_cache_name(cfg, defended, clf_kind, ae_kind):
    variant = "defended" if defended else "undefended"
    h = config_hash(cfg.classifier_key(defended, clf_kind, ae_kind))[:16]
    return os.path.join("cache", f"clf-{clf_kind}-{variant}-{h}.aesh")


def _load_cached(ws, name):
    model = load_model(os.path.join(ws.root, name))
    ws.written.add(name)
    return model


def train_autoencoder(cfg, ws, kind=None):
    kind = kind or cfg.ae_kind
    name = _ae_cache_name(cfg, kind)
    data = load_data(cfg)
    if ws.exists(name):
        logger.info("reusing cached %s autoencoder %s", kind, name)
        ae = _load_cached(ws, name)
    else:
        logger.info("training %s autoencoder on %d images", kind, len(data["train"]))
        ae = Autoencoder(kind, random_state=cfg.seed, **cfg.ae_params).fit(data["train"].X)
        save_model(ws.path(name), ae)
    write_loss_csv(ws.path("ae", kind, "loss.csv"), ae.loss_history_)
    rows = [("reconstruction_mse", ae.reconstruction_error(data["test"].X))]
    write_table_csv(ws.path("ae", kind, "metrics.csv"), ("metric", "value"), rows)
    if ae.is_variational and ae.code_dim == 2:
        scatter = latent_scatter(ae, data["test"].X, data["test"].y)
        write_table_csv(
            ws.path("ae", kind, "latent_scatter.csv"),
            ("z1", "z2", "label"),
            [(float(a), float(b), int(c)) for a, b, c in scatter],
        )
        grid_n = 15
        grid = latent_grid(grid_n)
        images = ae.decode(grid)
        header = ("index", "z1", "z2", *(f"p{i}" for i in range(784)))
        write_table_csv(
            ws.path("ae", kind, "latent_manifold.csv"),
            header,
            [(i, float(z[0]), float(z[1]), *map(float, img)) for i, (z, img) in enumerate(zip(grid, images))],
        )
    return ae


def _make_classifier(cfg, clf_kind):
    cls = SoftmaxRegression if clf_kind == "softmax" else NeuralNetClassifier
    return cls(random_state=cfg.seed, **cfg.classifier_params)


def train_pipelines(cfg, ws, clf_kind=None, ae_kind=None, require_filter_cache=True):
    """Fitted ``(defended, undefended)`` unit-scale pipelines."""
    clf_kind = clf_kind or cfg.classifier_kind
    ae_kind = ae_kind or cfg.ae_kind
    ae_name = _ae_cache_name(cfg, ae_kind)
    if require_filter_cache and not ws.exists(ae_name):
        raise MissingArtifactError(
            f"no cached {ae_kind} autoencoder in {ws.root}; run `aeshield train-ae` with this config first"
        )
    data = load_data(cfg)
    out = []
    for defended in (True, False):
        name = _clf_cache_name(cfg, defended, clf_kind, ae_kind)
        if ws.exists(name):
            pipe = _load_cached(ws, name)
        else:
            filt = _load_cached(ws, ae_name) if defended else None
            features = "latent" if (defended and cfg.latent_features) else "reconstruction"
            logger.info("training %s classifier (%s)", clf_kind, "defended" if defended else "undefended")
            pipe = DefendedClassifier(_make_classifier(cfg, clf_kind), filt, features=features)
            pipe.fit(data["train"].X, data["train"].y)
            save_model(ws.path(name), pipe)
        out.append(pipe)
    return tuple(out)


def require_pipelines(cfg, ws, clf_kind=None, ae_kind=None):
    clf_kind = clf_kind or cfg.classifier_kind
    ae_kind = ae_kind or cfg.ae_kind
    for defended in (True, False):
        if not ws.exists(_clf_cache_name(cfg, defended, clf_kind, ae_kind)):
            raise MissingArtifactError(
                f"no cached {clf_kind} pipelines for the {ae_kind} filter in {ws.root}; "
                "run `aeshield train-clf` with this config first"
            )
    return train_pipelines(cfg, ws, clf_kind, ae_kind)


def _export_eval(ws, base, rep, pipe=None, batch=None, n_images=0, heatmap=False):
    write_confusion_csv(ws.path(*base, "confusion.csv"), rep.confusion)
    write_report_csv(ws.path(*base, "report.csv"), rep.report)
    if heatmap:
        write_heatmap_csv(ws.path(*base, "heatmap.csv"), misprediction_heatmap(rep.confusion))
    if batch is not None:
        write_batch_csv(ws.path(*base, "batch.csv"), batch, pipe)
        hi = 255.0 if pipe.scale == RAW else 1.0
        for i in range(min(n_images, len(batch.true_labels))):
            write_pgm(ws.path(*base, "images", f"{i:03d}_original.pgm"), batch.originals[i], hi)
            write_pgm(ws.path(*base, "images", f"{i:03d}_adversarial.pgm"), batch.adversarials[i], hi)


def _linear_specs(cfg, undefended_raw, x_raw, y):
    a = cfg.attack
    base = AttackSpec("nontargeted_linear", a.linear_epsilon, threat=a.threat, norm=a.norm)
    probe = run_attack(undefended_raw, x_raw, y, base)
    cm = evaluate(undefended_raw, x_raw, y, probe).confusion
    targets = {
        "natural": derive_natural_targets(cm),
        "nonnatural": derive_nonnatural_targets(cm),
        f"one_number_{a.linear_target}": constant_target(a.linear_target),
    }
    specs = {"nontargeted": base}
    for name, tmap in targets.items():
        specs[f"targeted_{name}"] = AttackSpec(
            "targeted_linear", a.linear_epsilon, targets=tmap, threat=a.threat, norm=a.norm
        )
    return specs


def _nn_specs(cfg):
    a = cfg.attack
    return {
        "fgsm": AttackSpec("fgsm", a.epsilon, threat=a.threat),
        "tfgsm": AttackSpec("tfgsm", a.epsilon, targets=constant_target(a.target), threat=a.threat),
        "bim": AttackSpec("bim", a.epsilon, iterations=a.iterations, step=a.bim_step, threat=a.threat),
    }


def run_attacks(cfg, ws, defended, undefended, clf_kind=None, ae_kind=None):
    """Clean and attacked evaluation of both pipelines; returns the summary dict."""
    clf_kind = clf_kind or cfg.classifier_kind
    ae_kind = ae_kind or cfg.ae_kind
    tag = f"{ae_kind}-{clf_kind}"
    data = load_data(cfg)
    test, test_raw = data["test"], data["test_raw"]
    pipes = {"defended": defended, "undefended": undefended}
    summary = {"pipeline": tag, "seed": cfg.seed, "n_test": len(test), "clean": {}, "attacks": {}}

    for variant, pipe in pipes.items():
        rep = evaluate(pipe, test.X, test.y)
        _export_eval(ws, ("attack", tag, "clean", variant), rep)
        summary["clean"][variant] = rep.accuracy

    if clf_kind == "softmax":
        raw = {k: p.with_scale(RAW) for k, p in pipes.items()}
        specs = _linear_specs(cfg, raw["undefended"], test_raw.X, test_raw.y)
        x, y = test_raw.X, test_raw.y
    else:
        raw = pipes
        specs = _nn_specs(cfg)
        x, y = test.X, test.y

    for name, spec in specs.items():
        entry = {"spec": spec.describe()}
        for variant, pipe in raw.items():
            batch = run_attack(pipe, x, y, spec)
            rep = evaluate(pipe, x, y, batch)
            base = ("attack", tag, name, variant)
            _export_eval(ws, base, rep, pipe, batch, cfg.attack.n_images, heatmap=name == "nontargeted")
            entry[variant] = {"accuracy": rep.accuracy, **rep.extras}
        summary["attacks"][name] = entry
    dump_json(ws.path("summary", f"{tag}.json"), {"summary": summary, "config": cfg.echo()})
    return summary


def run_sweep(cfg, ws, defended, undefended, clf_kind=None, ae_kind=None):
    clf_kind = clf_kind or cfg.classifier_kind
    ae_kind = ae_kind or cfg.ae_kind
    data = load_data(cfg)
    a = cfg.attack
    kind = cfg.sweep_kind or ("nontargeted_linear" if clf_kind == "softmax" else "fgsm")
    if kind in ("nontargeted_linear", "targeted_linear"):
        x, y = data["test_raw"].X, data["test_raw"].y
        defended, undefended = defended.with_scale(RAW), undefended.with_scale(RAW)
        eps = cfg.sweep_epsilons or DEFAULT_LINEAR_EPSILONS
        params = {"norm": a.norm, "threat": a.threat}
        if kind == "targeted_linear":
            params["targets"] = constant_target(a.linear_target)
    else:
        x, y = data["test"].X, data["test"].y
        eps = cfg.sweep_epsilons or (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3)
        params = {"threat": a.threat}
        if kind == "tfgsm":
            params["targets"] = constant_target(a.target)
        if kind == "bim":
            params.update(iterations=a.iterations, step=a.bim_step)
    results = epsilon_sweep(defended, undefended, kind, eps, x, y, seed=cfg.seed, **params)
    write_sweep_csv(ws.path("sweep", f"{ae_kind}-{clf_kind}", "sweep.csv"), results)
    return results


def run_compare_activations(cfg, ws):
    data = load_data(cfg)
    X = data["train"].X
    if cfg.activation_train_size:
        X = subset(data["train"], min(cfg.activation_train_size, len(X)), cfg.seed).X
    params = {k: v for k, v in cfg.ae_params.items() if k not in ("encoder_activations", "decoder_activations", "epochs")}
    histories = compare_activations(X, seed=cfg.seed, epochs=cfg.activation_epochs, **params)
    for name, hist in histories.items():
        write_loss_csv(ws.path("activations", f"{name}.csv"), hist)
    return histories


def reproduce_all(cfg, ws):
    """Every autoencoder kind against both classifiers, plus sweeps and the activation study."""
    summaries = {}
    for ae_kind in KINDS:
        train_autoencoder(cfg, ws, ae_kind)
        for clf_kind in ("softmax", "nn"):
            defended, undefended = train_pipelines(cfg, ws, clf_kind, ae_kind)
            s = run_attacks(cfg, ws, defended, undefended, clf_kind, ae_kind)
            run_sweep(cfg.with_(sweep_kind=None, sweep_epsilons=None), ws, defended, undefended, clf_kind, ae_kind)
            summaries[s["pipeline"]] = s
    if cfg.include_activations:
        hist = run_compare_activations(cfg, ws)
        summaries["activations_final_loss"] = {k: v[-1] for k, v in hist.items()}
    dump_json(ws.path("summary.json"), {"pipelines": summaries, "config": cfg.echo()})
    return summaries


def accuracy_of(pipe, x, y):
    return float(np.mean(pipe.predict(x) == y))

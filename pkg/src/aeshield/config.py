"""Experiment configuration: an INI file with fixed sections.

Example::

    [data]
    mnist_dir = /data/mnist
    train_size = 10000
    test_size = 2000

    [run]
    seed = 0
    output_dir = runs/demo

    [autoencoder]
    kind = vanilla

    [classifier]
    kind = nn

    [attack]
    epsilon = 0.3
"""

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

from .attacks import LINEAR_NORMS, THREATS
from .autoencoders import KINDS
from .exceptions import ConfigError

OUTPUT_ENV = "AESHIELD_OUTPUT_ROOT"
CLASSIFIER_KINDS = ("softmax", "nn")
DEFAULT_LINEAR_EPSILONS = tuple(float(e) for e in range(0, 101, 10))

_AE_PARAM_TYPES = {
    "hidden_dim": int,
    "latent_dim": int,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "loss": str,
    "sparsity_mode": str,
    "sparsity_target": float,
    "sparsity_weight": float,
    "l1_weight": float,
    "corruption": str,
    "corruption_level": float,
    "encoder_activations": tuple,
    "decoder_activations": tuple,
}
_CLF_PARAM_TYPES = {"epochs": int, "batch_size": int, "learning_rate": float}


def _split(value):
    return [v.strip() for v in value.split(",") if v.strip()]


def _bool(value):
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def _typed(section, types, name):
    out = {}
    for key, raw in section.items():
        if key not in types:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        conv = types[key]
        try:
            out[key] = tuple(_split(raw)) if conv is tuple else conv(raw)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from None
    return out


@dataclass
class DataConfig:
    mnist_dir: str | None = None
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_size: int = 10000
    test_size: int = 2000
    full: bool = False

    def paths(self):
        if self.mnist_dir:
            d = self.mnist_dir
            return {
                "train": (os.path.join(d, "train-images-idx3-ubyte"), os.path.join(d, "train-labels-idx1-ubyte")),
                "test": (os.path.join(d, "t10k-images-idx3-ubyte"), os.path.join(d, "t10k-labels-idx1-ubyte")),
            }
        if not all((self.train_images, self.train_labels, self.test_images, self.test_labels)):
            raise ConfigError("[data] needs mnist_dir or all four image/label paths")
        return {
            "train": (self.train_images, self.train_labels),
            "test": (self.test_images, self.test_labels),
        }


@dataclass
class AttackConfig:
    epsilon: float = 0.3
    step: float | None = None
    iterations: int = 10
    target: int = 5
    linear_epsilon: float = 50.0
    linear_target: int = 7
    threat: str = "oblivious"
    norm: str = "linf"
    n_images: int = 5

    @property
    def bim_step(self):
        return self.step if self.step is not None else self.epsilon / 10


@dataclass
class ExperimentConfig:
    seed: int
    output_dir: str
    data: DataConfig = field(default_factory=DataConfig)
    ae_kind: str = "vanilla"
    ae_params: dict = field(default_factory=dict)
    latent_features: bool = False
    classifier_kind: str = "nn"
    classifier_params: dict = field(default_factory=dict)
    attack: AttackConfig = field(default_factory=AttackConfig)
    sweep_kind: str | None = None
    sweep_epsilons: tuple | None = None
    activation_epochs: int = 35
    activation_train_size: int | None = None
    include_activations: bool = True

    def __post_init__(self):
        if self.ae_kind not in KINDS:
            raise ConfigError(f"unknown autoencoder kind {self.ae_kind!r}")
        if self.classifier_kind not in CLASSIFIER_KINDS:
            raise ConfigError(f"classifier kind must be one of {CLASSIFIER_KINDS}")
        if self.attack.threat not in THREATS:
            raise ConfigError(f"unknown threat model {self.attack.threat!r}")
        if self.attack.norm not in LINEAR_NORMS:
            raise ConfigError(f"unknown linear-attack norm {self.attack.norm!r}")
        if self.sweep_epsilons is not None:
            eps = list(self.sweep_epsilons)
            if not eps or any(b <= a for a, b in zip(eps, eps[1:])):
                raise ConfigError("[sweep] epsilons must be non-empty and strictly increasing")

    def with_(self, **changes):
        """Copy with some fields replaced (used to fan out variants)."""
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return ExperimentConfig(**d)

    def data_key(self):
        d = asdict(self.data)
        if self.data.mnist_dir:
            d.update(dict.fromkeys(("train_images", "train_labels", "test_images", "test_labels")))
            d["mnist_dir"] = os.path.abspath(self.data.mnist_dir)
        return {"data": d, "seed": self.seed}

    def ae_key(self, kind=None):
        return {**self.data_key(), "ae_kind": kind or self.ae_kind, "ae_params": self.ae_params}

    def classifier_key(self, defended, kind=None, ae_kind=None):
        key = {**self.data_key(), "classifier": kind or self.classifier_kind, "params": self.classifier_params}
        if defended:
            key["filter"] = self.ae_key(ae_kind)
            key["latent_features"] = self.latent_features
        return key

    def echo(self):
        return asdict(self)


def config_hash(obj):
    """Stable SHA-256 of a JSON-able object (sorted keys, no whitespace)."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def load_config(path):
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    known = {"data", "run", "autoencoder", "classifier", "attack", "sweep", "activations"}
    extra = set(parser.sections()) - known
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")
    if not parser.has_option("run", "seed"):
        raise ConfigError("[run] seed is mandatory")

    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return os.path.normpath(p if os.path.isabs(p) else os.path.join(base, p))

    try:
        run = parser["run"]
        seed = run.getint("seed")
        output_dir = os.environ.get(OUTPUT_ENV) or resolve(run.get("output_dir", "aeshield-output"))

        data_kw = {}
        if parser.has_section("data"):
            sec = parser["data"]
            for key in ("mnist_dir", "train_images", "train_labels", "test_images", "test_labels"):
                if key in sec:
                    data_kw[key] = resolve(sec[key])
            for key in ("train_size", "test_size"):
                if key in sec:
                    data_kw[key] = sec.getint(key)
            if "full" in sec:
                data_kw["full"] = _bool(sec["full"])
            unknown = set(sec) - set(DataConfig.__dataclass_fields__)
            if unknown:
                raise ConfigError(f"unknown keys in [data]: {sorted(unknown)}")

        ae_kind, latent, ae_params = "vanilla", False, {}
        if parser.has_section("autoencoder"):
            sec = dict(parser["autoencoder"])
            ae_kind = sec.pop("kind", "vanilla")
            latent = _bool(sec.pop("latent_features", "false"))
            ae_params = _typed(sec, _AE_PARAM_TYPES, "autoencoder")

        clf_kind, clf_params = "nn", {}
        if parser.has_section("classifier"):
            sec = dict(parser["classifier"])
            clf_kind = sec.pop("kind", "nn")
            clf_params = _typed(sec, _CLF_PARAM_TYPES, "classifier")

        attack_kw = {}
        if parser.has_section("attack"):
            types = {"epsilon": float, "step": float, "iterations": int, "target": int,
                     "linear_epsilon": float, "linear_target": int, "threat": str,
                     "norm": str, "n_images": int}
            attack_kw = _typed(dict(parser["attack"]), types, "attack")

        sweep_kind = sweep_eps = None
        if parser.has_section("sweep"):
            sec = parser["sweep"]
            sweep_kind = sec.get("kind")
            if "epsilons" in sec:
                sweep_eps = tuple(float(v) for v in _split(sec["epsilons"]))

        act_kw = {}
        if parser.has_section("activations"):
            sec = parser["activations"]
            if "epochs" in sec:
                act_kw["activation_epochs"] = sec.getint("epochs")
            if "train_size" in sec:
                act_kw["activation_train_size"] = sec.getint("train_size")
            if "include" in sec:
                act_kw["include_activations"] = _bool(sec["include"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    return ExperimentConfig(
        seed=seed,
        output_dir=output_dir,
        data=DataConfig(**data_kw),
        ae_kind=ae_kind,
        ae_params=ae_params,
        latent_features=latent,
        classifier_kind=clf_kind,
        classifier_params=clf_params,
        attack=AttackConfig(**attack_kw),
        sweep_kind=sweep_kind,
        sweep_epsilons=sweep_eps,
        **act_kw,
    )

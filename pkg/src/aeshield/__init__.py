"""Autoencoder input filters as a defense against gradient-based evasion attacks on MNIST."""

from .attacks import (
    AdversarialBatch,
    AttackSpec,
    TargetMap,
    bim,
    constant_target,
    derive_natural_targets,
    derive_nonnatural_targets,
    fgsm,
    nontargeted_linear,
    run_attack,
    targeted_linear,
    tfgsm,
)
from .autoencoders import Autoencoder, CorruptionSpec, corrupt, latent_manifold, latent_scatter, vae_loss
from .classifiers import DefendedClassifier, NeuralNetClassifier, SoftmaxRegression
from .data import Dataset, load_idx, load_mnist, normalize, one_hot, subset
from .evaluation import confusion, epsilon_sweep, fooling_rate, misprediction_heatmap, report
from .serialization import load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "AdversarialBatch",
    "AttackSpec",
    "Autoencoder",
    "CorruptionSpec",
    "Dataset",
    "DefendedClassifier",
    "NeuralNetClassifier",
    "SoftmaxRegression",
    "TargetMap",
    "bim",
    "confusion",
    "constant_target",
    "corrupt",
    "derive_natural_targets",
    "derive_nonnatural_targets",
    "epsilon_sweep",
    "fgsm",
    "fooling_rate",
    "latent_manifold",
    "latent_scatter",
    "load_idx",
    "load_mnist",
    "load_model",
    "misprediction_heatmap",
    "nontargeted_linear",
    "normalize",
    "one_hot",
    "report",
    "run_attack",
    "save_model",
    "subset",
    "targeted_linear",
    "tfgsm",
    "vae_loss",
]

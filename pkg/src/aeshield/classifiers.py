"""Downstream classifiers and the filter-then-classify pipeline."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_is_fitted

from ._validation import RAW, SCALE_MAX, SCALES, UNIT, check_labels, check_matrix, check_scale
from .data import one_hot
from .exceptions import ConfigError, ShapeError, StateError
from .network import DenseLayer, Network, backprop, forward, init_network, train

N_PIXELS = 784


class _NetworkClassifier(ClassifierMixin, BaseEstimator):
    """Shared inference and gradient code for classifiers backed by a Network."""

    n_classes = 10

    def _fit_network(self, net, X, y):
        X = check_matrix(X)
        if X.shape[1] == N_PIXELS:
            # pixel inputs must be unit scale; latent codes are unconstrained
            check_scale(X, UNIT)
        y = check_labels(y, n=X.shape[0], n_classes=self.n_classes)
        self.network_ = train(
            net,
            X,
            one_hot(y, self.n_classes),
            "categorical_crossentropy",
            self.epochs,
            self.batch_size,
            seed=self.random_state,
            learning_rate=self.learning_rate,
        )
        self.classes_ = np.arange(self.n_classes)
        self.n_features_in_ = X.shape[1]
        self.loss_history_ = list(self.network_.loss_history)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        return forward(self.network_, check_matrix(X, cols=self.n_features_in_)).output

    def predict(self, X):
        # np.argmax returns the first maximum, so ties go to the lowest digit
        return np.argmax(self.predict_proba(X), axis=1)

    def loss_input_gradient(self, X, targets):
        """Per-sample gradient of crossentropy(model(X), targets) w.r.t. ``X``."""
        check_is_fitted(self, "network_")
        X = check_matrix(X, cols=self.n_features_in_)
        targets = check_matrix(targets, cols=self.n_classes, name="targets")
        if targets.shape[0] != X.shape[0]:
            raise ShapeError(f"{X.shape[0]} inputs but {targets.shape[0]} targets")
        trace = forward(self.network_, X)
        # softmax + crossentropy: dL/dz = p - t per row, no batch averaging,
        # so each row's gradient is independent of how the batch is split
        return backprop(self.network_, trace, delta_output=trace.output - targets).input


class SoftmaxRegression(_NetworkClassifier):
    """Multi-class logistic regression trained with mini-batch Adam."""

    def __init__(self, epochs=50, batch_size=256, learning_rate=0.001, n_classes=10, random_state=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.n_classes = n_classes
        self.random_state = random_state

    def fit(self, X, y):
        X = check_matrix(X)
        net = init_network([X.shape[1], self.n_classes], ["softmax"], self.random_state)
        return self._fit_network(net, X, y)

    @classmethod
    def from_weights(cls, weights, bias, **params):
        """Wrap hand-set ``(n_features, n_classes)`` weights without training."""
        weights = np.asarray(weights, dtype=np.float64)
        model = cls(n_classes=weights.shape[1], **params)
        model.network_ = Network([DenseLayer(weights, bias, "softmax")])
        model.classes_ = np.arange(weights.shape[1])
        model.n_features_in_ = weights.shape[0]
        model.loss_history_ = []
        return model

    @property
    def coef_(self):
        check_is_fitted(self, "network_")
        return self.network_.layers[0].weights.T

    @property
    def intercept_(self):
        check_is_fitted(self, "network_")
        return self.network_.layers[0].bias


class NeuralNetClassifier(_NetworkClassifier):
    """Dense classifier with the autoencoder's encoder shape and a softmax head."""

    def __init__(
        self,
        hidden_dims=(504, 28),
        activations=("relu", "relu"),
        epochs=35,
        batch_size=1024,
        learning_rate=0.001,
        n_classes=10,
        random_state=0,
    ):
        self.hidden_dims = hidden_dims
        self.activations = activations
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.n_classes = n_classes
        self.random_state = random_state

    def fit(self, X, y):
        X = check_matrix(X)
        if len(self.hidden_dims) != len(self.activations):
            raise ConfigError("hidden_dims and activations must have equal length")
        dims = [X.shape[1], *self.hidden_dims, self.n_classes]
        net = init_network(dims, [*self.activations, "softmax"], self.random_state)
        return self._fit_network(net, X, y)


def _is_fitted(est):
    return any(k.endswith("_") and not k.startswith("__") for k in vars(est))


class DefendedClassifier(ClassifierMixin, BaseEstimator):
    """Classifier behind an optional autoencoder filter.

    Inference always runs ``classifier(filter(x))`` when a filter is set. The
    pipeline accepts inputs at ``scale`` and rescales them to unit range before
    the filter, so the same fitted parts serve the raw-pixel linear attacks and
    the unit-range gradient-sign attacks.

    Parameters
    ----------
    classifier : estimator with ``predict_proba`` and ``loss_input_gradient``
    filter : Autoencoder or any transformer, optional
        Fitted instances are used as is; unfitted ones are fitted on ``X``.
    scale : {"unit_0_1", "raw_0_255"}
    features : {"reconstruction", "latent"}
        Feed the classifier the reconstruction or the filter's code vector.
    """

    def __init__(self, classifier, filter=None, scale=UNIT, features="reconstruction"):
        self.classifier = classifier
        self.filter = filter
        self.scale = scale
        self.features = features

    def _check_params(self):
        if self.scale not in SCALES:
            raise StateError(f"unknown pixel scale {self.scale!r}")
        if self.features not in ("reconstruction", "latent"):
            raise ConfigError(f"unknown feature mode {self.features!r}")
        if self.features == "latent" and self.filter is None:
            raise ConfigError("latent features need a filter")

    def _to_unit(self, X):
        X = check_scale(check_matrix(X, cols=N_PIXELS), self.scale)
        return X / SCALE_MAX[self.scale] if self.scale == RAW else X

    def _features(self, U):
        if self.filter_ is None:
            return U
        if self.features == "latent":
            return self.filter_.encode(U)
        return self.filter_.transform(U)

    def fit(self, X, y):
        self._check_params()
        U = self._to_unit(X)
        if self.filter is None:
            self.filter_ = None
        elif _is_fitted(self.filter):
            self.filter_ = self.filter
        else:
            self.filter_ = clone(self.filter).fit(U)
        # reconstructions of the training split are computed once here
        self.classifier_ = clone(self.classifier).fit(self._features(U), y)
        self.classes_ = self.classifier_.classes_
        return self

    @classmethod
    def from_fitted(cls, classifier, filter=None, scale=UNIT, features="reconstruction"):
        pipe = cls(classifier, filter, scale, features)
        pipe._check_params()
        pipe.classifier_ = classifier
        pipe.filter_ = filter
        pipe.classes_ = classifier.classes_
        return pipe

    def with_scale(self, scale):
        """Same fitted parts, accepting inputs at another pixel scale."""
        check_is_fitted(self, "classifier_")
        return type(self).from_fitted(self.classifier_, self.filter_, scale, self.features)

    @property
    def defended(self):
        return self.filter is not None

    def predict_proba(self, X):
        check_is_fitted(self, "classifier_")
        return self.classifier_.predict_proba(self._features(self._to_unit(X)))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def loss_input_gradient(self, X, targets, threat="oblivious"):
        """Per-sample ``dL/dX`` at the pipeline's input scale.

        ``"oblivious"`` differentiates the bare classifier at ``X`` and ignores
        the filter; ``"adaptive"`` differentiates ``classifier(filter(X))``.
        """
        check_is_fitted(self, "classifier_")
        if threat not in ("oblivious", "adaptive"):
            raise ConfigError(f"unknown threat model {threat!r}")
        U = self._to_unit(X)
        if self.filter_ is None or threat == "oblivious":
            if self.features == "latent" and self.filter_ is not None:
                raise ConfigError("an oblivious attack cannot bypass a latent-feature filter")
            g = self.classifier_.loss_input_gradient(U, targets)
        else:
            Z = self._features(U)
            gz = self.classifier_.loss_input_gradient(Z, targets)
            if self.features == "latent":
                g = self.filter_.latent_input_gradient(U, gz)
            else:
                g = self.filter_.input_gradient(U, gz)
        return g / SCALE_MAX[self.scale] if self.scale == RAW else g

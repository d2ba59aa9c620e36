"""Autoencoder filters: vanilla, sparse, denoising and variational.

The :class:`Autoencoder` estimator follows the scikit-learn transformer
protocol. ``fit(X)`` learns to reproduce unit-scale images and ``transform(X)``
returns reconstructions clipped to ``[0, 1]``, which is the form a downstream
classifier consumes when the autoencoder is used as an input filter.
"""

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import UNIT, check_matrix, check_random_state, check_scale
from .exceptions import ConfigError, KindError
from .network import (
    AdamState,
    Network,
    backprop,
    check_loss_compat,
    forward,
    init_network,
    iter_batches,
    loss_and_grad,
    train,
)

logger = logging.getLogger(__name__)

KINDS = ("vanilla", "sparse", "denoising", "variational")
N_PIXELS = 784
RHO_CLIP = 1e-6
LOGVAR_CLIP = 20.0

OPTIMIZED_ACTIVATIONS = {"encoder": ("relu", "relu"), "decoder": ("exponential", "softplus")}
UNIFORM_ACTIVATIONS = ("relu", "sigmoid", "softsign", "tanh")


@dataclass(frozen=True)
class CorruptionSpec:
    mode: str = "masking"
    level: float = 0.3
    seed: int | None = None

    def __post_init__(self):
        if self.mode == "masking":
            if not 0.0 <= self.level <= 1.0:
                raise ConfigError(f"masking fraction must be in [0, 1], got {self.level}")
        elif self.mode == "gaussian":
            if self.level < 0:
                raise ConfigError(f"gaussian sigma must be >= 0, got {self.level}")
        else:
            raise ConfigError(f"unknown corruption mode {self.mode!r}")


def corrupt(x, spec, rng=None):
    """Draw ``x_tilde ~ q(x_tilde | x)`` for a unit-scale batch."""
    x = check_matrix(x)
    if rng is None:
        rng = check_random_state(spec.seed)
    if spec.mode == "masking":
        keep = rng.random(x.shape) >= spec.level
        return np.where(keep, x, 0.0)
    return np.clip(x + rng.normal(0.0, spec.level, size=x.shape), 0.0, 1.0)


def sparsity_penalty_kl(rho_hat, rho):
    """Sum over units of KL(rho || rho_hat_j) between Bernoulli means."""
    if not 0.0 < rho < 1.0:
        raise ConfigError(f"sparsity target must lie in (0, 1), got {rho}")
    r = np.clip(np.asarray(rho_hat, dtype=np.float64), RHO_CLIP, 1.0 - RHO_CLIP)
    return float(np.sum(rho * np.log(rho / r) + (1.0 - rho) * np.log((1.0 - rho) / (1.0 - r))))


def sparsity_kl_grad(rho_hat, rho):
    """Derivative of :func:`sparsity_penalty_kl` w.r.t. each ``rho_hat_j``.

    Zero where the clip is active, matching the clipped penalty.
    """
    rho_hat = np.asarray(rho_hat, dtype=np.float64)
    r = np.clip(rho_hat, RHO_CLIP, 1.0 - RHO_CLIP)
    g = -rho / r + (1.0 - rho) / (1.0 - r)
    return np.where(r == rho_hat, g, 0.0)


def sparsity_penalty_l1(h, lam):
    if lam < 0:
        raise ConfigError("l1 weight must be >= 0")
    h = check_matrix(h, name="h")
    return float(lam * np.sum(np.abs(h)) / h.shape[0])


def gaussian_kl(mean, logvar):
    """Per-sample KL(N(mean, exp(logvar)) || N(0, I))."""
    return -0.5 * np.sum(1.0 + logvar - mean * mean - np.exp(logvar), axis=1)


def _kl_hook(code_layer, rho, beta):
    def hook(trace):
        h = trace.post[code_layer]
        rho_hat = h.mean(axis=0)
        value = beta * sparsity_penalty_kl(rho_hat, rho)
        grad = np.broadcast_to(beta * sparsity_kl_grad(rho_hat, rho) / h.shape[0], h.shape)
        return value, {code_layer: grad}

    return hook


def _l1_hook(code_layer, lam):
    def hook(trace):
        h = trace.post[code_layer]
        return sparsity_penalty_l1(h, lam), {code_layer: lam * np.sign(h) / h.shape[0]}

    return hook


class Autoencoder(BaseEstimator, TransformerMixin):
    """Dense autoencoder used as an input filter.

    Parameters
    ----------
    kind : {"vanilla", "sparse", "denoising", "variational"}
    hidden_dim : int
        Width of the single hidden layer on each side.
    latent_dim : int or None
        Code size; ``None`` means 28 for the deterministic kinds and 2 for
        ``"variational"``.
    encoder_activations, decoder_activations : pair of str
        Activations of (hidden, code) and (hidden, output) layers. The
        variational encoder uses only the first entry; its heads are linear.
    loss : {"mean_squared_error", "per_pixel_crossentropy"}
        Reconstruction loss, summed over pixels and averaged over samples.
    sparsity_mode : {"kl", "l1"}
        Penalty used when ``kind="sparse"``.
    sparsity_target, sparsity_weight, l1_weight : float
        KL target mean activation, KL weight, and L1 weight.
    corruption, corruption_level : str, float
        Corruption process for ``kind="denoising"`` (``"masking"`` zeroes a
        fraction of pixels, ``"gaussian"`` adds noise of that sigma).
    """

    def __init__(
        self,
        kind="vanilla",
        hidden_dim=504,
        latent_dim=None,
        encoder_activations=OPTIMIZED_ACTIVATIONS["encoder"],
        decoder_activations=OPTIMIZED_ACTIVATIONS["decoder"],
        loss="mean_squared_error",
        epochs=35,
        batch_size=1024,
        learning_rate=0.001,
        sparsity_mode="kl",
        sparsity_target=0.05,
        sparsity_weight=1.0,
        l1_weight=1e-4,
        corruption="masking",
        corruption_level=0.3,
        random_state=0,
    ):
        self.kind = kind
        self.hidden_dim = hidden_dim
        self.latent_dim = latent_dim
        self.encoder_activations = encoder_activations
        self.decoder_activations = decoder_activations
        self.loss = loss
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.sparsity_mode = sparsity_mode
        self.sparsity_target = sparsity_target
        self.sparsity_weight = sparsity_weight
        self.l1_weight = l1_weight
        self.corruption = corruption
        self.corruption_level = corruption_level
        self.random_state = random_state

    @property
    def is_variational(self):
        return self.kind == "variational"

    @property
    def code_dim(self):
        if self.latent_dim is not None:
            return self.latent_dim
        return 2 if self.is_variational else 28

    def _validate_params(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown autoencoder kind {self.kind!r}")
        if self.code_dim < 1 or self.hidden_dim < 1:
            raise ConfigError("latent_dim and hidden_dim must be >= 1")
        if self.sparsity_mode not in ("kl", "l1"):
            raise ConfigError(f"unknown sparsity mode {self.sparsity_mode!r}")
        if not 0.0 < self.sparsity_target < 1.0:
            raise ConfigError("sparsity_target must lie in (0, 1)")
        if self.sparsity_weight < 0 or self.l1_weight < 0:
            raise ConfigError("sparsity weights must be >= 0")
        if self.loss == "categorical_crossentropy":
            raise ConfigError("reconstruction loss must be per-pixel crossentropy or MSE")
        check_loss_compat(self.loss, self.decoder_activations[1])
        return CorruptionSpec(self.corruption, self.corruption_level)

    def build(self):
        """Initialize parameters from ``random_state`` without training."""
        self._validate_params()
        rng = np.random.default_rng(self.random_state)
        enc_act, dec_act = tuple(self.encoder_activations), tuple(self.decoder_activations)
        h, c = self.hidden_dim, self.code_dim
        if self.is_variational:
            self.encoder_ = init_network([N_PIXELS, h], enc_act[:1], rng)
            self.mean_head_ = init_network([h, c], ["identity"], rng)
            self.logvar_head_ = init_network([h, c], ["identity"], rng)
        else:
            self.encoder_ = init_network([N_PIXELS, h, c], enc_act, rng)
        self.decoder_ = init_network([c, h, N_PIXELS], dec_act, rng)
        self.loss_history_ = []
        self.n_features_in_ = N_PIXELS
        return self

    @property
    def layer_dims(self):
        check_is_fitted(self, "decoder_")
        if self.is_variational:
            return self.encoder_.dims + [self.code_dim] + self.decoder_.dims[1:]
        return self.encoder_.dims + self.decoder_.dims[1:]

    def fit(self, X, y=None):
        spec = self._validate_params()
        X = check_scale(check_matrix(X, cols=N_PIXELS), UNIT)
        self.build()
        if self.is_variational:
            self._fit_variational(X)
            return self

        n_enc = len(self.encoder_.layers)
        net = Network(self.encoder_.layers + self.decoder_.layers)
        penalty = noise = None
        if self.kind == "sparse":
            if self.sparsity_mode == "kl" and self.sparsity_weight > 0:
                penalty = _kl_hook(n_enc - 1, self.sparsity_target, self.sparsity_weight)
            elif self.sparsity_mode == "l1" and self.l1_weight > 0:
                penalty = _l1_hook(n_enc - 1, self.l1_weight)
        elif self.kind == "denoising":
            noise = lambda batch, rng: corrupt(batch, spec, rng)  # noqa: E731
        net = train(
            net,
            X,
            X,
            self.loss,
            self.epochs,
            self.batch_size,
            seed=self.random_state,
            learning_rate=self.learning_rate,
            penalty=penalty,
            input_noise=noise,
        )
        self.encoder_ = Network(net.layers[:n_enc], seed=self.random_state)
        self.decoder_ = Network(net.layers[n_enc:], seed=self.random_state)
        self.loss_history_ = list(net.loss_history)
        return self

    def _vae_pass(self, X, eps):
        trunk = forward(self.encoder_, X)
        mt = forward(self.mean_head_, trunk.output)
        lt = forward(self.logvar_head_, trunk.output)
        mean = mt.output
        logvar = np.clip(lt.output, -LOGVAR_CLIP, LOGVAR_CLIP)
        std = np.exp(0.5 * logvar)
        dec = forward(self.decoder_, mean + std * eps)
        recon, g = loss_and_grad(self.loss, dec.output, X)
        kl = float(np.mean(gaussian_kl(mean, logvar)))
        return trunk, mt, lt, dec, mean, logvar, std, recon, g, kl

    def _fit_variational(self, X):
        rng = np.random.default_rng(self.random_state)
        opt = AdamState(self.learning_rate)
        nets = (self.encoder_, self.mean_head_, self.logvar_head_, self.decoder_)
        params = [p for net in nets for p in net.params()]
        history = []
        for epoch in range(self.epochs):
            losses = []
            for idx in iter_batches(X.shape[0], self.batch_size, rng):
                xb = X[idx]
                eps = rng.standard_normal((xb.shape[0], self.code_dim))
                trunk, mt, lt, dec, mean, logvar, std, recon, g, kl = self._vae_pass(xb, eps)
                n = xb.shape[0]
                gd = backprop(self.decoder_, dec, grad_output=g)
                d_mean = gd.input + mean / n
                d_logvar = gd.input * 0.5 * std * eps + 0.5 * (np.exp(logvar) - 1.0) / n
                d_logvar = d_logvar * (np.abs(lt.output) < LOGVAR_CLIP)
                gm = backprop(self.mean_head_, mt, grad_output=d_mean)
                gl = backprop(self.logvar_head_, lt, grad_output=d_logvar)
                gt = backprop(self.encoder_, trunk, grad_output=gm.input + gl.input)
                opt.step(params, gt.as_list() + gm.as_list() + gl.as_list() + gd.as_list())
                losses.append(recon + kl)
            history.append(float(np.mean(losses)))
            logger.debug("vae epoch %d/%d loss %.6f", epoch + 1, self.epochs, history[-1])
        self.loss_history_ = history
        for net in nets:
            net.seed = self.random_state
            net.loss_history = history

    def _check_input(self, X):
        check_is_fitted(self, "decoder_")
        return check_scale(check_matrix(X, cols=N_PIXELS), UNIT)

    def encode(self, X):
        """Code vectors; the posterior mean for the variational kind."""
        X = self._check_input(X)
        h = forward(self.encoder_, X).output
        if self.is_variational:
            return forward(self.mean_head_, h).output
        return h

    def decode(self, H, clip=True):
        check_is_fitted(self, "decoder_")
        out = forward(self.decoder_, check_matrix(H, cols=self.code_dim)).output
        return np.clip(out, 0.0, 1.0) if clip else out

    def transform(self, X):
        """Reconstruct ``X``; deterministic (no sampling) for every kind."""
        return self.decode(self.encode(X))

    reconstruct = transform

    def input_gradient(self, X, grad_reconstruction):
        """Backpropagate ``dL/d reconstruction`` to ``dL/dX`` through the clip."""
        X = self._check_input(X)
        trunk = forward(self.encoder_, X)
        if self.is_variational:
            head = forward(self.mean_head_, trunk.output)
            code = head.output
        else:
            code = trunk.output
        dec = forward(self.decoder_, code)
        inside = (dec.output >= 0.0) & (dec.output <= 1.0)
        g = backprop(self.decoder_, dec, grad_output=grad_reconstruction * inside).input
        if self.is_variational:
            g = backprop(self.mean_head_, head, grad_output=g).input
        return backprop(self.encoder_, trunk, grad_output=g).input

    def latent_input_gradient(self, X, grad_code):
        X = self._check_input(X)
        trunk = forward(self.encoder_, X)
        if self.is_variational:
            head = forward(self.mean_head_, trunk.output)
            grad_code = backprop(self.mean_head_, head, grad_output=grad_code).input
        return backprop(self.encoder_, trunk, grad_output=grad_code).input

    def reconstruction_error(self, X, target=None):
        """Mean per-pixel squared error of the clipped reconstruction."""
        X = self._check_input(X)
        target = X if target is None else check_matrix(target, cols=N_PIXELS)
        return float(np.mean((self.transform(X) - target) ** 2))

    def score(self, X, y=None):
        return -self.reconstruction_error(X)

    def objective(self, X, seed=0):
        """Training objective on ``X`` without updates: ``(total, recon, penalty)``.

        For the variational kind the penalty slot holds the Gaussian KL term.
        """
        if self.is_variational:
            return vae_loss(self, X, seed)
        X = self._check_input(X)
        net = Network(self.encoder_.layers + self.decoder_.layers)
        trace = forward(net, X)
        recon, _ = loss_and_grad(self.loss, trace.output, X)
        pen = 0.0
        if self.kind == "sparse":
            h = trace.post[len(self.encoder_.layers) - 1]
            if self.sparsity_mode == "kl":
                pen = self.sparsity_weight * sparsity_penalty_kl(h.mean(axis=0), self.sparsity_target)
            else:
                pen = sparsity_penalty_l1(h, self.l1_weight)
        return recon + pen, recon, pen


def build(kind="vanilla", seed=0, **params):
    """Parameter-initialized (untrained) :class:`Autoencoder`."""
    return Autoencoder(kind=kind, random_state=seed, **params).build()


def vae_loss(model, X, seed=0):
    """``(total, recon_term, kl_term)`` with one reparameterized sample per row."""
    if not model.is_variational:
        raise KindError(f"vae_loss needs a variational autoencoder, got {model.kind!r}")
    X = model._check_input(X)
    eps = np.random.default_rng(seed).standard_normal((X.shape[0], model.code_dim))
    *_, recon, _, kl = model._vae_pass(X, eps)
    return recon + kl, recon, kl


def _require_2d_latent(model):
    if not model.is_variational:
        raise KindError(f"latent exports need a variational autoencoder, got {model.kind!r}")
    if model.code_dim != 2:
        raise KindError(f"latent exports need a 2-D latent space, got {model.code_dim}")


def latent_scatter(model, X, y):
    """Rows ``(z1, z2, label)`` of posterior means, one per input image."""
    _require_2d_latent(model)
    z = model.encode(X)
    return np.column_stack([z, np.asarray(y, dtype=np.float64)])


def latent_grid(grid_n, low=-3.0, high=3.0):
    """Evenly spaced latent points; row ``i * grid_n + j`` is ``(g[j], g[i])``."""
    if grid_n < 1:
        raise ConfigError("grid_n must be >= 1")
    g = np.linspace(low, high, grid_n)
    z1, z2 = np.meshgrid(g, g)
    return np.column_stack([z1.ravel(), z2.ravel()])


def latent_manifold(model, grid_n=15):
    """Decode a ``grid_n x grid_n`` grid over ``[-3, 3]^2`` into images."""
    _require_2d_latent(model)
    return model.decode(latent_grid(grid_n))


def compare_activations(X, seed=0, epochs=35, batch_size=1024, **params):
    """Train one vanilla autoencoder per activation layout and collect loss histories.

    Keys are the four uniform layouts (every layer uses one function) plus
    ``"optimized"`` for relu encoder, exponential hidden decoder, softplus output.
    """
    layouts = {name: ((name, name), (name, name)) for name in UNIFORM_ACTIVATIONS}
    layouts["optimized"] = (OPTIMIZED_ACTIVATIONS["encoder"], OPTIMIZED_ACTIVATIONS["decoder"])
    histories = {}
    for name, (enc, dec) in layouts.items():
        ae = Autoencoder(
            "vanilla",
            encoder_activations=enc,
            decoder_activations=dec,
            epochs=epochs,
            batch_size=batch_size,
            random_state=seed,
            **params,
        ).fit(X)
        histories[name] = ae.loss_history_
        logger.info("activation layout %s: final loss %.4f", name, ae.loss_history_[-1])
    return histories

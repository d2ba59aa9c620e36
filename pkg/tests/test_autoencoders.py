import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone

from aeshield.autoencoders import (
    Autoencoder,
    CorruptionSpec,
    build,
    compare_activations,
    corrupt,
    gaussian_kl,
    latent_grid,
    latent_manifold,
    latent_scatter,
    sparsity_kl_grad,
    sparsity_penalty_kl,
    sparsity_penalty_l1,
    vae_loss,
)
from aeshield.data import normalize, synthetic_digits
from aeshield.exceptions import ConfigError, KindError, StateError

# KL(0.05 || 0.1) for Bernoulli means, evaluated with 40-digit arithmetic
KL_05_01 = 0.01670650117876471394

SMALL = dict(hidden_dim=24, latent_dim=6, batch_size=32)


@pytest.fixture(scope="module")
def digits():
    return normalize(synthetic_digits(300, seed=0))


def test_vanilla_layer_dims():
    assert build("vanilla", seed=0).layer_dims == [784, 504, 28, 504, 784]


def test_variational_encoder_emits_two_2_vectors():
    m = build("variational", seed=0)
    assert m.layer_dims == [784, 504, 2, 504, 784]
    assert m.mean_head_.output_dim == 2 and m.logvar_head_.output_dim == 2


def test_build_is_seeded():
    a, b = build("sparse", seed=4, **SMALL), build("sparse", seed=4, **SMALL)
    for p, q in zip(a.encoder_.params() + a.decoder_.params(), b.encoder_.params() + b.decoder_.params()):
        np.testing.assert_array_equal(p, q)
    c = build("sparse", seed=5, **SMALL)
    assert not np.array_equal(a.encoder_.layers[0].weights, c.encoder_.layers[0].weights)


def test_default_activations():
    m = build("vanilla")
    assert m.encoder_.activations == ["relu", "relu"]
    assert m.decoder_.activations == ["exponential", "softplus"]


def test_zero_weight_decoder_outputs_softplus_of_bias():
    m = build("vanilla", seed=0, **SMALL)
    for layer in m.decoder_.layers:
        layer.weights[:] = 0.0
    m.decoder_.layers[-1].bias[:] = np.linspace(-2, 0.5, 784)
    x = np.random.default_rng(0).random((3, 784))
    expected = np.log1p(np.exp(np.linspace(-2, 0.5, 784)))
    np.testing.assert_allclose(m.decode(m.encode(x), clip=False), np.tile(expected, (3, 1)), rtol=1e-12)


def test_reconstruct_rejects_raw_scale():
    m = build("vanilla", **SMALL)
    with pytest.raises(StateError):
        m.transform(np.full((2, 784), 200.0))


@pytest.mark.parametrize("kind", ["vanilla", "sparse", "denoising", "variational"])
def test_fit_transform_range_and_decreasing_loss(digits, kind):
    m = Autoencoder(kind, epochs=6, random_state=0, **SMALL).fit(digits.X)
    assert len(m.loss_history_) == 6
    assert m.loss_history_[-1] < m.loss_history_[0]
    r = m.transform(digits.X)
    assert r.shape == digits.X.shape
    assert r.min() >= 0.0 and r.max() <= 1.0


def test_fit_is_deterministic(digits):
    a = Autoencoder("denoising", epochs=2, random_state=3, **SMALL).fit(digits.X)
    b = clone(a).fit(digits.X)
    assert a.loss_history_ == b.loss_history_
    np.testing.assert_array_equal(a.transform(digits.X), b.transform(digits.X))


def test_zero_penalty_reproduces_vanilla_bitwise(digits):
    v = Autoencoder("vanilla", epochs=2, random_state=1, **SMALL).fit(digits.X)
    s = Autoencoder("sparse", epochs=2, random_state=1, sparsity_weight=0.0, **SMALL).fit(digits.X)
    l1 = Autoencoder("sparse", epochs=2, random_state=1, sparsity_mode="l1", l1_weight=0.0, **SMALL).fit(digits.X)
    assert v.loss_history_ == s.loss_history_ == l1.loss_history_
    np.testing.assert_array_equal(v.transform(digits.X), s.transform(digits.X))


def test_denoising_with_zero_corruption_is_vanilla(digits):
    v = Autoencoder("vanilla", epochs=2, random_state=1, **SMALL).fit(digits.X)
    d = Autoencoder("denoising", epochs=2, random_state=1, corruption_level=0.0, **SMALL).fit(digits.X)
    assert v.loss_history_ == d.loss_history_


def test_sparse_penalty_lowers_code_activity(digits):
    kw = dict(epochs=8, random_state=0, **SMALL)
    v = Autoencoder("vanilla", **kw).fit(digits.X)
    s = Autoencoder("sparse", **kw).fit(digits.X)
    assert s.encode(digits.X).mean() < v.encode(digits.X).mean()


def test_objective_matches_last_training_pass_shape(digits):
    m = Autoencoder("sparse", epochs=1, random_state=0, **SMALL).fit(digits.X)
    total, recon, pen = m.objective(digits.X)
    assert total == pytest.approx(recon + pen)
    assert pen > 0


def test_sklearn_params_round_trip():
    m = Autoencoder("sparse", sparsity_target=0.1, hidden_dim=8)
    assert clone(m).get_params() == m.get_params()
    assert m.set_params(l1_weight=0.5).l1_weight == 0.5


@pytest.mark.parametrize(
    "params",
    [
        dict(kind="convolutional"),
        dict(sparsity_target=0.0),
        dict(sparsity_target=1.0),
        dict(sparsity_weight=-1.0),
        dict(latent_dim=0),
        dict(corruption_level=1.5),
        dict(corruption="salt"),
        dict(decoder_activations=("exponential", "identity"), loss="per_pixel_crossentropy"),
    ],
)
def test_invalid_params_are_config_errors(params):
    with pytest.raises(ConfigError):
        Autoencoder(**params).build()


def test_kl_penalty_examples():
    assert sparsity_penalty_kl([0.05, 0.05], 0.05) == pytest.approx(0.0, abs=1e-15)
    assert sparsity_penalty_kl([0.1], 0.05) == pytest.approx(KL_05_01, rel=1e-12)
    assert sparsity_penalty_kl([0.1], 0.05) == pytest.approx(0.01665, abs=1e-4)


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, 5, elements=st.floats(0.0, 1.0)),
    st.floats(0.01, 0.99),
)
def test_kl_penalty_nonnegative_and_positive_off_target(rho_hat, rho):
    v = sparsity_penalty_kl(rho_hat, rho)
    assert v >= 0
    if np.any(np.abs(rho_hat - rho) > 1e-3):
        assert v > 0


def test_kl_gradient_matches_finite_differences():
    rho_hat = np.array([0.02, 0.05, 0.3, 0.7, 0.95])
    h = 1e-7
    num = np.array(
        [
            (sparsity_penalty_kl(rho_hat + h * e, 0.05) - sparsity_penalty_kl(rho_hat - h * e, 0.05)) / (2 * h)
            for e in np.eye(5)
        ]
    )
    ana = sparsity_kl_grad(rho_hat, 0.05)
    np.testing.assert_allclose(ana, num, rtol=1e-4, atol=1e-8)


def test_kl_gradient_zero_inside_clip():
    assert sparsity_kl_grad([0.0, 1.0], 0.05).tolist() == [0.0, 0.0]


def test_l1_penalty_examples():
    assert sparsity_penalty_l1(np.zeros((3, 4)), 0.5) == 0.0
    assert sparsity_penalty_l1(np.array([[5.0, -7.0]]), 0.0) == 0.0
    assert sparsity_penalty_l1(np.array([[1.0, -2.0]]), 0.1) == pytest.approx(0.3)
    assert sparsity_penalty_l1(np.array([[1.0, -2.0], [3.0, 0.0]]), 0.1) == pytest.approx(0.3)
    with pytest.raises(ConfigError):
        sparsity_penalty_l1(np.ones((1, 1)), -0.1)


def test_corrupt_examples():
    x = np.random.default_rng(0).random((4, 784))
    np.testing.assert_array_equal(corrupt(x, CorruptionSpec("masking", 0.0, seed=1)), x)
    np.testing.assert_array_equal(corrupt(x, CorruptionSpec("gaussian", 0.0, seed=1)), x)
    np.testing.assert_array_equal(corrupt(x, CorruptionSpec("masking", 1.0, seed=1)), 0.0)


def test_masking_fraction_concentrates():
    x = np.ones((100, 1000))
    out = corrupt(x, CorruptionSpec("masking", 0.3, seed=0))
    assert abs(np.mean(out == 0) - 0.3) <= 0.01


def test_corrupt_is_seeded_and_gaussian_stays_in_range():
    x = np.random.default_rng(1).random((5, 784))
    spec = CorruptionSpec("gaussian", 0.5, seed=2)
    a, b = corrupt(x, spec), corrupt(x, spec)
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1


def test_gaussian_kl_examples():
    assert gaussian_kl(np.zeros((1, 2)), np.zeros((1, 2)))[0] == 0.0
    # w = 1 means log w^2 = 0
    assert gaussian_kl(np.array([[1.0, 0.0]]), np.zeros((1, 2)))[0] == pytest.approx(0.5)


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, (3, 2), elements=st.floats(-5, 5)),
    arrays(np.float64, (3, 2), elements=st.floats(-5, 5)),
)
def test_gaussian_kl_nonnegative(mean, logvar):
    assert np.all(gaussian_kl(mean, logvar) >= -1e-12)


def test_vae_loss_with_prior_matching_encoder_has_zero_kl():
    m = build("variational", seed=0, hidden_dim=8)
    for head in (m.mean_head_, m.logvar_head_):
        head.layers[0].weights[:] = 0.0
        head.layers[0].bias[:] = 0.0
    x = np.random.default_rng(0).random((4, 784))
    total, recon, kl = vae_loss(m, x, seed=0)
    assert kl == 0.0
    assert total == recon


def test_vae_loss_is_seeded_and_kind_checked():
    m = build("variational", seed=0, hidden_dim=8)
    x = np.random.default_rng(0).random((4, 784))
    assert vae_loss(m, x, seed=3) == vae_loss(m, x, seed=3)
    assert vae_loss(m, x, seed=3)[2] >= 0
    with pytest.raises(KindError):
        vae_loss(build("vanilla", hidden_dim=8), x)


def test_variational_transform_is_deterministic(digits):
    m = Autoencoder("variational", epochs=1, random_state=0, hidden_dim=16).fit(digits.X)
    np.testing.assert_array_equal(m.transform(digits.X), m.transform(digits.X))


def test_latent_grid_convention():
    np.testing.assert_array_equal(latent_grid(1), [[-3.0, -3.0]])
    g = latent_grid(3)
    np.testing.assert_array_equal(g[:3], [[-3, -3], [0, -3], [3, -3]])
    assert g.shape == (9, 2)


def test_latent_exports(digits):
    m = Autoencoder("variational", epochs=3, random_state=0, hidden_dim=32).fit(digits.X)
    scatter = latent_scatter(m, digits.X, digits.y)
    assert scatter.shape == (len(digits), 3)
    np.testing.assert_array_equal(scatter[:, 2], digits.y)
    manifold = latent_manifold(m, 4)
    assert manifold.shape == (16, 784)
    assert manifold.min() >= 0 and manifold.max() <= 1


def test_latent_exports_need_variational():
    m = build("vanilla", hidden_dim=8)
    with pytest.raises(KindError):
        latent_manifold(m, 2)
    with pytest.raises(KindError):
        latent_scatter(m, np.zeros((1, 784)), [0])


def test_compare_activations_emits_all_layouts(digits):
    hist = compare_activations(digits.X[:64], seed=0, epochs=2, batch_size=32, hidden_dim=8, latent_dim=4)
    assert sorted(hist) == ["optimized", "relu", "sigmoid", "softsign", "tanh"]
    assert all(len(h) == 2 and np.all(np.isfinite(h)) for h in hist.values())

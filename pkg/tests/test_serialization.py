import struct

import numpy as np
import pytest

from aeshield.autoencoders import Autoencoder, build
from aeshield.classifiers import DefendedClassifier, NeuralNetClassifier, SoftmaxRegression
from aeshield.data import normalize, synthetic_digits
from aeshield.exceptions import FormatError
from aeshield.serialization import from_bytes, load_model, save_model, to_bytes


@pytest.fixture(scope="module")
def digits():
    return normalize(synthetic_digits(120, seed=5))


def _same_net(a, b):
    assert a.dims == b.dims and a.activations == b.activations
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)


@pytest.mark.parametrize("kind", ["vanilla", "sparse", "denoising", "variational"])
def test_autoencoder_round_trip(tmp_path, digits, kind):
    ae = Autoencoder(kind, hidden_dim=12, epochs=2, batch_size=32, sparsity_target=0.1).fit(digits.X)
    save_model(tmp_path / "m.aesh", ae)
    back = load_model(tmp_path / "m.aesh")
    assert back.get_params() == ae.get_params()
    assert back.loss_history_ == ae.loss_history_
    _same_net(back.encoder_, ae.encoder_)
    _same_net(back.decoder_, ae.decoder_)
    np.testing.assert_array_equal(back.transform(digits.X), ae.transform(digits.X))


def test_classifier_and_pipeline_round_trip(digits):
    sm = SoftmaxRegression(epochs=2).fit(digits.X, digits.y)
    back = from_bytes(to_bytes(sm))
    assert isinstance(back, SoftmaxRegression)
    np.testing.assert_array_equal(back.predict_proba(digits.X), sm.predict_proba(digits.X))

    ae = Autoencoder(hidden_dim=8, latent_dim=3, epochs=1, batch_size=64).fit(digits.X)
    for features in ("reconstruction", "latent"):
        pipe = DefendedClassifier(NeuralNetClassifier(hidden_dims=(8,), activations=("tanh",), epochs=1), ae,
                                  scale="raw_0_255", features=features)
        pipe.fit(digits.X * 255, digits.y)
        again = from_bytes(to_bytes(pipe))
        assert again.scale == "raw_0_255" and again.features == features
        np.testing.assert_array_equal(again.predict_proba(digits.X * 255), pipe.predict_proba(digits.X * 255))
    bare = DefendedClassifier(sm).fit(digits.X, digits.y)
    assert from_bytes(to_bytes(bare)).filter is None


def test_serialization_is_byte_stable(digits):
    m = build("vanilla", seed=3, hidden_dim=6)
    assert to_bytes(m) == to_bytes(from_bytes(to_bytes(m)))


def test_header_layout():
    buf = to_bytes(build("vanilla", hidden_dim=4))
    assert buf[:4] == b"AESH"
    version, n_sections = struct.unpack("<II", buf[4:12])
    assert version == 1 and n_sections == 1


def test_little_endian_float_payload():
    m = build("vanilla", hidden_dim=4, latent_dim=2)
    m.decoder_.layers[-1].bias[-1] = 1.25
    buf = to_bytes(m)
    assert struct.pack("<d", 1.25) in buf


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b"XXXX" + b[4:],
        lambda b: b[:4] + struct.pack("<I", 99) + b[8:],
        lambda b: b[:-3],
        lambda b: b + b"\x00",
        lambda b: b"",
    ],
)
def test_corrupt_files_raise_format_error(mutate):
    buf = to_bytes(build("vanilla", hidden_dim=4))
    with pytest.raises(FormatError):
        from_bytes(mutate(buf))


def test_unfitted_or_foreign_objects_refused():
    with pytest.raises(FormatError):
        to_bytes(object())

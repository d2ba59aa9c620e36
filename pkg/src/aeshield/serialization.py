"""Versioned flat binary model format.

All integers are little-endian ``uint32`` and all parameters little-endian
``float64``::

    file    := "AESH" version:u32 n_sections:u32 section*
    section := kind:u32 meta_len:u32 meta:utf8-json n_nets:u32 net* n_hist:u32 f64[n_hist]
    net     := n_layers:u32 input_dim:u32 (out_dim:u32 activation:u32)*n_layers
               (W:f64[in*out] row-major, b:f64[out])*n_layers

``meta`` holds the estimator's constructor parameters. A pipeline file starts
with a header section (kind ``PIPELINE``, no networks) followed by the filter
section, if any, and the classifier section.
"""

import io
import json
import struct

import numpy as np

from .autoencoders import Autoencoder
from .classifiers import DefendedClassifier, NeuralNetClassifier, SoftmaxRegression
from .exceptions import FormatError
from .network import ACTIVATIONS, DenseLayer, Network

MAGIC = b"AESH"
VERSION = 1

KIND_CODES = {
    "vanilla": 1,
    "sparse": 2,
    "denoising": 3,
    "variational": 4,
    "softmax_regression": 16,
    "nn_classifier": 17,
    "pipeline": 32,
}
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}
ACTIVATION_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}

_TUPLE_PARAMS = ("encoder_activations", "decoder_activations", "hidden_dims", "activations")


def _u32(f, *values):
    f.write(struct.pack("<" + "I" * len(values), *values))


def _read(f, n):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError("model file is truncated")
    return buf


def _read_u32(f, count=1):
    vals = struct.unpack("<" + "I" * count, _read(f, 4 * count))
    return vals if count > 1 else vals[0]


def _read_f64(f, count):
    return np.frombuffer(_read(f, 8 * count), dtype="<f8").astype(np.float64)


def _write_net(f, net):
    _u32(f, len(net.layers), net.input_dim)
    for layer in net.layers:
        _u32(f, layer.out_dim, ACTIVATION_CODES[layer.activation])
    for layer in net.layers:
        f.write(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())


def _read_net(f):
    n_layers, in_dim = _read_u32(f, 2)
    spec = [_read_u32(f, 2) for _ in range(n_layers)]
    layers = []
    for out_dim, code in spec:
        if code >= len(ACTIVATIONS):
            raise FormatError(f"unknown activation code {code}")
        w = _read_f64(f, in_dim * out_dim).reshape(in_dim, out_dim)
        b = _read_f64(f, out_dim)
        layers.append(DenseLayer(w, b, ACTIVATIONS[code]))
        in_dim = out_dim
    return Network(layers)


def _write_section(f, kind, meta, nets, history):
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    _u32(f, KIND_CODES[kind], len(meta_bytes))
    f.write(meta_bytes)
    _u32(f, len(nets))
    for net in nets:
        _write_net(f, net)
    _u32(f, len(history))
    f.write(np.asarray(history, dtype="<f8").tobytes())


def _read_section(f):
    code, meta_len = _read_u32(f, 2)
    if code not in CODE_KINDS:
        raise FormatError(f"unknown model kind code {code}")
    meta = json.loads(_read(f, meta_len).decode())
    for key in _TUPLE_PARAMS:
        if isinstance(meta.get(key), list):
            meta[key] = tuple(meta[key])
    nets = [_read_net(f) for _ in range(_read_u32(f))]
    history = _read_f64(f, _read_u32(f)).tolist()
    return CODE_KINDS[code], meta, nets, history


def _estimator_sections(est):
    if isinstance(est, Autoencoder):
        nets = [est.encoder_]
        if est.is_variational:
            nets += [est.mean_head_, est.logvar_head_]
        nets.append(est.decoder_)
        return [(est.kind, est.get_params(), nets, est.loss_history_)]
    if isinstance(est, SoftmaxRegression):
        return [("softmax_regression", est.get_params(), [est.network_], est.loss_history_)]
    if isinstance(est, NeuralNetClassifier):
        return [("nn_classifier", est.get_params(), [est.network_], est.loss_history_)]
    if isinstance(est, DefendedClassifier):
        meta = {"scale": est.scale, "features": est.features, "has_filter": est.filter_ is not None}
        out = [("pipeline", meta, [], [])]
        if est.filter_ is not None:
            out += _estimator_sections(est.filter_)
        return out + _estimator_sections(est.classifier_)
    raise FormatError(f"cannot serialize {type(est).__name__}")


def _restore(kind, meta, nets, history):
    if kind in ("vanilla", "sparse", "denoising", "variational"):
        est = Autoencoder(**meta)
        est.encoder_ = nets[0]
        if est.is_variational:
            est.mean_head_, est.logvar_head_ = nets[1], nets[2]
        est.decoder_ = nets[-1]
        est.n_features_in_ = est.encoder_.input_dim
    else:
        est = (SoftmaxRegression if kind == "softmax_regression" else NeuralNetClassifier)(**meta)
        est.network_ = nets[0]
        est.classes_ = np.arange(est.n_classes)
        est.n_features_in_ = nets[0].input_dim
    for net in nets:
        net.loss_history = list(history)
        net.seed = meta.get("random_state")
    est.loss_history_ = list(history)
    return est


def to_bytes(est):
    f = io.BytesIO()
    f.write(MAGIC)
    sections = _estimator_sections(est)
    _u32(f, VERSION, len(sections))
    for section in sections:
        _write_section(f, *section)
    return f.getvalue()


def from_bytes(buf):
    f = io.BytesIO(buf)
    if f.read(4) != MAGIC:
        raise FormatError("not an AESH model file (bad magic)")
    version, n_sections = _read_u32(f, 2)
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")
    sections = [_read_section(f) for _ in range(n_sections)]
    if f.read(1):
        raise FormatError("trailing bytes after the last section")
    kind, meta, _, _ = sections[0]
    if kind != "pipeline":
        return _restore(*sections[0])
    parts = [_restore(*s) for s in sections[1:]]
    filt = parts[0] if meta["has_filter"] else None
    return DefendedClassifier.from_fitted(parts[-1], filt, meta["scale"], meta["features"])


def save_model(path, est):
    with open(path, "wb") as f:
        f.write(to_bytes(est))


def load_model(path):
    with open(path, "rb") as f:
        return from_bytes(f.read())

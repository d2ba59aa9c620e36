import json
import os
import shutil

import numpy as np
import pytest

from aeshield.cli import main
from aeshield.config import OUTPUT_ENV, config_hash, load_config
from aeshield.data import synthetic_digits, write_idx
from aeshield.evaluation import file_sha256, read_csv
from aeshield.exceptions import ConfigError

FAST_SECTIONS = """
[autoencoder]
hidden_dim = 16
epochs = 2
batch_size = 64

[classifier]
epochs = 2
batch_size = 64

[attack]
iterations = 2
n_images = 2

[activations]
epochs = 2
"""


@pytest.fixture(scope="module")
def mnist_like(tmp_path_factory):
    d = tmp_path_factory.mktemp("idx")
    for split, n, seed in (("train", 200, 0), ("t10k", 60, 1)):
        ds = synthetic_digits(n, seed=seed)
        write_idx(d / f"{split}-images-idx3-ubyte", ds.X.reshape(n, 28, 28).astype(np.uint8))
        write_idx(d / f"{split}-labels-idx1-ubyte", ds.y.astype(np.uint8))
    return d


def write_config(path, mnist_dir, out, extra=FAST_SECTIONS, head="", seed=0):
    path.write_text(
        f"""[data]
mnist_dir = {mnist_dir}
train_size = 150
test_size = 40
{head}
[run]
seed = {seed}
output_dir = {out}
{extra}"""
    )
    return str(path)


def test_missing_seed_is_config_error(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[run]\noutput_dir = x\n")
    with pytest.raises(ConfigError, match="seed"):
        load_config(p)
    assert main(["train-ae", str(p)]) == 3


@pytest.mark.parametrize(
    "body",
    [
        "[run]\nseed = 0\n[bogus]\nx = 1\n",
        "[run]\nseed = 0\n[autoencoder]\nwidth = 3\n",
        "[run]\nseed = zero\n",
        "[run]\nseed = 0\n[sweep]\nepsilons = 0.2, 0.1\n",
        "[run]\nseed = 0\n[autoencoder]\nkind = convolutional\n",
        "[run]\nseed = 0\n[attack]\nthreat = whitebox\n",
    ],
)
def test_bad_configs(tmp_path, body):
    p = tmp_path / "c.ini"
    p.write_text(body)
    with pytest.raises(ConfigError):
        load_config(p)


def test_config_parsing_and_env_override(tmp_path, monkeypatch, mnist_like):
    p = write_config(tmp_path / "c.ini", mnist_like, "rel/out", extra="[attack]\nepsilon = 0.2\n[sweep]\nepsilons = 0, 0.1\n")
    cfg = load_config(p)
    assert cfg.output_dir == os.path.join(str(tmp_path), "rel/out")
    assert cfg.attack.epsilon == 0.2 and cfg.attack.bim_step == pytest.approx(0.02)
    assert cfg.sweep_epsilons == (0.0, 0.1)
    assert cfg.data.train_size == 150
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "elsewhere"))
    assert load_config(p).output_dir == str(tmp_path / "elsewhere")


def test_config_hash_is_stable():
    # sha256 of '{"a":[1,2],"b":{"c":"x"}}', computed once with a standalone hasher
    assert config_hash({"b": {"c": "x"}, "a": [1, 2]}) == (
        "187beda85b23dcd243763470d790ec4ced20c59fc09c1ec400f25487256589b8"
    )


def test_downstream_commands_need_upstream_artifacts(tmp_path, mnist_like, caplog):
    p = write_config(tmp_path / "c.ini", mnist_like, tmp_path / "out")
    assert main(["train-clf", p]) == 6
    assert "aeshield train-ae" in caplog.text
    assert main(["attack", p]) == 6
    assert "aeshield train-clf" in caplog.text


def _manifest(out):
    with open(os.path.join(out, "manifest.json")) as f:
        return json.load(f)["files"]


def _all_files(out):
    found = set()
    for root, _, files in os.walk(out):
        for name in files:
            found.add(os.path.relpath(os.path.join(root, name), out))
    return found - {"manifest.json"}


def test_step_by_step_commands(tmp_path, mnist_like):
    out = tmp_path / "out"
    p = write_config(tmp_path / "c.ini", mnist_like, out, extra=FAST_SECTIONS + "\n[sweep]\nepsilons = 0\n")
    assert main(["train-ae", p]) == 0
    assert (out / "ae" / "vanilla" / "loss.csv").exists()
    assert len(read_csv(out / "ae" / "vanilla" / "loss.csv")) == 2
    assert main(["train-clf", p]) == 0
    assert main(["attack", p]) == 0
    assert main(["sweep", p]) == 0

    rows = read_csv(out / "sweep" / "vanilla-nn" / "sweep.csv")
    assert [(r["variant"], float(r["epsilon"])) for r in rows] == [("defended", 0.0), ("undefended", 0.0)]
    summary = json.loads((out / "summary" / "vanilla-nn.json").read_text())["summary"]
    assert float(rows[0]["accuracy"]) == summary["clean"]["defended"]
    assert float(rows[1]["accuracy"]) == summary["clean"]["undefended"]
    assert set(summary["attacks"]) == {"fgsm", "tfgsm", "bim"}
    assert (out / "attack" / "vanilla-nn" / "bim" / "defended" / "images" / "001_adversarial.pgm").exists()

    manifest = _manifest(out)
    assert set(manifest) == _all_files(out)
    for rel, digest in manifest.items():
        assert file_sha256(out / rel) == digest

    # cached models are reused, so a rerun rewrites identical files
    assert main(["attack", p]) == 0
    assert _manifest(out) == manifest


def test_compare_activations_command(tmp_path, mnist_like):
    out = tmp_path / "out"
    p = write_config(tmp_path / "c.ini", mnist_like, out)
    assert main(["compare-activations", p]) == 0
    names = sorted(os.listdir(out / "activations"))
    assert names == ["optimized.csv", "relu.csv", "sigmoid.csv", "softsign.csv", "tanh.csv"]
    assert len(read_csv(out / "activations" / "tanh.csv")) == 2


def test_reproduce_all_is_complete_and_deterministic(tmp_path, mnist_like):
    out = tmp_path / "a"
    cfg = write_config(tmp_path / "a.ini", mnist_like, out)
    assert main(["reproduce-all", cfg]) == 0
    summary = json.loads((out / "summary.json").read_text())
    pipelines = [k for k in summary["pipelines"] if k != "activations_final_loss"]
    assert len(pipelines) == 8
    assert len(os.listdir(out / "summary")) == 8
    assert (out / "ae" / "variational" / "latent_manifold.csv").exists()
    softmax = summary["pipelines"]["vanilla-softmax"]["attacks"]
    assert set(softmax) == {"nontargeted", "targeted_natural", "targeted_nonnatural", "targeted_one_number_7"}
    first = _manifest(out)
    assert set(first) == _all_files(out)

    # retrain everything from scratch with the same config
    shutil.rmtree(out)
    assert main(["reproduce-all", cfg]) == 0
    assert _manifest(out) == first

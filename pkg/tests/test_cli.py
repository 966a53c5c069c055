import json

import numpy as np
import pytest

from tndis.circuit import build_brickwall
from tndis.cli import main
from tndis.data import Dataset, write_mnist_idx
from tndis.mpo import bond_entropies, random_mpo


@pytest.fixture(scope="module")
def mnist_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("mnist")
    rng = np.random.default_rng(0)
    for prefix, n in (("train", 300), ("t10k", 100)):
        labels = rng.integers(0, 10, n)
        px = rng.integers(0, 60, size=(n, 28, 28))
        for i, y in enumerate(labels):  # a bright bar whose row encodes the class
            px[i, 2 + 2 * y : 4 + 2 * y, 4:24] = 255
        ds = Dataset(px.reshape(n, -1) / 255.0, labels, "train", (28, 28))
        write_mnist_idx(ds, root / f"{prefix}-images-idx3-ubyte", root / f"{prefix}-labels-idx1-ubyte")
    return root


def write_config(path, mnist_dir, **over):
    cfg = {
        "seed": 1,
        "data": {"mnist_dir": str(mnist_dir)},
        "model": {"preset": "mnist1"},
        "train": {"epochs": 3, "batch_size": 32, "lr": 1e-2},
    }
    for key, value in over.items():
        cfg[key] = {**cfg.get(key, {}), **value} if isinstance(value, dict) else value
    path.write_text(json.dumps(cfg))
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out.strip().splitlines()
    return code, (json.loads(out[-1]) if out else None)


@pytest.fixture(scope="module")
def trained(mnist_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = write_config(out / "cfg.json", mnist_dir)
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    return out, cfg


def test_train_writes_artifacts(trained):
    out, _ = trained
    assert (out / "model.json").exists() and (out / "model.bin").exists()
    lines = (out / "train.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,test_acc" and len(lines) == 4
    assert "epoch 3" in (out / "train.log").read_text()


def test_train_is_reproducible(trained, tmp_path, capsys):
    out, cfg = trained
    code, res = run(capsys, "train", "--config", cfg, "--out", str(tmp_path))
    assert code == 0 and res["params"] == 858
    assert (tmp_path / "train.csv").read_bytes() == (out / "train.csv").read_bytes()
    assert (tmp_path / "model.bin").read_bytes() == (out / "model.bin").read_bytes()


def test_zero_epochs_is_chance(mnist_dir, tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", mnist_dir, train={"epochs": 0})
    code, res = run(capsys, "train", "--config", cfg, "--out", str(tmp_path))
    assert code == 0 and res["test_acc"] < 0.3
    code, res = run(capsys, "eval", "--config", cfg, "--checkpoint", str(tmp_path / "model.json"))
    assert code == 0 and res["accuracy"] < 0.3


def test_eval(trained, capsys):
    out, cfg = trained
    code, res = run(capsys, "eval", "--config", cfg, "--checkpoint", str(out / "model.json"))
    assert code == 0 and 0.0 <= res["accuracy"] <= 1.0 and res["params"] == 858


def test_config_errors(mnist_dir, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"epochs": 1, "learning_rate": 3}}))
    assert main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 2
    bad.write_text("{not json")
    assert main(["eval", "--config", str(bad), "--checkpoint", "x.json"]) == 2
    assert main(["eval"]) == 2
    assert main(["nonsense"]) == 2
    cfg = write_config(tmp_path / "c.json", mnist_dir, model={"preset": "nope"})
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_divergence_exit_code(mnist_dir, tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", mnist_dir, train={"epochs": 0})
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == 0
    blob = tmp_path / "model.bin"
    raw = bytearray(blob.read_bytes())
    raw[16:] = np.full((len(raw) - 16) // 8, np.inf).tobytes()
    blob.write_bytes(bytes(raw))
    cfg = write_config(tmp_path / "c.json", mnist_dir, train={"epochs": 2})
    with np.errstate(all="ignore"):
        assert main(["train", "--config", cfg, "--checkpoint", str(tmp_path / "model.json"),
                     "--out", str(tmp_path / "again")]) == 3


def test_disentangle(trained, tmp_path, capsys):
    out, cfg = trained
    code, res = run(capsys, "disentangle", "--config", cfg, "--checkpoint", str(out / "model.json"),
                    "--out", str(tmp_path))
    assert code == 0 and 0.0 < res["overlap"] <= 1.0
    rows = (tmp_path / "history.csv").read_text().splitlines()[1:]
    ov = [float(r.split(",")[1]) for r in rows]
    assert all(b >= a - 1e-12 for a, b in zip(ov, ov[1:]))
    for name in ("left.json", "right.json", "mpo.json"):
        assert (tmp_path / name).exists()


def test_disentangle_full_bond(trained, tmp_path, capsys):
    out, _ = trained
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"disentangle": {"target_chi": 2, "passes": 2, "init": "identity"}}))
    code, res = run(capsys, "disentangle", "--config", str(cfg), "--checkpoint", str(out / "model.json"),
                    "--out", str(tmp_path))
    assert code == 0 and abs(res["overlap"] - 1.0) < 1e-10


def test_disentangle_missing_layer(trained, tmp_path, capsys):
    out, _ = trained
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"disentangle": {"layer": "dense1"}}))
    assert main(["disentangle", "--config", str(cfg), "--checkpoint", str(out / "model.json"),
                 "--out", str(tmp_path)]) == 2


def test_entropy(tmp_path, capsys):
    rng = np.random.default_rng(3)
    one = tmp_path / "one.json"
    one.write_text(random_mpo(rng, 4, 1).dumps())
    code, res = run(capsys, "entropy", str(one))
    assert code == 0 and res["average"] == 0.0
    m = random_mpo(rng, 6, 2)
    f = tmp_path / "m.json"
    f.write_text(m.dumps())
    code, res = run(capsys, "entropy", str(f))
    lib = bond_entropies(m)
    assert res["per_bond"] == lib.per_bond and res["average"] == lib.average
    assert res["average"] <= np.log(2) + 1e-12
    f.write_text("[1, 2")
    assert main(["entropy", str(f)]) == 2


def test_hybrid_check(trained, capsys):
    out, cfg = trained
    code, res = run(capsys, "hybrid-check", "--config", cfg, "--checkpoint", str(out / "model.json"))
    assert code == 0 and res["max_abs_deviation"] < 1e-8
    assert res["classical_acc"] == res["hybrid_acc"]


def test_heal(trained, mnist_dir, tmp_path, capsys):
    out, _ = trained
    cfg = write_config(tmp_path / "c.json", mnist_dir, train={"epochs": 1}, heal={"layer": "mpo1", "max_bond": 1})
    code, res = run(capsys, "heal", "--config", cfg, "--checkpoint", str(out / "model.json"), "--out", str(tmp_path))
    assert code == 0 and res["max_bond"] == 1
    assert (tmp_path / "healed.json").exists() and (tmp_path / "heal.csv").exists()


def test_gatecount(tmp_path, capsys):
    code, res = run(capsys, "gatecount", "--spec", "2b", "--wires", "6")
    assert code == 0 and res["two_body"] == 3 and res["one_body"] == 0
    f = tmp_path / "c.json"
    f.write_text(build_brickwall(5, 2, 1, rng=np.random.default_rng(0)).dumps())
    code, res = run(capsys, "gatecount", str(f))
    assert res["one_body"] == 10
    assert main(["gatecount"]) == 2

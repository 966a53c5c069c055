import numpy as np
import pytest

from gradcheck import check_layer, check_model
from tndis.circuit import CNOT, build_circuit
from tndis.data import Dataset
from tndis.errors import ParameterError, ShapeError, StateError, TrainingError
from tndis.net import (
    BatchNorm,
    CircuitLayer,
    Dense,
    Model,
    MpoLayer,
    ReLU,
    Reshape,
    TrainConfig,
    build_model,
    count_params,
    cross_entropy,
    disentangled_model,
    heal,
    train,
)
from tndis.net import checkpoint
from tndis.net.arch import MNIST_SPECS, PRESETS, mnist1_arch, mnist4_arch, transfer, with_circuits
from tndis.net.train import replace_with_mpo


def toy_data(rng, n=200, d=16, classes=4):
    centers = rng.random((classes, d))
    labels = rng.integers(0, classes, n)
    x = np.clip(centers[labels] + 0.1 * rng.normal(size=(n, d)), 0, 1)
    return Dataset(x, labels)


def small_model(rng):
    arch = [
        {"kind": "circuit", "n": 16, "spec": "CNOTs + 2b + 1b"},
        {"kind": "mpo", "name": "core", "in_dims": [2] * 4, "out_dims": [2] * 4, "bonds": [2, 2, 2]},
        {"kind": "batchnorm", "n": 16},
        {"kind": "relu", "n": 16},
        {"kind": "dense", "n_in": 16, "n_out": 4},
    ]
    return build_model(arch, rng, scale=0.5)


# -- forward ------------------------------------------------------------------


def test_identity_dense_passes_through(rng):
    d = Dense(5, 5, bias=False)
    d.params["weight"] = np.eye(5)
    x = rng.normal(size=(3, 5))
    np.testing.assert_array_equal(Model([d]).forward(x), x)


def test_cnot_layer_permutes_basis_rows():
    layer = CircuitLayer(build_circuit("CNOTs", 2))
    out = layer(np.eye(4))
    # |10> <-> |11>, the rest fixed
    np.testing.assert_array_equal(out, np.eye(4)[[0, 1, 3, 2]])
    np.testing.assert_array_equal(CNOT, np.eye(4)[[0, 1, 3, 2]])


def test_shape_errors(rng):
    m = small_model(rng)
    with pytest.raises(ShapeError):
        m.forward(np.zeros((2, 15)))
    with pytest.raises(ShapeError):
        Model([Dense(4, 3), Dense(4, 2)])


def test_forward_matches_dense_reexpansion(rng):
    model = disentangled_model(None, MNIST_SPECS["cnots_1b_2b"], rng=rng, scale=0.5)
    x = rng.random((20, 64))
    model.forward(x, train=True)  # move the running statistics off their defaults
    z = x
    for layer in model.layers:
        w = layer.dense_matrix()
        if w is not None:
            z = z @ w
        elif isinstance(layer, BatchNorm):
            z = (z - layer.running_mean) / np.sqrt(layer.running_var + layer.eps)
        else:
            z = np.maximum(z, 0.0)
    np.testing.assert_allclose(model.predict(x), z, atol=1e-8)


# -- backward -----------------------------------------------------------------


def test_backward_needs_forward(rng):
    m = small_model(rng)
    with pytest.raises(StateError):
        m.backward(np.zeros((1, 4)))
    m.forward(np.zeros((1, 16)))
    m.backward(np.zeros((1, 4)))
    with pytest.raises(StateError):
        m.backward(np.zeros((1, 4)))


def test_zero_output_gradient(rng):
    m = small_model(rng)
    m.forward(rng.random((6, 16)), train=True)
    m.zero_grad()
    m.backward(np.zeros((6, 4)))
    for layer, key, _ in m.named_params():
        assert not layer.grads[key].any()


def test_dense_squared_loss_gradient(rng):
    d = Dense(3, 1, bias=False, rng=rng)
    x, t = rng.normal(size=(8, 3)), rng.normal(size=(8, 1))
    y, back = d.forward(x)
    back(y - t)  # d/dy of 0.5 * |y - t|^2
    np.testing.assert_allclose(d.grads["weight"], x.T @ (x @ d.params["weight"] - t), atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_layer_gradients(seed):
    r = np.random.default_rng(seed)
    cases = [
        (Dense(5, 3, rng=r), False),
        (MpoLayer.random(r, [2, 3, 2], [3, 1, 2], [2, 3]), False),
        (CircuitLayer(build_circuit("2b + 3b + CNOTs + 1b", 4, r, 0.7), 48), False),
        (BatchNorm(4), True),
        (BatchNorm(4), False),
        (BatchNorm(4, affine=False), True),
        (ReLU(6), False),
        (Reshape((2, 3)), False),
    ]
    for layer, mode in cases:
        if "gamma" in layer.params:
            layer.params["gamma"] = r.normal(size=4)
            layer.params["beta"] = r.normal(size=4)
        x = r.normal(size=(5, layer.n_in))
        assert check_layer(layer, x, r, train=mode) < 1e-4, layer.kind


def test_model_gradient(rng):
    assert check_model(small_model(rng), rng.random((7, 16)), rng) < 1e-4


def test_cross_entropy_examples():
    loss, _ = cross_entropy(np.zeros((3, 10)), [0, 4, 9])
    assert abs(loss - np.log(10)) < 1e-14
    logits = np.full((2, 5), -1e3)
    logits[:, 2] = 1e3
    loss, grad = cross_entropy(logits, [2, 2])
    assert loss < 1e-300 and np.abs(grad).max() < 1e-300
    with pytest.raises(IndexError):
        cross_entropy(np.zeros((1, 3)), [3])


def test_cross_entropy_gradient(rng):
    logits, labels = rng.normal(size=(4, 10)), rng.integers(0, 10, 4)
    _, grad = cross_entropy(logits, labels)
    num = np.zeros_like(logits)
    for idx in np.ndindex(logits.shape):
        e = np.zeros_like(logits)
        e[idx] = 1e-6
        num[idx] = (cross_entropy(logits + e, labels)[0] - cross_entropy(logits - e, labels)[0]) / 2e-6
    np.testing.assert_allclose(grad, num, atol=1e-6)


# -- counting -----------------------------------------------------------------


def test_param_counts():
    assert count_params(Model([Dense(64, 10)])) == 650
    assert count_params(build_model(mnist1_arch())) == 858
    assert count_params(build_model(mnist4_arch())) == 1008
    assert count_params(build_model(PRESETS["mnist4_disentangled"]())) == 854
    assert count_params(disentangled_model(None, MNIST_SPECS["cnots"])) == 854


def test_circuit_layer_counts_generators():
    layer = CircuitLayer(build_circuit("2b + 3b + CNOTs", 4, np.random.default_rng(0)))
    # two 2-body gates (6 each) and one 3-body gate (28)
    assert layer.n_params() == 2 * 6 + 28


# -- training -----------------------------------------------------------------


def test_zero_learning_rate(rng):
    ds = toy_data(rng)
    m = small_model(rng)
    before = {(l.name, k): p.copy() for l, k, p in m.named_params()}
    rep = train(m, ds, TrainConfig(lr=0.0, epochs=2, batch_size=32), ds)
    for l, k, p in m.named_params():
        np.testing.assert_array_equal(p, before[(l.name, k)])
    # batch norm running stats do move, so compare the two evaluations after training
    assert rep.epochs[0][3] == pytest.approx(m.accuracy(ds.images, ds.labels), abs=0.05)


def test_training_learns_and_keeps_gates_orthogonal(rng):
    ds = toy_data(rng)
    m = small_model(rng)
    circ = m.layers[0].circuit
    cnots = [ref.gate for ref in circ.gates() if not ref.gate.trainable]
    frozen = [g.matrix.copy() for g in cnots]

    def on_epoch(model, row):
        for ref in circ.gates():
            g = ref.gate.matrix
            assert np.abs(g.T @ g - np.eye(len(g))).max() < 1e-9
        for g, f in zip(cnots, frozen):
            np.testing.assert_array_equal(g.matrix, f)

    rep = train(m, ds, TrainConfig(lr=1e-2, epochs=8, batch_size=32), ds, on_epoch=on_epoch)
    assert rep.epochs[-1][1] < rep.epochs[0][1]
    assert rep.final_test_acc > 0.8


def test_seeded_determinism(rng):
    ds = toy_data(rng)
    runs = []
    for _ in range(2):
        m = small_model(np.random.default_rng(1))
        rep = train(m, ds, TrainConfig(epochs=2, batch_size=16, seed=7), ds)
        runs.append((rep.to_csv(), [p.copy() for _, _, p in m.named_params()]))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(a, b) for a, b in zip(runs[0][1], runs[1][1]))


def test_batchnorm_eval_is_deterministic(rng):
    m = small_model(rng)
    x = rng.random((9, 16))
    m.forward(x, train=True)
    np.testing.assert_array_equal(m.predict(x), m.predict(x))


def test_frozen_layers(rng):
    ds = toy_data(rng)
    m = small_model(rng)
    core = m.layer("core")
    before = [p.copy() for p in core.params.values()]
    train(m, ds, TrainConfig(epochs=1, frozen=["core"]), ds)
    assert all(np.array_equal(a, b) for a, b in zip(before, core.params.values()))
    assert core.trainable
    with pytest.raises(KeyError):
        train(m, ds, TrainConfig(epochs=1, frozen=["nope"]))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises(rng):
    ds = toy_data(rng)
    m = small_model(rng)
    m.layers[-1].params["weight"][:] = np.inf
    with pytest.raises(TrainingError) as info:
        train(m, ds, TrainConfig(epochs=3), ds)
    assert info.value.epoch == 1


def test_config_rejects_unknown_and_negative():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.1)
    with pytest.raises(ValueError):
        TrainConfig(lr=-1.0)


def test_sgd_momentum_and_clip(rng):
    ds = toy_data(rng)
    m = small_model(rng)
    rep = train(m, ds, TrainConfig(optimizer="sgd", lr=0.1, momentum=0.9, clip=1.0, epochs=3, lr_decay=0.9), ds)
    assert rep.epochs[-1][1] < rep.epochs[0][1]


# -- healing ------------------------------------------------------------------


def test_full_rank_replacement_is_exact(rng):
    ds = toy_data(rng)
    m = build_model([{"kind": "dense", "n_in": 16, "n_out": 16, "bias": False},
                     {"kind": "relu", "n": 16}, {"kind": "dense", "n_in": 16, "n_out": 4}], rng)
    before = m.predict(ds.images)
    rep = heal(m, "dense1", 16, ds, TrainConfig(epochs=0), ds, in_dims=[2] * 4, out_dims=[2] * 4)
    np.testing.assert_allclose(m.predict(ds.images), before, atol=1e-10)
    assert abs(rep.acc_replaced - rep.acc_before) <= 1e-3


def test_truncating_mpo_layer(rng):
    m = small_model(rng)
    new = replace_with_mpo(m, "core", 1)
    assert new.mpo().max_bond == 1 and m.layer("core") is new
    with pytest.raises(ParameterError):
        replace_with_mpo(m, "relu1", 1)


# -- model plumbing -----------------------------------------------------------


def test_with_circuits_inserts_normalisation():
    arch = with_circuits(mnist4_arch(), {"mpo2": "6x CNOTs ; 2x CNOTs"})
    kinds = [c["kind"] for c in arch]
    i = kinds.index("circuit")
    assert kinds[i : i + 4] == ["circuit", "batchnorm", "relu", "circuit"]
    bn = arch[i + 1]
    assert bn["affine"] is False


def test_transfer_truncates(rng):
    base = build_model(mnist4_arch(), rng)
    target = disentangled_model(base, MNIST_SPECS["cnots"], rng=rng)
    w = base.layer("mpo1").mpo()
    assert target.layer("mpo1").mpo().max_bond == 1
    np.testing.assert_array_equal(target.layer("mpo4").params["site0"], base.layer("mpo4").params["site0"])
    assert w.max_bond == 2


def test_checkpoint_roundtrip(tmp_path, rng):
    m = disentangled_model(None, MNIST_SPECS["cnots_1b_2b"], rng=rng, scale=0.5)
    x = rng.random((10, 64))
    m.forward(x, train=True)
    json_path, bin_path = checkpoint.save(m, tmp_path / "ck", extra={"seed": 3})
    back, extra = checkpoint.load(json_path)
    assert extra == {"seed": 3}
    np.testing.assert_array_equal(back.predict(x), m.predict(x))
    assert count_params(back) == count_params(m)
    raw = bin_path.read_bytes()
    assert raw[:4] == b"TNDW"


def test_checkpoint_errors(tmp_path, rng):
    m = small_model(rng)
    json_path, bin_path = checkpoint.save(m, tmp_path / "ck")
    bin_path.write_bytes(bin_path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        checkpoint.load(json_path)
    json_path.write_text("{")
    with pytest.raises(ValueError):
        checkpoint.load(json_path)


def test_substitute_disentangled(rng):
    from tndis.net.train import substitute_disentangled
    from tndis.vardis import disentangle

    model = build_model(mnist1_arch(), rng)
    x = rng.random((8, 64))
    ref = model.predict(x)
    mpo = model.layer("mpo1").mpo()
    left, target, right, _ = disentangle(mpo, 2, "2b", "2b", passes=1, init="identity")
    substitute_disentangled(model, "mpo1", left, target, right)
    assert [l.name for l in model.layers[1:4]] == ["mpo1_ql", "mpo1", "mpo1_qr"]
    np.testing.assert_allclose(model.predict(x), ref, atol=1e-10)
    with pytest.raises(ParameterError):
        substitute_disentangled(model, "mpo1_ql", left, target, right)

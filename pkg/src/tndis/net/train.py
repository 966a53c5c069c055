"""Mini-batch training, evaluation and healing of truncated layers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..data import Dataset, batches
from ..errors import ParameterError, TrainingError
from ..circuit import Circuit, circuit_matrix
from ..mpo import Mpo, decompose, reconstruct, truncate
from .layers import CircuitLayer, Dense, MpoLayer
from .model import Model, cross_entropy
from .optim import make_optimizer

log = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    optimizer: Literal["adam", "sgd"] = "adam"
    lr: float = Field(1e-3, ge=0.0)
    momentum: float = Field(0.0, ge=0.0, lt=1.0)
    batch_size: int = Field(128, ge=1)
    epochs: int = Field(30, ge=0)
    seed: int = 0
    clip: float | None = Field(None, gt=0.0)
    lr_decay: float = Field(1.0, gt=0.0, le=1.0)  # multiplicative, per epoch
    frozen: list[str] = []  # layer names excluded from updates


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # (epoch, train_loss, train_acc, test_acc)

    @property
    def final_test_acc(self) -> float:
        return self.epochs[-1][3] if self.epochs else float("nan")

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,train_acc,test_acc"]
        for e, loss, tr, te in self.epochs:
            lines.append(f"{e},{loss:.10f},{tr:.6f},{te:.6f}")
        return "\n".join(lines) + "\n"


def train(
    model: Model,
    train_ds: Dataset,
    config: TrainConfig,
    test_ds: Dataset | None = None,
    on_epoch=None,
) -> TrainReport:
    """Minimise cross-entropy; deterministic for a given ``config.seed``.

    Raises :class:`TrainingError` as soon as the loss stops being finite.
    """
    if len(train_ds) == 0:
        raise ParameterError("training set is empty")
    for name in config.frozen:
        model.layer(name)  # KeyError on unknown names
    saved = {layer.name: layer.trainable for layer in model.layers}
    for layer in model.layers:
        if layer.name in config.frozen:
            layer.trainable = False
    opt = make_optimizer(config.optimizer, model, config.lr, config.clip, config.momentum)
    report = TrainReport()
    try:
        for epoch in range(1, config.epochs + 1):
            total, correct, seen = 0.0, 0, 0
            for x, y in batches(train_ds, config.batch_size, config.seed, epoch):
                logits = model.forward(x, train=True)
                loss, grad = cross_entropy(logits, y)
                if not np.isfinite(loss):
                    raise TrainingError("loss is not finite", epoch)
                model.zero_grad()
                model.backward(grad)
                opt.step()
                total += loss * len(y)
                correct += int(np.sum(np.argmax(logits, axis=1) == y))
                seen += len(y)
            model.sync()
            opt.lr *= config.lr_decay
            test_acc = model.accuracy(test_ds.images, test_ds.labels) if test_ds is not None else float("nan")
            row = (epoch, total / seen, correct / seen, test_acc)
            report.epochs.append(row)
            log.info("epoch %d loss %.4f train %.4f test %.4f", *row)
            if on_epoch is not None:
                on_epoch(model, row)
    finally:
        for layer in model.layers:
            layer.trainable = saved[layer.name]
    return report


def evaluate(model: Model, ds: Dataset) -> dict:
    logits = model.predict(ds.images)
    loss, _ = cross_entropy(logits, ds.labels)
    return {"loss": loss, "accuracy": float(np.mean(np.argmax(logits, axis=1) == ds.labels))}


@dataclass
class HealReport:
    acc_before: float
    acc_replaced: float
    acc_healed: float
    training: TrainReport


def replace_with_mpo(model: Model, name: str, max_bond: int, in_dims: Sequence[int] | None = None,
                     out_dims: Sequence[int] | None = None) -> MpoLayer:
    """Swap a dense or MPO layer for an MPO of bond dimension at most ``max_bond``."""
    idx = model.index(name)
    layer = model.layers[idx]
    if isinstance(layer, MpoLayer):
        new = MpoLayer(truncate(layer.mpo(), max_bond), name=layer.name)
    elif isinstance(layer, Dense):
        if layer.bias:
            raise ParameterError("only bias-free dense layers can become an MPO")
        if in_dims is None or out_dims is None:
            raise ParameterError("dense layers need site dimensions for the MPO")
        mpo = decompose(layer.params["weight"], len(in_dims), max_bond, in_dims, out_dims)
        new = MpoLayer(mpo, name=layer.name)
    else:
        raise ParameterError(f"layer {name} is neither dense nor MPO")
    model.layers[idx] = new
    return new


def substitute_disentangled(model: Model, name: str, left: Circuit, target: Mpo, right: Circuit,
                            rescale: bool = True) -> list:
    """Replace MPO layer ``name`` by the layers ``left``, ``target``, ``right``.

    The target is fixed up to scale during disentangling; with ``rescale`` it
    is multiplied by the least-squares factor so that ``Q_L M' Q_R`` matches
    the original operator in magnitude.
    """
    idx = model.index(name)
    layer = model.layers[idx]
    if not isinstance(layer, MpoLayer):
        raise ParameterError(f"layer {name} is not an MPO layer")
    if rescale:
        a = layer.dense_matrix()
        b = reconstruct(target)
        approx = circuit_matrix(left) @ b @ circuit_matrix(right)
        target = target.scaled(float(np.sum(a * approx) / np.sum(b * b)))
    new = [
        CircuitLayer(left.copy(), layer.n_in, name=f"{name}_ql"),
        MpoLayer(target, name=name),
        CircuitLayer(right.copy(), layer.n_out, name=f"{name}_qr"),
    ]
    model.layers[idx : idx + 1] = new
    return new


def heal(
    model: Model,
    name: str,
    max_bond: int,
    train_ds: Dataset,
    config: TrainConfig,
    test_ds: Dataset | None = None,
    in_dims=None,
    out_dims=None,
) -> HealReport:
    """Truncate one layer, then fine-tune the whole model."""
    eval_ds = test_ds if test_ds is not None else train_ds
    before = model.accuracy(eval_ds.images, eval_ds.labels)
    replace_with_mpo(model, name, max_bond, in_dims, out_dims)
    replaced = model.accuracy(eval_ds.images, eval_ds.labels)
    report = train(model, train_ds, config, test_ds)
    healed = model.accuracy(eval_ds.images, eval_ds.labels)
    return HealReport(before, replaced, healed, report)

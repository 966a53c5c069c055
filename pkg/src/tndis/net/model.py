"""Sequential model with a reverse-mode tape, and the classification loss."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError, StateError
from .layers import CircuitLayer, Layer


class Model:
    """Ordered layers; ``forward`` records one backward closure per layer."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)
        counts: dict[str, int] = {}
        for layer in self.layers:
            if not layer.name:
                counts[layer.kind] = counts.get(layer.kind, 0) + 1
                layer.name = f"{layer.kind}{counts[layer.kind]}"
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ShapeError(f"{a.name} emits {a.n_out} features but {b.name} takes {b.n_in}")
        self._tape: list | None = None

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def layer(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def index(self, name: str) -> int:
        return [layer.name for layer in self.layers].index(name)

    def forward(self, x, train: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"model takes rows of {self.n_in} features, got shape {x.shape}")
        tape = []
        for layer in self.layers:
            x, back = layer.forward(x, train)
            tape.append(back)
        self._tape = tape
        return x

    __call__ = forward

    def backward(self, grad: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients from ``d loss / d output``; consumes the tape."""
        if self._tape is None:
            raise StateError("backward called without a recorded forward pass")
        tape, self._tape = self._tape, None
        g = np.asarray(grad, dtype=np.float64)
        for back in reversed(tape):
            g = back(g)
        return g

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()

    def named_params(self):
        """``(layer, key, array)`` for every trainable parameter."""
        for layer in self.layers:
            if not layer.trainable:
                continue
            for key, value in layer.params.items():
                yield layer, key, value

    def sync(self) -> None:
        for layer in self.layers:
            if isinstance(layer, CircuitLayer):
                layer.sync()

    def predict(self, x, batch: int = 2048) -> np.ndarray:
        out = [self.forward(x[i : i + batch]) for i in range(0, len(x), batch)]
        self._tape = None
        return np.concatenate(out) if out else np.zeros((0, self.n_out))

    def accuracy(self, x, labels, batch: int = 2048) -> float:
        if len(labels) == 0:
            return float("nan")
        return float(np.mean(np.argmax(self.predict(x, batch), axis=1) == labels))


def count_params(model: Model) -> int:
    """Trainable scalars; fixed gates and reshapes contribute nothing."""
    return sum(layer.n_params() for layer in model.layers)


def cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-softmax of the true class, and its gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeError("need one label per logits row")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(lse - shifted[rows, labels]))
    grad = np.exp(shifted - lse[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n

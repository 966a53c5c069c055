"""Statevector simulation of disentangled layers.

A classical circuit layer multiplies activation rows from the right,
``y = x @ Q``. On a register the same map is ``psi -> Q^T psi``, so the
simulator runs the transposed circuits on amplitude-encoded columns and
keeps the discarded norms on the side. Noise-free, this reproduces the
classical forward pass up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuit import Circuit, apply_to_state, split_spectator
from .errors import DegenerateInputError, ShapeError
from .mpo import Mpo, reconstruct
from .net.layers import CircuitLayer, MpoLayer
from .net.model import Model

NORM_ATOL = 1e-12


@dataclass(frozen=True)
class EncodedState:
    """Unit amplitudes plus the norm needed to undo the normalisation."""

    amplitudes: np.ndarray
    norm: float

    def __post_init__(self):
        if abs(np.linalg.norm(self.amplitudes) - 1.0) > NORM_ATOL:
            raise ValueError("amplitudes are not normalised")


def encode(x) -> EncodedState:
    x = np.asarray(x, dtype=np.float64).ravel()
    norm = float(np.linalg.norm(x))
    if norm == 0.0 or not np.isfinite(norm):
        raise DegenerateInputError("cannot amplitude-encode a zero vector")
    return EncodedState(x / norm, norm)


def decode(state: EncodedState) -> np.ndarray:
    return state.amplitudes * state.norm


def _run(c: Circuit, psi: np.ndarray) -> np.ndarray:
    """Apply ``c`` to every ``2**wires`` block of a (possibly batched) state.

    The leading odd factor of the length is a spectator index the circuit
    never touches.
    """
    s, wires = split_spectator(psi.shape[0])
    if wires < c.wires:
        raise ShapeError(f"state of length {psi.shape[0]} has fewer than {c.wires} wires")
    s *= 2 ** (wires - c.wires)
    tail = psi.shape[1:]
    blocks = psi.reshape((s, c.dim) + tail).swapaxes(0, 1)
    return apply_to_state(c, blocks).swapaxes(0, 1).reshape(psi.shape)


def simulate_circuit(c: Circuit, state: EncodedState) -> EncodedState:
    """Evolve a register by the row-action of ``c`` (i.e. by ``Q^T``)."""
    out = _run(c.transpose(), state.amplitudes)
    return EncodedState(out / np.linalg.norm(out), state.norm)


def contract_mpo(m: Mpo, state: EncodedState) -> EncodedState:
    """Apply ``W^T`` and renormalise; the lost norm moves into the bookkeeping."""
    w = reconstruct(m)
    if w.shape[0] != state.amplitudes.shape[0]:
        raise ShapeError(f"operator expects {w.shape[0]} amplitudes, got {state.amplitudes.shape[0]}")
    out = w.T @ state.amplitudes
    n = float(np.linalg.norm(out))
    if n == 0.0:
        return EncodedState(np.eye(len(out))[0], 0.0)
    return EncodedState(out / n, state.norm * n)


def run_hybrid_layer(x, q_left: Circuit | None, m: Mpo, q_right: Circuit | None) -> np.ndarray:
    """``x @ Q_L @ W @ Q_R`` for one input vector, evaluated on a register."""
    state = encode(x)
    if q_left is not None:
        state = simulate_circuit(q_left, state)
    state = contract_mpo(m, state)
    if q_right is not None and state.norm != 0.0:
        state = simulate_circuit(q_right, state)
    return decode(state)


def _segments(model: Model):
    """Group layers into runs ``circuits* mpo circuits*`` and single layers."""
    layers = model.layers
    i = 0
    while i < len(layers):
        j = i
        while j < len(layers) and isinstance(layers[j], CircuitLayer):
            j += 1
        if j < len(layers) and isinstance(layers[j], MpoLayer):
            k = j + 1
            while k < len(layers) and isinstance(layers[k], CircuitLayer):
                k += 1
            yield layers[i:j], layers[j], layers[j + 1 : k]
            i = k
        elif j > i:
            yield layers[i:j], None, []
            i = j
        else:
            yield [], layers[i], []
            i += 1


def _simulate_block(x: np.ndarray, left, core, right) -> np.ndarray:
    """Rows of ``x`` through a run of circuit layers around an optional MPO."""
    psi = x.T
    norms = np.linalg.norm(psi, axis=0)
    safe = np.where(norms == 0.0, 1.0, norms)
    psi = psi / safe
    for layer in left:
        layer.sync()
        psi = _run(layer.circuit.transpose(), psi)
    if core is not None:
        psi = reconstruct(core.mpo()).T @ psi
        scale = np.linalg.norm(psi, axis=0)
        inner = np.where(scale == 0.0, 1.0, scale)
        psi = psi / inner
        norms = norms * scale
    for layer in right:
        layer.sync()
        psi = _run(layer.circuit.transpose(), psi)
    return (psi * norms).T


def hybrid_forward(model: Model, x) -> np.ndarray:
    """Eval-mode forward pass with circuit and MPO layers run as registers.

    Batchnorm, ReLU, dense and reshape layers are evaluated classically.
    """
    z = np.asarray(x, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    for left, core, right in _segments(model):
        if left or right or isinstance(core, MpoLayer):
            z = _simulate_block(z, left, core, right)
        else:
            z, _ = core.forward(z, train=False)
    return z


def max_deviation(model: Model, x, batch: int = 1024) -> float:
    """Largest absolute gap between classical and simulated outputs."""
    worst = 0.0
    x = np.asarray(x, dtype=np.float64)
    for lo in range(0, len(x), batch):
        chunk = x[lo : lo + batch]
        worst = max(worst, float(np.max(np.abs(model.predict(chunk) - hybrid_forward(model, chunk)))))
    return worst

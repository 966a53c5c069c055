"""Explicit variational disentangling of an MPO layer.

Given a weight operator ``A`` (as an MPO ``M``) and a fixed compressed core
``B`` (MPO ``M'``), find orthogonal circuits ``Q_L``, ``Q_R`` maximising the
normalised Frobenius overlap

    <A, Q_L B Q_R> / (|A| |B|).

Gates are optimised one at a time. With every other gate fixed the
objective is linear in the free gate ``g``, ``overlap = Tr(E g)``, and the
best orthogonal ``g`` follows from the SVD of the environment ``E``.

Environments are computed exactly on dense matrices; the operators handled
here have at most a few thousand rows.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .circuit import (
    Circuit,
    CircuitSpec,
    Gate,
    apply_gate_rows,
    apply_rows,
    build_circuit,
    split_spectator,
)
from .errors import DegenerateInputError, ParameterError, ShapeError
from .mpo import Mpo, bond_entropies, decompose, reconstruct, truncate
from .tensor import svd

LEFT = "left"
RIGHT = "right"


@dataclass
class DisentangleProblem:
    """``M ~ Q_L M' Q_R`` with ``M'`` held fixed."""

    input_mpo: Mpo
    target_mpo: Mpo
    left: Circuit
    right: Circuit
    _a: np.ndarray = field(init=False, repr=False)
    _b: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m, t = self.input_mpo, self.target_mpo
        if m.n_sites != t.n_sites or m.in_dims != t.in_dims or m.out_dims != t.out_dims:
            raise ShapeError("input and target MPOs must share sites and physical dimensions")
        if any(bt > bm for bt, bm in zip(t.bond_dims, m.bond_dims)):
            raise ParameterError("target bond dimensions exceed the input's")
        rows, cols = m.shape
        if rows % self.left.dim or split_spectator(rows)[1] < self.left.wires:
            raise ShapeError(f"left circuit on {self.left.wires} wires does not fit {rows} rows")
        if cols % self.right.dim or split_spectator(cols)[1] < self.right.wires:
            raise ShapeError(f"right circuit on {self.right.wires} wires does not fit {cols} columns")
        self._a = reconstruct(m)
        self._b = reconstruct(t)
        self._norm = float(np.linalg.norm(self._a) * np.linalg.norm(self._b))

    @property
    def a(self) -> np.ndarray:
        return self._a

    @property
    def b(self) -> np.ndarray:
        return self._b

    def circuit(self, which: str) -> Circuit:
        if which == LEFT:
            return self.left
        if which == RIGHT:
            return self.right
        raise ParameterError(f"which must be 'left' or 'right', not {which!r}")

    def effective(self) -> np.ndarray:
        """``Q_L^T A Q_R^T``, the operator the core approximates."""
        # Q_L^T A = (A^T Q_L)^T
        t = apply_rows(self.left, self._a.T).T
        return apply_rows(self.right.transpose(), t)

    def effective_mpo(self) -> Mpo:
        return decompose(
            self.effective(),
            self.input_mpo.n_sites,
            in_dims=self.input_mpo.in_dims,
            out_dims=self.input_mpo.out_dims,
        )


@dataclass
class SweepHistory:
    """Per-pass record; entry 0 is the state before the first pass."""

    overlap: list = field(default_factory=list)
    s_avg: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    steps: list = field(default_factory=list)  # overlap after every single-gate update

    @property
    def final_overlap(self) -> float:
        return self.overlap[-1]

    def to_csv(self) -> str:
        lines = ["pass,overlap,s_avg,seconds"]
        for i, (o, s, t) in enumerate(zip(self.overlap, self.s_avg, self.seconds)):
            lines.append(f"{i},{o:.12f},{s:.12f},{t:.6f}")
        return "\n".join(lines) + "\n"


def _norm(p: DisentangleProblem) -> float:
    if p._norm == 0.0:
        raise DegenerateInputError("overlap is undefined for a zero-norm operator")
    return p._norm


def overlap(p: DisentangleProblem) -> float:
    """Normalised overlap ``<A, Q_L B Q_R> / (|A| |B|)``."""
    n = _norm(p)
    lb = apply_rows(p.left.transpose(), p.b.T).T  # Q_L B
    lbr = apply_rows(p.right, lb)
    return float(np.vdot(p.a, lbr) / n)


def _partial_trace(f: np.ndarray, gate: Gate, wires: int) -> np.ndarray:
    """``E[j, i] = sum_{a,b} F[(a, j, b), (a, i, b)]`` over the gate's wires."""
    d = f.shape[0]
    k = 2**gate.size
    a = d // 2**wires * 2**gate.start
    b = 2 ** (wires - gate.stop)
    return np.einsum("ajbaib->ji", f.reshape(a, k, b, a, k, b))


def _rows_apply(m: np.ndarray, gate: Gate, wires: int) -> np.ndarray:
    """``m @ G`` for an embedded gate ``G``."""
    return apply_gate_rows(m, gate.matrix, gate.start, gate.size, wires)


def _core(p: DisentangleProblem, which: str) -> np.ndarray:
    """Matrix ``T`` with ``overlap = Tr(Q T) / n`` for ``Q`` the chosen circuit."""
    if which == LEFT:
        t = apply_rows(p.right, p.b)  # B Q_R
        return t @ p.a.T
    lb = apply_rows(p.left.transpose(), p.b.T).T  # Q_L B
    return p.a.T @ lb


def _first_f(p: DisentangleProblem, which: str) -> np.ndarray:
    """``F_1 = S_1 T / n`` where ``S_1`` is the circuit without its first gate."""
    c = p.circuit(which)
    gates = [ref.gate for ref in c.gates()]
    t = _core(p, which) / _norm(p)
    # S_1 @ t, applying gates from the last to the second
    for g in reversed(gates[1:]):
        t = _left_mul(t, g, c.wires)
    return t


def _left_mul(m: np.ndarray, gate: Gate, wires: int) -> np.ndarray:
    """``G @ m`` for an embedded gate ``G``."""
    return apply_gate_rows(m.T, gate.matrix.T, gate.start, gate.size, wires).T


def environment(p: DisentangleProblem, which: str, gate_id: int) -> np.ndarray:
    """Environment of the ``gate_id``-th trainable gate of circuit ``which``.

    Indexed ``(gate out, gate in)`` so that ``Tr(E @ g) = overlap(p)``.
    """
    c = p.circuit(which)
    refs = list(c.gates())
    trainable = [i for i, r in enumerate(refs) if r.gate.trainable]
    if not -len(trainable) <= gate_id < len(trainable):
        raise IndexError(f"gate {gate_id} out of range for {len(trainable)} trainable gates")
    k = trainable[gate_id]
    return _environment_at(p, which, k)


def fixed_environment(p: DisentangleProblem, which: str, position: int) -> np.ndarray:
    """Environment of the gate at ``position`` in layer-major order, trainable or not."""
    return _environment_at(p, which, position)


def _environment_at(p: DisentangleProblem, which: str, k: int) -> np.ndarray:
    c = p.circuit(which)
    gates = [ref.gate for ref in c.gates()]
    if not 0 <= k < len(gates):
        raise IndexError(f"gate position {k} out of range")
    f = _core(p, which) / _norm(p)
    for g in reversed(gates[k + 1 :]):
        f = _left_mul(f, g, c.wires)
    for g in gates[:k]:
        f = _rows_apply(f, g, c.wires)
    return _partial_trace(f, gates[k], c.wires)


def gate_environment(p: DisentangleProblem, which: str, gate: Gate) -> np.ndarray:
    """Environment of a gate object that belongs to circuit ``which``."""
    c = p.circuit(which)
    for i, ref in enumerate(c.gates()):
        if ref.gate is gate:
            if not gate.trainable:
                raise ParameterError("fixed gates have no environment")
            return _environment_at(p, which, i)
    raise ParameterError("gate is not part of the circuit")


def contract_environment(env: np.ndarray, g: np.ndarray) -> float:
    """``Tr(env @ g)``."""
    return float(np.einsum("ji,ij->", env, g))


def update_gate(env: np.ndarray) -> np.ndarray:
    """Orthogonal ``g`` maximising ``Tr(env @ g)``.

    With ``env = U S V^T`` the maximiser is ``V U^T`` and the maximum is the
    sum of singular values. Degenerate spectra still give an orthogonal
    maximiser; the sign gauge of :func:`tndis.tensor.svd` fixes which one.
    """
    env = np.asarray(env, dtype=np.float64)
    if env.ndim != 2 or env.shape[0] != env.shape[1]:
        raise ShapeError(f"environment must be square, got {env.shape}")
    u, _, vt = svd(env)
    return vt.T @ u.T


def _check_trainable(p: DisentangleProblem) -> None:
    if not p.left.trainable_gates() and not p.right.trainable_gates():
        raise ParameterError("the problem has no trainable gates")


def _sweep_circuit(p: DisentangleProblem, which: str, steps: list, callback) -> None:
    c = p.circuit(which)
    gates = [ref.gate for ref in c.gates()]
    if not any(g.trainable for g in gates):
        return
    f = _first_f(p, which)
    for k, g in enumerate(gates):
        if g.trainable:
            env = _partial_trace(f, g, c.wires)
            g.set_matrix(update_gate(env))
            value = contract_environment(env, g.matrix)
            steps.append(value)
            if callback is not None:
                callback(which, k, value)
        if k + 1 < len(gates):
            # F_{k+1} = G_{k+1}^T F_k G_k
            f = _rows_apply(f, g, c.wires)
            f = _left_mul(f, _transposed(gates[k + 1]), c.wires)


def _transposed(g: Gate) -> Gate:
    return Gate(g.start, g.size, "orthogonal", _matrix=g.matrix.T)


def _s_avg(p: DisentangleProblem) -> float:
    return bond_entropies(p.effective_mpo()).average


def sweep(
    p: DisentangleProblem,
    passes: int,
    tol: float = 1e-8,
    on_update: Callable[[str, int, float], None] | None = None,
    track_entropy: bool = True,
) -> SweepHistory:
    """Update every trainable gate in turn, ``passes`` times or until converged.

    Order: left circuit layer by layer (left to right within a layer), then
    the right circuit. Stops early once a full pass changes the overlap by
    less than ``tol``.
    """
    _check_trainable(p)
    if passes < 0:
        raise ParameterError("passes must be >= 0")
    h = SweepHistory()
    h.overlap.append(overlap(p))
    h.s_avg.append(_s_avg(p) if track_entropy else float("nan"))
    h.seconds.append(0.0)
    for _ in range(passes):
        t0 = time.perf_counter()
        _sweep_circuit(p, LEFT, h.steps, on_update)
        _sweep_circuit(p, RIGHT, h.steps, on_update)
        value = overlap(p)
        elapsed = time.perf_counter() - t0
        h.overlap.append(value)
        h.s_avg.append(_s_avg(p) if track_entropy else float("nan"))
        h.seconds.append(elapsed)
        if abs(h.overlap[-1] - h.overlap[-2]) < tol:
            break
    return h


def _as_circuit(spec, wires: int, rng, init: str, scale: float) -> Circuit:
    if isinstance(spec, Circuit):
        if spec.wires != wires:
            raise ShapeError(f"circuit has {spec.wires} wires, expected {wires}")
        return spec.copy()
    if init not in ("random", "identity"):
        raise ParameterError(f"unknown init {init!r}")
    return build_circuit(spec if spec is not None else CircuitSpec(()), wires,
                         rng=rng if init == "random" else None, scale=scale)


def disentangle(
    m: Mpo,
    target_chi: int,
    left_spec,
    right_spec,
    passes: int = 50,
    rng: np.random.Generator | None = None,
    init: str = "random",
    scale: float = 0.1,
    tol: float = 1e-8,
    on_update=None,
    track_entropy: bool = True,
) -> tuple[Circuit, Mpo, Circuit, SweepHistory]:
    """Fix ``M' = truncate(m, target_chi)`` and optimise both circuits.

    ``left_spec`` and ``right_spec`` are spec strings, :class:`CircuitSpec`
    objects or ready circuits (copied, not modified).
    """
    if target_chi < 1 or target_chi > m.max_bond:
        raise ParameterError(f"target bond {target_chi} must lie in 1..{m.max_bond}")
    rng = np.random.default_rng(0) if rng is None else rng
    rows, cols = m.shape
    left = _as_circuit(left_spec, split_spectator(rows)[1], rng, init, scale)
    right = _as_circuit(right_spec, split_spectator(cols)[1], rng, init, scale)
    target = truncate(m, target_chi)
    p = DisentangleProblem(m, target, left, right)
    if left.trainable_gates() or right.trainable_gates():
        hist = sweep(p, passes, tol=tol, on_update=on_update, track_entropy=track_entropy)
    else:
        hist = SweepHistory([overlap(p)], [_s_avg(p) if track_entropy else float("nan")], [0.0])
    return left, target, right, hist

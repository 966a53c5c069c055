"""Brickwall circuits of fixed CNOTs and real orthogonal gates.

Wire 0 is the most significant bit of a basis-state index. A gate on the
contiguous span ``start .. start+size-1`` acts on the ``2**size`` dimensional
factor of those wires.

Two matrix conventions meet here. :func:`circuit_matrix` multiplies layer
matrices in application order, ``Q = L_1 @ L_2 @ ... @ L_d``, which is the
matrix a network layer applies to row activations (``y = x @ Q``).
:func:`apply_to_state` evaluates ``Q @ psi`` gate by gate. A quantum device
realising ``x -> x @ Q`` on a state runs :meth:`Circuit.transpose`.

Circuit specs
-------------
A textual spec lists layers, one token per layer::

    spec     := "none" | term ("+" term)*
    term     := [count ("x" | "×")] token
    token    := "CNOTs" | "1b" | "2b" | "3b" | "4b" | "5b" | "6b"
    position := spec [";" spec]

``CNOTs`` is a brickwall layer of fixed CNOTs (control on the lower wire),
``nb`` a brickwall layer of trainable ``n``-body gates. Layers with two or
more wires per gate alternate their brick phase: even phases start at wire
0, odd phases at wire ``n // 2``; single-qubit layers do not advance the
phase. In a position, the part before ``;`` is the circuit preceding an
MPO layer and the part after it the circuit following it.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import CapacityError, FormatError, ParameterError, ShapeError
from .tensor import expm_skew, strictly_lower

CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.float64
)

MAX_DENSE_WIRES = 12
MAX_GATE_SIZE = 6

FIXED = "cnot"
TRAINABLE = "orthogonal"


@dataclass
class Gate:
    """A gate on wires ``start .. start+size-1``.

    Trainable gates carry either skew parameters (``matrix = expm_skew(params)``)
    or, after a Procrustes update, an explicit orthogonal matrix with
    ``params`` set to ``None``.
    """

    start: int
    size: int
    kind: str = TRAINABLE
    params: np.ndarray | None = None
    _matrix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 1 <= self.size <= MAX_GATE_SIZE:
            raise ParameterError(f"gate size {self.size} outside 1..{MAX_GATE_SIZE}")
        if self.start < 0:
            raise ParameterError("gate start must be >= 0")
        dim = 2**self.size
        if self.kind == FIXED:
            if self.size != 2:
                raise ParameterError("a CNOT acts on exactly two wires")
            self.params = None
            self._matrix = CNOT.copy()
        elif self.kind == TRAINABLE:
            if self._matrix is not None:
                self._matrix = np.asarray(self._matrix, dtype=np.float64)
                if self._matrix.shape != (dim, dim):
                    raise ShapeError(f"gate matrix must be {dim}x{dim}")
                self.params = None
            else:
                p = np.zeros((dim, dim)) if self.params is None else self.params
                p = np.asarray(p, dtype=np.float64)
                if p.shape != (dim, dim):
                    raise ShapeError(f"gate parameters must be {dim}x{dim}")
                self.params = strictly_lower(p)
        else:
            raise ParameterError(f"unknown gate kind {self.kind!r}")

    @property
    def wires(self) -> tuple[int, ...]:
        return tuple(range(self.start, self.start + self.size))

    @property
    def stop(self) -> int:
        return self.start + self.size

    @property
    def trainable(self) -> bool:
        return self.kind == TRAINABLE

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = expm_skew(self.params)
        return self._matrix

    def set_params(self, params) -> None:
        if not self.trainable:
            raise ParameterError("fixed gates have no parameters")
        self.params = strictly_lower(params)
        self._matrix = None

    def set_matrix(self, matrix) -> None:
        if not self.trainable:
            raise ParameterError("fixed gates cannot be overwritten")
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (2**self.size,) * 2:
            raise ShapeError(f"gate matrix must be {2**self.size}x{2**self.size}")
        self.params = None
        self._matrix = matrix.copy()

    def transpose(self) -> "Gate":
        if self.kind == FIXED:
            return Gate(self.start, self.size, FIXED)
        if self.params is not None:
            return Gate(self.start, self.size, TRAINABLE, params=-self.params)
        return Gate(self.start, self.size, TRAINABLE, _matrix=self.matrix.T.copy())

    def copy(self) -> "Gate":
        if self.kind == FIXED:
            return Gate(self.start, self.size, FIXED)
        if self.params is not None:
            return Gate(self.start, self.size, TRAINABLE, params=self.params.copy())
        return Gate(self.start, self.size, TRAINABLE, _matrix=self.matrix.copy())

    def n_params(self) -> int:
        if not self.trainable:
            return 0
        d = 2**self.size
        return d * (d - 1) // 2

    def to_dict(self) -> dict:
        out = {"start": self.start, "size": self.size, "kind": self.kind}
        if self.trainable:
            if self.params is not None:
                out["params"] = self.params.tolist()
            out["matrix"] = self.matrix.tolist()
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "Gate":
        try:
            kind = obj.get("kind", TRAINABLE)
            if kind == TRAINABLE and "params" not in obj and "matrix" in obj:
                return cls(int(obj["start"]), int(obj["size"]), kind, _matrix=np.asarray(obj["matrix"]))
            params = np.asarray(obj["params"]) if "params" in obj else None
            return cls(int(obj["start"]), int(obj["size"]), kind, params=params)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed gate: {exc}") from exc


class GateRef(NamedTuple):
    layer: int
    index: int
    gate: Gate


@dataclass
class Circuit:
    """Ordered layers of non-overlapping gates on ``wires`` wires."""

    wires: int
    layers: list = field(default_factory=list)

    def __post_init__(self):
        if self.wires < 1:
            raise ParameterError("a circuit needs at least one wire")
        self.layers = [list(layer) for layer in self.layers]
        for d, layer in enumerate(self.layers):
            used = set()
            for g in layer:
                if g.stop > self.wires:
                    raise ParameterError(f"gate on wires {g.wires} exceeds {self.wires} wires")
                if used.intersection(g.wires):
                    raise ParameterError(f"layer {d} has overlapping gates on wires {g.wires}")
                used.update(g.wires)
            layer.sort(key=lambda g: g.start)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def dim(self) -> int:
        return 2**self.wires

    def gates(self) -> Iterator[GateRef]:
        """All gates, layer by layer, left to right within a layer."""
        for d, layer in enumerate(self.layers):
            for i, g in enumerate(layer):
                yield GateRef(d, i, g)

    def trainable_gates(self) -> list[GateRef]:
        return [ref for ref in self.gates() if ref.gate.trainable]

    def n_params(self) -> int:
        return sum(ref.gate.n_params() for ref in self.gates())

    def transpose(self) -> "Circuit":
        """Circuit whose matrix is the transpose (= inverse) of this one."""
        return Circuit(self.wires, [[g.transpose() for g in layer] for layer in reversed(self.layers)])

    def copy(self) -> "Circuit":
        return Circuit(self.wires, [[g.copy() for g in layer] for layer in self.layers])

    def to_dict(self) -> dict:
        return {
            "wires": self.wires,
            "layers": [[g.to_dict() for g in layer] for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Circuit":
        try:
            return cls(
                int(obj["wires"]),
                [[Gate.from_dict(g) for g in layer] for layer in obj["layers"]],
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed circuit: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "Circuit":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise FormatError(f"not JSON: {exc}") from exc


# -- construction -----------------------------------------------------------


def brick_spans(wires: int, size: int, phase: int) -> list[int]:
    """Start wires of a maximal tiling of ``size``-wire bricks for ``phase``."""
    if not 1 <= size <= wires:
        raise ParameterError(f"gate size {size} must lie in 1..{wires}")
    offset = 0 if phase % 2 == 0 else size // 2
    if offset + size > wires:
        offset = wires - size
    return list(range(offset, wires - size + 1, size))


def random_params(rng: np.random.Generator | None, size: int, scale: float = 0.1) -> np.ndarray:
    d = 2**size
    if rng is None or scale == 0.0:
        return np.zeros((d, d))
    return np.tril(rng.normal(0.0, scale, (d, d)), k=-1)


def brick_layer(
    wires: int,
    size: int,
    kind: str,
    phase: int,
    rng: np.random.Generator | None = None,
    scale: float = 0.1,
) -> list[Gate]:
    if kind == FIXED:
        return [Gate(s, 2, FIXED) for s in brick_spans(wires, 2, phase)]
    return [
        Gate(s, size, TRAINABLE, params=random_params(rng, size, scale))
        for s in brick_spans(wires, size, phase)
    ]


def build_brickwall(
    wires: int,
    depth: int,
    gate_size: int,
    kind: str = TRAINABLE,
    rng: np.random.Generator | None = None,
    scale: float = 0.1,
) -> Circuit:
    """Brickwall of ``depth`` layers of ``gate_size``-wire gates.

    Trainable gates start at ``expm_skew`` of Gaussian(0, ``scale``) strictly
    lower parameters, or at the identity when ``rng`` is None.
    """
    if not 1 <= gate_size <= wires:
        raise ParameterError(f"gate size {gate_size} must lie in 1..{wires}")
    if kind == FIXED and gate_size != 2:
        raise ParameterError("CNOT layers use two-wire gates")
    if depth < 0:
        raise ParameterError("depth must be >= 0")
    return Circuit(wires, [brick_layer(wires, gate_size, kind, d, rng, scale) for d in range(depth)])


# -- specs ------------------------------------------------------------------

_TOKEN = re.compile(r"^(?:(\d+)\s*[x×*]\s*)?(cnots?|[1-6]b)$", re.IGNORECASE)


@dataclass(frozen=True)
class CircuitSpec:
    """Per-layer gate types of one circuit, e.g. ``("1b", "CNOTs", "1b")``."""

    layers: tuple = ()

    def __post_init__(self):
        norm = []
        for tok in self.layers:
            t = tok.strip()
            if t.lower() in ("cnot", "cnots"):
                norm.append("CNOTs")
            elif re.fullmatch(r"[1-6]b", t.lower()):
                norm.append(t.lower())
            else:
                raise FormatError(f"unknown layer token {tok!r}")
        object.__setattr__(self, "layers", tuple(norm))

    @property
    def depth(self) -> int:
        return len(self.layers)

    @classmethod
    def parse(cls, text: str) -> "CircuitSpec":
        text = text.strip()
        if text.lower() in ("", "none", "-"):
            return cls(())
        layers = []
        for term in text.split("+"):
            m = _TOKEN.match(term.strip())
            if not m:
                raise FormatError(f"cannot parse layer term {term.strip()!r}")
            count = int(m.group(1)) if m.group(1) else 1
            if count < 1:
                raise FormatError("layer counts must be >= 1")
            layers.extend([m.group(2)] * count)
        return cls(tuple(layers))

    def __str__(self) -> str:
        if not self.layers:
            return "none"
        terms = []
        i = 0
        while i < len(self.layers):
            j = i
            while j < len(self.layers) and self.layers[j] == self.layers[i]:
                j += 1
            run = j - i
            terms.append(self.layers[i] if run == 1 else f"{run}x {self.layers[i]}")
            i = j
        return " + ".join(terms)

    def n_params(self, wires: int) -> int:
        return build_circuit(self, wires, rng=None).n_params()


def parse_position(text: str) -> tuple[CircuitSpec, CircuitSpec]:
    """Split ``"left ; right"`` into the circuits before and after an MPO."""
    parts = text.split(";")
    if len(parts) > 2:
        raise FormatError(f"a position has at most one ';': {text!r}")
    left = CircuitSpec.parse(parts[0])
    right = CircuitSpec.parse(parts[1]) if len(parts) == 2 else CircuitSpec(())
    return left, right


def format_position(left: CircuitSpec, right: CircuitSpec) -> str:
    return f"{left} ; {right}"


def build_circuit(
    spec: CircuitSpec | str,
    wires: int,
    rng: np.random.Generator | None = None,
    scale: float = 0.1,
) -> Circuit:
    """Materialise a spec on ``wires`` wires."""
    if isinstance(spec, str):
        spec = CircuitSpec.parse(spec)
    layers = []
    phase = 0
    for tok in spec.layers:
        if tok == "CNOTs":
            if wires < 2:
                raise ParameterError("CNOT layers need at least two wires")
            layers.append(brick_layer(wires, 2, FIXED, phase))
            phase += 1
        else:
            n = int(tok[0])
            if n > wires:
                raise ParameterError(f"{tok} gates do not fit on {wires} wires")
            layers.append(brick_layer(wires, n, TRAINABLE, phase, rng, scale))
            if n >= 2:
                phase += 1
    return Circuit(wires, layers)


# -- evaluation -------------------------------------------------------------


def apply_gate_rows(z: np.ndarray, gate_matrix: np.ndarray, start: int, size: int, wires: int) -> np.ndarray:
    """Right-multiply every row of ``z`` by the gate embedded in ``2**wires`` space."""
    rows = z.shape[0]
    a = z.shape[1] // 2**wires * 2**start
    b = 2 ** (wires - start - size)
    t = z.reshape(rows, a, 2**size, b)
    return np.matmul(gate_matrix.T, t).reshape(z.shape)


def apply_gate_cols(psi: np.ndarray, gate_matrix: np.ndarray, start: int, size: int, wires: int) -> np.ndarray:
    """Left-multiply a state (or the columns of a matrix) by an embedded gate."""
    tail = psi.shape[1:]
    a = 2**start
    b = 2 ** (wires - start - size)
    t = psi.reshape((a, 2**size, b) + tail)
    return np.tensordot(gate_matrix, t, axes=(1, 1)).swapaxes(0, 1).reshape(psi.shape)


def layer_matrix(layer: Sequence[Gate], wires: int) -> np.ndarray:
    """Kronecker product of the layer's gates, padded with identities."""
    mats = []
    w = 0
    for g in sorted(layer, key=lambda g: g.start):
        if g.start > w:
            mats.append(np.eye(2 ** (g.start - w)))
        mats.append(g.matrix)
        w = g.stop
    if w < wires:
        mats.append(np.eye(2 ** (wires - w)))
    out = np.ones((1, 1))
    for m in mats:
        out = np.kron(out, m)
    return out


def apply_rows(c: Circuit, z: np.ndarray) -> np.ndarray:
    """``z @ kron(I_s, circuit_matrix(c))`` where ``s = z.shape[1] // 2**wires``.

    The leading factor ``s`` is a spectator index the circuit does not touch.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] % c.dim:
        raise ShapeError(f"row length {z.shape[-1]} is not a multiple of 2**{c.wires}")
    for ref in c.gates():
        z = apply_gate_rows(z, ref.gate.matrix, ref.gate.start, ref.gate.size, c.wires)
    return z


def circuit_matrix(c: Circuit) -> np.ndarray:
    """``L_1 @ L_2 @ ... @ L_d`` for the circuit's layers."""
    if c.wires > MAX_DENSE_WIRES:
        raise CapacityError(f"{c.wires} wires exceed the dense bound of {MAX_DENSE_WIRES}")
    q = np.eye(c.dim)
    for ref in c.gates():
        q = apply_gate_rows(q, ref.gate.matrix, ref.gate.start, ref.gate.size, c.wires)
    return q


def apply_to_state(c: Circuit, psi) -> np.ndarray:
    """``circuit_matrix(c) @ psi`` without forming the matrix."""
    psi = np.asarray(psi, dtype=np.float64)
    if psi.shape[0] != c.dim:
        raise ShapeError(f"state length {psi.shape[0]} does not match 2**{c.wires}")
    out = psi.copy()
    for ref in reversed(list(c.gates())):
        out = apply_gate_cols(out, ref.gate.matrix, ref.gate.start, ref.gate.size, c.wires)
    return out


class GateCount(NamedTuple):
    one_body: int
    two_body: int
    n_body: dict


def gate_count(c: Circuit) -> GateCount:
    by_size: dict[int, int] = {}
    for ref in c.gates():
        by_size[ref.gate.size] = by_size.get(ref.gate.size, 0) + 1
    return GateCount(by_size.get(1, 0), by_size.get(2, 0), dict(sorted(by_size.items())))


def is_orthogonal(m: np.ndarray, atol: float = 1e-9) -> bool:
    return bool(np.allclose(m.T @ m, np.eye(m.shape[0]), atol=atol, rtol=0.0))


def split_spectator(dim: int) -> tuple[int, int]:
    """``(s, wires)`` with ``dim = s * 2**wires`` and ``s`` odd."""
    if dim < 1:
        raise ShapeError("dimension must be positive")
    wires = 0
    while dim % 2 == 0:
        dim //= 2
        wires += 1
    return dim, wires


def n_wires_for(dim: int) -> int:
    w = round(math.log2(dim)) if dim > 0 else -1
    if w < 0 or 2**w != dim:
        raise ShapeError(f"dimension {dim} is not a power of two")
    return w

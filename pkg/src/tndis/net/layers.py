"""Network layers with hand-written reverse mode.

Every layer maps a batch matrix ``x`` of shape ``(batch, n_in)`` to
``(batch, n_out)``. ``forward`` returns the output together with a closure
that takes the output gradient, accumulates parameter gradients into
``layer.grads`` and returns the input gradient. The model strings these
closures onto its tape.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from ..circuit import Circuit, Gate, circuit_matrix, split_spectator
from ..errors import ParameterError, ShapeError
from ..mpo import Mpo, reconstruct
from ..tensor import expm_skew_vjp

Backward = Callable[[np.ndarray], np.ndarray]


class Layer:
    kind = "layer"

    def __init__(self, n_in: int, n_out: int, name: str = ""):
        self.n_in = n_in
        self.n_out = n_out
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.trainable = True

    def forward(self, x: np.ndarray, train: bool = False) -> tuple[np.ndarray, Backward]:
        raise NotImplementedError

    def __call__(self, x, train: bool = False) -> np.ndarray:
        return self.forward(x, train)[0]

    def zero_grad(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state saved in checkpoints."""
        return {}

    def config(self) -> dict:
        return {"kind": self.kind, "name": self.name, "n_in": self.n_in, "n_out": self.n_out}

    def dense_matrix(self) -> np.ndarray | None:
        """The linear map as a dense ``(n_in, n_out)`` matrix, if the layer is linear."""
        return None

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"{self.name or self.kind}: expected rows of {self.n_in}, got {x.shape}")
        return x


class Reshape(Layer):
    """Regroups a flat row as ``shape``; the data itself is untouched."""

    kind = "reshape"

    def __init__(self, shape: tuple, name: str = ""):
        size = math.prod(shape)
        super().__init__(size, size, name)
        self.shape = tuple(int(s) for s in shape)

    def forward(self, x, train=False):
        x = self._check(x)
        return x, lambda g: g

    def config(self):
        return {**super().config(), "shape": list(self.shape)}

    def dense_matrix(self):
        return np.eye(self.n_in)


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, bias: bool = True, rng=None, name: str = ""):
        super().__init__(n_in, n_out, name)
        rng = np.random.default_rng(0) if rng is None else rng
        bound = 1.0 / math.sqrt(n_in)
        self.params["weight"] = rng.uniform(-bound, bound, (n_in, n_out))
        if bias:
            self.params["bias"] = rng.uniform(-bound, bound, n_out)
        self.zero_grad()

    @property
    def bias(self) -> bool:
        return "bias" in self.params

    def forward(self, x, train=False):
        x = self._check(x)
        w = self.params["weight"]
        y = x @ w
        if self.bias:
            y = y + self.params["bias"]

        def backward(g):
            self.grads["weight"] += x.T @ g
            if self.bias:
                self.grads["bias"] += g.sum(axis=0)
            return g @ w.T

        return y, backward

    def config(self):
        return {**super().config(), "bias": self.bias}

    def dense_matrix(self):
        return self.params["weight"].copy()


def mpo_init_scale(n_in: int, bonds, n_sites: int) -> float:
    """Gaussian site scale giving entries of variance ``1 / n_in`` in the dense operator."""
    return float((n_in * math.prod(bonds)) ** (-1.0 / (2 * n_sites)))


class MpoLayer(Layer):
    """``y = x @ reconstruct(M)``; site tensors are the parameters."""

    kind = "mpo"

    def __init__(self, mpo: Mpo, name: str = ""):
        rows, cols = mpo.shape
        super().__init__(rows, cols, name)
        for k, s in enumerate(mpo.sites):
            self.params[f"site{k}"] = np.array(s, dtype=np.float64)
        self.zero_grad()

    @classmethod
    def random(cls, rng, in_dims, out_dims, bonds, name: str = "") -> "MpoLayer":
        n = len(in_dims)
        if len(out_dims) != n or len(bonds) != n - 1:
            raise ParameterError("need one in/out dim per site and n-1 bonds")
        sigma = mpo_init_scale(math.prod(in_dims), bonds, n)
        full = [1, *bonds, 1]
        sites = tuple(
            rng.normal(0.0, sigma, (full[k], in_dims[k], out_dims[k], full[k + 1])) for k in range(n)
        )
        return cls(Mpo(sites), name)

    @property
    def n_sites(self) -> int:
        return len(self.params)

    def sites(self) -> list[np.ndarray]:
        return [self.params[f"site{k}"] for k in range(self.n_sites)]

    def mpo(self) -> Mpo:
        return Mpo(tuple(s.copy() for s in self.sites()))

    def set_mpo(self, mpo: Mpo) -> None:
        if mpo.shape != (self.n_in, self.n_out):
            raise ShapeError(f"MPO shape {mpo.shape} does not match layer {(self.n_in, self.n_out)}")
        self.params = {f"site{k}": np.array(s) for k, s in enumerate(mpo.sites)}
        self.zero_grad()

    def forward(self, x, train=False):
        x = self._check(x)
        sites = self.sites()
        w, w_backward = _reconstruct_vjp(sites)
        y = x @ w

        def backward(g):
            gw = x.T @ g
            for k, gs in enumerate(w_backward(gw)):
                self.grads[f"site{k}"] += gs
            return g @ w.T

        return y, backward

    def config(self):
        return {**super().config(), "shapes": [list(s.shape) for s in self.sites()]}

    def dense_matrix(self):
        return reconstruct(self.mpo())


def _reconstruct_vjp(sites: list[np.ndarray]):
    """Dense operator from site tensors, plus the map from its gradient to site gradients."""
    n = len(sites)
    ins = [s.shape[1] for s in sites]
    outs = [s.shape[2] for s in sites]
    # left[k]: contraction of sites[:k] as (P_in, P_out, bond)
    left = [np.ones((1, 1, 1))]
    for s in sites[:-1]:
        acc = np.einsum("IOb,bior->IiOor", left[-1], s)
        p, i, q, o, r = acc.shape
        left.append(acc.reshape(p * i, q * o, r))
    # right[k]: contraction of sites[k:] as (bond, Q_in, Q_out)
    right = [None] * (n + 1)
    right[n] = np.ones((1, 1, 1))
    for k in range(n - 1, 0, -1):
        acc = np.einsum("lior,rIO->liIoO", sites[k], right[k + 1])
        l, i, p, o, q = acc.shape
        right[k] = acc.reshape(l, i * p, o * q)
    last = np.einsum("IOb,bior->IiOor", left[n - 1], sites[n - 1])
    w = last.reshape(math.prod(ins), math.prod(outs))

    def backward(gw: np.ndarray) -> list[np.ndarray]:
        grads = []
        for k in range(n):
            pin, pout = left[k].shape[0], left[k].shape[1]
            qin, qout = right[k + 1].shape[1], right[k + 1].shape[2]
            g6 = gw.reshape(pin, ins[k], qin, pout, outs[k], qout)
            grads.append(np.einsum("piqPoQ,pPa,bqQ->aiob", g6, left[k], right[k + 1], optimize=True))
        return grads

    return w, backward


class CircuitLayer(Layer):
    """``y = x @ kron(I_s, Q)`` for a circuit ``Q`` on the trailing ``wires`` bits.

    Gate parameters are the strictly lower triangles of the skew generators;
    the gate matrices are rebuilt from them on every forward pass, so they
    stay orthogonal throughout training. CNOTs and gates given as explicit
    matrices are frozen.
    """

    kind = "circuit"

    def __init__(self, circuit: Circuit, n: int | None = None, name: str = ""):
        n = circuit.dim if n is None else n
        if n % circuit.dim:
            raise ShapeError(f"{n} features do not split over {circuit.wires} wires")
        super().__init__(n, n, name)
        self.circuit = circuit
        self._slots: list[tuple[str, Gate]] = []
        for i, ref in enumerate(circuit.gates()):
            if ref.gate.trainable and ref.gate.params is not None:
                key = f"gate{i}"
                self.params[key] = ref.gate.params  # shared with the circuit
                self._slots.append((key, ref.gate))
        self.zero_grad()

    def n_params(self) -> int:
        return sum(gate.n_params() for _, gate in self._slots)

    def sync(self) -> None:
        """Push current parameters into the circuit's gates."""
        for key, gate in self._slots:
            gate.set_params(self.params[key])
            self.params[key] = gate.params

    def _matrices(self):
        """Gate matrices in circuit order and a backward map for parameters."""
        mats: dict[int, np.ndarray] = {}
        backs = []
        by_size: dict[int, list[tuple[str, int]]] = {}
        keyed = {id(g): key for key, g in self._slots}
        gates = [ref.gate for ref in self.circuit.gates()]
        for i, g in enumerate(gates):
            key = keyed.get(id(g))
            if key is None:
                mats[i] = g.matrix
            else:
                by_size.setdefault(g.size, []).append((key, i))
        for size, items in by_size.items():
            stack = np.stack([self.params[key] for key, _ in items])
            g_all, back = expm_skew_vjp(stack)
            for j, (_, i) in enumerate(items):
                mats[i] = g_all[j]
            backs.append((items, back))
        return gates, [mats[i] for i in range(len(gates))], backs

    def forward(self, x, train=False):
        x = self._check(x)
        gates, mats, backs = self._matrices()
        wires = self.circuit.wires
        rows = x.shape[0]
        saved = []
        z = x
        for g, m in zip(gates, mats):
            a = self.n_in // 2**wires * 2**g.start
            b = 2 ** (wires - g.stop)
            t = z.reshape(rows, a, 2**g.size, b)
            saved.append(t)
            # (m^T @ t) over the gate axis is the row action t @ m
            z = np.matmul(m.T, t).reshape(rows, self.n_in)

        def backward(gy):
            gmats = [None] * len(gates)
            gz = gy
            for i in range(len(gates) - 1, -1, -1):
                g, m, t = gates[i], mats[i], saved[i]
                gt = gz.reshape(t.shape)
                if g.trainable and g.params is not None:
                    gmats[i] = np.tensordot(t, gt, axes=([0, 1, 3], [0, 1, 3]))
                gz = np.matmul(m, gt).reshape(rows, self.n_in)
            for items, back in backs:
                gl = back(np.stack([gmats[i] for _, i in items]))
                for j, (key, _) in enumerate(items):
                    self.grads[key] += gl[j]
            return gz

        return z, backward

    def config(self):
        return {**super().config(), "circuit": self.circuit.to_dict()}

    def dense_matrix(self):
        self.sync()
        s = self.n_in // self.circuit.dim
        return np.kron(np.eye(s), circuit_matrix(self.circuit))


class BatchNorm(Layer):
    """Per-feature batch normalisation; ``affine=False`` drops scale and shift."""

    kind = "batchnorm"

    def __init__(self, n: int, eps: float = 1e-5, momentum: float = 0.1, affine: bool = True, name: str = ""):
        super().__init__(n, n, name)
        self.eps = eps
        self.momentum = momentum
        self.affine = affine
        if affine:
            self.params["gamma"] = np.ones(n)
            self.params["beta"] = np.zeros(n)
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)
        self.zero_grad()

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, train=False):
        x = self._check(x)
        gamma = self.params["gamma"] if self.affine else np.ones(self.n_in)
        if train:
            n = x.shape[0]
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            unbiased = var * n / max(n - 1, 1)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        y = xhat * gamma
        if self.affine:
            y = y + self.params["beta"]

        def backward(g):
            if self.affine:
                self.grads["gamma"] += np.sum(g * xhat, axis=0)
                self.grads["beta"] += g.sum(axis=0)
            gh = g * gamma
            if not train:
                return gh * inv
            n = x.shape[0]
            return inv / n * (n * gh - gh.sum(axis=0) - xhat * np.sum(gh * xhat, axis=0))

        return y, backward

    def config(self):
        return {**super().config(), "eps": self.eps, "momentum": self.momentum, "affine": self.affine}


class ReLU(Layer):
    kind = "relu"

    def __init__(self, n: int, name: str = ""):
        super().__init__(n, n, name)

    def forward(self, x, train=False):
        x = self._check(x)
        mask = x > 0
        return np.where(mask, x, 0.0), lambda g: g * mask

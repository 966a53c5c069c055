"""Matrix product operators.

An :class:`Mpo` factorises a matrix ``W`` whose row index is the input
multi-index ``(i_0, ..., i_{n-1})`` and whose column index is the output
multi-index ``(o_0, ..., o_{n-1})``. Site ``k`` holds a tensor with axes
``(left bond, physical in, physical out, right bond)``; site 0 carries the most
significant bits. With this row convention a layer applies ``y = x @ W``.

Entanglement diagnostics treat the MPO as a pure state on the interleaved
indices ``(i_0, o_0, i_1, o_1, ...)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import FormatError, ParameterError, ShapeError
from .tensor import SVD_RTOL, qr, svd


@dataclass(frozen=True)
class Mpo:
    """Open-boundary MPO; the boundary bonds have extent 1."""

    sites: tuple

    def __post_init__(self):
        sites = tuple(np.ascontiguousarray(s, dtype=np.float64) for s in self.sites)
        if not sites:
            raise ShapeError("an MPO needs at least one site")
        for k, s in enumerate(sites):
            if s.ndim != 4:
                raise ShapeError(f"site {k} has {s.ndim} axes, expected 4")
            if any(d < 1 for d in s.shape):
                raise ShapeError(f"site {k} has an empty axis: {s.shape}")
        if sites[0].shape[0] != 1 or sites[-1].shape[3] != 1:
            raise ShapeError("boundary bonds must have extent 1")
        for k in range(len(sites) - 1):
            if sites[k].shape[3] != sites[k + 1].shape[0]:
                raise ShapeError(
                    f"bond {k} mismatch: {sites[k].shape[3]} vs {sites[k + 1].shape[0]}"
                )
        for s in sites:
            s.setflags(write=False)
        object.__setattr__(self, "sites", sites)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def bond_dims(self) -> list[int]:
        return [s.shape[3] for s in self.sites[:-1]]

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims, default=1)

    @property
    def in_dims(self) -> list[int]:
        return [s.shape[1] for s in self.sites]

    @property
    def out_dims(self) -> list[int]:
        return [s.shape[2] for s in self.sites]

    @property
    def shape(self) -> tuple[int, int]:
        return math.prod(self.in_dims), math.prod(self.out_dims)

    def n_params(self) -> int:
        return sum(s.size for s in self.sites)

    def max_bond_bounds(self) -> list[int]:
        """Largest Schmidt rank each bond can support."""
        local = [p * q for p, q in zip(self.in_dims, self.out_dims)]
        return [
            min(math.prod(local[: k + 1]), math.prod(local[k + 1 :]))
            for k in range(self.n_sites - 1)
        ]

    def norm(self) -> float:
        """Frobenius norm of the represented operator."""
        env = np.ones((1, 1))
        for s in self.sites:
            env = np.einsum("ab,aior,bios->rs", env, s, s)
        return float(np.sqrt(max(env[0, 0], 0.0)))

    def scaled(self, factor: float) -> "Mpo":
        return Mpo((self.sites[0] * factor,) + self.sites[1:])

    # serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "sites": [
                {"shape": list(s.shape), "data": s.ravel().tolist()} for s in self.sites
            ]
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Mpo":
        try:
            sites = []
            for entry in obj["sites"]:
                shape = [int(d) for d in entry["shape"]]
                data = np.asarray(entry["data"], dtype=np.float64)
                if data.size != math.prod(shape):
                    raise FormatError(f"site data length {data.size} does not match shape {shape}")
                sites.append(data.reshape(shape))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed MPO document: {exc}") from exc
        try:
            return cls(tuple(sites))
        except ShapeError as exc:
            raise FormatError(str(exc)) from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "Mpo":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"not JSON: {exc}") from exc
        return cls.from_dict(obj)


@dataclass(frozen=True)
class EntropyReport:
    """Bond entanglement entropies in nats."""

    per_bond: list[float]
    average: float
    maximum: float
    spectra: list = field(default_factory=list, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {"per_bond": self.per_bond, "average": self.average, "maximum": self.maximum}


def _split_dims(total: int, sites: int) -> list[int]:
    if sites < 1:
        raise ParameterError("site count must be >= 1")
    bits = round(math.log2(total)) if total > 0 else -1
    if total < 1 or 2**bits != total or bits != sites:
        raise ShapeError(f"dimension {total} is not 2**{sites}")
    return [2] * sites


def decompose(
    w,
    sites: int,
    max_bond: int | None = None,
    in_dims: Sequence[int] | None = None,
    out_dims: Sequence[int] | None = None,
) -> Mpo:
    """Tensor-train factorisation of ``w`` by successive SVDs.

    Singular values below ``1e-12`` of the largest at a cut are discarded, so
    product operators come out with unit bonds; ``max_bond`` further caps
    every bond. Physical extents default to 2 per site, which requires both
    sides of ``w`` to be ``2**sites``.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError(f"decompose expects a matrix, got {w.ndim} axes")
    if max_bond is not None and max_bond < 1:
        raise ParameterError("max_bond must be >= 1")
    ins = list(in_dims) if in_dims is not None else _split_dims(w.shape[0], sites)
    outs = list(out_dims) if out_dims is not None else _split_dims(w.shape[1], sites)
    if len(ins) != sites or len(outs) != sites:
        raise ShapeError("physical dimension lists must have one entry per site")
    if math.prod(ins) != w.shape[0] or math.prod(outs) != w.shape[1]:
        raise ShapeError(f"physical dims {ins} x {outs} do not factor a {w.shape} matrix")
    t = w.reshape(ins + outs)
    order = [ax for k in range(sites) for ax in (k, sites + k)]
    rest = t.transpose(order).reshape(1, -1)
    out = []
    left = 1
    for k in range(sites - 1):
        local = ins[k] * outs[k]
        mat = rest.reshape(left * local, -1)
        res = svd(mat)
        keep = max(res.rank(SVD_RTOL), 1)
        if max_bond is not None:
            keep = min(keep, max_bond)
        out.append(res.u[:, :keep].reshape(left, ins[k], outs[k], keep))
        rest = res.s[:keep, None] * res.vt[:keep]
        left = keep
    out.append(rest.reshape(left, ins[-1], outs[-1], 1))
    return Mpo(tuple(out))


def reconstruct(m: Mpo) -> np.ndarray:
    """Dense ``prod(in_dims) x prod(out_dims)`` matrix of ``m``."""
    acc = m.sites[0][0]  # (i, o, r)
    rows, cols = m.sites[0].shape[1], m.sites[0].shape[2]
    for s in m.sites[1:]:
        acc = np.einsum("IOb,bior->IiOor", acc, s)
        rows *= s.shape[1]
        cols *= s.shape[2]
        acc = acc.reshape(rows, cols, s.shape[3])
    return acc[..., 0].copy()


def identity_mpo(sites: int, phys: int = 2) -> Mpo:
    eye = np.eye(phys).reshape(1, phys, phys, 1)
    return Mpo(tuple(eye for _ in range(sites)))


def random_mpo(
    rng: np.random.Generator,
    sites: int,
    bond: int,
    in_dims: Sequence[int] | None = None,
    out_dims: Sequence[int] | None = None,
) -> Mpo:
    """Gaussian MPO with bonds ``min(bond, max_bond_bound)``."""
    ins = list(in_dims) if in_dims is not None else [2] * sites
    outs = list(out_dims) if out_dims is not None else [2] * sites
    local = [p * q for p, q in zip(ins, outs)]
    bonds = [1] + [
        min(bond, math.prod(local[: k + 1]), math.prod(local[k + 1 :])) for k in range(sites - 1)
    ] + [1]
    return Mpo(
        tuple(
            rng.standard_normal((bonds[k], ins[k], outs[k], bonds[k + 1])) for k in range(sites)
        )
    )


def _left_orthonormalize(site: np.ndarray, nxt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    l, p, q, r = site.shape
    qm, rm = qr(site.reshape(l * p * q, r))
    k = qm.shape[1]
    return qm.reshape(l, p, q, k), np.tensordot(rm, nxt, axes=(1, 0))


def _right_orthonormalize(site: np.ndarray, prev: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    l, p, q, r = site.shape
    qm, rm = qr(site.reshape(l, p * q * r).T)
    k = qm.shape[1]
    return qm.T.reshape(k, p, q, r), np.tensordot(prev, rm.T, axes=(3, 0))


def canonicalize(m: Mpo, center: int = 0) -> Mpo:
    """Mixed-canonical gauge around ``center``.

    Sites left of the centre become left-orthogonal, sites right of it
    right-orthogonal; the represented operator is unchanged. Bonds larger
    than the local rank shrink in the process.
    """
    n = m.n_sites
    if not 0 <= center < n:
        raise IndexError(f"center {center} outside [0, {n})")
    sites = list(m.sites)
    for k in range(center):
        sites[k], sites[k + 1] = _left_orthonormalize(sites[k], sites[k + 1])
    for k in range(n - 1, center, -1):
        sites[k], sites[k - 1] = _right_orthonormalize(sites[k], sites[k - 1])
    return Mpo(tuple(sites))


def _sweep_svd(m: Mpo, max_bond: int | None) -> tuple[Mpo, list[np.ndarray]]:
    """Left-to-right SVD sweep from right-canonical form; returns bond spectra."""
    sites = list(canonicalize(m, 0).sites)
    spectra = []
    for k in range(len(sites) - 1):
        l, p, q, r = sites[k].shape
        res = svd(sites[k].reshape(l * p * q, r))
        spectra.append(res.s.copy())
        keep = res.s.size if max_bond is None else min(max_bond, res.s.size)
        sites[k] = res.u[:, :keep].reshape(l, p, q, keep)
        carry = res.s[:keep, None] * res.vt[:keep]
        sites[k + 1] = np.tensordot(carry, sites[k + 1], axes=(1, 0))
    return Mpo(tuple(sites)), spectra


def truncate(m: Mpo, max_bond: int) -> Mpo:
    """Cap every bond at ``max_bond`` keeping the dominant Schmidt values.

    A single left-to-right sweep starting from right-canonical form; kept
    singular values are not renormalised.
    """
    if max_bond < 1:
        raise ParameterError("max_bond must be >= 1")
    out, _ = _sweep_svd(m, max_bond)
    return out


def bond_spectra(m: Mpo) -> list[np.ndarray]:
    """Schmidt values across every bond of ``m`` viewed as a vector."""
    _, spectra = _sweep_svd(m, None)
    return spectra


def entropy_of_spectrum(s: np.ndarray, rtol: float = SVD_RTOL) -> float:
    """``-sum p log p`` with ``p = s^2 / sum(s^2)``; tiny values count as zero."""
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0 or s.max() <= 0.0:
        return 0.0
    s = s[s > rtol * s.max()]
    p = s**2 / np.sum(s**2)
    return float(max(-np.sum(p * np.log(p)), 0.0))


def bond_entropies(m: Mpo) -> EntropyReport:
    """Per-bond, average and maximal-average bond entanglement entropy."""
    spectra = bond_spectra(m)
    per_bond = [entropy_of_spectrum(s) for s in spectra]
    dims = m.bond_dims
    if not per_bond:
        return EntropyReport([], 0.0, 0.0, [])
    return EntropyReport(
        per_bond=per_bond,
        average=float(np.mean(per_bond)),
        maximum=float(np.mean(np.log(dims))),
        spectra=spectra,
    )


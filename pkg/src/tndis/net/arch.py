"""Architecture descriptions and the preset models.

An architecture is a list of JSON-able layer dicts::

    {"kind": "reshape", "shape": [2, 2, 2, 2, 2, 2]}
    {"kind": "mpo", "in_dims": [...], "out_dims": [...], "bonds": [...]}
    {"kind": "dense", "n_in": 64, "n_out": 10, "bias": true}
    {"kind": "batchnorm", "n": 64}            # optional "affine": false
    {"kind": "relu", "n": 64}
    {"kind": "circuit", "n": 64, "spec": "CNOTs + 2b"}

Circuit layers act on the trailing power-of-two factor of their width; the
odd leading factor (3 colour channels for CIFAR-10) is left alone.

Circuit positions wrap MPO layers: ``{"mpo1": "CNOTs ; CNOTs + 2b"}`` puts
the left spec before ``mpo1`` and the right spec after it. Long circuits are
cut into blocks of ``norm_every`` layers with a parameter-free batch norm
and a ReLU between consecutive blocks.
"""

from __future__ import annotations

import copy
import math

import numpy as np

from ..circuit import Circuit, CircuitSpec, build_circuit, parse_position, split_spectator
from ..errors import ParameterError
from ..mpo import Mpo, truncate
from .layers import BatchNorm, CircuitLayer, Dense, Layer, MpoLayer, ReLU, Reshape
from .model import Model

NORM_EVERY = 4


def build_layer(cfg: dict, rng: np.random.Generator, scale: float = 0.1) -> Layer:
    kind = cfg.get("kind")
    name = cfg.get("name", "")
    if kind == "reshape":
        return Reshape(tuple(cfg["shape"]), name)
    if kind == "mpo":
        if "shapes" in cfg:
            sites = tuple(np.zeros(s) for s in cfg["shapes"])
            return MpoLayer(Mpo(sites), name)
        return MpoLayer.random(rng, cfg["in_dims"], cfg["out_dims"], cfg["bonds"], name)
    if kind == "dense":
        return Dense(cfg["n_in"], cfg["n_out"], cfg.get("bias", True), rng, name)
    if kind == "batchnorm":
        n = cfg.get("n", cfg.get("n_in"))
        return BatchNorm(n, cfg.get("eps", 1e-5), cfg.get("momentum", 0.1), cfg.get("affine", True), name)
    if kind == "relu":
        return ReLU(cfg.get("n", cfg.get("n_in")), name)
    if kind == "circuit":
        n = cfg.get("n", cfg.get("n_in"))
        if "circuit" in cfg:
            return CircuitLayer(Circuit.from_dict(cfg["circuit"]), n, name)
        _, wires = split_spectator(n)
        return CircuitLayer(build_circuit(cfg["spec"], wires, rng, scale), n, name)
    raise ParameterError(f"unknown layer kind {kind!r}")


def build_model(arch: list[dict], rng: np.random.Generator | None = None, scale: float = 0.1) -> Model:
    rng = np.random.default_rng(0) if rng is None else rng
    return Model([build_layer(cfg, rng, scale) for cfg in arch])


def mpo_bonds(in_dims, out_dims, chi: int) -> list[int]:
    """Bond dimensions ``min(chi, left size, right size)``."""
    n = len(in_dims)
    out = []
    for k in range(1, n):
        left = math.prod(in_dims[:k]) * math.prod(out_dims[:k])
        right = math.prod(in_dims[k:]) * math.prod(out_dims[k:])
        out.append(min(chi, left, right))
    return out


# -- presets ------------------------------------------------------------------

BITS6 = [2] * 6


def mnist1_arch() -> list[dict]:
    """8x8 MNIST: one 64->64 MPO (bond 2) and a dense classifier; 858 parameters."""
    return [
        {"kind": "reshape", "shape": BITS6},
        {"kind": "mpo", "name": "mpo1", "in_dims": BITS6, "out_dims": BITS6, "bonds": [2] * 5},
        {"kind": "reshape", "shape": [64]},
        {"kind": "batchnorm", "n": 64},
        {"kind": "relu", "n": 64},
        {"kind": "dense", "n_in": 64, "n_out": 10, "bias": True},
    ]


MNIST4_MPOS = {
    "mpo1": {"in_dims": BITS6, "out_dims": BITS6, "bonds": [2, 2, 2, 2, 2]},
    "mpo2": {"in_dims": BITS6, "out_dims": BITS6, "bonds": [2, 2, 2, 2, 1]},
    "mpo3": {"in_dims": BITS6, "out_dims": [2, 2, 2, 2, 2, 1], "bonds": [2, 2, 2, 2, 2]},
    "mpo4": {"in_dims": [2] * 5, "out_dims": [1, 1, 1, 2, 5], "bonds": [2, 2, 8, 10]},
}


def _stack(mpos: dict, widths: list[int]) -> list[dict]:
    arch = []
    names = list(mpos)
    for i, name in enumerate(names):
        arch.append({"kind": "mpo", "name": name, **copy.deepcopy(mpos[name])})
        if i < len(names) - 1:
            arch.append({"kind": "batchnorm", "n": widths[i], "name": f"bn{i + 1}"})
            arch.append({"kind": "relu", "n": widths[i], "name": f"relu{i + 1}"})
    return arch


def mnist4_arch() -> list[dict]:
    """Four-MPO 8x8 MNIST network; 1008 parameters."""
    return _stack(MNIST4_MPOS, [64, 64, 32])


def mnist4_disentangled_arch() -> list[dict]:
    """Four-MPO layout with the first three MPOs at bond 1; 854 parameters."""
    mpos = copy.deepcopy(MNIST4_MPOS)
    for name in ("mpo1", "mpo2", "mpo3"):
        mpos[name]["bonds"] = [1] * (len(mpos[name]["in_dims"]) - 1)
    return _stack(mpos, [64, 64, 32])


# circuit positions around mpo1..mpo3 ("left ; right")
MNIST_SPECS = {
    "cnots": {"mpo1": "CNOTs ; 2x CNOTs", "mpo2": "6x CNOTs ; 2x CNOTs", "mpo3": "CNOTs ; CNOTs"},
    "cnots_1b": {
        "mpo1": "CNOTs ; 2x CNOTs",
        "mpo2": "1b + CNOTs + 1b + 5x CNOTs ; CNOTs",
        "mpo3": "1b ; CNOTs",
    },
    "cnots_2b": {
        "mpo1": "CNOTs ; CNOTs + 2b",
        "mpo2": "CNOTs + 2b + CNOTs + 2b + CNOTs + 2b ; CNOTs + 2b",
        "mpo3": "CNOTs ; CNOTs",
    },
    "cnots_1b_2b": {
        "mpo1": "1b + CNOTs ; CNOTs + 2b + 1b",
        "mpo2": "1b + CNOTs + 2b + CNOTs + 2b + CNOTs + 2b ; CNOTs + 2b + 1b",
        "mpo3": "1b + CNOTs + 2b ; CNOTs + 2b + 1b",
    },
}

CIFAR_IN = [3, 4, 4, 4, 4, 4]
CIFAR_MPOS = {
    "mpo1": {"in_dims": CIFAR_IN, "out_dims": [1, 4, 4, 4, 4, 1], "chi": 24},
    "mpo2": {"in_dims": [4] * 4, "out_dims": [4] * 4, "chi": 16},
    "mpo3": {"in_dims": [4] * 4, "out_dims": [4, 4, 4, 1], "chi": 16},
    "mpo4": {"in_dims": [4] * 3, "out_dims": [1, 2, 5], "chi": 16},
}
CIFAR_DISENTANGLED_CHI = {"mpo1": 19, "mpo2": 12, "mpo3": 12, "mpo4": 16}


def cifar_arch(chis: dict | None = None) -> list[dict]:
    """Flattened CIFAR-10 network, 3072 -> 256 -> 256 -> 64 -> 10."""
    mpos = {}
    for name, d in CIFAR_MPOS.items():
        chi = (chis or {}).get(name, d["chi"])
        mpos[name] = {
            "in_dims": d["in_dims"],
            "out_dims": d["out_dims"],
            "bonds": mpo_bonds(d["in_dims"], d["out_dims"], chi),
        }
    return _stack(mpos, [256, 256, 64])


def cifar_disentangled_arch() -> list[dict]:
    return cifar_arch(CIFAR_DISENTANGLED_CHI)


# the 10 logits carry a single wire, so nothing follows mpo4
CIFAR_SPECS = {
    "cnots": {
        "mpo1": "CNOTs ; CNOTs",
        "mpo2": "3x CNOTs ; 4x CNOTs",
        "mpo3": "4x CNOTs ; 3x CNOTs",
        "mpo4": "CNOTs ; none",
    },
    "cnots_1b": {
        "mpo1": "2x CNOTs ; 2x CNOTs",
        "mpo2": "1b + CNOTs + 1b + CNOTs + 1b + CNOTs ; 8x CNOTs",
        "mpo3": "8x CNOTs ; 6x CNOTs",
        "mpo4": "2x CNOTs ; none",
    },
    "cnots_2b": {
        "mpo1": "CNOTs ; 2b",
        "mpo2": "CNOTs + 2b + CNOTs ; CNOTs + 2b + CNOTs + 2b",
        "mpo3": "CNOTs + 2b + CNOTs + 2b ; CNOTs + 2b + CNOTs",
        "mpo4": "2b + CNOTs ; none",
    },
    "cnots_1b_2b": {
        "mpo1": "2x CNOTs ; 2x CNOTs",
        "mpo2": "1b + CNOTs + 1b + 2b + CNOTs + 2b + 1b + CNOTs + 1b ; "
        "CNOTs + 1b + CNOTs + 1b + CNOTs + 2b + CNOTs + 2b + CNOTs + 1b + CNOTs + 1b",
        "mpo3": "8x CNOTs ; 6x CNOTs",
        "mpo4": "2x CNOTs ; none",
    },
}

PRESETS = {
    "mnist1": mnist1_arch,
    "mnist4": mnist4_arch,
    "mnist4_disentangled": mnist4_disentangled_arch,
    "cifar": cifar_arch,
    "cifar_disentangled": cifar_disentangled_arch,
}


# -- circuit insertion ----------------------------------------------------------


def _blocks(spec: CircuitSpec, norm_every: int | None) -> list[CircuitSpec]:
    if not spec.layers:
        return []
    if not norm_every:
        return [spec]
    return [CircuitSpec(spec.layers[i : i + norm_every]) for i in range(0, spec.depth, norm_every)]


def _circuit_block_cfgs(spec: CircuitSpec, n: int, norm_every, prefix: str) -> list[dict]:
    out = []
    blocks = _blocks(spec, norm_every)
    for j, block in enumerate(blocks):
        if j:
            out.append({"kind": "batchnorm", "n": n, "affine": False, "name": f"{prefix}_bn{j}"})
            out.append({"kind": "relu", "n": n, "name": f"{prefix}_relu{j}"})
        out.append({"kind": "circuit", "n": n, "spec": str(block), "name": f"{prefix}{j + 1}"})
    return out


def with_circuits(arch: list[dict], positions: dict, norm_every: int | None = NORM_EVERY) -> list[dict]:
    """Insert circuit layers around the named MPO layers."""
    out = []
    names = {cfg.get("name") for cfg in arch}
    for key in positions:
        if key not in names:
            raise ParameterError(f"no layer named {key!r} for a circuit position")
    for cfg in arch:
        name = cfg.get("name")
        if name in positions:
            left, right = parse_position(positions[name])
            n_in = math.prod(cfg["in_dims"])
            n_out = math.prod(cfg["out_dims"])
            out += _circuit_block_cfgs(left, n_in, norm_every, f"{name}_ql")
            out.append(copy.deepcopy(cfg))
            out += _circuit_block_cfgs(right, n_out, norm_every, f"{name}_qr")
        else:
            out.append(copy.deepcopy(cfg))
    return out


def transfer(source: Model, target: Model, truncate_to: dict | None = None) -> None:
    """Copy same-named parameters and buffers; MPOs are truncated to fit the target.

    ``truncate_to`` optionally overrides the bond per MPO name; otherwise the
    target's maximum bond is used.
    """
    for layer in target.layers:
        try:
            src = source.layer(layer.name)
        except KeyError:
            continue
        if isinstance(layer, MpoLayer) and isinstance(src, MpoLayer):
            chi = (truncate_to or {}).get(layer.name, layer.mpo().max_bond)
            m = src.mpo()
            if m.max_bond > chi:
                m = truncate(m, chi)
            if [s.shape for s in m.sites] != [p.shape for p in layer.sites()]:
                raise ParameterError(f"cannot fit {src.name} into the target layout")
            layer.set_mpo(m)
        elif type(layer) is type(src) and layer.kind != "circuit":
            for key, value in src.params.items():
                if key in layer.params and layer.params[key].shape == value.shape:
                    layer.params[key] = value.copy()
            for key, value in src.buffers().items():
                setattr(layer, key, value.copy())
        layer.zero_grad()


def disentangled_model(
    baseline: Model | None,
    positions: dict,
    arch: list[dict] | None = None,
    rng: np.random.Generator | None = None,
    norm_every: int | None = NORM_EVERY,
    scale: float = 0.1,
) -> Model:
    """Compact model with circuit positions, warm-started from ``baseline`` if given."""
    arch = mnist4_disentangled_arch() if arch is None else arch
    model = build_model(with_circuits(arch, positions, norm_every), rng, scale)
    if baseline is not None:
        transfer(baseline, model)
    return model

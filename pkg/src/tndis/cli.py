"""``tndis`` command line.

Every command prints exactly one JSON line on stdout. Files go to
``--out`` (default: the config's ``out_dir``); wall-clock information is
written only to ``<out>/<command>.log`` so that the other outputs are
byte-identical between reruns with the same seed.

Exit codes: 0 success, 2 bad input or config, 3 numerical or training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import data as tdata
from .circuit import Circuit, build_circuit, gate_count
from .config import ExperimentConfig, load_config
from .errors import NumericalError, TndisError, TrainingError
from .hybrid import hybrid_forward
from .mpo import Mpo, bond_entropies
from .net import checkpoint
from .net.arch import PRESETS, build_model, with_circuits
from .net.layers import MpoLayer
from .net.model import count_params
from .net.train import evaluate, heal, train
from .vardis import disentangle

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("tndis")


class InputError(Exception):
    """Bad command-line input; mapped to exit code 2."""


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed, "train": cfg.train.model_copy(update={"seed": args.seed})})
    return cfg


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sidecar(out: Path, command: str) -> logging.Handler:
    handler = logging.FileHandler(out / f"{command}.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("tndis")
    root.setLevel(logging.INFO)
    root.addHandler(handler)
    return handler


def _datasets(cfg: ExperimentConfig):
    d = cfg.data
    if d.dataset == "mnist":
        tr, te = tdata.mnist(d.mnist_dir, d.side)
    else:
        tr, te = tdata.cifar10(d.cifar_dir)
    if d.train_limit:
        tr = tr.subset(d.train_limit)
    if d.test_limit:
        te = te.subset(d.test_limit)
    if d.standardize:
        tr, te = tdata.standardize(tr, te)
    return tr, te


def _arch(cfg: ExperimentConfig) -> list[dict]:
    m = cfg.model
    if m.preset is not None:
        if m.preset not in PRESETS:
            raise InputError(f"unknown preset {m.preset!r}; choose from {sorted(PRESETS)}")
        arch = PRESETS[m.preset]()
    else:
        arch = m.layers
    return with_circuits(arch, m.circuits, m.norm_every) if m.circuits else arch


def _load(path):
    if path is None:
        raise InputError("--checkpoint is required")
    return checkpoint.load(path)


def _mpo_layer(model, name: str) -> MpoLayer:
    try:
        layer = model.layer(name)
    except KeyError:
        layer = None
    if not isinstance(layer, MpoLayer):
        mpos = [l.name for l in model.layers if isinstance(l, MpoLayer)]
        raise InputError(f"no MPO layer named {name!r} in checkpoint (have {mpos})")
    return layer


# -- commands -----------------------------------------------------------------


def cmd_train(args) -> dict:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    _sidecar(out, "train")
    tr, te = _datasets(cfg)
    if args.checkpoint:
        model, _ = _load(args.checkpoint)
    else:
        model = build_model(_arch(cfg), np.random.default_rng(cfg.seed), cfg.model.gate_scale)
    t0 = time.perf_counter()
    report = train(model, tr, cfg.train, te)
    log.info("trained %d epochs in %.1f s", cfg.train.epochs, time.perf_counter() - t0)
    (out / "train.csv").write_text(report.to_csv())
    test_acc = report.final_test_acc if report.epochs else model.accuracy(te.images, te.labels)
    checkpoint.save(model, out / "model", extra={"seed": cfg.seed, "config": cfg.model_dump()})
    return {"command": "train", "test_acc": test_acc, "params": count_params(model), "checkpoint": str(out / "model.json")}


def cmd_eval(args) -> dict:
    cfg = _config(args)
    model, _ = _load(args.checkpoint)
    _, te = _datasets(cfg)
    res = evaluate(model, te)
    return {"command": "eval", "accuracy": res["accuracy"], "loss": res["loss"], "params": count_params(model)}


def cmd_disentangle(args) -> dict:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    _sidecar(out, "disentangle")
    model, _ = _load(args.checkpoint)
    d = cfg.disentangle
    layer = _mpo_layer(model, d.layer)
    left, target, right, hist = disentangle(
        layer.mpo(), d.target_chi, d.left, d.right, passes=d.passes,
        rng=np.random.default_rng(cfg.seed), init=d.init, scale=d.scale, tol=d.tol,
    )
    log.info("disentangled %s in %.1f s", d.layer, sum(hist.seconds))
    (out / "left.json").write_text(left.dumps())
    (out / "right.json").write_text(right.dumps())
    (out / "mpo.json").write_text(target.dumps())
    # seconds are wall-clock; keep them out of the reproducible CSV
    lines = ["pass,overlap,s_avg"] + [f"{i},{o:.15g},{s:.15g}" for i, (o, s) in enumerate(zip(hist.overlap, hist.s_avg))]
    (out / "history.csv").write_text("\n".join(lines) + "\n")
    return {"command": "disentangle", "layer": d.layer, "overlap": hist.final_overlap,
            "initial_overlap": hist.overlap[0], "s_avg": hist.s_avg[-1], "passes": len(hist.overlap) - 1}


def cmd_entropy(args) -> dict:
    if args.mpo:
        try:
            m = Mpo.loads(Path(args.mpo).read_text())
        except (ValueError, KeyError, TypeError) as exc:
            raise InputError(f"cannot parse MPO file: {exc}") from exc
    else:
        model, _ = _load(args.checkpoint)
        m = _mpo_layer(model, args.layer).mpo()
    rep = bond_entropies(m)
    return {"command": "entropy", "bond_dims": m.bond_dims, **rep.to_dict()}


def cmd_hybrid_check(args) -> dict:
    cfg = _config(args)
    model, _ = _load(args.checkpoint)
    _, te = _datasets(cfg)
    x = te.images[: args.limit] if args.limit else te.images
    labels = te.labels[: len(x)]
    worst, agree_c, agree_h = 0.0, 0, 0
    for lo in range(0, len(x), 1024):
        chunk = x[lo : lo + 1024]
        classical = model.predict(chunk)
        simulated = hybrid_forward(model, chunk)
        worst = max(worst, float(np.max(np.abs(classical - simulated))))
        agree_c += int(np.sum(np.argmax(classical, axis=1) == labels[lo : lo + 1024]))
        agree_h += int(np.sum(np.argmax(simulated, axis=1) == labels[lo : lo + 1024]))
    return {"command": "hybrid-check", "max_abs_deviation": worst, "rows": len(x),
            "classical_acc": agree_c / len(x), "hybrid_acc": agree_h / len(x)}


def cmd_heal(args) -> dict:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    _sidecar(out, "heal")
    model, _ = _load(args.checkpoint)
    tr, te = _datasets(cfg)
    h = cfg.heal
    rep = heal(model, h.layer, h.max_bond, tr, cfg.train, te, h.in_dims, h.out_dims)
    (out / "heal.csv").write_text(rep.training.to_csv())
    checkpoint.save(model, out / "healed", extra={"seed": cfg.seed, "healed": h.layer})
    return {"command": "heal", "layer": h.layer, "max_bond": h.max_bond, "acc_before": rep.acc_before,
            "acc_replaced": rep.acc_replaced, "acc_healed": rep.acc_healed, "params": count_params(model)}


def cmd_gatecount(args) -> dict:
    if args.circuit:
        try:
            c = Circuit.loads(Path(args.circuit).read_text())
        except (ValueError, KeyError, TypeError) as exc:
            raise InputError(f"cannot parse circuit file: {exc}") from exc
    elif args.spec and args.wires:
        c = build_circuit(args.spec, args.wires, np.random.default_rng(0))
    else:
        raise InputError("give a circuit file or both --spec and --wires")
    n = gate_count(c)
    return {"command": "gatecount", "wires": c.wires, "depth": c.depth, "one_body": n.one_body,
            "two_body": n.two_body, "by_size": {str(k): v for k, v in n.n_body.items()},
            "params": c.n_params()}


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "disentangle": cmd_disentangle,
    "entropy": cmd_entropy,
    "hybrid-check": cmd_hybrid_check,
    "heal": cmd_heal,
    "gatecount": cmd_gatecount,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON file")
    common.add_argument("--checkpoint", help="checkpoint manifest (.json)")
    common.add_argument("--out", help="output directory (overrides out_dir)")
    common.add_argument("--seed", type=int, help="overrides the config seed")

    p = argparse.ArgumentParser(prog="tndis", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("train", "eval", "disentangle", "heal"):
        sub.add_parser(name, parents=[common])
    e = sub.add_parser("entropy", parents=[common])
    e.add_argument("mpo", nargs="?", help="MPO JSON file")
    e.add_argument("--layer", default="mpo1", help="MPO layer to read from --checkpoint")
    h = sub.add_parser("hybrid-check", parents=[common])
    h.add_argument("--limit", type=int, help="only the first N test rows")
    g = sub.add_parser("gatecount", parents=[common])
    g.add_argument("circuit", nargs="?", help="circuit JSON file")
    g.add_argument("--spec", help='circuit spec, e.g. "2b"')
    g.add_argument("--wires", type=int)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        _emit(COMMANDS[args.command](args))
        return EXIT_OK
    except (TrainingError, NumericalError, FloatingPointError) as exc:
        print(f"tndis: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ValidationError, json.JSONDecodeError, OSError, TndisError, ValueError, KeyError) as exc:
        print(f"tndis: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        for handler in list(logging.getLogger("tndis").handlers):
            handler.close()
            logging.getLogger("tndis").removeHandler(handler)


if __name__ == "__main__":
    sys.exit(main())

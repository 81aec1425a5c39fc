"""Command-line entry point: ``cfsense crb|optimize|sense|bench``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .crb import crb_pair
from .experiment import emit_results, plan_from_dict, plan_metadata, run_experiment, sense_config_from_dict
from .placement import AdmmConfig, PenaltyAdapt, run_admm, sample_targets
from .scene import load_scene, save_scene, with_snr
from .sensing.pipeline import sense

log = logging.getLogger("cfsense")

RESIDUAL_NAMES = ("primal_a", "primal_b", "primal_epigraph", "dual_a", "dual_b", "dual_epigraph")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _read_json(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise CliError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path} is not valid JSON: {exc}") from exc


def _scene(args):
    if args.scene is None:
        raise CliError("--scene is required")
    try:
        scene = load_scene(args.scene)
    except FileNotFoundError as exc:
        raise CliError(f"scene file not found: {args.scene}") from exc
    if getattr(args, "seed", None) is not None:
        scene = scene.replace(rng_seed=args.seed)
    return scene


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, allow_nan=False, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _finite(x):
    """JSON has no inf/nan; map them to null."""
    if isinstance(x, np.ndarray):
        x = x.tolist()
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return float(x) if np.isfinite(x) else None
    return x


def _emit(text: str, out: Path | None, name: str):
    if out is None:
        sys.stdout.write(text)
    else:
        (out / name).write_text(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_crb(args) -> int:
    scene = _scene(args)
    if args.snr is not None:
        scene = with_snr(scene, args.snr)
    targets = range(scene.num_targets) if args.target is None else [args.target]
    docs = []
    for u in targets:
        if not 0 <= u < scene.num_targets:
            raise CliError(f"target index {u} out of range (scene has {scene.num_targets})")
        pair = crb_pair(scene, u)
        docs.append({
            "target": u,
            "crb_position": pair.crb_position,
            "crb_velocity": pair.crb_velocity,
            "trace_position": pair.trace_position,
            "trace_velocity": pair.trace_velocity,
        })
    doc = docs[0] if args.target is not None else docs
    _emit(_dump(_finite(doc)), _out_dir(args), "crb.json")
    return 0


def admm_config_from_dict(doc: dict) -> AdmmConfig:
    known = {f.name for f in fields(AdmmConfig)}
    kw = {k: v for k, v in doc.items() if k in known}
    for key in ("rho", "tolerances"):
        if key in kw:
            kw[key] = tuple(float(v) for v in kw[key])
    if "penalty_adapt" in kw:
        kw["penalty_adapt"] = PenaltyAdapt(**kw["penalty_adapt"])
    return AdmmConfig(**kw)


def cmd_optimize(args) -> int:
    scene = _scene(args)
    out = _out_dir(args)
    if out is None:
        raise CliError("optimize writes files; pass --out <dir>")
    doc = _read_json(args.config)
    if args.seed is not None:
        doc = {**doc, "rng_seed": args.seed}
    config = admm_config_from_dict(doc)
    area = tuple(doc.get("area", (125.0, 225.0, 125.0, 225.0)))
    samples = sample_targets(area, int(doc.get("num_samples", 16)), seed=config.rng_seed)
    result = run_admm(scene, config, samples, auto_scale=bool(doc.get("auto_scale", True)))
    save_scene(result.z.apply(scene), out / "optimized_scene.json")
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("iteration",) + RESIDUAL_NAMES + ("objective", "rho_1", "rho_2", "rho_3"))
        for rec in result.history:
            w.writerow([rec.iteration] + [format(v, ".9g") for v in rec.residuals]
                       + [format(rec.objective, ".9g")] + [format(r, ".9g") for r in rec.rho])
    summary = {
        "converged": result.converged,
        "iterations": result.iterations,
        "initial_objective": result.initial_objective,
        "final_objective": result.final_objective,
        "improved": result.improved,
        "psi": list(result.psi),
        "antennas": [int(n) for n in result.z.antennas],
        "positions_m": result.z.positions.tolist(),
    }
    (out / "summary.json").write_text(_dump(_finite(summary)))
    return 0


def cmd_sense(args) -> int:
    scene = _scene(args)
    if args.snr is not None:
        scene = with_snr(scene, args.snr)
    config = sense_config_from_dict(_read_json(args.config))
    report = sense(scene, config=config)
    doc = {
        "estimates": [e.to_dict() for e in report.estimates],
        "diagnostics": report.diagnostics,
    }
    _emit(_dump(_finite(doc)), _out_dir(args), "sense.json")
    return 0


def cmd_bench(args) -> int:
    scene = _scene(args)
    plan = plan_from_dict(_read_json(args.config), scene, master_seed=args.seed)
    rows = run_experiment(plan)
    out = _out_dir(args) or Path(".")
    fmt = args.format or "csv"
    emit_results(rows, fmt, out / f"{Path(plan.outputs).name}.{fmt}", metadata=plan_metadata(plan))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cfsense", description="Cell-free ISAC sensing: bounds, placement, sensing.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p):
        p.add_argument("--scene", help="scene JSON file")
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed")
        p.add_argument("--out", help="output directory (default: stdout where applicable)")
        p.add_argument("--format", choices=("csv", "json"),
                       help="result format for bench (default csv); crb and sense emit JSON")
        return p

    p = common(sub.add_parser("crb", help="Cramer-Rao bounds of the scene's targets"))
    p.add_argument("--target", type=int, help="target index (default: all)")
    p.add_argument("--snr", type=float, help="set the noise level from an SNR in dB")
    p.set_defaults(func=cmd_crb)

    p = common(sub.add_parser("optimize", help="ADMM AP placement and antenna allocation"))
    p.set_defaults(func=cmd_optimize)

    p = common(sub.add_parser("sense", help="run the multi-target sensing pipeline"))
    p.add_argument("--snr", type=float, help="SNR in dB (default: the scene's noise variance)")
    p.set_defaults(func=cmd_sense)

    p = common(sub.add_parser("bench", help="Monte-Carlo benchmark of estimators"))
    p.set_defaults(func=cmd_bench)
    return parser


def _fail(exc: BaseException, code: int) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise CliError("a subcommand is required: crb, optimize, sense or bench")
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise CliError("--seed must be an unsigned 64-bit integer")
        if args.format == "csv" and args.command in ("crb", "sense"):
            raise CliError(f"{args.command} only emits JSON")
        return args.func(args)
    except CliError as exc:
        return _fail(exc, 2)
    except (OSError, ValueError, ArithmeticError, KeyError, TypeError) as exc:
        return _fail(exc, 1)


if __name__ == "__main__":
    sys.exit(main())

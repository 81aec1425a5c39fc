"""Seeded Monte-Carlo benchmark: per-trial estimation, ARMSE aggregation, CSV/JSON output."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .baselines import LatticeConfig, lattice_fuse, mle_localize
from .crb import SingularFimError, crb_pair
from .optim import AbcConfig
from .scene import Scene, with_snr
from .sensing.association import AssociationError
from .sensing.cp import CpConfig
from .sensing.pipeline import SenseConfig, estimate_target, stage_one

log = logging.getLogger(__name__)

__all__ = [
    "METHODS",
    "ExperimentPlan",
    "MetricRow",
    "TrialRecord",
    "aggregate",
    "collect_trials",
    "emit_results",
    "format_rows",
    "plan_from_dict",
    "plan_metadata",
    "run_experiment",
    "sense_config_from_dict",
    "trial_seed",
]

METHODS = ("sfo_abc", "sfo_abc_bfgs", "lattice", "mle")
SNR_REFERENCE = ("sigma_z^2 = expected per-entry echo power of the strongest target at its "
                 "nearest AP divided by 10^(SNR/10)")


@dataclass(frozen=True)
class ExperimentPlan:
    scene: Scene
    snr_grid_db: tuple = tuple(float(s) for s in range(-10, 31, 5))
    num_trials: int = 50
    methods: tuple = METHODS
    outputs: str = "results"
    master_seed: int = 2024
    sense: SenseConfig = SenseConfig()
    lattice: LatticeConfig = LatticeConfig()

    def __post_init__(self):
        object.__setattr__(self, "snr_grid_db", tuple(float(s) for s in self.snr_grid_db))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.num_trials < 1:
            raise ValueError("num_trials must be >= 1")
        if not self.snr_grid_db:
            raise ValueError("snr_grid_db must be nonempty")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ValueError(f"methods must be a nonempty subset of {METHODS}, got {sorted(unknown)}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class MetricRow:
    method: str
    snr_db: float
    armse_position_m: float
    armse_speed: float
    armse_heading: float
    crb_sqrt_position_m: float
    crb_sqrt_velocity: float
    trials_used: int


@dataclass(frozen=True)
class TrialRecord:
    method: str
    snr_db: float
    trial: int
    position_errors: np.ndarray     # per true target, after assignment (m)
    speed_errors: np.ndarray
    heading_errors: np.ndarray      # wrapped to [-pi, pi)

    @property
    def armse_position(self) -> float:
        return float(np.mean(self.position_errors))


def trial_seed(master_seed: int, trial: int) -> int:
    """Scene seed of one trial; a pure function of the master seed and trial index."""
    return int(np.random.SeedSequence([int(master_seed), int(trial)]).generate_state(1, np.uint64)[0])


def _wrap_pi(x):
    return (np.asarray(x, dtype=float) + math.pi) % (2 * math.pi) - math.pi


def _score(scene: Scene, method: str, snr: float, trial: int, estimates) -> TrialRecord:
    """Match estimates to true targets by minimum total position distance."""
    truth = np.array([t.position_m for t in scene.targets])
    est = np.array([e[0] for e in estimates], dtype=float)
    if not np.all(np.isfinite(est)):
        raise ArithmeticError("non-finite position estimate")
    dist = np.linalg.norm(truth[:, None, :] - est[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(dist)
    speed = np.array([scene.targets[r].speed_mps - estimates[c][1] for r, c in zip(rows, cols)])
    heading = np.array([_wrap_pi(scene.targets[r].heading_rad - estimates[c][2])
                        for r, c in zip(rows, cols)])
    return TrialRecord(method, snr, trial, dist[rows, cols], np.abs(speed), np.abs(heading))


def _estimates(method, first, scene: Scene, plan: ExperimentPlan):
    aps, wave, cfg = scene.ap_positions, scene.waveform, plan.sense
    out = []
    for u, fusion in enumerate(first.fusions):
        if method in ("sfo_abc", "sfo_abc_bfgs"):
            e = estimate_target(fusion, aps, wave, replace(cfg, refine=method == "sfo_abc_bfgs"), seed=u)
            out.append((e.position_m, e.speed_mps, e.heading_rad))
        elif method == "lattice":
            (x0, x1), (y0, y1) = cfg.position_bounds
            e = lattice_fuse(fusion, aps, wave, (x0, x1, y0, y1), plan.lattice, cfg.v_max,
                             cfg.detection_threshold)
            out.append((e.position_m, e.speed_mps, e.heading_rad))
        else:
            fix = mle_localize(first.association.ranges_m[:, u], aps)
            out.append((tuple(fix.position), math.nan, math.nan))
    return out


def collect_trials(plan: ExperimentPlan) -> tuple[list, dict]:
    """Every (snr, trial, method) record, plus failure counts keyed by (method, snr).

    Trial geometry is fixed; each trial index draws fresh RCS and noise, and the
    same draws are reused across the SNR grid so curves compare like with like.
    """
    records, failures = [], {}
    for snr in plan.snr_grid_db:
        for trial in range(plan.num_trials):
            scene = with_snr(plan.scene.replace(rng_seed=trial_seed(plan.master_seed, trial)), snr)
            try:
                first = stage_one(scene, config=plan.sense)
            except (AssociationError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
                log.warning("snr %g trial %d: first stage failed (%s)", snr, trial, exc)
                for m in plan.methods:
                    failures[(m, snr)] = failures.get((m, snr), 0) + 1
                continue
            for method in plan.methods:
                try:
                    records.append(_score(scene, method, snr, trial,
                                          _estimates(method, first, scene, plan)))
                except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
                    log.warning("%s snr %g trial %d failed (%s)", method, snr, trial, exc)
                    failures[(method, snr)] = failures.get((method, snr), 0) + 1
    return records, failures


def _crb_reference(scene: Scene, snr: float):
    noisy = with_snr(scene, snr)
    if noisy.waveform.noise_variance == 0.0:
        return 0.0, 0.0
    pos, vel = [], []
    for u in range(noisy.num_targets):
        try:
            pair = crb_pair(noisy, u)
            pos.append(math.sqrt(max(pair.trace_position, 0.0)))
            vel.append(math.sqrt(max(pair.trace_velocity, 0.0)))
        except SingularFimError:
            pos.append(math.inf)
            vel.append(math.inf)
    return float(np.mean(pos)), float(np.mean(vel))


def _armse(errs):
    # per-target RMSE across trials, averaged over targets
    if not errs:
        return math.nan
    e = np.array(errs, dtype=float)
    return float(np.mean(np.sqrt(np.mean(e**2, axis=0))))


def aggregate(records, plan: ExperimentPlan) -> list:
    rows = []
    for method in plan.methods:
        for snr in plan.snr_grid_db:
            mine = [r for r in records if r.method == method and r.snr_db == snr]
            crb_p, crb_v = _crb_reference(plan.scene, snr)
            rows.append(MetricRow(
                method=method,
                snr_db=snr,
                armse_position_m=_armse([r.position_errors for r in mine]),
                armse_speed=_armse([r.speed_errors for r in mine]),
                armse_heading=_armse([r.heading_errors for r in mine]),
                crb_sqrt_position_m=crb_p,
                crb_sqrt_velocity=crb_v,
                trials_used=len(mine),
            ))
    return rows


def run_experiment(plan: ExperimentPlan) -> list:
    records, _ = collect_trials(plan)
    return aggregate(records, plan)


# ---------------------------------------------------------------------------
# output


COLUMNS = tuple(f.name for f in fields(MetricRow))


def _fmt(x):
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".9g")


def _json_value(x):
    if isinstance(x, str) or isinstance(x, (int, np.integer)):
        return x
    x = float(x)
    return float(format(x, ".9g")) if math.isfinite(x) else None


def format_rows(rows, fmt: str = "csv", metadata: dict | None = None) -> str:
    rows = list(rows)
    if not rows:
        raise ValueError("no result rows to emit")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in rows:
            writer.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
        return buf.getvalue()
    if fmt == "json":
        doc = {"metadata": metadata or {},
               "rows": [{c: _json_value(getattr(r, c)) for c in COLUMNS} for r in rows]}
        return json.dumps(doc, indent=2) + "\n"
    raise ValueError(f"unknown format {fmt!r}; use csv or json")


def emit_results(rows, fmt: str, path, metadata: dict | None = None) -> Path:
    text = format_rows(rows, fmt, metadata)
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


# ---------------------------------------------------------------------------
# configuration documents


def sense_config_from_dict(doc: dict | None) -> SenseConfig:
    doc = dict(doc or {})
    if "abc" in doc:
        doc["abc"] = AbcConfig(**doc["abc"])
    if "cp" in doc:
        doc["cp"] = CpConfig(**doc["cp"])
    if "region" in doc:
        doc["region"] = tuple(float(v) for v in doc["region"])
    return SenseConfig(**doc)


def plan_from_dict(doc: dict, scene: Scene, master_seed: int | None = None) -> ExperimentPlan:
    doc = dict(doc)
    lattice = doc.pop("lattice", None)
    kw = {k: doc[k] for k in ("snr_grid_db", "num_trials", "methods", "outputs", "master_seed")
          if k in doc}
    if master_seed is not None:
        kw["master_seed"] = int(master_seed)
    return ExperimentPlan(scene=scene, sense=sense_config_from_dict(doc.get("sense")),
                          lattice=LatticeConfig(**(lattice or {})), **kw)


def plan_metadata(plan: ExperimentPlan) -> dict:
    return {
        "master_seed": int(plan.master_seed),
        "num_trials": plan.num_trials,
        "snr_reference": SNR_REFERENCE,
        "methods": list(plan.methods),
        "lattice": asdict(plan.lattice),
    }

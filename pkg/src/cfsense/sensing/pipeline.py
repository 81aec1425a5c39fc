"""End-to-end multi-target sensing: decompose, associate, fuse, then solve P3 and P4."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..optim import AbcConfig, abc_optimize, bfgs_refine
from ..scene import EchoTensor, Scene, synthesize_echo
from .association import AssociationOutcome, associate
from .cp import CpConfig, cp_decompose
from .fusion import (
    FusionSet, build_fusion, localization_objective, localization_trace, velocity_objective,
)

log = logging.getLogger(__name__)

__all__ = [
    "SenseConfig",
    "SenseReport",
    "TargetEstimate",
    "estimate_target",
    "StageOne",
    "failed_estimate",
    "sense",
    "sl_mdts",
    "stage_one",
]


@dataclass(frozen=True)
class SenseConfig:
    region: tuple = (125.0, 225.0, 125.0, 225.0)   # (xmin, xmax, ymin, ymax) of the target area
    margin_m: float = 20.0
    v_max: float = 200.0
    n_ifft_factor: int = 4
    music_step_m: float = 0.01
    association_max_targets: int = 5
    detection_threshold: float = 0.7
    abc: AbcConfig = AbcConfig()
    cp: CpConfig = CpConfig()
    refine: bool = True
    seed: int = 0

    @property
    def position_bounds(self):
        x0, x1, y0, y1 = self.region
        m = self.margin_m
        return [(x0 - m, x1 + m), (y0 - m, y1 + m)]

    @property
    def velocity_bounds(self):
        return [(0.0, self.v_max), (0.0, 2 * math.pi)]


@dataclass(frozen=True)
class TargetEstimate:
    position_m: tuple
    speed_mps: float
    heading_rad: float
    objective_values: tuple          # (P3, P4) costs at the returned optimum
    detection_score: float = 1.0     # fused localization trace over its noiseless maximum
    detected: bool = True
    flagged: bool = False
    coarse_position_m: tuple = ()    # global-search result before local refinement
    coarse_speed_mps: float = math.nan
    coarse_heading_rad: float = math.nan

    def to_dict(self) -> dict:
        return {
            "position_m": list(self.position_m),
            "speed_mps": self.speed_mps,
            "heading_rad": self.heading_rad,
            "objective_values": list(self.objective_values),
            "detection_score": self.detection_score,
            "detected": self.detected,
            "flagged": self.flagged,
            "coarse_position_m": list(self.coarse_position_m),
            "coarse_speed_mps": self.coarse_speed_mps,
            "coarse_heading_rad": self.coarse_heading_rad,
        }


@dataclass(frozen=True, eq=False)
class SenseReport:
    estimates: list
    factors: tuple
    association: AssociationOutcome
    fusions: tuple
    diagnostics: dict = field(default_factory=dict)


def _wrap(theta):
    return float(np.mod(theta, 2 * math.pi))


def estimate_target(fusion: FusionSet, ap_xy, wave, config: SenseConfig, seed: int) -> TargetEstimate:
    """ABC then (optionally) BFGS on P3, then the same on P4 at the located point."""
    ap_xy = np.asarray(ap_xy, dtype=float)
    seq = np.random.SeedSequence([config.seed, seed])
    s_loc, s_vel = (int(s.generate_state(1)[0]) for s in seq.spawn(2))
    abc = lambda seed_: AbcConfig(config.abc.popsize, config.abc.epoch_limit,
                                  config.abc.max_iters, seed_)

    p3 = lambda x: localization_objective(x, fusion, ap_xy, wave)
    pos_bounds = config.position_bounds
    coarse_pos, f3 = abc_optimize(p3, pos_bounds, abc(s_loc))
    pos, f3_ref = (bfgs_refine(p3, coarse_pos, pos_bounds) if config.refine
                   else (coarse_pos, f3))

    vel_bounds = config.velocity_bounds
    p4 = lambda x: velocity_objective(x, fusion, pos, ap_xy, wave)
    coarse_vel, f4 = abc_optimize(p4, vel_bounds, abc(s_vel))
    vel, f4_ref = (bfgs_refine(p4, coarse_vel, vel_bounds) if config.refine
                   else (coarse_vel, f4))

    score = float(localization_trace(pos[None, :], fusion, ap_xy, wave)[0]) / fusion.peak_trace
    flagged = not (math.isfinite(f3_ref) and math.isfinite(f4_ref))
    return TargetEstimate(
        position_m=(float(pos[0]), float(pos[1])),
        speed_mps=float(vel[0]),
        heading_rad=_wrap(vel[1]),
        objective_values=(float(f3_ref), float(f4_ref)),
        detection_score=score,
        detected=score > config.detection_threshold,
        flagged=flagged,
        coarse_position_m=(float(coarse_pos[0]), float(coarse_pos[1])),
        coarse_speed_mps=float(coarse_vel[0]),
        coarse_heading_rad=_wrap(coarse_vel[1]),
    )


@dataclass(frozen=True, eq=False)
class StageOne:
    """Products shared by every fusion-based estimator: factors, association, fusion sets."""
    factors: tuple
    association: AssociationOutcome
    fusions: tuple


def stage_one(scene: Scene, tensors=None, config: SenseConfig = SenseConfig(),
              num_targets: int | None = None) -> StageOne:
    """Per-AP CP decomposition, cross-AP association and per-target fusion matrices.

    ``tensors`` defaults to freshly synthesized (possibly noisy) echoes of ``scene``;
    ``num_targets`` defaults to the scene's target count.
    """
    L = scene.num_aps
    if L < 2:
        raise ValueError("cooperative sensing needs at least two APs")
    if tensors is None:
        tensors = [synthesize_echo(scene, l) for l in range(L)]
    tensors = list(tensors)
    if len(tensors) != L:
        raise ValueError("need one echo tensor per AP")
    U = scene.num_targets if num_targets is None else int(num_targets)
    wave = scene.waveform

    factors = []
    for l, y in enumerate(tensors):
        data = y.data if isinstance(y, EchoTensor) else np.asarray(y)
        cp_cfg = replace(config.cp, seed=config.cp.seed + 7919 * l)
        factors.append(cp_decompose(data, U, cp_cfg))
    outcome = associate(factors, scene.ap_positions, wave, max_targets=config.association_max_targets,
                        n_ifft=config.n_ifft_factor * wave.num_subcarriers,
                        grid_step_m=config.music_step_m)
    fusions = tuple(
        build_fusion([f.u_mat[:, u] for f in outcome.factors], [f.v_mat[:, u] for f in outcome.factors],
                     [f.w_mat[:, u] for f in outcome.factors])
        for u in range(U))
    return StageOne(tuple(factors), outcome, fusions)


def failed_estimate() -> TargetEstimate:
    return TargetEstimate((math.nan, math.nan), math.nan, math.nan, (math.inf, math.inf),
                          0.0, False, True)


def sense(scene: Scene, tensors=None, config: SenseConfig = SenseConfig(),
          num_targets: int | None = None) -> SenseReport:
    """Run the whole chain and keep the intermediate products for diagnostics."""
    first = stage_one(scene, tensors, config, num_targets)
    estimates = []
    for u, fusion in enumerate(first.fusions):
        try:
            est = estimate_target(fusion, scene.ap_positions, scene.waveform, config, seed=u)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("target %d: solver failure (%s)", u, exc)
            est = failed_estimate()
        estimates.append(est)

    diagnostics = {
        "fit_residuals": [f.fit_residual for f in first.factors],
        "cp_converged": [f.converged for f in first.factors],
        "association_cost": first.association.association_cost,
        "ranges_m": first.association.ranges_m.tolist(),
        "weights": [fu.weights.tolist() for fu in first.fusions],
        "objective_values": [list(e.objective_values) for e in estimates],
    }
    return SenseReport(estimates, first.factors, first.association, first.fusions, diagnostics)


def sl_mdts(scene: Scene, tensors=None, config: SenseConfig = SenseConfig()) -> list:
    """Target estimates ordered by the association reference (AP 1's components)."""
    return sense(scene, tensors, config).estimates

"""Reference estimators for benchmarking: range-only MLE and lattice symbol-level fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import multilaterate
from .scene import WaveformConfig
from .sensing.fusion import FusionSet, localization_trace, velocity_trace
from .sensing.pipeline import TargetEstimate

__all__ = ["LatticeConfig", "MleFix", "lattice_fuse", "mle_localize"]


@dataclass(frozen=True)
class MleFix:
    position: np.ndarray
    residual: float
    converged: bool

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.position, dtype=dtype)


def mle_localize(ranges_m, aps, max_iter: int = 100) -> MleFix:
    """Least-squares circular localization from per-AP ranges, Gauss-Newton from the centroid."""
    anchors = np.asarray(aps, dtype=float)
    ranges = np.asarray(ranges_m, dtype=float)
    if anchors.ndim != 2 or anchors.shape[1] != 2 or len(anchors) != len(ranges):
        raise ValueError("need one range per 2-D anchor")
    if len(anchors) < 3:
        raise ValueError("a unique planar fix needs at least three anchors")
    fix = multilaterate(anchors, ranges, max_iter=max_iter)
    return MleFix(fix.position, fix.residual, fix.converged)


@dataclass(frozen=True)
class LatticeConfig:
    grid_step_m: float = 1.0
    velocity_step: float = 1.0
    heading_step_rad: float = math.radians(1.0)

    def __post_init__(self):
        if not (self.grid_step_m > 0 and self.velocity_step > 0 and self.heading_step_rad > 0):
            raise ValueError("lattice steps must be positive")


def _axis(lo, hi, step):
    return lo + step * np.arange(int(math.floor((hi - lo) / step + 1e-9)) + 1)


def lattice_fuse(fusion: FusionSet, aps, wave: WaveformConfig, region,
                 lattice: LatticeConfig = LatticeConfig(), v_max: float = 200.0,
                 detection_threshold: float = 0.7) -> TargetEstimate:
    """Exhaustive grid search of the fused location trace, then of the Doppler trace.

    ``region`` is (xmin, xmax, ymin, ymax); nodes start at the lower corner. The
    velocity grid covers [0, v_max] x [0, 2 pi).
    """
    x0, x1, y0, y1 = (float(v) for v in region)
    if not all(math.isfinite(v) for v in (x0, x1, y0, y1)) or x1 < x0 or y1 < y0:
        raise ValueError("region must be a finite rectangle")
    ap_xy = np.asarray(aps, dtype=float)
    xs, ys = _axis(x0, x1, lattice.grid_step_m), _axis(y0, y1, lattice.grid_step_m)
    nodes = np.stack(np.meshgrid(xs, ys, indexing="ij"), -1).reshape(-1, 2)
    loc = localization_trace(nodes, fusion, ap_xy, wave)
    k = int(np.argmax(loc))
    pos = nodes[k]

    vs = _axis(0.0, v_max, lattice.velocity_step)
    ths = lattice.heading_step_rad * np.arange(int(math.ceil(2 * math.pi / lattice.heading_step_rad - 1e-9)))
    vel_nodes = np.stack(np.meshgrid(vs, ths, indexing="ij"), -1).reshape(-1, 2)
    vel = velocity_trace(vel_nodes, fusion, pos, ap_xy, wave)
    j = int(np.argmax(vel))
    score = float(loc[k]) / fusion.peak_trace
    return TargetEstimate(
        position_m=(float(pos[0]), float(pos[1])),
        speed_mps=float(vel_nodes[j, 0]),
        heading_rad=float(vel_nodes[j, 1]),
        objective_values=(1.0 / max(float(loc[k]), 1e-300), 1.0 / max(float(vel[j]), 1e-300)),
        detection_score=score,
        detected=score > detection_threshold,
    )

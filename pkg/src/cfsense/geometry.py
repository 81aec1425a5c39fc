"""Planar range-only multilateration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Fix", "linear_fix", "multilaterate"]


@dataclass(frozen=True)
class Fix:
    position: np.ndarray
    residual: float          # sum of squared range residuals (m^2)
    iterations: int
    converged: bool


def _residuals(p, anchors, ranges):
    return np.linalg.norm(anchors - p, axis=1) - ranges


def linear_fix(anchors, ranges) -> np.ndarray:
    """Closed-form least-squares fix from differenced circle equations (needs 3+ anchors)."""
    anchors = np.asarray(anchors, dtype=float)
    ranges = np.asarray(ranges, dtype=float)
    ref, r0 = anchors[0], ranges[0]
    A = 2.0 * (anchors[1:] - ref)
    b = (r0**2 - ranges[1:] ** 2) + np.sum(anchors[1:] ** 2, axis=1) - ref @ ref
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    return sol


def multilaterate(anchors, ranges, start=None, max_iter: int = 100, tol: float = 1e-12) -> Fix:
    """Gauss-Newton minimization of sum_l (|p - c_l| - R_l)^2.

    Starts from ``start`` (default: the anchor centroid). Steps that do not reduce
    the cost are halved; the best iterate seen is returned, flagged unconverged if
    the iteration cap is hit first.
    """
    anchors = np.asarray(anchors, dtype=float)
    ranges = np.asarray(ranges, dtype=float)
    p = anchors.mean(axis=0) if start is None else np.array(start, dtype=float)
    r = _residuals(p, anchors, ranges)
    cost = float(r @ r)
    for it in range(1, max_iter + 1):
        diff = p - anchors
        dist = np.linalg.norm(diff, axis=1)
        dist = np.where(dist > 0, dist, 1e-12)
        J = diff / dist[:, None]
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        t = 1.0
        while t > 1e-10:
            trial = p + t * step
            r_new = _residuals(trial, anchors, ranges)
            c_new = float(r_new @ r_new)
            if c_new <= cost:
                break
            t *= 0.5
        else:
            return Fix(p, cost, it, True)
        moved = np.linalg.norm(trial - p)
        p, r, gained, cost = trial, r_new, cost - c_new, c_new
        if moved <= tol * (1.0 + np.linalg.norm(p)) or gained <= tol * max(cost, 1e-300):
            return Fix(p, cost, it, True)
    return Fix(p, cost, max_iter, False)

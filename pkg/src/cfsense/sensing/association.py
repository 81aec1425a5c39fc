"""Cross-AP data association of decomposed components by multilateration consistency."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ..geometry import linear_fix, multilaterate
from ..scene import WaveformConfig
from .cp import CpFactors
from .ranging import coarse_range, music_refine

__all__ = ["AssociationError", "AssociationOutcome", "associate", "component_ranges"]


class AssociationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class AssociationOutcome:
    permutations: tuple          # per AP, perm[u] = decomposed column assigned to target u
    ranges_m: np.ndarray         # (L, U) ranges in target order
    association_cost: float
    factors: tuple               # per AP CpFactors reordered into target order
    raw_ranges_m: np.ndarray     # (L, U) ranges in decomposition order


def component_ranges(factors: CpFactors, wave: WaveformConfig, n_ifft: int | None = None,
                     grid_step_m: float = 0.01) -> np.ndarray:
    """MUSIC range of every delay column of one AP's decomposition."""
    out = []
    for col in factors.v_mat.T:
        _, interval = coarse_range(col, wave, n_ifft)
        out.append(music_refine(col, wave, interval, grid_step_m))
    return np.array(out)


def _fix_cost(anchors, ranges):
    start = linear_fix(anchors, ranges) if len(anchors) >= 3 else None
    return multilaterate(anchors, ranges, start=start).residual


def associate(factors, ap_positions, wave: WaveformConfig, *, max_targets: int = 5,
              max_tuples: int = 2_000_000, n_ifft: int | None = None,
              grid_step_m: float = 0.01) -> AssociationOutcome:
    """Exhaustive association of each AP's components to AP 1's ordering.

    Every tuple of permutations for APs 2..L is scored by the sum over targets of
    the least-squares multilateration residual (squared range misfit) of the
    ranges it groups together; the cheapest tuple wins.
    """
    factors = list(factors)
    anchors = np.asarray(ap_positions, dtype=float)
    L = len(factors)
    if L != len(anchors) or L < 2:
        raise AssociationError("need one decomposition per AP and at least two APs")
    U = factors[0].rank
    if any(f.rank != U for f in factors):
        raise AssociationError("decompositions disagree on the number of targets")
    tuples = math.factorial(U) ** (L - 1)
    if U > max_targets or tuples > max_tuples:
        raise AssociationError(
            f"exhaustive association over {tuples} permutation tuples exceeds the budget; "
            "lower the number of targets or supply reference ranges")

    raw = np.array([component_ranges(f, wave, n_ifft, grid_step_m) for f in factors])

    # residual table: table[xi, j2, ..., jL] for AP 1 column xi grouped with columns j2..jL
    table = np.empty((U,) * L)
    for idx in itertools.product(range(U), repeat=L):
        table[idx] = _fix_cost(anchors, raw[np.arange(L), list(idx)])

    perms = np.array(list(itertools.permutations(range(U))))
    xi = np.arange(U)
    best_cost, best_tuple = math.inf, None
    # loop over the leading APs, vectorize over the last one
    for head in itertools.product(range(len(perms)), repeat=L - 2):
        lead = tuple(perms[h] for h in head)
        sub = table[(xi,) + lead]                       # (U, U) over the last AP's column
        costs = sub[xi[None, :], perms].sum(axis=1)     # (n_perms,)
        k = int(np.argmin(costs))
        if costs[k] < best_cost:
            best_cost, best_tuple = float(costs[k]), lead + (perms[k],)

    permutations = (np.arange(U),) + tuple(np.asarray(p) for p in best_tuple)
    ranges = np.array([raw[l, permutations[l]] for l in range(L)])
    reordered = tuple(f.permuted(p) for f, p in zip(factors, permutations))
    return AssociationOutcome(permutations, ranges, best_cost, reordered, raw)

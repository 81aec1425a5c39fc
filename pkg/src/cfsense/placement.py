"""Joint AP placement and antenna allocation by ADMM.

The minimax problem over sampled targets is split into a ball projection for
each AP displacement, a budgeted antenna QP, an epigraph update and a smooth
z-step solved by truncated Newton. The decision vector stacks AP positions and
(relaxed) antenna counts as ``[x1, y1, ..., xL, yL, N1, ..., NL]``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .crb import SingularFimError, batch_traces
from .optim import truncated_newton
from .scene import ApNode, Scene, TargetState, WaveformConfig

log = logging.getLogger(__name__)

RESIDUAL_GUARD = 1e-12

__all__ = [
    "AdmmConfig",
    "AdmmProblem",
    "AdmmResult",
    "AdmmState",
    "ConfigError",
    "DecisionVector",
    "IterationRecord",
    "PenaltyAdapt",
    "auto_psi",
    "capped_box_projection",
    "initial_state",
    "random_feasible",
    "residuals",
    "round_antennas",
    "run_admm",
    "sample_targets",
    "swap_search",
    "update_antenna_qp",
    "update_ball_projection",
    "update_epigraph",
    "update_multipliers",
    "update_z_truncated_newton",
]


class ConfigError(ValueError):
    """Optimizer configuration that admits no feasible point."""


# ---------------------------------------------------------------------------
# decision vector


@dataclass(frozen=True, eq=False)
class DecisionVector:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size == 0 or v.size % 3:
            raise ValueError("decision vector length must be a positive multiple of 3")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_parts(cls, positions, antennas) -> "DecisionVector":
        return cls(np.concatenate([np.ravel(positions), np.ravel(antennas)]))

    @classmethod
    def from_scene(cls, scene: Scene) -> "DecisionVector":
        return cls.from_parts(scene.ap_positions, scene.antennas)

    @property
    def num_aps(self) -> int:
        return self.values.size // 3

    @property
    def positions(self) -> np.ndarray:
        return self.values[: 2 * self.num_aps].reshape(-1, 2)

    @property
    def antennas(self) -> np.ndarray:
        return self.values[2 * self.num_aps:]

    def position(self, l: int) -> np.ndarray:
        return position_selector(l, self.num_aps) @ self.values

    def antenna(self, l: int) -> float:
        return float(antenna_selector(l, self.num_aps) @ self.values)

    def __array__(self, dtype=None, copy=None):
        return self.values.astype(dtype) if dtype is not None else self.values.copy()

    def __eq__(self, other):
        return isinstance(other, DecisionVector) and np.array_equal(self.values, other.values)

    __hash__ = None

    def apply(self, scene: Scene) -> Scene:
        """Scene with AP positions and (integer) antenna counts taken from this vector."""
        counts = np.rint(self.antennas).astype(int)
        aps = tuple(ApNode(tuple(float(c) for c in p), int(n))
                    for p, n in zip(self.positions, counts))
        return scene.replace(aps=aps)


def position_selector(l: int, num_aps: int) -> np.ndarray:
    """The 2 x 3L matrix picking AP ``l``'s coordinates out of z."""
    sel = np.zeros((2, 3 * num_aps))
    sel[0, 2 * l] = sel[1, 2 * l + 1] = 1.0
    return sel


def antenna_selector(l: int, num_aps: int) -> np.ndarray:
    """The length-3L row picking AP ``l``'s antenna count out of z."""
    sel = np.zeros(3 * num_aps)
    sel[2 * num_aps + l] = 1.0
    return sel


# ---------------------------------------------------------------------------
# configuration and problem


@dataclass(frozen=True)
class PenaltyAdapt:
    mu: float = 10.0
    tau_inc: float = 2.0
    tau_dec: float = 2.0
    enabled: bool = True


@dataclass(frozen=True)
class AdmmConfig:
    rho: tuple = (1e-2, 1e-2, 60.0)
    tolerances: tuple = (1e-4, 1e-4, 1e-4)
    max_iters: int = 500
    ball_radius_m: float = 10.0
    antenna_budget: int = 32
    alpha: float = 0.5
    psi_p: float = 1.0
    psi_a: float = 1.0
    penalty_adapt: PenaltyAdapt = PenaltyAdapt()
    rng_seed: int = 2024
    newton_iters: int = 20
    exact_epigraph: bool = True

    def __post_init__(self):
        if len(self.rho) != 3 or min(self.rho) <= 0:
            raise ConfigError("rho needs three positive penalties")
        if len(self.tolerances) != 3 or min(self.tolerances) <= 0:
            raise ConfigError("tolerances need three positive values")
        if self.max_iters < 1 or self.ball_radius_m <= 0 or self.antenna_budget < 1:
            raise ConfigError("max_iters, ball_radius_m and antenna_budget must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.psi_p <= 0 or self.psi_a <= 0:
            raise ConfigError("psi weights must be positive")


@dataclass(frozen=True)
class AdmmProblem:
    """Everything the objective needs besides z: anchors, waveform and target samples."""

    anchors: np.ndarray
    wave: WaveformConfig
    targets: tuple
    alpha: float = 0.5
    psi_p: float = 1.0
    psi_a: float = 1.0

    def __post_init__(self):
        anchors = np.array(self.anchors, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "anchors", anchors)
        if not self.targets:
            raise ConfigError("at least one target sample is required")
        tp = np.array([t.position_m for t in self.targets], dtype=float)
        object.__setattr__(self, "_arrays", (
            tp,
            np.array([t.speed_mps for t in self.targets], dtype=float),
            np.array([t.heading_rad for t in self.targets], dtype=float),
            np.array([t.rcs_variance for t in self.targets], dtype=float),
        ))

    @classmethod
    def build(cls, scene: Scene, config: AdmmConfig, samples: Sequence[TargetState]):
        return cls(scene.ap_positions, scene.waveform, tuple(samples),
                   config.alpha, config.psi_p, config.psi_a)

    @property
    def num_aps(self) -> int:
        return len(self.anchors)

    def traces(self, z) -> tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        L = self.num_aps
        return batch_traces(z[: 2 * L].reshape(L, 2), z[2 * L:], *self._arrays, self.wave)

    def objective(self, z) -> np.ndarray:
        """Per-sample weighted bound; raises when any FIM is singular."""
        z = np.asarray(z, dtype=float)
        if np.any(z[2 * self.num_aps:] <= 0):
            raise SingularFimError("nonpositive antenna count", math.inf)
        tr_p, tr_a = self.traces(z)
        out = self.alpha * self.psi_p * tr_p + (1.0 - self.alpha) * self.psi_a * tr_a
        if not np.all(np.isfinite(out)):
            raise SingularFimError("bound undefined at this layout", math.inf)
        return out

    def worst(self, z) -> float:
        try:
            return float(np.max(self.objective(z)))
        except SingularFimError:
            return math.inf


def auto_psi(problem: AdmmProblem, z) -> AdmmProblem:
    """Set psi_p and psi_a to the reciprocal mean traces at ``z`` so both terms start near 1."""
    tr_p, tr_a = problem.traces(z)
    if not (np.all(np.isfinite(tr_p)) and np.all(np.isfinite(tr_a))):
        raise SingularFimError("cannot normalize at a singular layout", math.inf)
    return replace(problem, psi_p=1.0 / float(np.mean(tr_p)), psi_a=1.0 / float(np.mean(tr_a)))


def sample_targets(area, count: int = 16, seed: int = 2024, *,
                   speed_range=(90.0, 120.0), heading_range=(0.0, math.pi),
                   extra: Sequence[TargetState] = ()) -> list[TargetState]:
    """Seeded uniform target samples over ``area = (xmin, xmax, ymin, ymax)``."""
    x0, x1, y0, y1 = area
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        pos = (float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)))
        out.append(TargetState(pos, float(rng.uniform(*speed_range)),
                               float(rng.uniform(*heading_range))))
    return out + list(extra)


# ---------------------------------------------------------------------------
# state


@dataclass
class IterationRecord:
    iteration: int
    residuals: tuple
    objective: float
    rho: tuple


@dataclass
class AdmmState:
    z: np.ndarray
    a: np.ndarray          # (L, 2) displacement from the anchor
    b: np.ndarray          # (L,) relaxed antenna counts
    varpi: np.ndarray      # (U,) epigraph copies of the objective
    mho: float
    lam: np.ndarray        # (L, 2)
    chi: np.ndarray        # (L,)
    gamma: np.ndarray      # (U,)
    rho: np.ndarray        # (3,)
    anchors: np.ndarray
    prev: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    @property
    def num_aps(self) -> int:
        return len(self.anchors)

    def positions(self, z=None) -> np.ndarray:
        z = self.z if z is None else z
        return z[: 2 * self.num_aps].reshape(-1, 2)

    def counts(self, z=None) -> np.ndarray:
        z = self.z if z is None else z
        return z[2 * self.num_aps:]

    def remember(self):
        self.prev = {"a": self.a.copy(), "b": self.b.copy(), "varpi": self.varpi.copy()}


def initial_state(problem: AdmmProblem, config: AdmmConfig, z0=None) -> AdmmState:
    """Anchors with an equal antenna split, consistent splitting variables, zero multipliers."""
    L = problem.num_aps
    if z0 is None:
        z0 = np.concatenate([problem.anchors.ravel(), np.full(L, config.antenna_budget / L)])
    z0 = np.array(z0, dtype=float)
    obj = problem.objective(z0)
    U = len(obj)
    state = AdmmState(
        z=z0,
        a=z0[: 2 * L].reshape(L, 2) - problem.anchors,
        b=z0[2 * L:].copy(),
        varpi=obj.copy(),
        mho=float(obj.max()),
        lam=np.zeros((L, 2)),
        chi=np.zeros(L),
        gamma=np.zeros(U),
        rho=np.array(config.rho, dtype=float),
        anchors=problem.anchors,
    )
    state.remember()
    return state


# ---------------------------------------------------------------------------
# subproblems


def update_ball_projection(state: AdmmState, config: AdmmConfig) -> np.ndarray:
    """a_l = nearest point of the radius-eps ball to C_l z - c_l - lambda_l / rho_1."""
    target = state.positions() - state.anchors - state.lam / state.rho[0]
    norms = np.linalg.norm(target, axis=1)
    eps = config.ball_radius_m
    scale = np.where(norms > eps, eps / np.where(norms > 0, norms, 1.0), 1.0)
    state.a = target * scale[:, None]
    return state.a


def capped_box_projection(t, budget: float, lo: float, hi: float):
    """Minimize sum (b - t)^2 s.t. sum b <= budget and lo <= b <= hi.

    The minimizer is b = clip(t - nu, lo, hi) with the smallest nu >= 0 meeting
    the budget; nu is found exactly on the piecewise-linear sum between
    breakpoints. Returns ``(b, nu)``.
    """
    t = np.asarray(t, dtype=float)
    if lo * t.size > budget:
        raise ConfigError(f"budget {budget} cannot give {t.size} APs at least {lo} antenna each")
    total = lambda nu: float(np.clip(t - nu, lo, hi).sum())
    if total(0.0) <= budget:
        return np.clip(t, lo, hi), 0.0
    knots = np.unique(np.concatenate([t - hi, t - lo]))
    knots = np.concatenate([[0.0], knots[knots > 0]])
    sums = np.array([total(k) for k in knots])
    # sums is nonincreasing in nu and ends at lo * L <= budget
    j = int(np.argmax(sums <= budget))
    k0, k1, s0, s1 = knots[j - 1], knots[j], sums[j - 1], sums[j]
    nu = k1 if s0 == s1 else k0 + (s0 - budget) * (k1 - k0) / (s0 - s1)
    b = np.clip(t - nu, lo, hi)
    return b, float(nu)


def update_antenna_qp(state: AdmmState, config: AdmmConfig) -> np.ndarray:
    """Exact minimizer of sum chi_l (b_l - N_l) + rho_2/2 (b_l - N_l)^2 over the budget set."""
    t = state.counts() - state.chi / state.rho[1]
    state.b, _ = capped_box_projection(t, float(config.antenna_budget), 1.0,
                                       float(config.antenna_budget))
    return state.b


def _water_level(q, rho3):
    """Level m with sum_u (q_u - m)_+ = 1 / rho3."""
    qs = np.sort(q)[::-1]
    csum = np.cumsum(qs)
    for k in range(1, len(qs) + 1):
        m = (csum[k - 1] - 1.0 / rho3) / k
        if k == len(qs) or m >= qs[k]:
            return float(m)
    raise AssertionError("unreachable")


def update_epigraph(state: AdmmState, config: AdmmConfig, objective, exact: bool | None = None):
    """Epigraph step for (varpi, mho).

    With ``exact=False`` this is the successive rule: varpi_u = min(mho, obj_u - gamma_u / rho_3)
    against the current mho, then mho = max varpi. With ``exact=True`` (the default
    used by :func:`run_admm`) the pair is minimized jointly, which moves mho to the
    level where the clipped excess sum_u (q_u - mho)_+ equals 1 / rho_3 before clipping.
    """
    exact = config.exact_epigraph if exact is None else exact
    rho3 = state.rho[2]
    q = np.asarray(objective, dtype=float) - state.gamma / rho3
    level = _water_level(q, rho3) if exact else state.mho
    state.varpi = np.minimum(level, q)
    state.mho = float(state.varpi.max())
    return state.varpi, state.mho


def _z_merit(state: AdmmState, objective_fn):
    """The z-step objective and its Gauss-Newton model."""
    L = state.num_aps
    rho1, rho2, rho3 = state.rho
    pos_target = state.a + state.anchors + state.lam / rho1        # C_l z should match this
    cnt_target = state.b + state.chi / rho2
    eps_target = state.varpi + state.gamma / rho3                # objective should match this

    def fun(z):
        o = objective_fn(z)
        rp = z[: 2 * L].reshape(L, 2) - pos_target
        rc = z[2 * L:] - cnt_target
        ro = o - eps_target
        return 0.5 * (rho1 * np.sum(rp * rp) + rho2 * np.sum(rc * rc) + rho3 * np.sum(ro * ro))

    def model(z):
        o = objective_fn(z)
        jac = _objective_jacobian(objective_fn, z, L)
        resid = np.concatenate([rho1 * (z[: 2 * L] - pos_target.ravel()),
                                rho2 * (z[2 * L:] - cnt_target)])
        grad = resid + rho3 * jac.T @ (o - eps_target)
        diag = np.concatenate([np.full(2 * L, rho1), np.full(L, rho2)])
        return grad, lambda v: diag * v + rho3 * (jac.T @ (jac @ v))

    return fun, model


def _objective_jacobian(objective_fn, z, L, pos_step=1e-4, ant_step=1e-3):
    """Central differences of the per-sample objective: 1e-4 m on positions, 1e-3 on antennas."""
    cols = []
    for i in range(z.size):
        h = pos_step if i < 2 * L else ant_step
        e = np.zeros_like(z)
        e[i] = h
        cols.append((objective_fn(z + e) - objective_fn(z - e)) / (2 * h))
    return np.column_stack(cols)


def update_z_truncated_newton(state: AdmmState, config: AdmmConfig, problem: AdmmProblem | None = None,
                              objective_fn: Callable | None = None):
    """Minimize the z-step merit by truncated Newton from the current z.

    The merit never increases. ``objective_fn`` overrides the per-sample bound (useful
    for freezing it to constants); otherwise ``problem.objective`` is used.
    """
    objective_fn = objective_fn or problem.objective
    fun, model = _z_merit(state, objective_fn)
    res = truncated_newton(fun, model, state.z, max_iter=config.newton_iters)
    state.z = res.x
    return res


def update_multipliers(state: AdmmState, objective):
    """Dual ascent on the three coupling constraints, given the bound at the new z."""
    rho1, rho2, rho3 = state.rho
    state.lam = state.lam + rho1 * (state.a - state.positions() + state.anchors)
    state.chi = state.chi + rho2 * (state.b - state.counts())
    state.gamma = state.gamma + rho3 * (state.varpi - np.asarray(objective, dtype=float))
    return state.lam, state.chi, state.gamma


def residuals(state: AdmmState, objective) -> tuple:
    """Max-normalized primal and dual residuals (zeta_p, phi_p, upsilon_p, zeta_d, phi_d, upsilon_d)."""
    g = RESIDUAL_GUARD
    a_norm = np.linalg.norm(state.a, axis=1) + g
    zeta_p = np.max(np.linalg.norm(state.a - state.positions() + state.anchors, axis=1) / a_norm)
    phi_p = np.max(np.abs(state.b - state.counts()) / (np.abs(state.b) + g))
    ups_p = np.max(np.abs(state.varpi - objective) / (np.abs(state.varpi) + g))
    prev = state.prev
    zeta_d = np.max(np.linalg.norm(state.a - prev["a"], axis=1) / a_norm)
    phi_d = np.max(np.abs(state.b - prev["b"]) / (np.abs(state.b) + g))
    ups_d = np.max(np.abs(state.varpi - prev["varpi"]) / (np.abs(state.varpi) + g))
    return tuple(float(v) for v in (zeta_p, phi_p, ups_p, zeta_d, phi_d, ups_d))


def _adapt(state: AdmmState, res, adapt: PenaltyAdapt):
    if not adapt.enabled:
        return
    for i in range(3):
        primal, dual = res[i], res[i + 3]
        if primal > adapt.mu * dual:
            state.rho[i] *= adapt.tau_inc
        elif dual > adapt.mu * primal:
            state.rho[i] /= adapt.tau_dec


# ---------------------------------------------------------------------------
# integer recovery


def round_antennas(b, budget: int) -> np.ndarray:
    """Largest-remainder rounding of relaxed counts, each at least 1, total at most ``budget``."""
    b = np.clip(np.asarray(b, dtype=float), 1.0, float(budget))
    if len(b) > budget:
        raise ConfigError("budget smaller than the number of APs")
    base = np.floor(b + 1e-9).astype(int)
    total = min(int(budget), int(round(b.sum())))
    spare = total - int(base.sum())
    if spare > 0:
        order = np.argsort(-(b - base), kind="stable")
        base[order[:spare]] += 1
    while base.sum() > budget:
        base[int(np.argmax(base))] -= 1
    return base


def feasible_point(problem: AdmmProblem, config: AdmmConfig, z) -> np.ndarray:
    """Project positions onto their balls and round antennas to a feasible integer split."""
    L = problem.num_aps
    z = np.asarray(z, dtype=float)
    disp = z[: 2 * L].reshape(L, 2) - problem.anchors
    norms = np.linalg.norm(disp, axis=1)
    eps = config.ball_radius_m
    disp *= np.where(norms > eps, eps / np.where(norms > 0, norms, 1.0), 1.0)[:, None]
    counts = round_antennas(z[2 * L:], config.antenna_budget)
    return np.concatenate([(problem.anchors + disp).ravel(), counts.astype(float)])


def swap_search(problem: AdmmProblem, config: AdmmConfig, z, max_rounds: int = 100):
    """Greedy local search over integer allocations: move one antenna between APs or add a spare."""
    L = problem.num_aps
    z = np.array(z, dtype=float)
    best = problem.worst(z)
    for _ in range(max_rounds):
        counts = z[2 * L:].astype(int)
        candidates = []
        for i in range(L):
            if counts.sum() < config.antenna_budget:
                c = counts.copy()
                c[i] += 1
                candidates.append(c)
            for j in range(L):
                if i != j and counts[i] > 1:
                    c = counts.copy()
                    c[i] -= 1
                    c[j] += 1
                    candidates.append(c)
        improved = False
        for c in candidates:
            trial = np.concatenate([z[: 2 * L], c.astype(float)])
            val = problem.worst(trial)
            if val < best:
                best, z, improved = val, trial, True
        if not improved:
            break
    return z, best


def random_feasible(problem: AdmmProblem, config: AdmmConfig, seed: int) -> np.ndarray:
    """A uniformly drawn feasible layout: positions in the balls, a random integer split of the budget."""
    rng = np.random.default_rng(seed)
    L = problem.num_aps
    radius = config.ball_radius_m * np.sqrt(rng.random(L))
    angle = rng.uniform(0.0, 2 * math.pi, L)
    pos = problem.anchors + np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
    spare = config.antenna_budget - L
    counts = 1 + rng.multinomial(spare, np.full(L, 1.0 / L))
    return np.concatenate([pos.ravel(), counts.astype(float)])


# ---------------------------------------------------------------------------
# driver


@dataclass
class AdmmResult:
    z: DecisionVector
    relaxed_z: DecisionVector
    history: list
    converged: bool
    improved: bool
    iterations: int
    initial_objective: float
    final_objective: float
    psi: tuple


def _record(state: AdmmState, k: int, res, objective: float):
    state.history.append(IterationRecord(k, res, objective, tuple(float(r) for r in state.rho)))


def run_admm(scene: Scene, config: AdmmConfig, target_samples: Sequence[TargetState],
             *, auto_scale: bool = False) -> AdmmResult:
    """Iterate the ADMM steps until all six residuals are under tolerance or max_iters.

    Every iterate is mapped to a feasible integer layout and scored by the worst-case
    sample objective; the best one (after a one-swap polish) is returned, so the
    result is never worse than the equal-split anchors. With ``auto_scale`` the
    psi weights are first set by :func:`auto_psi` at the initial point.
    """
    if not target_samples:
        raise ConfigError("target_samples must be nonempty")
    problem = AdmmProblem.build(scene, config, target_samples)
    L = problem.num_aps
    if L > config.antenna_budget:
        raise ConfigError("antenna budget smaller than the number of APs")
    z0 = np.concatenate([problem.anchors.ravel(), np.full(L, config.antenna_budget / L)])
    if auto_scale:
        problem = auto_psi(problem, z0)
    state = initial_state(problem, config, z0)

    start = feasible_point(problem, config, z0)
    initial = problem.worst(start)
    best_z, best_val = start, initial
    converged = False
    k = 0
    for k in range(1, config.max_iters + 1):
        state.remember()
        update_ball_projection(state, config)
        update_antenna_qp(state, config)
        update_epigraph(state, config, problem.objective(state.z))
        update_z_truncated_newton(state, config, problem)
        obj = problem.objective(state.z)
        update_multipliers(state, obj)
        res = residuals(state, obj)

        cand = feasible_point(problem, config, state.z)
        val = problem.worst(cand)
        if val < best_val:
            best_z, best_val = cand, val
        _record(state, k, res, best_val)

        tol = np.tile(config.tolerances, 2)
        if np.all(np.asarray(res) < tol):
            converged = True
            break
        _adapt(state, res, config.penalty_adapt)

    best_z, best_val = swap_search(problem, config, best_z)
    improved = best_val < initial
    if not improved:
        log.warning("ADMM found no feasible improvement; returning the initial layout")
        best_z, best_val = start, initial
    return AdmmResult(
        z=DecisionVector(best_z),
        relaxed_z=DecisionVector(state.z),
        history=state.history,
        converged=converged,
        improved=improved,
        iterations=k,
        initial_objective=initial,
        final_objective=best_val,
        psi=(problem.psi_p, problem.psi_a),
    )

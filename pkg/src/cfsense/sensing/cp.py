"""Complex CP (PARAFAC) decomposition by regularized alternating least squares."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

__all__ = ["CpConfig", "CpFactors", "cp_decompose", "reconstruct"]


@dataclass(frozen=True)
class CpConfig:
    n_restarts: int = 3
    max_sweeps: int = 500
    tol: float = 1e-8
    reg: float = 1e-6            # Tikhonov weight relative to the mean entry power
    reg_decay_every: int = 50
    fit_floor: float = 1e-10     # relative fit treated as exact
    extrapolation_power: float = 3.0
    compression_margin: int = 2  # extra singular vectors kept per mode
    polish_sweeps: int = 30
    seed: int = 0


@dataclass(frozen=True, eq=False)
class CpFactors:
    u_mat: np.ndarray
    v_mat: np.ndarray
    w_mat: np.ndarray
    fit_residual: float
    sweeps: int = 0
    converged: bool = True
    fit_history: tuple = field(default=(), repr=False)

    @property
    def rank(self) -> int:
        return self.u_mat.shape[1]

    def permuted(self, perm) -> "CpFactors":
        """Columns reordered so that new column k is old column ``perm[k]``."""
        perm = np.asarray(perm, dtype=int)
        return CpFactors(self.u_mat[:, perm], self.v_mat[:, perm], self.w_mat[:, perm],
                         self.fit_residual, self.sweeps, self.converged, self.fit_history)


def reconstruct(u, v, w) -> np.ndarray:
    return np.einsum("ir,jr,kr->ijk", u, v, w)


def _solve(rhs, gram, delta):
    # rhs (n, R) times (gram + delta I)^-1 for Hermitian gram
    return np.linalg.solve((gram + delta * np.eye(gram.shape[0])).T, rhs.T).T


def _balance(u, v, w):
    """Give the three factors of every column equal norms (same product, least penalty)."""
    nu, nv, nw = (np.linalg.norm(m, axis=0) for m in (u, v, w))
    prod = nu * nv * nw
    ok = prod > 0
    g = np.where(ok, np.cbrt(np.where(ok, prod, 1.0)), 1.0)
    fu = np.where(ok, g / np.where(nu > 0, nu, 1), 1.0)
    fv = np.where(ok, g / np.where(nv > 0, nv, 1), 1.0)
    fw = np.where(ok, g / np.where(nw > 0, nw, 1), 1.0)
    return u * fu, v * fv, w * fw


def _compression_bases(y, k):
    """Leading left singular vectors of each unfolding (HOSVD truncation to k per mode)."""
    bases = []
    for mode in range(3):
        unf = np.moveaxis(y, mode, 0).reshape(y.shape[mode], -1)
        # eigenvectors of the small Gram matrix are cheaper than a full SVD
        vals, vecs = np.linalg.eigh(unf @ unf.conj().T)
        bases.append(vecs[:, ::-1][:, : min(k, y.shape[mode])])
    return bases


def _peak_init(y, rank, pad=2):
    """Complex exponentials at the strongest separated peaks of the zero-padded 3-D spectrum."""
    shape = tuple(pad * n for n in y.shape)
    power = np.abs(np.fft.fftn(y, shape, axes=(0, 1, 2))) ** 2
    factors = [np.empty((n, rank), dtype=complex) for n in y.shape]
    for r in range(rank):
        peak = np.unravel_index(int(np.argmax(power)), shape)
        for mode, (n, k, size) in enumerate(zip(y.shape, peak, shape)):
            factors[mode][:, r] = np.exp(2j * np.pi * k * np.arange(n) / size)
        # suppress the main lobe (one resolution cell each way, circularly)
        idx = tuple((np.arange(k - pad, k + pad + 1) % size) for k, size in zip(peak, shape))
        power[np.ix_(*idx)] = 0.0
    return factors


def _sweep(y, u, v, w, delta):
    gv, gw = v.T @ v.conj(), w.T @ w.conj()
    u = _solve(np.einsum("ijk,jr,kr->ir", y, v.conj(), w.conj(), optimize=True), gv * gw, delta)
    gu = u.T @ u.conj()
    v = _solve(np.einsum("ijk,ir,kr->jr", y, u.conj(), w.conj(), optimize=True), gu * gw, delta)
    gv = v.T @ v.conj()
    w = _solve(np.einsum("ijk,ir,jr->kr", y, u.conj(), v.conj(), optimize=True), gu * gv, delta)
    return _balance(u, v, w)


def _als(y, rank, rng, cfg: CpConfig, start=None, max_sweeps=None, floor2=0.0, ynorm=None):
    I, J, K = y.shape
    cplx = lambda *s: (rng.standard_normal(s) + 1j * rng.standard_normal(s)) / np.sqrt(2)
    if start is None:
        u, v, w = cplx(I, rank), cplx(J, rank), cplx(K, rank)
    else:
        u, v, w = start
    u, v, w = _balance(u, v, w)
    # floor2 is the energy outside a compressed subspace, so fits stay in full-tensor units
    ynorm = np.linalg.norm(y) if ynorm is None else ynorm
    fit_of = lambda x: np.sqrt(floor2 + np.linalg.norm(y - x) ** 2) / ynorm
    delta = cfg.reg  # y arrives scaled to unit mean entry power
    history = []
    prev = np.inf
    converged = False
    sweep = 0
    fit = np.inf
    for sweep in range(1, (max_sweeps or cfg.max_sweeps) + 1):
        old = (u, v, w)
        u, v, w = _sweep(y, u, v, w, delta)
        fit = fit_of(reconstruct(u, v, w))
        if sweep > 2:
            # extrapolate along the last update; keep it only if the fit improves
            step = sweep ** (1.0 / cfg.extrapolation_power)
            trial = _balance(*(n + step * (n - o) for n, o in zip((u, v, w), old)))
            trial_fit = fit_of(reconstruct(*trial))
            if trial_fit < fit:
                (u, v, w), fit = trial, trial_fit
        history.append(fit)
        if sweep % cfg.reg_decay_every == 0:
            delta *= 0.5
        if fit < cfg.fit_floor or (np.isfinite(prev) and prev - fit <= cfg.tol * prev):
            converged = True
            break
        prev = fit
    return u, v, w, history, sweep, converged


def _normalize(u, v, w):
    """Unit-RMS delay and Doppler columns with a real positive first entry; U carries the rest."""
    J, K = v.shape[0], w.shape[0]
    sv = np.linalg.norm(v, axis=0) / np.sqrt(J)
    sw = np.linalg.norm(w, axis=0) / np.sqrt(K)
    pv = np.exp(-1j * np.angle(v[0]))
    pw = np.exp(-1j * np.angle(w[0]))
    v = v * (pv / sv)
    w = w * (pw / sw)
    u = u * (sv * sw / (pv * pw))
    return u, v, w


def cp_decompose(tensor, rank: int, config: CpConfig = CpConfig()) -> CpFactors:
    """Rank-``rank`` CP model of a complex 3-way array, best of several seeded restarts.

    The array is scaled to unit mean entry power before fitting so the Tikhonov
    weight is scale free; the weight halves every ``reg_decay_every`` sweeps. A
    restart stops once the relative fit improvement drops below ``tol``. The
    returned ``fit_residual`` is ||Y - [[U, V, W]]||_F / ||Y||_F for the returned
    (normalized) factors.
    """
    y = np.asarray(getattr(tensor, "data", tensor), dtype=complex)
    if y.ndim != 3:
        raise ValueError("expected a 3-way array")
    if rank < 1:
        raise ValueError("rank must be at least 1")
    power = np.linalg.norm(y) ** 2 / y.size
    if not np.isfinite(power) or power == 0.0:
        raise ValueError("degenerate (all-zero or non-finite) tensor")
    scale = np.sqrt(power)
    ys = y / scale
    bases = _compression_bases(ys, rank + config.compression_margin)
    core = np.einsum("ijk,ia,jb,kc->abc", ys, *(b.conj() for b in bases), optimize=True)
    total = np.linalg.norm(ys)
    outside = max(total**2 - np.linalg.norm(core) ** 2, 0.0)
    seeds = np.random.SeedSequence(config.seed).spawn(max(1, config.n_restarts))
    best = None
    for i, ss in enumerate(seeds):
        start = None
        if i == 0:
            start = tuple(b.conj().T @ f for b, f in zip(bases, _peak_init(ys, rank)))
        run = _als(core, rank, np.random.default_rng(ss), config, start,
                   floor2=outside, ynorm=total)
        if best is None or run[3][-1] < best[3][-1]:
            best = run
    uc, vc, wc, history, sweeps, converged = best
    expanded = tuple(b @ f for b, f in zip(bases, (uc, vc, wc)))
    # polish on the full tensor; compression discards a little noise-free energy when noisy
    u, v, w, polish, extra, polished = _als(ys, rank, np.random.default_rng(0), config,
                                            expanded, max_sweeps=config.polish_sweeps)
    history = tuple(history) + tuple(polish)
    sweeps += extra
    if not converged:
        log.info("CP-ALS hit %d sweeps without meeting the tolerance", sweeps)
    u, v, w = _normalize(u * scale, v, w)
    fit = float(np.linalg.norm(y - reconstruct(u, v, w)) / np.linalg.norm(y))
    return CpFactors(u, v, w, fit, sweeps, converged, history)

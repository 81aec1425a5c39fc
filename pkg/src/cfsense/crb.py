"""Closed-form Fisher information and Cramér-Rao bounds for cooperative sensing.

The per-AP measurement vector is (delay, sin(AoA), Doppler). Its Fisher
information is block diagonal across APs; for AP ``l`` the 3x3 block is

    [[A, B, C],
     [B, D, E],
     [C, E, F]]_l

with the closed-form diagonals returned by :func:`fim_blocks`. Position and
velocity bounds follow from the chain rule, ``(J G J^T)^-1``, with ``J`` the
Jacobian of the measurement vector with respect to (x, y) or (v, heading).

Everything here is vectorized over targets internally; the public single-target
functions are thin slices of the batch routines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .scene import SPEED_OF_LIGHT, Scene, SceneError, WaveformConfig

__all__ = [
    "CrbPair",
    "FimBlocks",
    "SingularFimError",
    "batch_traces",
    "crb_pair",
    "crb_position",
    "crb_velocity",
    "fim_blocks",
    "jacobian_position",
    "jacobian_velocity",
    "weighted_objective",
]

COND_LIMIT = 1e12


class SingularFimError(ArithmeticError):
    """Projected Fisher information is rank deficient or badly conditioned."""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition number {condition:.3e})")
        self.condition = condition


@dataclass(frozen=True)
class FimBlocks:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    e: np.ndarray
    f: np.ndarray

    def matrix(self) -> np.ndarray:
        """Assembled 3L x 3L information matrix ordered [delay | sin AoA | Doppler]."""
        A, B, C, D, E, F = (np.diag(v) for v in (self.a, self.b, self.c, self.d, self.e, self.f))
        return np.block([[A, B, C], [B, D, E], [C, E, F]])


@dataclass(frozen=True)
class CrbPair:
    crb_position: np.ndarray
    crb_velocity: np.ndarray

    @property
    def trace_position(self) -> float:
        return float(np.trace(self.crb_position))

    @property
    def trace_velocity(self) -> float:
        return float(np.trace(self.crb_velocity))


# ---------------------------------------------------------------------------
# batch kernels: targets along axis 0, APs along axis 1


def _gain_power(ap_xy, tpos, rcs_var, wave: WaveformConfig):
    d = tpos[:, None, :] - ap_xy[None, :, :]
    r2 = np.einsum("ulk,ulk->ul", d, d)
    if np.any(r2 == 0.0):
        raise SceneError("target coincides with an AP")
    return wave.wavelength**2 * rcs_var[:, None] / ((4.0 * math.pi) ** 3 * r2**2)


def _fim_diagonals(ap_xy, antennas, tpos, rcs_var, wave: WaveformConfig):
    """Closed-form diagonals, shape (6, U, L) in the order A, B, C, D, E, F."""
    antennas = np.asarray(antennas, dtype=float)
    if np.any(antennas <= 0):
        raise SceneError("antenna counts must be positive")
    g = 4.0 * math.pi**2 * _gain_power(ap_xy, tpos, rcs_var, wave) / wave.noise_variance
    nc, m = wave.num_subcarriers, wave.num_symbols
    na = antennas[None, :]
    df, T, k = wave.subcarrier_spacing_hz, wave.symbol_duration_s, wave.spacing_ratio
    sq_n = (2 * nc + 1) * (nc + 1) * nc / 6.0
    sq_m = (2 * m + 1) * (m + 1) * m / 6.0
    sq_p = (2 * na + 1) * (na + 1) * na / 6.0
    sum_n = (nc + 1) * nc / 2.0
    sum_m = (m + 1) * m / 2.0
    sum_p = (na + 1) * na / 2.0
    a = g * df**2 * sq_n * m * na
    b = -g * k * df * sum_p * sum_n * m
    c = -g * T * df * sum_m * sum_n * na
    d = g * k**2 * sq_p * nc * m
    e = g * k * T * sum_p * sum_m * nc
    f = g * T**2 * sq_m * na * nc
    return np.stack(np.broadcast_arrays(a, b, c, d, e, f))


def _block_matrices(diag):
    a, b, c, d, e, f = diag
    return np.stack([np.stack([a, b, c], -1), np.stack([b, d, e], -1),
                     np.stack([c, e, f], -1)], -2)  # (U, L, 3, 3)


def _jacobian_position(ap_xy, tpos, speed, heading, wave: WaveformConfig):
    """d(delay, sin AoA, Doppler)/d(x, y), shape (U, L, 2, 3)."""
    dx = tpos[:, None, 0] - ap_xy[None, :, 0]
    dy = tpos[:, None, 1] - ap_xy[None, :, 1]
    eta2 = dx**2 + dy**2
    eta = np.sqrt(eta2)
    theta = np.arctan2(dy, dx)
    # f_D tan(theta_l - theta_u), written without the tangent pole
    xi = -2.0 * wave.carrier_freq_hz * speed[:, None] * np.sin(theta - heading[:, None]) / SPEED_OF_LIGHT
    jac = np.empty(dx.shape + (2, 3))
    jac[..., 0, 0] = 2.0 * dx / (eta * SPEED_OF_LIGHT)
    jac[..., 1, 0] = 2.0 * dy / (eta * SPEED_OF_LIGHT)
    jac[..., 0, 1] = -dy * dx / (eta * eta2)
    jac[..., 1, 1] = dx**2 / (eta * eta2)
    jac[..., 0, 2] = xi * dy / eta2
    jac[..., 1, 2] = -xi * dx / eta2
    return jac


def _jacobian_velocity(ap_xy, tpos, speed, heading, wave: WaveformConfig):
    """d(delay, sin AoA, Doppler)/d(speed, heading), shape (U, L, 2, 3).

    Delay and AoA depend on position only, so their columns vanish.
    """
    dx = tpos[:, None, 0] - ap_xy[None, :, 0]
    dy = tpos[:, None, 1] - ap_xy[None, :, 1]
    rel = np.arctan2(dy, dx) - heading[:, None]
    k = -2.0 * wave.carrier_freq_hz / SPEED_OF_LIGHT
    jac = np.zeros(dx.shape + (2, 3))
    jac[..., 0, 2] = k * np.cos(rel)
    jac[..., 1, 2] = k * speed[:, None] * np.sin(rel)
    return jac


def _project(jac, blocks):
    return np.einsum("ulai,ulij,ulbj->uab", jac, blocks, jac)


def _condition(info):
    ev = np.linalg.eigvalsh(info)
    hi = np.abs(ev).max(axis=-1)
    lo = ev.min(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(lo > 0, hi / np.where(lo > 0, lo, 1.0), np.inf)


def _inverse(info, what: str):
    cond = float(_condition(info[None])[0])
    if not cond < COND_LIMIT:
        raise SingularFimError(f"{what} information is singular", cond)
    inv = scipy.linalg.solve(info, np.eye(info.shape[0]), assume_a="pos")
    return 0.5 * (inv + inv.T)


def _scene_arrays(scene: Scene):
    tpos = np.array([t.position_m for t in scene.targets], dtype=float)
    speed = np.array([t.speed_mps for t in scene.targets], dtype=float)
    heading = np.array([t.heading_rad for t in scene.targets], dtype=float)
    rcs_var = np.array([t.rcs_variance for t in scene.targets], dtype=float)
    return tpos, speed, heading, rcs_var


def _one(scene: Scene, target_index: int):
    if not 0 <= target_index < scene.num_targets:
        raise IndexError(f"target_index {target_index} out of range")
    tpos, speed, heading, rcs_var = _scene_arrays(scene)
    s = slice(target_index, target_index + 1)
    return tpos[s], speed[s], heading[s], rcs_var[s]


def _antennas(scene: Scene, antennas):
    if antennas is None:
        return scene.antennas
    antennas = np.asarray(antennas, dtype=float)
    if antennas.shape != (scene.num_aps,):
        raise ValueError("need one antenna count per AP")
    return antennas


# ---------------------------------------------------------------------------
# public single-target API


def fim_blocks(scene: Scene, target_index: int, antennas=None) -> FimBlocks:
    """Diagonals of the six L x L information blocks for one target.

    ``antennas`` overrides the scene's counts and may be fractional.
    The path-gain power uses the RCS variance rather than a random draw.
    """
    tpos, _, _, rcs_var = _one(scene, target_index)
    diag = _fim_diagonals(scene.ap_positions, _antennas(scene, antennas), tpos, rcs_var,
                          scene.waveform)
    return FimBlocks(*(np.array(v[0]) for v in diag))


def jacobian_position(scene: Scene, target_index: int) -> np.ndarray:
    """2 x 3L Jacobian of [delays | sin AoAs | Dopplers] with respect to (x, y)."""
    jac = _jacobian_position(scene.ap_positions, *_one(scene, target_index)[:3], scene.waveform)
    return np.concatenate([jac[0, :, :, i].T for i in range(3)], axis=1)


def jacobian_velocity(scene: Scene, target_index: int) -> np.ndarray:
    """2 x 3L Jacobian of [delays | sin AoAs | Dopplers] with respect to (speed, heading)."""
    jac = _jacobian_velocity(scene.ap_positions, *_one(scene, target_index)[:3], scene.waveform)
    return np.concatenate([jac[0, :, :, i].T for i in range(3)], axis=1)


def crb_position(scene: Scene, target_index: int, antennas=None) -> np.ndarray:
    tpos, speed, heading, rcs_var = _one(scene, target_index)
    blocks = _block_matrices(_fim_diagonals(scene.ap_positions, _antennas(scene, antennas),
                                            tpos, rcs_var, scene.waveform))
    jac = _jacobian_position(scene.ap_positions, tpos, speed, heading, scene.waveform)
    return _inverse(_project(jac, blocks)[0], "position")


def crb_velocity(scene: Scene, target_index: int, antennas=None) -> np.ndarray:
    tpos, speed, heading, rcs_var = _one(scene, target_index)
    blocks = _block_matrices(_fim_diagonals(scene.ap_positions, _antennas(scene, antennas),
                                            tpos, rcs_var, scene.waveform))
    jac = _jacobian_velocity(scene.ap_positions, tpos, speed, heading, scene.waveform)
    return _inverse(_project(jac, blocks)[0], "velocity")


def crb_pair(scene: Scene, target_index: int, antennas=None) -> CrbPair:
    return CrbPair(crb_position(scene, target_index, antennas),
                   crb_velocity(scene, target_index, antennas))


# ---------------------------------------------------------------------------
# batch evaluation for the placement optimizer


def _trace_inv2(info):
    """Trace of the inverse of a stack of 2x2 SPD matrices; inf where ill-conditioned."""
    a, b, d = info[:, 0, 0], info[:, 0, 1], info[:, 1, 1]
    det = a * d - b * b
    cond = _condition(info)
    with np.errstate(divide="ignore", invalid="ignore"):
        tr = (a + d) / det
    return np.where(cond < COND_LIMIT, tr, np.inf)


def batch_traces(ap_xy, antennas, tpos, speed, heading, rcs_var, wave: WaveformConfig):
    """Traces of the position and velocity bounds for many targets at once.

    Returns two arrays of length U; singular geometries give ``inf``.
    """
    ap_xy = np.asarray(ap_xy, dtype=float)
    blocks = _block_matrices(_fim_diagonals(ap_xy, antennas, tpos, rcs_var, wave))
    info_p = _project(_jacobian_position(ap_xy, tpos, speed, heading, wave), blocks)
    info_v = _project(_jacobian_velocity(ap_xy, tpos, speed, heading, wave), blocks)
    return _trace_inv2(info_p), _trace_inv2(info_v)


def weighted_objective(scene: Scene, z, alpha: float = 0.5, psi_p: float = 1.0,
                       psi_a: float = 1.0) -> np.ndarray:
    """Per-target weighted bound alpha psi_p tr(CRB_p) + (1 - alpha) psi_a tr(CRB_v).

    ``z`` stacks AP positions and antenna counts as [x1, y1, ..., xL, yL, N1, ..., NL]
    and overrides the scene's AP layout.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    z = np.asarray(z, dtype=float)
    L = scene.num_aps
    if z.shape != (3 * L,):
        raise ValueError(f"decision vector must have length {3 * L}")
    ap_xy = z[: 2 * L].reshape(L, 2)
    tr_p, tr_a = batch_traces(ap_xy, z[2 * L:], *_scene_arrays(scene), scene.waveform)
    if not (np.all(np.isfinite(tr_p)) and np.all(np.isfinite(tr_a))):
        raise SingularFimError("bound undefined at this layout", math.inf)
    return alpha * psi_p * tr_p + (1.0 - alpha) * psi_a * tr_a

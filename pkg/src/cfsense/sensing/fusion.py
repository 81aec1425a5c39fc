"""Symbol-level fusion matrices and the localization / velocity objectives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..scene import SPEED_OF_LIGHT, WaveformConfig

__all__ = [
    "FusionSet",
    "NOISE_FLOOR",
    "build_fusion",
    "estimate_noise_variance",
    "localization_objective",
    "localization_trace",
    "mrc_weights",
    "velocity_objective",
    "velocity_trace",
]

NOISE_FLOOR = 1e-15
_CHUNK = 4096


def _unit_rms(x):
    x = np.asarray(x, dtype=complex)
    rms = np.linalg.norm(x) / math.sqrt(x.size)
    return x / rms if rms > 0 else x


def estimate_noise_variance(col, pad: int = 16) -> float:
    """Mean squared residual after removing the dominant complex exponential.

    The frequency comes from the zero-padded DFT peak, refined by the weighted
    phase-difference estimator on the demodulated sequence; amplitude and phase
    then follow by least squares.
    """
    x = np.asarray(col, dtype=complex)
    n = x.size
    if n < 8:
        raise ValueError("need at least 8 samples")
    t = np.arange(n)
    k = int(np.argmax(np.abs(np.fft.fft(x, pad * n))))
    omega = 2 * np.pi * k / (pad * n)
    base = x * np.exp(-1j * omega * t)
    # Kay's smoothed phase-difference weights
    m = np.arange(1, n)
    weights = 1.5 * n / (n * n - 1) * (1 - ((m - n / 2) / (n / 2)) ** 2)
    omega += float(np.sum(weights * np.angle(base[1:] * base[:-1].conj())))
    phasor = np.exp(1j * omega * t)
    amp = np.vdot(phasor, x) / n
    resid = x - amp * phasor
    return max(float(np.mean(np.abs(resid) ** 2)), NOISE_FLOOR)


def mrc_weights(variances) -> np.ndarray:
    inv = 1.0 / np.maximum(np.asarray(variances, dtype=float), NOISE_FLOOR)
    return inv / inv.sum()


@dataclass(frozen=True, eq=False)
class FusionSet:
    s_tilde: np.ndarray      # (L, N_c) weighted delay rows
    k_tilde: np.ndarray      # (L, psi) weighted, zero-padded angle rows
    t_tilde: np.ndarray      # (L, M) weighted Doppler rows
    weights: np.ndarray      # (L,)
    psi: int
    antennas: tuple          # per AP antenna count (unpadded lengths)

    @property
    def num_aps(self) -> int:
        return len(self.weights)

    @property
    def peak_trace(self) -> float:
        """Noiseless maximum of the localization trace, sum_l w_l (N_c + N_A^l)."""
        return float(np.sum(self.weights * (self.s_tilde.shape[1] + np.asarray(self.antennas))))

    def scaled(self, factor: float) -> "FusionSet":
        return FusionSet(self.s_tilde * factor, self.k_tilde * factor, self.t_tilde * factor,
                         self.weights, self.psi, self.antennas)


def build_fusion(angle_cols, delay_cols, doppler_cols, sigma_estimates=None) -> FusionSet:
    """Stack one target's per-AP factor columns into MRC-weighted fusion matrices.

    Columns are first scaled to unit RMS so that noiseless entries are unit-modulus
    phasors. ``sigma_estimates`` default to :func:`estimate_noise_variance` of the
    normalized delay columns; the same weights serve all three matrices.
    """
    L = len(delay_cols)
    if L < 2 or len(angle_cols) != L or len(doppler_cols) != L:
        raise ValueError("need matching factor columns from at least two APs")
    delays = np.array([_unit_rms(c) for c in delay_cols])
    dopplers = np.array([_unit_rms(c) for c in doppler_cols])
    angles = [_unit_rms(c) for c in angle_cols]
    if sigma_estimates is None:
        sigma_estimates = [estimate_noise_variance(c) for c in delays]
    w = mrc_weights(sigma_estimates)
    psi = max(len(a) for a in angles)
    k = np.zeros((L, psi), dtype=complex)
    for l, a in enumerate(angles):
        k[l, : len(a)] = a
    return FusionSet(delays * w[:, None], k * w[:, None], dopplers * w[:, None], w, psi,
                     tuple(len(a) for a in angles))


def _chunks(points):
    for i in range(0, len(points), _CHUNK):
        yield points[i: i + _CHUNK]


def localization_trace(points, fusion: FusionSet, ap_xy, wave: WaveformConfig) -> np.ndarray:
    """tr(|S F_d| + |K F_a|) for each candidate row of ``points`` (K x 2)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    ap_xy = np.asarray(ap_xy, dtype=float)
    n = np.arange(1, fusion.s_tilde.shape[1] + 1)
    b = np.arange(1, fusion.psi + 1)
    out = []
    for chunk in _chunks(pts):
        diff = chunk[:, None, :] - ap_xy[None, :, :]                  # (K, L, 2)
        r = np.linalg.norm(diff, axis=2)
        theta = np.arctan2(diff[..., 1], diff[..., 0])
        f_d = np.exp(2j * np.pi * wave.subcarrier_spacing_hz * (2 * r / SPEED_OF_LIGHT)[..., None] * n)
        f_a = np.exp(-2j * np.pi * wave.spacing_ratio * np.sin(theta)[..., None] * b)
        delay = np.abs(np.einsum("ln,kln->kl", fusion.s_tilde, f_d))
        angle = np.abs(np.einsum("lb,klb->kl", fusion.k_tilde, f_a))
        out.append((delay + angle).sum(axis=1))
    return np.concatenate(out)


def localization_objective(candidate, fusion: FusionSet, ap_xy, wave: WaveformConfig) -> float:
    """P3 cost: reciprocal of the fused localization trace."""
    tr = float(localization_trace(np.asarray(candidate, dtype=float)[None, :], fusion, ap_xy, wave)[0])
    return 1.0 / max(tr, 1e-300)


def velocity_trace(candidates, fusion: FusionSet, t_hat, ap_xy, wave: WaveformConfig) -> np.ndarray:
    """tr(|T E(v, theta)|) for each (v, theta) row, with AoAs taken from ``t_hat``."""
    cand = np.atleast_2d(np.asarray(candidates, dtype=float))
    ap_xy = np.asarray(ap_xy, dtype=float)
    diff = np.asarray(t_hat, dtype=float)[None, :] - ap_xy
    aoa = np.arctan2(diff[:, 1], diff[:, 0])                          # (L,)
    m = np.arange(1, fusion.t_tilde.shape[1] + 1)
    T = wave.symbol_duration_s
    out = []
    for chunk in _chunks(cand):
        v, th = chunk[:, 0], chunk[:, 1]
        fd = 2 * wave.carrier_freq_hz * v[:, None] * np.cos(aoa[None, :] - th[:, None]) / SPEED_OF_LIGHT
        e = np.exp(2j * np.pi * fd[..., None] * m * T)                 # (K, L, M)
        out.append(np.abs(np.einsum("lm,klm->kl", fusion.t_tilde, e)).sum(axis=1))
    return np.concatenate(out)


def velocity_objective(candidate, fusion: FusionSet, t_hat, ap_xy, wave: WaveformConfig) -> float:
    """P4 cost: reciprocal of the fused Doppler trace."""
    tr = float(velocity_trace(np.asarray(candidate, dtype=float)[None, :], fusion, t_hat, ap_xy, wave)[0])
    return 1.0 / max(tr, 1e-300)

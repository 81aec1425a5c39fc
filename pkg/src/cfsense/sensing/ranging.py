"""Range extraction from a delay-domain factor: IDFT peak, then MUSIC inside one bin."""

from __future__ import annotations

import numpy as np

from ..scene import SPEED_OF_LIGHT, WaveformConfig

__all__ = [
    "DegenerateInputError",
    "coarse_range",
    "delay_steering",
    "music_refine",
    "music_spectrum",
    "range_bin_m",
    "unambiguous_range_m",
]


class DegenerateInputError(ValueError):
    pass


def unambiguous_range_m(wave: WaveformConfig) -> float:
    return SPEED_OF_LIGHT / (2.0 * wave.subcarrier_spacing_hz)


def range_bin_m(wave: WaveformConfig, n_ifft: int) -> float:
    return SPEED_OF_LIGHT / (2.0 * wave.subcarrier_spacing_hz * n_ifft)


def delay_steering(ranges_m, n: int, wave: WaveformConfig) -> np.ndarray:
    """Rows exp(-j 2 pi k df 2 r / c) for k = 1..n, one row per range."""
    k = np.arange(1, n + 1)
    r = np.atleast_1d(np.asarray(ranges_m, dtype=float))
    return np.exp(-2j * np.pi * wave.subcarrier_spacing_hz * 2.0 * np.outer(r, k) / SPEED_OF_LIGHT)


def coarse_range(v_col, wave: WaveformConfig, n_ifft: int | None = None):
    """IDFT-peak range and the one-bin-each-side search interval.

    Returns ``(r_tilde, (lo, hi))`` in meters; ``n_ifft`` defaults to 4 N_c.
    """
    v = np.asarray(v_col, dtype=complex)
    n_ifft = 4 * v.size if n_ifft is None else int(n_ifft)
    if n_ifft < v.size:
        raise ValueError("n_ifft must be at least the vector length")
    if not np.any(v):
        raise DegenerateInputError("all-zero delay factor")
    spectrum = np.abs(np.fft.ifft(v, n_ifft))
    peak = int(np.argmax(spectrum))
    q = range_bin_m(wave, n_ifft)
    return peak * q, (max(peak - 1, 0) * q, (peak + 1) * q)


def music_spectrum(v_col, ranges_m, wave: WaveformConfig) -> np.ndarray:
    """Pseudo-spectrum 1 / (a^H U_n U_n^H a) from the EVD of the rank-one covariance v v^H."""
    v = np.asarray(v_col, dtype=complex)
    _, vecs = np.linalg.eigh(np.outer(v, v.conj()))
    noise = vecs[:, :-1]                        # all but the dominant eigenvector
    steer = delay_steering(ranges_m, v.size, wave)
    proj = steer.conj() @ noise                 # rows a(r)^H U_n
    denom = np.sum(np.abs(proj) ** 2, axis=1)
    return 1.0 / np.maximum(denom, 1e-300)


def music_refine(v_col, wave: WaveformConfig, interval, grid_step_m: float = 0.01) -> float:
    """Argmax of the pseudo-spectrum over ``interval`` scanned every ``grid_step_m``."""
    lo, hi = float(interval[0]), float(interval[1])
    if not hi > lo:
        raise ValueError("empty search interval")
    if grid_step_m <= 0:
        raise ValueError("grid step must be positive")
    grid = lo + grid_step_m * np.arange(int(np.floor((hi - lo) / grid_step_m + 1e-9)) + 1)
    return float(grid[int(np.argmax(music_spectrum(v_col, grid, wave)))])

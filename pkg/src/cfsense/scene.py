"""Scenario description and multi-AP OFDM echo synthesis.

All geometry is planar. Angles of arrival are measured with ``atan2`` from the
AP towards the target, and every AP carries a uniform linear array whose
element phase progresses with ``sin`` of that angle.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

__all__ = [
    "SPEED_OF_LIGHT",
    "ApNode",
    "EchoTensor",
    "Scene",
    "SceneError",
    "TargetState",
    "WaveformConfig",
    "angle_of_arrival",
    "doppler_shift",
    "load_scene",
    "noise_variance_for_snr",
    "path_gain",
    "rcs_draws",
    "reference_scene",
    "save_scene",
    "scene_from_dict",
    "scene_to_dict",
    "steering_rx",
    "synthesize_echo",
    "with_snr",
]

TWO_PI = 2.0 * math.pi


class SceneError(ValueError):
    """Invalid scenario or a geometry the model cannot evaluate."""


@dataclass(frozen=True)
class WaveformConfig:
    carrier_freq_hz: float = 3.5e9
    subcarrier_spacing_hz: float = 30e3
    num_subcarriers: int = 128
    num_symbols: int = 128
    symbol_duration_s: float = (1.0 + 1.0 / 14.0) / 30e3
    antenna_spacing_m: float | None = None
    tx_power: float = 1.0
    noise_variance: float = 1.0

    def __post_init__(self):
        if self.antenna_spacing_m is None:
            object.__setattr__(self, "antenna_spacing_m", self.wavelength / 2.0)
        for name in ("carrier_freq_hz", "subcarrier_spacing_hz", "symbol_duration_s",
                     "antenna_spacing_m", "tx_power"):
            if not getattr(self, name) > 0:
                raise SceneError(f"{name} must be positive")
        if self.num_subcarriers < 1 or self.num_symbols < 1:
            raise SceneError("num_subcarriers and num_symbols must be >= 1")
        if self.noise_variance < 0:
            raise SceneError("noise_variance must be nonnegative")
        # cyclic prefix makes the symbol at least as long as 1/df
        if self.symbol_duration_s * self.subcarrier_spacing_hz < 1.0 - 1e-12:
            raise SceneError("symbol_duration_s must be >= 1/subcarrier_spacing_hz")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq_hz

    @property
    def spacing_ratio(self) -> float:
        """Element spacing in wavelengths."""
        return self.antenna_spacing_m / self.wavelength


@dataclass(frozen=True)
class ApNode:
    position_m: tuple[float, float]
    num_antennas: int = 8

    def __post_init__(self):
        object.__setattr__(self, "position_m", tuple(float(v) for v in self.position_m))
        if len(self.position_m) != 2:
            raise SceneError("AP position must be a 2-vector")
        if self.num_antennas < 1:
            raise SceneError("num_antennas must be >= 1")


@dataclass(frozen=True)
class TargetState:
    position_m: tuple[float, float]
    speed_mps: float = 0.0
    heading_rad: float = 0.0
    rcs_variance: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "position_m", tuple(float(v) for v in self.position_m))
        if len(self.position_m) != 2:
            raise SceneError("target position must be a 2-vector")
        if self.speed_mps < 0:
            raise SceneError("speed_mps must be nonnegative")
        if not self.rcs_variance > 0:
            raise SceneError("rcs_variance must be positive")
        object.__setattr__(self, "heading_rad", float(self.heading_rad) % TWO_PI)


@dataclass(frozen=True)
class Scene:
    waveform: WaveformConfig
    aps: tuple[ApNode, ...]
    targets: tuple[TargetState, ...]
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "aps", tuple(self.aps))
        object.__setattr__(self, "targets", tuple(self.targets))
        if len(self.aps) < 2:
            raise SceneError("cooperative sensing needs at least two APs")
        if len(self.targets) < 1:
            raise SceneError("scene needs at least one target")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise SceneError("rng_seed must fit in an unsigned 64-bit integer")
        for tgt in self.targets:
            for ap in self.aps:
                if math.dist(tgt.position_m, ap.position_m) == 0.0:
                    raise SceneError("target coincides with an AP")

    @property
    def num_aps(self) -> int:
        return len(self.aps)

    @property
    def num_targets(self) -> int:
        return len(self.targets)

    @property
    def ap_positions(self) -> np.ndarray:
        return np.array([ap.position_m for ap in self.aps], dtype=float)

    @property
    def antennas(self) -> np.ndarray:
        return np.array([ap.num_antennas for ap in self.aps], dtype=float)

    def replace(self, **changes) -> "Scene":
        return replace(self, **changes)


@dataclass(frozen=True)
class EchoTensor:
    data: np.ndarray
    ap_index: int

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


# ---------------------------------------------------------------------------
# Propagation primitives


def steering_rx(theta_rad: float, n_antennas: int, wave: WaveformConfig) -> np.ndarray:
    """Receive steering vector with elements exp(j 2 pi p (d/lambda) sin theta), p = 1..N."""
    if n_antennas < 1:
        raise SceneError("n_antennas must be >= 1")
    p = np.arange(1, int(n_antennas) + 1)
    return np.exp(1j * TWO_PI * p * wave.spacing_ratio * math.sin(theta_rad))


def _range(ap: ApNode, tgt: TargetState) -> float:
    r = math.dist(ap.position_m, tgt.position_m)
    if r == 0.0:
        raise SceneError("target coincides with an AP")
    return r


def angle_of_arrival(ap: ApNode, tgt: TargetState) -> float:
    dx = tgt.position_m[0] - ap.position_m[0]
    dy = tgt.position_m[1] - ap.position_m[1]
    return math.atan2(dy, dx)


def path_gain(ap: ApNode, tgt: TargetState, rcs_draw: complex, wave: WaveformConfig) -> complex:
    """Two-way radar attenuation sqrt(lambda^2 / ((4 pi)^3 r^4)) times the RCS draw."""
    r = _range(ap, tgt)
    amp = math.sqrt(wave.wavelength**2 / ((4.0 * math.pi) ** 3 * r**4))
    return amp * complex(rcs_draw)


def doppler_shift(ap: ApNode, tgt: TargetState, wave: WaveformConfig) -> float:
    theta = angle_of_arrival(ap, tgt)
    return (-2.0 * wave.carrier_freq_hz * tgt.speed_mps
            * math.cos(theta - tgt.heading_rad) / SPEED_OF_LIGHT)


# ---------------------------------------------------------------------------
# Echo synthesis


def _stream(scene: Scene, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(scene.rng_seed), *key]))


def rcs_draws(scene: Scene) -> np.ndarray:
    """One CN(0, sigma_beta^2) draw per target, shared by every AP of the scene."""
    rng = _stream(scene, 0)
    z = rng.standard_normal((scene.num_targets, 2)) @ np.array([1.0, 1j])
    var = np.array([t.rcs_variance for t in scene.targets])
    return z * np.sqrt(var / 2.0)


def target_factors(scene: Scene, ap_index: int, target_index: int,
                   rcs: complex) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Angle, delay and Doppler factors of one target at one AP.

    The angle factor carries the full complex amplitude sqrt(Pt) * alpha * chi_t
    so that the outer product of the three vectors is the noiseless echo.
    """
    wave = scene.waveform
    ap = scene.aps[ap_index]
    tgt = scene.targets[target_index]
    n_ant = ap.num_antennas
    theta = angle_of_arrival(ap, tgt)
    tau = 2.0 * _range(ap, tgt) / SPEED_OF_LIGHT
    f_d = doppler_shift(ap, tgt, wave)

    a_r = steering_rx(theta, n_ant, wave)
    # matched transmit beam w = conj(a_t)/sqrt(N) gives chi_t = sqrt(N)
    chi_t = math.sqrt(n_ant)
    alpha = path_gain(ap, tgt, rcs, wave)
    angle = math.sqrt(wave.tx_power) * alpha * chi_t * a_r

    n = np.arange(1, wave.num_subcarriers + 1)
    delay = np.exp(-1j * TWO_PI * n * wave.subcarrier_spacing_hz * tau)
    m = np.arange(1, wave.num_symbols + 1)
    doppler = np.exp(1j * TWO_PI * f_d * m * wave.symbol_duration_s)
    return angle, delay, doppler


def synthesize_echo(scene: Scene, ap_index: int, noiseless: bool = False,
                    rcs: Sequence[complex] | None = None) -> EchoTensor:
    """Echo tensor (antennas x subcarriers x symbols) received by one AP.

    Pilots are unit-modulus and already removed. Noise is circular complex
    Gaussian with variance ``waveform.noise_variance`` per entry, added once.
    ``rcs`` overrides the seeded RCS draws (one complex value per target).
    """
    if not 0 <= ap_index < scene.num_aps:
        raise IndexError(f"ap_index {ap_index} out of range")
    wave = scene.waveform
    betas = rcs_draws(scene) if rcs is None else np.asarray(rcs, dtype=complex)
    if betas.shape != (scene.num_targets,):
        raise SceneError("need one RCS value per target")
    shape = (scene.aps[ap_index].num_antennas, wave.num_subcarriers, wave.num_symbols)
    data = np.zeros(shape, dtype=complex)
    for u in range(scene.num_targets):
        a, d, f = target_factors(scene, ap_index, u, betas[u])
        data += np.einsum("i,j,k->ijk", a, d, f)
    if not noiseless and wave.noise_variance > 0:
        rng = _stream(scene, 1, ap_index)
        noise = rng.standard_normal(shape + (2,)) @ np.array([1.0, 1j])
        data += noise * math.sqrt(wave.noise_variance / 2.0)
    return EchoTensor(data=data, ap_index=ap_index)


# ---------------------------------------------------------------------------
# SNR helpers


def reference_signal_power(scene: Scene) -> float:
    """Expected per-entry echo power of the strongest target at its nearest AP."""
    wave = scene.waveform
    best = 0.0
    for tgt in scene.targets:
        for ap in scene.aps:
            r = _range(ap, tgt)
            p = (wave.tx_power * ap.num_antennas * tgt.rcs_variance
                 * wave.wavelength**2 / ((4.0 * math.pi) ** 3 * r**4))
            best = max(best, p)
    return best


def noise_variance_for_snr(scene: Scene, snr_db: float) -> float:
    return reference_signal_power(scene) / 10.0 ** (snr_db / 10.0)


def with_snr(scene: Scene, snr_db: float | None) -> Scene:
    """Copy of ``scene`` with the noise variance set for ``snr_db`` (None = noiseless)."""
    sigma2 = 0.0 if snr_db is None else noise_variance_for_snr(scene, snr_db)
    return scene.replace(waveform=replace(scene.waveform, noise_variance=sigma2))


def reference_scene(num_targets: int = 3, seed: int = 2024, *,
                    num_subcarriers: int = 128, num_symbols: int = 128,
                    antennas_per_ap: int = 8, area=(125.0, 225.0, 125.0, 225.0),
                    min_separation_m: float = 20.0) -> Scene:
    """Four corner APs of a 350 m square with targets drawn inside ``area``.

    Speeds are uniform in [90, 120] m/s and headings uniform in [0, pi).
    Targets are kept ``min_separation_m`` apart so they stay resolvable.
    """
    wave = WaveformConfig(num_subcarriers=num_subcarriers, num_symbols=num_symbols)
    corners = [(0.0, 0.0), (350.0, 0.0), (0.0, 350.0), (350.0, 350.0)]
    aps = [ApNode(p, antennas_per_ap) for p in corners]
    rng = np.random.default_rng(seed)
    targets: list[TargetState] = []
    while len(targets) < num_targets:
        pos = (rng.uniform(area[0], area[1]), rng.uniform(area[2], area[3]))
        speed = rng.uniform(90.0, 120.0)
        heading = rng.uniform(0.0, math.pi)
        if all(math.dist(pos, t.position_m) >= min_separation_m for t in targets):
            targets.append(TargetState(pos, speed, heading))
    return Scene(wave, tuple(aps), tuple(targets), rng_seed=seed)


# ---------------------------------------------------------------------------
# Serialization


def scene_to_dict(scene: Scene) -> dict:
    return {
        "waveform": asdict(scene.waveform),
        "aps": [{"position_m": list(ap.position_m), "num_antennas": ap.num_antennas}
                for ap in scene.aps],
        "targets": [{"position_m": list(t.position_m), "speed_mps": t.speed_mps,
                     "heading_rad": t.heading_rad, "rcs_variance": t.rcs_variance}
                    for t in scene.targets],
        "rng_seed": int(scene.rng_seed),
    }


def scene_from_dict(doc: dict) -> Scene:
    try:
        wave = WaveformConfig(**doc.get("waveform", {}))
        aps = tuple(ApNode(tuple(a["position_m"]), int(a.get("num_antennas", 8)))
                    for a in doc["aps"])
        targets = tuple(TargetState(tuple(t["position_m"]), float(t.get("speed_mps", 0.0)),
                                    float(t.get("heading_rad", 0.0)),
                                    float(t.get("rcs_variance", 1.0)))
                        for t in doc["targets"])
    except (KeyError, TypeError) as exc:
        raise SceneError(f"malformed scene document: {exc}") from exc
    return Scene(wave, aps, targets, int(doc.get("rng_seed", 0)))


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2) + "\n")


def load_scene(path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text()))

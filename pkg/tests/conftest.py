import math

import numpy as np
import pytest

from cfsense.scene import ApNode, Scene, TargetState, WaveformConfig


def random_scene(rng, *, max_aps=4, max_ant=8, max_nc=16, max_m=16, num_targets=1):
    """Small randomized scene with targets kept away from every AP."""
    L = int(rng.integers(2, max_aps + 1))
    df = float(rng.choice([15e3, 30e3, 60e3]))
    wave = WaveformConfig(
        carrier_freq_hz=rng.uniform(1e9, 6e9),
        subcarrier_spacing_hz=df,
        num_subcarriers=int(rng.integers(1, max_nc + 1)),
        num_symbols=int(rng.integers(1, max_m + 1)),
        symbol_duration_s=1.07 / df,
        noise_variance=rng.uniform(0.1, 10.0),
    )
    aps = [ApNode(rng.uniform(-200, 200, 2), int(rng.integers(1, max_ant + 1)))
           for _ in range(L)]
    targets = []
    while len(targets) < num_targets:
        pos = rng.uniform(-150, 150, 2)
        if all(math.dist(pos, a.position_m) > 20 for a in aps):
            targets.append(TargetState(pos, rng.uniform(5, 120), rng.uniform(0, 2 * math.pi),
                                       rng.uniform(0.5, 2.0)))
    return Scene(wave, tuple(aps), tuple(targets), rng_seed=int(rng.integers(2**63)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

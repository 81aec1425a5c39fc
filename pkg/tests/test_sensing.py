import itertools
import math

import numpy as np
import pytest

from cfsense.scene import (
    SPEED_OF_LIGHT, ApNode, Scene, SceneError, TargetState, WaveformConfig, rcs_draws,
    reference_scene, synthesize_echo, target_factors, with_snr,
)
from cfsense.sensing import (
    AssociationError, CpConfig, SenseConfig, associate, build_fusion, coarse_range, cp_decompose,
    estimate_noise_variance, localization_objective, localization_trace, mrc_weights,
    music_refine, music_spectrum, reconstruct, sense, velocity_trace,
)
from cfsense.sensing.ranging import DegenerateInputError, delay_steering, unambiguous_range_m

WAVE = WaveformConfig()


def corr(a, b):
    return abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))


def tone(r, n=128, wave=WAVE):
    return delay_steering([r], n, wave)[0]


def small_scene(positions, *, nc=64, m=64, antennas=(8, 8, 8, 8), seed=7, speed=100.0,
                heading=0.7):
    wave = WaveformConfig(num_subcarriers=nc, num_symbols=m)
    corners = [(0.0, 0.0), (350.0, 0.0), (0.0, 350.0), (350.0, 350.0)]
    aps = [ApNode(p, n) for p, n in zip(corners, antennas)]
    targets = [TargetState(p, speed + 5 * i, heading + 0.4 * i) for i, p in enumerate(positions)]
    return Scene(wave, tuple(aps), tuple(targets), rng_seed=seed)


def true_fusion(scene, u, sigma=None):
    rcs = rcs_draws(scene)
    cols = [target_factors(scene, l, u, rcs[u]) for l in range(scene.num_aps)]
    sigma = [1.0] * scene.num_aps if sigma is None else sigma
    return build_fusion([c[0] for c in cols], [c[1] for c in cols], [c[2] for c in cols], sigma)


# --- CP decomposition -------------------------------------------------------

def test_cp_rank_one_exact():
    scene = small_scene([(170.0, 160.0)])
    y = synthesize_echo(scene, 0, noiseless=True)
    f = cp_decompose(y, 1)
    assert f.fit_residual < 1e-8
    a, d, dop = target_factors(scene, 0, 0, rcs_draws(scene)[0])
    for got, want in zip((f.u_mat[:, 0], f.v_mat[:, 0], f.w_mat[:, 0]), (a, d, dop)):
        assert corr(got, want) >= 1 - 1e-8


def test_cp_two_targets_correlation():
    scene = small_scene([(135.0, 205.0), (215.0, 150.0)])
    y = synthesize_echo(scene, 1, noiseless=True)
    f = cp_decompose(y, 2)
    assert f.fit_residual <= 1e-6
    rcs = rcs_draws(scene)
    truth = [target_factors(scene, 1, u, rcs[u]) for u in range(2)]
    best = max(itertools.permutations(range(2)),
               key=lambda p: sum(corr(f.v_mat[:, p[u]], truth[u][1]) for u in range(2)))
    for u in range(2):
        k = best[u]
        assert corr(f.u_mat[:, k], truth[u][0]) >= 0.999
        assert corr(f.v_mat[:, k], truth[u][1]) >= 0.999
        assert corr(f.w_mat[:, k], truth[u][2]) >= 0.999


def test_cp_reconstruction_matches_reported_fit():
    scene = with_snr(small_scene([(135.0, 205.0), (215.0, 150.0)]), 10.0)
    y = synthesize_echo(scene, 2).data
    f = cp_decompose(y, 2)
    fit = np.linalg.norm(y - reconstruct(f.u_mat, f.v_mat, f.w_mat)) / np.linalg.norm(y)
    assert abs(fit - f.fit_residual) <= 1e-10


def test_cp_fit_monotone_at_zero_db():
    scene = with_snr(reference_scene(3), 0.0)
    f = cp_decompose(synthesize_echo(scene, 0), 3)
    hist = np.array(f.fit_history)
    assert np.all(np.diff(hist) <= 1e-12)


def test_cp_deterministic_and_degenerate():
    scene = with_snr(small_scene([(140.0, 150.0)]), 5.0)
    y = synthesize_echo(scene, 0)
    a, b = cp_decompose(y, 1, CpConfig(seed=3)), cp_decompose(y, 1, CpConfig(seed=3))
    assert np.array_equal(a.u_mat, b.u_mat)
    with pytest.raises(ValueError):
        cp_decompose(np.zeros((2, 3, 4)), 1)
    with pytest.raises(ValueError):
        cp_decompose(y, 0)


# --- ranging ----------------------------------------------------------------

def test_unambiguous_range():
    assert unambiguous_range_m(WAVE) == pytest.approx(SPEED_OF_LIGHT / 60e3)
    assert unambiguous_range_m(WAVE) == pytest.approx(4996.5, abs=0.1)
    # farthest AP-target distance in the reference geometry
    assert unambiguous_range_m(WAVE) > math.hypot(350, 350)


def test_coarse_range_interval_contains_truth():
    r, (lo, hi) = coarse_range(tone(150.0), WAVE, 512)
    assert lo <= 150.0 <= hi
    q = SPEED_OF_LIGHT / (2 * 30e3 * 512)
    assert hi - lo == pytest.approx(2 * q)


def test_coarse_range_on_grid():
    q = SPEED_OF_LIGHT / (2 * 30e3 * 512)
    r, _ = coarse_range(tone(31 * q), WAVE, 512)
    assert abs(r - 31 * q) <= q


def test_coarse_range_errors():
    with pytest.raises(DegenerateInputError):
        coarse_range(np.zeros(16), WAVE)
    with pytest.raises(ValueError):
        coarse_range(tone(10.0, 16), WAVE, 8)


def test_music_refine_fine_range():
    v = tone(150.37)
    _, interval = coarse_range(v, WAVE)
    assert abs(music_refine(v, WAVE, interval, 0.01) - 150.37) <= 0.01


def test_music_spectrum_contrast():
    # noiseless: the peak at the truth towers over +-5 m
    v = tone(150.37)
    p = music_spectrum(v, [150.37, 145.37, 155.37], WAVE)
    assert 10 * np.log10(p[0] / p[1]) > 20
    assert 10 * np.log10(p[0] / p[2]) > 20


def test_music_scale_invariance():
    rng = np.random.default_rng(4)
    v = tone(88.8) + 0.01 * (rng.standard_normal(128) + 1j * rng.standard_normal(128))
    _, interval = coarse_range(v, WAVE)
    base = music_refine(v, WAVE, interval)
    assert music_refine((3 - 4j) * v, WAVE, interval) == base


def test_music_empty_interval():
    with pytest.raises(ValueError):
        music_refine(tone(5.0), WAVE, (10.0, 10.0))


# --- noise estimate and weights ---------------------------------------------

def test_noise_estimate_pure_tone():
    x = 2.5 * np.exp(1j * (0.37 * np.arange(128) + 0.4))
    assert estimate_noise_variance(x) <= 1e-12
    assert estimate_noise_variance(x) > 0


def _mc_noise(var, seeds=100):
    out = []
    for s in range(seeds):
        rng = np.random.default_rng(s)
        w = rng.standard_normal((128, 2)) @ np.array([1, 1j]) * math.sqrt(var / 2)
        out.append(estimate_noise_variance(np.exp(1j * 0.91 * np.arange(128)) + w))
    return np.array(out)


def test_noise_estimate_monte_carlo():
    est = _mc_noise(0.01)
    assert abs(np.median(est) - 0.01) <= 0.3 * 0.01
    ratio = np.median(_mc_noise(0.02) / est)
    assert 1.6 <= ratio <= 2.4


def test_noise_estimate_short():
    with pytest.raises(ValueError):
        estimate_noise_variance(np.ones(7))


def test_mrc_weights():
    assert np.allclose(mrc_weights([0.3] * 4), 0.25)
    w = mrc_weights([1.0, 1.0, 10.0])
    assert w[2] == pytest.approx(w[0] / 10)
    assert w.sum() == pytest.approx(1, abs=1e-12)
    assert np.allclose(mrc_weights([2.0, 6.0, 7.0]), mrc_weights([20.0, 60.0, 70.0]))


def test_fusion_padding_and_weights():
    scene = small_scene([(150.0, 170.0)], antennas=(4, 8, 6, 8))
    fu = true_fusion(scene, 0, sigma=[1.0, 2.0, 1.0, 4.0])
    assert fu.psi == 8
    assert np.all(fu.k_tilde[0, 4:] == 0) and np.all(fu.k_tilde[2, 6:] == 0)
    assert np.all(fu.k_tilde[0, :4] != 0)
    assert fu.weights.sum() == pytest.approx(1, abs=1e-9)
    with pytest.raises(ValueError):
        build_fusion([np.ones(4)], [np.ones(8)], [np.ones(8)])


# --- fusion objectives --------------------------------------------------------

def test_localization_trace_peak_at_truth():
    scene = small_scene([(150.0, 170.0)], antennas=(4, 8, 6, 8))
    fu = true_fusion(scene, 0, sigma=[1.0, 2.0, 1.0, 4.0])
    t = scene.targets[0].position_m
    peak = np.sum(fu.weights * (64 + np.array([4, 8, 6, 8])))
    assert localization_trace(np.array([t]), fu, scene.ap_positions, scene.waveform)[0] == \
        pytest.approx(peak, rel=1e-10)
    assert fu.peak_trace == pytest.approx(peak, rel=1e-12)
    f0 = localization_objective(t, fu, scene.ap_positions, scene.waveform)
    f1 = localization_objective(np.add(t, 5), fu, scene.ap_positions, scene.waveform)
    assert f0 <= f1


def test_localization_maximizer_and_scale_invariance():
    scene = small_scene([(180.0, 140.0)])
    fu = true_fusion(scene, 0)
    t = np.array(scene.targets[0].position_m)
    grid = t + np.stack(np.meshgrid(np.linspace(-3, 3, 13), np.linspace(-3, 3, 13)), -1).reshape(-1, 2)
    tr = localization_trace(grid, fu, scene.ap_positions, scene.waveform)
    assert np.argmax(tr) == len(grid) // 2            # centre node is the truth
    tr3 = localization_trace(grid, fu.scaled(3.0), scene.ap_positions, scene.waveform)
    assert np.argmax(tr3) == np.argmax(tr)
    assert np.allclose(tr3, 3 * tr)


def test_localization_symmetric_under_ap_swap():
    scene = small_scene([(175.0, 175.0)])
    fu = true_fusion(scene, 0)
    swapped = build_fusion(*[[row for row in m[[1, 0, 2, 3]]] for m in (
        fu.k_tilde, fu.s_tilde, fu.t_tilde)], sigma_estimates=[1.0] * 4)
    pts = np.array([[160.0, 181.0], [175.0, 175.0]])
    ap = scene.ap_positions
    a = localization_trace(pts, fu, ap, scene.waveform)
    b = localization_trace(pts, swapped, ap[[1, 0, 2, 3]], scene.waveform)
    assert np.allclose(a * 4, b * 4)


def test_velocity_trace_truth_and_invariances():
    scene = small_scene([(150.0, 190.0)])
    fu = true_fusion(scene, 0, sigma=[1.0, 3.0, 2.0, 1.0])
    tgt = scene.targets[0]
    ap, wave = scene.ap_positions, scene.waveform
    truth = np.array([[tgt.speed_mps, tgt.heading_rad]])
    assert velocity_trace(truth, fu, tgt.position_m, ap, wave)[0] == pytest.approx(64, rel=1e-10)
    near = truth + np.array([[1.0, 0.0], [0.0, 0.05], [-1.0, -0.05]])
    assert np.all(velocity_trace(near, fu, tgt.position_m, ap, wave) < 64)
    shifted = truth + np.array([[0.0, 2 * math.pi]])
    assert velocity_trace(shifted, fu, tgt.position_m, ap, wave)[0] == \
        pytest.approx(velocity_trace(truth, fu, tgt.position_m, ap, wave)[0], rel=1e-12)


def test_velocity_zero_speed_heading_free():
    scene = small_scene([(150.0, 190.0)], speed=0.0, heading=0.0)
    scene = scene.replace(targets=(TargetState((150.0, 190.0), 0.0, 0.0),))
    fu = true_fusion(scene, 0)
    cands = np.array([[0.0, th] for th in np.linspace(0, 6, 7)])
    vals = velocity_trace(cands, fu, (150.0, 190.0), scene.ap_positions, scene.waveform)
    assert np.allclose(vals, vals[0], rtol=1e-12)
    assert vals[0] == pytest.approx(64, rel=1e-10)


# --- association --------------------------------------------------------------

def _factors(scene, snr=None):
    sc = scene if snr is None else with_snr(scene, snr)
    return [cp_decompose(synthesize_echo(sc, l, noiseless=snr is None), sc.num_targets)
            for l in range(sc.num_aps)]


def _true_ranges(scene):
    return np.array([[math.dist(ap.position_m, t.position_m) for t in scene.targets]
                     for ap in scene.aps])


def test_associate_single_target():
    scene = small_scene([(163.0, 181.0)])
    out = associate(_factors(scene), scene.ap_positions, scene.waveform)
    assert all(np.array_equal(p, [0]) for p in out.permutations)
    assert out.association_cost < 1e-3
    assert np.allclose(out.ranges_m[:, 0], _true_ranges(scene)[:, 0], atol=0.05)


def test_associate_two_targets_noiseless():
    scene = small_scene([(135.0, 205.0), (215.0, 150.0)])
    out = associate(_factors(scene), scene.ap_positions, scene.waveform)
    truth = _true_ranges(scene)
    # each associated column must reproduce one true target's ranges at every AP
    hits = [k for u in range(2) for k in range(2)
            if np.allclose(out.ranges_m[:, u], truth[:, k], atol=0.05)]
    assert sorted(hits) == [0, 1]
    assert out.association_cost < 1e-3
    for p in out.permutations:
        assert sorted(p.tolist()) == [0, 1]


def test_associate_compensates_swapped_columns():
    scene = small_scene([(135.0, 205.0), (215.0, 150.0)])
    factors = _factors(scene)
    base = associate(factors, scene.ap_positions, scene.waveform)
    factors[2] = factors[2].permuted([1, 0])
    swapped = associate(factors, scene.ap_positions, scene.waveform)
    assert np.array_equal(swapped.permutations[2], base.permutations[2][::-1])
    assert np.allclose(swapped.ranges_m, base.ranges_m)


def test_associate_budget():
    scene = small_scene([(135.0, 205.0), (215.0, 150.0)])
    with pytest.raises(AssociationError):
        associate(_factors(scene), scene.ap_positions, scene.waveform, max_targets=1)


# --- pipeline -----------------------------------------------------------------

def _match(scene, est):
    return min(scene.targets, key=lambda t: math.dist(t.position_m, est.position_m))


def test_pipeline_noiseless_reference():
    scene = with_snr(reference_scene(3), None)
    report = sense(scene)
    assert len(report.estimates) == 3
    matched = {id(_match(scene, e)) for e in report.estimates}
    assert len(matched) == 3
    for e in report.estimates:
        t = _match(scene, e)
        assert math.dist(e.position_m, t.position_m) < 0.1
        assert abs(e.speed_mps - t.speed_mps) < 0.5
        assert e.detected
        # local refinement never loses to the global stage on the noiseless objective
        assert math.dist(e.position_m, t.position_m) <= math.dist(e.coarse_position_m, t.position_m)


def test_pipeline_zero_db_detects_all():
    scene = with_snr(reference_scene(3), 0.0)
    report = sense(scene)
    assert all(e.detected for e in report.estimates)
    assert len({id(_match(scene, e)) for e in report.estimates}) == 3
    assert set(report.diagnostics) >= {"fit_residuals", "association_cost", "ranges_m"}


def test_pipeline_bounds_and_errors():
    scene = with_snr(reference_scene(3), 10.0)
    cfg = SenseConfig()
    for e in sense(scene, config=cfg).estimates:
        (x0, x1), (y0, y1) = cfg.position_bounds
        assert x0 <= e.position_m[0] <= x1 and y0 <= e.position_m[1] <= y1
        assert 0 <= e.speed_mps <= cfg.v_max
    with pytest.raises(ValueError):
        sense(scene, tensors=[synthesize_echo(scene, 0)])
    with pytest.raises(SceneError):
        scene.replace(aps=scene.aps[:1])

import csv
import io
import json
import math

import numpy as np
import pytest

from cfsense.crb import crb_pair
from cfsense.experiment import (
    COLUMNS, ExperimentPlan, MetricRow, TrialRecord, _score, aggregate, collect_trials,
    emit_results, format_rows, plan_from_dict, run_experiment, trial_seed,
)
from cfsense.scene import WaveformConfig, reference_scene, with_snr


@pytest.fixture(scope="module")
def scene():
    return reference_scene(3, num_subcarriers=64, num_symbols=64)


def test_waveform_defaults():
    w = WaveformConfig()
    assert (w.carrier_freq_hz, w.subcarrier_spacing_hz, w.num_subcarriers, w.num_symbols) == \
        (3.5e9, 30e3, 128, 128)


def test_plan_validation(scene):
    with pytest.raises(ValueError):
        ExperimentPlan(scene, num_trials=0)
    with pytest.raises(ValueError):
        ExperimentPlan(scene, snr_grid_db=[])
    with pytest.raises(ValueError):
        ExperimentPlan(scene, methods=["music"])
    with pytest.raises(ValueError):
        ExperimentPlan(scene, master_seed=-1)
    plan = ExperimentPlan(scene)
    assert plan.snr_grid_db == tuple(float(s) for s in range(-10, 31, 5))


def test_trial_seed_is_pure():
    assert trial_seed(7, 3) == trial_seed(7, 3)
    assert len({trial_seed(7, k) for k in range(100)}) == 100
    assert trial_seed(7, 3) != trial_seed(8, 3)
    assert 0 <= trial_seed(2**64 - 1, 0) < 2**64


def test_score_assignment(scene):
    truth = [t for t in scene.targets]
    # estimates listed in reverse order, each 1 m east of its target
    est = [((t.position_m[0] + 1.0, t.position_m[1]), t.speed_mps + 2.0, t.heading_rad - 0.1)
           for t in reversed(truth)]
    rec = _score(scene, "x", 0.0, 0, est)
    assert np.allclose(rec.position_errors, 1.0)
    assert np.allclose(rec.speed_errors, 2.0)
    assert np.allclose(rec.heading_errors, 0.1)
    # heading errors wrap around the circle
    est2 = [(t.position_m, t.speed_mps, t.heading_rad + 2 * math.pi - 0.05) for t in truth]
    assert np.allclose(_score(scene, "x", 0.0, 0, est2).heading_errors, 0.05)
    with pytest.raises(ArithmeticError):
        _score(scene, "x", 0.0, 0, [((math.nan, 0.0), 0.0, 0.0)] * 3)


def test_aggregate_armse_oracle(scene):
    plan = ExperimentPlan(scene, snr_grid_db=[10.0], num_trials=3, methods=["mle"])
    errs = np.array([[1.0, 2.0, 0.0], [3.0, 0.0, 0.0], [0.0, 2.0, 3.0]])
    recs = [TrialRecord("mle", 10.0, k, e, 2 * e, 0 * e) for k, e in enumerate(errs)]
    (row,) = aggregate(recs, plan)
    # per-target RMSE over trials, then the mean over targets
    rmse = [math.sqrt((1 + 9 + 0) / 3), math.sqrt((4 + 0 + 4) / 3), math.sqrt((0 + 0 + 9) / 3)]
    assert row.armse_position_m == pytest.approx(sum(rmse) / 3, rel=1e-14)
    assert row.armse_speed == pytest.approx(2 * sum(rmse) / 3, rel=1e-14)
    assert row.trials_used == 3
    ref = [math.sqrt(crb_pair(with_snr(scene, 10.0), u).trace_position) for u in range(3)]
    assert row.crb_sqrt_position_m == pytest.approx(np.mean(ref), rel=1e-12)


def test_noiseless_single_trial(scene):
    plan = ExperimentPlan(scene, snr_grid_db=[math.inf], num_trials=1, methods=["sfo_abc_bfgs"])
    (row,) = run_experiment(plan)
    assert row.armse_position_m < 0.1
    assert row.trials_used == 1
    assert row.crb_sqrt_position_m == 0.0


def test_failed_trials_are_counted(scene):
    # a one-target association budget makes every three-target first stage fail
    plan = plan_from_dict({"snr_grid_db": [10], "num_trials": 2, "methods": ["mle"],
                           "sense": {"association_max_targets": 1}}, scene)
    records, failures = collect_trials(plan)
    assert records == [] and failures == {("mle", 10.0): 2}
    (row,) = aggregate(records, plan)
    assert row.trials_used == 0 and math.isnan(row.armse_position_m)


def _row(**kw):
    base = dict(method="sfo_abc_bfgs", snr_db=10.0, armse_position_m=0.123456789123,
                armse_speed=1 / 3, armse_heading=math.nan, crb_sqrt_position_m=2e-5,
                crb_sqrt_velocity=12345.6789012, trials_used=49)
    base.update(kw)
    return MetricRow(**base)


def test_csv_roundtrip(tmp_path):
    rows = [_row(), _row(method="mle", snr_db=-5.0)]
    path = emit_results(rows, "csv", tmp_path / "r.csv")
    text = path.read_text()
    assert text.endswith("\n")
    parsed = list(csv.DictReader(io.StringIO(text)))
    assert tuple(parsed[0]) == COLUMNS
    for got, want in zip(parsed, rows):
        for c in COLUMNS:
            w = getattr(want, c)
            if isinstance(w, str):
                assert got[c] == w
            elif isinstance(w, int):
                assert int(got[c]) == w
            elif math.isnan(w):
                assert math.isnan(float(got[c]))
            else:
                assert float(got[c]) == pytest.approx(w, rel=5e-9)
    assert parsed[0]["armse_position_m"] == "0.123456789"


def test_one_row_csv():
    lines = format_rows([_row()], "csv").splitlines()
    assert len(lines) == 2


def test_json_output(tmp_path):
    path = emit_results([_row()], "json", tmp_path / "r.json", metadata={"master_seed": 1})
    doc = json.loads(path.read_text())
    assert list(doc["rows"][0]) == list(COLUMNS)
    assert doc["rows"][0]["armse_heading"] is None
    assert doc["rows"][0]["armse_speed"] == 0.333333333
    assert doc["metadata"] == {"master_seed": 1}


def test_emit_errors(tmp_path):
    with pytest.raises(ValueError):
        format_rows([], "csv")
    with pytest.raises(ValueError):
        format_rows([_row()], "xml")
    with pytest.raises(OSError, match="nowhere"):
        emit_results([_row()], "csv", tmp_path / "nowhere" / "r.csv")


def test_run_twice_identical(scene, tmp_path):
    plan = ExperimentPlan(scene, snr_grid_db=[20.0], num_trials=2, methods=["sfo_abc", "mle"])
    a = format_rows(run_experiment(plan), "csv")
    b = format_rows(run_experiment(plan), "csv")
    assert a == b

import csv
import json
import os

import numpy as np
import pytest

from qamis.estimators import CSV_COLUMNS
from qamis.experiment import (AnalysisParams, EnsembleParams, ExperimentConfig,
                              FitDiverged, InsufficientSamples, SSEParams,
                              aggregate, bootstrap_error, emit_figures,
                              fit_logarithmic, fit_scaling, fit_stretched,
                              instance_seed_for, run_ensemble, scaling_steps,
                              write_result_csv)
from qamis.estimators import MeasurementRecord


def tiny_config(seed=5):
    return ExperimentConfig(
        ensemble=EnsembleParams(sizes=(8,), samples=2, degree=3.0, seed=seed),
        sse=SSEParams(mcs=60, therm=60, bins=6, grid_low=0.2, grid_high=0.8,
                      replicas=6, m_init=16),
        analysis=AnalysisParams(bootstrap=50, seed=3))


def read_bytes_tree(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in sorted(files):
            p = os.path.join(dirpath, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


def test_config_ini_roundtrip(tmp_path):
    ini = tmp_path / "exp.ini"
    ini.write_text("""
[ensemble]
sizes = 8 10
samples = 3
degree = 2.5
seed = 42

[sse]
mcs = 500
replicas = 12
grid_low = 0.1
grid_high = 0.9
start = random

[analysis]
bootstrap = 200
""")
    cfg = ExperimentConfig.from_ini(str(ini))
    assert cfg.ensemble.sizes == (8, 10)
    assert cfg.ensemble.samples == 3
    assert cfg.sse.replicas == 12
    assert cfg.sse.start == "random"
    assert cfg.analysis.bootstrap == 200
    assert cfg.digest() == ExperimentConfig.from_ini(str(ini)).digest()
    assert cfg.digest() != tiny_config().digest()


def test_instance_seed_for_is_stable():
    a = instance_seed_for(7, 10, 3)
    assert a == instance_seed_for(7, 10, 3)
    assert a != instance_seed_for(7, 10, 4)
    assert a != instance_seed_for(8, 10, 3)


def test_run_ensemble_smoke_and_schema(tmp_path):
    cfg = tiny_config()
    out = str(tmp_path / "store")
    manifest = run_ensemble(cfg, out, workers=1)
    assert len(manifest["samples"]) == 2
    res_dir = os.path.join(out, "results", cfg.digest())
    files = sorted(os.listdir(res_dir))
    assert files == ["N008_s00000.csv", "N008_s00001.csv"]
    with open(os.path.join(res_dir, files[0])) as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0].keys()) == CSV_COLUMNS
    assert len(rows) == 6  # one per grid point
    lams = [float(r["lambda"]) for r in rows]
    assert lams == sorted(lams)
    for r in rows:
        assert 0.0 <= float(r["p_ans"]) <= 1.0
        assert -1.0 <= float(r["q"]) <= 1.0
        assert int(r["samples"]) == 2 * cfg.sse.mcs
    # instances written alongside
    assert sorted(os.listdir(os.path.join(out, "instances"))) == \
        ["N008_s00000.json", "N008_s00001.json"]


def test_run_ensemble_is_deterministic_and_append_only(tmp_path):
    cfg = tiny_config()
    out1 = str(tmp_path / "a")
    out2 = str(tmp_path / "b")
    run_ensemble(cfg, out1, workers=1)
    run_ensemble(cfg, out2, workers=1)
    t1 = read_bytes_tree(os.path.join(out1, "results"))
    t2 = read_bytes_tree(os.path.join(out2, "results"))
    assert t1 == t2
    # rerun into the same store: files untouched, marked skipped
    before = read_bytes_tree(os.path.join(out1, "results"))
    manifest = run_ensemble(cfg, out1, workers=1)
    assert all(f["skipped"] for f in manifest["samples"])
    assert read_bytes_tree(os.path.join(out1, "results")) == before


def test_run_ensemble_worker_count_invariance(tmp_path):
    cfg = tiny_config(seed=6)
    out1 = str(tmp_path / "w1")
    out2 = str(tmp_path / "w2")
    run_ensemble(cfg, out1, workers=1)
    run_ensemble(cfg, out2, workers=2)
    assert read_bytes_tree(os.path.join(out1, "results")) == \
        read_bytes_tree(os.path.join(out2, "results"))


def _synthetic_store(tmp_path, values_by_instance, lam_grid=(0.2, 0.5, 0.8)):
    """Write a fake result store with given chiF values (other cols fixed)."""
    store = str(tmp_path / "store")
    res_dir = os.path.join(store, "results", "synthetic0000")
    os.makedirs(res_dir, exist_ok=True)
    for inst_id, chif in values_by_instance.items():
        n = int(inst_id.split("_")[0][1:])
        recs = []
        for lam in lam_grid:
            rec = MeasurementRecord.empty(inst_id, lam, 3.5 * n, n, 1.0, 2)
            recs.append(rec)
        path = os.path.join(res_dir, f"{inst_id}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for lam, rec in zip(lam_grid, recs):
                w.writerow([inst_id, f"{lam}", "0.5", "0.01",
                            f"{chif * (1 - abs(lam - 0.5))}", "0.1",
                            "0.25", "0.01", "-1.0", "0.01", "10", "100"])
    return store


def test_aggregate_zero_spread_and_validation(tmp_path):
    store = _synthetic_store(tmp_path, {"N010_s00000": 2.0, "N010_s00001": 2.0})
    rows, peaks = aggregate(store, bootstrap_b=100, seed=1)
    for r in rows:
        assert r["chiF_err"] == pytest.approx(0.0, abs=1e-12)
        assert r["q_err"] == pytest.approx(0.0, abs=1e-12)
    assert peaks[0]["lambda_peak"] == 0.5
    with pytest.raises(InsufficientSamples):
        aggregate(store, bootstrap_b=1)
    store2 = _synthetic_store(tmp_path / "one", {"N010_s00000": 2.0})
    with pytest.raises(InsufficientSamples):
        aggregate(store2, bootstrap_b=100)


def test_bootstrap_error_tracks_standard_error():
    rng = np.random.default_rng(8)
    sigma, n = 2.0, 400
    values = rng.normal(0.0, sigma, size=n)
    err = bootstrap_error(values, 2000, np.random.default_rng(9))
    assert err == pytest.approx(sigma / np.sqrt(n), rel=0.15)


def test_fit_recovers_synthetic_exponent():
    sizes = [20, 40, 60, 80, 100, 120]
    steps = {}
    rng = np.random.default_rng(11)
    for n in sizes:
        med = np.exp(2.0 * n ** 0.5 + 1.0)
        # symmetric spread around the median keeps the median exact
        steps[n] = np.maximum(1, med * rng.uniform(0.8, 1.25, size=801)).astype(np.int64)
        steps[n][0] = int(med)
    stretched, logfit = fit_scaling(steps, bootstrap_b=200, seed=12)
    a, b, c = stretched.params
    assert b == pytest.approx(0.5, abs=0.02)
    assert stretched.residual_sum < logfit.residual_sum


def test_fit_diverged_on_bad_input():
    with pytest.raises(FitDiverged):
        fit_stretched([20, 40, 60, 80], [1.0, np.nan, 2.0, 3.0])
    with pytest.raises(FitDiverged):
        fit_logarithmic([20, 40, 60, 80], [np.inf, 1.0, 1.0, 1.0])


def test_fit_scaling_needs_four_sizes():
    with pytest.raises(InsufficientSamples):
        fit_scaling({20: np.array([3, 4]), 40: np.array([5, 6])})


def test_scaling_steps_deterministic():
    a = scaling_steps((12, 16), 20, 3.0, seed=5, ensemble="er")
    b = scaling_steps((12, 16), 20, 3.0, seed=5, ensemble="er")
    assert all(np.array_equal(a[n], b[n]) for n in a)
    with pytest.raises(ValueError):
        scaling_steps((12,), 5, 3.0, seed=1, ensemble="other")


def test_emit_figures_outputs(tmp_path):
    store = _synthetic_store(tmp_path, {
        "N010_s00000": 2.0, "N010_s00001": 2.2,
        "N020_s00000": 3.0, "N020_s00001": 3.1})
    fig_dir = str(tmp_path / "figs")
    emit_figures(store, fig_dir, bootstrap_b=100, seed=4)
    names = sorted(os.listdir(fig_dir))
    assert names == ["fig_chif_over_n_mean.csv", "fig_chif_peaks.csv",
                     "fig_chif_samples.csv", "fig_dq_dlambda.csv",
                     "fig_fans_samples.csv", "fig_q_mean.csv",
                     "fig_q_samples.csv", "fig_sans_over_n_mean.csv"]
    with open(os.path.join(fig_dir, "fig_dq_dlambda.csv")) as fh:
        rows = list(csv.DictReader(fh))
    assert rows and "grid_spacing" in rows[0]
    for r in rows:
        assert float(r["grid_spacing"]) == pytest.approx(0.3)


def test_emit_figures_rejects_nonuniform_grid(tmp_path):
    store = _synthetic_store(tmp_path, {"N010_s00000": 2.0, "N010_s00001": 2.1},
                             lam_grid=(0.2, 0.3, 0.8))
    with pytest.raises(ValueError):
        emit_figures(store, str(tmp_path / "figs"), bootstrap_b=50, seed=4)

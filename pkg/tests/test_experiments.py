import json

import numpy as np
import pytest

from mdcgan import data as dm
from mdcgan import experiments as ex
from mdcgan import models as M
from mdcgan.core import make_rng

FAST = {"iterations": 5, "min_iterations": 0, "samples": 2}


def small_spec(**kw):
    base = dict(dataset={"generator": "mackey-glass", "length": 400, "seed": 0},
                n_train=300, n_test=80, seeds=[0], config=dict(FAST), horizon=10, stride=5)
    base.update(kw)
    return ex.ExperimentSpec(**base)


# ---------------------------------------------------------------- metrics and labels

def test_mse_and_errors():
    assert ex.mse([1.0, 2.0], [1.0, 4.0]) == 2.0
    with pytest.raises(ValueError):
        ex.mse([], [])
    with pytest.raises(ValueError):
        ex.mse([1.0], [1.0, 2.0])


def test_nll_stats_single_gaussian():
    from mdcgan import mixture as mx
    p = mx.GMMParams(np.ones((2, 1)), np.ones((2, 1)), np.zeros((2, 1)))
    mean, std = ex.nll_stats(p, np.array([0.0, 2.0]))
    half = 0.5 * np.log(2 * np.pi)
    assert mean == pytest.approx(half + 1.0)
    assert std == pytest.approx(1.0)


def test_model_labels_and_parsing():
    assert [ex.model_label(k) for k in ex.DEFAULT_MODELS] == ["AR(0)", "AR(5)", "SNN", "CGAN", "MDN", "MD-CGAN"]
    assert ex.parse_model("ar12") == ("ar", {"order": 12})
    with pytest.raises(ValueError):
        ex.parse_model("lstm")


def test_spec_validation_and_round_trip():
    spec = small_spec()
    assert ex.ExperimentSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        ex.ExperimentSpec.from_dict({"unknown": 1})
    with pytest.raises(ValueError):
        small_spec(noise=[-0.1]).validate()
    with pytest.raises(ValueError):
        small_spec(config={"bogus": 1}).validate()


# ---------------------------------------------------------------- tables

def table():
    return ex.ResultsTable("t", "mse", ["A", "B"], ["0%", "5%"],
                           {"A": {"0%": 0.1, "5%": 1 / 3}, "B": {"0%": 2e-17, "5%": 7.0}},
                           {"A": {"0%": 0.01, "5%": 0.02}, "B": {"0%": 0.0, "5%": 1.5}},
                           None, {"experiment": "noise_sweep"})


def test_results_json_round_trip(tmp_path):
    t = table()
    jpath, cpath = t.write(tmp_path, "res")
    back = ex.load_results(jpath)
    assert back == t
    assert cpath.read_text().splitlines()[0] == "model,0%,5%"


def test_text_and_csv_reprint_values_exactly():
    t = table()
    for text in (t.format_text(), t.to_csv()):
        for row in t.rows:
            for col in t.columns:
                assert repr(t.cells[row][col]) in text
                assert repr(t.dispersion[row][col]) in text


def test_results_rejects_foreign_documents():
    with pytest.raises(ValueError):
        ex.ResultsTable.from_json({"format": "other"})
    with pytest.raises(ValueError):
        ex.ResultsTable.from_json({"format": ex.RESULTS_FORMAT, "version": 1})


# ---------------------------------------------------------------- noise sweep

def test_default_sweep_layout():
    t = ex.noise_sweep(small_spec())
    assert t.rows == ["AR(0)", "AR(5)", "SNN", "CGAN", "MDN", "MD-CGAN"]
    assert t.columns == ["0%", "5%", "10%", "15%", "20%", "25%", "30%"]
    assert all(np.isfinite(t.cells[r][c]) for r in t.rows for c in t.columns)


def test_single_model_and_single_noise_filters():
    t = ex.noise_sweep(small_spec(models=["ar0"], noise=[0.0]))
    assert t.rows == ["AR(0)"] and t.columns == ["0%"]
    prep = ex.prepare(small_spec())
    direct = ex.mse(prep.split.test.inputs[:, -1], prep.split.test.targets)
    assert t.cells["AR(0)"]["0%"] == direct


def test_sweep_noise_is_shared_across_models():
    spec = small_spec(models=["ar0", "ar5"], noise=[0.3])
    a = ex._noise_rng(spec, 0, 0).standard_normal(4)
    b = ex._noise_rng(spec, 0, 0).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, ex._noise_rng(spec, 1, 0).standard_normal(4))


def test_sweep_median_over_seeds():
    t = ex.noise_sweep(small_spec(models=["snn"], noise=[0.0], seeds=[0, 1, 2]))
    vals = t.per_seed["SNN"]["0%"]
    assert len(vals) == 3 and t.cells["SNN"]["0%"] == float(np.median(vals))


def test_parallel_matches_serial():
    spec = small_spec(models=["ar5", "mdn"], noise=[0.0, 0.1], seeds=[0, 1])
    assert ex.noise_sweep(spec, jobs=1).to_json() == ex.noise_sweep(spec, jobs=2).to_json()


def test_failing_cell_is_named(monkeypatch):
    def boom(kind, cfg):
        raise RuntimeError("bad cell")
    monkeypatch.setattr(ex, "make_forecaster", boom)
    with pytest.raises(ex.CellError, match=r"sweep cell \(snn, seed=0\)"):
        ex.noise_sweep(small_spec(models=["snn"]))


# ---------------------------------------------------------------- horizons

def test_recursive_forecast_ar0_repeats_last_value():
    f = M.AR(M.TrainConfig(order=0)).fit(dm.make_windows(np.arange(20.0), 5))
    assert np.array_equal(ex.recursive_forecast(f, np.array([1.0, 2, 3, 4, 5]), 4), [5.0] * 4)


def test_recursive_forecast_matches_manual_loop():
    y = dm.gen_gbm(300, vol=0.02, seed=1).values
    f = M.AR(M.TrainConfig(order=2)).fit(dm.make_windows(y, 5))
    w = y[100:105].copy()
    manual = []
    for _ in range(6):
        nxt = f.model.coef[0] + f.model.coef[1] * w[-1] + f.model.coef[2] * w[-2]
        manual.append(nxt)
        w = np.append(w[1:], nxt)
    assert np.allclose(ex.recursive_forecast(f, y[100:105], 6), manual, rtol=0, atol=1e-12)


def test_horizon_ar0_ratio_is_exactly_one():
    t = ex.horizon_eval(small_spec(models=["ar0", "ar5"]))
    assert t.cells["AR(0)"]["mackey-glass"] == 1.0
    assert t.metadata["windows"] == len(range(0, 80 - 10 + 1, 5))


def test_horizon_zero_baseline_is_an_error():
    spec = small_spec(dataset={"generator": "gbm", "length": 400, "seed": 0, "params": {"vol": 0.0}},
                      normalize=False, models=["ar0"])
    with pytest.raises(ValueError, match="baseline"):
        ex.horizon_eval(spec)


# ---------------------------------------------------------------- mixture order

def test_mixture_order_table_shape():
    spec = small_spec(dataset={"generator": "bimodal", "length": 400, "seed": 0}, m_values=[1, 2, 3])
    t = ex.mixture_order_study(spec)
    assert t.rows == ["m=1", "m=2", "m=3"] and t.columns == ["bimodal"]
    assert all(t.dispersion[r]["bimodal"] >= 0 for r in t.rows)
    assert t.metric == "nll"


# ---------------------------------------------------------------- provenance

def test_reproduce_is_bit_identical(tmp_path):
    spec = small_spec(models=["ar5", "mdcgan"], noise=[0.0, 0.2])
    t = ex.noise_sweep(spec)
    path, _ = t.write(tmp_path, "sweep")
    meta = json.loads(path.read_text())["metadata"]
    again = ex.reproduce(meta)
    assert again.cells == t.cells and again.per_seed == t.per_seed
    assert again.metadata["param_sha256"] == t.metadata["param_sha256"]


def test_provenance_records_configs_and_manifest():
    t = ex.noise_sweep(small_spec(models=["ar0"], noise=[0.0]))
    meta = t.metadata
    assert meta["experiment"] == "noise_sweep"
    assert meta["manifest"]["source"]["generator"] == "mackey-glass"
    assert meta["resolved_configs"]["ar0"]["order"] == 0
    assert len(meta["inputs_sha256"]) == 64


def test_reproduce_detects_changed_inputs():
    t = ex.noise_sweep(small_spec(models=["ar0"], noise=[0.0]))
    meta = dict(t.metadata, inputs_sha256="0" * 64)
    with pytest.raises(ValueError, match="differ"):
        ex.reproduce(meta)


# ---------------------------------------------------------------- density grids

def test_density_grid_slices_integrate_to_one(tmp_path):
    spec = small_spec()
    prep = ex.prepare(spec)
    f = M.MDN(M.TrainConfig(m=2, **FAST)).fit(prep.split.train)
    test = dm.WindowedDataset(prep.split.test.inputs[:5], prep.split.test.targets[:5], 5, 1,
                              prep.split.test.target_index[:5])
    grid = ex.density_grid(f, test, resolution=200, rng=make_rng(0))
    assert grid.density.shape == (5, grid.y.size)
    assert np.all(np.abs(grid.slice_integrals() - 1) < 1e-6)
    gpath, tpath = grid.write(tmp_path)
    header = gpath.read_text().splitlines()[0].split(",")
    assert header[0] == "t" and len(header) == grid.y.size + 1
    assert tpath.read_text().splitlines()[1].startswith(str(int(test.target_index[0])))

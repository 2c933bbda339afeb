"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line in ``RESULTS``; ``conftest.py`` prints
them at the end of the pytest run. Running this file directly prints the same
lines without pytest.

Criteria 2-4 and 9 share one Mackey-Glass noise sweep (three seeds, the full
0-30% grid). Criterion 8's Sunspot half runs only when ``MDCGAN_SUNSPOT_CSV``
names a CSV file (``MDCGAN_SUNSPOT_COLUMN`` selects the column, default 0).
"""
import json
import os
import shutil

import numpy as np
import pytest
from scipy import integrate

from mdcgan import data as dm
from mdcgan import experiments as ex
from mdcgan import mixture as mx
from mdcgan import models as M
from mdcgan.core import Adam, grad_check, make_rng

# ---------------------------------------------------------------- pinned tolerances
AR5_CLEAN_MSE_MAX = 1e-4
MDCGAN_CLEAN_MSE_MAX = 0.01
ORDERING_MIN_SEEDS = 2
GBM_RATIO_MAX = 1.1
GRAD_REL_ERR_MAX = 1e-4
QUADRATURE_TOL = 1e-6
SOFTMAX_TOL = 1e-12
ADAM_TOL = 1e-12
POOL_TOL = 1e-12
SEEDS = [0, 1, 2]

RESULTS: list[tuple[str, bool, str]] = []


def record(name: str, ok: bool, detail: str) -> None:
    RESULTS.append((name, bool(ok), detail))
    assert ok, f"{name}: {detail}"


def verdict_lines() -> list[str]:
    return [f"{'PASS' if ok else 'FAIL'}  {name}: {detail}" for name, ok, detail in RESULTS]


# ---------------------------------------------------------------- shared runs

@pytest.fixture(scope="module")
def mg_sweep(tmp_path_factory):
    spec = ex.ExperimentSpec(models=["snn", "mdn", "mdcgan"], seeds=SEEDS)
    table = ex.noise_sweep(spec, jobs=os.cpu_count() or 1)
    out = tmp_path_factory.mktemp("sweep")
    table.write(out, "sweep")
    return table, out


def ratio(table, row, seed_idx, hi="30%", lo="5%"):
    return table.per_seed[row][hi][seed_idx] / table.per_seed[row][lo][seed_idx]


# ---------------------------------------------------------------- criteria

def test_c1_ar5_clean_sanity():
    t = ex.noise_sweep(ex.ExperimentSpec(models=["ar5"], noise=[0.0], seeds=[0]))
    v = t.cells["AR(5)"]["0%"]
    record("C1 AR(5) clean Mackey-Glass MSE", v < AR5_CLEAN_MSE_MAX, f"{v:.3e} < {AR5_CLEAN_MSE_MAX:g}")


def test_c2_mdcgan_clean_fit(mg_sweep):
    t, _ = mg_sweep
    v = t.cells["MD-CGAN"]["0%"]
    seeds = ", ".join(f"{x:.4g}" for x in t.per_seed["MD-CGAN"]["0%"])
    record("C2 MD-CGAN clean MSE (median of 3 seeds)", v <= MDCGAN_CLEAN_MSE_MAX,
           f"{v:.4g} <= {MDCGAN_CLEAN_MSE_MAX:g} (seeds: {seeds})")


def test_c3_noise_robustness_ordering(mg_sweep):
    t, _ = mg_sweep
    wins = []
    for i in range(len(SEEDS)):
        g, m, s = (t.per_seed[r]["30%"][i] for r in ("MD-CGAN", "MDN", "SNN"))
        wins.append(g < m and g < s)
    detail = "; ".join(f"seed {sd}: MD-CGAN {t.per_seed['MD-CGAN']['30%'][i]:.4f} "
                       f"MDN {t.per_seed['MDN']['30%'][i]:.4f} SNN {t.per_seed['SNN']['30%'][i]:.4f}"
                       for i, sd in enumerate(SEEDS))
    record("C3 30% noise ordering MD-CGAN < MDN, SNN", sum(wins) >= ORDERING_MIN_SEEDS,
           f"{sum(wins)}/3 seeds ({detail})")


def test_c4_gan_flatness(mg_sweep):
    t, _ = mg_sweep
    g = float(np.median([ratio(t, "MD-CGAN", i) for i in range(len(SEEDS))]))
    m = float(np.median([ratio(t, "MDN", i) for i in range(len(SEEDS))]))
    record("C4 MSE ratio 30%/5% MD-CGAN < MDN (median)", g < m, f"{g:.3f} < {m:.3f}")


def test_c5_martingale_exactness():
    prep = ex.prepare(ex.ExperimentSpec())
    f = M.AR(M.TrainConfig(order=0)).fit(prep.split.train)
    test = prep.split.test
    exact = np.array_equal(f.point(test.inputs), prep.series.values[test.target_index - 1])
    h = ex.horizon_eval(ex.ExperimentSpec(models=["ar0"], seeds=[0]))
    r = h.cells["AR(0)"]["mackey-glass"]
    record("C5 AR(0) is the previous observation; self-ratio 1.0", exact and r == 1.0,
           f"bit-exact={exact}, ratio={r!r}")


def test_c6_property_suite():
    checks = {}
    rng = make_rng(0)
    worst = 0.0
    for kind in ("generator", "discriminator"):
        cfg = M.TrainConfig(n=3, z_dim=2, dropout_gen=0.0, dropout_disc=0.0, output_scale=1.0)
        net = (M.build_generator(cfg, 6, True, rng) if kind == "generator"
               else M.build_discriminator(cfg, cfg.k, cfg.k, rng))
        x = rng.normal(size=(6, net.widths()[0]))
        target = rng.normal(size=(6, net.widths()[-1]))
        for train in (True, False):
            net.set_train(train)
            worst = max(worst, grad_check(net, lambda o: (0.5 * float(np.sum((o - target) ** 2)), o - target), x))
    checks["grad"] = worst < GRAD_REL_ERR_MAX

    p = mx.map_latents(np.array([0.1, -1.0, 2.0]), np.log([0.05, 0.5, 1.5]), np.array([-1.0, 0.2, 3.0]))
    total, _ = integrate.quad(lambda y: float(mx.density(p, y)), -30, 30, points=[-1.0, 0.2, 3.0],
                              limit=500, epsabs=1e-13, epsrel=1e-13)
    checks["quadrature"] = abs(total - 1) <= QUADRATURE_TOL

    a = mx.map_latents(rng.normal(size=(200, 4)) * 50, np.zeros((200, 4)), np.zeros((200, 4))).alpha
    checks["softmax"] = float(np.max(np.abs(a.sum(axis=1) - 1))) <= SOFTMAX_TOL

    w, g = rng.normal(size=5), rng.normal(size=5)
    q = w.copy()
    Adam().step([q], [g])
    checks["adam"] = float(np.max(np.abs(q - (w - 0.001 * g / (np.abs(g) + 1e-7))))) <= ADAM_TOL

    posts = [mx.map_latents(rng.normal(size=2), rng.normal(size=2), rng.normal(size=2)) for _ in range(4)]
    ys = np.linspace(-3, 3, 41)
    pooled = mx.density(mx.pool(posts), ys)
    checks["pool"] = float(np.max(np.abs(pooled - np.mean([mx.density(q, ys) for q in posts], axis=0)))) <= POOL_TOL

    split = ex.prepare(ex.ExperimentSpec()).split
    cfg = M.TrainConfig(iterations=20, min_iterations=0, samples=3, seed=5)
    f1, f2 = M.MDCGAN(cfg).fit(split.train), M.MDCGAN(cfg).fit(split.train)
    checks["determinism"] = np.array_equal(f1.point(split.test.inputs, rng=1), f2.point(split.test.inputs, rng=1))

    first = split.first_test_index
    # training targets (and therefore training inputs) end before the first test target
    checks["no-leakage"] = bool(split.train.target_index.max() < first == split.test.target_index.min())
    record("C6 property suite", all(checks.values()),
           ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items()) + f" (grad err {worst:.1e})")


def test_c7_mixture_order_study():
    spec = ex.ExperimentSpec(dataset={"generator": "bimodal", "length": 2405, "seed": 0}, seeds=SEEDS)
    t = ex.mixture_order_study(spec, jobs=os.cpu_count() or 1)
    complete = (t.rows == ["m=1", "m=2", "m=3"] and t.dispersion is not None
                and all(np.isfinite(t.cells[r]["bimodal"]) and np.isfinite(t.dispersion[r]["bimodal"])
                        for r in t.rows))
    n1, n2 = t.cells["m=1"]["bimodal"], t.cells["m=2"]["bimodal"]
    cells = ", ".join(f"{r} {t.cells[r]['bimodal']:.3f} ({t.dispersion[r]['bimodal']:.3f})" for r in t.rows)
    record("C7 mixture-order table complete; bimodal m=2 NLL < m=1", complete and n2 < n1, cells)


def test_c8_gbm_horizon_ratio():
    spec = ex.ExperimentSpec(dataset={"generator": "gbm", "length": 2405, "seed": 0},
                             models=["ar0", "mdcgan"], seeds=SEEDS)
    t = ex.horizon_eval(spec, jobs=os.cpu_count() or 1)
    v = t.cells["MD-CGAN"]["gbm"]
    seeds = ", ".join(f"{x:.3f}" for x in t.per_seed["MD-CGAN"]["gbm"])
    record("C8b GBM 50-step MD-CGAN/AR(0) MSE ratio (median)", v < GBM_RATIO_MAX,
           f"{v:.3f} < {GBM_RATIO_MAX:g} (seeds: {seeds})")


@pytest.mark.skipif(not os.environ.get("MDCGAN_SUNSPOT_CSV"), reason="MDCGAN_SUNSPOT_CSV not set")
def test_c8_sunspot_ordering():
    col = os.environ.get("MDCGAN_SUNSPOT_COLUMN", "0")
    source = {"csv": os.environ["MDCGAN_SUNSPOT_CSV"], "column": int(col) if col.isdigit() else col}
    raw = dm.build_series(source)
    n_test = 400
    n_train = min(2000, len(raw) - n_test - 5)
    spec = ex.ExperimentSpec(dataset=source, models=["mdn", "mdcgan"], noise=[0.3], seeds=SEEDS,
                             n_train=n_train, n_test=n_test)
    t = ex.noise_sweep(spec, jobs=os.cpu_count() or 1)
    wins = sum(g < m for g, m in zip(t.per_seed["MD-CGAN"]["30%"], t.per_seed["MDN"]["30%"]))
    record("C8a Sunspot 30% noise MD-CGAN < MDN", wins >= ORDERING_MIN_SEEDS, f"{wins}/3 seeds")


def test_c9_sweep_provenance(mg_sweep):
    t, out = mg_sweep
    meta = json.loads((out / "sweep.json").read_text())["metadata"]
    shutil.rmtree(out)
    again = ex.reproduce(meta, jobs=os.cpu_count() or 1)
    same = (again.cells == t.cells and again.per_seed == t.per_seed
            and again.metadata["param_sha256"] == t.metadata["param_sha256"])
    n = sum(len(v) for v in t.cells.values())
    record("C9 reproduce from embedded metadata is bit-identical", same, f"{n} cells compared")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))

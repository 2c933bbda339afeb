"""Experiment drivers: noise sweeps, long-horizon ratios, mixture-order NLL and
density-surface export. Every result table carries enough metadata to be
rebuilt from scratch with :func:`reproduce`.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import data as dm
from . import mixture as mx
from .core import make_rng
from .models import Forecaster, TrainConfig, make_forecaster

log = logging.getLogger(__name__)

RESULTS_FORMAT = "mdcgan-results"
RESULTS_VERSION = 1

MODEL_LABELS = {"ar0": "AR(0)", "ar5": "AR(5)", "snn": "SNN", "cgan": "CGAN", "mdn": "MDN",
                "mdcgan": "MD-CGAN"}
DEFAULT_MODELS = ["ar0", "ar5", "snn", "cgan", "mdn", "mdcgan"]
DEFAULT_NOISE = [0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30]


def model_label(key: str) -> str:
    if key in MODEL_LABELS:
        return MODEL_LABELS[key]
    if key.startswith("ar") and key[2:].isdigit():
        return f"AR({key[2:]})"
    return key


def parse_model(key: str) -> tuple[str, dict]:
    """``'ar5'`` -> ``('ar', {'order': 5})``; learned models pass through."""
    if key.startswith("ar") and key[2:].isdigit():
        return "ar", {"order": int(key[2:])}
    if key in ("snn", "cgan", "mdn", "mdcgan"):
        return key, {}
    raise ValueError(f"unknown model {key!r}")


# ---------------------------------------------------------------- metrics

def mse(predictions, truths) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.size == 0 or p.shape != t.shape:
        raise ValueError("mse needs equal-length non-empty inputs")
    return float(np.mean((p - t) ** 2))


def nll_stats(posteriors: mx.GMMParams, truths) -> tuple[float, float]:
    """Mean and population standard deviation of per-point negative log-likelihood."""
    t = np.asarray(truths, dtype=np.float64)
    if t.size == 0:
        raise ValueError("nll_stats needs at least one test point")
    nll = -np.asarray(mx.log_likelihood(posteriors, t), dtype=np.float64)
    return float(np.mean(nll)), float(np.std(nll))


# ---------------------------------------------------------------- specs and tables

@dataclass
class ExperimentSpec:
    dataset: dict = field(default_factory=lambda: {"generator": "mackey-glass", "length": 2405, "seed": 0})
    models: list = field(default_factory=lambda: list(DEFAULT_MODELS))
    noise: list = field(default_factory=lambda: list(DEFAULT_NOISE))
    horizon: int = 50
    m_values: list = field(default_factory=lambda: [1, 2, 3])
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    config: dict = field(default_factory=dict)  # TrainConfig overrides
    k: int = 5
    n_train: int = 2000
    n_test: int = 400
    normalize: bool = True
    noise_seed: int = 12345
    endpoint_only: bool = False
    stride: int = 1

    def validate(self) -> "ExperimentSpec":
        if not self.models or not self.seeds:
            raise ValueError("an experiment needs at least one model and one seed")
        if any(p < 0 for p in self.noise):
            raise ValueError("noise levels must be non-negative")
        if self.horizon < 1 or self.stride < 1:
            raise ValueError("horizon and stride must be >= 1")
        if any(m < 1 for m in self.m_values):
            raise ValueError("mixture orders must be >= 1")
        for key in self.models:
            parse_model(key)
        TrainConfig.from_dict({**self.config, "k": self.k})
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**d).validate()

    def train_config(self, model_key: str, seed: int, **extra) -> TrainConfig:
        _, fixed = parse_model(model_key)
        return TrainConfig.from_dict({**self.config, "k": self.k, "seed": seed, **fixed, **extra})


@dataclass
class ResultsTable:
    title: str
    metric: str
    rows: list
    columns: list
    cells: dict  # row -> column -> value
    dispersion: dict | None = None
    per_seed: dict | None = None  # row -> column -> [value per seed]
    metadata: dict = field(default_factory=dict)

    def value(self, row, column) -> float:
        return self.cells[row][column]

    def to_json(self) -> dict:
        return {"format": RESULTS_FORMAT, "version": RESULTS_VERSION, "title": self.title,
                "metric": self.metric, "rows": self.rows, "columns": self.columns,
                "cells": self.cells, "dispersion": self.dispersion, "per_seed": self.per_seed,
                "metadata": self.metadata}

    @classmethod
    def from_json(cls, d: dict) -> "ResultsTable":
        if d.get("format") != RESULTS_FORMAT:
            raise ValueError("not a results document")
        if d.get("version") != RESULTS_VERSION:
            raise ValueError(f"unsupported results version {d.get('version')}")
        try:
            return cls(d["title"], d["metric"], d["rows"], d["columns"], d["cells"],
                       d.get("dispersion"), d.get("per_seed"), d.get("metadata", {}))
        except KeyError as e:
            raise ValueError(f"results document lacks {e}") from None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model"] + list(self.columns))
        for row in self.rows:
            vals = []
            for col in self.columns:
                v = repr(self.cells[row][col])
                if self.dispersion:
                    v += f" ({self.dispersion[row][col]!r})"
                vals.append(v)
            w.writerow([row] + vals)
        return buf.getvalue()

    def format_text(self) -> str:
        """Aligned plain-text table (values printed with full precision)."""
        def fmt(row, col):
            v = repr(self.cells[row][col])
            if self.dispersion:
                v += f" ({self.dispersion[row][col]!r})"
            return v

        header = [""] + [str(c) for c in self.columns]
        body = [[str(r)] + [fmt(r, c) for c in self.columns] for r in self.rows]
        widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
        lines = [f"{self.title} [{self.metric}]"]
        for line in [header] + body:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip())
        return "\n".join(lines)

    def write(self, out_dir, stem: str) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        jpath, cpath = out_dir / f"{stem}.json", out_dir / f"{stem}.csv"
        _atomic_write(jpath, json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        _atomic_write(cpath, self.to_csv())
        return jpath, cpath


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def load_results(path) -> ResultsTable:
    return ResultsTable.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------- data preparation

@dataclass
class Prepared:
    series: dm.TimeSeries
    split: dm.Split
    manifest: dict


def prepare(spec: ExperimentSpec) -> Prepared:
    raw = dm.build_series(spec.dataset)
    series = dm.normalize(raw) if spec.normalize else raw
    split = dm.window_split(series, spec.k, spec.n_train, spec.n_test)
    man = dm.manifest(raw, series.scaler, spec.k, spec.n_train, spec.n_test)
    man["normalized_sha256"] = hashlib.sha256(series.values.tobytes()).hexdigest()
    return Prepared(series, split, man)


def _params_hash(f: Forecaster) -> str:
    h = hashlib.sha256()
    for net in f.networks().values():
        for arr in net.param_list():
            h.update(np.ascontiguousarray(arr).tobytes())
    if getattr(f, "model", None) is not None:
        h.update(np.asarray(f.model.coef).tobytes())
    return h.hexdigest()


def _noise_rng(spec: ExperimentSpec, seed: int, level_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.noise_seed, seed, level_index])))


def _provenance(kind: str, spec: ExperimentSpec, prepared: Prepared, extra: dict) -> dict:
    spec_json = json.dumps(spec.to_dict(), sort_keys=True)
    inputs = hashlib.sha256((spec_json + prepared.manifest["normalized_sha256"]).encode()).hexdigest()
    configs = {key: spec.train_config(key, spec.seeds[0]).to_dict() for key in spec.models}
    return {"experiment": kind, "spec": spec.to_dict(), "manifest": prepared.manifest,
            "resolved_configs": configs, "inputs_sha256": inputs, "package_version": __version__,
            "aggregate": "median over seeds", **extra}


class CellError(RuntimeError):
    pass


def _run_cell(which: str, spec_d: dict, key, seed: int):
    fn = {"sweep": _sweep_cell, "horizon": _horizon_cell, "mstudy": _mstudy_cell}[which]
    try:
        return fn(spec_d, key, seed)
    except Exception as e:  # re-raised with the failing cell named
        raise CellError(f"{which} cell ({key}, seed={seed}) failed: {e}") from e


def _map_cells(which: str, spec: ExperimentSpec, keys, jobs: int) -> list:
    tasks = [(which, spec.to_dict(), key, seed) for key in keys for seed in spec.seeds]
    if jobs <= 1 or len(tasks) <= 1:
        return [_run_cell(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_run_cell, *t) for t in tasks]
        return [f.result() for f in futures]


# ---------------------------------------------------------------- noise sweep

def _sweep_cell(spec_d: dict, key: str, seed: int):
    spec = ExperimentSpec.from_dict(spec_d)
    prep = prepare(spec)
    f = make_forecaster(parse_model(key)[0], spec.train_config(key, seed)).fit(prep.split.train)
    scores = []
    for li, pct in enumerate(spec.noise):
        test = dm.noisy_test_set(prep.split.test, pct, _noise_rng(spec, seed, li))
        pred = f.point(test.inputs, rng=make_rng(seed + 7919 * (li + 1)))
        scores.append(mse(pred, test.targets))
    return scores, _params_hash(f), f.meta.get("iterations_run", 0)


def noise_sweep(spec: ExperimentSpec, jobs: int = 1) -> ResultsTable:
    """One-step test MSE against additive test-input noise.

    Each model is trained once per seed on the clean training split and reused
    for every noise level; noise perturbs test inputs only.
    """
    spec.validate()
    prep = prepare(spec)
    results = _map_cells("sweep", spec, spec.models, jobs)
    cols = [f"{round(100 * p, 6):g}%" for p in spec.noise]
    cells, per_seed, hashes, iters = {}, {}, {}, {}
    for i, key in enumerate(spec.models):
        chunk = results[i * len(spec.seeds):(i + 1) * len(spec.seeds)]
        row = model_label(key)
        per_seed[row] = {c: [r[0][j] for r in chunk] for j, c in enumerate(cols)}
        cells[row] = {c: float(np.median(per_seed[row][c])) for c in cols}
        hashes[row] = [r[1] for r in chunk]
        iters[row] = [r[2] for r in chunk]
    meta = _provenance("noise_sweep", spec, prep, {
        "param_sha256": hashes, "iterations_run": iters,
        "noise_target": "test inputs only; targets clean",
        "noise_draw": "once per (dataset, seed, noise level)"})
    return ResultsTable("One-step MSE vs test noise", "mse", [model_label(k) for k in spec.models],
                        cols, cells, None, per_seed, meta)


# ---------------------------------------------------------------- horizons

def recursive_forecast(f: Forecaster, window, h: int, samples: int | None = None, rng=None) -> np.ndarray:
    """Iterate one-step forecasts, feeding each point forecast back in.

    ``window`` is one window (returns ``(h,)``) or a batch ``(B, k)`` (returns
    ``(B, h)``).
    """
    if h < 1:
        raise ValueError("horizon must be >= 1")
    w = np.asarray(window, dtype=np.float64)
    single = w.ndim == 1
    w = np.atleast_2d(w).copy()
    rng = make_rng(f.cfg.seed + 31) if rng is None else (make_rng(rng) if isinstance(rng, int) else rng)
    out = np.empty((w.shape[0], h))
    for step in range(h):
        nxt = f.point(w, samples, rng)
        out[:, step] = nxt
        w = np.concatenate([w[:, 1:], nxt[:, None]], axis=1)
    return out[0] if single else out


def _horizon_windows(spec: ExperimentSpec, prep: Prepared):
    vals = prep.series.values
    first = prep.split.first_test_index
    starts = np.arange(first, first + spec.n_test - spec.horizon + 1, spec.stride)
    if starts.size == 0:
        raise ValueError("test region shorter than the forecast horizon")
    windows = np.stack([vals[s - spec.k:s] for s in starts])
    truths = np.stack([vals[s:s + spec.horizon] for s in starts])
    return windows, truths


def _path_error(paths, truths, endpoint_only: bool) -> float:
    if endpoint_only:
        return mse(paths[:, -1], truths[:, -1])
    return mse(paths, truths)


def _horizon_cell(spec_d: dict, key: str, seed: int):
    spec = ExperimentSpec.from_dict(spec_d)
    prep = prepare(spec)
    windows, truths = _horizon_windows(spec, prep)
    f = make_forecaster(parse_model(key)[0], spec.train_config(key, seed)).fit(prep.split.train)
    paths = recursive_forecast(f, windows, spec.horizon, rng=make_rng(seed + 104729))
    return _path_error(paths, truths, spec.endpoint_only), _params_hash(f)


def horizon_eval(spec: ExperimentSpec, jobs: int = 1) -> ResultsTable:
    """Recursive h-step MSE of each model divided by the AR(0) MSE on the same windows."""
    spec.validate()
    prep = prepare(spec)
    windows, truths = _horizon_windows(spec, prep)
    base = _path_error(np.repeat(windows[:, -1:], spec.horizon, axis=1), truths, spec.endpoint_only)
    if base == 0.0:
        raise ValueError("AR(0) baseline MSE is zero; ratios undefined")
    results = _map_cells("horizon", spec, spec.models, jobs)
    col = dataset_label(spec.dataset)
    cells, per_seed, raw, hashes = {}, {}, {}, {}
    for i, key in enumerate(spec.models):
        chunk = results[i * len(spec.seeds):(i + 1) * len(spec.seeds)]
        row = model_label(key)
        ratios = [r[0] / base for r in chunk]
        per_seed[row] = {col: ratios}
        cells[row] = {col: float(np.median(ratios))}
        raw[row] = [r[0] for r in chunk]
        hashes[row] = [r[1] for r in chunk]
    meta = _provenance("horizon_eval", spec, prep, {
        "baseline_mse": base, "model_mse": raw, "param_sha256": hashes, "windows": int(len(windows)),
        "error_over": "horizon endpoint" if spec.endpoint_only else "all steps of each path",
        "multi_step": "recursive, point forecast fed back"})
    return ResultsTable(f"{spec.horizon}-step MSE ratio to AR(0)", "mse_ratio",
                        [model_label(k) for k in spec.models], [col], cells, None, per_seed, meta)


def dataset_label(source: dict) -> str:
    if "csv" in source:
        return Path(source["csv"]).stem
    return source.get("generator", "dataset")


# ---------------------------------------------------------------- mixture order

def _mstudy_cell(spec_d: dict, m: int, seed: int):
    spec = ExperimentSpec.from_dict(spec_d)
    prep = prepare(spec)
    f = make_forecaster("mdcgan", spec.train_config("mdcgan", seed, m=m)).fit(prep.split.train)
    post = f.posterior(prep.split.test.inputs, rng=make_rng(seed + 15485863))
    mean, std = nll_stats(post, prep.split.test.targets)
    return mean, std, _params_hash(f)


def mixture_order_study(spec: ExperimentSpec, jobs: int = 1) -> ResultsTable:
    """Test NLL of MD-CGAN for each mixture order; dispersion is the per-point std."""
    spec.validate()
    prep = prepare(spec)
    results = _map_cells("mstudy", spec, spec.m_values, jobs)
    col = dataset_label(spec.dataset)
    rows, cells, disp, per_seed, hashes = [], {}, {}, {}, {}
    for i, m in enumerate(spec.m_values):
        chunk = results[i * len(spec.seeds):(i + 1) * len(spec.seeds)]
        row = f"m={m}"
        rows.append(row)
        means = [r[0] for r in chunk]
        pick = int(np.argsort(means)[(len(means) - 1) // 2])  # lower median seed
        cells[row] = {col: means[pick]}
        disp[row] = {col: chunk[pick][1]}
        per_seed[row] = {col: means}
        hashes[row] = [r[2] for r in chunk]
    meta = _provenance("mixture_order_study", spec, prep, {
        "param_sha256": hashes, "dispersion": "population std of per-test-point NLL",
        "aggregate": "median seed by mean NLL; its dispersion reported"})
    return ResultsTable("MD-CGAN negative log-likelihood vs mixture order", "nll", rows, [col],
                        cells, disp, per_seed, meta)


# ---------------------------------------------------------------- density grids

@dataclass
class DensityGrid:
    times: np.ndarray
    y: np.ndarray
    density: np.ndarray  # (len(times), len(y))
    truth: np.ndarray

    def slice_integrals(self) -> np.ndarray:
        return np.trapezoid(self.density, self.y, axis=1)

    def write(self, out_dir, stem: str = "density") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        gpath, tpath = out_dir / f"{stem}_grid.csv", out_dir / f"{stem}_truth.csv"
        with gpath.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [repr(float(v)) for v in self.y])
            for t, row in zip(self.times, self.density):
                w.writerow([int(t)] + [repr(float(v)) for v in row])
        with tpath.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "y"])
            for t, v in zip(self.times, self.truth):
                w.writerow([int(t), repr(float(v))])
        return gpath, tpath


def density_grid(f: Forecaster, test: dm.WindowedDataset, resolution: int = 1000,
                 rng=None, max_points: int = 20001) -> DensityGrid:
    """Posterior density on a uniform y-grid for each test step.

    The grid spans every component's mean +/- 8 sigma. ``resolution`` is a
    lower bound: the grid is refined until its spacing is at most a quarter of
    the narrowest component width, up to ``max_points``.
    """
    post = f.posterior(test.inputs, rng=rng)
    lo = float(np.min(post.mu - 8 * post.sigma))
    hi = float(np.max(post.mu + 8 * post.sigma))
    need = int(np.ceil((hi - lo) / (float(np.min(post.sigma)) / 4))) + 1
    n = int(min(max(resolution, need), max_points))
    y = np.linspace(lo, hi, n)
    dens = np.stack([mx.density(post[i], y) for i in range(len(post))])
    return DensityGrid(np.asarray(test.target_index), y, dens, np.asarray(test.targets))


# ---------------------------------------------------------------- provenance

RUNNERS = {"noise_sweep": noise_sweep, "horizon_eval": horizon_eval,
           "mixture_order_study": mixture_order_study}


def reproduce(metadata: dict, jobs: int = 1) -> ResultsTable:
    """Re-run an experiment from the metadata embedded in its results."""
    spec = ExperimentSpec.from_dict(metadata["spec"])
    table = RUNNERS[metadata["experiment"]](spec, jobs=jobs)
    if table.metadata["inputs_sha256"] != metadata["inputs_sha256"]:
        raise ValueError("reconstructed inputs differ from the recorded ones")
    return table

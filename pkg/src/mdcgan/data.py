"""Series generators, CSV ingestion, scaling, windowing and test-noise injection."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import make_rng


@dataclass
class TimeSeries:
    values: np.ndarray
    name: str = "series"
    scaler: tuple[float, float] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.values.size < 1:
            raise ValueError("a time series needs at least one value")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("time series contains non-finite values")

    def __len__(self):
        return self.values.size


@dataclass
class WindowedDataset:
    inputs: np.ndarray  # (n, k)
    targets: np.ndarray  # (n,)
    k: int
    horizon: int = 1
    target_index: np.ndarray | None = None  # position of each target in the source series

    def __len__(self):
        return self.targets.size


@dataclass
class Split:
    train: WindowedDataset
    test: WindowedDataset
    first_test_index: int


def _mg_rhs(y, yd, beta, gamma, n_exp):
    return beta * yd / (1.0 + yd ** n_exp) - gamma * y


def gen_mackey_glass(length: int, seed: int = 0, beta: float = 0.2, gamma: float = 0.1,
                     tau: float = 17.0, n_exp: float = 10.0, dt: float = 0.1,
                     history: float = 1.2, transient: int = 1000,
                     history_jitter: float = 0.0) -> TimeSeries:
    """Mackey-Glass delay equation integrated by RK4, sampled once per time unit.

    The delayed value at half steps uses cubic Hermite interpolation between
    stored grid points. ``seed`` only matters when ``history_jitter > 0``, in
    which case the constant history is perturbed by that much uniform noise.
    """
    if length < 1 or dt <= 0 or tau <= 0 or transient < 0:
        raise ValueError("invalid Mackey-Glass parameters")
    lag = int(round(tau / dt))
    per = int(round(1.0 / dt))
    if abs(lag * dt - tau) > 1e-9 or abs(per * dt - 1.0) > 1e-9:
        raise ValueError("tau and 1 must be integer multiples of dt")
    total = (length + transient) * per
    y = np.empty(total + lag + 1)
    hist = np.full(lag + 1, history)
    if history_jitter > 0:
        hist += make_rng(seed).uniform(-history_jitter, history_jitter, lag + 1)
    y[:lag + 1] = hist
    dy = np.zeros(total + lag + 1)
    for i in range(lag, lag + total):
        d0, d2 = y[i - lag], y[i - lag + 1]
        d1 = 0.5 * (d0 + d2) + dt / 8.0 * (dy[i - lag] - dy[i - lag + 1])
        yi = y[i]
        k1 = _mg_rhs(yi, d0, beta, gamma, n_exp)
        dy[i] = k1
        k2 = _mg_rhs(yi + 0.5 * dt * k1, d1, beta, gamma, n_exp)
        k3 = _mg_rhs(yi + 0.5 * dt * k2, d1, beta, gamma, n_exp)
        k4 = _mg_rhs(yi + dt * k3, d2, beta, gamma, n_exp)
        y[i + 1] = yi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    values = y[lag::per][transient:transient + length]
    params = dict(beta=beta, gamma=gamma, tau=tau, n_exp=n_exp, dt=dt, history=history,
                  transient=transient, history_jitter=history_jitter)
    return TimeSeries(values, "mackey-glass",
                      meta={"generator": "mackey-glass", "length": length, "seed": seed, "params": params})


def gen_gbm(length: int, drift: float = 0.0, vol: float = 0.01, seed: int = 0,
            s0: float = 1.0) -> TimeSeries:
    """Geometric Brownian path with unit time step."""
    if vol < 0 or length < 1:
        raise ValueError("vol must be non-negative and length positive")
    xi = make_rng(seed).standard_normal(length - 1)
    steps = (drift - 0.5 * vol * vol) + vol * xi
    values = s0 * np.exp(np.concatenate([[0.0], np.cumsum(steps)]))
    return TimeSeries(values, "gbm", meta={"generator": "gbm", "length": length, "seed": seed,
                                          "params": {"drift": drift, "vol": vol, "s0": s0}})


def gen_bimodal(length: int, seed: int = 0, gap: float = 0.5, noise: float = 0.02,
                period: float = 50.0, amp: float = 0.1) -> TimeSeries:
    """Two-regime series: a slow sinusoid plus an offset of 0 or ``gap`` drawn
    afresh every step, so the next value given the past is bimodal."""
    rng = make_rng(seed)
    t = np.arange(length)
    regime = rng.random(length) < 0.5
    values = amp * np.sin(2 * np.pi * t / period) + gap * regime + noise * rng.standard_normal(length)
    return TimeSeries(values, "bimodal", meta={"generator": "bimodal", "length": length, "seed": seed,
                                               "params": {"gap": gap, "noise": noise, "period": period,
                                                          "amp": amp}})


GENERATORS = {"mackey-glass": gen_mackey_glass, "gbm": gen_gbm, "bimodal": gen_bimodal}


def generate(name: str, length: int, seed: int = 0, **params) -> TimeSeries:
    try:
        fn = GENERATORS[name]
    except KeyError:
        raise ValueError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}") from None
    return fn(length, seed=seed, **params)


class CSVError(ValueError):
    pass


def load_csv(path, column: int | str = 0) -> TimeSeries:
    """Read one numeric column from a UTF-8 comma-separated file.

    A first row whose selected cell is not numeric is treated as a header.
    Columns may be chosen by index or by header name.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [(i + 1, row) for i, row in enumerate(csv.reader(fh)) if any(c.strip() for c in row)]
    if not rows:
        raise CSVError(f"{path}: file is empty")

    header = None
    first = rows[0][1]
    if isinstance(column, str) and not column.lstrip("-").isdigit():
        header = [c.strip() for c in first]
        matches = [i for i, name in enumerate(header) if name == column]
        if not matches:
            raise CSVError(f"{path}: no column named {column!r}")
        if len(matches) > 1:
            raise CSVError(f"{path}: column name {column!r} is ambiguous")
        idx = matches[0]
        rows = rows[1:]
    else:
        idx = int(column)
        try:
            float(first[idx])
        except (ValueError, IndexError):
            header = first
            rows = rows[1:]

    values, bad = [], []
    for line, row in rows:
        try:
            values.append(float(row[idx]))
        except (ValueError, IndexError):
            bad.append(line)
    if bad:
        raise CSVError(f"{path}: non-numeric value in column {column!r} on line(s) {bad}")
    if not values:
        raise CSVError(f"{path}: no numeric rows")
    return TimeSeries(np.array(values), path.stem,
                      meta={"source": str(path), "column": column, "sha256": file_sha256(path)})


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_csv(series: TimeSeries, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([series.name])
        for v in series.values:
            w.writerow([repr(float(v))])


def fit_scaler(values) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if not hi > lo:
        raise ValueError("cannot normalise a constant series")
    return lo, hi


def normalize(series: TimeSeries, scaler: tuple[float, float] | None = None) -> TimeSeries:
    """Affine map onto [0, 1]. Values outside the scaler's range are flagged."""
    lo, hi = scaler if scaler is not None else fit_scaler(series.values)
    out = (series.values - lo) / (hi - lo)
    meta = dict(series.meta, scaler=[lo, hi],
                out_of_range=bool(np.any(out < 0) or np.any(out > 1)))
    return TimeSeries(out, series.name, (lo, hi), meta)


def denormalize(values, scaler: tuple[float, float]):
    lo, hi = scaler
    return np.asarray(values, dtype=np.float64) * (hi - lo) + lo


def make_windows(values, k: int, horizon: int = 1, start: int = 0) -> WindowedDataset:
    """All (k past values -> value ``horizon`` steps after the window) pairs."""
    values = np.asarray(values, dtype=np.float64)
    if k < 1 or horizon < 1:
        raise ValueError("k and horizon must be positive")
    n = values.size - k - horizon + 1
    if n < 1:
        raise ValueError("series too short for the requested window")
    idx = np.arange(n)[:, None] + np.arange(k)[None, :]
    target_index = np.arange(n) + k + horizon - 1
    return WindowedDataset(values[idx], values[target_index], k, horizon, target_index + start)


def window_split(series: TimeSeries | np.ndarray, k: int = 5, n_train: int = 2000,
                 n_test: int = 400) -> Split:
    values = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=np.float64)
    if values.size < n_train + n_test + k:
        raise ValueError(f"series of length {values.size} too short for "
                         f"{n_train} train + {n_test} test pairs with k={k}")
    all_pairs = make_windows(values[:n_train + n_test + k], k)
    train = WindowedDataset(all_pairs.inputs[:n_train], all_pairs.targets[:n_train], k, 1,
                            all_pairs.target_index[:n_train])
    test = WindowedDataset(all_pairs.inputs[n_train:], all_pairs.targets[n_train:], k, 1,
                           all_pairs.target_index[n_train:])
    return Split(train, test, int(test.target_index[0]))


def add_noise(series: TimeSeries | np.ndarray, pct: float, rng: np.random.Generator,
              amplitude: float | None = None):
    """Add i.i.d. N(0, (pct * A)^2) noise, A being the clean range unless given."""
    if pct < 0:
        raise ValueError("noise level must be non-negative")
    values = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=np.float64)
    if amplitude is None:
        amplitude = float(values.max() - values.min())
    noisy = values + pct * amplitude * rng.standard_normal(values.shape) if pct > 0 else values.copy()
    if isinstance(series, TimeSeries):
        return TimeSeries(noisy, series.name, series.scaler,
                          dict(series.meta, noise_pct=pct, noise_amplitude=amplitude))
    return noisy


def noisy_test_set(test: WindowedDataset, pct: float, rng: np.random.Generator,
                   amplitude: float = 1.0) -> WindowedDataset:
    """Perturb the test inputs, keeping targets clean.

    Noise is drawn once per underlying series point so overlapping windows
    see the same perturbed observation.
    """
    k = test.k
    first = int(test.target_index[0]) - k
    n_points = test.targets.size + k - 1
    eps = add_noise(np.zeros(n_points), pct, rng, amplitude)
    pos = (test.target_index - k - first)[:, None] + np.arange(k)[None, :]
    return WindowedDataset(test.inputs + eps[pos], test.targets.copy(), k, test.horizon,
                           test.target_index.copy())


def build_series(source: dict) -> TimeSeries:
    """Materialise a dataset from its manifest-style description."""
    if "csv" in source:
        ts = load_csv(source["csv"], source.get("column", 0))
        want = source.get("sha256")
        if want and ts.meta["sha256"] != want:
            raise ValueError(f"{source['csv']} changed since the manifest was written")
        return ts
    params = dict(source.get("params", {}))
    return generate(source["generator"], int(source["length"]), int(source.get("seed", 0)), **params)


def manifest(series: TimeSeries, scaler, k: int, n_train: int, n_test: int) -> dict:
    src = {key: series.meta[key] for key in ("generator", "length", "seed", "params") if key in series.meta}
    if "source" in series.meta:
        src = {"csv": series.meta["source"], "column": series.meta["column"],
               "sha256": series.meta["sha256"]}
    return {"version": 1, "source": src, "scaler": list(scaler) if scaler else None,
            "k": k, "n_train": n_train, "n_test": n_test,
            "split": {"train_targets": [k, k + n_train - 1],
                      "test_targets": [k + n_train, k + n_train + n_test - 1]},
            "values_sha256": hashlib.sha256(series.values.tobytes()).hexdigest()}


def save_manifest(m: dict, path) -> None:
    Path(path).write_text(json.dumps(m, indent=2, sort_keys=True) + "\n", encoding="utf-8")

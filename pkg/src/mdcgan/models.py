"""Forecasters: MD-CGAN, CGAN, MDN, SNN and linear AR baselines.

All learned models share one generator topology (three Dense/LeakyReLU/
Dropout/BatchNorm blocks of widths n, 2n, 4n) and the GAN models share one
discriminator topology (three Dense/LeakyReLU/Dropout blocks of width 2n).
"""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mixture as mx
from .core import (Adam, BatchNorm, Dense, Dropout, LeakyReLU, Network, NonFiniteError,
                   make_rng)
from .data import WindowedDataset

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "mdcgan-checkpoint"
CHECKPOINT_VERSION = 1
SQRT_2PI = float(np.sqrt(2 * np.pi))

KINDS = ("mdcgan", "cgan", "mdn", "snn", "ar")


@dataclass
class TrainConfig:
    k: int = 5
    m: int = 1
    n: int = 20
    z_dim: int = 5
    batch: int = 64
    j: int = 1
    iterations: int = 20000
    min_iterations: int = 2000
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    dropout_disc: float = 0.4
    dropout_gen: float = 0.5
    leaky_slope: float = 0.2
    sigma_a: float | str = 0.2  # number, or "data" for the std of the training targets
    z_var: float | str = "data"  # number, or "data" for the variance of the training targets
    seed: int = 0
    saturation_window: int = 200
    saturation_tol: float = 1e-3
    gen_loss: str = "log_likelihood"  # "log_likelihood" (-log L) or "likelihood" (-L)
    disc_mode: str = "network"  # "network" or "literal" (parameter-free loss)
    coupled: bool = False
    samples: int = 100
    order: int = 5  # AR order
    output_scale: float = 0.1  # multiplies the Glorot init of the generator's final projection
    head_init: str = "data"  # "data" spreads mixture-head biases over the targets, "zero" keeps them 0

    def validate(self) -> "TrainConfig":
        for name in ("k", "m", "n", "z_dim", "batch", "j", "saturation_window", "samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.iterations < 0 or self.min_iterations < 0 or self.order < 0:
            raise ValueError("iterations, min_iterations and order must be >= 0")
        for name in ("dropout_disc", "dropout_gen"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.leaky_slope <= 0:
            raise ValueError("leaky_slope must be positive")
        if isinstance(self.sigma_a, str):
            if self.sigma_a != "data":
                raise ValueError("sigma_a must be a positive number or 'data'")
        elif self.sigma_a <= 0:
            raise ValueError("sigma_a must be positive")
        if isinstance(self.z_var, str):
            if self.z_var != "data":
                raise ValueError("z_var must be a positive number or 'data'")
        elif self.z_var <= 0:
            raise ValueError("z_var must be positive")
        if self.gen_loss not in ("likelihood", "log_likelihood"):
            raise ValueError("gen_loss must be 'likelihood' or 'log_likelihood'")
        if self.output_scale < 0:
            raise ValueError("output_scale must be non-negative")
        if self.head_init not in ("data", "zero"):
            raise ValueError("head_init must be 'data' or 'zero'")
        if self.disc_mode not in ("network", "literal"):
            raise ValueError("disc_mode must be 'network' or 'literal'")
        return self

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw).validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d).validate()


class TrainingDiverged(NonFiniteError):
    def __init__(self, kind: str, iteration: int):
        super().__init__(f"{kind} training diverged at iteration {iteration} "
                         f"(last finite iteration {iteration - 1})")
        self.iteration = iteration


class NotFittedError(RuntimeError):
    pass


# ---------------------------------------------------------------- networks

def build_generator(cfg: TrainConfig, output_width: int, noise_input: bool,
                    rng: np.random.Generator | None = None) -> Network:
    """Three blocks of widths n, 2n, 4n, then a linear map to ``output_width``."""
    if output_width < 1:
        raise ValueError("output width must be positive")
    in_width = cfg.k + (cfg.z_dim if noise_input else 0)
    layers, width = [], in_width
    for mult in (1, 2, 4):
        out = cfg.n * mult
        layers += [Dense(width, out, rng), LeakyReLU(cfg.leaky_slope),
                   Dropout(cfg.dropout_gen), BatchNorm(out)]
        width = out
    head = Dense(width, output_width, rng)
    head.params["W"] *= cfg.output_scale
    layers.append(head)
    return Network(layers, in_width)


def init_mixture_head(net: Network, targets: np.ndarray, m: int) -> None:
    """Place the mixture head's biases so that component means start at the
    ``(i + 0.5) / m`` quantiles of the targets and widths at ``std / m``.

    Without this the components start identical, one of them absorbs all the
    responsibility early on and the others never recover.
    """
    head = net.layers[-1]
    targets = np.asarray(targets, dtype=np.float64).ravel()
    spread = max(float(np.std(targets)) / m, mx.SIGMA_FLOOR)
    b = head.params["b"]
    b[:m] = 0.0
    b[m:2 * m] = np.log(spread)
    b[2 * m:3 * m] = np.quantile(targets, (np.arange(m) + 0.5) / m)


def build_discriminator(cfg: TrainConfig, input_width: int, output_width: int = 1,
                        rng: np.random.Generator | None = None) -> Network:
    """Three Dense(2n)/LeakyReLU/Dropout blocks, then a linear output.

    CGAN uses ``output_width=1`` and treats the output as a logit; MD-CGAN maps
    its k-vector input to a k-vector.
    """
    if input_width < 1 or output_width < 1:
        raise ValueError("discriminator widths must be positive")
    layers, width = [], input_width
    for _ in range(3):
        layers += [Dense(width, 2 * cfg.n, rng), LeakyReLU(cfg.leaky_slope),
                   Dropout(cfg.dropout_disc)]
        width = 2 * cfg.n
    layers.append(Dense(width, output_width, rng))
    return Network(layers, input_width)


# ---------------------------------------------------------------- MD-CGAN losses

def mdcgan_disc_loss(D: Network | None, x: np.ndarray, real_lik: np.ndarray,
                     fake_lik: np.ndarray, sigma_a: float, rng=None):
    """Discriminator objective on likelihood-scaled conditioning vectors.

    ``mean_n ||D(x c L_real) - x||^2 + ||D(x c L_fake)||^2`` with
    ``c = sqrt(2 pi) sigma_a``. ``D=None`` gives the parameter-free reading
    (D is the identity). Returns ``(loss, dloss/dD_output)``; the gradient is
    ``None`` when ``D`` is ``None``.
    """
    x = np.asarray(x, dtype=np.float64)
    c = SQRT_2PI * sigma_a
    real_lik, fake_lik = np.asarray(real_lik, float), np.asarray(fake_lik, float)
    if not (np.all(np.isfinite(real_lik)) and np.all(np.isfinite(fake_lik))):
        raise NonFiniteError("non-finite likelihood in discriminator input")
    inputs = np.concatenate([x * (c * real_lik)[:, None], x * (c * fake_lik)[:, None]])
    out = inputs if D is None else D.forward(inputs, rng)
    n = x.shape[0]
    diff_real = out[:n] - x
    diff_fake = out[n:]
    loss = float((np.sum(diff_real ** 2) + np.sum(diff_fake ** 2)) / n)
    if D is None:
        return loss, None
    return loss, np.concatenate([2 * diff_real, 2 * diff_fake]) / n


def mdcgan_gen_loss(params: mx.GMMParams, y: np.ndarray, log_form: bool = False) -> float:
    """Mean of ``-L`` (or ``-log L``) of the targets under the generated mixtures."""
    ll = mx.log_likelihood(params, np.asarray(y, dtype=np.float64))
    return float(-np.mean(ll)) if log_form else float(-np.mean(np.exp(ll)))


# ---------------------------------------------------------------- forecasters

@dataclass
class ARModel:
    order: int
    coef: np.ndarray = field(default_factory=lambda: np.zeros(0))  # [c0, c1..cp], c1 = lag 1

    def forecast(self, window: np.ndarray) -> np.ndarray:
        """One-step forecast for each row of ``window`` (oldest value first)."""
        window = np.atleast_2d(np.asarray(window, dtype=np.float64))
        if self.order == 0:
            return window[:, -1].copy()
        if window.shape[1] < self.order:
            raise ValueError(f"AR({self.order}) needs at least {self.order} past values")
        lags = window[:, ::-1][:, :self.order]
        return self.coef[0] + lags @ self.coef[1:]


def fit_ar(series, p: int) -> ARModel:
    """Ordinary least squares on the lag matrix (intercept plus p lags)."""
    y = np.asarray(getattr(series, "values", series), dtype=np.float64)
    if p < 0:
        raise ValueError("AR order must be non-negative")
    if y.size <= p + 1:
        raise ValueError(f"AR({p}) needs more than {p + 1} observations")
    if p == 0:
        return ARModel(0)
    rows = y.size - p
    lags = np.column_stack([y[p - i - 1:p - i - 1 + rows] for i in range(p)])
    return _ols(lags, y[p:], p)


def _ols(lags: np.ndarray, target: np.ndarray, p: int) -> ARModel:
    design = np.column_stack([np.ones(lags.shape[0]), lags])
    gram = design.T @ design
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        log.warning("AR(%d) normal equations are singular; using the pseudo-inverse", p)
        coef = np.linalg.pinv(design) @ target
    else:
        coef = np.linalg.solve(gram, design.T @ target)
    return ARModel(p, coef)


class Forecaster:
    kind = "base"
    probabilistic = False
    stochastic = False

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg.validate()
        self.fitted = False
        self.history: list[dict] = []
        self.meta: dict = {}

    # subclasses implement _fit and _point / _posterior
    def fit(self, data: WindowedDataset) -> "Forecaster":
        if len(data) < 1:
            raise ValueError("empty training set")
        if data.k != self.cfg.k:
            raise ValueError(f"dataset window {data.k} != config k {self.cfg.k}")
        self._fit(data)
        self.fitted = True
        return self

    def _check(self, x) -> np.ndarray:
        if not self.fitted:
            raise NotFittedError(f"{self.kind} forecaster used before fit")
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.cfg.k:
            raise ValueError(f"expected windows of length {self.cfg.k}, got {x.shape[1]}")
        return x

    def point(self, x, samples: int | None = None, rng=None) -> np.ndarray:
        """Point forecast for every row of ``x``."""
        return self._point(self._check(x), samples or self.cfg.samples, _as_rng(rng, self.cfg))

    def posterior(self, x, samples: int | None = None, rng=None) -> mx.GMMParams:
        if not self.probabilistic:
            raise TypeError(f"{self.kind} produces point forecasts only")
        return self._posterior(self._check(x), samples or self.cfg.samples, _as_rng(rng, self.cfg))

    @property
    def name(self) -> str:
        return self.kind


def _as_rng(rng, cfg: TrainConfig) -> np.random.Generator:
    if rng is None:
        return make_rng(cfg.seed + 1_000_003)
    if isinstance(rng, (int, np.integer)):
        return make_rng(int(rng))
    return rng


def _target_var(data: WindowedDataset) -> float:
    return float(np.var(data.targets))


class _Trainer:
    """Iteration bookkeeping shared by the neural forecasters."""

    def __init__(self, model: "Forecaster", data: WindowedDataset):
        self.model = model
        self.cfg = model.cfg
        self.data = data
        self.rng = model.rng
        self.mse_trace: list[float] = []

    def batch(self):
        idx = self.rng.integers(0, len(self.data), self.cfg.batch)
        return self.data.inputs[idx], self.data.targets[idx]

    def record(self, it: int, **losses) -> None:
        for key, v in losses.items():
            if v is not None and not np.isfinite(v):
                raise TrainingDiverged(self.model.kind, it)
        self.model.history.append({"iteration": it, **losses})
        self.mse_trace.append(losses["mse"])

    def saturated(self, it: int) -> bool:
        """Non-overlapping trailing windows: stop when the latest mean error
        improves on the previous one by less than ``saturation_tol``."""
        w = self.cfg.saturation_window
        done = it + 1
        if done < max(self.cfg.min_iterations, 2 * w) or done % w:
            return False
        cur = np.mean(self.mse_trace[-w:])
        prev = np.mean(self.mse_trace[-2 * w:-w])
        return (prev - cur) <= self.cfg.saturation_tol * prev

    def run(self, step) -> None:
        for it in range(self.cfg.iterations):
            step(it)
            if self.saturated(it):
                log.info("%s saturated after %d iterations", self.model.kind, it + 1)
                break
        self.model.meta["iterations_run"] = len(self.model.history)
        if self.model.history:
            self.model.meta["final_losses"] = {k: v for k, v in self.model.history[-1].items()
                                               if k != "iteration"}


def _top_component_mean(p: mx.GMMParams) -> np.ndarray:
    i = np.argmax(p.alpha, axis=-1)
    return np.take_along_axis(p.mu, i[..., None], axis=-1)[..., 0]


class SNN(Forecaster):
    kind = "snn"

    def __init__(self, cfg: TrainConfig):
        super().__init__(cfg)
        self.rng = make_rng(cfg.seed)
        self.gen = build_generator(cfg, 1, noise_input=False, rng=self.rng)
        self.opt_g = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)

    def _fit(self, data):
        tr = _Trainer(self, data)
        g = self.gen.set_train(True)

        def step(it):
            x, y = tr.batch()
            out = g.forward(x, self.rng)[:, 0]
            err = out - y
            mse = float(np.mean(err ** 2))
            g.backward((2 * err / err.size)[:, None])
            self.opt_g.step(g.param_list(), g.grad_list())
            tr.record(it, g_loss=mse, mse=mse)

        tr.run(step)
        g.set_train(False)

    def _point(self, x, samples, rng):
        return self.gen.set_train(False).forward(x)[:, 0]

    def networks(self):
        return {"generator": self.gen}


class MDN(Forecaster):
    kind = "mdn"
    probabilistic = True

    def __init__(self, cfg: TrainConfig):
        super().__init__(cfg)
        self.rng = make_rng(cfg.seed)
        self.gen = build_generator(cfg, 3 * cfg.m, noise_input=False, rng=self.rng)
        self.opt_g = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)

    def _fit(self, data):
        tr = _Trainer(self, data)
        if not self.fitted and self.cfg.head_init == "data":
            init_mixture_head(self.gen, data.targets, self.cfg.m)
        g = self.gen.set_train(True)
        m = self.cfg.m

        def step(it):
            x, y = tr.batch()
            out = g.forward(x, self.rng)
            loss, grad = mx.latent_loss_grad(out, y, m, log=True)
            g.backward(grad / y.size)
            self.opt_g.step(g.param_list(), g.grad_list())
            point = _top_component_mean(mx.map_latents(*mx.split_latents(out, m)))
            tr.record(it, g_loss=float(loss.mean()), mse=float(np.mean((point - y) ** 2)))

        tr.run(step)
        g.set_train(False)

    def _posterior(self, x, samples, rng):
        out = self.gen.set_train(False).forward(x)
        return mx.map_latents(*mx.split_latents(out, self.cfg.m))

    def _point(self, x, samples, rng):
        return mx.gmm_mode(self._posterior(x, samples, rng))

    def networks(self):
        return {"generator": self.gen}


class _GAN(Forecaster):
    stochastic = True

    def _noise(self, rows: int, rng) -> np.ndarray:
        return np.sqrt(self.z_var) * rng.standard_normal((rows, self.cfg.z_dim))

    def _tile(self, x, samples, rng):
        xs = np.repeat(x, samples, axis=0)
        return np.concatenate([xs, self._noise(xs.shape[0], rng)], axis=1)


class CGAN(_GAN):
    kind = "cgan"

    def __init__(self, cfg: TrainConfig):
        super().__init__(cfg)
        self.rng = make_rng(cfg.seed)
        self.gen = build_generator(cfg, 1, noise_input=True, rng=self.rng)
        self.disc = build_discriminator(cfg, cfg.k + 1, 1, rng=self.rng)
        self.opt_g = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        self.opt_d = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        self.z_var = 1.0

    def _fit(self, data):
        cfg = self.cfg
        self.z_var = _target_var(data) if cfg.z_var == "data" else float(cfg.z_var)
        tr = _Trainer(self, data)
        g, d = self.gen, self.disc.set_train(True)

        def step(it):
            for _ in range(cfg.j):
                x, y = tr.batch()
                z = self._noise(cfg.batch, self.rng)
                fake = g.set_train(False).forward(np.concatenate([x, z], axis=1))[:, 0]
                d_loss = self.disc_step(x, y, fake)
            z = self._noise(cfg.batch, self.rng)
            yf = g.set_train(True).forward(np.concatenate([x, z], axis=1), self.rng)
            logits = d.forward(np.concatenate([x, yf], axis=1), self.rng)[:, 0]
            # non-saturating generator objective: -log D(x, y_f)
            p = _sigmoid(logits)
            g_loss = float(np.mean(_softplus(-logits)))
            g_in = d.backward(((p - 1.0) / logits.size)[:, None])
            g.backward(g_in[:, -1:])
            self.opt_g.step(g.param_list(), g.grad_list())
            tr.record(it, d_loss=d_loss, g_loss=g_loss, mse=float(np.mean((yf[:, 0] - y) ** 2)))

        tr.run(step)
        g.set_train(False)
        d.set_train(False)

    def disc_step(self, x, y, fake) -> float:
        """One Adam step on binary cross-entropy, real pairs labelled 1."""
        d = self.disc.set_train(True)
        inputs = np.concatenate([np.column_stack([x, y]), np.column_stack([x, fake])])
        labels = np.concatenate([np.ones(len(y)), np.zeros(len(fake))])
        logits = d.forward(inputs, self.rng)[:, 0]
        loss = float(np.mean(_softplus(logits) - labels * logits))
        d.backward(((_sigmoid(logits) - labels) / labels.size)[:, None])
        self.opt_d.step(d.param_list(), d.grad_list())
        return loss

    def discriminate(self, x, y) -> np.ndarray:
        """Probability that each (window, value) pair is real."""
        logits = self.disc.set_train(False).forward(np.column_stack([x, y]))[:, 0]
        return _sigmoid(logits)

    def _point(self, x, samples, rng):
        out = self.gen.set_train(False).forward(self._tile(x, samples, rng))[:, 0]
        return out.reshape(x.shape[0], samples).mean(axis=1)

    def networks(self):
        return {"generator": self.gen, "discriminator": self.disc}


class MDCGAN(_GAN):
    kind = "mdcgan"
    probabilistic = True

    def __init__(self, cfg: TrainConfig):
        super().__init__(cfg)
        self.rng = make_rng(cfg.seed)
        self.gen = build_generator(cfg, 3 * cfg.m, noise_input=True, rng=self.rng)
        self.disc = build_discriminator(cfg, cfg.k, cfg.k, rng=self.rng)
        self.opt_g = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        self.opt_d = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        self.z_var = 1.0
        self.sigma_a = cfg.sigma_a if not isinstance(cfg.sigma_a, str) else 1.0
        self.disc_steps = 0
        self.gen_steps = 0

    def _fit(self, data):
        cfg = self.cfg
        self.z_var = _target_var(data) if cfg.z_var == "data" else float(cfg.z_var)
        self.sigma_a = float(np.std(data.targets)) if cfg.sigma_a == "data" else float(cfg.sigma_a)
        self.meta.update(disc_contract=cfg.disc_mode, gen_loss=cfg.gen_loss, coupled=cfg.coupled,
                         sigma_a=self.sigma_a, z_var=self.z_var)
        tr = _Trainer(self, data)
        m = cfg.m
        if not self.fitted and cfg.head_init == "data":
            init_mixture_head(self.gen, data.targets, m)
        g = self.gen

        def step(it):
            for _ in range(cfg.j):
                x, y = tr.batch()
                z = self._noise(cfg.batch, self.rng)
                out = g.set_train(False).forward(np.concatenate([x, z], axis=1))
                d_loss = self.disc_step(x, y, out)
            z = self._noise(cfg.batch, self.rng)
            out = g.set_train(True).forward(np.concatenate([x, z], axis=1), self.rng)
            loss, grad = mx.latent_loss_grad(out, y, m, log=cfg.gen_loss == "log_likelihood")
            grad = grad / y.size
            if cfg.coupled and cfg.disc_mode == "network":
                grad = grad + self._fooling_grad(x, y, out)
            g.backward(grad)
            self.opt_g.step(g.param_list(), g.grad_list())
            self.gen_steps += 1
            params = mx.map_latents(*mx.split_latents(out, m))
            point = _top_component_mean(params)
            tr.record(it, d_loss=d_loss, g_loss=float(loss.mean()),
                      mse=float(np.mean((point - y) ** 2)))

        tr.run(step)
        g.set_train(False)
        self.disc.set_train(False)

    def disc_step(self, x, y, gen_out) -> float:
        """Discriminator update with the generator's outputs held constant.

        The real input is scaled by the generated mixture's likelihood of the
        observed target; the fake input by its likelihood of a pseudo-value
        drawn from that same mixture.
        """
        params = mx.map_latents(*mx.split_latents(gen_out, self.cfg.m))
        real_lik = mx.likelihood(params, y)
        fake_lik = mx.likelihood(params, self._draw(params))
        self.disc_steps += 1
        if self.cfg.disc_mode == "literal":
            return mdcgan_disc_loss(None, x, real_lik, fake_lik, self.sigma_a)[0]
        d = self.disc.set_train(True)
        loss, grad = mdcgan_disc_loss(d, x, real_lik, fake_lik, self.sigma_a, self.rng)
        d.backward(grad)
        self.opt_d.step(d.param_list(), d.grad_list())
        return loss

    def _draw(self, params: mx.GMMParams) -> np.ndarray:
        u = self.rng.random(params.batch_shape)[..., None]
        comp = np.minimum((np.cumsum(params.alpha, axis=-1) < u * params.alpha.sum(-1, keepdims=True))
                          .sum(axis=-1), params.m - 1)
        mu = np.take_along_axis(params.mu, comp[..., None], -1)[..., 0]
        sd = np.take_along_axis(params.sigma, comp[..., None], -1)[..., 0]
        return mu + sd * self.rng.standard_normal(mu.shape)

    def _fooling_grad(self, x, y, out):
        """Gradient of mean ||D(x c L) - x||^2 w.r.t. the latents, D frozen."""
        m = self.cfg.m
        c = SQRT_2PI * self.sigma_a
        neg_lik, dneg = mx.latent_loss_grad(out, y, m, log=False)
        lik = -neg_lik
        d = self.disc.set_train(True)
        dout = d.forward(x * (c * lik)[:, None], self.rng)
        g_in = d.backward(2 * (dout - x) / x.shape[0])
        dscale = np.sum(g_in * x, axis=1) * c  # d loss / d lik
        return dscale[:, None] * (-dneg)

    def _posterior_samples(self, x, samples, rng) -> mx.GMMParams:
        out = self.gen.set_train(False).forward(self._tile(x, samples, rng))
        params = mx.map_latents(*mx.split_latents(out, self.cfg.m))
        shape = (x.shape[0], samples, self.cfg.m)
        return mx.GMMParams(params.alpha.reshape(shape), params.sigma.reshape(shape),
                            params.mu.reshape(shape))

    def _posterior(self, x, samples, rng):
        return mx.pool_batch(self._posterior_samples(x, samples, rng))

    def _point(self, x, samples, rng):
        return mx.gmm_mode(self._posterior(x, samples, rng))

    def networks(self):
        return {"generator": self.gen, "discriminator": self.disc}


class AR(Forecaster):
    kind = "ar"

    def __init__(self, cfg: TrainConfig):
        super().__init__(cfg)
        if cfg.order > cfg.k:
            raise ValueError(f"AR order {cfg.order} exceeds window length {cfg.k}")
        self.model = ARModel(cfg.order)

    @property
    def name(self):
        return f"ar{self.cfg.order}"

    def _fit(self, data):
        p = self.cfg.order
        if p == 0:
            self.model = ARModel(0)
        else:
            if len(data) <= p + 1:
                raise ValueError(f"AR({p}) needs more than {p + 1} training pairs")
            lags = data.inputs[:, ::-1][:, :p]
            self.model = _ols(lags, data.targets, p)
        self.meta["iterations_run"] = 0

    def _point(self, x, samples, rng):
        return self.model.forecast(x)

    def networks(self):
        return {}


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def _softplus(v):
    return np.logaddexp(0.0, v)


MODEL_CLASSES = {"mdcgan": MDCGAN, "cgan": CGAN, "mdn": MDN, "snn": SNN, "ar": AR}


def make_forecaster(kind: str, cfg: TrainConfig) -> Forecaster:
    try:
        return MODEL_CLASSES[kind](cfg)
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {KINDS}") from None


def train_mdcgan(data: WindowedDataset, cfg: TrainConfig) -> MDCGAN:
    return MDCGAN(cfg).fit(data)


def train_baseline(kind: str, data: WindowedDataset, cfg: TrainConfig) -> Forecaster:
    if kind not in ("mdn", "snn", "cgan"):
        raise ValueError(f"{kind!r} is not a learned baseline")
    return make_forecaster(kind, cfg).fit(data)


def train(kind: str, data: WindowedDataset, cfg: TrainConfig) -> Forecaster:
    return make_forecaster(kind, cfg).fit(data)


def predict(f: Forecaster, x, samples: int = 100, rng=None):
    """Forecast from a single window.

    Probabilistic models return a :class:`PredictivePosterior` whose point is
    the posterior mode; point models return a float.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if f.probabilistic:
        post = f.posterior(x, samples, rng)[0]
        return mx.PredictivePosterior(post, mx.gmm_mode(post), f.name)
    return float(f.point(x, samples, rng)[0])


# ---------------------------------------------------------------- checkpoints

def _net_to_record(net: Network) -> list[dict]:
    out = []
    for entry in net.state():
        out.append({name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
                    for name, arr in entry.items()})
    return out


def _record_to_state(rec: list[dict]) -> list[dict]:
    return [{name: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for name, v in entry.items()}
            for entry in rec]


def to_checkpoint(f: Forecaster) -> dict:
    if not f.fitted:
        raise NotFittedError("only fitted forecasters can be checkpointed")
    rec = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "kind": f.kind,
           "config": f.cfg.to_dict(),
           "networks": {name: _net_to_record(net) for name, net in f.networks().items()},
           "meta": {"seed": f.cfg.seed, **f.meta}}
    if isinstance(f, AR):
        rec["ar"] = {"order": f.model.order, "coef": f.model.coef.tolist()}
    if isinstance(f, _GAN):
        rec["z_var"] = f.z_var
    if isinstance(f, MDCGAN):
        rec["sigma_a"] = f.sigma_a
    return rec


def from_checkpoint(rec: dict) -> Forecaster:
    if rec.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a forecaster checkpoint")
    if rec.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {rec.get('version')}")
    f = make_forecaster(rec["kind"], TrainConfig.from_dict(rec["config"]))
    for name, net in f.networks().items():
        net.load_state(_record_to_state(rec["networks"][name]))
        net.set_train(False)
    if isinstance(f, AR):
        f.model = ARModel(rec["ar"]["order"], np.array(rec["ar"]["coef"], dtype=np.float64))
    if isinstance(f, _GAN):
        f.z_var = rec["z_var"]
    if isinstance(f, MDCGAN):
        f.sigma_a = rec["sigma_a"]
    f.meta = dict(rec.get("meta", {}))
    f.fitted = True
    return f


def save_checkpoint(f: Forecaster, path) -> None:
    Path(path).write_text(json.dumps(to_checkpoint(f), sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path) -> Forecaster:
    return from_checkpoint(json.loads(Path(path).read_text(encoding="utf-8")))

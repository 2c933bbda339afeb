"""Univariate Gaussian-mixture posteriors.

A :class:`GMMParams` may carry leading batch dimensions: ``alpha``, ``sigma``
and ``mu`` all have shape ``(..., m)``. Scalar-posterior operations
(``gmm_sample``, ``pool``) expect no batch dimensions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import check_finite, log_sum_exp

SIGMA_FLOOR = 1e-6
ALPHA_FLOOR = 1e-300
HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class GMMParams:
    alpha: np.ndarray
    sigma: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        a, s, u = (np.asarray(v, dtype=np.float64) for v in (self.alpha, self.sigma, self.mu))
        if not (a.shape == s.shape == u.shape) or a.ndim == 0 or a.shape[-1] < 1:
            raise ValueError("alpha, sigma and mu must share a shape (..., m) with m >= 1")
        for name, v in (("alpha", a), ("sigma", s), ("mu", u)):
            check_finite(v, name)
        if np.any(a <= 0) or np.any(a > 1):
            raise ValueError("mixing coefficients must lie in (0, 1]")
        if np.any(np.abs(a.sum(axis=-1) - 1.0) > 1e-12):
            raise ValueError("mixing coefficients must sum to one")
        if np.any(s <= 0):
            raise ValueError("standard deviations must be positive")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "mu", u)

    @property
    def m(self) -> int:
        return self.alpha.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.alpha.shape[:-1]

    def __getitem__(self, idx) -> "GMMParams":
        return GMMParams(self.alpha[idx], self.sigma[idx], self.mu[idx])

    def __len__(self):
        if not self.batch_shape:
            raise TypeError("unbatched GMMParams has no length")
        return self.batch_shape[0]

    def mean(self) -> np.ndarray:
        return np.sum(self.alpha * self.mu, axis=-1)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.tolist(), "sigma": self.sigma.tolist(), "mu": self.mu.tolist()}


@dataclass(frozen=True)
class PredictivePosterior:
    params: GMMParams
    point: float
    origin: str


def split_latents(out: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split raw network output ``(..., 3m)`` into ``(s_alpha, s_sigma, s_mu)``."""
    out = np.asarray(out, dtype=np.float64)
    if out.shape[-1] != 3 * m:
        raise ValueError(f"expected {3 * m} latent columns, got {out.shape[-1]}")
    return out[..., :m], out[..., m:2 * m], out[..., 2 * m:]


def _softmax(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def map_latents(s_alpha, s_sigma, s_mu) -> GMMParams:
    s_alpha, s_sigma, s_mu = (np.asarray(v, dtype=np.float64) for v in (s_alpha, s_sigma, s_mu))
    for name, v in (("s_alpha", s_alpha), ("s_sigma", s_sigma), ("s_mu", s_mu)):
        check_finite(v, name)
    alpha = np.maximum(_softmax(s_alpha), ALPHA_FLOOR)
    sigma = np.maximum(np.exp(np.minimum(s_sigma, 700.0)), SIGMA_FLOOR)
    return GMMParams(alpha, sigma, s_mu.copy())


def component_log_terms(p: GMMParams, y) -> np.ndarray:
    """``log alpha_i + log N(y | mu_i, sigma_i)`` with shape ``(..., m)``."""
    y = np.asarray(y, dtype=np.float64)[..., None]
    z = (y - p.mu) / p.sigma
    return np.log(p.alpha) - np.log(p.sigma) - HALF_LOG_2PI - 0.5 * z * z


def log_likelihood(p: GMMParams, y):
    terms = component_log_terms(p, y)
    if terms.ndim == 1:
        return log_sum_exp(terms)
    return log_sum_exp(terms, axis=-1)


def likelihood(p: GMMParams, y):
    return np.exp(log_likelihood(p, y))


def density(p: GMMParams, y):
    """Mixture density evaluated at every ``y`` for an unbatched posterior."""
    y = np.asarray(y, dtype=np.float64)
    z = (y[..., None] - p.mu) / p.sigma
    return np.sum(p.alpha / (p.sigma * np.sqrt(2 * np.pi)) * np.exp(-0.5 * z * z), axis=-1)


def _batched_density(alpha, sigma, mu, y):
    # alpha/sigma/mu: (B, m); y: (B, C) -> (B, C)
    z = (y[:, :, None] - mu[:, None, :]) / sigma[:, None, :]
    w = alpha / (sigma * np.sqrt(2 * np.pi))
    return np.einsum("bcm,bm->bc", np.exp(-0.5 * z * z), w)


def gmm_mode(p: GMMParams, tol: float = 1e-8, grid: int = 256):
    """Most likely value of each posterior in ``p``.

    Candidates are every component mean plus a uniform grid over
    ``[min(mu - 3 sigma), max(mu + 3 sigma)]``. The best candidate is refined by
    golden-section search over one grid spacing either side of it (repeated
    means would otherwise give a zero-width bracket). Single-component
    posteriors return ``mu`` exactly.
    """
    batched = bool(p.batch_shape)
    alpha = p.alpha.reshape(-1, p.m)
    sigma = p.sigma.reshape(-1, p.m)
    mu = p.mu.reshape(-1, p.m)
    if p.m == 1:
        out = mu[:, 0].copy()
        return out.reshape(p.batch_shape) if batched else float(out[0])

    lo_edge = np.min(mu - 3 * sigma, axis=1, keepdims=True)
    hi_edge = np.max(mu + 3 * sigma, axis=1, keepdims=True)
    frac = np.linspace(0.0, 1.0, grid)[None, :]
    cand = np.sort(np.concatenate([mu, lo_edge + frac * (hi_edge - lo_edge)], axis=1), axis=1)
    dens = _batched_density(alpha, sigma, mu, cand)
    rows = np.arange(cand.shape[0])
    best = np.argmax(dens, axis=1)
    seed = cand[rows, best]
    seed_d = dens[rows, best]
    step = (hi_edge - lo_edge)[:, 0] / (grid - 1)
    lo, hi = seed - step, seed + step

    def f(y):
        return _batched_density(alpha, sigma, mu, y[:, None])[:, 0]

    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, fd = f(c), f(d)
    for _ in range(200):
        if np.all(hi - lo <= tol):
            break
        left = fc >= fd
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
        new_c = np.where(left, hi - _GOLDEN * (hi - lo), d)
        new_d = np.where(left, c, lo + _GOLDEN * (hi - lo))
        new_fc = np.where(left, f(new_c), fd)
        new_fd = np.where(left, fc, f(new_d))
        c, d, fc, fd = new_c, new_d, new_fc, new_fd
    refined = 0.5 * (lo + hi)
    out = np.where(f(refined) >= seed_d, refined, seed)
    return out.reshape(p.batch_shape) if batched else float(out[0])


def gmm_sample(p: GMMParams, rng: np.random.Generator) -> float:
    if p.batch_shape:
        raise ValueError("gmm_sample expects a single posterior")
    cdf = np.cumsum(p.alpha)
    i = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), p.m - 1)
    return float(p.mu[i] + p.sigma[i] * rng.standard_normal())


def pool(posteriors: list[GMMParams], weights=None) -> GMMParams:
    """Concatenate components, scaling each posterior's weights by its pool weight."""
    if not posteriors:
        raise ValueError("nothing to pool")
    if weights is None:
        weights = np.full(len(posteriors), 1.0 / len(posteriors))
    weights = np.asarray(weights, dtype=np.float64)
    if len(weights) != len(posteriors):
        raise ValueError("one weight per posterior required")
    if abs(weights.sum() - 1.0) > 1e-9 or np.any(weights <= 0):
        raise ValueError("pool weights must be positive and sum to one")
    weights = weights / weights.sum()
    alpha = np.concatenate([w * q.alpha for w, q in zip(weights, posteriors)])
    sigma = np.concatenate([q.sigma for q in posteriors])
    mu = np.concatenate([q.mu for q in posteriors])
    return GMMParams(alpha / alpha.sum(), sigma, mu)


def pool_batch(p: GMMParams) -> GMMParams:
    """Uniformly pool along the second-to-last batch axis: ``(B, S, m) -> (B, S*m)``."""
    b, s, m = p.alpha.shape
    alpha = (p.alpha / s).reshape(b, s * m)
    return GMMParams(alpha / alpha.sum(axis=1, keepdims=True),
                     p.sigma.reshape(b, s * m), p.mu.reshape(b, s * m))


def latent_loss_grad(out: np.ndarray, y: np.ndarray, m: int, log: bool = False):
    """Per-sample loss and its gradient w.r.t. the raw latents.

    The loss is ``-L`` (``log=False``) or ``-log L`` (``log=True``) where ``L``
    is the mixture likelihood of ``y``. Returns ``(loss[N], dloss/dout[N, 3m])``.
    """
    s_alpha, s_sigma, s_mu = split_latents(out, m)
    p = map_latents(s_alpha, s_sigma, s_mu)
    terms = component_log_terms(p, y)  # (N, m)
    log_l = log_sum_exp(terms, axis=-1)
    resp = np.exp(terms - log_l[:, None])  # responsibilities
    z = (np.asarray(y)[:, None] - p.mu) / p.sigma
    # d log L / d latents
    g_alpha = resp - p.alpha
    g_sigma = resp * (z * z - 1.0) * (s_sigma > np.log(SIGMA_FLOOR))
    g_mu = resp * z / p.sigma
    grad = np.concatenate([g_alpha, g_sigma, g_mu], axis=1)
    if log:
        return -log_l, -grad
    lik = np.exp(log_l)
    return -lik, -lik[:, None] * grad

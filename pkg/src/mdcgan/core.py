"""Dense-network building blocks trained by hand-written backprop and Adam.

Everything runs in float64 numpy. Randomness comes from a single
``numpy.random.Generator`` backed by PCG64; normal draws use numpy's
ziggurat sampler (``Generator.standard_normal``), uniform draws use
``Generator.random``. Both are bit-reproducible for a given seed across
platforms with the same numpy major version.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.99


class NonFiniteError(ArithmeticError):
    """Raised when an operation produces NaN or Inf."""


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def check_finite(a: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"non-finite values in {what}")
    return a


def log_sum_exp(v, axis=None):
    """Stable ``log(sum(exp(v)))`` via max subtraction.

    With ``axis=None`` the input must be a non-empty 1-d sequence and a float is
    returned; otherwise the reduction runs along ``axis``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    if axis is None:
        v = v.ravel()
        top = v.max()
        if not np.isfinite(top):
            return float(top)
        return float(top + np.log(np.sum(np.exp(v - top))))
    top = np.max(v, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(top), top, 0.0)
    out = safe + np.log(np.sum(np.exp(v - safe), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


class Layer:
    """Base class. Subclasses with parameters fill ``params``/``grads``."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray, train: bool, rng: np.random.Generator | None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def out_width(self, in_width: int) -> int:
        return in_width

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called before forward")
        return self._cache


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        super().__init__()
        if n_in < 1 or n_out < 1:
            raise ValueError(f"invalid Dense widths {n_in}->{n_out}")
        self.n_in, self.n_out = n_in, n_out
        # Glorot-uniform weights, zero bias
        limit = np.sqrt(6.0 / (n_in + n_out))
        if rng is None:
            w = np.zeros((n_in, n_out))
        else:
            w = rng.uniform(-limit, limit, size=(n_in, n_out))
        self.params = {"W": w, "b": np.zeros(n_out)}
        self.grads = {"W": np.zeros_like(w), "b": np.zeros(n_out)}

    def out_width(self, in_width):
        return self.n_out

    def forward(self, x, train, rng):
        if x.shape[1] != self.n_in:
            raise ValueError(f"Dense expects width {self.n_in}, got {x.shape[1]}")
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, g):
        x = self._need_cache()
        if g.shape != (x.shape[0], self.n_out):
            raise ValueError(f"upstream gradient shape {g.shape} does not match output")
        self.grads["W"] = x.T @ g
        self.grads["b"] = g.sum(axis=0)
        return g @ self.params["W"].T

    def __repr__(self):
        return f"Dense({self.n_in}->{self.n_out})"


class LeakyReLU(Layer):
    def __init__(self, slope: float = 0.2):
        super().__init__()
        if slope <= 0:
            raise ValueError("LeakyReLU slope must be positive")
        self.slope = slope

    def forward(self, x, train, rng):
        self._cache = x > 0
        return np.where(self._cache, x, self.slope * x)

    def backward(self, g):
        pos = self._need_cache()
        return np.where(pos, g, self.slope * g)

    def __repr__(self):
        return f"LeakyReLU({self.slope})"


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by 1/(1-rate) in train mode."""

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate

    def forward(self, x, train, rng):
        if not train or self.rate == 0.0:
            self._cache = 1.0
            return x
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self._cache = mask
        return x * mask

    def backward(self, g):
        return g * self._need_cache()

    def __repr__(self):
        return f"Dropout({self.rate})"


class BatchNorm(Layer):
    def __init__(self, width: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        super().__init__()
        self.width, self.momentum, self.eps = width, momentum, eps
        self.params = {"gamma": np.ones(width), "beta": np.zeros(width)}
        self.grads = {"gamma": np.zeros(width), "beta": np.zeros(width)}
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)

    def forward(self, x, train, rng):
        if x.shape[1] != self.width:
            raise ValueError(f"BatchNorm expects width {self.width}, got {x.shape[1]}")
        gamma, beta = self.params["gamma"], self.params["beta"]
        if train:
            if x.shape[0] < 2:
                raise ValueError("train-mode BatchNorm needs a batch of at least 2")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, train)
        return gamma * xhat + beta

    def backward(self, g):
        xhat, inv_std, train = self._need_cache()
        gamma = self.params["gamma"]
        self.grads["gamma"] = np.sum(g * xhat, axis=0)
        self.grads["beta"] = g.sum(axis=0)
        gx = g * gamma
        if not train:
            return gx * inv_std
        n = g.shape[0]
        return inv_std / n * (n * gx - gx.sum(axis=0) - xhat * np.sum(gx * xhat, axis=0))

    def __repr__(self):
        return f"BatchNorm({self.width})"


class Network:
    """Ordered stack of layers with a train/eval mode switch."""

    def __init__(self, layers: Sequence[Layer], in_width: int):
        self.layers = list(layers)
        self.in_width = in_width
        self.train = True
        width = in_width
        for layer in self.layers:
            if isinstance(layer, Dense) and layer.n_in != width:
                raise ValueError(f"{layer!r} cannot follow width {width}")
            if isinstance(layer, BatchNorm) and layer.width != width:
                raise ValueError(f"{layer!r} cannot follow width {width}")
            width = layer.out_width(width)
        self.out_width = width
        self._ran_forward = False

    def widths(self) -> list[int]:
        """Input width followed by the output width of every Dense layer."""
        return [self.in_width] + [l.n_out for l in self.layers if isinstance(l, Dense)]

    def set_train(self, train: bool) -> "Network":
        self.train = train
        return self

    def forward(self, x: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_width:
            raise ValueError(f"expected input of shape (batch, {self.in_width}), got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, self.train, rng)
        check_finite(x, "network output")
        self._ran_forward = True
        return x

    def backward(self, g: np.ndarray) -> np.ndarray:
        if not self._ran_forward:
            raise RuntimeError("backward called before forward")
        g = np.asarray(g, dtype=np.float64)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def param_list(self) -> list[np.ndarray]:
        return [l.params[k] for l in self.layers for k in sorted(l.params)]

    def grad_list(self) -> list[np.ndarray]:
        return [l.grads[k] for l in self.layers for k in sorted(l.params)]

    def state(self) -> list[dict]:
        """Plain-data snapshot of every parameter and running statistic."""
        out = []
        for layer in self.layers:
            entry = {name: arr.copy() for name, arr in layer.params.items()}
            if isinstance(layer, BatchNorm):
                entry["running_mean"] = layer.running_mean.copy()
                entry["running_var"] = layer.running_var.copy()
            out.append(entry)
        return out

    def load_state(self, state: list[dict]) -> None:
        if len(state) != len(self.layers):
            raise ValueError("state does not match network depth")
        for layer, entry in zip(self.layers, state):
            for name in layer.params:
                arr = np.asarray(entry[name], dtype=np.float64)
                if arr.shape != layer.params[name].shape:
                    raise ValueError(f"shape mismatch for {layer!r}.{name}")
                layer.params[name] = arr.copy()
            if isinstance(layer, BatchNorm):
                layer.running_mean = np.asarray(entry["running_mean"], dtype=np.float64).copy()
                layer.running_var = np.asarray(entry["running_var"], dtype=np.float64).copy()

    def __repr__(self):
        return "Network(" + ", ".join(map(repr, self.layers)) + ")"


class Adam:
    """Bias-corrected Adam. Keeps one moment pair per parameter array."""

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-7):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Update ``params`` in place."""
        if len(params) != len(grads):
            raise ValueError("params and grads differ in length")
        for p, g in zip(params, grads):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} != param shape {p.shape}")
            check_finite(g, "gradient")
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


def grad_check(net: Network, loss: LossFn, probe: np.ndarray, eps: float = 1e-5) -> float:
    """Worst relative error between backprop and central differences.

    ``loss`` maps the network output to ``(value, d value / d output)``. The
    error for each parameter array (and for the input) is
    ``|analytic - numeric| / max(|analytic| + |numeric|, 1e-12)`` in the
    Euclidean norm; the maximum over arrays is returned. Dropout must be off.
    """
    for layer in net.layers:
        if isinstance(layer, Dropout) and net.train and layer.rate > 0:
            raise ValueError("grad_check needs dropout disabled")
    probe = np.asarray(probe, dtype=np.float64)

    def value(x=probe):
        return loss(net.forward(x))[0]

    out = net.forward(probe)
    _, g_out = loss(out)
    g_in = net.backward(g_out)
    analytic = [g.copy() for g in net.grad_list()] + [g_in]
    targets = net.param_list() + [probe]

    worst = 0.0
    for arr, ana in zip(targets, analytic):
        num = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + eps
            up = value()
            arr[idx] = orig - eps
            down = value()
            arr[idx] = orig
            num[idx] = (up - down) / (2 * eps)
        denom = max(np.linalg.norm(ana) + np.linalg.norm(num), 1e-12)
        worst = max(worst, float(np.linalg.norm(ana - num) / denom))
    return worst

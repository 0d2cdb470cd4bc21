"""LIF dynamics, the arctan surrogate, and the layer zoo.

Layers consume and produce time-stacked activations of shape [T, N, ...].
Stateless layers fold the T axis into the batch; batch normalization computes
its statistics jointly over batch, time, and space, which the folding gives
for free. The LIF layer carries the membrane recurrence across the T axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import DimensionError, NumericError, StateError

PI_SQ = np.pi * np.pi


def surrogate_g(x):
    """Fire surrogate g(x) = arctan(pi*x)/pi + 1/2."""
    return np.arctan(np.pi * x) / np.pi + 0.5


def surrogate_gprime(x):
    """Exact derivative of the surrogate: g'(x) = 1/(1 + pi^2 x^2)."""
    return 1.0 / (1.0 + PI_SQ * np.square(x))


@dataclass
class LIFParams:
    """Membrane constants. tau >= 1 and v_threshold > v_reset."""

    tau: float = 4.0 / 3.0
    v_threshold: float = 1.0
    v_reset: float = 0.0

    def __post_init__(self):
        if self.tau < 1.0:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if not self.v_threshold > self.v_reset:
            raise ValueError(
                f"v_threshold ({self.v_threshold}) must exceed v_reset ({self.v_reset})"
            )

    def to_dict(self):
        return {"tau": self.tau, "v_threshold": self.v_threshold, "v_reset": self.v_reset}


def lif_step(weighted_input: np.ndarray, prev_u: np.ndarray, params: LIFParams,
             relaxed: bool = False):
    """One membrane update: charge, fire, reset.

    h = u_prev + (x - u_prev)/tau
    s = 1 iff h >= v_threshold   (ties fire; relaxed mode emits g(h - v_th) instead)
    u = h*(1-s) + v_reset*s
    Returns (h, s, u, gprime) with gprime = g'(h - v_threshold).
    """
    x = np.asarray(weighted_input, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("lif_step received non-finite input")
    if x.shape != np.shape(prev_u):
        raise DimensionError(f"input shape {x.shape} != membrane shape {np.shape(prev_u)}")
    h = prev_u + (x - prev_u) / params.tau
    dist = h - params.v_threshold
    if relaxed:
        s = surrogate_g(dist)
    else:
        s = (dist >= 0.0).astype(np.float64)
    u = h * (1.0 - s) + params.v_reset * s
    return h, s, u, surrogate_gprime(dist)


@dataclass
class LIFState:
    """Recorded per-timestep traces of one LIF layer, each stacked as [T, N, ...]."""

    h: np.ndarray
    s: np.ndarray
    u: np.ndarray
    gprime: np.ndarray


class Layer:
    """Base layer: forward caches whatever backward needs; params/grads are name -> array."""

    kind = "layer"

    def params(self) -> dict:
        return {}

    def grads(self) -> dict:
        return {}

    def forward(self, xs: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, gys: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Linear(Layer):
    kind = "linear"

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.in_features = in_features
        self.out_features = out_features
        # Kaiming fan-in scaling.
        std = np.sqrt(2.0 / in_features)
        self.weight = rng.normal(0.0, std, size=(out_features, in_features))
        self.bias = np.zeros(out_features)
        self.dweight = None
        self.dbias = None
        self._x = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self.dweight, "bias": self.dbias}

    def forward(self, xs, training):
        t, n = xs.shape[:2]
        if xs.ndim != 3 or xs.shape[2] != self.in_features:
            raise DimensionError(
                f"linear expects [T, N, {self.in_features}] input, got {xs.shape}"
            )
        flat = xs.reshape(t * n, self.in_features)
        self._x = flat
        out = ops.matmul(flat, self.weight.T) + self.bias
        return out.reshape(t, n, self.out_features)

    def backward(self, gys):
        if self._x is None:
            raise StateError("linear backward before forward")
        t, n = gys.shape[:2]
        gflat = gys.reshape(t * n, self.out_features)
        gx, gw_t = ops.matmul_grad(gflat, self._x, self.weight.T)
        self.dweight = gw_t.T
        self.dbias = gflat.sum(axis=0)
        return gx.reshape(t, n, self.in_features)


class Conv2d(Layer):
    """3x3-style conv block member; no bias (batch norm follows)."""

    kind = "conv"

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int, padding: int, rng: np.random.Generator):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel * kernel
        std = np.sqrt(2.0 / fan_in)
        self.weight = rng.normal(0.0, std, size=(out_channels, in_channels, kernel, kernel))
        self.dweight = None
        self._x = None

    def params(self):
        return {"weight": self.weight}

    def grads(self):
        return {"weight": self.dweight}

    def forward(self, xs, training):
        t, n = xs.shape[:2]
        flat = xs.reshape((t * n,) + xs.shape[2:])
        self._x = flat
        out = ops.conv2d(flat, self.weight, self.stride, self.padding)
        return out.reshape((t, n) + out.shape[1:])

    def backward(self, gys):
        if self._x is None:
            raise StateError("conv backward before forward")
        t, n = gys.shape[:2]
        gflat = gys.reshape((t * n,) + gys.shape[2:])
        gx, self.dweight = ops.conv2d_grad(gflat, self._x, self.weight, self.stride, self.padding)
        return gx.reshape((t, n) + gx.shape[1:])


class BatchNorm2d(Layer):
    """Per-channel normalization over batch, time, and spatial axes jointly.

    Training mode uses batch statistics and updates running ones; inference
    mode uses the running statistics. Running variance stores the biased
    batch variance (same quantity used for normalization).
    """

    kind = "batchnorm"

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.dgamma = None
        self.dbeta = None
        self._cache = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.dgamma, "beta": self.dbeta}

    def state_arrays(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, xs, training):
        t, n = xs.shape[:2]
        x = xs.reshape((t * n,) + xs.shape[2:])
        if x.shape[1] != self.channels:
            raise DimensionError(f"batchnorm expects {self.channels} channels, got {x.shape[1]}")
        axes = (0, 2, 3)
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[:, None, None]) * inv_std[:, None, None]
        self._cache = (xhat, inv_std, training, x.shape)
        y = self.gamma[:, None, None] * xhat + self.beta[:, None, None]
        return y.reshape(xs.shape)

    def backward(self, gys):
        if self._cache is None:
            raise StateError("batchnorm backward before forward")
        xhat, inv_std, training, flat_shape = self._cache
        gy = gys.reshape(flat_shape)
        axes = (0, 2, 3)
        self.dgamma = (gy * xhat).sum(axis=axes)
        self.dbeta = gy.sum(axis=axes)
        gxhat = gy * self.gamma[:, None, None]
        if training:
            term = (
                gxhat
                - gxhat.mean(axis=axes)[:, None, None]
                - xhat * (gxhat * xhat).mean(axis=axes)[:, None, None]
            )
            gx = inv_std[:, None, None] * term
        else:
            gx = gxhat * inv_std[:, None, None]
        return gx.reshape(gys.shape)


class AvgPool2d(Layer):
    kind = "avgpool"

    def __init__(self, window: int, stride: int | None = None):
        self.window = window
        self.stride = window if stride is None else stride
        self._x_shape = None

    def forward(self, xs, training):
        t, n = xs.shape[:2]
        flat = xs.reshape((t * n,) + xs.shape[2:])
        self._x_shape = flat.shape
        out = ops.avgpool2d(flat, self.window, self.stride)
        return out.reshape((t, n) + out.shape[1:])

    def backward(self, gys):
        if self._x_shape is None:
            raise StateError("avgpool backward before forward")
        t, n = gys.shape[:2]
        gflat = gys.reshape((t * n,) + gys.shape[2:])
        gx = ops.avgpool2d_grad(gflat, self._x_shape, self.window, self.stride)
        return gx.reshape((t, n) + gx.shape[1:])


class Flatten(Layer):
    kind = "flatten"

    def __init__(self):
        self._shape = None

    def forward(self, xs, training):
        self._shape = xs.shape
        t, n = xs.shape[:2]
        return xs.reshape(t, n, -1)

    def backward(self, gys):
        if self._shape is None:
            raise StateError("flatten backward before forward")
        return gys.reshape(self._shape)


class LIF(Layer):
    """Leaky integrate-and-fire layer unrolled over the leading T axis.

    Standard mode emits binary spikes and backpropagates through the fire
    decision with the surrogate derivative; the reset factor (1 - s) is
    treated with s detached. Relaxed mode replaces the fire step function
    with the surrogate g itself and backpropagates the exact chain rule
    (including the reset path), which makes finite-difference checks valid.
    """

    kind = "lif"

    def __init__(self, params: LIFParams):
        self.lif_params = params
        self.relaxed = False
        self.state: LIFState | None = None

    def forward(self, xs, training):
        p = self.lif_params
        t_steps = xs.shape[0]
        u = np.full(xs.shape[1:], p.v_reset)
        hs, ss, us, gs = [], [], [], []
        for t in range(t_steps):
            h, s, u, gp = lif_step(xs[t], u, p, relaxed=self.relaxed)
            hs.append(h)
            ss.append(s)
            us.append(u)
            gs.append(gp)
        self.state = LIFState(np.stack(hs), np.stack(ss), np.stack(us), np.stack(gs))
        return self.state.s.copy()

    def backward(self, gys):
        if self.state is None:
            raise StateError("lif backward before forward")
        p = self.lif_params
        st = self.state
        t_steps = gys.shape[0]
        leak = 1.0 - 1.0 / p.tau
        gx = np.empty_like(gys)
        du = np.zeros(gys.shape[1:])
        for t in range(t_steps - 1, -1, -1):
            if self.relaxed:
                du_dh = (1.0 - st.s[t]) + (p.v_reset - st.h[t]) * st.gprime[t]
            else:
                du_dh = 1.0 - st.s[t]
            dh = gys[t] * st.gprime[t] + du * du_dh
            gx[t] = dh / p.tau
            du = dh * leak
        return gx

"""Layer primitives with explicit forward/backward passes.

Every layer works on batch-leading arrays. ``forward`` returns the output
together with a cache object; ``backward`` consumes the upstream gradient and
that cache and returns ``(grad_input, param_grads)``. Layers keep their
parameters in ``self.params`` and never store per-call state, so a trained
layer can be shared freely between callers.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with a layer."""


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, grad, cache):
        raise NotImplementedError

    def spec(self) -> dict:
        return {"kind": self.kind}

    def init_params(self, rng, dtype):
        pass

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.spec().items() if k != "kind")
        return f"{type(self).__name__}({args})"


class Conv2D(Layer):
    """2-D cross-correlation over ``(N, C, H, W)`` inputs."""

    kind = "conv"

    def __init__(self, in_channels, out_channels, kernel_size=3, padding="same"):
        super().__init__()
        kh, kw = (kernel_size, kernel_size) if np.isscalar(kernel_size) else kernel_size
        if padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
        if padding == "same" and (kh % 2 == 0 or kw % 2 == 0):
            raise ShapeError("'same' padding needs odd kernel extents")
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = (int(kh), int(kw))
        self.padding = padding

    def spec(self):
        return {
            "kind": self.kind,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": list(self.kernel_size),
            "padding": self.padding,
        }

    def init_params(self, rng, dtype):
        kh, kw = self.kernel_size
        fan_in = self.in_channels * kh * kw
        limit = np.sqrt(6.0 / fan_in)
        shape = (self.out_channels, self.in_channels, kh, kw)
        self.params = {
            "W": rng.uniform(-limit, limit, size=shape).astype(dtype),
            "b": np.zeros(self.out_channels, dtype=dtype),
        }

    def _pads(self):
        if self.padding == "valid":
            return 0, 0
        kh, kw = self.kernel_size
        return kh // 2, kw // 2

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(f"conv expects {self.in_channels} channels, got {c}")
        kh, kw = self.kernel_size
        ph, pw = self._pads()
        ho, wo = h + 2 * ph - kh + 1, w + 2 * pw - kw + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"kernel {self.kernel_size} larger than input {h}x{w}")
        return (self.out_channels, ho, wo)

    def _wmat(self):
        # rows ordered (kh, kw, cin) to match the channels-last columns
        return self.params["W"].transpose(0, 2, 3, 1).reshape(self.out_channels, -1)

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"conv expects (N, {self.in_channels}, H, W), got {x.shape}")
        ph, pw = self._pads()
        cols, (n, ho, wo) = _im2col(x.transpose(0, 2, 3, 1), self.kernel_size, (ph, pw))
        out = cols @ self._wmat().T + self.params["b"]
        # an NCHW view of channels-last memory; the next convolution reads it without a copy
        out = out.reshape(n, ho, wo, self.out_channels).transpose(0, 3, 1, 2)
        return out, (cols, x.shape[2:])

    def backward(self, grad, cache, input_grad=True, param_grads=True):
        cols, (h, w) = cache
        kh, kw = self.kernel_size
        ph, pw = self._pads()
        n, _, ho, wo = grad.shape
        gmat = grad.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        pgrads = {}
        if param_grads:
            dW = (gmat.T @ cols).reshape(self.out_channels, kh, kw, self.in_channels).transpose(0, 3, 1, 2)
            pgrads = {"W": np.ascontiguousarray(dW), "b": gmat.sum(axis=0)}
        if not input_grad:
            return None, pgrads
        # scatter each output pixel's contribution back onto the kernel taps (col2im)
        taps = (gmat @ self._wmat()).reshape(n, ho, wo, kh, kw, self.in_channels)
        dxp = np.zeros((n, ho + kh - 1, wo + kw - 1, self.in_channels), dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + ho, j:j + wo] += taps[:, :, :, i, j]
        return dxp[:, ph:ph + h, pw:pw + w].transpose(0, 3, 1, 2), pgrads


def _im2col(xh, kernel_size, pads):
    """Patch matrix of a channels-last array; rows are output pixels, columns (kh, kw, c)."""
    kh, kw = kernel_size
    ph, pw = pads
    if ph or pw:
        xh = np.pad(xh, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    n, hp, wp, c = xh.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    windows = sliding_window_view(xh, (kh, kw), axis=(1, 2))
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)
    return cols, (n, ho, wo)


def _quadrants(x):
    return [x[:, :, 0::2, 0::2], x[:, :, 0::2, 1::2], x[:, :, 1::2, 0::2], x[:, :, 1::2, 1::2]]


class MaxPool2(Layer):
    """2x2 max pooling with stride 2; odd extents are replicate-padded."""

    kind = "maxpool"

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (c, (h + 1) // 2, (w + 1) // 2)

    def forward(self, x, train=False, rng=None):
        n, c, h, w = x.shape
        pad_h, pad_w = h % 2, w % 2
        if pad_h or pad_w:
            x = np.pad(x, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)), mode="edge")
        q = _quadrants(x)
        out = np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))
        # the argmax is only needed by backward, so it is derived there from x and out
        return out, (x, out, (h, w), (pad_h, pad_w))

    def backward(self, grad, cache):
        x, out, (h, w), (pad_h, pad_w) = cache
        dxp = np.zeros_like(x, dtype=grad.dtype)  # keeps the memory layout of the forward input
        zero = np.zeros((), dtype=grad.dtype)
        # route to the first position attaining the maximum, in row-major order within the window
        free = np.ones(out.shape, dtype=bool)
        for k, (qk, (di, dj)) in enumerate(zip(_quadrants(x), ((0, 0), (0, 1), (1, 0), (1, 1)))):
            hit = free & (qk == out) if k < 3 else free
            dxp[:, :, di::2, dj::2] = np.where(hit, grad, zero)
            free &= ~hit
        if pad_h:
            dxp[:, :, h - 1, :] += dxp[:, :, h, :]
        if pad_w:
            dxp[:, :, :, w - 1] += dxp[:, :, :, w]
        return dxp[:, :, :h, :w], {}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        out = np.maximum(x, 0)
        return out, out

    def backward(self, grad, cache):
        return grad * (cache > 0), {}


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, train=False, rng=None):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out, out

    def backward(self, grad, cache):
        return grad * cache * (1.0 - cache), {}


class Softmax(Layer):
    """Softmax over the last axis."""

    kind = "softmax"

    def forward(self, x, train=False, rng=None):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
        return p, p

    def backward(self, grad, cache):
        p = cache
        return p * (grad - (grad * p).sum(axis=-1, keepdims=True)), {}


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features):
        super().__init__()
        self.in_features = int(in_features)
        self.out_features = int(out_features)

    def spec(self):
        return {"kind": self.kind, "in_features": self.in_features, "out_features": self.out_features}

    def init_params(self, rng, dtype):
        limit = np.sqrt(6.0 / self.in_features)
        self.params = {
            "W": rng.uniform(-limit, limit, size=(self.in_features, self.out_features)).astype(dtype),
            "b": np.zeros(self.out_features, dtype=dtype),
        }

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise ShapeError(f"dense expects ({self.in_features},), got {tuple(in_shape)}")
        return (self.out_features,)

    def forward(self, x, train=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"dense expects (N, {self.in_features}), got {x.shape}")
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, grad, cache):
        x = cache
        return grad @ self.params["W"].T, {"W": x.T @ grad, "b": grad.sum(axis=0)}


class Dropout(Layer):
    """Inverted dropout; identity outside training mode."""

    kind = "dropout"

    def __init__(self, rate=0.25):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = float(rate)

    def spec(self):
        return {"kind": self.kind, "rate": self.rate}

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ValueError("dropout in training mode needs an explicit rng")
        keep = (rng.random(x.shape) >= self.rate).astype(x.dtype) / (1.0 - self.rate)
        return x * keep, keep

    def backward(self, grad, cache):
        return (grad if cache is None else grad * cache), {}


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False, rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad, cache):
        return grad.reshape(cache), {}


class Upsample2(Layer):
    """Nearest-neighbour 2x spatial upsampling."""

    kind = "upsample"

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (c, 2 * h, 2 * w)

    def forward(self, x, train=False, rng=None):
        return x.repeat(2, axis=2).repeat(2, axis=3), None

    def backward(self, grad, cache):
        n, c, h, w = grad.shape
        return grad.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)), {}


class ConcatSkip(Layer):
    """Channel concatenation of the running tensor with an earlier layer's output.

    ``source`` is the index of the layer whose output is appended; the
    network wires the second operand in.
    """

    kind = "concat-skip"

    def __init__(self, source):
        super().__init__()
        self.source = int(source)

    def spec(self):
        return {"kind": self.kind, "source": self.source}

    def output_shape(self, in_shape, skip_shape=None):
        if skip_shape is None:
            raise ShapeError("concat-skip needs the skip operand shape")
        if tuple(in_shape[1:]) != tuple(skip_shape[1:]):
            raise ShapeError(f"cannot concatenate {tuple(in_shape)} with {tuple(skip_shape)}")
        return (in_shape[0] + skip_shape[0],) + tuple(in_shape[1:])

    def forward(self, x, skip=None, train=False, rng=None):
        return np.concatenate([x, skip], axis=1), x.shape[1]

    def backward(self, grad, cache):
        c = cache
        return (grad[:, :c], grad[:, c:]), {}


LAYER_KINDS = {
    cls.kind: cls
    for cls in (Conv2D, MaxPool2, ReLU, Sigmoid, Softmax, Dense, Dropout, Flatten, Upsample2, ConcatSkip)
}


def layer_from_spec(spec: dict) -> Layer:
    spec = dict(spec)
    kind = spec.pop("kind")
    try:
        cls = LAYER_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown layer kind {kind!r}") from None
    if kind == "conv":
        spec["kernel_size"] = tuple(spec["kernel_size"])
    return cls(**spec)

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import ConcatSkip, Conv2D, Layer, ShapeError, layer_from_spec


@dataclass
class Trace:
    """Everything a forward pass retains: all activations plus layer caches.

    ``activations[0]`` is the input and ``activations[i + 1]`` the output of
    layer ``i``.
    """

    activations: list
    caches: list

    @property
    def output(self):
        return self.activations[-1]


@dataclass
class Gradients:
    input: np.ndarray
    params: dict = field(default_factory=dict)
    activations: list = field(default_factory=list)


class Network:
    """A layer list executed in order, with optional skip concatenations.

    Shapes are checked once at construction so that a malformed architecture
    fails at build time rather than mid-training.
    """

    def __init__(self, layers, input_shape, seed=0, dtype=np.float32, init=True):
        self.layers: list[Layer] = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.dtype = np.dtype(dtype)
        self.shapes = self._check_shapes()
        if init:
            rng = np.random.default_rng(seed)
            for layer in self.layers:
                layer.init_params(rng, self.dtype)

    def _check_shapes(self):
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                if isinstance(layer, ConcatSkip):
                    if not 0 <= layer.source < i:
                        raise ShapeError(f"skip source {layer.source} must precede layer {i}")
                    out = layer.output_shape(shapes[-1], shapes[layer.source + 1])
                else:
                    out = layer.output_shape(shapes[-1])
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
            shapes.append(tuple(out))
        return shapes

    @property
    def output_shape(self):
        return self.shapes[-1]

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield f"{i}.{layer.kind}.{name}", value

    def param_dict(self):
        return dict(self.named_params())

    def load_params(self, params: dict):
        for i, layer in enumerate(self.layers):
            for name in list(layer.params):
                key = f"{i}.{layer.kind}.{name}"
                value = np.asarray(params[key], dtype=self.dtype)
                if value.shape != layer.params[name].shape:
                    raise ShapeError(f"{key}: expected {layer.params[name].shape}, got {value.shape}")
                layer.params[name] = value.copy()

    def astype(self, dtype):
        """Return a copy of this network with parameters cast to ``dtype``."""
        clone = Network([layer_from_spec(layer.spec()) for layer in self.layers],
                        self.input_shape, dtype=dtype, init=False)
        for src, dst in zip(self.layers, clone.layers):
            dst.params = {k: v.astype(dtype) for k, v in src.params.items()}
        return clone

    def specs(self):
        return [layer.spec() for layer in self.layers]

    def index_of(self, kind, occurrence=-1):
        hits = [i for i, layer in enumerate(self.layers) if layer.kind == kind]
        if not hits:
            raise ValueError(f"network has no {kind!r} layer")
        return hits[occurrence]

    def forward(self, x, train=False, rng=None, stop=None) -> Trace:
        """Run layers ``0..stop`` (inclusive; all layers by default)."""
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"network expects (N, {self.input_shape}), got {x.shape}")
        last = len(self.layers) - 1 if stop is None else stop
        acts, caches = [x], []
        for i, layer in enumerate(self.layers[: last + 1]):
            if isinstance(layer, ConcatSkip):
                y, cache = layer.forward(acts[-1], acts[layer.source + 1])
            else:
                y, cache = layer.forward(acts[-1], train=train, rng=rng)
            acts.append(y)
            caches.append(cache)
        return Trace(acts, caches)

    def predict(self, x, batch_size=64, stop=None):
        x = np.asarray(x, dtype=self.dtype)
        outs = [self.forward(x[i:i + batch_size], stop=stop).output
                for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)

    def backward(self, trace: Trace, grad, start=None, param_grads=True, input_grad=True) -> Gradients:
        """Backpropagate ``grad`` given at the output of layer ``start``.

        ``start`` defaults to the last layer run in ``trace``. With
        ``input_grad=False`` a leading convolution skips its input gradient,
        which training never needs; ``Gradients.input`` is then None.
        """
        start = len(trace.caches) - 1 if start is None else start
        if start >= len(trace.caches):
            raise ValueError("trace does not contain the requested start layer")
        g = [None] * (start + 2)
        g[start + 1] = np.asarray(grad, dtype=self.dtype)
        pgrads = {}
        for i in range(start, -1, -1):
            if g[i + 1] is None:
                continue
            layer = self.layers[i]
            if isinstance(layer, ConcatSkip):
                (dx, dskip), _ = layer.backward(g[i + 1], trace.caches[i])
                src = layer.source + 1
                g[src] = dskip if g[src] is None else g[src] + dskip
            else:
                if isinstance(layer, Conv2D):
                    dx, grads = layer.backward(g[i + 1], trace.caches[i], input_grad=i > 0 or input_grad,
                                               param_grads=param_grads)
                else:
                    dx, grads = layer.backward(g[i + 1], trace.caches[i])
                if param_grads:
                    for name, value in grads.items():
                        pgrads[f"{i}.{layer.kind}.{name}"] = value
            g[i] = dx if g[i] is None else g[i] + dx
        return Gradients(input=g[0], params=pgrads, activations=g)

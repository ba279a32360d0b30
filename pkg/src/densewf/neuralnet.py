"""A small NHWC network stack with hand-written reverse-mode gradients.

Six layer kinds are supported: ``conv`` (stride 1, zero "same" padding),
``maxpool2`` (2x2, floor division), ``relu``, ``batchnorm`` (statistics over
every axis except the last), ``dense`` (flattens its input) and ``softmax``.
Parameters live in plain dicts of arrays so they serialize trivially.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
KINDS = ("conv", "maxpool2", "relu", "batchnorm", "dense", "softmax")


class NonFiniteError(FloatingPointError):
    """A loss, gradient or input contained NaN or infinity."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: tuple[int, int] = (0, 0)
    fan_in: int = 0  # conv: in channels, dense: flattened inputs, batchnorm: channels
    fan_out: int = 0
    bias: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def to_json(self) -> dict[str, Any]:
        return {"kind": self.kind, "kernel": list(self.kernel), "fan_in": self.fan_in,
                "fan_out": self.fan_out, "bias": self.bias}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "LayerSpec":
        return cls(obj["kind"], tuple(obj["kernel"]), obj["fan_in"], obj["fan_out"], obj["bias"])


def conv(cin: int, cout: int, k: int = 3, bias: bool = True) -> LayerSpec:
    return LayerSpec("conv", (k, k), cin, cout, bias)


def dense(fan_in: int, fan_out: int, bias: bool = True) -> LayerSpec:
    return LayerSpec("dense", fan_in=fan_in, fan_out=fan_out, bias=bias)


def batchnorm(channels: int) -> LayerSpec:
    return LayerSpec("batchnorm", fan_in=channels, fan_out=channels)


MAXPOOL2 = LayerSpec("maxpool2")
RELU = LayerSpec("relu")
SOFTMAX = LayerSpec("softmax")


def patch_architecture(
    in_channels: int,
    widths: Sequence[int] = (32, 32, 64, 64),
    hidden: int = 1024,
    kernel: int = 3,
    patch: int = 21,
) -> list[LayerSpec]:
    """conv-BN-ReLU-pool blocks, then dense(hidden)-ReLU-dense(2)-softmax.

    The convolutions carry no bias since the batchnorm shift absorbs it.
    """
    layers: list[LayerSpec] = []
    cin, side = in_channels, patch
    for w in widths:
        layers += [conv(cin, w, kernel, bias=False), batchnorm(w), RELU, MAXPOOL2]
        cin, side = w, side // 2
    layers += [dense(side * side * cin, hidden), RELU, dense(hidden, 2), SOFTMAX]
    return layers


def output_shape(layers: Sequence[LayerSpec], input_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Propagate a per-sample shape (H, W, C) through ``layers``; raises on mismatch."""
    shape = tuple(input_shape)
    for idx, spec in enumerate(layers):
        if spec.kind == "conv":
            if len(shape) != 3 or shape[2] != spec.fan_in:
                raise ValueError(f"layer {idx}: conv expects (H, W, {spec.fan_in}), got {shape}")
            shape = (shape[0], shape[1], spec.fan_out)
        elif spec.kind == "maxpool2":
            if len(shape) != 3 or min(shape[:2]) < 2:
                raise ValueError(f"layer {idx}: maxpool2 needs a spatial map of side >= 2, got {shape}")
            shape = (shape[0] // 2, shape[1] // 2, shape[2])
        elif spec.kind == "batchnorm":
            if shape[-1] != spec.fan_in:
                raise ValueError(f"layer {idx}: batchnorm over {spec.fan_in} channels, got {shape}")
        elif spec.kind == "dense":
            if int(np.prod(shape)) != spec.fan_in:
                raise ValueError(f"layer {idx}: dense fan-in {spec.fan_in} != {int(np.prod(shape))}")
            shape = (spec.fan_out,)
    return shape


# --- parameters ---------------------------------------------------------------


@dataclass
class Network:
    layers: list[LayerSpec]
    params: list[dict[str, np.ndarray]]
    state: list[dict[str, np.ndarray]]
    training: bool = False
    dtype: np.dtype = field(default_factory=lambda: np.dtype(np.float64))

    def copy(self) -> "Network":
        return Network(
            list(self.layers),
            [{k: v.copy() for k, v in p.items()} for p in self.params],
            [{k: v.copy() for k, v in s.items()} for s in self.state],
            self.training,
            self.dtype,
        )

    def tensors(self) -> list[np.ndarray]:
        """Parameters then running statistics in a fixed layer order."""
        out = []
        for p, s in zip(self.params, self.state):
            out += [p[k] for k in sorted(p)] + [s[k] for k in sorted(s)]
        return out

    @classmethod
    def from_tensors(cls, layers: Sequence[LayerSpec], tensors: Sequence[np.ndarray]) -> "Network":
        net = init_network(layers, seed=0)
        it = iter(tensors)
        for p, s in zip(net.params, net.state):
            for d in (p, s):
                for k in sorted(d):
                    t = next(it)
                    if t.shape != d[k].shape:
                        raise ValueError(f"tensor shape {t.shape} != expected {d[k].shape}")
                    d[k] = t
        net.dtype = tensors[0].dtype if len(tensors) else np.dtype(np.float64)
        return net

    def astype(self, dtype) -> "Network":
        dt = np.dtype(dtype)
        return Network(
            list(self.layers),
            [{k: v.astype(dt) for k, v in p.items()} for p in self.params],
            [{k: v.astype(dt) for k, v in s.items()} for s in self.state],
            self.training,
            dt,
        )


def init_network(layers: Sequence[LayerSpec], seed: int | np.random.SeedSequence, dtype=np.float64) -> Network:
    """He-uniform weights (limit sqrt(6 / fan_in)), zero biases, unit BN scale."""
    rng = np.random.default_rng(seed)
    dt = np.dtype(dtype)
    params, state = [], []
    for spec in layers:
        p: dict[str, np.ndarray] = {}
        s: dict[str, np.ndarray] = {}
        if spec.kind == "conv":
            kh, kw = spec.kernel
            fan_in = kh * kw * spec.fan_in
            lim = np.sqrt(6.0 / fan_in)
            p["w"] = rng.uniform(-lim, lim, (kh, kw, spec.fan_in, spec.fan_out)).astype(dt)
            if spec.bias:
                p["b"] = np.zeros(spec.fan_out, dt)
        elif spec.kind == "dense":
            lim = np.sqrt(6.0 / spec.fan_in)
            p["w"] = rng.uniform(-lim, lim, (spec.fan_in, spec.fan_out)).astype(dt)
            if spec.bias:
                p["b"] = np.zeros(spec.fan_out, dt)
        elif spec.kind == "batchnorm":
            p["gamma"] = np.ones(spec.fan_in, dt)
            p["beta"] = np.zeros(spec.fan_in, dt)
            s["mean"] = np.zeros(spec.fan_in, dt)
            s["var"] = np.ones(spec.fan_in, dt)
        params.append(p)
        state.append(s)
    return Network(list(layers), params, state, False, dt)


# --- single layers --------------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, kh - 1 - ph), (pw, kw - 1 - pw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # B, H, W, C, kh, kw
    B, H, W, C = x.shape
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(B * H * W, kh * kw * C)


def _col2im(cols: np.ndarray, shape: tuple[int, ...], kh: int, kw: int) -> np.ndarray:
    B, H, W, C = shape
    ph, pw = kh // 2, kw // 2
    g = cols.reshape(B, H, W, kh, kw, C)
    out = np.zeros((B, H + kh - 1, W + kw - 1, C), cols.dtype)
    for a in range(kh):
        for b in range(kw):
            out[:, a : a + H, b : b + W, :] += g[:, :, :, a, b, :]
    return out[:, ph : ph + H, pw : pw + W, :]


def layer_forward(spec: LayerSpec, p: dict, s: dict, x: np.ndarray, training: bool):
    """Returns ``(output, cache, batch_stats)``; batch_stats is ``None`` unless BN trains."""
    kind = spec.kind
    if kind == "conv":
        kh, kw = spec.kernel
        cols = _im2col(x, kh, kw)
        out = cols @ p["w"].reshape(-1, spec.fan_out)
        if "b" in p:
            out += p["b"]
        return out.reshape(x.shape[:3] + (spec.fan_out,)), (cols, x.shape), None
    if kind == "maxpool2":
        B, H, W, C = x.shape
        h2, w2 = H // 2, W // 2
        blocks = x[:, : 2 * h2, : 2 * w2, :].reshape(B, h2, 2, w2, 2, C).transpose(0, 1, 3, 5, 2, 4)
        blocks = blocks.reshape(B, h2, w2, C, 4)
        arg = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        return out, (arg, x.shape), None
    if kind == "relu":
        return np.maximum(x, 0), x > 0, None
    if kind == "batchnorm":
        axes = tuple(range(x.ndim - 1))
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            stats = {"mean": mean, "var": var}
        else:
            mean, var, stats = s["mean"], s["var"], None
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mean) * inv
        return xhat * p["gamma"] + p["beta"], (xhat, inv, training), stats
    if kind == "dense":
        flat = x.reshape(x.shape[0], -1)
        out = flat @ p["w"]
        if "b" in p:
            out = out + p["b"]
        return out, (flat, x.shape), None
    # softmax
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)
    return out, out, None


def layer_backward(spec: LayerSpec, p: dict, cache, dout: np.ndarray, need_dx: bool = True):
    """Returns ``(dx, dparams)`` for one layer; ``dx`` is ``None`` if not needed."""
    kind = spec.kind
    if kind == "conv":
        cols, shape = cache
        kh, kw = spec.kernel
        g = dout.reshape(-1, spec.fan_out)
        grads = {"w": (cols.T @ g).reshape(p["w"].shape)}
        if "b" in p:
            grads["b"] = g.sum(axis=0)
        if not need_dx:
            return None, grads
        dcols = g @ p["w"].reshape(-1, spec.fan_out).T
        return _col2im(dcols, shape, kh, kw), grads
    if kind == "maxpool2":
        arg, shape = cache
        B, H, W, C = shape
        h2, w2 = H // 2, W // 2
        onehot = (arg[..., None] == np.arange(4)) * dout[..., None]  # B,h2,w2,C,4
        blocks = onehot.reshape(B, h2, w2, C, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        dx = np.zeros(shape, dout.dtype)
        dx[:, : 2 * h2, : 2 * w2, :] = blocks.reshape(B, 2 * h2, 2 * w2, C)
        return dx, {}
    if kind == "relu":
        return dout * cache, {}
    if kind == "batchnorm":
        xhat, inv, training = cache
        axes = tuple(range(dout.ndim - 1))
        grads = {"gamma": (dout * xhat).sum(axis=axes), "beta": dout.sum(axis=axes)}
        dxhat = dout * p["gamma"]
        if not training:
            return dxhat * inv, grads
        n = dout.size // dout.shape[-1]
        dx = inv / n * (n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        return dx, grads
    if kind == "dense":
        flat, shape = cache
        grads = {"w": flat.T @ dout}
        if "b" in p:
            grads["b"] = dout.sum(axis=0)
        return (dout @ p["w"].T).reshape(shape), grads
    out = cache
    return out * (dout - (dout * out).sum(axis=-1, keepdims=True)), {}


# --- whole network ----------------------------------------------------------------


def _check_input(net: Network, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim < 2 or x.shape[0] == 0:
        raise ValueError("expected a nonempty batch")
    output_shape(net.layers, x.shape[1:])
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("non-finite values in the input batch")
    return x.astype(net.dtype, copy=False)


def forward_cached(net: Network, x: np.ndarray, training: bool | None = None, stop: int | None = None):
    """Run layers ``[0, stop)``; returns ``(output, caches, batch_stats)``."""
    training = net.training if training is None else training
    x = _check_input(net, x)
    caches, stats = [], []
    layers = net.layers if stop is None else net.layers[:stop]
    for spec, p, s in zip(layers, net.params, net.state):
        x, cache, st = layer_forward(spec, p, s, x, training)
        caches.append(cache)
        stats.append(st)
    return x, caches, stats


def forward(net: Network, x: np.ndarray, training: bool | None = None) -> np.ndarray:
    """Class probabilities ``(B, 2)`` (or whatever the last layer emits)."""
    return forward_cached(net, x, training)[0]


def backward(net: Network, caches: list, dout: np.ndarray, start: int | None = None) -> list[dict]:
    """Back-propagate ``dout`` from the output of layer ``start - 1`` (default: last)."""
    n = len(caches) if start is None else start
    grads: list[dict] = [{} for _ in net.layers]
    for idx in range(n - 1, -1, -1):
        dout, grads[idx] = layer_backward(net.layers[idx], net.params[idx], caches[idx], dout, idx > 0)
    return grads


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of integer ``labels`` under ``probs``."""
    p = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(p, np.finfo(probs.dtype).tiny))))


def loss_and_gradients(net: Network, x: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy, per-layer gradients and BN batch statistics.

    The network runs in training mode (batch statistics).  When the last layer
    is a softmax the loss is taken from the log-softmax of its input and the
    backward pass starts from ``(p - y) / B``, which avoids ``1 / p``.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or len(labels) != len(x):
        raise ValueError("labels must be a vector aligned with the batch")
    if labels.size and (labels.min() < 0 or labels.max() > 1):
        raise ValueError("labels must be 0 or 1")
    labels = labels.astype(np.int64)
    B = len(labels)
    if net.layers[-1].kind == "softmax":
        logits, caches, stats = forward_cached(net, x, True, stop=len(net.layers) - 1)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss = float(-logp[np.arange(B), labels].mean())
        d = np.exp(logp)
        d[np.arange(B), labels] -= 1.0
        grads = backward(net, caches, d / B)
    else:
        probs, caches, stats = forward_cached(net, x, True)
        loss = cross_entropy(probs, labels)
        d = np.zeros_like(probs)
        d[np.arange(B), labels] = -1.0 / (B * probs[np.arange(B), labels])
        grads = backward(net, caches, d)
    if not np.isfinite(loss):
        raise NonFiniteError(f"loss is {loss}")
    return loss, grads, stats


def sgd_step(net: Network, grads: list[dict], lr: float, batch_stats: list | None = None) -> Network:
    """In-place ``theta -= lr * grad``; BN running stats follow ``batch_stats``.

    Every gradient is checked before anything is written, so a NaN leaves the
    network untouched.
    """
    if len(grads) != len(net.params):
        raise ValueError("gradient list does not match the network")
    for idx, (p, g) in enumerate(zip(net.params, grads)):
        for k, v in g.items():
            if k not in p or v.shape != p[k].shape:
                raise ValueError(f"layer {idx}: gradient {k} does not match parameters")
            if not np.all(np.isfinite(v)):
                raise NonFiniteError(f"layer {idx}: non-finite gradient for {k}")
    for p, g in zip(net.params, grads):
        for k, v in g.items():
            p[k] -= (lr * v).astype(p[k].dtype, copy=False)
    if batch_stats is not None:
        for s, st in zip(net.state, batch_stats):
            if st is None:
                continue
            for k in ("mean", "var"):
                s[k] = (BN_MOMENTUM * s[k] + (1.0 - BN_MOMENTUM) * st[k]).astype(s[k].dtype)
    return net

"""Toy convolutional family with exact analytic gradients.

A fixed 3x3 stride-2 stem conv maps the input to the first stage width.
Each block is an optional 1x1 expansion conv (``c_in -> c_in * e``, ReLU)
followed by a ``k x k`` conv to the stage width. The first block of every
stage downsamples with stride 2 and ends in a ReLU; the remaining blocks keep
the shape, end linearly and add their input back (identity skip). A global
average pool and a linear head produce the logits.

Weights live in one flat float64 vector; :func:`weight_layout` maps each
layer to its slice.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from ..search_space import NetworkConfig

INIT_GAIN = 2.0
RESIDUAL_GAIN = 0.1  # shrinks the last conv of each skip block at init


@dataclass(frozen=True)
class Layer:
    kind: str  # "conv" or "linear"
    c_in: int
    c_out: int
    kernel: int = 1
    stride: int = 1
    relu: bool = True
    skip_in: bool = False  # layer input is the identity branch of a block
    skip_out: bool = False  # add the saved identity branch after this layer

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "conv":
            return (self.c_out, self.c_in, self.kernel, self.kernel)
        return (self.c_in, self.c_out)

    @property
    def size(self) -> int:
        return int(np.prod(self.weight_shape)) + self.c_out

    @property
    def fan_in(self) -> int:
        return self.c_in * self.kernel * self.kernel if self.kind == "conv" else self.c_in


@lru_cache(maxsize=1024)
def layer_plan(config: NetworkConfig) -> tuple[Layer, ...]:
    c = config.stages[0].channels
    layers = [Layer("conv", config.in_channels, c, 3, 2)]
    for stage in config.stages:
        for b in range(stage.depth):
            residual = b > 0
            stride = 1 if residual else 2
            e = stage.expansions[b]
            convs = []
            if e > 1:
                convs.append(Layer("conv", c, c * e, 1, 1))
            convs.append(Layer("conv", c * e, stage.channels, stage.kernels[b], stride,
                               relu=not residual, skip_out=residual))
            if residual:
                convs[0] = replace(convs[0], skip_in=True)
            layers.extend(convs)
            c = stage.channels
    layers.append(Layer("linear", c, config.num_classes, relu=False))
    return tuple(layers)


def weight_layout(config: NetworkConfig) -> list[tuple[Layer, slice, slice]]:
    """(layer, weight slice, bias slice) for every layer, in forward order."""
    out = []
    start = 0
    for layer in layer_plan(config):
        n_w = layer.size - layer.c_out
        out.append((layer, slice(start, start + n_w), slice(start + n_w, start + layer.size)))
        start += layer.size
    return out


def param_count(config: NetworkConfig) -> int:
    return sum(layer.size for layer in layer_plan(config))


def _conv_out(size: int, k: int, stride: int) -> int:
    return (size + 2 * (k // 2) - k) // stride + 1


def macs(config: NetworkConfig) -> int:
    """Multiply-accumulates of one forward pass (conv and linear layers)."""
    total = 0
    h = config.input_resolution
    for layer in layer_plan(config):
        if layer.kind == "conv":
            h = _conv_out(h, layer.kernel, layer.stride)
            total += h * h * layer.c_out * layer.c_in * layer.kernel * layer.kernel
        else:
            total += layer.c_in * layer.c_out
    return total


def build_network(config: NetworkConfig, rng_seed) -> np.ndarray:
    """He-scaled Gaussian weights (std sqrt(2 / fan_in)) and zero biases.

    The conv closing a skip block is further scaled by ``RESIDUAL_GAIN`` so
    deep stacks start close to their shallow counterparts.
    """
    rng = np.random.default_rng(rng_seed)
    w = np.zeros(param_count(config))
    for layer, ws, _ in weight_layout(config):
        std = np.sqrt(INIT_GAIN / layer.fan_in) * (RESIDUAL_GAIN if layer.skip_out else 1.0)
        w[ws] = rng.standard_normal(ws.stop - ws.start) * std
    return w


def _unpack(w: np.ndarray, config: NetworkConfig):
    if w.ndim != 1 or w.size != param_count(config):
        raise ShapeError(f"weight vector has {w.size} entries, config needs {param_count(config)}")
    return [(layer, w[ws].reshape(layer.weight_shape), w[bs]) for layer, ws, bs in weight_layout(config)]


def _conv_forward(x, weight, bias, k, stride):
    """Returns the activation and the column matrix reused by the backward pass."""
    bsz = x.shape[0]
    c_out = weight.shape[0]
    if k == 1 and stride == 1:
        out = np.tensordot(weight[:, :, 0, 0], x, axes=([1], [1])).transpose(1, 0, 2, 3)
        return out + bias[None, :, None, None], None
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(bsz * ho * wo, -1)
    out = (cols @ weight.reshape(c_out, -1).T + bias).reshape(bsz, ho, wo, c_out)
    return out.transpose(0, 3, 1, 2), cols


def _conv_backward(dout, x, cols, weight, k, stride, need_dx=True):
    db = dout.sum(axis=(0, 2, 3))
    if cols is None:
        w2 = weight[:, :, 0, 0]
        dw = np.tensordot(dout, x, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
        dx = np.tensordot(w2, dout, axes=([0], [1])).transpose(1, 0, 2, 3) if need_dx else None
        return dx, dw, db
    bsz, c, h, wd = x.shape
    c_out, ho, wo = dout.shape[1], dout.shape[2], dout.shape[3]
    dmat = dout.transpose(0, 2, 3, 1).reshape(-1, c_out)
    dw = (dmat.T @ cols).reshape(weight.shape)
    if not need_dx:
        return None, dw, db
    dcols = (dmat @ weight.reshape(c_out, -1)).reshape(bsz, ho, wo, c, k, k)
    p = k // 2
    dxp = np.zeros((bsz, c, h + 2 * p, wd + 2 * p))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, p:p + h, p:p + wd], dw, db


def _check_inputs(x: np.ndarray, config: NetworkConfig) -> None:
    r = config.input_resolution
    if x.ndim != 4 or x.shape[1:] != (config.in_channels, r, r):
        raise ShapeError(f"inputs of shape {x.shape} do not match ({config.in_channels}, {r}, {r})")
    if x.shape[0] == 0:
        raise ShapeError("empty batch")


def logits(w: np.ndarray, config: NetworkConfig, x: np.ndarray) -> np.ndarray:
    _check_inputs(x, config)
    params = _unpack(w, config)
    h = x
    identity = None
    for layer, weight, bias in params[:-1]:
        if layer.skip_in:
            identity = h
        h, _ = _conv_forward(h, weight, bias, layer.kernel, layer.stride)
        if layer.relu:
            np.maximum(h, 0.0, out=h)
        if layer.skip_out:
            h = h + identity
    _, weight, bias = params[-1]
    return h.mean(axis=(2, 3)) @ weight + bias


def predict(w: np.ndarray, config: NetworkConfig, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Argmax class per sample; ties resolve to the lowest index."""
    out = [np.argmax(logits(w, config, x[i:i + batch_size]), axis=1)
           for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(out)


def _cross_entropy(z: np.ndarray, y: np.ndarray):
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(z.shape[0]), y]))
    probs = np.exp(z - logsum[:, None])
    probs[np.arange(z.shape[0]), y] -= 1.0
    return loss, probs / z.shape[0]


def loss_and_grad(w: np.ndarray, config: NetworkConfig, x: np.ndarray, y: np.ndarray):
    """Mean softmax cross-entropy over the batch and its gradient w.r.t. ``w``."""
    _check_inputs(x, config)
    y = np.asarray(y)
    if y.shape != (x.shape[0],):
        raise ShapeError(f"labels of shape {y.shape} for {x.shape[0]} inputs")
    if y.min() < 0 or y.max() >= config.num_classes:
        raise ShapeError("label outside the head's class range")
    params = _unpack(w, config)

    cache = []
    h = x
    identity = None
    for layer, weight, bias in params[:-1]:
        if layer.skip_in:
            identity = h
        out, cols = _conv_forward(h, weight, bias, layer.kernel, layer.stride)
        if layer.relu:
            np.maximum(out, 0.0, out=out)
        cache.append((h, cols, out))
        h = out + identity if layer.skip_out else out
    _, head_w, head_b = params[-1]
    pooled = h.mean(axis=(2, 3))
    loss, dz = _cross_entropy(pooled @ head_w + head_b, y)

    grad = np.empty_like(w)
    layout = weight_layout(config)
    _, ws, bs = layout[-1]
    grad[ws] = (pooled.T @ dz).ravel()
    grad[bs] = dz.sum(axis=0)
    dh = dz @ head_w.T
    spatial = h.shape[2] * h.shape[3]
    dh = np.broadcast_to(dh[:, :, None, None] / spatial, h.shape)

    for depth, ((layer, weight, _), (inp, cols, out), (_, ws, bs)) in enumerate(zip(
            reversed(params[:-1]), reversed(cache), reversed(layout[:-1]))):
        if layer.skip_out:
            skip_grad = dh
        dout = dh * (out > 0) if layer.relu else dh
        dx, dw, db = _conv_backward(dout, inp, cols, weight, layer.kernel, layer.stride,
                                    need_dx=depth < len(cache) - 1)
        grad[ws] = dw.ravel()
        grad[bs] = db
        dh = dx + skip_grad if layer.skip_in else dx
    return loss, grad

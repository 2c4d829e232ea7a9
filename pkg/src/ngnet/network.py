"""Layer graphs, parameter initialization, and whole-network forward/backward.

A network is a flat sequence of layer specs (convs, dense, batch norm,
activations, pooling, residual-block markers, softmax head).  Parameters
live outside the spec in a per-layer-index dict, so a spec is reusable
across seeds and schemes.  ``forward`` caches everything ``backward``
needs; both are pure apart from batch-norm running statistics, which are
updated in train mode.

A plain (unwrapped) activation is represented internally as the shifted
wrapper with a fixed t = 0, which is exactly ``f(x)``; this keeps a single
code path for all activation gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .activations import (NgActivation, PReLU, make_base, ng_backward_input,
                          ng_forward, ng_grad_t, prelu_grad_a, shift_shape)
from .errors import ConfigError, ContractError, ShapeError
from .tensor import (as_f64, conv2d_backward, conv2d_forward,
                     global_avg_pool_backward, global_avg_pool_forward,
                     maxpool2_backward, maxpool2_forward)

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


# ---------------------------------------------------------------------------
# Layer specs
# ---------------------------------------------------------------------------

@dataclass
class ActivationSpec:
    """Declarative description of one activation layer."""
    base: str = "relu"
    base_kwargs: dict = field(default_factory=dict)
    ng: bool = False
    t_init: float = -1.0
    granularity: str = "channel"
    trainable: bool = True

    def make_base(self):
        return make_base(self.base, **self.base_kwargs)


@dataclass
class Conv:
    channels: int
    stride: int = 1
    bias: bool = True


@dataclass
class Dense:
    units: int


@dataclass
class BatchNorm:
    pass


@dataclass
class Activation:
    spec: ActivationSpec


@dataclass
class MaxPool:
    pass


@dataclass
class GlobalAvgPool:
    pass


@dataclass
class SoftmaxCrossEntropy:
    pass


@dataclass
class ResBlockStart:
    stride: int = 1


@dataclass
class ResBlockEnd:
    pass


@dataclass
class NetworkSpec:
    layers: list
    input_shape: tuple  # one sample, e.g. (C, H, W) or (D,)
    num_classes: int


# ---------------------------------------------------------------------------
# Shape inference
# ---------------------------------------------------------------------------

def infer_shapes(spec: NetworkSpec) -> list:
    """Per-layer input sample shapes (no batch axis)."""
    shapes = []
    shape = tuple(spec.input_shape)
    for layer in spec.layers:
        shapes.append(shape)
        if isinstance(layer, Conv):
            c, h, w = shape
            h = (h + 2 - 3) // layer.stride + 1
            w = (w + 2 - 3) // layer.stride + 1
            shape = (layer.channels, h, w)
        elif isinstance(layer, Dense):
            shape = (layer.units,)
        elif isinstance(layer, MaxPool):
            c, h, w = shape
            if h % 2 or w % 2:
                raise ConfigError(f"max pool on odd spatial dims {shape}")
            shape = (c, h // 2, w // 2)
        elif isinstance(layer, GlobalAvgPool):
            shape = (shape[0],)
        # BatchNorm, Activation, markers, softmax: shape-preserving
    return shapes


def conv_layer_count(spec: NetworkSpec) -> int:
    return sum(isinstance(l, Conv) for l in spec.layers)


def depth_of(spec: NetworkSpec) -> int:
    """Conv layers plus the dense classifier, the usual depth convention."""
    return conv_layer_count(spec) + sum(isinstance(l, Dense) for l in spec.layers)


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def build_plain_cnn(depth, base_width, num_classes, with_bn, activation,
                    input_hw=32, in_channels=3) -> NetworkSpec:
    """VGG-style stack: stem conv + three equal stages at widths w, 2w, 4w
    separated by 2x2 max pools, then global average pooling and a softmax
    classifier.  depth = 2 + 3k (stem + 3k convs + classifier)."""
    if depth < 5 or (depth - 2) % 3 != 0:
        raise ConfigError(f"plain-cnn depth must be 2 + 3k with k >= 1, got {depth}")
    k = (depth - 2) // 3
    if input_hw % 4:
        raise ConfigError("input side must be divisible by 4 (two max pools)")

    def conv_act(ch, layers):
        layers.append(Conv(ch, bias=not with_bn))
        if with_bn:
            layers.append(BatchNorm())
        layers.append(Activation(activation))

    layers: list = []
    conv_act(base_width, layers)          # stem
    for _ in range(k - 1):
        conv_act(base_width, layers)
    conv_act(base_width, layers)          # stage 1 has k convs after the stem
    layers.append(MaxPool())
    for _ in range(k):
        conv_act(2 * base_width, layers)
    layers.append(MaxPool())
    for _ in range(k):
        conv_act(4 * base_width, layers)
    layers.append(GlobalAvgPool())
    layers.append(Dense(num_classes))
    layers.append(SoftmaxCrossEntropy())
    return NetworkSpec(layers, (in_channels, input_hw, input_hw), num_classes)


def build_resnet(depth, base_width, num_classes, activation, with_bn=True,
                 input_hw=32, in_channels=3) -> NetworkSpec:
    """Three stages of two-conv identity blocks; downsampling blocks use
    stride 2 and a zero-padded strided identity shortcut.  depth = 6k + 2."""
    if depth < 8 or (depth - 2) % 6 != 0:
        raise ConfigError(f"resnet depth must be 6k + 2 with k >= 1, got {depth}")
    k = (depth - 2) // 6
    layers: list = [Conv(base_width, bias=not with_bn)]
    if with_bn:
        layers.append(BatchNorm())
    layers.append(Activation(activation))
    for stage in range(3):
        width = base_width * (2 ** stage)
        for block in range(k):
            stride = 2 if stage > 0 and block == 0 else 1
            layers.append(ResBlockStart(stride))
            layers.append(Conv(width, stride=stride, bias=not with_bn))
            if with_bn:
                layers.append(BatchNorm())
            layers.append(Activation(activation))
            layers.append(Conv(width, bias=not with_bn))
            if with_bn:
                layers.append(BatchNorm())
            layers.append(ResBlockEnd())
            layers.append(Activation(activation))
    layers.append(GlobalAvgPool())
    layers.append(Dense(num_classes))
    layers.append(SoftmaxCrossEntropy())
    return NetworkSpec(layers, (in_channels, input_hw, input_hw), num_classes)


def build_mlp(hidden, num_classes, activation, input_dim) -> NetworkSpec:
    layers: list = []
    for units in hidden:
        layers.append(Dense(units))
        layers.append(Activation(activation))
    layers.append(Dense(num_classes))
    layers.append(SoftmaxCrossEntropy())
    return NetworkSpec(layers, (input_dim,), num_classes)


def build_toy_cnn(num_classes, activation, input_hw=8, in_channels=3,
                  kernels=3) -> NetworkSpec:
    """Two conv layers of a few kernels, a dense layer, softmax; the small
    capacity-sweep model."""
    layers = [
        Conv(kernels), Activation(activation),
        Conv(kernels), Activation(activation),
        Dense(num_classes), SoftmaxCrossEntropy(),
    ]
    return NetworkSpec(layers, (in_channels, input_hw, input_hw), num_classes)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

@dataclass
class InitScheme:
    kind: str = "msra"  # xavier | msra | orthogonal
    seed: int = 0


def _fans(shape):
    if len(shape) == 4:  # (C_out, C_in, kh, kw)
        rf = shape[2] * shape[3]
        return shape[1] * rf, shape[0] * rf
    if len(shape) == 2:  # (out, in)
        return shape[1], shape[0]
    raise ShapeError(f"no fan convention for shape {shape}")


def draw_weight(kind, shape, rng) -> np.ndarray:
    """One weight tensor; (kind, rng state, shape) fully determine it."""
    fan_in, fan_out = _fans(shape)
    if kind == "xavier":
        return rng.standard_normal(shape) * math.sqrt(2.0 / (fan_in + fan_out))
    if kind == "msra":
        return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)
    if kind == "orthogonal":
        rows, cols = shape[0], int(np.prod(shape[1:]))
        flat = rng.standard_normal((rows, cols))
        if rows < cols:
            flat = flat.T
        q, r = np.linalg.qr(flat)
        q = q * np.sign(np.diag(r))
        if rows < cols:
            q = q.T
        return np.ascontiguousarray(q[:rows, :cols].reshape(shape))
    raise ConfigError(f"unknown init scheme {kind!r}")


def _slope_shape(sample_shape):
    if len(sample_shape) == 3:
        return (sample_shape[0], 1, 1)
    return tuple(sample_shape)


def init_params(spec: NetworkSpec, scheme: InitScheme) -> dict:
    """Per-layer parameter dict; bitwise-deterministic in (spec, scheme)."""
    shapes = infer_shapes(spec)
    params: dict = {}
    for i, layer in enumerate(spec.layers):
        rng = np.random.default_rng(np.random.SeedSequence(scheme.seed, spawn_key=(i,)))
        p: dict = {}
        if isinstance(layer, Conv):
            c_in = shapes[i][0]
            p["W"] = draw_weight(scheme.kind, (layer.channels, c_in, 3, 3), rng)
            if layer.bias:
                p["b"] = np.zeros(layer.channels)
        elif isinstance(layer, Dense):
            in_dim = int(np.prod(shapes[i]))
            p["W"] = draw_weight(scheme.kind, (layer.units, in_dim), rng)
            p["b"] = np.zeros(layer.units)
        elif isinstance(layer, BatchNorm):
            c = shapes[i][0]
            p["gamma"] = np.ones(c)
            p["beta"] = np.zeros(c)
            p["running_mean"] = np.zeros(c)
            p["running_var"] = np.ones(c)
        elif isinstance(layer, Activation):
            a_spec = layer.spec
            if a_spec.ng:
                t_shape = shift_shape(a_spec.granularity, shapes[i])
                p["t"] = np.full(t_shape, float(a_spec.t_init))
            else:
                p["t"] = np.zeros((1,))
            if a_spec.base == "prelu":
                p["a"] = np.full(_slope_shape(shapes[i]), PReLU.A_INIT)
        if p:
            params[i] = p
    return params


def bind_activation(layer: Activation, params_i: dict) -> NgActivation:
    """An NgActivation view over a layer's stored shift."""
    a_spec = layer.spec
    return NgActivation(
        base=a_spec.make_base(),
        t=params_i["t"],
        granularity=a_spec.granularity if a_spec.ng else "layer",
        trainable=a_spec.ng and a_spec.trainable,
    )


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _bn_reshape(p, ndim):
    return p.reshape((1, -1) + (1,) * (ndim - 2))


def forward(spec: NetworkSpec, params: dict, batch, labels=None, mode="train"):
    """Run the network; returns (logits, loss, cache).

    loss is None when labels are absent.  train mode uses batch statistics
    for batch norm and updates the running ones; eval mode reads the
    running statistics only.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be train or eval, got {mode!r}")
    x = as_f64(batch)
    skip_stack = []
    caches = []
    logits = loss = None
    for i, layer in enumerate(spec.layers):
        c = {"in_shape": x.shape}
        if isinstance(layer, Conv):
            c["x"] = x
            x = conv2d_forward(x, params[i]["W"], layer.stride)
            if layer.bias:
                x = x + params[i]["b"][None, :, None, None]
        elif isinstance(layer, Dense):
            flat = x.reshape(x.shape[0], -1)
            c["x"] = flat
            x = flat @ params[i]["W"].T + params[i]["b"]
        elif isinstance(layer, BatchNorm):
            x = _bn_forward(params[i], x, mode, c)
        elif isinstance(layer, Activation):
            ng = bind_activation(layer, params[i])
            a = params[i].get("a")
            c["x"] = x
            x = ng_forward(ng, x, a)
        elif isinstance(layer, MaxPool):
            x, idx = maxpool2_forward(x)
            c["idx"] = idx
        elif isinstance(layer, GlobalAvgPool):
            x = global_avg_pool_forward(x)
        elif isinstance(layer, ResBlockStart):
            skip_stack.append(x)
        elif isinstance(layer, ResBlockEnd):
            skip = skip_stack.pop()
            c["skip_shape"] = skip.shape
            x = x + _shortcut(skip, x.shape)
        elif isinstance(layer, SoftmaxCrossEntropy):
            logits = x
            probs = _softmax(x)
            c["probs"] = probs
            if labels is not None:
                labels = np.asarray(labels)
                n = x.shape[0]
                picked = probs[np.arange(n), labels]
                loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
                c["labels"] = labels
        else:
            raise ConfigError(f"unknown layer {layer!r}")
        caches.append(c)
    if logits is None:
        raise ConfigError("network has no softmax head")
    cache = {"layers": caches, "mode": mode, "batch": x.shape[0],
             "n_layers": len(spec.layers)}
    return logits, loss, cache


def _bn_forward(p, x, mode, c):
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    gamma, beta = p["gamma"], p["beta"]
    if mode == "train":
        if x.shape[0] < 2:
            raise ConfigError("batch norm needs batch size >= 2 in train mode")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        p["running_mean"] = BN_MOMENTUM * p["running_mean"] + (1 - BN_MOMENTUM) * mean
        p["running_var"] = BN_MOMENTUM * p["running_var"] + (1 - BN_MOMENTUM) * var
    else:
        mean, var = p["running_mean"], p["running_var"]
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - _bn_reshape(mean, x.ndim)) * _bn_reshape(inv_std, x.ndim)
    c["xhat"] = xhat
    c["inv_std"] = inv_std
    c["axes"] = axes
    c["train_stats"] = mode == "train"
    return xhat * _bn_reshape(gamma, x.ndim) + _bn_reshape(beta, x.ndim)


def _shortcut(skip, out_shape):
    """Identity shortcut; on downsampling, strided identity with zero-padded
    channels (parameter-free)."""
    if skip.shape == out_shape:
        return skip
    strided = skip[:, :, ::2, ::2]
    if strided.shape[2:] != out_shape[2:] or strided.shape[1] > out_shape[1]:
        raise ShapeError(f"cannot form shortcut {skip.shape} -> {out_shape}")
    padded = np.zeros(out_shape)
    padded[:, :strided.shape[1]] = strided
    return padded


def _shortcut_backward(grad_out, skip_shape):
    if grad_out.shape == skip_shape:
        return grad_out
    g = np.zeros(skip_shape)
    g[:, :, ::2, ::2] = grad_out[:, :skip_shape[1]]
    return g


def backward(spec: NetworkSpec, params: dict, cache, labels=None) -> dict:
    """Gradients of the batch-mean loss for every trainable tensor.

    Returns {layer_index: {name: grad}}; non-trainable shifts get exact
    zeros, batch-norm running stats are excluded.
    """
    caches = cache["layers"]
    if cache.get("n_layers") != len(spec.layers):
        raise ContractError("cache does not match this network spec")
    grads: dict = {}
    pending_skip: list = []
    grad = None
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        c = caches[i]
        if isinstance(layer, SoftmaxCrossEntropy):
            lab = c.get("labels") if labels is None else np.asarray(labels)
            if lab is None:
                raise ContractError("backward needs labels (none cached)")
            probs = c["probs"]
            n = probs.shape[0]
            grad = probs.copy()
            grad[np.arange(n), lab] -= 1.0
            grad /= n
        elif isinstance(layer, Conv):
            if layer.bias:
                gb = grad.sum(axis=(0, 2, 3))
            grad, gw = conv2d_backward(grad, c["x"], params[i]["W"], layer.stride)
            grads[i] = {"W": gw}
            if layer.bias:
                grads[i]["b"] = gb
        elif isinstance(layer, Dense):
            gw = grad.T @ c["x"]
            gb = grad.sum(axis=0)
            grad = (grad @ params[i]["W"]).reshape(c["in_shape"])
            grads[i] = {"W": gw, "b": gb}
        elif isinstance(layer, BatchNorm):
            grad, g = _bn_backward(params[i], grad, c)
            grads[i] = g
        elif isinstance(layer, Activation):
            ng = bind_activation(layer, params[i])
            a = params[i].get("a")
            g: dict = {"t": ng_grad_t(ng, c["x"], grad, a)}
            if a is not None:
                g["a"] = prelu_grad_a(ng, c["x"], grad, a)
            grad = ng_backward_input(ng, c["x"], grad, a)
            grads[i] = g
        elif isinstance(layer, MaxPool):
            grad = maxpool2_backward(grad, c["idx"], c["in_shape"])
        elif isinstance(layer, GlobalAvgPool):
            grad = global_avg_pool_backward(grad, c["in_shape"])
        elif isinstance(layer, ResBlockEnd):
            pending_skip.append((grad, c["skip_shape"]))
            # grad continues into the inner path unchanged
        elif isinstance(layer, ResBlockStart):
            g_out, skip_shape = pending_skip.pop()
            grad = grad + _shortcut_backward(g_out, skip_shape)
    return grads


def _bn_backward(p, grad, c):
    xhat, inv_std, axes = c["xhat"], c["inv_std"], c["axes"]
    ndim = grad.ndim
    dgamma = (grad * xhat).sum(axis=axes)
    dbeta = grad.sum(axis=axes)
    dxhat = grad * _bn_reshape(p["gamma"], ndim)
    if c["train_stats"]:
        mean_dxhat = dxhat.mean(axis=axes)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=axes)
        dx = (dxhat - _bn_reshape(mean_dxhat, ndim)
              - xhat * _bn_reshape(mean_dxhat_xhat, ndim)) * _bn_reshape(inv_std, ndim)
    else:
        dx = dxhat * _bn_reshape(inv_std, ndim)
    return dx, {"gamma": dgamma, "beta": dbeta}


def accuracy(logits, labels) -> float:
    return float((logits.argmax(axis=1) == np.asarray(labels)).mean())

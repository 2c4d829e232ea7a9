"""Measurements on training state: per-layer statistics, the analytic
bounds on the variance of a single-step weight update, t-evolution traces,
and a finite-difference gradient checker.

All statistics use the population convention (divide by the count), which
is what the bound derivation assumes.  The bound itself holds for the
rank-one update of a single sample on a dense layer:

    dW[i, j] = -lr * g[i] * z[j]

    lr^2 * mean(g)^2 * var(z)
        <= var(dW)
        <= 2 * lr^2 * (var(g) * mean(z)^2 + var(z) * var(g)
                       + var(z) * mean(g)^2)

so the sandwich probe runs on batch-size-1 updates only; averaged-batch
updates are outside the regime and are rejected.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, RegimeError
from .network import (Activation, Conv, Dense, NetworkSpec, backward,
                      bind_activation, forward)

KINK_WINDOW = 1e-3
FD_STEP = 1e-5


@dataclass
class LayerStats:
    layer_index: int
    step: int
    mean_z: float
    var_z: float
    mean_g: float
    var_g: float
    var_dw: float
    lower_bound: float
    upper_bound: float
    weight_var: float = float("nan")


@dataclass
class TTrace:
    layer_index: int
    epoch: int
    t_mean: float
    t_std: float
    t_min: float
    t_max: float


def _pop_var(x):
    x = np.asarray(x, dtype=np.float64)
    return float(x.var())  # numpy default ddof=0 is the population variance


def variance_bounds(z, g, lr):
    """Lower and upper bounds on var(dW) for the rank-one update above."""
    z = np.asarray(z, dtype=np.float64).ravel()
    g = np.asarray(g, dtype=np.float64).ravel()
    if z.size == 0 or g.size == 0:
        raise ContractError("variance bounds need non-empty vectors")
    mz, vz = float(z.mean()), _pop_var(z)
    mg, vg = float(g.mean()), _pop_var(g)
    lower = lr ** 2 * mg ** 2 * vz
    upper = 2.0 * lr ** 2 * (vg * mz ** 2 + vz * vg + vz * mg ** 2)
    return lower, upper


def sandwich_check(z, g, lr, layer_index=0, step=0, slack=1e-9) -> LayerStats:
    """Verify the bounds against the realized update of one sample.

    z is the dense layer's input vector (n,), g the loss gradient at its
    pre-activation (m,).  Raises RegimeError if either carries a batch axis
    of more than one sample.
    """
    z = np.asarray(z, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if z.ndim == 2:
        if z.shape[0] != 1:
            raise RegimeError("sandwich check requires a batch of one sample")
        z = z[0]
    if g.ndim == 2:
        if g.shape[0] != 1:
            raise RegimeError("sandwich check requires a batch of one sample")
        g = g[0]
    dw = -lr * np.outer(g, z)
    var_dw = _pop_var(dw)
    lower, upper = variance_bounds(z, g, lr)
    if not (lower <= var_dw * (1 + slack) and var_dw <= upper * (1 + slack) + 0.0):
        raise AssertionError(
            f"variance sandwich violated: {lower} <= {var_dw} <= {upper}")
    return LayerStats(layer_index, step, float(z.mean()), _pop_var(z),
                      float(g.mean()), _pop_var(g), var_dw, lower, upper)


def weight_variance_trace(spec: NetworkSpec, params: dict):
    """Per-layer population variance of the weight entries, conv and dense."""
    rows = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, (Conv, Dense)):
            rows.append((i, _pop_var(params[i]["W"])))
    return rows


def stability_score(weight_vars) -> float:
    """Spread of log weight variance across layers; 0 means perfectly even."""
    v = np.asarray([wv for _, wv in weight_vars], dtype=np.float64)
    v = np.maximum(v, 1e-300)
    return float(np.log(v).std())


def t_trace(spec: NetworkSpec, params: dict, epoch: int):
    rows = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Activation) and layer.spec.ng:
            t = params[i]["t"]
            rows.append(TTrace(i, epoch, float(t.mean()), float(t.std()),
                               float(t.min()), float(t.max())))
    return rows


def mean_shift_trace(spec: NetworkSpec, params: dict, batch, labels):
    """Per linear layer: mean of its input z and of the loss gradient at its
    pre-activation, the two quantities the bounds depend on."""
    logits, _, cache = forward(spec, params, batch, labels, mode="train")
    caches = cache["layers"]
    # reconstruct pre-activation gradients by re-running backward and
    # capturing the gradient entering each linear layer's output
    grads_at = _preactivation_grads(spec, params, cache)
    rows = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, (Conv, Dense)):
            z = caches[i]["x"]
            g = grads_at.get(i)
            rows.append((i, float(np.mean(z)),
                         float(np.mean(g)) if g is not None else float("nan")))
    return rows


def _preactivation_grads(spec, params, cache):
    """Gradient of the loss w.r.t. each conv/dense layer's output."""
    from . import network as net

    captured = {}
    caches = cache["layers"]
    grad = None
    pending = []
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        c = caches[i]
        if isinstance(layer, net.SoftmaxCrossEntropy):
            probs = c["probs"]
            lab = c["labels"]
            n = probs.shape[0]
            grad = probs.copy()
            grad[np.arange(n), lab] -= 1.0
            grad /= n
        elif isinstance(layer, (net.Conv, net.Dense)):
            captured[i] = grad
            if isinstance(layer, net.Conv):
                grad, _ = net.conv2d_backward(grad, c["x"], params[i]["W"],
                                              layer.stride)
            else:
                grad = (grad @ params[i]["W"]).reshape(c["in_shape"])
        elif isinstance(layer, net.BatchNorm):
            grad, _ = net._bn_backward(params[i], grad, c)
        elif isinstance(layer, net.Activation):
            ng = bind_activation(layer, params[i])
            grad = net.ng_backward_input(ng, c["x"], grad, params[i].get("a"))
        elif isinstance(layer, net.MaxPool):
            grad = net.maxpool2_backward(grad, c["idx"], c["in_shape"])
        elif isinstance(layer, net.GlobalAvgPool):
            grad = net.global_avg_pool_backward(grad, c["in_shape"])
        elif isinstance(layer, net.ResBlockEnd):
            pending.append((grad, c["skip_shape"]))
        elif isinstance(layer, net.ResBlockStart):
            g_out, skip_shape = pending.pop()
            grad = grad + net._shortcut_backward(g_out, skip_shape)
    return captured


def set_shifts_below_preactivations(spec: NetworkSpec, params: dict, batch,
                                    margin=1.0):
    """Lower every activation layer's shift below the minimum of its input
    on a probe batch, putting the whole network in its linear regime.

    Processed front to back because lowering an earlier shift changes the
    inputs of later layers.  Mutates params in place.
    """
    for i, layer in enumerate(spec.layers):
        if not isinstance(layer, Activation):
            continue
        _, _, cache = forward(spec, params, batch, mode="eval")
        x = cache["layers"][i]["x"]
        params[i]["t"].fill(float(x.min()) - margin)


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: dict          # parameter group -> worst relative error
    checked: int
    excluded_kink: int
    passed: bool
    tolerance: float


def _param_group(key):
    return {"W": "weights", "b": "biases", "gamma": "bn", "beta": "bn",
            "a": "prelu_a", "t": "ng_t"}[key]


def _loss_of(spec, params, batch, labels):
    _, loss, _ = forward(spec, params, batch, labels, mode="train")
    return loss


def _kink_mask_for_t(spec, params, batch, labels, i):
    """Which components of layer i's shift sit within the kink window of
    some input element in the probe batch."""
    from .activations import broadcast_param, reduce_to_param

    _, _, cache = forward(spec, params, batch, labels, mode="train")
    x = cache["layers"][i]["x"]
    t = params[i]["t"]
    near = (np.abs(x - broadcast_param(t, x.shape)) < KINK_WINDOW).astype(float)
    batched = x.ndim == t.ndim + 1
    return reduce_to_param(near, t.shape, batched) > 0


def grad_check(spec: NetworkSpec, params: dict, batch, labels,
               tolerance=1e-4, h=FD_STEP, max_params=2000) -> GradCheckReport:
    """Compare analytic gradients against central differences, parameter by
    parameter.  Shift components within the kink window of any probe input
    are excluded and counted rather than checked."""
    n_params = sum(v.size for p in params.values() for k, v in p.items()
                   if k not in ("running_mean", "running_var"))
    if n_params > max_params:
        raise ContractError(f"grad_check is for small nets ({n_params} params)")
    params = copy.deepcopy(params)  # BN running stats mutate; keep caller's intact
    _, _, cache = forward(spec, params, batch, labels, mode="train")
    analytic = backward(spec, params, cache, labels)

    worst: dict = {}
    checked = excluded = 0
    for i, p in params.items():
        for key, w in p.items():
            if key in ("running_mean", "running_var"):
                continue
            layer = spec.layers[i]
            if key == "t" and isinstance(layer, Activation) \
                    and not (layer.spec.ng and layer.spec.trainable):
                continue
            kink = None
            if key == "t":
                # moving t across an input's kink invalidates the central
                # difference; the slope parameter never moves the kink
                kink = _kink_mask_for_t(spec, params, batch, labels, i)
            g_an = analytic[i][key]
            flat = w.ravel()
            for j in range(flat.size):
                if kink is not None and kink.ravel()[j]:
                    excluded += 1
                    continue
                orig = flat[j]
                flat[j] = orig + h
                lp = _loss_of(spec, params, batch, labels)
                flat[j] = orig - h
                lm = _loss_of(spec, params, batch, labels)
                flat[j] = orig
                g_fd = (lp - lm) / (2 * h)
                denom = max(abs(g_fd), abs(g_an.ravel()[j]), 1e-8)
                rel = abs(g_fd - g_an.ravel()[j]) / denom
                group = _param_group(key)
                worst[group] = max(worst.get(group, 0.0), rel)
                checked += 1
    passed = all(e < tolerance for e in worst.values())
    return GradCheckReport(worst, checked, excluded, passed, tolerance)

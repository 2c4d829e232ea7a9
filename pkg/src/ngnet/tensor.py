"""Dense numerical kernels: matmul, 3x3 convolution, pooling.

All arrays are float64 and all kernels are pure functions.  Convolution is
restricted to 3x3 kernels with zero padding 1 and stride 1 or 2; pooling is
2x2 non-overlapping max or global average.  Inputs may be a single sample
``(C, H, W)`` or a batch ``(B, C, H, W)``; single samples are promoted
internally and the result is demoted back.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def as_f64(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


def matmul(a, b) -> np.ndarray:
    """Matrix product of a 2-D ``(m, k)`` by a 2-D ``(k, n)`` array."""
    a = as_f64(a)
    b = as_f64(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def _promote(x):
    x = as_f64(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected (C,H,W) or (B,C,H,W), got {x.shape}")


def _conv_geometry(h, w, stride):
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")
    return (h + 2 - 3) // stride + 1, (w + 2 - 3) // stride + 1


def _im2col(xp, stride, h_out, w_out):
    """Gather 3x3 patches from a padded batch into (B, C, 3, 3, H', W')."""
    b, c = xp.shape[:2]
    cols = np.empty((b, c, 3, 3, h_out, w_out))
    for i in range(3):
        for j in range(3):
            cols[:, :, i, j] = xp[:, :, i:i + stride * h_out:stride,
                                  j:j + stride * w_out:stride]
    return cols


def conv2d_forward(x, kernels, stride=1):
    """3x3 convolution with zero padding 1.

    x: (B, C_in, H, W) or (C_in, H, W); kernels: (C_out, C_in, 3, 3).
    """
    x, squeeze = _promote(x)
    kernels = as_f64(kernels)
    if kernels.ndim != 4 or kernels.shape[2:] != (3, 3):
        raise ShapeError(f"only 3x3 kernels are supported, got {kernels.shape}")
    if kernels.shape[1] != x.shape[1]:
        raise ShapeError(f"channel mismatch: input {x.shape} vs kernels {kernels.shape}")
    h_out, w_out = _conv_geometry(x.shape[2], x.shape[3], stride)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = _im2col(xp, stride, h_out, w_out)
    # (B,C,3,3,H',W') . (Co,C,3,3) -> (B,H',W',Co)
    out = np.tensordot(cols, kernels, axes=([1, 2, 3], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2)
    return out[0] if squeeze else out


def conv2d_backward(grad_out, x, kernels, stride=1):
    """Gradients of conv2d_forward w.r.t. its input and kernels."""
    x, squeeze = _promote(x)
    grad_out = as_f64(grad_out)
    if grad_out.ndim == 3:
        grad_out = grad_out[None]
    kernels = as_f64(kernels)
    h_out, w_out = _conv_geometry(x.shape[2], x.shape[3], stride)
    if grad_out.shape != (x.shape[0], kernels.shape[0], h_out, w_out):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} inconsistent with forward "
            f"output ({x.shape[0]}, {kernels.shape[0]}, {h_out}, {w_out})")
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = _im2col(xp, stride, h_out, w_out)
    # grad wrt kernels: contract over batch and spatial output positions
    grad_k = np.tensordot(grad_out, cols, axes=([0, 2, 3], [0, 4, 5]))
    # grad wrt input: scatter-add each tap back into the padded frame
    grad_cols = np.tensordot(grad_out, kernels, axes=([1], [0]))  # (B,H',W',C,3,3)
    grad_cols = grad_cols.transpose(0, 3, 4, 5, 1, 2)
    gxp = np.zeros_like(xp)
    for i in range(3):
        for j in range(3):
            gxp[:, :, i:i + stride * h_out:stride,
                j:j + stride * w_out:stride] += grad_cols[:, :, i, j]
    grad_x = gxp[:, :, 1:-1, 1:-1]
    return (grad_x[0] if squeeze else grad_x), grad_k


def maxpool2_forward(x):
    """2x2 non-overlapping max pool; ties go to the first element in
    row-major window order (numpy argmax convention)."""
    x, squeeze = _promote(x)
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    win = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(b, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    if squeeze:
        return out[0], idx[0]
    return out, idx


def maxpool2_backward(grad_out, idx, in_shape):
    """Route grad_out to the stored argmax positions."""
    grad_out = as_f64(grad_out)
    squeeze = grad_out.ndim == 3
    if squeeze:
        grad_out, idx = grad_out[None], idx[None]
    b, c, h2, w2 = grad_out.shape
    gwin = np.zeros((b, c, h2, w2, 4))
    np.put_along_axis(gwin, idx[..., None], grad_out[..., None], axis=-1)
    gx = gwin.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    gx = gx.reshape(b, c, h2 * 2, w2 * 2)
    if gx.shape[2:] != tuple(in_shape[-2:]):
        raise ShapeError(f"pool backward shape {gx.shape} vs input {in_shape}")
    return gx[0] if squeeze else gx


def global_avg_pool_forward(x):
    """Per-channel spatial mean: (B, C, H, W) -> (B, C)."""
    x, squeeze = _promote(x)
    out = x.mean(axis=(2, 3))
    return out[0] if squeeze else out


def global_avg_pool_backward(grad_out, in_shape):
    grad_out = as_f64(grad_out)
    squeeze = grad_out.ndim == 1
    if squeeze:
        grad_out = grad_out[None]
    h, w = in_shape[-2:]
    gx = np.broadcast_to(grad_out[:, :, None, None] / (h * w),
                         grad_out.shape + (h, w)).copy()
    return gx[0] if squeeze else gx

"""Neural-network layer primitives on top of the autodiff tensor.

All feature maps are laid out N x C x H x W.  Convolutions run through
im2col-style window views contracted with BLAS; the backward passes scatter
through the same geometry, so every op here is exactly differentiable and
checked against finite differences in the test suite.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError
from .tensor import Tensor, _node


@dataclass
class ConvParams:
    """Weights for a convolution / transposed convolution / linear layer."""

    weight: Tensor
    bias: Tensor


@dataclass
class BatchNormParams:
    """Per-channel scale/shift plus running statistics."""

    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    eps: float = 1e-5


# ----------------------------------------------------------------------
# initialisation
# ----------------------------------------------------------------------
def kaiming_normal(shape, fan_in, rng, dtype=np.float32):
    """Fan-in scaled normal init (std = sqrt(2 / fan_in))."""
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


def make_conv(in_ch, out_ch, kernel, rng):
    w = kaiming_normal((out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel, rng)
    b = np.zeros(out_ch, dtype=np.float32)
    return ConvParams(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))


def make_transposed_conv(in_ch, out_ch, kernel, rng):
    # weight layout (in, out, kh, kw): shares storage convention with the
    # adjoint of a conv whose weight is (out=in_ch, in=out_ch, kh, kw)
    w = kaiming_normal((in_ch, out_ch, kernel, kernel), in_ch * kernel * kernel, rng)
    b = np.zeros(out_ch, dtype=np.float32)
    return ConvParams(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))


def make_linear(in_dim, out_dim, rng):
    w = kaiming_normal((in_dim, out_dim), in_dim, rng)
    b = np.zeros(out_dim, dtype=np.float32)
    return ConvParams(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))


def make_batchnorm(channels, eps=1e-5):
    return BatchNormParams(
        gamma=Tensor(np.ones(channels, dtype=np.float32), requires_grad=True),
        beta=Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True),
        running_mean=Tensor(np.zeros(channels, dtype=np.float32)),
        running_var=Tensor(np.ones(channels, dtype=np.float32)),
        eps=eps,
    )


# ----------------------------------------------------------------------
# convolution
# ----------------------------------------------------------------------
def _check_4d(x, name):
    if x.ndim != 4:
        raise DimensionError(f"{name} expects an N x C x H x W tensor, got shape {tuple(x.shape)}")


def conv2d(x, params, stride=1, padding=0):
    """Cross-correlation with weight (OutC, InC, Kh, Kw).

    Output spatial size is floor((H + 2p - k) / s) + 1 per axis.
    """
    _check_4d(x, "conv2d")
    w, b = params.weight, params.bias
    n, c, h, wd = x.shape
    oc, ic, kh, kw = w.shape
    if c != ic:
        raise DimensionError(
            f"conv2d: input has {c} channels (axis 1) but weight expects {ic} (axis 1)"
        )
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise DimensionError(
            f"conv2d: kernel {kh}x{kw} stride {stride} pad {padding} yields "
            f"empty output for input {h}x{wd}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: (N, C, OH, OW, Kh, Kw); contract channels and kernel positions
    y = np.tensordot(win, w.data, axes=((1, 4, 5), (1, 2, 3)))  # (N, OH, OW, OC)
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2)) + b.data.reshape(1, oc, 1, 1)

    out = _node(y, (x, w, b), "conv2d")
    if out._op:
        s, p = stride, padding

        def bwd(g):
            gw = np.empty_like(w.data)
            gx_pad = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    rows = slice(i, i + s * (oh - 1) + 1, s)
                    cols = slice(j, j + s * (ow - 1) + 1, s)
                    patch = xp[:, :, rows, cols]
                    gw[:, :, i, j] = np.tensordot(g, patch, axes=((0, 2, 3), (0, 2, 3)))
                    gx_pad[:, :, rows, cols] += np.tensordot(
                        g, w.data[:, :, i, j], axes=(1, 0)
                    ).transpose(0, 3, 1, 2)
            gx = gx_pad[:, :, p : p + h, p : p + wd] if p else gx_pad
            return gx, gw, g.sum(axis=(0, 2, 3))

        out._backward = bwd
    return out


def transposed_conv2d(x, params, stride=1, padding=0, output_padding=0):
    """Adjoint of conv2d with shared weights.

    Weight layout is (InC, OutC, Kh, Kw); output spatial size is
    (H - 1) * s - 2p + k + output_padding, with 0 <= output_padding < s
    disambiguating which conv geometry this op inverts.
    """
    _check_4d(x, "transposed_conv2d")
    w, b = params.weight, params.bias
    n, c, h, wd = x.shape
    ic, oc, kh, kw = w.shape
    if c != ic:
        raise DimensionError(
            f"transposed_conv2d: input has {c} channels (axis 1) but weight expects {ic} (axis 0)"
        )
    if not 0 <= output_padding < max(stride, 1):
        raise DimensionError(
            f"transposed_conv2d: output_padding {output_padding} must be in [0, stride)"
        )
    oh = (h - 1) * stride - 2 * padding + kh + output_padding
    ow = (wd - 1) * stride - 2 * padding + kw + output_padding
    if oh < 1 or ow < 1:
        raise DimensionError(
            f"transposed_conv2d: geometry yields non-positive output {oh}x{ow}"
        )
    s, p = stride, padding
    # one GEMM then nine strided scatter-adds
    y_full = np.tensordot(x.data, w.data, axes=(1, 0))  # (N, H, W, OC, Kh, Kw)
    buf = np.zeros((n, oc, oh + 2 * p, ow + 2 * p), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            rows = slice(i, i + s * (h - 1) + 1, s)
            cols = slice(j, j + s * (wd - 1) + 1, s)
            buf[:, :, rows, cols] += y_full[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    y = buf[:, :, p : p + oh, p : p + ow] if p else buf
    y = y + b.data.reshape(1, oc, 1, 1)

    out = _node(y, (x, w, b), "transposed_conv2d")
    if out._op:

        def bwd(g):
            g_pad = np.pad(g, ((0, 0), (0, 0), (p, p), (p, p)))
            win = sliding_window_view(g_pad, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
            # win: (N, OC, H, W, Kh, Kw)
            gx = np.tensordot(win, w.data, axes=((1, 4, 5), (1, 2, 3)))
            gw = np.tensordot(x.data, win, axes=((0, 2, 3), (0, 2, 3)))
            return (
                np.ascontiguousarray(gx.transpose(0, 3, 1, 2)),
                gw,
                g.sum(axis=(0, 2, 3)),
            )

        out._backward = bwd
    return out


def maxpool2d(x, kernel=2, stride=2):
    """2x2 stride-2 max pooling; gradient goes to the first max per window."""
    _check_4d(x, "maxpool2d")
    if kernel != 2 or stride != 2:
        raise DimensionError("maxpool2d supports kernel=2, stride=2 only")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(
            f"maxpool2d needs even spatial dims, got {h}x{w} (axes 2, 3)"
        )
    oh, ow = h // 2, w // 2
    # windows flattened in row-major scan order so argmax picks the first max
    win = (
        x.data.reshape(n, c, oh, 2, ow, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, oh, ow, 4)
    )
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    out = _node(y, (x,), "maxpool2d")
    if out._op:

        def bwd(g):
            hot = np.zeros_like(win)
            np.put_along_axis(hot, idx[..., None], g[..., None], axis=-1)
            gx = (
                hot.reshape(n, c, oh, ow, 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h, w)
            )
            return (gx,)

        out._backward = bwd
    return out


def batchnorm(x, params, mode="train", momentum=0.1):
    """Per-channel normalisation over (N, H, W) with learned scale/shift.

    Train mode normalises by batch statistics and folds them into the running
    estimates (running <- (1 - momentum) * running + momentum * batch); eval
    mode normalises by the running estimates only.
    """
    _check_4d(x, "batchnorm")
    n, c, h, w = x.shape
    if params.gamma.shape != (c,):
        raise DimensionError(
            f"batchnorm: input has {c} channels (axis 1) but gamma has shape "
            f"{tuple(params.gamma.shape)}"
        )
    gamma, beta = params.gamma, params.beta
    eps = params.eps
    gview = gamma.data.reshape(1, c, 1, 1)
    bview = beta.data.reshape(1, c, 1, 1)

    if mode == "train":
        m = n * h * w
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        istd = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean.reshape(1, c, 1, 1)) * istd.reshape(1, c, 1, 1)
        y = gview * xhat + bview
        unbiased = var * (m / max(m - 1, 1))
        params.running_mean.data = (
            (1.0 - momentum) * params.running_mean.data + momentum * mean
        ).astype(params.running_mean.dtype)
        params.running_var.data = (
            (1.0 - momentum) * params.running_var.data + momentum * unbiased
        ).astype(params.running_var.dtype)

        out = _node(y, (x, gamma, beta), "batchnorm")
        if out._op:

            def bwd(g):
                gg = (g * xhat).sum(axis=(0, 2, 3))
                gb = g.sum(axis=(0, 2, 3))
                dxhat = g * gview
                gx = (
                    dxhat
                    - dxhat.mean(axis=(0, 2, 3), keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                ) * istd.reshape(1, c, 1, 1)
                return gx, gg, gb

            out._backward = bwd
        return out

    if mode != "eval":
        raise ValueError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")

    istd = 1.0 / np.sqrt(params.running_var.data + eps)
    xhat = (x.data - params.running_mean.data.reshape(1, c, 1, 1)) * istd.reshape(1, c, 1, 1)
    y = gview * xhat + bview
    out = _node(y, (x, gamma, beta), "batchnorm_eval")
    if out._op:

        def bwd(g):
            return (
                g * gview * istd.reshape(1, c, 1, 1),
                (g * xhat).sum(axis=(0, 2, 3)),
                g.sum(axis=(0, 2, 3)),
            )

        out._backward = bwd
    return out


def fully_connected(x, params):
    """Flatten trailing dims and apply weight (InDim, OutDim) plus bias."""
    w, b = params.weight, params.bias
    n = x.shape[0]
    flat = x.reshape(n, -1)
    if flat.shape[1] != w.shape[0]:
        raise DimensionError(
            f"fully_connected: flattened input dim {flat.shape[1]} != weight rows {w.shape[0]}"
        )
    return flat @ w + b


def add(a, b):
    """Elementwise residual add; shapes must match exactly."""
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes differ {tuple(a.shape)} vs {tuple(b.shape)}")
    return a + b


# ----------------------------------------------------------------------
# optimiser
# ----------------------------------------------------------------------
def sgd_step(params, grads, velocities, lr, momentum=0.0):
    """In-place SGD update: v <- momentum * v + g, p <- p - lr * v.

    ``params`` are Tensors, ``grads``/``velocities`` plain arrays aligned with
    them.  Returns the updated velocity list.
    """
    if not lr > 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    for p, g, v in zip(params, grads, velocities):
        if p.data.shape != g.shape:
            raise DimensionError(
                f"sgd_step: param shape {p.data.shape} != grad shape {g.shape}"
            )
        v *= momentum
        v += g
        p.data -= (lr * v).astype(p.dtype, copy=False)
    return velocities


class SgdOptimizer:
    """Plain SGD with momentum over a fixed parameter list."""

    def __init__(self, params, lr, momentum=0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        grads = [
            p.grad if p.grad is not None else np.zeros_like(p.data)
            for p in self.params
        ]
        sgd_step(self.params, grads, self.velocities, self.lr, self.momentum)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

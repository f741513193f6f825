"""3D spatiotemporal kernels: valid cross-correlation and max-pooling.

All arrays are float64, C-order. Convolution uses the cross-correlation
convention (no kernel flip) with valid padding only; output extents follow
floor((in - kernel) / stride) + 1.

The optimized paths lower onto im2col + BLAS matmul. `naive_conv3d` and
`naive_maxpool3d` are deliberately dumb loop references kept in-tree as the
oracle the fast kernels are tested against.

Single-volume functions take (C, D, H, W); the *_batch variants take
(N, C, D, H, W) and are what the network layers call.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

__all__ = [
    "conv3d",
    "conv3d_batch",
    "conv3d_grad",
    "conv3d_grad_batch",
    "conv_output_shape",
    "maxpool3d",
    "maxpool3d_batch",
    "maxpool3d_grad",
    "maxpool3d_grad_batch",
    "naive_conv3d",
    "naive_maxpool3d",
]


def conv_output_shape(in_dims, kernel_dims, stride):
    """Valid-padding output extents: floor((in - k) / s) + 1 per axis."""
    out = []
    for n, k, s in zip(in_dims, kernel_dims, stride):
        if k > n:
            raise ShapeError(f"kernel extent {k} exceeds input extent {n}")
        if s < 1:
            raise ShapeError(f"stride must be >= 1, got {s}")
        out.append((n - k) // s + 1)
    return tuple(out)


def _strided_windows(x, window, stride):
    """View of x (N,C,D,H,W) as (N,C,D',H',W',wD,wH,wW) patches."""
    views = sliding_window_view(x, window, axis=(2, 3, 4))
    sd, sh, sw = stride
    return views[:, :, ::sd, ::sh, ::sw]


def conv3d_batch(x, kernels, bias, stride=(1, 1, 1)):
    """Cross-correlate a batch (N,C,D,H,W) with kernels (Co,Ci,kD,kH,kW)."""
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.ndim != 5:
        raise ShapeError(f"expected batch of rank 5, got shape {x.shape}")
    if kernels.ndim != 5:
        raise ShapeError(f"expected kernels of rank 5, got shape {kernels.shape}")
    c_out, c_in = kernels.shape[:2]
    if x.shape[1] != c_in:
        raise ShapeError(
            f"input has {x.shape[1]} channels but kernels expect {c_in}"
        )
    if bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} != ({c_out},)")
    out_dims = conv_output_shape(x.shape[2:], kernels.shape[2:], stride)

    cols = _im2col(x, kernels.shape[2:], stride, out_dims)
    w_mat = kernels.reshape(c_out, -1)
    out = cols @ w_mat.T + bias
    n = x.shape[0]
    out = out.reshape(n, *out_dims, c_out)
    return np.ascontiguousarray(np.moveaxis(out, -1, 1))


def _im2col(x, kernel_dims, stride, out_dims):
    """Patch matrix of shape (N * D' * H' * W', C * kD * kH * kW)."""
    windows = _strided_windows(x, kernel_dims, stride)
    # (N, C, D', H', W', kD,kH,kW) -> (N, D', H', W', C, kD,kH,kW)
    windows = np.moveaxis(windows, 1, 4)
    n = x.shape[0]
    patch = x.shape[1] * int(np.prod(kernel_dims))
    return windows.reshape(n * int(np.prod(out_dims)), patch)


def conv3d(x, kernels, bias, stride=(1, 1, 1)):
    """Single-volume convolution: (C,D,H,W) -> (Co,D',H',W')."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f"expected input of rank 4, got shape {x.shape}")
    return conv3d_batch(x[np.newaxis], kernels, bias, stride)[0]


def conv3d_grad_batch(upstream, x, kernels, stride=(1, 1, 1), cols=None):
    """Gradients of sum(upstream * conv3d_batch(x, kernels, bias)).

    Returns (grad_x, grad_kernels, grad_bias). `cols` may pass the im2col
    matrix cached from the forward pass to avoid rebuilding it.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    c_out, c_in = kernels.shape[:2]
    out_dims = conv_output_shape(x.shape[2:], kernels.shape[2:], stride)
    n = x.shape[0]
    expected = (n, c_out, *out_dims)
    if upstream.shape != expected:
        raise ShapeError(f"upstream shape {upstream.shape} != {expected}")

    grad_bias = upstream.sum(axis=(0, 2, 3, 4))

    # (N, Co, D',H',W') -> (N*D'*H'*W', Co)
    up_mat = np.moveaxis(upstream, 1, -1).reshape(-1, c_out)
    if cols is None:
        cols = _im2col(x, kernels.shape[2:], stride, out_dims)
    grad_kernels = (up_mat.T @ cols).reshape(kernels.shape)

    grad_x = np.zeros_like(x)
    kd, kh, kw = kernels.shape[2:]
    sd, sh, sw = stride
    od, oh, ow = out_dims
    for a in range(kd):
        for b in range(kh):
            for c in range(kw):
                # contribution of kernel tap (a,b,c) to every input cell it touched
                contrib = np.tensordot(upstream, kernels[:, :, a, b, c], axes=([1], [0]))
                contrib = np.moveaxis(contrib, -1, 1)
                grad_x[:, :, a : a + sd * od : sd, b : b + sh * oh : sh, c : c + sw * ow : sw] += contrib
    return grad_x, grad_kernels, grad_bias


def conv3d_grad(upstream, x, kernels, stride=(1, 1, 1)):
    """Single-volume gradients; see conv3d_grad_batch."""
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.ndim != 4 or upstream.ndim != 4:
        raise ShapeError("conv3d_grad expects rank-4 input and upstream")
    gx, gk, gb = conv3d_grad_batch(upstream[np.newaxis], x[np.newaxis], kernels, stride)
    return gx[0], gk, gb


def maxpool3d_batch(x, window, stride):
    """Max-pool a batch (N,C,D,H,W).

    Returns (out, argmax) where argmax holds, per output cell, the flat
    row-major index of its maximum within that sample's (C,D,H,W) volume
    (first occurrence on ties).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 5:
        raise ShapeError(f"expected batch of rank 5, got shape {x.shape}")
    out_dims = conv_output_shape(x.shape[2:], window, stride)
    windows = _strided_windows(x, window, stride)
    n, c = x.shape[:2]
    flat = windows.reshape(*windows.shape[:5], -1)
    local = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, local[..., np.newaxis], axis=-1)[..., 0]

    wd, wh, ww = window
    sd, sh, sw = stride
    ld = local // (wh * ww)
    lh = (local // ww) % wh
    lw = local % ww
    _, d_in, h_in, w_in = x.shape[1:]
    od = np.arange(out_dims[0]).reshape(1, 1, -1, 1, 1)
    oh = np.arange(out_dims[1]).reshape(1, 1, 1, -1, 1)
    ow = np.arange(out_dims[2]).reshape(1, 1, 1, 1, -1)
    gd = od * sd + ld
    gh = oh * sh + lh
    gw = ow * sw + lw
    ch = np.arange(c).reshape(1, -1, 1, 1, 1)
    argmax = ((ch * d_in + gd) * h_in + gh) * w_in + gw
    return np.ascontiguousarray(out), np.ascontiguousarray(argmax)


def maxpool3d(x, window, stride):
    """Single-volume max-pool: (C,D,H,W) -> ((C,D',H',W'), argmax)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f"expected input of rank 4, got shape {x.shape}")
    out, argmax = maxpool3d_batch(x[np.newaxis], window, stride)
    return out[0], argmax[0]


def maxpool3d_grad_batch(upstream, argmax, input_shape):
    """Route upstream values back to their argmax positions (adds on overlap)."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != argmax.shape:
        raise ShapeError(f"upstream shape {upstream.shape} != argmax shape {argmax.shape}")
    size = int(np.prod(input_shape))
    if argmax.size and (argmax.min() < 0 or argmax.max() >= size):
        raise RuntimeError("argmax indices fall outside the input volume")
    n = upstream.shape[0]
    grad = np.zeros((n, size), dtype=np.float64)
    rows = np.repeat(np.arange(n), argmax[0].size)
    np.add.at(grad, (rows, argmax.reshape(n, -1).ravel()), upstream.ravel())
    return grad.reshape(n, *input_shape)


def maxpool3d_grad(upstream, argmax, input_shape):
    """Single-volume pooling gradient; see maxpool3d_grad_batch."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.ndim != 4:
        raise ShapeError("maxpool3d_grad expects rank-4 upstream")
    return maxpool3d_grad_batch(upstream[np.newaxis], argmax[np.newaxis], input_shape)[0]


def naive_conv3d(x, kernels, bias, stride=(1, 1, 1)):
    """Loop-nest reference convolution. Slow on purpose; used as an oracle."""
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    c_out, c_in, kd, kh, kw = kernels.shape
    if x.shape[0] != c_in:
        raise ShapeError(f"input has {x.shape[0]} channels but kernels expect {c_in}")
    od, oh, ow = conv_output_shape(x.shape[1:], (kd, kh, kw), stride)
    sd, sh, sw = stride
    out = np.zeros((c_out, od, oh, ow))
    for co in range(c_out):
        for d in range(od):
            for h in range(oh):
                for w in range(ow):
                    acc = 0.0
                    for ci in range(c_in):
                        for a in range(kd):
                            for b in range(kh):
                                for c in range(kw):
                                    acc += (
                                        kernels[co, ci, a, b, c]
                                        * x[ci, d * sd + a, h * sh + b, w * sw + c]
                                    )
                    out[co, d, h, w] = acc + bias[co]
    return out


def naive_maxpool3d(x, window, stride):
    """Loop-nest reference max-pool with first-occurrence argmax."""
    x = np.asarray(x, dtype=np.float64)
    c_in, d_in, h_in, w_in = x.shape
    wd, wh, ww = window
    sd, sh, sw = stride
    od, oh, ow = conv_output_shape(x.shape[1:], window, stride)
    out = np.zeros((c_in, od, oh, ow))
    argmax = np.zeros((c_in, od, oh, ow), dtype=np.int64)
    for ci in range(c_in):
        for d in range(od):
            for h in range(oh):
                for w in range(ow):
                    best = -np.inf
                    best_idx = -1
                    for a in range(wd):
                        for b in range(wh):
                            for c in range(ww):
                                gd, gh, gw = d * sd + a, h * sh + b, w * sw + c
                                v = x[ci, gd, gh, gw]
                                if v > best:
                                    best = v
                                    best_idx = ((ci * d_in + gd) * h_in + gh) * w_in + gw
                    out[ci, d, h, w] = best
                    argmax[ci, d, h, w] = best_idx
    return out, argmax

"""Differentiable neural-network operators built on :mod:`trustgan.tensor`."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError
from .tensor import Tensor, as_tensor, make, mean


def _check_finite(x, what):
    if not np.all(np.isfinite(x.data)):
        raise InvalidInputError(f"{what} received non-finite values")


def softmax(logits, axis=-1):
    """Row-wise softmax, shifted by the row maximum for stability."""
    logits = as_tensor(logits)
    _check_finite(logits, "softmax")
    z = logits.data - logits.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make(out, (logits,), backward)


def logsumexp(logits, axis=-1):
    """``log(sum(exp(x)))`` along ``axis`` via the max-shift trick."""
    logits = as_tensor(logits)
    _check_finite(logits, "logsumexp")
    m = logits.data.max(axis=axis, keepdims=True)
    e = np.exp(logits.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)

    def backward(g):
        return (np.expand_dims(g, axis) * (e / s),)

    return make(out, (logits,), backward)


def log_softmax(logits, axis=-1):
    logits = as_tensor(logits)
    _check_finite(logits, "log_softmax")
    m = logits.data.max(axis=axis, keepdims=True)
    z = logits.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return make(out, (logits,), backward)


def linear(x, weight, bias=None):
    out = x @ weight
    return out + bias if bias is not None else out


def _windows(padded, kernel, nd):
    return sliding_window_view(padded, (kernel,) * nd, axis=tuple(range(2, 2 + nd)))


def _same_conv(x, w, nd):
    """Raw stride-1 'same' correlation; x [B,C,*S], w [O,C,*k] -> [B,O,*S]."""
    k = w.shape[-1]
    p = k // 2
    padded = np.pad(x, [(0, 0), (0, 0)] + [(p, p)] * nd)
    win = _windows(padded, k, nd)
    out = np.tensordot(win, w, axes=([1] + list(range(2 + nd, 2 + 2 * nd)),
                                     [1] + list(range(2, 2 + nd))))
    return np.moveaxis(out, -1, 1), win


def conv(x, weight, bias=None):
    """1D or 2D convolution, stride 1, zero padding that keeps the spatial size.

    The number of spatial dimensions is taken from ``weight`` whose layout is
    ``[out_channels, in_channels, *kernel]``.  Kernels must be odd-sized and
    square.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    nd = weight.ndim - 2
    if nd not in (1, 2):
        raise InvalidInputError(f"conv supports 1D and 2D kernels, got {weight.shape}")
    k = weight.shape[-1]
    if k % 2 == 0 or any(s != k for s in weight.shape[2:]):
        raise InvalidInputError(f"kernel must be square and odd-sized, got {weight.shape[2:]}")
    if x.ndim != nd + 2 or x.shape[1] != weight.shape[1]:
        raise InvalidInputError(
            f"conv input {x.shape} incompatible with weight {weight.shape}")

    out, win = _same_conv(x.data, weight.data, nd)
    spatial = tuple(range(2, 2 + nd))
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data.reshape((1, -1) + (1,) * nd)
        parents = parents + (bias,)

    def backward(g):
        gw = np.tensordot(g, win, axes=([0] + list(spatial), [0] + list(spatial)))
        flipped = np.flip(weight.data, axis=spatial).swapaxes(0, 1)
        gx, _ = _same_conv(g, np.ascontiguousarray(flipped), nd)
        grads = (gx, gw)
        if bias is not None:
            grads = grads + (g.sum(axis=(0,) + spatial),)
        return grads

    return make(out, parents, backward)


def dropout(x, rate, rng):
    """Inverted dropout; ``rate == 0`` returns ``x`` and draws nothing."""
    if not 0.0 <= rate < 1.0:
        raise InvalidInputError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep)


def global_avg_pool(x):
    """Average over every spatial axis: [B, C, *S] -> [B, C]."""
    return mean(x, axis=tuple(range(2, x.ndim)))


def batch_norm(x, gamma, beta, eps=1e-5, stats=None):
    """Normalise ``x`` over the batch and spatial axes.

    When ``stats`` is ``None`` the batch statistics are used and returned
    alongside the output as plain arrays; otherwise ``stats = (mean, var)``
    are treated as constants (eval mode).
    """
    axes = (0,) + tuple(range(2, x.ndim))
    shape = (1, -1) + (1,) * (x.ndim - 2)
    if stats is None:
        mu = mean(x, axis=axes, keepdims=True)
        centred = x - mu
        var = mean(centred * centred, axis=axes, keepdims=True)
        xhat = centred / (var + eps) ** 0.5
        batch_stats = (mu.data.reshape(-1), var.data.reshape(-1))
    else:
        mu, var = stats
        xhat = (x - Tensor(mu.reshape(shape))) / Tensor(np.sqrt(var.reshape(shape) + eps))
        batch_stats = None
    out = xhat * gamma.reshape(shape) + beta.reshape(shape)
    return out, batch_stats

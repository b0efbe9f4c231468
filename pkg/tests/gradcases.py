"""Random small instances for finite-difference gradient checks.

Each case builder takes an rng and returns ``(fn, inputs)`` where ``fn``
maps the input tensors to a scalar.  Operators are contracted against a
fixed random weight so every output element contributes to the gradient.
Inputs to non-smooth operators are kept away from their kinks.
"""

import numpy as np

from trustgan import objectives as obj
from trustgan import ops
from trustgan.tensor import (Tensor, clamp_min, leaky_relu, mean, power, relu, tabs, take,
                             tanh, tmax, transpose, tsum)

INSTANCES = 20


def _t(a):
    return Tensor(np.asarray(a, dtype=np.float64).copy())


def _away_from_zero(rng, shape, gap=0.1):
    x = rng.standard_normal(shape)
    return np.where(x >= 0, x + gap, x - gap)


def _contract(out, w):
    return tsum(out * Tensor(w))


def _shape(rng, max_dims=3):
    return tuple(int(s) for s in rng.integers(1, 5, size=rng.integers(1, max_dims + 1)))


def _elementwise(fn, sampler=None):
    def build(rng):
        shape = _shape(rng)
        x = sampler(rng, shape) if sampler else rng.standard_normal(shape)
        w = rng.standard_normal(shape)
        return (lambda a: _contract(fn(a), w)), [_t(x)]
    return build


def _binary(fn, positive_b=False):
    def build(rng):
        shape = _shape(rng)
        b_shape = shape[-1:] if rng.random() < 0.5 else shape  # exercise broadcasting
        a = rng.standard_normal(shape)
        b = rng.standard_normal(b_shape)
        if positive_b:
            b = np.abs(b) + 0.5
        w = rng.standard_normal(shape)
        return (lambda x, y: _contract(fn(x, y), w)), [_t(a), _t(b)]
    return build


def _reduce(fn):
    def build(rng):
        shape = _shape(rng)
        axis = int(rng.integers(len(shape)))
        x = rng.standard_normal(shape)
        out_shape = np.asarray(fn(Tensor(x), axis).data).shape
        w = rng.standard_normal(out_shape)
        return (lambda a: _contract(fn(a, axis), w)), [_t(x)]
    return build


def _max_case(rng):
    shape = _shape(rng)
    # distinct entries so the argmax is unique and stable under +-h
    x = rng.permutation(np.prod(shape)).reshape(shape) * 0.5 + rng.random(shape) * 0.1
    axis = int(rng.integers(len(shape)))
    w = rng.standard_normal(np.max(x, axis=axis).shape)
    return (lambda a: _contract(tmax(a, axis), w)), [_t(x)]


def _reshape_case(rng):
    x = rng.standard_normal((2, 3, 4))
    w = rng.standard_normal((4, 6))
    return (lambda a: _contract(a.reshape(4, 6), w)), [_t(x)]


def _transpose_case(rng):
    x = rng.standard_normal((2, 3, 4))
    axes = tuple(int(i) for i in rng.permutation(3))
    w = rng.standard_normal(np.transpose(x, axes).shape)
    return (lambda a: _contract(transpose(a, axes), w)), [_t(x)]


def _take_case(rng):
    x = rng.standard_normal((5, 3))
    idx = rng.integers(0, 5, size=7)  # repeats exercise gradient accumulation
    w = rng.standard_normal((7, 3))
    return (lambda a: _contract(take(a, idx), w)), [_t(x)]


def _matmul_case(rng):
    m, k, n = (int(v) for v in rng.integers(1, 5, size=3))
    a, b = rng.standard_normal((m, k)), rng.standard_normal((k, n))
    w = rng.standard_normal((m, n))
    return (lambda x, y: _contract(x @ y, w)), [_t(a), _t(b)]


def _linear_case(rng):
    a, wt, bias = rng.standard_normal((3, 4)), rng.standard_normal((4, 2)), rng.standard_normal(2)
    w = rng.standard_normal((3, 2))
    return (lambda x, y, z: _contract(ops.linear(x, y, z), w)), [_t(a), _t(wt), _t(bias)]


def _softmax_like(fn):
    def build(rng):
        x = 3.0 * rng.standard_normal((int(rng.integers(1, 4)), int(rng.integers(2, 6))))
        w = rng.standard_normal(np.asarray(fn(Tensor(x)).data).shape)
        return (lambda a: _contract(fn(a), w)), [_t(x)]
    return build


def _conv_case(nd):
    def build(rng):
        k = int(rng.choice([1, 3]))
        c_in, c_out = (int(v) for v in rng.integers(1, 3, size=2))
        spatial = (int(rng.integers(3, 5)),) * nd
        x = rng.standard_normal((2, c_in) + spatial)
        wt = rng.standard_normal((c_out, c_in) + (k,) * nd)
        bias = rng.standard_normal(c_out)
        w = rng.standard_normal((2, c_out) + spatial)
        return (lambda a, b, c: _contract(ops.conv(a, b, c), w)), [_t(x), _t(wt), _t(bias)]
    return build


def _batch_norm_case(train):
    def build(rng):
        x = rng.standard_normal((4, 3, 2)) * 2.0 + 1.0
        gamma, beta = rng.standard_normal(3), rng.standard_normal(3)
        stats = None if train else (rng.standard_normal(3), rng.random(3) + 0.5)
        w = rng.standard_normal(x.shape)
        return (lambda a, g, b: _contract(ops.batch_norm(a, g, b, stats=stats)[0], w)), \
            [_t(x), _t(gamma), _t(beta)]
    return build


def _dropout_case(rng):
    x = rng.standard_normal((3, 5))
    seed = int(rng.integers(1 << 30))
    w = rng.standard_normal(x.shape)
    # a fresh rng with the same seed per call gives the same mask at every probe
    return (lambda a: _contract(ops.dropout(a, 0.3, np.random.default_rng(seed)), w)), [_t(x)]


def _gap_case(rng):
    x = rng.standard_normal((2, 2, 3, 4))
    w = rng.standard_normal((2, 2))
    return (lambda a: _contract(ops.global_avg_pool(a), w)), [_t(x)]


OPERATOR_CASES = {
    "add": _binary(lambda a, b: a + b),
    "sub": _binary(lambda a, b: a - b),
    "mul": _binary(lambda a, b: a * b),
    "div": _binary(lambda a, b: a / b, positive_b=True),
    "neg": _elementwise(lambda a: -a),
    "power": _elementwise(lambda a: power(a, 3)),
    "power_sqrt": _elementwise(lambda a: power(a, 0.5),
                               lambda rng, s: rng.random(s) + 0.5),
    "exp": _elementwise(lambda a: a.exp()),
    "log": _elementwise(lambda a: a.log(), lambda rng, s: rng.random(s) + 0.2),
    "abs": _elementwise(tabs, _away_from_zero),
    "tanh": _elementwise(tanh),
    "relu": _elementwise(relu, _away_from_zero),
    "leaky_relu": _elementwise(lambda a: leaky_relu(a, 0.2), _away_from_zero),
    "clamp_min": _elementwise(lambda a: clamp_min(a, 0.0), _away_from_zero),
    "sum": _reduce(lambda a, axis: tsum(a, axis)),
    "mean": _reduce(lambda a, axis: mean(a, axis)),
    "max": _max_case,
    "reshape": _reshape_case,
    "transpose": _transpose_case,
    "take": _take_case,
    "matmul": _matmul_case,
    "linear": _linear_case,
    "softmax": _softmax_like(ops.softmax),
    "logsumexp": _softmax_like(ops.logsumexp),
    "log_softmax": _softmax_like(ops.log_softmax),
    "conv1d": _conv_case(1),
    "conv2d": _conv_case(2),
    "batch_norm_train": _batch_norm_case(True),
    "batch_norm_eval": _batch_norm_case(False),
    "dropout": _dropout_case,
    "global_avg_pool": _gap_case,
}


def _logits(rng):
    return rng.standard_normal((int(rng.integers(2, 5)), int(rng.integers(2, 6)))) * 2.0


def _l00(rng):
    x = _logits(rng)
    labels = rng.integers(0, x.shape[1], size=x.shape[0])
    return (lambda a: obj.loss_task(a, labels)), [_t(x)]


def _l01(rng):
    return obj.loss_confidence, [_t(_logits(rng))]


def _l10(rng):
    # distinct row maxima keep the max operator differentiable
    x = _logits(rng)
    x[np.arange(len(x)), np.argmax(x, axis=1)] += 0.5
    return obj.loss_attack, [_t(x)]


def _l11(rng):
    n = int(rng.integers(2, 6))
    seeds = rng.random((n, 3))
    samples = rng.standard_normal((n, 3))
    m = int(rng.choice([1, 2, 3]))
    cfg = obj.DiversityConfig(m=m)
    if m != 2:
        # |.|^m has a kink at 0 for m=1; pairwise gaps are a.s. non-zero
        samples = samples + np.arange(n)[:, None]
    return (lambda a: obj.loss_sample_diversity(seeds, a, cfg)), [_t(samples)]


def _l12(rng):
    n = int(rng.integers(2, 6))
    seeds = rng.random((n, 2))
    logits = rng.standard_normal((n, int(rng.integers(2, 5))))
    return (lambda a: obj.loss_output_diversity(seeds, ops.softmax(a))), [_t(logits)]


def _l13(rng):
    n, c = 3, 3
    seeds = rng.random((n, 2))
    samples = rng.standard_normal((n, 2))
    logits = 2.0 * rng.standard_normal((n, c))
    logits[np.arange(n), np.argmax(logits, axis=1)] += 0.5

    def fn(a, l):
        return obj.loss_gan(obj.loss_attack(l), obj.loss_sample_diversity(seeds, a),
                            obj.loss_output_diversity(seeds, ops.softmax(l)))
    return fn, [_t(samples), _t(logits)]


LOSS_CASES = {"L00": _l00, "L01": _l01, "L10": _l10, "L11": _l11, "L12": _l12, "L13": _l13}

"""Central finite-difference gradient checking."""

import numpy as np

from .tensor import no_grad


def numerical_grad(fn, inputs, h=1e-5):
    """Central differences of the scalar ``fn(*inputs)`` w.r.t. every input."""
    grads = []
    with no_grad():
        for x in inputs:
            g = np.zeros_like(x.data)
            flat = x.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = fn(*inputs).item()
                flat[i] = orig - h
                down = fn(*inputs).item()
                flat[i] = orig
                gflat[i] = (up - down) / (2.0 * h)
            grads.append(g)
    return grads


def analytic_grad(fn, inputs):
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    fn(*inputs).backward()
    return [x.grad if x.grad is not None else np.zeros_like(x.data) for x in inputs]


def relative_error(a, b, floor=1e-8):
    """max |a - b| / max(|a|, |b|, floor), elementwise then maximised."""
    a, b = np.asarray(a), np.asarray(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def check_gradients(fn, inputs, h=1e-5, tol=1e-4, floor=1e-6):
    """Return ``(ok, worst_relative_error)`` comparing tape vs finite differences.

    ``floor`` keeps components whose true derivative is ~0 from dominating
    the relative error through cancellation noise in the finite difference.
    """
    analytic = analytic_grad(fn, inputs)
    numeric = numerical_grad(fn, inputs, h)
    worst = max(relative_error(a, n, floor) for a, n in zip(analytic, numeric))
    return worst < tol, worst

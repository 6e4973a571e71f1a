"""Central finite-difference checks for the autodiff engine."""

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(fn, arrays, eps=1e-4):
    """d fn / d arrays[i] by central differences; ``fn`` maps arrays to a float."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            hi = fn(arrays)
            flat[i] = old - eps
            lo = fn(arrays)
            flat[i] = old
            gflat[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def analytic_grad(build, arrays):
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(leaves)
    backward(loss)
    return [np.zeros_like(a) if t.grad is None else t.grad for a, t in zip(arrays, leaves)]


def relative_error(a, n):
    """max|a - n| / max(max|a|, max|n|, 1e-8), per tensor."""
    a, n = np.asarray(a), np.asarray(n)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-8)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def check_gradients(build, arrays, eps=1e-4):
    """Largest per-tensor relative error between backward() and finite differences.

    ``build`` takes a list of leaf Tensors and returns a scalar Tensor; it must
    be deterministic (reseed any dropout rng inside it).
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    ana = analytic_grad(build, arrays)
    num = numerical_grad(lambda arrs: build([Tensor(a) for a in arrs]).item(), arrays, eps)
    return max(relative_error(a, n) for a, n in zip(ana, num))

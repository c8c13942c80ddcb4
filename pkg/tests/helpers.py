"""Shared oracles for the test suite.

These stay deliberately independent of the library code paths they check:
the gradient oracle evaluates the forward function numerically, and the DFT
oracle is a direct O(n^2) summation.
"""
import numpy as np

from dpno.autodiff import Tensor


def finite_difference_grad(f, arrays, h=1e-6):
    """Central finite differences of scalar f(*arrays) wrt each array."""
    grads = []
    for idx in range(len(arrays)):
        base = arrays[idx]
        g = np.zeros_like(base, dtype=np.float64)
        flat = base.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*arrays)
            flat[i] = orig - h
            fm = f(*arrays)
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric, floor=1e-8):
    """Worst elementwise |a - n| / max(|n|, floor).

    The floor keeps the ratio meaningful where the true gradient sits at or
    below the finite-difference noise floor (~eps*f/h, i.e. ~1e-10 for unit
    losses at h=1e-6); end-to-end checks on deep graphs use floor=1e-6.
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    b = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.abs(b), floor)
    return float(np.max(np.abs(a - b) / denom))


def gradcheck(build_loss, params, h=1e-6, floor=1e-8):
    """Compare tape gradients of build_loss(params) against central FD.

    ``params`` is a list of Tensors with requires_grad=True; ``build_loss``
    must return a scalar Tensor when called under an active tape, and a
    float when the same tensors are evaluated without one.

    Returns the worst relative error across all parameters.
    """
    from dpno.autodiff import Tape

    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    def scalar_eval(*arrays):
        return float(build_loss().data)

    numeric = finite_difference_grad(scalar_eval, [p.data for p in params], h=h)
    return max(max_rel_err(a, n, floor) for a, n in zip(analytic, numeric))


def dft_direct(x, axis=-1):
    """O(n^2) unnormalized forward DFT along ``axis``."""
    x = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, -1)
    n = x.shape[-1]
    j = np.arange(n)
    mat = np.exp(-2j * np.pi * np.outer(j, j) / n)
    out = x @ mat
    return np.moveaxis(out, -1, axis)


def rfft_direct(x, axis=-1):
    n = np.asarray(x).shape[axis]
    full = dft_direct(x, axis)
    sl = [slice(None)] * full.ndim
    sl[axis] = slice(0, n // 2 + 1)
    return full[tuple(sl)]

"""Finite-difference validation of reverse-mode gradients.

Checks run in float64.  The oracle uses central differences,
    df/dx_i ~= (f(x + h e_i) - f(x - h e_i)) / (2h),
and the comparison metric is max |analytic - numeric| / max(1, ||numeric||_inf).
"""

import numpy as np

from . import precision
from .tensor import Tensor, backward


def finite_diff_grad(fn, args, wrt, h=1e-5):
    """Numeric gradient of the scalar `fn(*args)` with respect to `args[wrt]`.

    `args` are ndarrays; `fn` must accept ndarrays and return a python float
    or 0-d array.  Returns an ndarray shaped like `args[wrt]`.
    """
    args = [np.asarray(a, dtype=np.float64) for a in args]
    x = args[wrt]
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn(*args))
        flat[i] = orig - h
        fm = float(fn(*args))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(1.0, float(np.abs(numeric).max()) if numeric.size else 0.0)
    return float(np.abs(analytic - numeric).max()) / denom


def check_composite_gradients(build, arrays, coords, h=1e-5, tol=1e-4,
                              max_excluded=0.05):
    """Spot-check reverse-mode gradients of a deep composite path.

    Paths through leaky_relu are piecewise linear; a central difference that
    straddles a kink measures the wrong thing.  Each probed coordinate's two
    evaluations are therefore traced (see ops.activation_sign_trace) and the
    estimate is discarded when the activation sign pattern differs between
    them.  `coords` maps input index -> iterable of flat coordinate indices
    to probe.  Returns (worst relative error, excluded fraction); raises if
    the error exceeds `tol` or too many probes were excluded.
    """
    from . import ops

    with precision.mode("test"):
        tensors = [Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)
                   for a in arrays]
        loss = build(tensors)
        grads = backward(loss, wrt=tensors)

        def eval_traced(args):
            ts = [Tensor(a) for a in args]
            sink = []
            with ops.activation_sign_trace(sink):
                val = float(build(ts).data)
            return val, b"".join(sink)

        base = [t.data.copy() for t in tensors]
        worst = 0.0
        checked = 0
        excluded = 0
        for i, idxs in coords.items():
            flat = base[i].reshape(-1)
            aflat = grads[tensors[i]].data.reshape(-1)
            for j in idxs:
                orig = flat[j]
                flat[j] = orig + h
                fp, sig_p = eval_traced(base)
                flat[j] = orig - h
                fm, sig_m = eval_traced(base)
                flat[j] = orig
                if sig_p != sig_m:
                    excluded += 1
                    continue
                numeric = (fp - fm) / (2.0 * h)
                err = abs(aflat[j] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
                checked += 1
        total = checked + excluded
        frac = excluded / total if total else 0.0
        if frac > max_excluded:
            raise AssertionError(
                f"{excluded}/{total} probes straddled activation kinks")
        if worst > tol:
            raise AssertionError(
                f"composite gradient mismatch: relative error {worst:.3e} > {tol:.1e}")
        return worst, frac


def check_gradients(build, arrays, h=1e-5, tol=1e-4):
    """Compare reverse-mode gradients of `build` against the oracle.

    `build` maps a list of Tensors to a scalar Tensor; `arrays` is the list
    of float inputs (each is checked).  Runs in the float64 precision mode.
    Returns the worst relative error seen; raises AssertionError above `tol`.
    """
    with precision.mode("test"):
        tensors = [Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)
                   for a in arrays]
        loss = build(tensors)
        grads = backward(loss, wrt=tensors)

        def as_scalar(*arr):
            ts = [Tensor(a) for a in arr]
            return float(build(ts).data)

        worst = 0.0
        for i, t in enumerate(tensors):
            numeric = finite_diff_grad(as_scalar, [t.data.copy() for t in tensors], i, h=h)
            err = relative_error(grads[t].data, numeric)
            worst = max(worst, err)
            if err > tol:
                raise AssertionError(
                    f"gradient mismatch on input {i}: relative error {err:.3e} > {tol:.1e}")
        return worst

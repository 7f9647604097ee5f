"""Shared test oracles: finite-difference gradients, tolerances."""

from __future__ import annotations

import numpy as np

from alseqlab import numerics as nm


def finite_difference_grad(fn, tensors: dict[str, nm.Tensor], step: float = 1e-5):
    """Central finite differences of scalar ``fn()`` w.r.t. every tensor.

    ``fn`` must read the current ``.data`` of the tensors on each call and
    return a python float; it is evaluated with no tape active.
    """
    grads = {}
    for name, t in tensors.items():
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = fn()
            flat[i] = orig - step
            f_minus = fn()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * step)
        grads[name] = g
    return grads


def relative_tensor_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-based relative disagreement between two gradient tensors."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def assert_grads_close(analytic: dict, numeric: dict, rel_tol: float = 1e-4):
    for name in numeric:
        a = analytic[name]
        assert a is not None, f"no analytic gradient for {name}"
        err = relative_tensor_error(np.asarray(a), numeric[name])
        assert err <= rel_tol, f"gradient mismatch for {name}: rel err {err:.3e}"

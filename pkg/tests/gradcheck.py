"""Central finite-difference gradient checking, the oracle for all backward passes.

Everything here runs at float64; finite differences are unreliable at float32.
"""

from __future__ import annotations

import numpy as np

from tgpd import nn


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """d f / d x by central differences, one entry at a time. f maps array -> float."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = f(x)
        flat[k] = orig - h
        fm = f(x)
        flat[k] = orig
        gflat[k] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.abs(analytic - numeric).max()
    den = max(np.abs(analytic).max(), np.abs(numeric).max(), 1.0)
    return float(num / den)


def check_param_grads(build_loss, params: list, tol: float, h: float = 1e-6) -> None:
    """Assert analytic grads of `build_loss()` (a fresh tape each call) match finite differences.

    `build_loss` must read current `p.values` for every p in `params` and return
    the scalar loss as a float; analytic gradients are taken from one
    tape-backward pass.
    """
    for p in params:
        p.zero_grad()
    tape = nn.Tape()
    loss = build_loss(tape)
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    for p, ag in zip(params, analytic):
        def f(x, p=p):
            saved = p.values
            p.values = x
            try:
                return float(build_loss(nn.Tape()).values)
            finally:
                p.values = saved
        ng = numeric_grad(f, p.values.astype(np.float64), h=h)
        err = relative_error(ag.astype(np.float64), ng)
        assert err <= tol, f"gradient mismatch for {p.name or 'param'}: rel err {err:.3e} > {tol}"

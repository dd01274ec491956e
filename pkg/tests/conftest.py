"""Shared test helpers: finite-difference oracles and small builders."""

from __future__ import annotations

import numpy as np

from hycoreg.autodiff import Tensor


def numerical_grad(build_loss, tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar loss w.r.t. one tensor's entries."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = float(build_loss().data)
        flat[i] = orig - h
        minus = float(build_loss().data)
        flat[i] = orig
        gflat[i] = (plus - minus) / (2.0 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float((np.abs(analytic - numeric) / scale).max())


def check_gradients(build_loss, tensors: dict[str, Tensor], h: float = 1e-5, tol: float = 1e-4):
    """Assert analytic gradients match central differences for every tensor."""
    for t in tensors.values():
        t.zero_grad()
    loss = build_loss()
    loss.backward()
    worst = {}
    for name, t in tensors.items():
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        numeric = numerical_grad(build_loss, t, h=h)
        worst[name] = max_rel_error(analytic, numeric)
    bad = {n: e for n, e in worst.items() if e >= tol}
    assert not bad, f"gradient mismatch: {bad}"
    return worst

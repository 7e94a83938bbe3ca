"""
Central finite-difference oracles for gradients and Jacobians.
"""
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from app.core.tensor import Tensor, backward, no_grad, zero_grad

ZERO_GRAD = 1e-6


@dataclass
class GradCheckResult:
    checked: int
    failures: int
    max_rel_error: float

    @property
    def ok(self) -> bool:
        return self.failures == 0


def numerical_gradient(fn: Callable[[], Tensor], param: Tensor, step: float = 1e-4) -> np.ndarray:
    """
    d fn() / d param by the five-point central stencil; ``fn`` must rebuild
    its graph on every call.
    """
    base = param.values
    grad = np.zeros_like(base)

    def at(idx, offset: float) -> float:
        shifted = base.copy()
        shifted[idx] += offset
        param.values = shifted
        return fn().item()

    try:
        with no_grad():
            for idx in np.ndindex(base.shape):
                grad[idx] = (
                    -at(idx, 2 * step) + 8 * at(idx, step) - 8 * at(idx, -step) + at(idx, -2 * step)
                ) / (12.0 * step)
    finally:
        param.values = base
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), ZERO_GRAD)
    return np.abs(analytic - numeric) / scale


def check_gradients(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-4,
    rtol: float = 1e-4,
    zero_rtol: float = 1e-3,
) -> GradCheckResult:
    """
    Compare backward() against central differences for every scalar
    parameter. Components below 1e-6 in magnitude use ``zero_rtol``.
    """
    zero_grad(params)
    backward(fn())
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.values) for p in params]
    zero_grad(params)

    checked = failures = 0
    worst = 0.0
    for p, a in zip(params, analytic):
        n = numerical_gradient(fn, p, step)
        err = relative_error(a, n)
        near_zero = np.maximum(np.abs(a), np.abs(n)) < ZERO_GRAD
        tol = np.where(near_zero, zero_rtol, rtol)
        failures += int(np.sum(err > tol))
        checked += err.size
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return GradCheckResult(checked=checked, failures=failures, max_rel_error=worst)


def numerical_jacobian(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Jacobian of a vector map R^d -> R^d at a single point by central differences."""
    x = np.asarray(x, dtype=np.float64).ravel()
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        cols.append((fn(x + e) - fn(x - e)) / (2.0 * step))
    return np.stack(cols, axis=1)


def jacobian_logdet(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float = 1e-5) -> float:
    _, logdet = np.linalg.slogdet(numerical_jacobian(fn, x, step))
    return float(logdet)

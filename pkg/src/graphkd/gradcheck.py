"""Central finite-difference checks for the autodiff engine."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, backward, no_grad, reset_tape


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)  # relative error per tensor
    tolerance: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def worst(self) -> str | None:
        return max(self.errors, key=self.errors.get) if self.errors else None

    @property
    def ok(self) -> bool:
        return self.max_error < self.tolerance

    def __str__(self) -> str:
        status = "ok" if self.ok else f"FAILED (worst: {self.worst})"
        return f"gradcheck {status}: max relative error {self.max_error:.3e} (tol {self.tolerance:g})"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max|a - n| scaled by the larger of max|a|, max|n| (and ``floor``)."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numerical_grad(loss_fn: Callable[[], Tensor], t: Tensor, step: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn().item()
            flat[i] = orig - step
            down = loss_fn().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
    return grad


def gradcheck(
    loss_fn: Callable[[], Tensor],
    tensors: Mapping[str, Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare backward() gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the loss from the current contents of ``tensors``.
    """
    for t in tensors.values():
        t.requires_grad = True
        t.grad = None
    reset_tape()
    backward(loss_fn())
    report = GradCheckReport(tolerance=tolerance)
    for name, t in tensors.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        report.errors[name] = relative_error(analytic, numerical_grad(loss_fn, t, step))
    return report

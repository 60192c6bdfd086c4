"""Post-hoc analysis quantities for small problems.

These are never used to steer a run. They need either a reference Newton
direction (obtained here by running Richardson to convergence on the global
Hessian) or the convergence constants.
"""

from __future__ import annotations

import math

import numpy as np

from .richardson import Operator, RichardsonSettings, richardson_iterates
from .spectral import ConvergenceConstants

__all__ = ["damped_phase", "direction_error", "reference_direction"]


def reference_direction(apply: Operator, grad: np.ndarray, lambda_min: float, lambda_max: float,
                        tol: float = 1e-13, max_rounds: int = 1_000_000) -> np.ndarray:
    """-H^{-1} g by Richardson with the optimal relaxation 2/(lambda_min + lambda_max).

    Stops once an update changes the iterate by less than ``tol`` relative.
    """
    alpha = 2.0 / (lambda_min + lambda_max)
    x = np.zeros_like(grad)
    for x_new in richardson_iterates(apply, -grad, RichardsonSettings(alpha, max_rounds)):
        if np.linalg.norm(x_new - x) <= tol * max(np.linalg.norm(x_new), 1e-300):
            return x_new
        x = x_new
    return x


def direction_error(direction: np.ndarray, reference: np.ndarray) -> float:
    """Smallest delta with ||reference - direction|| <= delta ||reference||."""
    scale = np.linalg.norm(reference)
    if scale == 0.0:
        return 0.0 if not np.any(direction) else math.inf
    return float(np.linalg.norm(reference - direction) / scale)


def damped_phase(grad_norm0: float, constants: ConvergenceConstants,
                 curvature: float | None = None) -> tuple[int, float]:
    """(t0, gamma): damped-phase length bound and the matching residual.

    With x = K ||g0|| / (2 lambda^2): t0 = max(0, ceil(4x) - 2) and
    gamma = x - t0 / 4, which lies in [0, 1/2]. K follows the adaptive step
    size (Hessian Lipschitz constant unless given).
    """
    k = constants.hessian_lipschitz if curvature is None else curvature
    x = k * grad_norm0 / (2.0 * constants.lambda_strong ** 2)
    t0 = max(0, math.ceil(4.0 * x) - 2)
    return t0, x - t0 / 4.0

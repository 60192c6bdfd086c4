"""Spectral estimates and problem constants.

Everything here works through operator closures (usually Hessian-vector
products) so no d x d matrix is ever formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .glm import ContractError, Family, GlmModel, Samples, hvp

Operator = Callable[[np.ndarray], np.ndarray]

DEFAULT_POWER_ITERS = 30

# sup |d^3/dz^3 log(1 + exp(-z))| = max |sigma''| = 1 / (6 sqrt 3)
_LOGISTIC_THIRD = 1.0 / (6.0 * math.sqrt(3.0))
# Third directional derivative of log-sum-exp is bounded by (max u - min u)^3 / 4;
# with u = V^T a and ||V||_F = 1 the spread is at most sqrt(2) ||a||.
_SOFTMAX_THIRD = 2.0 ** 1.5 / 4.0


@dataclass(frozen=True)
class ConvergenceConstants:
    """Strong convexity ``lambda_strong``, smoothness L, Hessian Lipschitz M, and
    heterogeneity nu. M and nu are diagnostic except that M drives the adaptive
    step size."""

    lambda_strong: float
    smoothness: float
    hessian_lipschitz: float = 0.0
    nu: float = 0.0

    def __post_init__(self):
        if not self.lambda_strong > 0:
            raise ContractError(f"lambda_strong must be > 0, got {self.lambda_strong}")
        if not self.smoothness >= self.lambda_strong:
            raise ContractError(
                f"smoothness {self.smoothness} < lambda_strong {self.lambda_strong}"
            )
        if self.hessian_lipschitz < 0 or self.nu < 0:
            raise ContractError("hessian_lipschitz and nu must be >= 0")

    @property
    def kappa(self) -> float:
        return self.smoothness / self.lambda_strong


def _power(apply: Operator, dim: int, iters: int, seed: int) -> float:
    """Rayleigh quotient after ``iters`` power steps; 0.0 for the zero operator."""
    if iters < 1:
        raise ContractError(f"iters must be >= 1, got {iters}")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    for _ in range(iters):
        u = apply(v)
        norm = np.linalg.norm(u)
        if norm == 0.0:
            return 0.0
        v = u / norm
    return float(v @ apply(v))


def estimate_lambda_max(apply: Operator, dim: int, iters: int = DEFAULT_POWER_ITERS,
                        seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD operator by power iteration."""
    value = _power(apply, dim, iters, seed)
    if value == 0.0:
        raise ContractError("zero operator: Rayleigh quotient undefined")
    return value


def worker_lambda_max(model: GlmModel, shards: Sequence[Samples], w: np.ndarray,
                      iters: int = DEFAULT_POWER_ITERS, seed: int = 0) -> float:
    """max_i lambda_max(H_i(w)) over the worker shards."""
    return max(
        estimate_lambda_max(lambda v, s=s: hvp(model, s, w, v), model.n_params, iters, seed)
        for s in shards
    )


def global_hvp(model: GlmModel, shards: Sequence[Samples], w: np.ndarray) -> Operator:
    """Operator of the unweighted average Hessian (1/n) sum_i H_i(w)."""

    def apply(v):
        total = np.zeros(model.n_params)
        for s in shards:
            total = total + hvp(model, s, w, v)
        return total / len(shards)

    return apply


def estimate_lambda_min(apply: Operator, dim: int, upper: float,
                        iters: int = 200, seed: int = 0) -> float:
    """Smallest eigenvalue via power iteration on ``upper * I - A``."""
    top = _power(lambda v: upper * v - apply(v), dim, iters, seed)
    return upper - top


def estimate_nu(model: GlmModel, shards: Sequence[Samples], w: np.ndarray,
                iters: int = DEFAULT_POWER_ITERS, seed: int = 0) -> float:
    """||A^2 - (1/n) sum A_i^2|| with A_i the worker Hessians at ``w``.

    The difference is negative semidefinite, so its norm is the top eigenvalue
    of ``(1/n) sum A_i^2 - A^2``.
    """
    big = global_hvp(model, shards, w)

    def apply(v):
        total = np.zeros(model.n_params)
        for s in shards:
            total = total + hvp(model, s, w, hvp(model, s, w, v))
        return total / len(shards) - big(big(v))

    return max(_power(apply, model.n_params, iters, seed), 0.0)


def hessian_lipschitz_bound(model: GlmModel, shards: Sequence[Samples]) -> float:
    """Upper bound on the Lipschitz constant M of the average Hessian.

    Zero for ridge (quadratic loss). For the logistic families the per-sample
    third derivative is bounded by a constant times ||a_j||^3.
    """
    if model.family is Family.RIDGE:
        return 0.0
    c = _LOGISTIC_THIRD if model.family is Family.LOGISTIC else _SOFTMAX_THIRD
    per_worker = [
        float(np.mean(np.linalg.norm(s.features, axis=1) ** 3)) for s in shards
    ]
    return c * float(np.mean(per_worker))


def estimate_constants(model: GlmModel, shards: Sequence[Samples], w: np.ndarray,
                       iters: int = DEFAULT_POWER_ITERS, seed: int = 0,
                       lambda_strong: float | None = None,
                       smoothness: float | None = None,
                       with_nu: bool = True) -> ConvergenceConstants:
    """Constants at ``w``.

    ``lambda_strong`` defaults to the regularization strength (a certified lower
    bound); when that is zero the smallest eigenvalue of the average Hessian is
    estimated instead. ``smoothness`` defaults to max_i lambda_max(H_i).
    """
    if smoothness is None:
        smoothness = worker_lambda_max(model, shards, w, iters, seed)
    if lambda_strong is None:
        lambda_strong = model.lam
        if lambda_strong == 0.0:
            lambda_strong = estimate_lambda_min(
                global_hvp(model, shards, w), model.n_params, smoothness, seed=seed
            )
            if not lambda_strong > 0:
                raise ContractError("problem is not strongly convex (lambda_min <= 0)")
    nu = estimate_nu(model, shards, w, iters, seed) if with_nu else 0.0
    return ConvergenceConstants(
        lambda_strong=lambda_strong,
        smoothness=max(smoothness, lambda_strong),
        hessian_lipschitz=hessian_lipschitz_bound(model, shards),
        nu=nu,
    )

"""Richardson iteration for symmetric positive definite operators."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .glm import ContractError

Operator = Callable[[np.ndarray], np.ndarray]

DIVERGENCE_FACTOR = 1e12


class DivergenceError(ArithmeticError):
    """An iterate became non-finite or blew past the divergence threshold."""

    def __init__(self, round_index: int, detail: str = "", worker: int | None = None):
        self.round_index = round_index
        self.worker = worker
        self.detail = detail
        where = f"round {round_index}"
        if worker is not None:
            where = f"worker {worker}, {where}"
        super().__init__(f"Richardson iteration diverged at {where}" + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class RichardsonSettings:
    alpha: float
    rounds: int
    x0: np.ndarray | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ContractError(f"alpha must be > 0, got {self.alpha}")
        if self.rounds < 0:
            raise ContractError(f"rounds must be >= 0, got {self.rounds}")


def richardson_iterates(apply: Operator, b: np.ndarray,
                        settings: RichardsonSettings) -> Iterator[np.ndarray]:
    """Yield x_1, ..., x_R of x_k = (I - alpha A) x_{k-1} + alpha b."""
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b) if settings.x0 is None else np.array(settings.x0, dtype=np.float64)
    if x.shape != b.shape:
        raise ContractError(f"x0 shape {x.shape} does not match b shape {b.shape}")
    alpha = settings.alpha
    limit = DIVERGENCE_FACTOR * (np.linalg.norm(b) + np.linalg.norm(x) + 1.0)
    step = alpha * b
    for k in range(1, settings.rounds + 1):
        x = x - alpha * apply(x) + step
        norm = np.linalg.norm(x)
        if not np.isfinite(norm):
            raise DivergenceError(k, "non-finite iterate")
        if norm > limit:
            raise DivergenceError(k, f"iterate norm {norm:.3e} exceeds {limit:.3e}")
        yield x


def richardson_solve(apply: Operator, b: np.ndarray, settings: RichardsonSettings) -> np.ndarray:
    """Approximate A^{-1} b with ``settings.rounds`` Richardson steps.

    Converges when 0 < alpha < 2 / lambda_max(A). With zero rounds the initial
    iterate is returned.
    """
    x = np.zeros(np.shape(b)) if settings.x0 is None else np.array(settings.x0, dtype=np.float64)
    for x in richardson_iterates(apply, b, settings):
        pass
    return x


def spectral_alpha(lambda_max_hat: float, rounds: int) -> float:
    """Largest alpha allowed by min{1/rounds, 1/lambda_max_hat}."""
    if not lambda_max_hat > 0:
        raise ContractError(f"lambda_max_hat must be > 0, got {lambda_max_hat}")
    if rounds < 1:
        raise ContractError(f"rounds must be >= 1, got {rounds}")
    return min(1.0 / rounds, 1.0 / lambda_max_hat)

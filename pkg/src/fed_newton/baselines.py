"""Reference algorithms sharing the federation round machinery.

* distributed gradient descent: one gradient exchange per round;
* Newton via Richardson on the global Hessian: every inner Richardson step
  aggregates worker Hessian-vector products, so a round costs R + 2
  communication exchanges.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .glm import ContractError, gradient, hvp
from .federation import (
    AggregatorState,
    WorkerState,
    _average,
    _map,
    _step_size,
    finish_round,
)
from .richardson import RichardsonSettings, richardson_solve
from .spectral import ConvergenceConstants
from .trace import TraceRecord

__all__ = ["BaselineKind", "default_gd_step", "gd_round", "newton_richardson_round"]


@dataclass(frozen=True)
class BaselineKind:
    """``distributed_gd`` (uses ``eta``) or ``newton_richardson`` (uses
    ``alpha`` and ``inner_rounds``)."""

    kind: str
    eta: float | None = None
    alpha: float | None = None
    inner_rounds: int | None = None

    def __post_init__(self):
        if self.kind == "distributed_gd":
            if self.eta is None or not self.eta > 0:
                raise ContractError("distributed GD needs eta > 0")
        elif self.kind == "newton_richardson":
            if self.alpha is None or not self.alpha > 0:
                raise ContractError("Newton-Richardson needs alpha > 0")
            if self.inner_rounds is None or self.inner_rounds < 1:
                raise ContractError("Newton-Richardson needs inner_rounds >= 1")
        else:
            raise ContractError(f"unknown baseline {self.kind!r}")


def default_gd_step(constants: ConvergenceConstants) -> float:
    """2 / (lambda + L)."""
    return 2.0 / (constants.lambda_strong + constants.smoothness)


def gd_round(agg: AggregatorState, workers: Sequence[WorkerState], eta: float,
             threads: int | None = None) -> tuple[AggregatorState, TraceRecord]:
    if eta < 0:
        raise ContractError(f"eta must be >= 0, got {eta}")
    w = agg.w
    grads = _map(lambda wk: gradient(wk.model, wk.shard, w), workers, threads)
    g = _average(grads)
    return finish_round(agg, workers, w - eta * g, eta, 2, threads)


def newton_richardson_round(agg: AggregatorState, workers: Sequence[WorkerState],
                            alpha: float, inner_rounds: int,
                            stepsize: tuple[str, float | None] = ("adaptive", None),
                            threads: int | None = None) -> tuple[AggregatorState, TraceRecord]:
    w = agg.w
    grads = _map(lambda wk: gradient(wk.model, wk.shard, w), workers, threads)
    g = _average(grads)

    def global_apply(v):
        return _average(_map(lambda wk: hvp(wk.model, wk.shard, w, v), workers, threads))

    d = richardson_solve(global_apply, -g, RichardsonSettings(alpha=alpha, rounds=inner_rounds))
    eta = _step_size(stepsize, float(np.linalg.norm(g)), agg.constants)
    return finish_round(agg, workers, w + eta * d, eta, inner_rounds + 2, threads)

"""Simulated edge workers and aggregator running the two-exchange Newton protocol.

One global iteration:

1. the aggregator broadcasts ``w_t`` to the sampled workers;
2. each worker uploads its gradient, the aggregator averages them and sends
   the global gradient back;
3. each worker runs R Richardson steps on its own Hessian to approximate a
   local Newton direction and uploads it;
4. the aggregator averages the directions and steps ``w_{t+1} = w_t + eta_t d``.

Worker computations between the two barriers may run on threads; partial
results are always combined in ascending worker-id order, so a run is
bit-for-bit reproducible regardless of the thread count.
"""

from __future__ import annotations

import enum
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .glm import ContractError, Family, GlmModel, Samples, gradient, hvp, loss, sample_losses
from .glm import accuracy as _accuracy
from .richardson import DivergenceError, RichardsonSettings, richardson_solve, spectral_alpha
from .spectral import ConvergenceConstants
from .trace import TraceRecord, diverged_marker

__all__ = [
    "AggregatorState",
    "MessageKind",
    "RoundMessage",
    "SamplingPolicy",
    "WorkerState",
    "adaptive_stepsize",
    "done_round",
    "evaluate",
    "local_direction",
    "make_workers",
    "iterate_rounds",
    "run",
    "sample_workers",
]

THREADS_ENV = "FED_NEWTON_THREADS"
AGGREGATOR = -1


class MessageKind(str, enum.Enum):
    MODEL_BROADCAST = "model_broadcast"  # aggregator -> worker: w_t
    GRADIENT_UP = "gradient_up"          # worker -> aggregator: grad f_i(w_t)
    GRADIENT_DOWN = "gradient_down"      # aggregator -> worker: grad f(w_t)
    DIRECTION_UP = "direction_up"        # worker -> aggregator: d_{i,t}^R


@dataclass(frozen=True)
class RoundMessage:
    kind: MessageKind
    round: int
    sender: int
    recipient: int
    payload: np.ndarray


@dataclass
class WorkerState:
    id: int
    shard: Samples
    model: GlmModel
    seed: int = 0
    validation: Samples | None = None

    def __post_init__(self):
        if len(self.shard) == 0:
            raise ContractError(f"worker {self.id} has an empty shard")

    def batch(self, round_index: int, size: int | None) -> Samples:
        """Uniform batch without replacement for one global round.

        The whole shard, in its stored order, when ``size`` is None or at
        least the shard size.
        """
        if size is None or size >= len(self.shard):
            return self.shard
        rng = np.random.default_rng([self.seed, self.id, round_index])
        index = np.sort(rng.choice(len(self.shard), size=size, replace=False))
        return self.shard.take(index)


@dataclass
class AggregatorState:
    w: np.ndarray
    constants: ConvergenceConstants
    round: int = 0
    comm_count: int = 0


@dataclass(frozen=True)
class SamplingPolicy:
    batch_size: int | None = None
    subset_size: int | None = None  # None means every worker
    seed: int = 0

    def __post_init__(self):
        if self.batch_size is not None and self.batch_size < 1:
            raise ContractError(f"batch size must be >= 1, got {self.batch_size}")
        if self.subset_size is not None and self.subset_size < 1:
            raise ContractError(f"subset size must be >= 1, got {self.subset_size}")


def sample_workers(n: int, subset_size: int, round_index: int, seed: int) -> list[int]:
    """Sorted ids of a uniform subset, deterministic in (seed, round)."""
    if not 1 <= subset_size <= n:
        raise ContractError(f"subset size {subset_size} outside [1, {n}]")
    if subset_size == n:
        return list(range(n))
    rng = np.random.default_rng([seed, round_index, 0x5EED])
    return sorted(int(i) for i in rng.choice(n, size=subset_size, replace=False))


def adaptive_stepsize(grad_norm: float, constants: ConvergenceConstants,
                      curvature: float | None = None) -> float:
    """eta = min{1, lambda^2 / (K ||grad||)}.

    K defaults to the Hessian Lipschitz constant, which makes the step exactly
    1 on quadratic losses; pass ``curvature=constants.smoothness`` for the
    smoothness-based variant.
    """
    k = constants.hessian_lipschitz if curvature is None else curvature
    if grad_norm <= 0.0 or k <= 0.0:
        return 1.0
    return min(1.0, constants.lambda_strong ** 2 / (k * grad_norm))


def local_direction(worker: WorkerState, w_t: np.ndarray, global_grad: np.ndarray,
                    alpha: float, rounds: int, batch: int | None = None,
                    round_index: int = 0) -> np.ndarray:
    """R Richardson steps on the worker Hessian, solving H_i d = -grad f."""
    data = worker.batch(round_index, batch)
    model = worker.model
    settings = RichardsonSettings(alpha=alpha, rounds=rounds)
    try:
        return richardson_solve(lambda v: hvp(model, data, w_t, v), -global_grad, settings)
    except DivergenceError as exc:
        raise DivergenceError(exc.round_index, exc.detail, worker=worker.id) from None


def _threads(threads: int | None) -> int:
    cap = os.environ.get(THREADS_ENV)
    n = threads if threads is not None else 1
    if cap:
        n = min(n, int(cap)) if threads is not None else int(cap)
    return max(1, n)


def _map(fn: Callable, items: Sequence, threads: int | None) -> list:
    n = _threads(threads)
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))


def _average(vectors: Sequence[np.ndarray]) -> np.ndarray:
    total = np.zeros_like(vectors[0])
    for v in vectors:
        total = total + v
    return total / len(vectors)


def evaluate(workers: Sequence[WorkerState], w: np.ndarray,
             threads: int | None = None) -> dict:
    """Global train loss and gradient norm over every worker, plus validation metrics.

    Validation accuracy is pooled over all validation samples (size-weighted).
    """
    model = workers[0].model
    parts = _map(lambda wk: (loss(model, wk.shard, w), gradient(model, wk.shard, w)),
                 workers, threads)
    train_loss = float(np.mean([p[0] for p in parts]))
    grad_norm = float(np.linalg.norm(_average([p[1] for p in parts])))
    val = [wk.validation for wk in workers if wk.validation is not None and len(wk.validation)]
    val_accuracy = val_loss = None
    if val:
        pooled = Samples.concat(val)
        val_loss = float(sample_losses(model, pooled, w).mean())
        if model.family is not Family.RIDGE:
            val_accuracy = _accuracy(model, pooled, w)
    return {"train_loss": train_loss, "grad_norm": grad_norm,
            "val_accuracy": val_accuracy, "val_loss": val_loss}


def _step_size(rule: tuple[str, float | None], grad_norm: float,
               constants: ConvergenceConstants) -> float:
    kind, value = rule
    if kind == "fixed":
        return float(value)
    if kind == "adaptive-smooth":
        return adaptive_stepsize(grad_norm, constants, curvature=constants.smoothness)
    return adaptive_stepsize(grad_norm, constants)


def finish_round(agg: AggregatorState, workers: Sequence[WorkerState], w_new: np.ndarray,
                 eta: float, comm: int, threads: int | None) -> tuple[AggregatorState, TraceRecord]:
    if not np.all(np.isfinite(w_new)):
        raise DivergenceError(agg.round, "non-finite model after aggregation")
    new = replace(agg, w=w_new, round=agg.round + 1, comm_count=agg.comm_count + comm)
    m = evaluate(workers, w_new, threads)
    record = TraceRecord(round=agg.round, train_loss=m["train_loss"], grad_norm=m["grad_norm"],
                         val_accuracy=m["val_accuracy"], eta=float(eta),
                         comm_rounds=new.comm_count, val_loss=m["val_loss"])
    return new, record


def done_round(agg: AggregatorState, workers: Sequence[WorkerState], alpha: float,
               rounds: int, policy: SamplingPolicy = SamplingPolicy(),
               stepsize: tuple[str, float | None] = ("adaptive", None),
               threads: int | None = None,
               transcript: list | None = None) -> tuple[AggregatorState, TraceRecord]:
    """One global iteration of the protocol; ``comm_count`` grows by 2.

    With subset sampling the gradient and direction are averaged over the S
    sampled workers. ``transcript``, when given, receives every RoundMessage.
    """
    t, w = agg.round, agg.w
    n = len(workers)
    S = n if policy.subset_size is None else policy.subset_size
    chosen = [workers[i] for i in sample_workers(n, S, t, policy.seed)]

    def send(kind, sender, recipient, payload):
        if transcript is not None:
            transcript.append(RoundMessage(kind, t, sender, recipient, payload))

    for wk in chosen:
        send(MessageKind.MODEL_BROADCAST, AGGREGATOR, wk.id, w)
    grads = _map(lambda wk: gradient(wk.model, wk.batch(t, policy.batch_size), w), chosen, threads)
    for wk, g_i in zip(chosen, grads):
        send(MessageKind.GRADIENT_UP, wk.id, AGGREGATOR, g_i)
    g = _average(grads)
    for wk in chosen:
        send(MessageKind.GRADIENT_DOWN, AGGREGATOR, wk.id, g)

    dirs = _map(lambda wk: local_direction(wk, w, g, alpha, rounds, policy.batch_size, t),
                chosen, threads)
    for wk, d_i in zip(chosen, dirs):
        send(MessageKind.DIRECTION_UP, wk.id, AGGREGATOR, d_i)
    d = _average(dirs)
    eta = _step_size(stepsize, float(np.linalg.norm(g)), agg.constants)
    return finish_round(agg, workers, w + eta * d, eta, 2, threads)


def make_workers(model: GlmModel, dataset, seed: int = 0) -> list[WorkerState]:
    return [WorkerState(i, shard.train, model, seed, shard.validation)
            for i, shard in enumerate(dataset.shards)]


def resolve_alpha(alpha: float | None, constants: ConvergenceConstants, rounds: int) -> float:
    return spectral_alpha(constants.smoothness, rounds) if alpha is None else alpha


def iterate_rounds(config, data, repeat: int = 0,
                   constants: ConvergenceConstants | None = None,
                   w0: np.ndarray | None = None):
    """Yield ``(state, record)`` after each global round of the configured algorithm.

    Raises DivergenceError from the round that failed.
    """
    from . import baselines
    from .spectral import estimate_constants

    model = GlmModel(data.family, config.lam, data.dim, max(data.num_classes, 2))
    run_seed = int(np.random.SeedSequence([config.seed, repeat]).generate_state(1)[0])
    workers = make_workers(model, data, run_seed)
    w = model.zeros() if w0 is None else np.array(w0, dtype=np.float64)
    if config.rounds_global == 0:
        return
    if constants is None:
        constants = estimate_constants(model, [wk.shard for wk in workers], w,
                                       iters=config.power_iters, seed=config.seed)
    alpha = resolve_alpha(config.alpha, constants, config.rounds_local)
    rule = config.stepsize_rule
    policy = SamplingPolicy(config.batch, config.subset, run_seed)
    agg = AggregatorState(w=w, constants=constants)

    if config.algo == "done":
        step = lambda a: done_round(a, workers, alpha, config.rounds_local, policy, rule,
                                    config.threads)
    elif config.algo == "newton":
        step = lambda a: baselines.newton_richardson_round(
            a, workers, alpha, config.rounds_local, rule, config.threads)
    else:
        eta = rule[1] if rule[0] == "fixed" else baselines.default_gd_step(constants)
        step = lambda a: baselines.gd_round(a, workers, eta, config.threads)

    for _ in range(config.rounds_global):
        start = time.perf_counter()
        agg, record = step(agg)
        record.wall_ms = (time.perf_counter() - start) * 1e3
        yield agg, record


def run(config, data, repeat: int = 0, run_id: str = "",
        constants: ConvergenceConstants | None = None,
        w0: np.ndarray | None = None) -> list[TraceRecord]:
    """Trace of ``config.rounds_global`` rounds.

    Stops early when the gradient norm reaches ``config.tol``; on divergence the
    records so far are followed by a ``diverged`` marker.
    """
    records = []
    rounds = iterate_rounds(config, data, repeat, constants, w0)
    while True:
        try:
            agg, record = next(rounds)
        except StopIteration:
            break
        except DivergenceError:
            records.append(diverged_marker(len(records), records[-1].comm_rounds if records else 0,
                                           run_id, repeat))
            break
        record.run_id, record.repeat = run_id, repeat
        records.append(record)
        if not np.isfinite(record.train_loss):
            records.append(diverged_marker(record.round + 1, agg.comm_count, run_id, repeat))
            break
        if config.tol is not None and record.grad_norm <= config.tol:
            break
    return records

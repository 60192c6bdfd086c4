"""Run configuration: a flat ``key = value`` file whose keys mirror CLI flags.

Grammar (one entry per line)::

    # comment
    key = value

Blank lines and ``#`` comments are ignored; keys are case-sensitive; the
last occurrence of a key wins. See ``docs/formats.md`` for the key list.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

__all__ = [
    "ConfigError",
    "DatasetSpec",
    "RunConfig",
    "parse_config",
    "parse_dataset",
    "parse_stepsize",
]

ALGOS = ("done", "gd", "newton")

# config key -> RunConfig attribute
KEYS = {
    "algo": "algo",
    "dataset": "dataset",
    "alpha": "alpha",
    "R": "rounds_local",
    "T": "rounds_global",
    "batch": "batch",
    "subset": "subset",
    "lambda": "lam",
    "stepsize": "stepsize",
    "seed": "seed",
    "repeats": "repeats",
    "out": "out_dir",
    "threads": "threads",
    "tol": "tol",
    "power_iters": "power_iters",
}


class ConfigError(ValueError):
    def __init__(self, problems: dict[str, str]):
        self.problems = dict(problems)
        lines = "; ".join(f"{k}: {v}" for k, v in sorted(self.problems.items()))
        super().__init__(f"invalid configuration ({lines})")

    @property
    def keys(self) -> list[str]:
        return sorted(self.problems)


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def describe(self) -> str:
        if not self.params:
            return self.kind
        return self.kind + ":" + ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))


_DATASET_KEYS = {
    "synthetic": {"n", "d", "kappa", "min", "max", "noise", "seed"},
    "idx": {"images", "labels", "test_images", "test_labels", "n",
            "labels_per_worker", "min", "max", "seed"},
    "libsvm": {"path", "dim", "n", "labels_per_worker", "min", "max", "seed", "task"},
    "shards": {"path"},
}


def parse_dataset(text: str) -> DatasetSpec:
    """``kind[:key=value,...]`` with kind one of synthetic, idx, libsvm, shards."""
    kind, _, rest = text.strip().partition(":")
    if kind not in _DATASET_KEYS:
        raise ValueError(f"unknown dataset kind {kind!r}")
    params = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"dataset parameter {item!r} is not key=value")
        if key not in _DATASET_KEYS[kind]:
            raise ValueError(f"unknown {kind} parameter {key!r}")
        params[key] = value
    required = {"idx": ("images", "labels"), "libsvm": ("path", "dim", "n"),
                "shards": ("path",)}.get(kind, ())
    missing = [k for k in required if k not in params]
    if missing:
        raise ValueError(f"{kind} dataset needs {', '.join(missing)}")
    return DatasetSpec(kind, params)


def dataset_workers(spec: DatasetSpec) -> int:
    """Worker count implied by a dataset descriptor, without loading data."""
    if spec.kind == "shards":
        raw = Path(spec.params["path"]).read_bytes()[:14]
        return struct.unpack_from("<HI", raw, 4)[1]
    return int(spec.params.get("n", 32))


def parse_stepsize(text: str) -> tuple[str, float | None]:
    """``adaptive`` | ``adaptive-smooth`` | ``fixed:<value>``."""
    if text in ("adaptive", "adaptive-smooth"):
        return text, None
    kind, _, value = text.partition(":")
    if kind == "fixed" and value:
        v = float(value)
        if not v > 0:
            raise ValueError("fixed step size must be > 0")
        return "fixed", v
    raise ValueError(f"unknown step size rule {text!r}")


@dataclass(frozen=True)
class RunConfig:
    algo: str = "done"
    dataset: str = "synthetic"
    alpha: float | None = None  # None: min{1/R, 1/lambda_max_hat}
    rounds_local: int = 40
    rounds_global: int = 100
    batch: int | None = None
    subset: int | None = None  # None: every worker
    lam: float = 0.01
    stepsize: str = "adaptive"
    seed: int = 0
    repeats: int = 1
    out_dir: str = "runs"
    threads: int = 1
    tol: float | None = None
    power_iters: int = 30

    @property
    def dataset_spec(self) -> DatasetSpec:
        return parse_dataset(self.dataset)

    @property
    def stepsize_rule(self) -> tuple[str, float | None]:
        return parse_stepsize(self.stepsize)

    def validate(self) -> "RunConfig":
        problems = {}
        if self.algo not in ALGOS:
            problems["algo"] = f"must be one of {', '.join(ALGOS)}"
        if self.alpha is not None and not self.alpha > 0:
            problems["alpha"] = "must be > 0"
        if self.rounds_local < 1:
            problems["R"] = "must be >= 1"
        if self.rounds_global < 0:
            problems["T"] = "must be >= 0"
        if self.batch is not None and self.batch < 1:
            problems["batch"] = "must be >= 1"
        if not self.lam >= 0:
            problems["lambda"] = "must be >= 0"
        if self.repeats < 1:
            problems["repeats"] = "must be >= 1"
        if self.threads < 1:
            problems["threads"] = "must be >= 1"
        if self.tol is not None and not self.tol > 0:
            problems["tol"] = "must be > 0"
        if self.power_iters < 1:
            problems["power_iters"] = "must be >= 1"
        try:
            self.stepsize_rule
        except ValueError as exc:
            problems["stepsize"] = str(exc)
        n = None
        try:
            n = dataset_workers(self.dataset_spec)
        except (ValueError, OSError, struct.error) as exc:
            problems["dataset"] = str(exc)
        if self.subset is not None:
            if self.subset < 1:
                problems["subset"] = "must be >= 1"
            elif n is not None and self.subset > n:
                problems["subset"] = f"must be <= n = {n}"
        if problems:
            raise ConfigError(problems)
        return self

    def to_items(self) -> dict[str, str]:
        out = {}
        for key, attr in KEYS.items():
            value = getattr(self, attr)
            out[key] = "" if value is None else str(value)
        return out


_INT_KEYS = {"R", "T", "batch", "subset", "seed", "repeats", "threads", "power_iters"}
_FLOAT_KEYS = {"alpha", "lambda", "tol"}
_OPTIONAL = {"alpha", "batch", "subset", "tol"}


def _read_file(path) -> dict[str, str]:
    items = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError({f"line {lineno}": "expected key = value"})
        items[key.strip()] = value.strip()
    return items


def parse_config(path=None, flags: dict | None = None) -> RunConfig:
    """Merge a config file with flag overrides and validate the result.

    ``flags`` maps config keys to values (strings or already-typed); entries
    whose value is None are treated as absent.
    """
    items: dict = _read_file(path) if path is not None else {}
    items.update({k: v for k, v in (flags or {}).items() if v is not None})
    problems = {}
    values = {}
    for key, raw in items.items():
        if key not in KEYS:
            problems[key] = "unknown key"
            continue
        try:
            if isinstance(raw, str) and raw.strip().lower() in ("", "none", "auto") \
                    and key in _OPTIONAL:
                value = None
            elif key in _INT_KEYS:
                value = int(raw)
            elif key in _FLOAT_KEYS:
                value = float(raw)
            else:
                value = str(raw)
        except (TypeError, ValueError):
            problems[key] = f"cannot parse {raw!r}"
            continue
        values[KEYS[key]] = value
    config = replace(RunConfig(), **values)
    try:
        config.validate()
    except ConfigError as exc:
        problems.update(exc.problems)
    if problems:
        raise ConfigError(problems)
    return config

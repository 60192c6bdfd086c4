"""Experiment orchestration: dataset resolution, repeats, CSV and summary output."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_dataset
from .datasets import (
    FederatedDataset,
    SyntheticSpec,
    generate_synthetic,
    iid_partition,
    load_idx,
    load_libsvm,
    load_shards,
    partition_by_label,
)
from .federation import run
from .glm import Samples
from .trace import TraceRecord, format_csv

log = logging.getLogger(__name__)

__all__ = ["resolve_dataset", "rounds_to_target", "run_experiment", "run_id_for", "summarize"]


def resolve_dataset(descriptor: str) -> FederatedDataset:
    spec = parse_dataset(descriptor)
    p = spec.params
    if spec.kind == "synthetic":
        synth = SyntheticSpec(
            n=int(p.get("n", 32)),
            d=int(p.get("d", 40)),
            kappa=float(p.get("kappa", 10.0)),
            size_range=(int(p.get("min", 540)), int(p.get("max", 5630))),
            noise_std=float(p.get("noise", 1.0)),
            seed=int(p.get("seed", 0)),
        )
        return generate_synthetic(synth)[0]
    if spec.kind == "shards":
        return load_shards(p["path"])
    if spec.kind == "idx":
        samples = load_idx(p["images"], p["labels"])
        if "test_images" in p:
            samples = Samples.concat([samples, load_idx(p["test_images"], p["test_labels"])])
        return partition_by_label(
            samples, int(p.get("n", 32)), int(p.get("labels_per_worker", 3)),
            (int(p.get("min", 219)), int(p.get("max", 3536))), seed=int(p.get("seed", 0)),
            num_classes=10,
        )
    samples = load_libsvm(p["path"], int(p["dim"]))
    task = p.get("task", "multiclass")
    n, seed = int(p["n"]), int(p.get("seed", 0))
    if task == "multiclass" and "labels_per_worker" in p:
        sizes = (int(p.get("min", 1)), int(p.get("max", len(samples) // n)))
        return partition_by_label(samples, n, int(p["labels_per_worker"]), sizes, seed=seed)
    classes = int(samples.labels.max()) + 1 if task == "multiclass" else 0
    return iid_partition(samples, n, seed=seed, task=task, num_classes=classes)


def run_id_for(config: RunConfig) -> str:
    items = config.to_items()
    items.pop("out", None)
    items.pop("threads", None)
    digest = hashlib.sha1(json.dumps(items, sort_keys=True).encode()).hexdigest()[:10]
    return f"{config.algo}-{digest}"


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _final_ok(records: list[TraceRecord]) -> TraceRecord | None:
    ok = [r for r in records if r.status == "ok"]
    return ok[-1] if ok else None


def summarize(blocks: list[list[TraceRecord]]) -> dict:
    """Mean and (population) std of final metrics over repeats."""
    summary = {"repeats": len(blocks),
               "diverged": sum(any(r.status == "diverged" for r in b) for b in blocks)}
    finals = [_final_ok(b) for b in blocks]
    for name in ("val_accuracy", "train_loss", "grad_norm", "val_loss"):
        values = [getattr(f, name) for f in finals if f is not None and getattr(f, name) is not None]
        if values:
            summary[name] = {"mean": float(np.mean(values)), "std": float(np.std(values)),
                             "values": [float(v) for v in values]}
    return summary


def run_experiment(config: RunConfig, data: FederatedDataset | None = None) -> Path:
    """Run every repeat and write ``<out>/<run_id>.csv`` plus a summary JSON."""
    data = resolve_dataset(config.dataset) if data is None else data
    run_id = run_id_for(config)

    if config.threads > 1 and config.repeats > 1:
        # repeats in parallel, workers sequential within each
        serial = replace(config, threads=1)
        with ThreadPoolExecutor(max_workers=min(config.threads, config.repeats)) as pool:
            blocks = list(pool.map(lambda r: run(serial, data, repeat=r, run_id=run_id),
                                   range(config.repeats)))
    else:
        blocks = [run(config, data, repeat=r, run_id=run_id) for r in range(config.repeats)]
    out = Path(config.out_dir)
    csv_path = out / f"{run_id}.csv"
    _write_atomic(csv_path, format_csv([r for b in blocks for r in b]))
    summary = {"run_id": run_id, "config": config.to_items(),
               "provenance": data.provenance, **summarize(blocks)}
    _write_atomic(out / f"{run_id}.summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("wrote %s", csv_path)
    return csv_path


def rounds_to_target(trace: list[TraceRecord], target_accuracy: float) -> int | None:
    """First round whose validation accuracy reaches the target."""
    if any(r.val_accuracy is None and r.status == "ok" for r in trace):
        raise ValueError("trace has no accuracy column (regression run?)")
    for r in trace:
        if r.status == "ok" and r.val_accuracy >= target_accuracy:
            return r.round
    return None

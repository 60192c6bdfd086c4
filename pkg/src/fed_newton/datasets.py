"""Federated datasets: synthetic generation, file loaders, partitioning.

The shard file format and the IDX/LIBSVM readers are described in
``docs/formats.md``.
"""

from __future__ import annotations

import gzip
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .glm import ContractError, Family, Samples

__all__ = [
    "DataFormatError",
    "FederatedDataset",
    "Shard",
    "SyntheticSpec",
    "covariance_diagonal",
    "generate_synthetic",
    "iid_partition",
    "load_idx",
    "load_libsvm",
    "load_shards",
    "partition_by_label",
    "save_shards",
    "split_train_validation",
]

TASKS = ("regression", "binary", "multiclass")
TRAIN_RATIO = 0.75


class DataFormatError(ValueError):
    """Malformed input file. ``offset`` is a byte offset or a 1-based line number."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        super().__init__(message)


@dataclass(frozen=True)
class Shard:
    train: Samples
    validation: Samples


@dataclass
class FederatedDataset:
    shards: list[Shard]
    dim: int
    task: str
    num_classes: int = 0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ContractError(f"unknown task {self.task!r}")
        if not self.shards:
            raise ContractError("a federated dataset needs at least one shard")
        for i, shard in enumerate(self.shards):
            for part in (shard.train, shard.validation):
                if len(part) and part.dim != self.dim:
                    raise ContractError(f"shard {i} has d={part.dim}, dataset d={self.dim}")
                _check_labels(part.labels, self.task, self.num_classes, i)

    @property
    def n(self) -> int:
        return len(self.shards)

    @property
    def family(self) -> Family:
        return {
            "regression": Family.RIDGE,
            "binary": Family.LOGISTIC,
            "multiclass": Family.MULTINOMIAL,
        }[self.task]


def _check_labels(labels: np.ndarray, task: str, num_classes: int, shard: int) -> None:
    if task == "binary" and not np.all(np.isin(labels, (-1.0, 1.0))):
        raise ContractError(f"shard {shard}: binary labels must be -1/+1")
    if task == "multiclass":
        ok = (labels >= 0) & (labels < num_classes) & (labels == np.floor(labels))
        if not np.all(ok):
            raise ContractError(f"shard {shard}: class labels must lie in [0, {num_classes})")


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 32
    d: int = 40
    kappa: float = 10.0
    size_range: tuple[int, int] = (540, 5630)
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ContractError(f"n must be >= 1, got {self.n}")
        if self.kappa < 1:
            raise ContractError(f"kappa must be >= 1, got {self.kappa}")
        lo, hi = self.size_range
        if not 2 <= lo <= hi:
            raise ContractError(f"invalid size_range {self.size_range}")
        if self.d < 2:
            raise ContractError(
                f"d must be >= 2 (tau = ln(kappa)/ln(d) is undefined for d={self.d})"
            )


def covariance_diagonal(d: int, kappa: float) -> np.ndarray:
    """Diagonal i^{-tau}, tau = ln(kappa)/ln(d), so the extreme ratio is kappa."""
    if d < 2:
        raise ContractError("tau is undefined for d < 2")
    tau = math.log(kappa) / math.log(d)
    return np.arange(1, d + 1, dtype=np.float64) ** (-tau)


def generate_synthetic(spec: SyntheticSpec) -> tuple[FederatedDataset, np.ndarray]:
    """Linear-regression shards y = <w*, a> + c with condition number kappa.

    Each sample draws its own scale sigma_j ~ U(1, 30) and features
    a_j ~ N(0, sigma_j * Sigma). Worker sizes are uniform in ``size_range``.
    Returns the dataset and the generating w*.
    """
    rng = np.random.default_rng(spec.seed)
    scale = np.sqrt(covariance_diagonal(spec.d, spec.kappa))
    w_star = rng.standard_normal(spec.d)
    lo, hi = spec.size_range
    sizes = rng.integers(lo, hi + 1, size=spec.n)
    shards = []
    for i, size in enumerate(sizes):
        sigma = rng.uniform(1.0, 30.0, size=size)
        X = rng.standard_normal((size, spec.d)) * scale * np.sqrt(sigma)[:, None]
        y = X @ w_star + rng.normal(0.0, spec.noise_std, size=size)
        train, val = split_train_validation(Samples(X, y), TRAIN_RATIO, seed=spec.seed * 100003 + i)
        shards.append(Shard(train, val))
    provenance = {
        "source": "synthetic",
        "n": spec.n,
        "d": spec.d,
        "kappa": spec.kappa,
        "size_range": [int(lo), int(hi)],
        "noise_std": spec.noise_std,
        "seed": spec.seed,
    }
    return FederatedDataset(shards, spec.d, "regression", 0, provenance), w_star


def split_train_validation(shard: Samples, ratio: float = TRAIN_RATIO,
                           seed: int = 0) -> tuple[Samples, Samples]:
    """Seeded shuffle, then cut at floor(ratio * D)."""
    if not 0 < ratio < 1:
        raise ContractError(f"ratio must be in (0, 1), got {ratio}")
    if len(shard) < 2:
        raise ContractError(f"cannot split a shard of {len(shard)} samples")
    order = np.random.default_rng(seed).permutation(len(shard))
    cut = math.floor(ratio * len(shard))
    return shard.take(order[:cut]), shard.take(order[cut:])


def partition_by_label(samples: Samples, n: int, labels_per_worker: int,
                       size_range: tuple[int, int], seed: int = 0,
                       num_classes: int | None = None,
                       ratio: float = TRAIN_RATIO) -> FederatedDataset:
    """Label-skew split: worker i holds labels (i*k + j) mod C for j < k.

    Worker sizes are uniform in ``size_range`` and divided as evenly as
    possible among the worker's labels. Samples are drawn without replacement;
    anything not requested stays unused.
    """
    labels = samples.labels.astype(np.intp)
    C = int(num_classes if num_classes is not None else labels.max() + 1)
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    if not 1 <= labels_per_worker <= C:
        raise ContractError(f"labels_per_worker must be in [1, {C}], got {labels_per_worker}")
    lo, hi = size_range
    if not 1 <= lo <= hi:
        raise ContractError(f"invalid size_range {size_range}")

    rng = np.random.default_rng(seed)
    sizes = rng.integers(lo, hi + 1, size=n)
    label_sets = [[(i * labels_per_worker + j) % C for j in range(labels_per_worker)]
                  for i in range(n)]
    demand = [[size // labels_per_worker + (j < size % labels_per_worker)
               for j in range(labels_per_worker)] for size in sizes]

    pools = {c: rng.permutation(np.flatnonzero(labels == c)) for c in range(C)}
    need = {c: 0 for c in range(C)}
    for labs, counts in zip(label_sets, demand):
        for c, k in zip(labs, counts):
            need[c] += k
    deficit = {c: need[c] - len(pools[c]) for c in range(C) if need[c] > len(pools[c])}
    if deficit:
        detail = ", ".join(f"label {c}: short by {k}" for c, k in sorted(deficit.items()))
        raise ContractError(f"infeasible partition ({detail})")

    cursor = {c: 0 for c in range(C)}
    shards = []
    for i, (labs, counts) in enumerate(zip(label_sets, demand)):
        picks = []
        for c, k in zip(labs, counts):
            picks.append(pools[c][cursor[c]:cursor[c] + k])
            cursor[c] += k
        index = np.concatenate(picks)
        train, val = split_train_validation(samples.take(index), ratio, seed=seed * 100003 + i)
        shards.append(Shard(train, val))
    provenance = {
        "source": "label_partition",
        "n": n,
        "labels_per_worker": labels_per_worker,
        "size_range": [int(lo), int(hi)],
        "seed": seed,
        "label_sets": label_sets,
    }
    return FederatedDataset(shards, samples.dim, "multiclass", C, provenance)


def iid_partition(samples: Samples, n: int, seed: int = 0, task: str = "multiclass",
                  num_classes: int = 0, ratio: float = TRAIN_RATIO) -> FederatedDataset:
    """Shuffle and cut into ``n`` near-equal shards."""
    order = np.random.default_rng(seed).permutation(len(samples))
    shards = []
    for i, part in enumerate(np.array_split(order, n)):
        train, val = split_train_validation(samples.take(part), ratio, seed=seed * 100003 + i)
        shards.append(Shard(train, val))
    provenance = {"source": "iid_partition", "n": n, "seed": seed}
    return FederatedDataset(shards, samples.dim, task, num_classes, provenance)


# --- IDX -------------------------------------------------------------------

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_maybe_gzip(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _idx_header(raw: bytes, magic: int, ndims: int, what: str) -> tuple[int, ...]:
    size = 4 + 4 * ndims
    if len(raw) < size:
        raise DataFormatError(f"{what}: truncated header ({len(raw)} bytes)", len(raw))
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise DataFormatError(f"{what}: bad magic 0x{found:08x}, expected 0x{magic:08x}", 0)
    return struct.unpack(f">{ndims}I", raw[4:size])


def load_idx(images_path, labels_path) -> Samples:
    """Read an IDX image/label pair (optionally gzipped).

    Pixels are scaled to [0, 1] and flattened row-major.
    """
    images = _read_maybe_gzip(images_path)
    labels = _read_maybe_gzip(labels_path)
    count, rows, cols = _idx_header(images, IDX_IMAGES_MAGIC, 3, "images")
    (n_labels,) = _idx_header(labels, IDX_LABELS_MAGIC, 1, "labels")
    if n_labels != count:
        raise DataFormatError(f"labels file has {n_labels} items, images file has {count}", 4)
    pixels = count * rows * cols
    if len(images) < 16 + pixels:
        raise DataFormatError(
            f"images: truncated payload, expected {pixels} bytes after header", len(images)
        )
    if len(labels) < 8 + count:
        raise DataFormatError(
            f"labels: truncated payload, expected {count} bytes after header", len(labels)
        )
    X = np.frombuffer(images, dtype=np.uint8, count=pixels, offset=16)
    X = X.reshape(count, rows * cols).astype(np.float64) / 255.0
    y = np.frombuffer(labels, dtype=np.uint8, count=count, offset=8).astype(np.float64)
    return Samples(X, y)


# --- LIBSVM ----------------------------------------------------------------

def load_libsvm(path, dim: int) -> Samples:
    """Parse ``label idx:val ...`` lines (1-based indices) into dense rows."""
    rows, labels = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            head, *pairs = line.split()
            row = np.zeros(dim)
            try:
                labels.append(float(head))
                for pair in pairs:
                    idx, val = pair.split(":")
                    j = int(idx)
                    if not 1 <= j <= dim:
                        raise DataFormatError(f"line {lineno}: index {j} outside [1, {dim}]", lineno)
                    row[j - 1] = float(val)
            except DataFormatError:
                raise
            except ValueError as exc:
                raise DataFormatError(f"line {lineno}: malformed entry ({exc})", lineno) from None
            rows.append(row)
    if not rows:
        return Samples.empty(dim)
    return Samples(np.vstack(rows), np.array(labels))


# --- shard file ------------------------------------------------------------

SHARD_MAGIC = b"FNSH"
SHARD_VERSION = 1


def save_shards(dataset: FederatedDataset, path) -> None:
    """Write the dataset atomically in the binary shard format."""
    blob = json.dumps(dataset.provenance, sort_keys=True).encode()
    parts = [
        SHARD_MAGIC,
        struct.pack("<HIIBI", SHARD_VERSION, dataset.n, dataset.dim,
                    TASKS.index(dataset.task), dataset.num_classes),
        struct.pack("<I", len(blob)),
        blob,
    ]
    for shard in dataset.shards:
        parts.append(struct.pack("<II", len(shard.train), len(shard.validation)))
        for block in (shard.train, shard.validation):
            parts.append(np.ascontiguousarray(block.features, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(block.labels, dtype="<f8").tobytes())
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    with os.fdopen(fd, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def load_shards(path) -> FederatedDataset:
    raw = Path(path).read_bytes()
    if raw[:4] != SHARD_MAGIC:
        raise DataFormatError("not a shard file (bad magic)", 0)
    pos = 4
    try:
        version, n, dim, task, classes = struct.unpack_from("<HIIBI", raw, pos)
        pos += struct.calcsize("<HIIBI")
        if version != SHARD_VERSION:
            raise DataFormatError(f"unsupported shard file version {version}", 4)
        (blob_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        provenance = json.loads(raw[pos:pos + blob_len])
        pos += blob_len
        shards = []
        for _ in range(n):
            counts = struct.unpack_from("<II", raw, pos)
            pos += 8
            blocks = []
            for count in counts:
                feats = np.frombuffer(raw, dtype="<f8", count=count * dim, offset=pos)
                pos += 8 * count * dim
                labs = np.frombuffer(raw, dtype="<f8", count=count, offset=pos)
                pos += 8 * count
                blocks.append(Samples(feats.reshape(count, dim), labs))
            shards.append(Shard(*blocks))
    except (struct.error, ValueError) as exc:
        if isinstance(exc, DataFormatError):
            raise
        raise DataFormatError(f"truncated shard file near byte {pos}", pos) from None
    return FederatedDataset(shards, dim, TASKS[task], classes, provenance)

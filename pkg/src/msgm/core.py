"""Shared value types, seeded random streams and dataset plumbing.

Sources are 1-indexed at every public interface (labels ``1..K``); arrays
indexed by source are stored 0-indexed internally.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# stream_path[0] identifies the consumer so that sweeps in different modules
# never share draws
STREAM_GAUSSIAN = 1
STREAM_ARM = 2
STREAM_BRACKETING = 3
STREAM_SELFTEST = 4


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream keyed by ``(master_seed, stream_path)``.

    The pair is hashed by :class:`numpy.random.SeedSequence` into the key of a
    counter-based Philox generator, so any cell of a sweep can be replayed on
    its own without running the cells before it.
    """

    master_seed: int
    stream_path: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")
        object.__setattr__(self, "master_seed", int(self.master_seed))
        object.__setattr__(self, "stream_path", tuple(int(p) for p in self.stream_path))

    def child(self, *path: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_path + tuple(path))

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(self.master_seed, spawn_key=self.stream_path)
        return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class SourceWeights:
    """Known marginal distribution of the source label."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("source weights must be a nonempty vector")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError(f"every source weight must be positive, got {w.tolist()}")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"source weights must sum to 1 (sum={w.sum()!r})")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, K: int) -> "SourceWeights":
        if K < 1:
            raise ValueError("K must be at least 1")
        return cls(np.full(K, 1.0 / K))

    @property
    def K(self) -> int:
        return self.weights.size


def check_label(label: int, K: int) -> int:
    label = int(label)
    if not 1 <= label <= K:
        raise ValueError(f"source label {label} outside [1, {K}]")
    return label


def as_weight_vector(w, K: int | None = None) -> np.ndarray:
    """Weights for averaging: nonnegative and summing to one; zeros allowed."""
    if isinstance(w, SourceWeights):
        arr = w.weights
    else:
        arr = np.asarray(w, dtype=np.float64)
        if arr.ndim != 1 or np.any(arr < 0) or abs(arr.sum() - 1.0) > 1e-12:
            raise ValueError(f"invalid averaging weights {arr.tolist()}")
    if K is not None and arr.size != K:
        raise ValueError(f"expected {K} weights, got {arr.size}")
    return arr


@dataclass(frozen=True)
class LabeledDataset:
    """Observations ``x`` (one row per sample) with 1-indexed labels ``y``."""

    x: np.ndarray
    y: np.ndarray
    K: int
    _counts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        x = np.asarray(self.x)
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"{x.shape[0]} observations but {y.shape[0]} labels")
        if y.size and (y.min() < 1 or y.max() > self.K):
            bad = y[(y < 1) | (y > self.K)][0]
            raise ValueError(f"source label {bad} outside [1, {self.K}]")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "_counts", np.bincount(y - 1, minlength=self.K) if y.size else np.zeros(self.K, np.int64))

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[object, int]], K: int) -> "LabeledDataset":
        obs = [p[0] for p in pairs]
        labels = [p[1] for p in pairs]
        x = np.array(obs) if obs else np.empty((0,))
        return cls(x, np.array(labels, dtype=np.int64), K)

    def __len__(self) -> int:
        return self.y.size

    @property
    def counts(self) -> np.ndarray:
        """Per-source sample counts ``n_k`` (index k-1)."""
        return self._counts

    def pairs(self) -> list[tuple[object, int]]:
        return [(self.x[i], int(self.y[i])) for i in range(len(self))]


def sample_labels(weights: SourceWeights, n: int, rng: RngStream | np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. 1-indexed labels from ``weights``."""
    if not isinstance(weights, SourceWeights):
        weights = SourceWeights(weights)
    if n < 1:
        raise ValueError("n must be at least 1")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    if weights.K == 1:
        return np.ones(n, dtype=np.int64)
    return gen.choice(weights.K, size=n, p=weights.weights).astype(np.int64) + 1


def split_by_source(ds: LabeledDataset) -> dict[int, np.ndarray]:
    """Group observations by label, keeping within-source order."""
    return {k: ds.x[ds.y == k] for k in range(1, ds.K + 1)}


def mean_and_std(values: Iterable[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (n-1 divisor; 0 for one value)."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("mean_and_std of an empty list")
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1))

"""Sample sets and their summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import errors


@dataclass
class SampleSet:
    values: list[int]
    config_label: str
    workload_label: str
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class StatsSummary:
    mean: float
    stdev: float
    cv: float
    p99: int
    min: int
    max: int
    n: int
    histogram: tuple[tuple[int, int], ...]
    cdf: tuple[tuple[int, float], ...]


def nearest_rank(sorted_values, q: float) -> int:
    """Value at index ``ceil(q*n) - 1`` of an ascending sequence."""
    n = len(sorted_values)
    idx = max(0, math.ceil(q * n) - 1)
    return sorted_values[idx]


def log2_histogram(values) -> tuple[tuple[int, int], ...]:
    """Counts per power-of-two bucket; key ``b`` holds ``[2**b, 2**(b+1))``.

    Zero gets bucket -1.
    """
    arr = np.asarray(values, dtype=np.int64)
    buckets = np.full(arr.shape, -1, dtype=np.int64)
    pos = arr > 0
    buckets[pos] = np.floor(np.log2(arr[pos])).astype(np.int64)
    keys, counts = np.unique(buckets, return_counts=True)
    return tuple((int(k), int(c)) for k, c in zip(keys, counts))


def empirical_cdf(sorted_values) -> tuple[tuple[int, float], ...]:
    n = len(sorted_values)
    out = []
    for i, v in enumerate(sorted_values, 1):
        if out and out[-1][0] == v:
            out[-1] = (v, i / n)
        else:
            out.append((v, i / n))
    return tuple((int(v), p) for v, p in out)


def summarize(samples: SampleSet | list[int], discard_worst: int = 0) -> StatsSummary:
    """Drop the ``discard_worst`` largest values, then describe the rest.

    ``stdev`` is the population standard deviation.
    """
    values = samples.values if isinstance(samples, SampleSet) else list(samples)
    if discard_worst < 0:
        raise ValueError("discard_worst must be non-negative")
    if len(values) <= discard_worst:
        raise errors.EmptyAfterDiscard(
            f"{len(values)} samples, {discard_worst} discarded")
    kept = sorted(values)[:len(values) - discard_worst]
    arr = np.asarray(kept, dtype=np.float64)
    mean = float(arr.mean())
    stdev = float(arr.std())
    cv = stdev / mean if mean else 0.0
    return StatsSummary(
        mean=mean, stdev=stdev, cv=cv, p99=int(nearest_rank(kept, 0.99)),
        min=int(kept[0]), max=int(kept[-1]), n=len(kept),
        histogram=log2_histogram(kept), cdf=empirical_cdf(kept),
    )


def improvement(trap_mean: float, other_mean: float) -> float:
    """Fractional saving of ``other`` relative to ``trap``."""
    if trap_mean == 0:
        raise ZeroDivisionError("baseline mean is zero")
    return (trap_mean - other_mean) / trap_mean

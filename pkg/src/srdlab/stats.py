"""Mergeable sample statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo mean with standard error ``std / sqrt(n)``."""

    mean: float
    stderr: float
    n_samples: int

    @classmethod
    def from_samples(cls, values) -> Estimate:
        return RunningStats.from_values(values).estimate()

    @classmethod
    def exact(cls, value: float, n_samples: int = 1) -> Estimate:
        return cls(float(value), 0.0, n_samples)

    def as_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n_samples": self.n_samples}


@dataclass
class RunningStats:
    """Count / mean / M2 accumulator with Chan's pairwise merge.

    Block statistics are computed with ``math.fsum``; merging blocks in a fixed
    order makes the result independent of which worker produced which block.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def from_values(cls, values) -> RunningStats:
        v = np.asarray(values, dtype=float).ravel()
        n = v.size
        if n == 0:
            return cls()
        mean = math.fsum(v) / n
        m2 = math.fsum((v - mean) ** 2)
        return cls(n, mean, m2)

    def merge(self, other: RunningStats) -> RunningStats:
        if other.count == 0:
            return RunningStats(self.count, self.mean, self.m2)
        if self.count == 0:
            return RunningStats(other.count, other.mean, other.m2)
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return RunningStats(n, mean, m2)

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    def estimate(self) -> Estimate:
        if self.count < 2:
            raise ValueError("need at least two samples for a standard error")
        return Estimate(self.mean, math.sqrt(self.variance / self.count), self.count)


def merge_all(parts) -> RunningStats:
    acc = RunningStats()
    for part in parts:
        acc = acc.merge(part)
    return acc


def batch_means(series: np.ndarray, n_batches: int) -> Estimate:
    """Time average of a correlated series with a batch-means standard error."""
    x = np.asarray(series, dtype=float)
    if n_batches < 2:
        raise ValueError("batch means needs at least two batches")
    usable = (x.size // n_batches) * n_batches
    if usable == 0:
        raise ValueError(f"series of length {x.size} too short for {n_batches} batches")
    means = x[x.size - usable:].reshape(n_batches, -1).mean(axis=1)
    stderr = float(np.std(means, ddof=1) / math.sqrt(n_batches))
    return Estimate(float(x.mean()), stderr, int(x.size))


def within_sigma(a: Estimate, b: Estimate | float, k: float) -> bool:
    if isinstance(b, Estimate):
        diff = abs(a.mean - b.mean)
        sigma = math.hypot(a.stderr, b.stderr)
    else:
        diff = abs(a.mean - b)
        sigma = a.stderr
    return diff <= k * sigma

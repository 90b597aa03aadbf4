"""Behavioral-distance geometry on diagonal-Gaussian action distributions.

The system diversity of a team is the mean pairwise behavioral distance,
where the distance between two policies is the 2-Wasserstein distance
between their action distributions averaged over a shared observation set.
For diagonal Gaussians the 2-Wasserstein distance has the closed form

    W2(p, q) = sqrt(|mu_p - mu_q|^2 + sum_k (sigma_p[k] - sigma_q[k])^2)

since the covariance trace term reduces to the summed squared differences
of the per-dimension standard deviations.

Policy evaluators are callables mapping an observation matrix of shape
(N, d_obs) to a `DiagGaussian` with batched mean/std of shape (N, m).
All operations here are pure functions of their inputs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .constants import STD_FLOOR
from .errors import (
    DimensionMismatchError,
    EmptyObservationSetError,
    InvalidDistributionError,
)

PolicyEvaluator = Callable[[np.ndarray], "DiagGaussian"]


@dataclass(frozen=True)
class DiagGaussian:
    """Action distribution with independent dimensions.

    `mean` and `std` share a trailing action dimension of length m and may
    carry leading batch dimensions.  Standard deviations must be strictly
    positive.
    """

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        if mean.shape != std.shape:
            raise DimensionMismatchError(
                f"mean shape {mean.shape} != std shape {std.shape}"
            )
        if mean.ndim == 0:
            raise DimensionMismatchError("mean/std must have an action dimension")
        if not np.all(std > 0):
            raise InvalidDistributionError("standard deviations must be > 0")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]


class ObservationSet:
    """Ordered set of observation vectors with a shared dimensionality."""

    def __init__(self, observations: np.ndarray):
        obs = np.asarray(observations, dtype=np.float64)
        if obs.ndim == 1:
            obs = obs[:, None]
        if obs.ndim != 2 or obs.shape[0] < 1:
            raise EmptyObservationSetError(
                f"need a nonempty (N, d) observation matrix, got shape {obs.shape}"
            )
        self.observations = obs

    @property
    def count(self) -> int:
        return self.observations.shape[0]

    @property
    def dim(self) -> int:
        return self.observations.shape[1]

    def subsample(self, k: int, rng: np.random.Generator) -> "ObservationSet":
        """Uniform subsample without replacement (all rows if k >= count)."""
        if k >= self.count:
            return self
        idx = rng.choice(self.count, size=k, replace=False)
        return ObservationSet(self.observations[np.sort(idx)])


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric nonnegative pairwise-distance matrix with zero diagonal."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        object.__setattr__(self, "entries", e)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise DimensionMismatchError(f"entries must be square, got {e.shape}")

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def mean_pairwise(self) -> float:
        """Mean of the strictly-upper-triangular entries (order-exact sum)."""
        iu = np.triu_indices(self.n, k=1)
        vals = self.entries[iu]
        return math.fsum(vals) / len(vals)

    def per_agent_mean(self) -> np.ndarray:
        """Mean distance of each agent to the others (its coloring value)."""
        if self.n < 2:
            return np.zeros(self.n)
        return (self.entries.sum(axis=1)) / (self.n - 1)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["i", "j", "d"])
            for i in range(self.n):
                for j in range(i + 1, self.n):
                    w.writerow([i, j, repr(float(self.entries[i, j]))])


def wasserstein2(p: DiagGaussian, q: DiagGaussian):
    """Closed-form 2-Wasserstein distance between diagonal Gaussians.

    Supports batched inputs with matching shapes; returns a float for
    single distributions, else an array over the batch dimensions.
    """
    if p.mean.shape[-1] != q.mean.shape[-1]:
        raise DimensionMismatchError(
            f"action dims differ: {p.mean.shape[-1]} vs {q.mean.shape[-1]}"
        )
    if p.mean.shape != q.mean.shape:
        raise DimensionMismatchError(
            f"batch shapes differ: {p.mean.shape} vs {q.mean.shape}"
        )
    sp = np.maximum(p.std, STD_FLOOR)
    sq = np.maximum(q.std, STD_FLOOR)
    sq_dist = np.sum((p.mean - q.mean) ** 2, axis=-1) + np.sum((sp - sq) ** 2, axis=-1)
    out = np.sqrt(sq_dist)
    return float(out) if out.ndim == 0 else out


def behavioral_distance(
    pi_i: PolicyEvaluator, pi_j: PolicyEvaluator, obs: ObservationSet
) -> float:
    """Mean 2-Wasserstein distance between two policies over an observation set."""
    if obs.count < 1:
        raise EmptyObservationSetError("observation set is empty")
    di = pi_i(obs.observations)
    dj = pi_j(obs.observations)
    return float(np.mean(wasserstein2(di, dj)))


def snd(policies: Sequence[PolicyEvaluator], obs: ObservationSet) -> float:
    """System diversity: mean behavioral distance over unordered agent pairs."""
    n = len(policies)
    if n < 2:
        raise DimensionMismatchError(f"need at least 2 policies, got {n}")
    dists = [policies[i](obs.observations) for i in range(n)]
    pair_means = [
        float(np.mean(wasserstein2(dists[i], dists[j])))
        for i in range(n) for j in range(i + 1, n)
    ]
    # fsum keeps the aggregate exactly invariant to agent ordering
    return 2.0 * math.fsum(pair_means) / (n * (n - 1))


def pairwise_distance_matrix(
    policies: Sequence[PolicyEvaluator], obs: ObservationSet
) -> DistanceMatrix:
    """All pairwise behavioral distances; its upper-triangle mean equals `snd`."""
    n = len(policies)
    if n < 2:
        raise DimensionMismatchError(f"need at least 2 policies, got {n}")
    dists = [policies[i](obs.observations) for i in range(n)]
    entries = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.mean(wasserstein2(dists[i], dists[j])))
            entries[i, j] = d
            entries[j, i] = d
    return DistanceMatrix(entries)


def write_snd_series_csv(path, rows: Sequence[tuple]) -> None:
    """Write (evaluation step, snd) rows as CSV."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "snd"])
        for step, value in rows:
            w.writerow([step, repr(float(value))])

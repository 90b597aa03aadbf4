"""Shared test utilities: independent oracles kept out of the package."""

from __future__ import annotations

import numpy as np

from divmarl.diversity import DiagGaussian


def empirical_w2(p: DiagGaussian, q: DiagGaussian, n_samples: int = 100_000,
                 seed: int = 0) -> float:
    """Monte-Carlo 2-Wasserstein for diagonal Gaussians.

    Independent dimensions transport coordinatewise; the 1-D optimal
    coupling pairs sorted samples, so W2^2 is the summed per-dimension
    mean squared difference of sorted samples.
    """
    rng = np.random.default_rng(seed)
    total = 0.0
    for k in range(p.dim):
        a = np.sort(rng.normal(p.mean[k], p.std[k], n_samples))
        b = np.sort(rng.normal(q.mean[k], q.std[k], n_samples))
        total += np.mean((a - b) ** 2)
    return float(np.sqrt(total))


def constant_policy(mean, std):
    """Policy evaluator that ignores the observation."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)

    def evaluate(obs: np.ndarray) -> DiagGaussian:
        n = obs.shape[0]
        return DiagGaussian(np.tile(mean, (n, 1)), np.tile(std, (n, 1)))

    return evaluate


def equidistant_policies(k: int, d: float, std: float = 1.0):
    """k constant policies mutually at behavioral distance d.

    Means are scaled standard-basis vectors in R^k: |e_i - e_j| = sqrt(2),
    so the scale d/sqrt(2) gives pairwise mean distance exactly d; shared
    stds contribute nothing.
    """
    scale = d / np.sqrt(2.0)
    return [constant_policy(scale * np.eye(k)[i], np.full(k, std)) for i in range(k)]

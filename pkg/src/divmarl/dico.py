"""Diversity-constrained policy composition.

Each agent's policy is a shared mean head plus a per-agent deviation head
whose output is rescaled so that the measured system diversity hits a
target:

    mean_i(c) = shared_mean(c) + (target / current_diversity) * dev_i(c)

Deviations act on means only; the standard deviation is a single learned,
state-independent vector owned by the shared component.  With shared stds
the pairwise Wasserstein distance reduces to the mean distance, which
makes the rescaling guarantee exact: composed diversity equals the target
up to float rounding.

Constraint modes:
  equality      -- always rescale to the target (target 0 zeroes deviations)
  min_bound     -- rescale only when current diversity is below the target
  unconstrained -- scale fixed at 1 (free heterogeneous policies)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .constants import COLLAPSE_THRESHOLD
from .diversity import DiagGaussian, ObservationSet, snd
from .errors import DeviationCollapseError, DimensionMismatchError, EmptyObservationSetError
from .nets import Mlp, MlpSpec, init_linear_

MODES = ("equality", "min_bound", "unconstrained")

DEV_INIT_SCALE = 1e-3      # near-zero deviations at build time
DEV_REINIT_SCALE = 1e-2    # recovery re-initialization after collapse


@dataclass(frozen=True)
class ConstraintReport:
    measured_snd: float
    target: float
    mode: str
    satisfied: bool
    scale_factor: float


class RingBuffer:
    """Rolling window of recent context vectors for diversity estimation."""

    def __init__(self, capacity: int, dim: int):
        self.capacity = capacity
        self.data = np.zeros((capacity, dim))
        self.size = 0
        self.head = 0

    def append(self, rows: np.ndarray) -> None:
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, self.data.shape[1])
        if rows.shape[0] >= self.capacity:
            self.data[:] = rows[-self.capacity:]
            self.size = self.capacity
            self.head = 0
            return
        n = rows.shape[0]
        end = self.head + n
        if end <= self.capacity:
            self.data[self.head:end] = rows
        else:
            k = self.capacity - self.head
            self.data[self.head:] = rows[:k]
            self.data[:end - self.capacity] = rows[k:]
        self.head = end % self.capacity
        self.size = min(self.size + n, self.capacity)

    def contents(self) -> np.ndarray:
        if self.size < self.capacity:
            return self.data[:self.size].copy()
        return np.concatenate([self.data[self.head:], self.data[:self.head]])


class DicoPolicySet(nn.Module):
    """Shared homogeneous head + n per-agent deviation heads + target."""

    def __init__(self, ctx_dim: int, action_dim: int, n_agents: int,
                 snd_des: float, mode: str, gen: torch.Generator,
                 hidden: tuple = (64, 64), buffer_capacity: int = 4096):
        super().__init__()
        if mode not in MODES:
            raise DimensionMismatchError(f"mode must be one of {MODES}, got {mode!r}")
        if snd_des < 0:
            raise DimensionMismatchError("diversity target must be >= 0")
        if n_agents < 2 and mode != "unconstrained":
            raise DimensionMismatchError("constrained policy sets need >= 2 agents")
        self.ctx_dim = ctx_dim
        self.action_dim = action_dim
        self.n_agents = n_agents
        self.snd_des = float(snd_des)
        self.mode = mode
        self.grad_through_scale = True
        self.snd_hat: float | None = None
        self.buffer = RingBuffer(buffer_capacity, ctx_dim)
        self.shared = Mlp(MlpSpec(ctx_dim, hidden, action_dim), gen)
        self.log_std = nn.Parameter(torch.zeros(action_dim))
        self.deviations = nn.ModuleList(
            Mlp(MlpSpec(ctx_dim, hidden, action_dim), gen, out_scale=DEV_INIT_SCALE)
            for _ in range(n_agents)
        )

    # -- scale ------------------------------------------------------------

    def needs_snd_hat(self) -> bool:
        if self.mode == "unconstrained" or self.snd_des == 0.0:
            return False
        return True

    def scale_factor(self, snd_hat: float | None = None) -> float:
        if self.mode == "unconstrained":
            return 1.0
        if self.snd_des == 0.0:
            return 0.0 if self.mode == "equality" else 1.0
        if snd_hat is None:
            snd_hat = self.snd_hat
        if snd_hat is None:
            raise DimensionMismatchError(
                "current diversity unknown; call estimate_snd_hat first"
            )
        if self.mode == "min_bound" and snd_hat >= self.snd_des:
            return 1.0
        if snd_hat < COLLAPSE_THRESHOLD:
            raise DeviationCollapseError(
                f"deviation diversity {snd_hat:.3e} ~ 0 with target {self.snd_des}"
            )
        return self.snd_des / snd_hat

    # -- torch-side composition (training graph) ---------------------------

    def deviation_means(self, ctx: torch.Tensor) -> torch.Tensor:
        """All deviation heads on one context batch; (n, N, m)."""
        return torch.stack([dev(ctx) for dev in self.deviations])

    def snd_hat_torch(self, ctx: torch.Tensor) -> torch.Tensor:
        """In-graph diversity of the deviation heads over a context batch.

        With the shared std the pairwise Wasserstein term is the Euclidean
        mean distance, so the std contribution cancels exactly.
        """
        if self.n_agents < 2:
            raise DimensionMismatchError("diversity needs >= 2 agents")
        devs = self.deviation_means(ctx)
        total = 0.0
        for i in range(self.n_agents):
            for j in range(i + 1, self.n_agents):
                total = total + torch.linalg.vector_norm(
                    devs[i] - devs[j], dim=-1).mean()
        return 2.0 * total / (self.n_agents * (self.n_agents - 1))

    def scale_torch(self, ctx: torch.Tensor) -> torch.Tensor | float:
        """Scale factor as used inside the loss graph.

        With gradient-through-scale enabled the current diversity is
        recomputed on the minibatch inside the graph; otherwise the cached
        per-update estimate is used as a constant.
        """
        if not self.needs_snd_hat():
            return self.scale_factor()
        if not self.grad_through_scale:
            return self.scale_factor()
        snd_hat = self.snd_hat_torch(ctx)
        current = float(snd_hat.detach())
        if self.mode == "min_bound" and current >= self.snd_des:
            return 1.0
        if current < COLLAPSE_THRESHOLD:
            raise DeviationCollapseError(
                f"deviation diversity {current:.3e} ~ 0 with target {self.snd_des}"
            )
        return self.snd_des / snd_hat

    def compose_torch(self, agent_index: int, ctx: torch.Tensor,
                      scale) -> tuple[torch.Tensor, torch.Tensor]:
        """(mean, std) of the composed agent policy on a context batch."""
        mean = self.shared(ctx) + scale * self.deviations[agent_index](ctx)
        std = torch.exp(self.log_std).expand_as(mean)
        return mean, std


# -- functional API ---------------------------------------------------------


def _as_ctx_matrix(ps: DicoPolicySet, context: np.ndarray) -> tuple[np.ndarray, bool]:
    ctx = np.asarray(context, dtype=np.float64)
    single = ctx.ndim == 1
    if single:
        ctx = ctx[None, :]
    if ctx.shape[-1] != ps.ctx_dim:
        raise DimensionMismatchError(
            f"context dim {ctx.shape[-1]} != expected {ps.ctx_dim}"
        )
    return ctx, single


def compose(ps: DicoPolicySet, agent_index: int, context: np.ndarray) -> DiagGaussian:
    """Composed action distribution of one agent on one or more contexts."""
    ctx, single = _as_ctx_matrix(ps, context)
    scale = ps.scale_factor()
    dtype = next(ps.parameters()).dtype
    with torch.no_grad():
        t = torch.from_numpy(ctx).to(dtype)
        shared = ps.shared(t).double().numpy()
        dev = ps.deviations[agent_index](t).double().numpy()
        std = torch.exp(ps.log_std).double().numpy()
    mean = shared + scale * dev
    std = np.broadcast_to(std, mean.shape).copy()
    if single:
        return DiagGaussian(mean[0], std[0])
    return DiagGaussian(mean, std)


def deviation_evaluators(ps: DicoPolicySet):
    """Policy evaluators for the deviation components (deviation mean, shared std)."""
    dtype = next(ps.parameters()).dtype

    def make(i):
        def evaluate(obs: np.ndarray) -> DiagGaussian:
            with torch.no_grad():
                t = torch.from_numpy(np.asarray(obs, dtype=np.float64)).to(dtype)
                mean = ps.deviations[i](t).double().numpy()
                std = torch.exp(ps.log_std).double().numpy()
            return DiagGaussian(mean, np.broadcast_to(std, mean.shape).copy())
        return evaluate

    return [make(i) for i in range(ps.n_agents)]


def composed_evaluators(ps: DicoPolicySet):
    """Policy evaluators for the fully composed per-agent policies."""
    return [lambda obs, i=i: compose(ps, i, obs) for i in range(ps.n_agents)]


def estimate_snd_hat(ps: DicoPolicySet, obs) -> float:
    """Diversity of the deviation components over an observation set; cached."""
    if isinstance(obs, np.ndarray):
        if obs.size == 0:
            raise EmptyObservationSetError("estimation buffer is empty")
        obs = ObservationSet(obs)
    value = snd(deviation_evaluators(ps), obs)
    ps.snd_hat = value
    return value


def refresh_snd_hat(ps: DicoPolicySet) -> float:
    """Re-estimate the cached diversity on the rolling estimation buffer."""
    return estimate_snd_hat(ps, ps.buffer.contents())


def set_gradient_through_scale(ps: DicoPolicySet, enabled: bool) -> None:
    ps.grad_through_scale = bool(enabled)


def check_constraint(ps: DicoPolicySet, obs, tolerance: float = 1e-5) -> ConstraintReport:
    """Recompose all agents on `obs`, measure diversity, compare with target."""
    if isinstance(obs, np.ndarray):
        obs = ObservationSet(obs)
    if ps.needs_snd_hat():
        estimate_snd_hat(ps, obs)
    scale = ps.scale_factor()
    measured = snd(composed_evaluators(ps), obs) if ps.n_agents >= 2 else 0.0
    if ps.mode == "equality":
        satisfied = abs(measured - ps.snd_des) < tolerance
    elif ps.mode == "min_bound":
        satisfied = measured >= ps.snd_des - tolerance
    else:
        satisfied = True
    return ConstraintReport(measured, ps.snd_des, ps.mode, satisfied, scale)


def reinitialize_deviations(ps: DicoPolicySet, seed: int) -> None:
    """Collapse recovery: re-init deviation output layers with small weights."""
    gen = torch.Generator().manual_seed(seed)
    for dev in ps.deviations:
        init_linear_(dev.layers[-1], gen, scale=DEV_REINIT_SCALE)
    ps.snd_hat = None

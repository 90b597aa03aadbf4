"""Policy-model wiring: encoders, critics, and checkpoint (de)serialization.

A policy group couples one `DicoPolicySet` with optional shared encoder
(Deep-Sets over opponents followed by a graph-attention layer over
teammates, for the large soccer model) and a critic.  Critics come in two
shapes: independent per-agent value heads on own observations, or one
joint head over every agent's observation in a fixed canonical order.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import load_checkpoint, save_checkpoint
from .dico import DicoPolicySet
from .errors import CheckpointError
from .nets import DeepSetsEncoder, GatLayer, Mlp, MlpSpec

EDGE_DIM = 5  # relative position (2), distance (1), relative velocity (2)


class SetGnnEncoder(nn.Module):
    """Per-agent context from opponent sets and teammate communication."""

    def __init__(self, core_dim: int, opp_dim: int, n_agents: int,
                 gen: torch.Generator, hidden: tuple = (128, 128),
                 out_dim: int = 128):
        super().__init__()
        self.deepsets = DeepSetsEncoder(core_dim, opp_dim, hidden[-1], gen, hidden)
        self.gat = GatLayer(hidden[-1], EDGE_DIM, out_dim, gen, hidden)
        self.register_buffer("adj", torch.ones(n_agents, n_agents, dtype=torch.bool))
        self.n_agents = n_agents
        self.out_dim = out_dim

    def forward(self, core: torch.Tensor, opp: torch.Tensor,
                pos: torch.Tensor, vel: torch.Tensor) -> torch.Tensor:
        # core: (n, B, dc); opp: (n, B, K, do); pos/vel: (n, B, 2)
        h = torch.stack([self.deepsets(core[i], opp[i]) for i in range(self.n_agents)])
        h = h.movedim(0, 1)                       # (B, n, dh)
        p = pos.movedim(0, 1)
        v = vel.movedim(0, 1)
        p_ij = p.unsqueeze(2) - p.unsqueeze(1)    # (B, n, n, 2)
        v_ij = v.unsqueeze(2) - v.unsqueeze(1)
        dist = torch.linalg.vector_norm(p_ij, dim=-1, keepdim=True)
        edge = torch.cat([p_ij, dist, v_ij], dim=-1)
        z = self.gat(h, edge, self.adj)           # (B, n, out)
        return z.movedim(1, 0)                    # (n, B, out)


class IppoCritics(nn.Module):
    """Independent critics, one per agent, each on its own observation."""

    def __init__(self, obs_dim: int, n_agents: int, gen: torch.Generator,
                 hidden: tuple = (64, 64)):
        super().__init__()
        self.heads = nn.ModuleList(
            Mlp(MlpSpec(obs_dim, hidden, 1), gen) for _ in range(n_agents)
        )

    def values(self, obs: torch.Tensor) -> torch.Tensor:
        # obs: (n, N, do) -> (n, N)
        return torch.stack([h(obs[i]).squeeze(-1) for i, h in enumerate(self.heads)])


class MappoCritic(nn.Module):
    """Joint critic over all agents' observations in canonical agent order."""

    def __init__(self, obs_dim: int, n_agents: int, gen: torch.Generator,
                 hidden: tuple = (64, 64)):
        super().__init__()
        self.n_agents = n_agents
        self.head = Mlp(MlpSpec(obs_dim * n_agents, hidden, 1), gen)

    def values(self, obs: torch.Tensor) -> torch.Tensor:
        joint = torch.cat([obs[i] for i in range(self.n_agents)], dim=-1)
        v = self.head(joint).squeeze(-1)
        return v.unsqueeze(0).expand(self.n_agents, *v.shape)


def build_critic(algorithm: str, obs_dim: int, n_agents: int,
                 gen: torch.Generator, hidden: tuple = (64, 64)) -> nn.Module:
    if algorithm == "ippo":
        return IppoCritics(obs_dim, n_agents, gen, hidden)
    if algorithm == "mappo":
        return MappoCritic(obs_dim, n_agents, gen, hidden)
    raise CheckpointError(f"unknown algorithm {algorithm!r}")


class PolicyGroup(nn.Module):
    """Everything owned by one trained group of agents."""

    def __init__(self, name: str, policy: DicoPolicySet, critic: nn.Module,
                 encoder: SetGnnEncoder | None = None, meta: dict | None = None):
        super().__init__()
        self.name = name
        self.policy = policy
        self.critic = critic
        self.encoder = encoder
        self.meta = meta or {}

    def context_tensors(self, task, obs: np.ndarray, ctx_np: np.ndarray,
                        side: str = "blue"):
        """(ctx tensor, raw encoder inputs or None) for one step's obs.

        Without an encoder, the task-provided context is used directly;
        with one, the context is computed from the obs pieces (and the raw
        pieces are returned so updates can recompute it in-graph).
        """
        if self.encoder is None:
            return torch.as_tensor(ctx_np, dtype=torch.float32), None
        core, opp = task.split_obs(obs)
        pos, vel = task.graph_features(side)
        raw = tuple(torch.as_tensor(x, dtype=torch.float32)
                    for x in (core, opp, pos, vel))
        with torch.no_grad():
            ctx = self.encoder(*raw)
        return ctx, raw


def save_policy_group(path, group: PolicyGroup, meta: dict) -> None:
    meta = dict(meta)
    meta["kind"] = "policy_group"
    meta["group"] = group.name
    meta["mode"] = group.policy.mode
    meta["snd_des"] = group.policy.snd_des
    meta["n_agents"] = group.policy.n_agents
    meta["ctx_dim"] = group.policy.ctx_dim
    meta["action_dim"] = group.policy.action_dim
    meta["snd_hat"] = group.policy.snd_hat
    meta["has_encoder"] = group.encoder is not None
    segments = [(name, p.detach().cpu().numpy())
                for name, p in group.named_parameters()]
    save_checkpoint(path, meta, segments)


def load_policy_group(path) -> tuple[PolicyGroup, dict]:
    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "policy_group":
        raise CheckpointError(f"{path} is not a policy-group checkpoint")
    gen = torch.Generator().manual_seed(0)
    hidden = tuple(meta.get("hidden", (64, 64)))
    policy = DicoPolicySet(meta["ctx_dim"], meta["action_dim"], meta["n_agents"],
                           meta["snd_des"], meta["mode"], gen, hidden=hidden)
    critic = build_critic(meta["algorithm"], meta["obs_dim"], meta["n_agents"], gen)
    encoder = None
    if meta.get("has_encoder"):
        encoder = SetGnnEncoder(meta["core_dim"], meta["opp_dim"],
                                meta["n_agents"], gen,
                                hidden=tuple(meta.get("encoder_hidden", (128, 128))),
                                out_dim=meta["ctx_dim"])
    group = PolicyGroup(meta["group"], policy, critic, encoder, meta)
    state = {}
    for name, p in group.named_parameters():
        if name not in arrays:
            raise CheckpointError(f"checkpoint missing parameter segment {name!r}")
        state[name] = torch.as_tensor(arrays[name])
    group.load_state_dict(state, strict=False)
    policy.snd_hat = meta.get("snd_hat")
    return group, meta

"""Shared machinery for batched tasks.

A task owns a `WorldSpec`, a batched `WorldState`, and the
observation/reward/termination logic on top.  Worlds auto-reset when they
finish; the step outcome reports done flags, per-group rewards, completed
episode records, and fresh observations for the next step.

Agents are organized into named groups (most tasks have one; an
adversarial task has one per side).  Rewards are shaped (K, B): one row
per agent in the group, identical rows for shared-reward teams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import sim


@dataclass(frozen=True)
class GroupSpec:
    name: str
    agents: tuple
    obs_dim: int
    ctx_dim: int
    action_dim: int


@dataclass
class StepOutcome:
    obs: dict
    ctx: dict
    rewards: dict
    done: np.ndarray
    info: dict = field(default_factory=dict)
    episodes: list = field(default_factory=list)


class BatchedTask:
    """Base class: subclasses fill in spec building, spawning, obs, rewards."""

    name = "task"
    horizon = 0
    default_algorithm = "ippo"

    def __init__(self):
        self.spec: sim.WorldSpec | None = None
        self.state: sim.WorldState | None = None
        self.groups: list[GroupSpec] = []
        self._ep_return: dict = {}
        self._ep_len: np.ndarray | None = None

    @property
    def batch(self) -> int:
        return self.state.batch

    def group(self, name: str) -> GroupSpec:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    # -- lifecycle ----------------------------------------------------------

    def reset(self, batch: int, seed: int) -> tuple[dict, dict]:
        self.state = sim.make_state(self.spec, batch, seed)
        self._ep_return = {g.name: np.zeros(batch) for g in self.groups}
        self._ep_len = np.zeros(batch, dtype=np.int64)
        for b in range(batch):
            self._spawn_world(b)
        self._post_reset(np.arange(batch))
        obs = self.observe()
        for g in self.groups:
            got = obs[g.name].shape
            want = (len(g.agents), batch, g.obs_dim)
            if got != want:
                raise AssertionError(
                    f"{self.name}/{g.name}: observation shape {got} != {want}")
        return obs, self.context(obs)

    def step(self, actions: dict) -> StepOutcome:
        prev = self.state
        self.state = self._advance(actions)
        rewards = self._rewards(prev, self.state)
        done, info = self._termination()
        episodes = []
        for g in self.groups:
            self._ep_return[g.name] += rewards[g.name][0]
        self._ep_len += 1
        if done.any():
            for b in np.flatnonzero(done):
                rec = {"length": int(self._ep_len[b])}
                for g in self.groups:
                    rec[f"return_{g.name}"] = float(self._ep_return[g.name][b])
                rec.update(self._episode_record(b))
                episodes.append(rec)
                self._spawn_world(b)
                for g in self.groups:
                    self._ep_return[g.name][b] = 0.0
                self._ep_len[b] = 0
            self._post_reset(np.flatnonzero(done))
        obs = self.observe()
        return StepOutcome(obs, self.context(obs), rewards, done, info, episodes)

    # -- hooks ---------------------------------------------------------------

    def _advance(self, actions: dict) -> sim.WorldState:
        raise NotImplementedError

    def _spawn_world(self, b: int) -> None:
        raise NotImplementedError

    def _post_reset(self, worlds: np.ndarray) -> None:
        pass

    def observe(self) -> dict:
        raise NotImplementedError

    def context(self, obs: dict) -> dict:
        """Policy input per group; identity unless the task adds communication."""
        return obs

    def _rewards(self, prev: sim.WorldState, cur: sim.WorldState) -> dict:
        raise NotImplementedError

    def _termination(self) -> tuple[np.ndarray, dict]:
        done = self.state.t >= self.horizon
        return done, {}

    def _episode_record(self, b: int) -> dict:
        return {}


def concat_team_context(obs: np.ndarray, pos: np.ndarray, vel: np.ndarray) -> np.ndarray:
    """Full-communication context: own obs, then each teammate's obs plus
    relative position and velocity, in ascending agent order.

    obs: (K, B, d); pos/vel: (K, B, 2).  Returns (K, B, d*K + 4*(K-1)).
    """
    K = obs.shape[0]
    outs = []
    for i in range(K):
        parts = [obs[i]]
        for j in range(K):
            if j == i:
                continue
            parts.append(obs[j])
            parts.append(pos[j] - pos[i])
            parts.append(vel[j] - vel[i])
        outs.append(np.concatenate(parts, axis=-1))
    return np.stack(outs)

"""Single-agent navigate-to-goal sanity task with dense negative-distance reward."""

from __future__ import annotations

import numpy as np

from .. import sim
from .base import BatchedTask, GroupSpec


class NavigateTask(BatchedTask):
    name = "navigate"
    default_algorithm = "ippo"

    def __init__(self, horizon: int = 100, success_radius: float = 0.1):
        super().__init__()
        self.horizon = horizon
        self.success_radius = success_radius
        entities = [sim.EntitySpec("agent", 0.05, 1.0, 0.5, team=0)]
        self.spec = sim.WorldSpec(entities, n_boxes=0)
        self.obs_dim = 4
        self.action_dim = 2
        self.groups = [GroupSpec("agent", (0,), 4, 4, 2)]
        self._goal = None

    def _spawn_world(self, b: int) -> None:
        st, rng = self.state, self.state.rng[b]
        st.vel[b] = 0.0
        st.t[b] = 0
        st.pos[b, 0] = rng.uniform(-0.8, 0.8, size=2)
        if self._goal is None or self._goal.shape[0] != st.batch:
            self._goal = np.zeros((st.batch, 2))
        self._goal[b] = rng.uniform(-0.8, 0.8, size=2)

    def _advance(self, actions: dict) -> sim.WorldState:
        act = np.clip(np.asarray(actions["agent"], dtype=np.float64), -1.0, 1.0)
        return sim.step(self.spec, self.state, np.moveaxis(act, 0, 1) * 2.0)

    def _rewards(self, prev, cur) -> dict:
        d = np.linalg.norm(cur.pos[:, 0] - self._goal, axis=-1)
        return {"agent": -d[None, :]}

    def _termination(self) -> tuple[np.ndarray, dict]:
        d = np.linalg.norm(self.state.pos[:, 0] - self._goal, axis=-1)
        success = d <= self.success_radius
        self._last_success = success
        return success | (self.state.t >= self.horizon), {"success": success}

    def _episode_record(self, b: int) -> dict:
        return {"success": int(self._last_success[b])}

    def observe(self) -> dict:
        st = self.state
        return {"agent": np.concatenate(
            [self._goal - st.pos[:, 0], st.vel[:, 0]], axis=-1)[None, ...]}

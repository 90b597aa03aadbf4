"""Tag: two chasers, one faster evader, two round obstacles.

Chasers share +1 for every step in which at least one of them touches the
evader (shared, not summed over chasers); the evader receives -1 on the
same condition.  Everyone observes its own position plus relative
positions to the other agents; physical collisions are on for all agents
and obstacles.
"""

from __future__ import annotations

import numpy as np

from .. import constants as C
from .. import sim
from .base import BatchedTask, GroupSpec

RED0, RED1, GREEN, OBS0, OBS1 = range(5)


class TagTask(BatchedTask):
    name = "tag"
    default_algorithm = "ippo"

    def __init__(self, horizon: int = 200):
        super().__init__()
        self.horizon = horizon
        entities = [
            sim.EntitySpec("red_0", C.TAG_CHASER_RADIUS, 1.0, C.TAG_CHASER_MAX_SPEED, team=0),
            sim.EntitySpec("red_1", C.TAG_CHASER_RADIUS, 1.0, C.TAG_CHASER_MAX_SPEED, team=0),
            sim.EntitySpec("green", C.TAG_EVADER_RADIUS, 1.0, C.TAG_EVADER_MAX_SPEED, team=1),
            sim.EntitySpec("obstacle_0", C.TAG_OBSTACLE_RADIUS, 10.0),
            sim.EntitySpec("obstacle_1", C.TAG_OBSTACLE_RADIUS, 10.0),
        ]
        agents = (RED0, RED1, GREEN)
        pairs = [(i, j) for i in agents for j in (OBS0, OBS1)]
        pairs += [(RED0, RED1), (RED0, GREEN), (RED1, GREEN)]
        self._box_template = self._frame_boxes()
        self.spec = sim.WorldSpec(entities, collision_pairs=pairs,
                                  n_boxes=len(self._box_template))
        self.obs_dim = 6
        self.action_dim = 2
        self.groups = [
            GroupSpec("red", (RED0, RED1), self.obs_dim, self.obs_dim, 2),
            GroupSpec("green", (GREEN,), self.obs_dim, self.obs_dim, 2),
        ]

    def _frame_boxes(self) -> np.ndarray:
        h, t = C.TAG_ARENA_HALF, 0.1
        return np.array([
            (0.0, h + t, h + 2 * t, t),
            (0.0, -h - t, h + 2 * t, t),
            (h + t, 0.0, t, h + 2 * t),
            (-h - t, 0.0, t, h + 2 * t),
        ])

    def _spawn_world(self, b: int) -> None:
        st, rng = self.state, self.state.rng[b]
        st.boxes[b] = self._box_template
        st.vel[b] = 0.0
        st.t[b] = 0
        h = C.TAG_ARENA_HALF - 0.2
        order = [OBS0, OBS1, RED0, RED1, GREEN]
        placed = sim.sample_positions(rng, 5, (-h, -h), (h, h),
                                      self.spec.radii[order])
        st.pos[b, order] = placed
        st.kinematic[b, [OBS0, OBS1]] = True

    def _advance(self, actions: dict) -> sim.WorldState:
        st = self.state
        forces = np.zeros((st.batch, self.spec.n_entities, 2))
        red = np.clip(np.asarray(actions["red"], dtype=np.float64), -1.0, 1.0)
        green = np.clip(np.asarray(actions["green"], dtype=np.float64), -1.0, 1.0)
        forces[:, [RED0, RED1]] = np.moveaxis(red, 0, 1) * C.TAG_FORCE_GAIN
        forces[:, GREEN] = green[0] * C.TAG_FORCE_GAIN
        return sim.step(self.spec, st, forces)

    def _touching(self, st: sim.WorldState) -> np.ndarray:
        reach = self.spec.radii[[RED0, RED1]] + self.spec.radii[GREEN]
        d = np.linalg.norm(st.pos[:, [RED0, RED1]] - st.pos[:, None, GREEN], axis=-1)
        return (d <= reach).any(axis=-1)

    def _rewards(self, prev, cur) -> dict:
        touch = self._touching(cur).astype(np.float64)
        return {"red": np.tile(touch, (2, 1)), "green": -touch[None, :]}

    def _episode_record(self, b: int) -> dict:
        return {}

    def observe(self) -> dict:
        st = self.state
        agents = (RED0, RED1, GREEN)
        obs_by_agent = []
        for a in agents:
            p = st.pos[:, a]
            parts = [p]
            for other in agents:
                if other != a:
                    parts.append(st.pos[:, other] - p)
            obs_by_agent.append(np.concatenate(parts, axis=-1))
        return {
            "red": np.stack(obs_by_agent[:2]),
            "green": obs_by_agent[2][None, ...],
        }

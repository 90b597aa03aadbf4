"""Pac-Men: four foragers at a four-way intersection.

Corridor lengths follow the ratio down : left : up : right = 1 : 2 : 3 : 2
(one unit = 5 cells, one cell = one agent diameter).  A single food sits
in the end cell of each corridor and the team is rewarded 1 when one is
consumed, each at most once.  Agents see only a 3x3 binary food grid
around their own cell -- no positions -- and do not collide with each
other.
"""

from __future__ import annotations

import numpy as np

from .. import constants as C
from .. import sim
from .base import BatchedTask, GroupSpec

N_AGENTS = 4
UNIT = C.PACMEN_CORRIDOR_UNIT_CELLS
ARMS_CELLS = {"down": UNIT, "left": 2 * UNIT, "up": 3 * UNIT, "right": 2 * UNIT}


class PacmenTask(BatchedTask):
    name = "pacmen"
    default_algorithm = "ippo"

    def __init__(self, horizon: int = 300):
        super().__init__()
        self.horizon = horizon
        self.cell = C.PACMEN_CELL
        half_w = (C.PACMEN_CORRIDOR_WIDTH_CELLS * self.cell) / 2
        self.half_w = half_w
        c = self.cell
        self.arm_len = {k: v * c for k, v in ARMS_CELLS.items()}

        entities = [
            sim.EntitySpec(name=f"agent_{k}", radius=C.PACMEN_AGENT_RADIUS,
                           mass=1.0, max_speed=C.PACMEN_MAX_SPEED, team=0)
            for k in range(N_AGENTS)
        ]
        self._box_template = self._build_boxes()
        # no inter-agent collisions in this task
        self.spec = sim.WorldSpec(entities, collision_pairs=(),
                                  n_boxes=len(self._box_template))
        self.obs_dim = 9
        self.action_dim = 2
        self.groups = [GroupSpec("team", tuple(range(N_AGENTS)),
                                 self.obs_dim, self.obs_dim, self.action_dim)]
        # food cell indices (cell centers at index * cell size)
        self.food_cells = np.array([
            (0, -(1 + ARMS_CELLS["down"])),
            (-(1 + ARMS_CELLS["left"]), 0),
            (0, 1 + ARMS_CELLS["up"]),
            (1 + ARMS_CELLS["right"], 0),
        ])
        self._alive = None

    def _build_boxes(self) -> np.ndarray:
        hw = self.half_w
        up, down = self.arm_len["up"], self.arm_len["down"]
        left, right = self.arm_len["left"], self.arm_len["right"]
        x_min, x_max = -hw - left, hw + right
        y_min, y_max = -hw - down, hw + up
        t = 0.1
        corners = [
            ((x_min + -hw) / 2, (hw + y_max) / 2, (-hw - x_min) / 2, (y_max - hw) / 2),
            ((hw + x_max) / 2, (hw + y_max) / 2, (x_max - hw) / 2, (y_max - hw) / 2),
            ((x_min + -hw) / 2, (y_min + -hw) / 2, (-hw - x_min) / 2, (-hw - y_min) / 2),
            ((hw + x_max) / 2, (y_min + -hw) / 2, (x_max - hw) / 2, (-hw - y_min) / 2),
        ]
        frame = [
            (0.0, y_max + t, x_max - x_min, t),
            (0.0, y_min - t, x_max - x_min, t),
            (x_min - t, (y_min + y_max) / 2, t, (y_max - y_min) / 2 + 2 * t),
            (x_max + t, (y_min + y_max) / 2, t, (y_max - y_min) / 2 + 2 * t),
        ]
        return np.array(corners + frame)

    # -- lifecycle ------------------------------------------------------------

    def _spawn_world(self, b: int) -> None:
        st, rng = self.state, self.state.rng[b]
        st.boxes[b] = self._box_template
        st.vel[b] = 0.0
        st.t[b] = 0
        st.pos[b] = rng.uniform(-0.8 * self.half_w, 0.8 * self.half_w,
                                size=(N_AGENTS, 2))
        if self._alive is None or self._alive.shape[0] != st.batch:
            self._alive = np.ones((st.batch, 4), dtype=bool)
        self._alive[b] = True

    def _advance(self, actions: dict) -> sim.WorldState:
        act = np.clip(np.asarray(actions["team"], dtype=np.float64), -1.0, 1.0)
        forces = np.moveaxis(act, 0, 1) * C.PACMEN_FORCE_GAIN
        return sim.step(self.spec, self.state, forces)

    def _cells(self, pos: np.ndarray) -> np.ndarray:
        """Cell index of positions; cell k spans [k*c - c/2, k*c + c/2)."""
        return np.floor(pos / self.cell + 0.5).astype(np.int64)

    def _rewards(self, prev, cur) -> dict:
        cells = self._cells(cur.pos)                          # (B, 4, 2)
        eaten = np.zeros(cur.batch)
        for f in range(4):
            on_food = np.all(cells == self.food_cells[f], axis=-1).any(axis=-1)
            consumed = on_food & self._alive[:, f]
            self._alive[:, f] &= ~consumed
            eaten += consumed
        return {"team": np.tile(eaten, (N_AGENTS, 1))}

    def _termination(self) -> tuple[np.ndarray, dict]:
        done = self.state.t >= self.horizon
        return done, {"foods_left": self._alive.sum(axis=1)}

    def _episode_record(self, b: int) -> dict:
        return {"foods": int(4 - self._alive[b].sum())}

    # -- observations -----------------------------------------------------------

    def observe(self) -> dict:
        cells = self._cells(self.state.pos)                   # (B, 4, 2)
        obs = np.zeros((N_AGENTS, self.batch, 9))
        for f in range(4):
            delta = self.food_cells[f] - cells                # (B, 4, 2)
            near = (np.abs(delta) <= 1).all(axis=-1) & self._alive[:, f, None]
            slot = (delta[..., 1] + 1) * 3 + (delta[..., 0] + 1)
            for k in range(N_AGENTS):
                hits = near[:, k]
                obs[k, hits, slot[hits, k]] = 1.0
        return {"team": obs}

"""Dynamic Passage: two linked agents crossing a two-gap wall.

A small and a large agent, joined by a rigid linkage, spawn below a
horizontal wall with two equal gaps (random positions and left/right
order, fixed separation equal to the linkage length) and must cross --
one agent per gap, linkage parallel to the wall -- then settle on a pair
of goal markers above.

The disturbance narrows gap A below the large agent's diameter; which
side gap A sits on is random per episode.  Gap sizes are never observed;
observation slots are keyed to gap identity, so policies can only learn
identity-conditioned assignments, not size-conditioned ones.

Reward (shared): parallelism -0.5*|sin(linkage angle)| per step, a
navigation term equal to the per-step decrease of the squared distance
from the linkage center to the current target (passage center before
crossing, goal center after), and -1 per agent per colliding step.
"""

from __future__ import annotations

import numpy as np

from .. import constants as C
from .. import sim
from .base import BatchedTask, GroupSpec, concat_team_context


class PassageTask(BatchedTask):
    name = "passage"
    default_algorithm = "mappo"

    def __init__(self, horizon: int = 300, disturbed: bool = False):
        super().__init__()
        self.horizon = horizon
        self.disturbed = disturbed
        entities = [
            sim.EntitySpec(name="small", radius=C.PASSAGE_SMALL_RADIUS, mass=1.0,
                           max_speed=C.PASSAGE_MAX_SPEED, team=0),
            sim.EntitySpec(name="large", radius=C.PASSAGE_LARGE_RADIUS, mass=1.0,
                           max_speed=C.PASSAGE_MAX_SPEED, team=0),
        ]
        # linkage keeps the pair farther apart than their summed radii, so
        # the agent-agent pair is never in contact
        self.spec = sim.WorldSpec(
            entities,
            joints=(sim.JointSpec(0, 1, C.PASSAGE_LINK_LENGTH),),
            collision_pairs=(),
            n_boxes=7,
            contact_stiffness=C.PASSAGE_CONTACT_STIFFNESS,
            contact_damping=C.PASSAGE_CONTACT_DAMPING,
        )
        self.obs_dim = 8
        self.action_dim = 2
        self.groups = [GroupSpec("team", (0, 1), self.obs_dim,
                                 2 * self.obs_dim + 4, self.action_dim)]
        self._gap_a = None

    def set_disturbance(self, active: bool) -> None:
        """Applies to worlds at their next reset."""
        self.disturbed = bool(active)

    # -- geometry ---------------------------------------------------------------

    def _wall_boxes(self, left_x: float, right_x: float,
                    left_w: float, right_w: float) -> np.ndarray:
        """Three wall segments along y=0 leaving two gaps open."""
        h = C.PASSAGE_ARENA_HALF
        t = C.PASSAGE_WALL_HALF_THICKNESS
        spans = [
            (-h, left_x - left_w / 2),
            (left_x + left_w / 2, right_x - right_w / 2),
            (right_x + right_w / 2, h),
        ]
        boxes = []
        for a, b in spans:
            if b - a <= 0:
                boxes.append((sim.FAR_AWAY, sim.FAR_AWAY, 0.0, 0.0))
            else:
                boxes.append(((a + b) / 2, 0.0, (b - a) / 2, t))
        return np.array(boxes)

    def _frame_boxes(self) -> np.ndarray:
        h = C.PASSAGE_ARENA_HALF
        t = 0.1
        return np.array([
            (0.0, h + t, h + 2 * t, t),
            (0.0, -h - t, h + 2 * t, t),
            (h + t, 0.0, t, h + 2 * t),
            (-h - t, 0.0, t, h + 2 * t),
        ])

    # -- lifecycle ----------------------------------------------------------------

    def _spawn_world(self, b: int) -> None:
        st, rng = self.state, self.state.rng[b]
        st.vel[b] = 0.0
        st.t[b] = 0
        sep = C.PASSAGE_GAP_SEPARATION
        left = rng.uniform(-C.PASSAGE_ARENA_HALF + 0.3, C.PASSAGE_ARENA_HALF - 0.3 - sep)
        right = left + sep
        a_is_left = rng.random() < 0.5
        wa = C.PASSAGE_NARROW_WIDTH if self.disturbed else C.PASSAGE_GAP_WIDTH
        wb = C.PASSAGE_GAP_WIDTH
        if a_is_left:
            wall = self._wall_boxes(left, right, wa, wb)
            gap_a, gap_b = left, right
        else:
            wall = self._wall_boxes(left, right, wb, wa)
            gap_a, gap_b = right, left
        st.boxes[b] = np.concatenate([wall, self._frame_boxes()])

        cx = rng.uniform(-0.5, 0.5)
        cy = rng.uniform(-0.7, -0.3)
        small_on_top = rng.random() < 0.5
        off = C.PASSAGE_LINK_LENGTH / 2
        st.pos[b, 0] = (cx, cy + (off if small_on_top else -off))
        st.pos[b, 1] = (cx, cy + (-off if small_on_top else off))

        if self._gap_a is None or self._gap_a.shape[0] != st.batch:
            B = st.batch
            self._gap_a = np.zeros((B, 2))
            self._gap_b = np.zeros((B, 2))
            self._goal = np.zeros((B, 2))
        self._gap_a[b] = (gap_a, 0.0)
        self._gap_b[b] = (gap_b, 0.0)
        self._goal[b] = (rng.uniform(-0.5, 0.5), rng.uniform(0.4, 0.7))

    def _advance(self, actions: dict) -> sim.WorldState:
        act = np.clip(np.asarray(actions["team"], dtype=np.float64), -1.0, 1.0)
        forces = np.moveaxis(act, 0, 1) * C.PASSAGE_FORCE_GAIN
        return sim.step(self.spec, self.state, forces)

    # -- rewards -------------------------------------------------------------------

    def _colliding(self, st: sim.WorldState) -> np.ndarray:
        """(B, 2) flags: agent overlaps any wall/frame box."""
        out = np.zeros((st.batch, 2), dtype=bool)
        for e in range(2):
            rel = st.pos[:, e, None, :] - st.boxes[:, :, :2]
            half = st.boxes[:, :, 2:]
            clamped = np.clip(rel, -half, half)
            d = np.sqrt(np.sum((rel - clamped) ** 2, axis=-1))
            inside = np.all(np.abs(rel) <= half, axis=-1)
            out[:, e] = np.any(inside | (d < self.spec.radii[e]), axis=-1)
        return out

    def _nav_target(self, st: sim.WorldState) -> np.ndarray:
        center_y = st.pos[:, :, 1].mean(axis=1)
        passage_center = (self._gap_a + self._gap_b) / 2
        return np.where((center_y >= 0.0)[:, None], self._goal, passage_center)

    def _rewards(self, prev, cur) -> dict:
        d = cur.pos[:, 1] - cur.pos[:, 0]
        sin_angle = np.abs(d[:, 1]) / np.maximum(np.linalg.norm(d, axis=-1), 1e-12)
        r = -0.5 * sin_angle

        target = self._nav_target(cur)
        c_prev = prev.pos.mean(axis=1)
        c_cur = cur.pos.mean(axis=1)
        d_prev = np.sum((c_prev - target) ** 2, axis=-1)
        d_cur = np.sum((c_cur - target) ** 2, axis=-1)
        r += d_prev - d_cur

        r -= self._colliding(cur).sum(axis=1)
        return {"team": np.tile(r, (2, 1))}

    def _success(self, st: sim.WorldState) -> np.ndarray:
        off = np.array([C.PASSAGE_LINK_LENGTH / 2, 0.0])
        m0, m1 = self._goal - off, self._goal + off
        d00 = np.linalg.norm(st.pos[:, 0] - m0, axis=-1)
        d01 = np.linalg.norm(st.pos[:, 0] - m1, axis=-1)
        d10 = np.linalg.norm(st.pos[:, 1] - m0, axis=-1)
        d11 = np.linalg.norm(st.pos[:, 1] - m1, axis=-1)
        tol = C.PASSAGE_GOAL_TOL
        return ((d00 <= tol) & (d11 <= tol)) | ((d01 <= tol) & (d10 <= tol))

    def _termination(self) -> tuple[np.ndarray, dict]:
        success = self._success(self.state)
        self._last_success = success
        done = success | (self.state.t >= self.horizon)
        return done, {"success": success}

    def _episode_record(self, b: int) -> dict:
        return {"success": int(self._last_success[b])}

    # -- observations ------------------------------------------------------------------

    def observe(self) -> dict:
        st = self.state
        obs = np.zeros((2, st.batch, self.obs_dim))
        for k in range(2):
            p = st.pos[:, k]
            obs[k] = np.concatenate([
                st.vel[:, k],
                self._gap_a - p,
                self._gap_b - p,
                self._goal - p,
            ], axis=-1)
        return {"team": obs}

    def context(self, obs: dict) -> dict:
        pos = np.moveaxis(self.state.pos[:, :2], 0, 1)
        vel = np.moveaxis(self.state.vel[:, :2], 0, 1)
        return {"team": concat_team_context(obs["team"], pos, vel)}

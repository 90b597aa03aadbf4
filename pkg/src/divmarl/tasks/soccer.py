"""Soccer: two teams on a walled pitch with goal pockets.

Blue is the learning team and attacks the +x goal; red mirrors it.  Red
can be driven by the hand-crafted heuristic, left inactive (early
curriculum), or controlled externally (policy-vs-policy matches).  All
red-side observations and actions live in a mirrored frame in which red
also attacks +x, so one policy can play either side.

Non-kicking agents act with a 2D force; the kicking variant adds a
rotation rate and a kick charge (only the strictly closest requester's
kick connects).

Observation layout per agent, in order: own last action force (2), own
position (2), own velocity (2), ball relative position (2), ball relative
velocity (2), goal-relative ball position (2), ball velocity (2), ball
acceleration (2), then per opponent [relative position (2), relative
velocity (2), velocity (2), acceleration (2)], then own heading (1,
kicking variant only).  Accelerations are per-step velocity differences.
Teammate data travels through the communication context, not here.
"""

from __future__ import annotations

import numpy as np

from .. import constants as C
from .. import sim
from ..heuristic import SoccerHeuristic, Strengths
from .base import BatchedTask, GroupSpec, concat_team_context

CORE_DIM = 16          # observation entries before the opponent blocks
OPP_BLOCK_DIM = 8

_FORMATION_122 = ((-0.85, 0.0), (-0.5, -0.4), (-0.5, 0.4), (-0.2, -0.55), (-0.2, 0.55))
_EMBODIMENT_ROLES_5 = ("goalie", "defender", "defender", "attacker", "attacker")


class SoccerTask(BatchedTask):
    name = "soccer"
    default_algorithm = "mappo"

    def __init__(self, team_size: int = 2, kicking: bool = False,
                 embodiments: str = "uniform", spawn_mode: str = "uniform",
                 horizon: int = 500, context_mode: str | None = None,
                 opponent_mode: str = "heuristic",
                 strengths: Strengths = Strengths(1.0, 1.0, 1.0),
                 value_weights: dict | None = None):
        super().__init__()
        self.team_size = team_size
        self.kicking = kicking
        self.embodiments = embodiments
        self.spawn_mode = spawn_mode
        self.horizon = horizon
        self.opponent_mode = opponent_mode
        self.context_mode = context_mode or ("concat" if team_size <= 3 else "setgnn")
        self.half_len = C.PITCH_LENGTH / 2
        self.half_wid = C.PITCH_WIDTH / 2
        self.goal_hw = C.GOAL_WIDTH / 2

        roles = self._roles()
        entities = []
        for side in ("blue", "red"):
            for k in range(team_size):
                rmul, smul = C.EMBODIMENT_MULTIPLIERS[roles[k]]
                entities.append(sim.EntitySpec(
                    name=f"{side}_{k}", radius=C.AGENT_RADIUS * rmul,
                    mass=C.AGENT_MASS, max_speed=C.AGENT_MAX_SPEED * smul,
                    team=0 if side == "blue" else 1,
                    has_heading=kicking))
        entities.append(sim.EntitySpec(
            name="ball", radius=C.BALL_RADIUS, mass=C.BALL_MASS,
            max_speed=C.BALL_MAX_SPEED, drag=C.BALL_DRAG))
        E = len(entities)
        pairs = [(i, j) for i in range(E) for j in range(i + 1, E)]
        self._box_template = self._build_boxes()
        self.spec = sim.WorldSpec(entities, collision_pairs=pairs,
                                  n_boxes=len(self._box_template),
                                  ball_index=E - 1)
        self.blue_idx = np.arange(team_size)
        self.red_idx = np.arange(team_size, 2 * team_size)
        self.ball_index = E - 1

        self.action_dim = 4 if kicking else 2
        self.obs_dim = CORE_DIM + OPP_BLOCK_DIM * team_size + (1 if kicking else 0)
        if self.context_mode == "concat":
            ctx_dim = self.obs_dim * team_size + 4 * (team_size - 1)
        else:
            ctx_dim = -1  # encoder-produced; the model defines it
        self.groups = [GroupSpec("team", tuple(self.blue_idx), self.obs_dim,
                                 ctx_dim, self.action_dim)]

        self.heuristic = SoccerHeuristic(
            self.red_idx, self.ball_index,
            target_goal=(-self.half_len, 0.0), own_goal=(self.half_len, 0.0),
            half_length=self.half_len, half_width=self.half_wid,
            agent_radius=C.AGENT_RADIUS, base_speed=C.AGENT_MAX_SPEED,
            f_max=C.AGENT_FORCE_GAIN, strengths=strengths,
            value_weights=value_weights)
        self._opponents_active = opponent_mode != "inactive"
        self.shaping_on = not self._opponents_active
        self._min_shaping_radius = 0.1
        self._ball_speed_eps = 1e-3

    # -- configuration ------------------------------------------------------

    def _roles(self):
        if self.embodiments == "uniform":
            return ("defender",) * self.team_size
        if self.embodiments == "phys_diff":
            if self.team_size == 5:
                return _EMBODIMENT_ROLES_5
            roles = list(_EMBODIMENT_ROLES_5)
            return tuple(roles[k % 5] for k in range(self.team_size))
        raise ValueError(f"unknown embodiment set {self.embodiments!r}")

    def _build_boxes(self) -> np.ndarray:
        hl, hw, g = self.half_len, self.half_wid, self.goal_hw
        t = C.WALL_THICKNESS
        d = C.GOAL_DEPTH
        seg = (hw - g) / 2
        boxes = [
            (0.0, hw + t, hl + d + 2 * t, t),
            (0.0, -hw - t, hl + d + 2 * t, t),
        ]
        for s in (1.0, -1.0):
            boxes += [
                (s * (hl + t), g + seg, t, seg),
                (s * (hl + t), -g - seg, t, seg),
                (s * (hl + d / 2 + t), g + t, d / 2 + t, t),
                (s * (hl + d / 2 + t), -g - t, d / 2 + t, t),
                (s * (hl + d + t), 0.0, t, g),
            ]
        return np.array(boxes)

    def set_opponents(self, active: bool) -> None:
        """Applied at each world's next reset; shaping follows the inverse."""
        self._opponents_active = active
        self.shaping_on = not active

    def set_strengths(self, strengths: Strengths) -> None:
        self.heuristic.set_strengths(strengths)

    # -- lifecycle ------------------------------------------------------------

    def _spawn_world(self, b: int) -> None:
        st, rng = self.state, self.state.rng[b]
        st.boxes[b] = self._box_template
        st.vel[b] = 0.0
        st.heading[b] = 0.0
        st.t[b] = 0
        margin = C.WALL_THICKNESS
        radii = self.spec.radii[self.blue_idx]
        if self.spawn_mode == "uniform":
            st.pos[b, self.blue_idx] = sim.sample_positions(
                rng, self.team_size,
                (-self.half_len + margin, -self.half_wid + margin),
                (-margin, self.half_wid - margin), radii)
        elif self.spawn_mode == "formation":
            anchors = self._formation_anchors()
            noise = rng.uniform(-1.0, 1.0, size=(self.team_size, 2)) \
                * C.FORMATION_NOISE_FRAC * C.PITCH_WIDTH
            st.pos[b, self.blue_idx] = anchors + noise
        elif self.spawn_mode == "line":
            ys = np.linspace(-0.6 * self.half_wid, 0.6 * self.half_wid, self.team_size)
            order = rng.permutation(self.team_size)
            noise = rng.uniform(-1.0, 1.0, size=(self.team_size, 2)) \
                * C.FORMATION_NOISE_FRAC * C.PITCH_WIDTH
            st.pos[b, self.blue_idx, 0] = -0.5 * self.half_len + noise[:, 0]
            st.pos[b, self.blue_idx, 1] = ys[order] + noise[:, 1]
        else:
            raise ValueError(f"unknown spawn mode {self.spawn_mode!r}")

        if self._opponents_active:
            st.pos[b, self.red_idx] = sim.sample_positions(
                rng, self.team_size,
                (margin, -self.half_wid + margin),
                (self.half_len - margin, self.half_wid - margin),
                self.spec.radii[self.red_idx])
            st.collidable[b, self.red_idx] = True
        else:
            st.pos[b, self.red_idx] = np.stack(
                [sim.FAR_AWAY + 10.0 * np.arange(self.team_size),
                 np.full(self.team_size, sim.FAR_AWAY)], axis=-1)
            st.collidable[b, self.red_idx] = False
        st.kinematic[b, self.red_idx] = (
            self._opponents_active and self.heuristic.strengths.speed == 0.0)
        st.pos[b, self.ball_index] = 0.0  # pitch center, exactly

    def _formation_anchors(self) -> np.ndarray:
        if self.team_size == 5:
            rel = np.array(_FORMATION_122)
        else:
            ys = np.linspace(-0.5, 0.5, self.team_size)
            rel = np.stack([np.full(self.team_size, -0.5), ys], axis=-1)
        return rel * np.array([self.half_len, self.half_wid])

    def _post_reset(self, worlds: np.ndarray) -> None:
        if not hasattr(self, "_prev_vel") or self._prev_vel.shape[0] != self.batch:
            self._prev_vel = np.zeros_like(self.state.vel)
            self._accel = np.zeros_like(self.state.vel)
            self._last_act = {"blue": np.zeros((self.team_size, self.batch, 2)),
                              "red": np.zeros((self.team_size, self.batch, 2))}
        self._prev_vel[worlds] = self.state.vel[worlds]
        self._accel[worlds] = 0.0
        self._last_act["blue"][:, worlds] = 0.0
        self._last_act["red"][:, worlds] = 0.0
        self.heuristic.reset(self.batch, worlds)

    # -- stepping -------------------------------------------------------------

    def _advance(self, actions: dict) -> sim.WorldState:
        st = self.state
        B, E = st.batch, self.spec.n_entities
        forces = np.zeros((B, E, 2))
        rot = np.zeros((B, E)) if self.kicking else None
        kick = np.zeros((B, E)) if self.kicking else None

        blue = np.clip(np.asarray(actions["team"], dtype=np.float64), -1.0, 1.0)
        forces[:, self.blue_idx] = np.moveaxis(blue[..., 0:2], 0, 1) * C.AGENT_FORCE_GAIN
        self._last_act["blue"] = blue[..., 0:2].copy()
        if self.kicking:
            rot[:, self.blue_idx] = np.moveaxis(blue[..., 2], 0, 1) * C.ROTATION_RATE
            kick[:, self.blue_idx] = np.moveaxis(np.clip(blue[..., 3], 0.0, 1.0), 0, 1)

        red_ext = actions.get("opponents")
        st.kinematic[:, self.red_idx] = (
            self._opponents_active and red_ext is None
            and self.heuristic.strengths.speed == 0.0)
        if red_ext is not None:
            red = np.clip(np.asarray(red_ext, dtype=np.float64), -1.0, 1.0)
            self._last_act["red"] = red[..., 0:2].copy()
            unmirrored = red[..., 0:2] * np.array([-1.0, 1.0])
            forces[:, self.red_idx] = np.moveaxis(unmirrored, 0, 1) * C.AGENT_FORCE_GAIN
            if self.kicking:
                rot[:, self.red_idx] = np.moveaxis(-red[..., 2], 0, 1) * C.ROTATION_RATE
                kick[:, self.red_idx] = np.moveaxis(np.clip(red[..., 3], 0.0, 1.0), 0, 1)
        elif self._opponents_active:
            f_red = self.heuristic.act(st)          # (B, K, 2) in world frame
            forces[:, self.red_idx] = f_red
            self._last_act["red"] = np.moveaxis(
                f_red * np.array([-1.0, 1.0]) / C.AGENT_FORCE_GAIN, 1, 0)

        self._prev_vel = st.vel.copy()
        new = sim.step(self.spec, st, forces, rot, kick)
        self._accel = new.vel - self._prev_vel
        return new

    # -- rewards and termination ----------------------------------------------

    def _goal_events(self, st: sim.WorldState) -> tuple[np.ndarray, np.ndarray]:
        bx = st.pos[:, self.ball_index, 0]
        blue_goal = bx > self.half_len + C.BALL_RADIUS
        red_goal = bx < -self.half_len - C.BALL_RADIUS
        return blue_goal, red_goal

    def _team_reward(self, prev, cur, sign: float, own_idx) -> np.ndarray:
        blue_goal, red_goal = self._goal_events(cur)
        scored = blue_goal if sign > 0 else red_goal
        conceded = red_goal if sign > 0 else blue_goal
        r = 100.0 * scored.astype(np.float64) - 100.0 * conceded
        goal = np.array([sign * self.half_len, 0.0])
        d_prev = np.linalg.norm(prev.pos[:, self.ball_index] - goal, axis=-1)
        d_cur = np.linalg.norm(cur.pos[:, self.ball_index] - goal, axis=-1)
        r += 10.0 * (d_prev - d_cur)
        if self.shaping_on:
            ball_p = prev.pos[:, None, self.ball_index]
            ball_c = cur.pos[:, None, self.ball_index]
            dc_prev = np.linalg.norm(prev.pos[:, own_idx] - ball_p, axis=-1).min(axis=1)
            dc_cur = np.linalg.norm(cur.pos[:, own_idx] - ball_c, axis=-1).min(axis=1)
            ball_speed = np.linalg.norm(cur.vel[:, self.ball_index], axis=-1)
            gate = (dc_cur >= self._min_shaping_radius) & (ball_speed <= self._ball_speed_eps)
            r += 0.1 * (dc_prev - dc_cur) * gate
        return r

    def _rewards(self, prev, cur) -> dict:
        r_blue = self._team_reward(prev, cur, +1.0, self.blue_idx)
        self._last_red_reward = self._team_reward(prev, cur, -1.0, self.red_idx)
        return {"team": np.tile(r_blue, (self.team_size, 1))}

    def _termination(self) -> tuple[np.ndarray, dict]:
        blue_goal, red_goal = self._goal_events(self.state)
        done = blue_goal | red_goal | (self.state.t >= self.horizon)
        self._last_outcome = np.where(blue_goal, 1, np.where(red_goal, -1, 0))
        info = {"goal_blue": blue_goal, "goal_red": red_goal,
                "reward_red_team": self._last_red_reward}
        return done, info

    def _episode_record(self, b: int) -> dict:
        return {"scored": int(self._last_outcome[b])}

    # -- observations -----------------------------------------------------------

    def observe(self, side: str = "blue") -> dict:
        return {"team": self._side_obs(side)}

    def _side_obs(self, side: str) -> np.ndarray:
        st = self.state
        sign = 1.0 if side == "blue" else -1.0
        own_idx = self.blue_idx if side == "blue" else self.red_idx
        opp_idx = self.red_idx if side == "blue" else self.blue_idx
        mirror = np.array([sign, 1.0])

        pos = st.pos * mirror
        vel = st.vel * mirror
        accel = self._accel * mirror
        ball_p = pos[:, self.ball_index]
        ball_v = vel[:, self.ball_index]
        ball_a = accel[:, self.ball_index]
        goal = np.array([self.half_len, 0.0])

        # worlds whose opponents are parked observe zeroed opponent blocks
        present = st.collidable[:, opp_idx[0]].astype(np.float64)[:, None]

        rows = []
        for k, e in enumerate(own_idx):
            p, v = pos[:, e], vel[:, e]
            parts = [
                self._last_act[side][k],
                p, v,
                ball_p - p, ball_v - v,
                goal[None, :] - ball_p,
                ball_v, ball_a,
            ]
            for o in opp_idx:
                parts += [(pos[:, o] - p) * present, (vel[:, o] - v) * present,
                          vel[:, o] * present, accel[:, o] * present]
            if self.kicking:
                h = st.heading[:, e] if side == "blue" else np.pi - st.heading[:, e]
                parts.append(h[:, None])
            rows.append(np.concatenate(parts, axis=-1))
        return np.stack(rows)

    def context(self, obs: dict, side: str = "blue") -> dict:
        if self.context_mode != "concat":
            return obs
        sign = 1.0 if side == "blue" else -1.0
        own_idx = self.blue_idx if side == "blue" else self.red_idx
        mirror = np.array([sign, 1.0])
        pos = np.moveaxis(self.state.pos[:, own_idx] * mirror, 0, 1)
        vel = np.moveaxis(self.state.vel[:, own_idx] * mirror, 0, 1)
        return {"team": concat_team_context(obs["team"], pos, vel)}

    def graph_features(self, side: str = "blue") -> tuple[np.ndarray, np.ndarray]:
        """Teammate positions and velocities (K, B, 2) for GNN edge features."""
        sign = 1.0 if side == "blue" else -1.0
        own_idx = self.blue_idx if side == "blue" else self.red_idx
        mirror = np.array([sign, 1.0])
        pos = np.moveaxis(self.state.pos[:, own_idx] * mirror, 0, 1)
        vel = np.moveaxis(self.state.vel[:, own_idx] * mirror, 0, 1)
        return pos, vel

    def split_obs(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Split an obs matrix into (core, opponent set) for the set encoder."""
        n_opp = self.team_size
        blocks = obs[..., CORE_DIM:CORE_DIM + OPP_BLOCK_DIM * n_opp]
        core = np.concatenate([obs[..., :CORE_DIM], obs[..., CORE_DIM + OPP_BLOCK_DIM * n_opp:]],
                              axis=-1)
        return core, blocks.reshape(*obs.shape[:-1], n_opp, OPP_BLOCK_DIM)

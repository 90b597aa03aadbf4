"""Hand-crafted soccer opponent and the strength curriculum.

The opponent is a two-level controller.  The high level assigns one agent
to dribble (a segment ending at the ball with terminal velocity toward the
target goal) and sends the rest to sampled off-ball destinations scored by
a hand-crafted value function.  The low level turns each plan segment into
a cubic Hermite trajectory and tracks it with a saturated PD controller.

Three strength knobs in [0, 1] tune difficulty: `speed` scales all
commanded velocities (0 freezes the team in place), `decision` adds noise
to value scores and possession assignment, `precision` adds noise to
planned target positions and velocities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import constants as C
from .errors import ConfigError
from .sim import WorldState


@dataclass(frozen=True)
class Strengths:
    speed: float
    decision: float
    precision: float

    def __post_init__(self):
        for name in ("speed", "decision", "precision"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"strength {name}={v} outside [0, 1]")

    def all_zero(self) -> bool:
        return self.speed == 0.0 and self.decision == 0.0 and self.precision == 0.0


@dataclass(frozen=True)
class PlanSegment:
    p0: np.ndarray
    v0: np.ndarray
    p1: np.ndarray
    v1: np.ndarray
    duration: float

    def __post_init__(self):
        if self.duration <= 0:
            raise ConfigError("segment duration must be > 0")


def hermite_eval(seg: PlanSegment, s) -> tuple[np.ndarray, np.ndarray]:
    """Cubic Hermite position and time-derivative at normalized s in [0, 1].

    Tangents are scaled by the duration so the endpoint derivatives equal
    the segment's boundary velocities.
    """
    return _hermite(np.asarray(seg.p0, dtype=np.float64),
                    np.asarray(seg.v0, dtype=np.float64),
                    np.asarray(seg.p1, dtype=np.float64),
                    np.asarray(seg.v1, dtype=np.float64),
                    float(seg.duration), np.asarray(s, dtype=np.float64))


def _hermite(p0, v0, p1, v1, duration, s):
    s = np.asarray(s, dtype=np.float64)[..., None]
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    pos = h00 * p0 + h10 * (duration * v0) + h01 * p1 + h11 * (duration * v1)
    d00 = 6 * s**2 - 6 * s
    d10 = 3 * s**2 - 4 * s + 1
    d01 = -6 * s**2 + 6 * s
    d11 = 3 * s**2 - 2 * s
    vel = (d00 * p0 + d10 * (duration * v0) + d01 * p1 + d11 * (duration * v1)) / duration
    return pos, vel


def track(seg: PlanSegment, position, velocity, time: float,
          kp: float = C.HEURISTIC_KP, kd: float = C.HEURISTIC_KD,
          f_max: float = np.inf) -> np.ndarray:
    """Saturated PD force toward the spline reference at the given time."""
    s = np.clip(time / seg.duration, 0.0, 1.0)
    p_ref, v_ref = hermite_eval(seg, s)
    force = kp * (p_ref - np.asarray(position)) + kd * (v_ref - np.asarray(velocity))
    norm = np.linalg.norm(force, axis=-1, keepdims=True)
    scale = np.where(norm > f_max, f_max / np.maximum(norm, 1e-12), 1.0)
    return force * scale


def candidate_values(cands: np.ndarray, ball: np.ndarray, mates: np.ndarray,
                     target_goal: np.ndarray, own_goal: np.ndarray,
                     half_length: float, half_width: float, agent_radius: float,
                     defending: np.ndarray,
                     weights: dict | None = None) -> np.ndarray:
    """Hand-crafted off-ball value of candidate positions.

    cands: (..., K, C, 2) candidates for K agents; ball: (..., 2);
    mates: (..., K, 2) current teammate positions; defending: (...,) bool.
    Returns scores of shape (..., K, C).  Higher is better.  The terms, in
    priority order: ball proximity, wall avoidance, avoiding the ball-goal
    lane, covering the own goal on defense, teammate spacing.
    """
    w = dict(C.HEURISTIC_VALUE_WEIGHTS)
    if weights:
        w.update(weights)
    ball_b = ball[..., None, None, :]
    score = w["ball_proximity"] * -np.linalg.norm(cands - ball_b, axis=-1)

    clearance = np.minimum(
        np.minimum(half_length - np.abs(cands[..., 0]), half_width - np.abs(cands[..., 1])),
        np.inf) - agent_radius
    score += w["wall"] * np.maximum(0.0, 1.0 - clearance / C.HEURISTIC_WALL_MARGIN)

    d_lane = _segment_distance(cands, ball_b, target_goal[..., None, None, :])
    score += w["lane_blocking"] * np.maximum(0.0, 1.0 - d_lane / C.HEURISTIC_LANE_WIDTH)

    d_def = _segment_distance(cands, ball_b, own_goal[..., None, None, :])
    cover = np.maximum(0.0, 1.0 - d_def / C.HEURISTIC_LANE_WIDTH)
    score += w["own_goal_defense"] * cover * defending[..., None, None]

    # spacing vs every teammate except the candidate's own agent
    K = cands.shape[-3]
    for m in range(K):
        mate = mates[..., m, None, None, :]
        crowd = np.maximum(
            0.0, 1.0 - np.linalg.norm(cands - mate, axis=-1) / C.HEURISTIC_SPACING_RADIUS)
        crowd[..., m, :] = 0.0
        score += w["teammate_spacing"] * crowd
    return score


def _segment_distance(p, a, b):
    """Distance from points p to segment [a, b] (broadcasting)."""
    ab = b - a
    denom = np.maximum(np.sum(ab * ab, axis=-1), 1e-12)
    t = np.clip(np.sum((p - a) * ab, axis=-1) / denom, 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.linalg.norm(p - proj, axis=-1)


class SoccerHeuristic:
    """Batched controller for one team of opponents."""

    def __init__(self, agent_indices, ball_index: int,
                 target_goal, own_goal, half_length: float, half_width: float,
                 agent_radius: float, base_speed: float, f_max: float,
                 dt: float = C.DT, strengths: Strengths = Strengths(1.0, 1.0, 1.0),
                 replan_every: int = C.HEURISTIC_REPLAN_EVERY,
                 n_candidates: int = C.HEURISTIC_CANDIDATES,
                 value_weights: dict | None = None):
        self.idx = np.asarray(agent_indices, dtype=np.int64)
        self.ball = ball_index
        self.target_goal = np.asarray(target_goal, dtype=np.float64)
        self.own_goal = np.asarray(own_goal, dtype=np.float64)
        self.half_length = half_length
        self.half_width = half_width
        self.agent_radius = agent_radius
        self.base_speed = base_speed
        self.f_max = f_max
        self.dt = dt
        self.strengths = strengths
        self.replan_every = replan_every
        self.n_candidates = n_candidates
        self.value_weights = value_weights
        self._plans = None

    def set_strengths(self, strengths: Strengths) -> None:
        self.strengths = strengths

    def _ensure_buffers(self, batch: int) -> None:
        K = len(self.idx)
        if self._plans is not None and self._plans["p0"].shape[0] == batch:
            return
        self._plans = {
            "p0": np.zeros((batch, K, 2)), "v0": np.zeros((batch, K, 2)),
            "p1": np.zeros((batch, K, 2)), "v1": np.zeros((batch, K, 2)),
            "duration": np.ones((batch, K)),
            "start": np.zeros((batch, K), dtype=np.int64),
            "dest": np.zeros((batch, K, 2)),
            "owner": np.zeros(batch, dtype=np.int64),
            "noise_p1": np.zeros((batch, K, 2)),
            "noise_v1": np.zeros((batch, K, 2)),
            "fresh": np.zeros((batch, K), dtype=bool),
        }

    def reset(self, batch: int, worlds=None) -> None:
        self._ensure_buffers(batch)
        sel = slice(None) if worlds is None else worlds
        for key, arr in self._plans.items():
            arr[sel] = False if key == "fresh" else 0
        self._plans["duration"][sel] = 1.0

    def act(self, state: WorldState) -> np.ndarray:
        """Forces for the controlled agents, shape (B, n_opponents, 2)."""
        B, K = state.batch, len(self.idx)
        if self.strengths.speed == 0.0:
            return np.zeros((B, K, 2))
        self._ensure_buffers(B)
        replan = (state.t % self.replan_every == 0) | ~self._plans["fresh"].all(axis=1)
        if replan.any():
            self._replan(state, np.flatnonzero(replan))
        self._refresh_dribbler(state)
        return self._track_all(state)

    # -- planning ---------------------------------------------------------

    def _replan(self, state: WorldState, worlds: np.ndarray) -> None:
        K = len(self.idx)
        s = self.strengths
        cmd_speed = max(s.speed * self.base_speed, 1e-3)
        pos = state.pos[worlds][:, self.idx]          # (W, K, 2)
        vel = state.vel[worlds][:, self.idx]
        ball = state.pos[worlds, self.ball]           # (W, 2)
        W = len(worlds)

        noise_poss = np.zeros((W, K))
        cand = np.zeros((W, K, self.n_candidates, 2))
        noise_val = np.zeros((W, K, self.n_candidates))
        noise_p1 = np.zeros((W, K, 2))
        noise_v1 = np.zeros((W, K, 2))
        for wi, b in enumerate(worlds):
            rng = state.rng[b]
            noise_poss[wi] = rng.normal(0.0, 1.0, size=K)
            cand[wi, :, :, 0] = rng.uniform(-self.half_length, self.half_length,
                                            size=(K, self.n_candidates))
            cand[wi, :, :, 1] = rng.uniform(-self.half_width, self.half_width,
                                            size=(K, self.n_candidates))
            noise_val[wi] = rng.normal(0.0, 1.0, size=(K, self.n_candidates))
            noise_p1[wi] = rng.normal(0.0, 1.0, size=(K, 2))
            noise_v1[wi] = rng.normal(0.0, 1.0, size=(K, 2))

        # possession: noisy nearest-to-ball assignment
        dist_ball = np.linalg.norm(pos - ball[:, None, :], axis=-1)
        poss_score = dist_ball + (1.0 - s.decision) * C.HEURISTIC_DECISION_NOISE * noise_poss
        owner = np.argmin(poss_score, axis=1)         # (W,)

        # keep the current destination in the candidate pool (hysteresis)
        cand[:, :, 0, :] = np.where(self._plans["fresh"][worlds][..., None],
                                    self._plans["dest"][worlds], cand[:, :, 0, :])
        defending = np.sign(self.own_goal[0]) * ball[:, 0] > 0
        scores = candidate_values(cand, ball, pos, self.target_goal, self.own_goal,
                                  self.half_length, self.half_width,
                                  self.agent_radius, defending.astype(np.float64),
                                  self.value_weights)
        scores += (1.0 - s.decision) * C.HEURISTIC_DECISION_NOISE * noise_val
        best = np.argmax(scores, axis=-1)             # (W, K)
        rows = np.arange(W)[:, None]
        cols = np.arange(K)[None, :]
        dest = cand[rows, cols, best]                 # (W, K, 2)

        p_noise = (1.0 - s.precision) * C.HEURISTIC_PRECISION_POS_NOISE * noise_p1
        v_noise = (1.0 - s.precision) * C.HEURISTIC_PRECISION_VEL_NOISE * noise_v1

        # dribbler: end at the ball (leading slightly goalward so the push
        # connects), terminal velocity toward the target goal
        to_goal = self.target_goal[None, :] - ball
        to_goal = to_goal / np.maximum(np.linalg.norm(to_goal, axis=-1, keepdims=True), 1e-12)
        own_mask = (np.arange(K)[None, :] == owner[:, None])
        dribble_point = ball[:, None, :] + 0.05 * to_goal[:, None, :]
        p1 = np.where(own_mask[..., None], dribble_point, dest) + p_noise
        v1 = np.where(own_mask[..., None], to_goal[:, None, :] * cmd_speed, 0.0) + v_noise

        dists = np.linalg.norm(p1 - pos, axis=-1)
        duration = np.maximum(dists / cmd_speed, 2 * self.dt)

        pl = self._plans
        pl["p0"][worlds] = pos
        pl["v0"][worlds] = vel
        pl["p1"][worlds] = p1
        pl["v1"][worlds] = v1
        pl["duration"][worlds] = duration
        pl["start"][worlds] = state.t[worlds][:, None]
        pl["dest"][worlds] = np.where(own_mask[..., None], pl["dest"][worlds], dest)
        pl["owner"][worlds] = owner
        pl["noise_p1"][worlds] = p_noise
        pl["noise_v1"][worlds] = v_noise
        pl["fresh"][worlds] = True

    def _refresh_dribbler(self, state: WorldState) -> None:
        """Re-aim the in-possession segment at the live ball every step."""
        pl = self._plans
        B = state.batch
        rows = np.arange(B)
        owner = pl["owner"]
        ball = state.pos[:, self.ball]
        to_goal = self.target_goal[None, :] - ball
        to_goal = to_goal / np.maximum(np.linalg.norm(to_goal, axis=-1, keepdims=True), 1e-12)
        cmd_speed = max(self.strengths.speed * self.base_speed, 1e-3)
        own_pos = state.pos[rows, self.idx[owner]]
        to_ball = ball - own_pos
        d_ball = np.linalg.norm(to_ball, axis=-1, keepdims=True)
        aligned = np.sum(to_ball * to_goal, axis=-1, keepdims=True) > 0.6 * d_ball
        # line up behind the ball first, then drive through it goalward
        aim = np.where(aligned, ball + 0.05 * to_goal, ball - 0.1 * to_goal)
        p1 = aim + pl["noise_p1"][rows, owner]
        v1 = np.where(aligned, to_goal * cmd_speed, 0.0) + pl["noise_v1"][rows, owner]
        dist = np.linalg.norm(p1 - own_pos, axis=-1)
        duration = np.maximum(dist / cmd_speed, 2 * self.dt)
        elapsed = (state.t - pl["start"][rows, owner]) * self.dt
        pl["p1"][rows, owner] = p1
        pl["v1"][rows, owner] = v1
        # keep the tracking phase consistent with the remaining distance
        pl["duration"][rows, owner] = np.maximum(duration + elapsed,
                                                 elapsed + 2 * self.dt)

    def _track_all(self, state: WorldState) -> np.ndarray:
        pl = self._plans
        pos = state.pos[:, self.idx]
        vel = state.vel[:, self.idx]
        elapsed = (state.t[:, None] - pl["start"]) * self.dt
        u = np.clip(elapsed / pl["duration"], 0.0, 1.0)
        p_ref, v_ref = _hermite(pl["p0"], pl["v0"], pl["p1"], pl["v1"],
                                pl["duration"][..., None], u)
        force = C.HEURISTIC_KP * (p_ref - pos) + C.HEURISTIC_KD * (v_ref - vel)
        norm = np.linalg.norm(force, axis=-1, keepdims=True)
        scale = np.where(norm > self.f_max, self.f_max / np.maximum(norm, 1e-12), 1.0)
        return force * scale


class BallChaser:
    """Deterministic scripted team: line up behind the ball, push through it.

    Far from the ball the agent steers to a point behind it (relative to
    the goal); once roughly in line it drives at a point just past the
    ball's center, so the contact push carries the ball goalward.
    """

    def __init__(self, agent_indices, ball_index: int, target_goal,
                 f_max: float, standoff: float = 0.08, lead: float = 0.03,
                 kp: float = 6.0, kd: float = 1.0):
        self.idx = np.asarray(agent_indices, dtype=np.int64)
        self.ball = ball_index
        self.target_goal = np.asarray(target_goal, dtype=np.float64)
        self.f_max = f_max
        self.standoff = standoff
        self.lead = lead
        self.kp = kp
        self.kd = kd

    def act(self, state: WorldState) -> np.ndarray:
        pos = state.pos[:, self.idx]
        vel = state.vel[:, self.idx]
        ball = state.pos[:, None, self.ball]
        to_goal = self.target_goal - ball
        to_goal = to_goal / np.maximum(np.linalg.norm(to_goal, axis=-1, keepdims=True), 1e-12)
        to_ball = ball - pos
        dist = np.linalg.norm(to_ball, axis=-1, keepdims=True)
        aligned = np.sum(to_ball * to_goal, axis=-1, keepdims=True) > 0.6 * dist
        desired = np.where(aligned, ball + self.lead * to_goal,
                           ball - self.standoff * to_goal)
        force = self.kp * (desired - pos) - self.kd * vel
        norm = np.linalg.norm(force, axis=-1, keepdims=True)
        scale = np.where(norm > self.f_max, self.f_max / np.maximum(norm, 1e-12), 1.0)
        return force * scale


# -- curriculum ---------------------------------------------------------------


@dataclass(frozen=True)
class CurriculumSchedule:
    """Piecewise-linear opponent-strength annealing over training frames."""

    breakpoints: tuple  # ((frame, Strengths), ...) sorted by frame

    def __post_init__(self):
        if not self.breakpoints:
            raise ConfigError("curriculum needs at least one breakpoint")
        frames = [f for f, _ in self.breakpoints]
        if sorted(frames) != frames:
            raise ConfigError("curriculum breakpoints must be sorted by frame")

    @staticmethod
    def parse(text: str) -> "CurriculumSchedule":
        """Parse 'frame:speed,decision,precision;frame:...' into a schedule."""
        points = []
        for part in text.split(";"):
            part = part.strip()
            if not part:
                continue
            try:
                frame_txt, vals = part.split(":")
                s, d, p = (float(x) for x in vals.split(","))
                points.append((int(float(frame_txt)), Strengths(s, d, p)))
            except (ValueError, ConfigError) as e:
                raise ConfigError(f"bad curriculum segment {part!r}: {e}") from e
        return CurriculumSchedule(tuple(points))


def curriculum_strengths(frames: int, schedule: CurriculumSchedule) -> Strengths:
    """Interpolated strengths at a cumulative frame count."""
    if frames < 0:
        raise ConfigError(f"frame count must be >= 0, got {frames}")
    pts = schedule.breakpoints
    if frames <= pts[0][0]:
        return pts[0][1]
    if frames >= pts[-1][0]:
        return pts[-1][1]
    for (f0, s0), (f1, s1) in zip(pts, pts[1:]):
        if f0 <= frames <= f1:
            if f1 == f0:
                return s1
            w = (frames - f0) / (f1 - f0)
            return Strengths(
                s0.speed + w * (s1.speed - s0.speed),
                s0.decision + w * (s1.decision - s0.decision),
                s0.precision + w * (s1.precision - s0.precision),
            )
    return pts[-1][1]


def opponents_active(frames: int, schedule: CurriculumSchedule) -> bool:
    """Opponents join the game once the interpolated strengths leave zero."""
    s = curriculum_strengths(frames, schedule)
    return not s.all_zero()

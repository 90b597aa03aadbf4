"""Deterministic batched 2D simulation: discs, static boxes, rigid links.

A world batch holds B independent worlds over a fixed entity roster.
Dynamics per 0.1 s step: velocity damping, semi-implicit Euler on the sum
of action, contact, and joint forces, a hard per-entity speed clamp, then
position integration and exact joint-length projection.  Contacts are
penalty spring-dampers on overlap depth (soft, repulsive only).

Determinism: stepping draws no randomness; per-world Philox streams are
consumed only by resets and controllers, so world k evolves identically
regardless of batch size.  All reductions are per-pair loops over a fixed
pair list, which keeps results bit-identical across batch layouts.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import constants as C
from .errors import NonFiniteError, SpawnError

FAR_AWAY = 1e6  # parking spot for inactive boxes/entities


@dataclass(frozen=True)
class EntitySpec:
    name: str
    radius: float
    mass: float
    max_speed: float = np.inf
    team: int = -1
    drag: float = C.DEFAULT_DRAG
    has_heading: bool = False


@dataclass(frozen=True)
class JointSpec:
    a: int
    b: int
    rest_length: float


class WorldSpec:
    """Static description of a world: entities, joints, contact constants."""

    def __init__(self, entities, joints=(), collision_pairs=(), n_boxes=0,
                 ball_index=None, dt=C.DT,
                 contact_stiffness=C.CONTACT_STIFFNESS,
                 contact_damping=C.CONTACT_DAMPING,
                 joint_stiffness=C.JOINT_STIFFNESS,
                 kick_range=C.KICK_RANGE, kick_cone=C.KICK_CONE_HALF_ANGLE,
                 kick_impulse_gain=C.KICK_IMPULSE_GAIN):
        self.entities = tuple(entities)
        self.joints = tuple(joints)
        self.collision_pairs = tuple(collision_pairs)
        self.n_boxes = n_boxes
        self.ball_index = ball_index
        self.dt = dt
        self.contact_stiffness = contact_stiffness
        self.contact_damping = contact_damping
        self.joint_stiffness = joint_stiffness
        self.kick_range = kick_range
        self.kick_cone = kick_cone
        self.kick_impulse_gain = kick_impulse_gain

        self.n_entities = len(self.entities)
        self.radii = np.array([e.radius for e in self.entities])
        self.masses = np.array([e.mass for e in self.entities])
        self.max_speeds = np.array([e.max_speed for e in self.entities])
        self.drags = np.array([e.drag for e in self.entities])
        self.teams = np.array([e.team for e in self.entities])
        self.heading_mask = np.array([e.has_heading for e in self.entities])
        for e in self.entities:
            if e.radius <= 0 or e.mass <= 0:
                raise ValueError(f"entity {e.name}: radius and mass must be > 0")


@dataclass
class WorldState:
    """Batched dynamic state; `rng` holds one Philox stream per world."""

    pos: np.ndarray          # (B, E, 2)
    vel: np.ndarray          # (B, E, 2)
    heading: np.ndarray      # (B, E)
    boxes: np.ndarray        # (B, NB, 4): cx, cy, hx, hy
    kinematic: np.ndarray    # (B, E) bool: immovable but collidable
    collidable: np.ndarray   # (B, E) bool: participates in contacts
    t: np.ndarray            # (B,) steps since reset
    rng: list = field(default_factory=list)

    @property
    def batch(self) -> int:
        return self.pos.shape[0]

    def copy(self) -> "WorldState":
        return WorldState(self.pos.copy(), self.vel.copy(), self.heading.copy(),
                          self.boxes.copy(), self.kinematic.copy(),
                          self.collidable.copy(), self.t.copy(), self.rng)


def make_state(spec: WorldSpec, batch: int, seed: int) -> WorldState:
    """Zeroed state with decorrelated per-world random streams."""
    E, NB = spec.n_entities, spec.n_boxes
    rngs = [
        np.random.Generator(np.random.Philox(
            np.random.SeedSequence(entropy=seed, spawn_key=(k,))))
        for k in range(batch)
    ]
    boxes = np.full((batch, NB, 4), FAR_AWAY)
    if NB:
        boxes[:, :, 2:] = 0.0
    return WorldState(
        pos=np.zeros((batch, E, 2)),
        vel=np.zeros((batch, E, 2)),
        heading=np.zeros((batch, E)),
        boxes=boxes,
        kinematic=np.zeros((batch, E), dtype=bool),
        collidable=np.ones((batch, E), dtype=bool),
        t=np.zeros(batch, dtype=np.int64),
        rng=rngs,
    )


# -- contact forces ----------------------------------------------------------


def _pair_forces(spec: WorldSpec, state: WorldState, forces: np.ndarray) -> None:
    k, c = spec.contact_stiffness, spec.contact_damping
    for i, j in spec.collision_pairs:
        d = state.pos[:, i] - state.pos[:, j]
        dist = np.sqrt(np.sum(d * d, axis=-1))
        overlap = spec.radii[i] + spec.radii[j] - dist
        active = (overlap > 0) & state.collidable[:, i] & state.collidable[:, j]
        if not active.any():
            continue
        n = d / np.maximum(dist, 1e-12)[:, None]
        vn = np.sum((state.vel[:, i] - state.vel[:, j]) * n, axis=-1)
        fmag = np.where(active, np.maximum(0.0, k * overlap - c * vn), 0.0)
        f = fmag[:, None] * n
        forces[:, i] += f
        forces[:, j] -= f


def _box_forces(spec: WorldSpec, state: WorldState, forces: np.ndarray) -> None:
    if spec.n_boxes == 0:
        return
    k, c = spec.contact_stiffness, spec.contact_damping
    for e in range(spec.n_entities):
        p = state.pos[:, e, :]                           # (B, 2)
        rel = p[:, None, :] - state.boxes[:, :, :2]      # (B, NB, 2)
        half = state.boxes[:, :, 2:]                     # (B, NB, 2)
        clamped = np.clip(rel, -half, half)
        delta = rel - clamped                            # zero when inside
        dist = np.sqrt(np.sum(delta * delta, axis=-1))   # (B, NB)
        inside = dist == 0.0
        # Outside: push along delta.  Inside: push along the axis of least
        # penetration, away from the box center.
        n = np.where(dist[..., None] > 0, delta / np.maximum(dist, 1e-12)[..., None], 0.0)
        pen_axis = half - np.abs(rel)                    # (B, NB, 2)
        use_x = pen_axis[..., 0] <= pen_axis[..., 1]
        sign = np.sign(np.where(np.abs(rel) > 0, rel, 1.0))
        n_in = np.where(use_x[..., None],
                        np.stack([sign[..., 0], np.zeros_like(sign[..., 0])], -1),
                        np.stack([np.zeros_like(sign[..., 1]), sign[..., 1]], -1))
        n = np.where(inside[..., None], n_in, n)
        depth = np.where(inside, spec.radii[e] + np.minimum(pen_axis[..., 0], pen_axis[..., 1]),
                         spec.radii[e] - dist)
        active = (depth > 0) & state.collidable[:, e, None]
        if not active.any():
            continue
        vn = np.sum(state.vel[:, e, None, :] * n, axis=-1)
        fmag = np.where(active, np.maximum(0.0, k * depth - c * vn), 0.0)
        forces[:, e] += np.sum(fmag[..., None] * n, axis=1)


def _joint_forces(spec: WorldSpec, state: WorldState, forces: np.ndarray) -> None:
    for j in spec.joints:
        d = state.pos[:, j.a] - state.pos[:, j.b]
        dist = np.sqrt(np.sum(d * d, axis=-1))
        n = d / np.maximum(dist, 1e-12)[:, None]
        f = -spec.joint_stiffness * (dist - j.rest_length)[:, None] * n
        forces[:, j.a] += f
        forces[:, j.b] -= f


def _project_joints(spec: WorldSpec, state: WorldState) -> None:
    for j in spec.joints:
        wa = np.where(state.kinematic[:, j.a], 0.0, 1.0 / spec.masses[j.a])
        wb = np.where(state.kinematic[:, j.b], 0.0, 1.0 / spec.masses[j.b])
        wsum = wa + wb
        ok = wsum > 0
        d = state.pos[:, j.a] - state.pos[:, j.b]
        dist = np.sqrt(np.sum(d * d, axis=-1))
        n = d / np.maximum(dist, 1e-12)[:, None]
        err = np.where(ok, dist - j.rest_length, 0.0)
        state.pos[:, j.a] -= n * (err * wa / np.maximum(wsum, 1e-12))[:, None]
        state.pos[:, j.b] += n * (err * wb / np.maximum(wsum, 1e-12))[:, None]
        vr = np.sum((state.vel[:, j.a] - state.vel[:, j.b]) * n, axis=-1)
        vr = np.where(ok, vr, 0.0)
        state.vel[:, j.a] -= n * (vr * wa / np.maximum(wsum, 1e-12))[:, None]
        state.vel[:, j.b] += n * (vr * wb / np.maximum(wsum, 1e-12))[:, None]


def _clamp_speeds(spec: WorldSpec, state: WorldState) -> None:
    speed = np.sqrt(np.sum(state.vel * state.vel, axis=-1))
    limit = spec.max_speeds[None, :]
    with np.errstate(invalid="ignore"):
        factor = np.where(speed > limit, limit / np.maximum(speed, 1e-300), 1.0)
    state.vel *= factor[..., None]


def apply_kicks(spec: WorldSpec, state: WorldState, power: np.ndarray) -> np.ndarray:
    """Resolve kick requests; only the strictly closest requester connects.

    Returns a (B,) bool array marking worlds where a kick took effect.
    Out-of-range or losing kicks are silent no-ops.
    """
    bi = spec.ball_index
    ball_pos = state.pos[:, bi]
    rel = ball_pos[:, None, :] - state.pos            # (B, E, 2)
    dist = np.sqrt(np.sum(rel * rel, axis=-1))
    direction = np.stack([np.cos(state.heading), np.sin(state.heading)], axis=-1)
    along = np.sum(rel * direction, axis=-1)
    cos_ang = along / np.maximum(dist, 1e-12)
    p = np.clip(power, 0.0, 1.0)
    eligible = ((p > 0) & spec.heading_mask[None, :] & state.collidable
                & (dist <= spec.kick_range) & (cos_ang >= np.cos(spec.kick_cone)))
    dist_masked = np.where(eligible, dist, np.inf)
    min_dist = dist_masked.min(axis=1)
    n_at_min = np.sum(dist_masked == min_dist[:, None], axis=1)
    valid = np.isfinite(min_dist) & (n_at_min == 1)
    if not valid.any():
        return valid
    winner = np.argmin(dist_masked, axis=1)
    rows = np.arange(state.batch)
    dv = (spec.kick_impulse_gain * p[rows, winner] / spec.masses[bi])[:, None] \
        * direction[rows, winner]
    state.vel[:, bi] = np.where(valid[:, None], state.vel[:, bi] + dv, state.vel[:, bi])
    speed = np.sqrt(np.sum(state.vel[:, bi] ** 2, axis=-1))
    limit = spec.max_speeds[bi]
    factor = np.where(speed > limit, limit / np.maximum(speed, 1e-300), 1.0)
    state.vel[:, bi] *= factor[:, None]
    return valid


def kick(spec: WorldSpec, state: WorldState, agent: int, power: float) -> np.ndarray:
    """Single-agent kick along the agent's current heading (batch-wide)."""
    arr = np.zeros((state.batch, spec.n_entities))
    arr[:, agent] = power
    return apply_kicks(spec, state, arr)


def step(spec: WorldSpec, state: WorldState, forces: np.ndarray,
         rot_rate: np.ndarray | None = None,
         kick_power: np.ndarray | None = None) -> WorldState:
    """Advance every world one control step; pure in (state, actions)."""
    s = state.copy()
    total = np.where(s.kinematic[..., None], 0.0, np.asarray(forces, dtype=np.float64))
    total = total.copy()
    _pair_forces(spec, s, total)
    _box_forces(spec, s, total)
    _joint_forces(spec, s, total)
    total = np.where(s.kinematic[..., None], 0.0, total)

    s.vel = s.vel * (1.0 - spec.drags[None, :, None]) \
        + total / spec.masses[None, :, None] * spec.dt
    _clamp_speeds(spec, s)
    s.vel = np.where(s.kinematic[..., None], 0.0, s.vel)
    s.pos = s.pos + s.vel * spec.dt
    _project_joints(spec, s)
    _clamp_speeds(spec, s)
    if rot_rate is not None:
        s.heading = s.heading + np.where(spec.heading_mask[None, :],
                                         rot_rate, 0.0) * spec.dt
    if kick_power is not None and spec.ball_index is not None:
        apply_kicks(spec, s, kick_power)
    s.t = s.t + 1

    if not (np.isfinite(s.pos).all() and np.isfinite(s.vel).all()):
        bad = ~(np.isfinite(s.pos).all(axis=-1) & np.isfinite(s.vel).all(axis=-1))
        b, e = np.argwhere(bad)[0]
        raise NonFiniteError(
            f"non-finite state for entity {spec.entities[e].name!r} in world {b}"
        )
    return s


def mirror_state_y(spec: WorldSpec, state: WorldState) -> WorldState:
    """Reflect a state across the x-axis (negate y components)."""
    s = state.copy()
    s.pos = s.pos * np.array([1.0, -1.0])
    s.vel = s.vel * np.array([1.0, -1.0])
    s.heading = -s.heading
    s.boxes = s.boxes.copy()
    s.boxes[:, :, 1] *= -1.0
    return s


def sample_positions(rng: np.random.Generator, n: int, low, high, radii,
                     boxes: np.ndarray | None = None,
                     existing: np.ndarray | None = None,
                     existing_radii=None, max_tries: int = 100) -> np.ndarray:
    """Rejection-sample n non-overlapping disc centers in an axis box."""
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    radii = np.broadcast_to(np.asarray(radii, dtype=np.float64), (n,))
    placed = [] if existing is None else [np.asarray(existing[k]) for k in range(len(existing))]
    placed_r = [] if existing_radii is None else list(np.broadcast_to(existing_radii, (len(placed),)))
    out = np.zeros((n, 2))
    for k in range(n):
        for attempt in range(max_tries):
            p = rng.uniform(low, high)
            ok = True
            for q, rq in zip(placed, placed_r):
                if np.sum((p - q) ** 2) < (radii[k] + rq) ** 2:
                    ok = False
                    break
            if ok and boxes is not None and len(boxes):
                rel = p[None, :] - boxes[:, :2]
                clamped = np.clip(rel, -boxes[:, 2:], boxes[:, 2:])
                d = np.sqrt(np.sum((rel - clamped) ** 2, axis=-1))
                inside = np.all(np.abs(rel) <= boxes[:, 2:], axis=-1)
                if np.any(inside) or np.any(d < radii[k]):
                    ok = False
            if ok:
                out[k] = p
                placed.append(p)
                placed_r.append(radii[k])
                break
        else:
            raise SpawnError(f"could not place entity {k} after {max_tries} tries")
    return out


# -- trajectory dumps --------------------------------------------------------

_FRAME_HEADER = struct.Struct("<I")


class TrajectoryWriter:
    """Streams one world's frames to a binary file plus a JSON manifest."""

    def __init__(self, path, spec: WorldSpec, record_actions: bool = False):
        self.path = Path(path)
        self.spec = spec
        self.record_actions = record_actions
        self._file = open(self.path, "wb")
        self.frame_count = 0
        self._boxes = None

    def append(self, state: WorldState, world: int = 0,
               actions: np.ndarray | None = None) -> None:
        if self._boxes is None:
            self._boxes = state.boxes[world].copy()
        E = self.spec.n_entities
        rec = np.zeros((E, 5), dtype="<f4")
        rec[:, 0:2] = state.pos[world]
        rec[:, 2:4] = state.vel[world]
        rec[:, 4] = state.heading[world]
        self._file.write(_FRAME_HEADER.pack(int(state.t[world])))
        self._file.write(rec.tobytes())
        if self.record_actions:
            a = np.zeros((E, 2), dtype="<f4")
            if actions is not None:
                a[:] = actions
            self._file.write(a.tobytes())
        self.frame_count += 1

    def close(self) -> Path:
        self._file.close()
        manifest = {
            "dt": self.spec.dt,
            "frame_count": self.frame_count,
            "has_actions": self.record_actions,
            "entities": [
                {"name": e.name, "radius": e.radius, "team": e.team,
                 "has_heading": e.has_heading}
                for e in self.spec.entities
            ],
            "boxes": [] if self._boxes is None else self._boxes.tolist(),
        }
        mpath = self.path.with_suffix(".json")
        with open(mpath, "w") as f:
            json.dump(manifest, f, indent=2)
            f.write("\n")
        return mpath


def read_trajectory(path):
    """Load a dump; returns (manifest, frames dict of stacked arrays)."""
    path = Path(path)
    with open(path.with_suffix(".json")) as f:
        manifest = json.load(f)
    E = len(manifest["entities"])
    has_actions = manifest.get("has_actions", False)
    rec_bytes = _FRAME_HEADER.size + E * 5 * 4 + (E * 2 * 4 if has_actions else 0)
    raw = path.read_bytes()
    n = len(raw) // rec_bytes
    steps = np.zeros(n, dtype=np.int64)
    pos = np.zeros((n, E, 2))
    vel = np.zeros((n, E, 2))
    heading = np.zeros((n, E))
    actions = np.zeros((n, E, 2)) if has_actions else None
    for k in range(n):
        off = k * rec_bytes
        (steps[k],) = _FRAME_HEADER.unpack_from(raw, off)
        body = np.frombuffer(raw, dtype="<f4", count=E * 5,
                             offset=off + _FRAME_HEADER.size).reshape(E, 5)
        pos[k] = body[:, 0:2]
        vel[k] = body[:, 2:4]
        heading[k] = body[:, 4]
        if has_actions:
            a = np.frombuffer(raw, dtype="<f4", count=E * 2,
                              offset=off + _FRAME_HEADER.size + E * 5 * 4)
            actions[k] = a.reshape(E, 2)
    frames = {"step": steps, "pos": pos, "vel": vel, "heading": heading}
    if has_actions:
        frames["actions"] = actions
    return manifest, frames

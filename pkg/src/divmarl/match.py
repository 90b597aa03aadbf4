"""Head-to-head soccer evaluation and match statistics.

Matches run batch-parallel: every world in the batch plays exactly one
match (stat collection for a world stops at its first episode end).  To
cancel pitch asymmetry, half the matches are played with each checkpoint
on each side.  Possession is attributed per step to the team of the
closest agent to the ball; "touches" count contact onsets after at least
one non-contact step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import constants as C
from .errors import CheckpointError
from .heuristic import BallChaser, SoccerHeuristic, Strengths
from .models import PolicyGroup
from .sim import TrajectoryWriter
from .tasks.soccer import SoccerTask

HEATMAP_GRID = (30, 20)  # cells along x, y


@dataclass
class MatchStats:
    """Accumulated two-team statistics; merge is exact and associative."""

    matches: int = 0
    wins: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=np.int64))
    draws: int = 0
    goals: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=np.int64))
    possession_steps: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=np.int64))
    presence_samples: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=np.int64))
    presence_in_opp_half: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=np.int64))
    touches: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=np.int64))
    steps: int = 0
    heatmap: np.ndarray = field(
        default_factory=lambda: np.zeros(HEATMAP_GRID, dtype=np.int64))

    def merge(self, other: "MatchStats") -> "MatchStats":
        out = MatchStats()
        out.matches = self.matches + other.matches
        out.wins = self.wins + other.wins
        out.draws = self.draws + other.draws
        out.goals = self.goals + other.goals
        out.possession_steps = self.possession_steps + other.possession_steps
        out.presence_samples = self.presence_samples + other.presence_samples
        out.presence_in_opp_half = self.presence_in_opp_half + other.presence_in_opp_half
        out.touches = self.touches + other.touches
        out.steps = self.steps + other.steps
        out.heatmap = self.heatmap + other.heatmap
        return out

    def possession_fraction(self) -> np.ndarray:
        total = max(1, self.possession_steps.sum())
        return self.possession_steps / total

    def normalized_score(self, team: int = 0) -> float:
        """(wins - losses) / matches in [-1, 1]; draws contribute zero."""
        if self.matches == 0:
            return 0.0
        other = 1 - team
        return float(self.wins[team] - self.wins[other]) / self.matches

    def to_dict(self) -> dict:
        pf = self.possession_fraction()
        pres = self.presence_in_opp_half / np.maximum(1, self.presence_samples)
        return {
            "matches": self.matches,
            "wins": self.wins.tolist(),
            "draws": self.draws,
            "losses": [int(self.wins[1]), int(self.wins[0])],
            "goals": self.goals.tolist(),
            "possession_fraction": pf.tolist(),
            "opponent_half_presence": pres.tolist(),
            "ball_touches": self.touches.tolist(),
            "steps": self.steps,
            "normalized_score_team0": self.normalized_score(0),
        }

    def write_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    def write_heatmap_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("# ball-position counts, rows = y cells, columns = x cells\n")
            for row in self.heatmap.T:
                f.write(",".join(str(int(v)) for v in row) + "\n")


class PolicySideController:
    """Drives one soccer side from a policy group (obs in that side's frame)."""

    def __init__(self, group: PolicyGroup, side: str, deterministic: bool,
                 gen: torch.Generator | None = None):
        self.group = group
        self.side = side
        self.deterministic = deterministic
        self.gen = gen

    def act(self, task: SoccerTask) -> np.ndarray:
        obs = task._side_obs(self.side)
        ctx_np = task.context({"team": obs}, side=self.side)["team"] \
            if task.context_mode == "concat" else obs
        ctx, _ = self.group.context_tensors(task, obs, ctx_np, self.side)
        policy = self.group.policy
        scale = policy.scale_factor()
        with torch.no_grad():
            means = []
            for i in range(policy.n_agents):
                m, s = policy.compose_torch(i, ctx[i], scale)
                means.append(m.double())
            mean = torch.stack(means)
            if self.deterministic:
                action = mean
            else:
                eps = torch.randn(mean.shape, generator=self.gen, dtype=torch.float64)
                action = mean + s.double() * eps
        return action.numpy()


class ChaserSideController:
    """Scripted ball-chaser team for one side."""

    def __init__(self, task: SoccerTask, side: str):
        idx = task.blue_idx if side == "blue" else task.red_idx
        goal_x = task.half_len if side == "blue" else -task.half_len
        self.side = side
        self.chaser = BallChaser(idx, task.ball_index, (goal_x, 0.0),
                                 f_max=C.AGENT_FORCE_GAIN)

    def act(self, task: SoccerTask) -> np.ndarray:
        forces = self.chaser.act(task.state)        # world frame, Newtons
        act = np.moveaxis(forces, 0, 1) / C.AGENT_FORCE_GAIN
        if self.side == "red":
            act = act * np.array([-1.0, 1.0])       # to the mirrored frame
        if task.kicking:
            pad = np.zeros((*act.shape[:-1], 2))
            act = np.concatenate([act, pad], axis=-1)
        return act


def _ball_cell(task: SoccerTask, pos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx, gy = HEATMAP_GRID
    fx = (pos[:, 0] + task.half_len) / (2 * task.half_len)
    fy = (pos[:, 1] + task.half_wid) / (2 * task.half_wid)
    ix = np.clip((fx * gx).astype(np.int64), 0, gx - 1)
    iy = np.clip((fy * gy).astype(np.int64), 0, gy - 1)
    return ix, iy


def play_soccer_matches(task: SoccerTask, blue_controller, red_controller,
                        n_matches: int, seed: int,
                        team_of_side=(0, 1), stats: MatchStats | None = None,
                        dump_path=None, max_parallel: int = 256) -> MatchStats:
    """Run n matches; `team_of_side[0]` is the stats team playing blue."""
    stats = stats if stats is not None else MatchStats()
    remaining = n_matches
    round_idx = 0
    while remaining > 0:
        B = min(remaining, max_parallel)
        task.reset(B, seed + 7717 * round_idx)
        writer = None
        if dump_path is not None and round_idx == 0:
            writer = TrajectoryWriter(dump_path, task.spec)
        _run_round(task, blue_controller, red_controller, team_of_side, stats, writer)
        if writer is not None:
            writer.close()
            dump_path = None
        remaining -= B
        round_idx += 1
    return stats


def _run_round(task: SoccerTask, blue_controller, red_controller,
               team_of_side, stats: MatchStats, writer) -> None:
    B = task.batch
    live = np.ones(B, dtype=bool)
    prev_touch = np.zeros((B, 2 * task.team_size), dtype=bool)
    agent_idx = np.concatenate([task.blue_idx, task.red_idx])
    side_of_agent = np.array([0] * task.team_size + [1] * task.team_size)
    for _ in range(task.horizon + 1):
        if not live.any():
            break
        actions = {"team": blue_controller.act(task)}
        if red_controller is not None:
            actions["opponents"] = red_controller.act(task)
        if writer is not None:
            writer.append(task.state, 0)
        outcome = task.step(actions)
        st = task.state
        ball = st.pos[:, task.ball_index]

        # possession: team of the closest agent (parked agents are far away)
        d = np.linalg.norm(st.pos[:, agent_idx] - ball[:, None, :], axis=-1)
        closest_side = side_of_agent[np.argmin(d, axis=1)]
        for side in (0, 1):
            hit = live & (closest_side == side)
            stats.possession_steps[team_of_side[side]] += int(hit.sum())

        # presence of agents in the opponent half (x > 0 for blue)
        x = st.pos[:, agent_idx, 0]
        in_opp = np.where(side_of_agent[None, :] == 0, x > 0, x < 0)
        present = np.abs(x) < task.half_len + 1.0
        for side in (0, 1):
            sel = (side_of_agent == side) & np.ones_like(side_of_agent, dtype=bool)
            stats.presence_samples[team_of_side[side]] += int(
                (live[:, None] & present[:, sel]).sum())
            stats.presence_in_opp_half[team_of_side[side]] += int(
                (live[:, None] & present[:, sel] & in_opp[:, sel]).sum())

        # touch onsets
        reach = task.spec.radii[agent_idx] + C.BALL_RADIUS
        touching = d <= reach[None, :]
        onset = touching & ~prev_touch & live[:, None]
        for side in (0, 1):
            stats.touches[team_of_side[side]] += int(onset[:, side_of_agent == side].sum())
        prev_touch = touching

        ix, iy = _ball_cell(task, ball)
        np.add.at(stats.heatmap, (ix[live], iy[live]), 1)
        stats.steps += int(live.sum())

        finished = outcome.done & live
        if finished.any():
            for b in np.flatnonzero(finished):
                scored = int(outcome.info["goal_blue"][b]) - int(outcome.info["goal_red"][b])
                stats.matches += 1
                if scored > 0:
                    stats.wins[team_of_side[0]] += 1
                    stats.goals[team_of_side[0]] += 1
                elif scored < 0:
                    stats.wins[team_of_side[1]] += 1
                    stats.goals[team_of_side[1]] += 1
                else:
                    stats.draws += 1
            live &= ~finished


def match_policies(ckpt_a: PolicyGroup, meta_a: dict, ckpt_b: PolicyGroup,
                   meta_b: dict, n_matches: int, seed: int,
                   deterministic: bool = False, dump_path=None) -> MatchStats:
    """Checkpoint A vs checkpoint B with side swapping; team 0 is A."""
    for key in ("task_config",):
        ta = meta_a.get(key, {})
        tb = meta_b.get(key, {})
        if {k: v for k, v in ta.items() if k.startswith("task.")} != \
                {k: v for k, v in tb.items() if k.startswith("task.")}:
            raise CheckpointError("checkpoints were trained on different task variants")
    task = task_from_meta(meta_a)
    stats = MatchStats()
    gen = torch.Generator().manual_seed(seed)
    half = n_matches // 2
    if half:
        a_blue = PolicySideController(ckpt_a, "blue", deterministic, gen)
        b_red = PolicySideController(ckpt_b, "red", deterministic, gen)
        play_soccer_matches(task, a_blue, b_red, half, seed, (0, 1),
                            stats, dump_path=dump_path)
    rest = n_matches - half
    if rest:
        b_blue = PolicySideController(ckpt_b, "blue", deterministic, gen)
        a_red = PolicySideController(ckpt_a, "red", deterministic, gen)
        play_soccer_matches(task, b_blue, a_red, rest, seed + 1, (1, 0), stats)
    return stats


def task_from_meta(meta: dict) -> SoccerTask:
    tc = meta.get("task_config", {})
    return SoccerTask(
        team_size=tc.get("task.soccer.team_size", 2),
        kicking=tc.get("task.soccer.kicking", False),
        embodiments=tc.get("task.soccer.embodiments", "uniform"),
        spawn_mode=tc.get("task.soccer.spawn", "uniform"),
        context_mode=tc.get("task.soccer.context") or None,
        opponent_mode="external",
    )


def evaluate_soccer_score(cfg, group: PolicyGroup, n_matches: int, seed: int,
                          strengths: Strengths | None = None,
                          opponents_on: bool = True) -> float:
    """Deterministic evaluation matches against the training opponents."""
    from .training import build_task
    task = build_task(cfg)
    task.set_strengths(strengths or Strengths(1.0, 1.0, 1.0))
    task.set_opponents(opponents_on)
    blue = PolicySideController(group, "blue", deterministic=True)
    stats = play_soccer_matches(task, blue, None, n_matches, seed)
    return stats.normalized_score(0)


def play_heuristic_match(team_size: int, n_matches: int, seed: int,
                         strengths_blue: Strengths, strengths_red: Strengths,
                         dump_path=None) -> MatchStats:
    """Heuristic vs heuristic, for calibration."""
    task = SoccerTask(team_size=team_size, opponent_mode="external")

    blue_heur = SoccerHeuristic(
        task.blue_idx, task.ball_index, target_goal=(task.half_len, 0.0),
        own_goal=(-task.half_len, 0.0), half_length=task.half_len,
        half_width=task.half_wid, agent_radius=C.AGENT_RADIUS,
        base_speed=C.AGENT_MAX_SPEED, f_max=C.AGENT_FORCE_GAIN,
        strengths=strengths_blue)

    class BlueHeuristicController:
        def act(self, t):
            f = blue_heur.act(t.state)
            act = np.moveaxis(f, 0, 1) / C.AGENT_FORCE_GAIN
            if t.kicking:
                act = np.concatenate([act, np.zeros((*act.shape[:-1], 2))], axis=-1)
            return act

    class RedHeuristicController:
        def act(self, t):
            f = t.heuristic.act(t.state)  # uses the task's own red heuristic
            act = np.moveaxis(f, 0, 1) / C.AGENT_FORCE_GAIN * np.array([-1.0, 1.0])
            if t.kicking:
                act = np.concatenate([act, np.zeros((*act.shape[:-1], 2))], axis=-1)
            return act

    task.set_strengths(strengths_red)
    blue_heur_controller = BlueHeuristicController()
    red_controller = RedHeuristicController()
    return play_soccer_matches(task, blue_heur_controller, red_controller,
                               n_matches, seed, dump_path=dump_path)

"""On-policy PPO training over batched worlds.

One iteration is collect -> advantage estimation -> clipped-ratio update
-> diversity re-estimation and constraint report -> curriculum advance.
The shared policy head receives gradients from every agent, each deviation
head only from its own agent (plus scale-factor terms when gradients flow
through the rescaling).  After every update the deviation diversity is
re-estimated on the rolling context buffer, so the composed diversity
matches the target again before the next rollout.

Frames count environment steps summed over the batch (one batched step of
B worlds adds B frames).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import Config, parse_hidden, parse_windows
from .dico import (DicoPolicySet, check_constraint, refresh_snd_hat,
                   reinitialize_deviations)
from .errors import ConfigError, DeviationCollapseError, NonFiniteError
from .heuristic import CurriculumSchedule, curriculum_strengths, opponents_active
from .models import PolicyGroup, SetGnnEncoder, build_critic, load_policy_group, save_policy_group
from .tasks import TASKS, BatchedTask
from .tasks.soccer import OPP_BLOCK_DIM, SoccerTask

log = logging.getLogger("divmarl")

LOG2PI = math.log(2.0 * math.pi)

TASK_EXTRA_KEYS = {
    "soccer": ("scored",),
    "pacmen": ("foods",),
    "passage": ("success",),
    "navigate": ("success",),
    "tag": (),
}


@dataclass
class TrainingConfig:
    total_frames: int = 100_000
    frames_per_iteration: int = 10_000
    num_envs: int = 32
    minibatch_size: int = 2048
    epochs: int = 4
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.9
    lr: float = 3e-4
    entropy_coef: float = 1e-3
    value_coef: float = 1.0
    max_grad_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"discount must be in (0, 1], got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must be in [0, 1], got {self.lam}")


@dataclass
class GroupRuntime:
    """A policy group plus its optimizer and training flags."""

    group: PolicyGroup | None
    task_group_name: str
    optimizer: torch.optim.Optimizer | None
    trainable: bool = True
    # callable(task) -> (K, B, action_dim); replaces the policy when set
    controller: object = None
    freeze_after_frames: int = 0


def gaussian_logp(actions: torch.Tensor, mean: torch.Tensor,
                  std: torch.Tensor) -> torch.Tensor:
    z = (actions - mean) / std
    return (-0.5 * z * z - torch.log(std) - 0.5 * LOG2PI).sum(dim=-1)


def gaussian_entropy(log_std: torch.Tensor) -> torch.Tensor:
    return log_std.sum() + 0.5 * log_std.numel() * (1.0 + LOG2PI)


@dataclass
class TrajectoryBatch:
    """Per-group rollout storage for one iteration."""

    obs: np.ndarray       # (T, K, B, do) float32
    ctx: np.ndarray       # (T, K, B, dc) float32
    actions: np.ndarray   # (T, K, B, m)
    logp: np.ndarray      # (T, K, B) float64
    rewards: np.ndarray   # (T, K, B)
    values: np.ndarray    # (T, K, B)
    dones: np.ndarray     # (T, B) bool
    next_values: np.ndarray  # (K, B)
    raw: tuple | None = None  # encoder inputs stacked over T, or None
    frames: int = 0


def _policy_actions(rt: GroupRuntime, task, obs_np, ctx_np, side,
                    sample_gen, stochastic):
    """One step of action selection; returns numpy actions plus records."""
    policy = rt.group.policy
    ctx, raw = rt.group.context_tensors(task, obs_np, ctx_np, side)
    scale = policy.scale_factor()
    K = policy.n_agents
    with torch.no_grad():
        means, stds = [], None
        for i in range(K):
            m, s = policy.compose_torch(i, ctx[i], scale)
            means.append(m.double())
            stds = s.double()
        mean = torch.stack(means)                # (K, B, m)
        if stochastic:
            eps = torch.randn(mean.shape, generator=sample_gen, dtype=torch.float64)
            action = mean + stds * eps
        else:
            action = mean
        logp = gaussian_logp(action, mean, stds)
        obs_t = torch.as_tensor(obs_np, dtype=torch.float32)
        values = rt.group.critic.values(obs_t).double()
    return (action.numpy(), logp.numpy(), values.numpy(),
            ctx.numpy().astype(np.float32, copy=False), raw)


def collect(task: BatchedTask, runtimes: dict, n_steps: int, obs: dict, ctx: dict,
            sample_gen: torch.Generator, stochastic: bool = True):
    """Roll the batched task forward; returns batches, final obs, episodes."""
    B = task.batch
    store = {}
    episodes = []
    for t in range(n_steps):
        actions = {}
        records = {}
        for name, rt in runtimes.items():
            if rt.controller is not None:
                actions[name] = rt.controller(task)
                continue
            act, logp, values, ctx_np, raw = _policy_actions(
                rt, task, obs[name], ctx.get(name, obs[name]), "blue",
                sample_gen, stochastic)
            actions[name] = act
            records[name] = (act, logp, values, ctx_np, raw)
        outcome = task.step(actions)
        for name, rec in records.items():
            st = store.setdefault(name, {"obs": [], "ctx": [], "act": [], "logp": [],
                                         "val": [], "rew": [], "done": [], "raw": []})
            act, logp, values, ctx_np, raw = rec
            st["obs"].append(np.asarray(obs[name], dtype=np.float32))
            st["ctx"].append(ctx_np)
            st["act"].append(act)
            st["logp"].append(logp)
            st["val"].append(values)
            st["rew"].append(outcome.rewards[name])
            st["done"].append(outcome.done.copy())
            if raw is not None:
                st["raw"].append(raw)
        episodes.extend(outcome.episodes)
        obs = outcome.obs
        ctx = outcome.ctx
    batches = {}
    for name, st in store.items():
        rt = runtimes[name]
        ctx_t, raw = rt.group.context_tensors(
            task, obs[name], ctx.get(name, obs[name]), "blue")
        with torch.no_grad():
            next_values = rt.group.critic.values(
                torch.as_tensor(obs[name], dtype=torch.float32)).double().numpy()
        raw_stack = None
        if st["raw"]:
            raw_stack = tuple(
                torch.stack([step_raw[i] for step_raw in st["raw"]])
                for i in range(len(st["raw"][0])))
        batches[name] = TrajectoryBatch(
            obs=np.stack(st["obs"]), ctx=np.stack(st["ctx"]),
            actions=np.stack(st["act"]), logp=np.stack(st["logp"]),
            rewards=np.stack(st["rew"]), values=np.stack(st["val"]),
            dones=np.stack(st["done"]), next_values=next_values,
            raw=raw_stack, frames=n_steps * B)
    return batches, obs, ctx, episodes


def gae_advantages(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                   next_values: np.ndarray, gamma: float, lam: float):
    """Generalized advantages over (T, ..., B) arrays respecting dones.

    `dones[t]` marks transitions that ended an episode; bootstrapping is
    masked there, so auto-reset observations never leak across episodes.
    """
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    lastgae = np.zeros_like(rewards[0])
    for t in reversed(range(T)):
        nonterminal = 1.0 - dones[t].astype(np.float64)
        nxt = next_values if t == T - 1 else values[t + 1]
        delta = rewards[t] + gamma * nxt * nonterminal - values[t]
        lastgae = delta + gamma * lam * nonterminal * lastgae
        adv[t] = lastgae
    return adv, adv + values


def ppo_update(rt: GroupRuntime, batch: TrajectoryBatch, cfg: TrainingConfig,
               mb_gen: torch.Generator) -> dict:
    """Clipped-surrogate update; returns loss diagnostics and the constraint report."""
    policy = rt.group.policy
    critic = rt.group.critic
    K = policy.n_agents

    adv_np, ret_np = gae_advantages(batch.rewards, batch.values, batch.dones[:, None, :],
                                    batch.next_values, cfg.gamma, cfg.lam)
    adv_np = (adv_np - adv_np.mean()) / (adv_np.std() + 1e-8)

    def flat(arr):  # (T, K, B, ...) -> (K, T*B, ...)
        moved = np.moveaxis(arr, 1, 0)
        return moved.reshape(K, -1, *arr.shape[3:])

    obs = torch.as_tensor(flat(batch.obs))
    ctx = torch.as_tensor(flat(batch.ctx))
    actions = torch.as_tensor(flat(batch.actions), dtype=torch.float32)
    logp_old = torch.as_tensor(flat(batch.logp), dtype=torch.float32)
    adv = torch.as_tensor(flat(adv_np), dtype=torch.float32)
    ret = torch.as_tensor(flat(ret_np), dtype=torch.float32)
    raw = None
    if batch.raw is not None:
        # each raw tensor: (T, n, B, ...) -> (n, T*B, ...)
        raw = []
        for r in batch.raw:
            rr = r.movedim(1, 0)
            raw.append(rr.reshape(rr.shape[0], -1, *rr.shape[3:]))
        raw = tuple(raw)

    N = obs.shape[1]
    diags = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "updates": 0,
             "collapsed": False}
    for _ in range(cfg.epochs):
        perm = torch.randperm(N, generator=mb_gen)
        for start in range(0, N, cfg.minibatch_size):
            idx = perm[start:start + cfg.minibatch_size]
            if len(idx) == 0:
                continue
            if rt.group.encoder is not None:
                ctx_mb = rt.group.encoder(*(r[:, idx] for r in raw))
            else:
                ctx_mb = ctx[:, idx]
            try:
                scale = policy.scale_torch(ctx_mb.reshape(-1, ctx_mb.shape[-1]))
            except DeviationCollapseError:
                diags["collapsed"] = True
                reinitialize_deviations(policy, cfg.seed)
                if policy.buffer.size > 0:
                    refresh_snd_hat(policy)
                continue
            pi_loss = 0.0
            for i in range(K):
                mean, std = policy.compose_torch(i, ctx_mb[i], scale)
                logp = gaussian_logp(actions[i, idx], mean, std)
                ratio = torch.exp(logp - logp_old[i, idx])
                if not torch.isfinite(ratio).all():
                    raise NonFiniteError("non-finite likelihood ratio in update")
                a = adv[i, idx]
                s1 = ratio * a
                s2 = torch.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * a
                pi_loss = pi_loss - torch.minimum(s1, s2).mean()
            pi_loss = pi_loss / K
            values = critic.values(obs[:, idx])
            v_loss = ((values - ret[:, idx]) ** 2).mean()
            entropy = gaussian_entropy(policy.log_std)
            loss = pi_loss + cfg.value_coef * v_loss - cfg.entropy_coef * entropy
            rt.optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(
                [p for p in rt.group.parameters() if p.requires_grad],
                cfg.max_grad_norm)
            rt.optimizer.step()
            diags["policy_loss"] += float(pi_loss.detach())
            diags["value_loss"] += float(v_loss.detach())
            diags["entropy"] += float(entropy.detach())
            diags["updates"] += 1

    # re-estimate diversity on the rolling buffer and validate the composition
    try:
        if policy.needs_snd_hat():
            refresh_snd_hat(policy)
        report = (check_constraint(policy, policy.buffer.contents())
                  if policy.n_agents >= 2 and policy.buffer.size > 0 else None)
    except DeviationCollapseError:
        diags["collapsed"] = True
        reinitialize_deviations(policy, cfg.seed + 1)
        refresh_snd_hat(policy)
        report = check_constraint(policy, policy.buffer.contents())
    diags["report"] = report
    if diags["updates"]:
        for k in ("policy_loss", "value_loss", "entropy"):
            diags[k] /= diags["updates"]
    return diags


# -- run orchestration --------------------------------------------------------


@dataclass
class RunResult:
    run_dir: Path
    metrics_path: Path
    checkpoints: dict = field(default_factory=dict)
    final_eval_score: float = float("nan")
    frames: int = 0


def build_task(cfg: Config) -> BatchedTask:
    task_id = cfg["task.id"]
    if task_id not in TASKS:
        raise ConfigError(f"unknown task {task_id!r}; valid: {sorted(TASKS)}")
    kwargs = {}
    if task_id == "soccer":
        kwargs = dict(team_size=cfg["task.soccer.team_size"],
                      kicking=cfg["task.soccer.kicking"],
                      embodiments=cfg["task.soccer.embodiments"],
                      spawn_mode=cfg["task.soccer.spawn"],
                      context_mode=cfg["task.soccer.context"] or None)
    task = TASKS[task_id](**kwargs)
    if cfg["task.horizon"] > 0:
        task.horizon = cfg["task.horizon"]
    return task


def scripted_pursuit(task) -> np.ndarray:
    """Straight-line chasers used to pre-train the tag evader."""
    st = task.state
    red = st.pos[:, [0, 1]]
    green = st.pos[:, None, 2]
    d = green - red
    f = d / np.maximum(np.linalg.norm(d, axis=-1, keepdims=True), 1e-12)
    return np.moveaxis(f, 0, 1)


def _build_group(name: str, task: BatchedTask, cfg: Config, algorithm: str,
                 seed: int, snd_des: float, mode: str) -> PolicyGroup:
    tg = task.group(name)
    if len(tg.agents) < 2:
        snd_des, mode = 0.0, "unconstrained"  # diversity is undefined solo
    gen = torch.Generator().manual_seed(seed)
    hidden = parse_hidden(cfg["dico.hidden"])
    encoder = None
    ctx_dim = tg.ctx_dim
    meta = {"algorithm": algorithm, "obs_dim": tg.obs_dim,
            "hidden": list(hidden), "task_group": name}
    if isinstance(task, SoccerTask) and task.context_mode == "setgnn":
        core_dim = tg.obs_dim - OPP_BLOCK_DIM * task.team_size
        ctx_dim = cfg["model.context_dim"]
        encoder = SetGnnEncoder(core_dim, OPP_BLOCK_DIM, len(tg.agents), gen,
                                hidden=parse_hidden(cfg["model.encoder_hidden"]),
                                out_dim=ctx_dim)
        meta.update(core_dim=core_dim, opp_dim=OPP_BLOCK_DIM,
                    encoder_hidden=list(parse_hidden(cfg["model.encoder_hidden"])))
    policy = DicoPolicySet(ctx_dim, tg.action_dim, len(tg.agents), snd_des, mode,
                           gen, hidden=hidden,
                           buffer_capacity=cfg["dico.buffer_size"])
    policy.grad_through_scale = cfg["dico.grad_through_scale"]
    critic = build_critic(algorithm, tg.obs_dim, len(tg.agents), gen)
    return PolicyGroup(name, policy, critic, encoder, meta)


def _seed_buffer(rt: GroupRuntime, ctx_np: np.ndarray) -> None:
    policy = rt.group.policy
    policy.buffer.append(np.asarray(ctx_np, dtype=np.float64).reshape(-1, policy.ctx_dim))
    if policy.needs_snd_hat():
        refresh_snd_hat(policy)


def train(cfg: Config, run_dir: str | Path | None = None) -> RunResult:
    t0 = time.time()
    seed = cfg["run.seed"]
    torch.manual_seed(seed)
    tcfg = TrainingConfig(
        total_frames=cfg["train.total_frames"],
        frames_per_iteration=cfg["train.frames_per_iteration"],
        num_envs=cfg["train.num_envs"],
        minibatch_size=cfg["train.minibatch_size"],
        epochs=cfg["train.epochs"], clip=cfg["train.clip"],
        gamma=cfg["train.gamma"], lam=cfg["train.lam"], lr=cfg["train.lr"],
        entropy_coef=cfg["train.entropy_coef"],
        value_coef=cfg["train.value_coef"],
        max_grad_norm=cfg["train.max_grad_norm"], seed=seed)

    task = build_task(cfg)
    task_id = cfg["task.id"]
    algorithm = cfg["train.algorithm"] or task.default_algorithm

    run_dir = Path(run_dir) if run_dir is not None else _default_run_dir(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "checkpoints").mkdir(exist_ok=True)

    runtimes: dict[str, GroupRuntime] = {}
    main_group = task.groups[0].name
    for k, tg in enumerate(task.groups):
        gseed = seed * 9973 + k * 101 + 7
        if task_id == "tag" and tg.name == "red" and cfg["task.tag.red_mode"] == "pursuit":
            runtimes[tg.name] = GroupRuntime(None, tg.name, None, trainable=False,
                                             controller=scripted_pursuit)
            continue
        if task_id == "tag" and tg.name == "green":
            if cfg["task.tag.green_mode"] == "checkpoint":
                group, _ = load_policy_group(cfg["task.tag.green_checkpoint"])
                runtimes[tg.name] = GroupRuntime(group, tg.name, None, trainable=False)
                continue
            group = _build_group(tg.name, task, cfg, "ippo", gseed, 0.0, "unconstrained")
            opt = torch.optim.Adam(group.parameters(), lr=tcfg.lr)
            runtimes[tg.name] = GroupRuntime(
                group, tg.name, opt, trainable=True,
                freeze_after_frames=cfg["task.tag.green_freeze_frames"])
            continue
        group = _build_group(tg.name, task, cfg, algorithm, gseed,
                             cfg["dico.snd_des"], cfg["dico.mode"])
        opt = torch.optim.Adam(group.parameters(), lr=tcfg.lr)
        runtimes[tg.name] = GroupRuntime(group, tg.name, opt)

    sample_gen = torch.Generator().manual_seed(seed * 7919 + 13)
    mb_gen = torch.Generator().manual_seed(seed * 4409 + 29)

    schedule = CurriculumSchedule.parse(cfg["opponent.curriculum"])
    disturbance_windows = parse_windows(cfg["task.passage.disturbance"])

    iterations = max(1, tcfg.total_frames // tcfg.frames_per_iteration)
    steps_per_iter = max(1, tcfg.frames_per_iteration // tcfg.num_envs)

    if task_id == "soccer":
        task.set_strengths(curriculum_strengths(0, schedule))
        task.set_opponents(opponents_active(0, schedule))
    if task_id == "passage":
        task.set_disturbance(_in_windows(0, disturbance_windows))

    obs, ctx = task.reset(tcfg.num_envs, seed)
    for name, rt in runtimes.items():
        if rt.group is not None:
            _seed_buffer(rt, ctx.get(name, obs[name]))

    metrics_path = run_dir / "metrics.csv"
    extra_keys = TASK_EXTRA_KEYS.get(task_id, ())
    columns = (["iteration", "frames", "episodes", "mean_episode_reward",
                "measured_snd", "constraint_ok", "scale_factor",
                "opp_speed", "opp_decision", "opp_precision", "eval_score"]
               + [f"mean_{k}" for k in extra_keys])
    frames = 0
    eval_score = float("nan")
    stop = False
    checkpoints: dict[str, Path] = {}
    with open(metrics_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for it in range(iterations):
            if task_id == "soccer":
                s = curriculum_strengths(frames, schedule)
                task.set_strengths(s)
                task.set_opponents(opponents_active(frames, schedule))
            else:
                s = None
            if task_id == "passage":
                task.set_disturbance(_in_windows(it, disturbance_windows))
            for rt in runtimes.values():
                if (rt.trainable and rt.freeze_after_frames
                        and frames >= rt.freeze_after_frames):
                    rt.trainable = False

            batches, obs, ctx, episodes = collect(
                task, runtimes, steps_per_iter, obs, ctx, sample_gen)
            frames += steps_per_iter * tcfg.num_envs

            report = None
            for name, rt in runtimes.items():
                if rt.group is None or name not in batches:
                    continue
                batch = batches[name]
                # refresh the estimation window with this iteration's contexts
                rt.group.policy.buffer.append(
                    batch.ctx.reshape(-1, batch.ctx.shape[-1]).astype(np.float64))
                if rt.trainable:
                    diags = ppo_update(rt, batch, tcfg, mb_gen)
                    if name == main_group:
                        report = diags["report"]
                else:
                    if rt.group.policy.needs_snd_hat():
                        refresh_snd_hat(rt.group.policy)
                    if name == main_group and rt.group.policy.n_agents >= 2:
                        report = check_constraint(rt.group.policy,
                                                  rt.group.policy.buffer.contents())

            if (task_id == "soccer" and cfg["train.eval_interval"] > 0
                    and (it + 1) % cfg["train.eval_interval"] == 0):
                from .match import evaluate_soccer_score
                eval_score = evaluate_soccer_score(
                    cfg, runtimes[main_group].group, cfg["train.eval_matches"],
                    seed * 6151 + it, strengths=s,
                    opponents_on=opponents_active(frames, schedule))
                target = cfg["train.early_stop_score"]
                if not math.isnan(target) and eval_score > target:
                    stop = True

            ep_rewards = [e[f"return_{main_group}"] for e in episodes]
            row = [it, frames, len(episodes),
                   _fmt(np.mean(ep_rewards) if ep_rewards else float("nan")),
                   _fmt(report.measured_snd if report else float("nan")),
                   int(report.satisfied) if report else "",
                   _fmt(report.scale_factor if report else float("nan")),
                   _fmt(s.speed) if s else "", _fmt(s.decision) if s else "",
                   _fmt(s.precision) if s else "", _fmt(eval_score)]
            for k in extra_keys:
                vals = [e[k] for e in episodes if k in e]
                row.append(_fmt(np.mean(vals) if vals else float("nan")))
            writer.writerow(row)
            f.flush()

            if cfg["train.checkpoint_interval"] > 0 and \
                    (it + 1) % cfg["train.checkpoint_interval"] == 0:
                _save_all(run_dir, runtimes, cfg, algorithm, it)
            if it % 10 == 0 or it == iterations - 1:
                log.info("iter %d frames %d reward %s snd %s", it, frames,
                         row[3], row[4])
            if stop:
                break

        checkpoints = _save_all(run_dir, runtimes, cfg, algorithm, None)

    manifest = {
        "config": cfg.as_dict(),
        "seed": seed,
        "frames": frames,
        "version": __version__,
        "code_hash": hashlib.sha1(f"divmarl-{__version__}".encode()).hexdigest(),
        "wall_seconds": round(time.time() - t0, 3),
        "final_eval_score": None if math.isnan(eval_score) else eval_score,
    }
    with open(run_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return RunResult(run_dir, metrics_path, checkpoints, eval_score, frames)


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return repr(float(x))


def _in_windows(it: int, windows) -> bool:
    return any(a <= it < b for a, b in windows)


def _default_run_dir(cfg: Config) -> Path:
    name = cfg["run.name"] or time.strftime("run-%Y%m%d-%H%M%S")
    return Path(cfg["run.out"]) / name


def _save_all(run_dir: Path, runtimes: dict, cfg: Config, algorithm: str,
              it: int | None) -> dict:
    out = {}
    for name, rt in runtimes.items():
        if rt.group is None:
            continue
        tag = f"iter{it:05d}" if it is not None else "final"
        path = run_dir / "checkpoints" / f"{name}_{tag}.bin"
        meta = dict(rt.group.meta)
        meta["task_config"] = {k: v for k, v in cfg.as_dict().items()
                               if k.startswith("task.") or k in ("run.seed",)}
        meta["algorithm"] = meta.get("algorithm", algorithm)
        save_policy_group(path, rt.group, meta)
        out[name] = path
    return out

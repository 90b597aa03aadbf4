"""Command-line entry points.

Subcommands: train, match, snd-report, render, heuristic-play, describe.
Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .config import load_config
from .diversity import ObservationSet, pairwise_distance_matrix, snd, write_snd_series_csv
from .dico import composed_evaluators
from .errors import ConfigError, DivmarlError
from .heuristic import Strengths
from .models import load_policy_group


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="divmarl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run a training configuration")
    t.add_argument("--config", action="append", default=[],
                   help="config file (repeatable; later files override)")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key")
    t.add_argument("--out", default=None, help="run directory")

    m = sub.add_parser("match", help="head-to-head checkpoint evaluation")
    m.add_argument("--checkpoint-a", required=True)
    m.add_argument("--checkpoint-b", required=True)
    m.add_argument("--matches", type=int, default=100)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--deterministic", action="store_true")
    m.add_argument("--dump", default=None, help="trajectory dump for one match")
    m.add_argument("--out", default="match_out")

    r = sub.add_parser("snd-report", help="measured diversity of a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--rollouts", type=int, default=4)
    r.add_argument("--observations", type=int, default=4096)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default="snd_out")

    d = sub.add_parser("render", help="render a trajectory dump to SVG frames")
    d.add_argument("--dump", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--distances", default=None,
                   help="distance-matrix CSV for per-agent coloring")
    d.add_argument("--no-arrows", action="store_true")

    h = sub.add_parser("heuristic-play", help="heuristic vs heuristic calibration")
    h.add_argument("--team-size", type=int, default=2)
    h.add_argument("--matches", type=int, default=20)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--strengths-blue", default="1,1,1")
    h.add_argument("--strengths-red", default="1,1,1")
    h.add_argument("--dump", default=None)
    h.add_argument("--out", default="heuristic_out")

    s = sub.add_parser("describe", help="print a checkpoint's architecture as JSON")
    s.add_argument("--checkpoint", required=True)
    return p


def _strengths(text: str) -> Strengths:
    try:
        a, b, c = (float(x) for x in text.split(","))
    except ValueError as e:
        raise ConfigError(f"bad strengths {text!r}; expected s,d,p") from e
    return Strengths(a, b, c)


def cmd_train(args) -> int:
    from .training import train
    cfg = load_config(args.config, args.set)
    result = train(cfg, run_dir=args.out)
    print(result.run_dir)
    return 0


def cmd_match(args) -> int:
    from .match import match_policies
    a, meta_a = load_policy_group(args.checkpoint_a)
    b, meta_b = load_policy_group(args.checkpoint_b)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stats = match_policies(a, meta_a, b, meta_b, args.matches, args.seed,
                           deterministic=args.deterministic, dump_path=args.dump)
    stats.write_json(out / "matchstats.json")
    stats.write_heatmap_csv(out / "heatmap.csv")
    print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
    return 0


def _rollout_contexts(group, meta, n_obs: int, n_rollouts: int, seed: int):
    """Fresh evaluation rollouts; returns pooled context rows (N, dc)."""
    from .training import GroupRuntime, build_task, collect
    from .config import Config
    cfg = Config()
    for k, v in meta.get("task_config", {}).items():
        cfg.set(k, v)
    task = build_task(cfg)
    gname = meta.get("task_group", task.groups[0].name)
    runtimes = {}
    for tg in task.groups:
        if tg.name == gname:
            runtimes[tg.name] = GroupRuntime(group, tg.name, None, trainable=False)
        else:
            dim = tg.action_dim

            def zeros(t, tg=tg, dim=dim):
                return np.zeros((len(tg.agents), t.batch, dim))
            runtimes[tg.name] = GroupRuntime(None, tg.name, None, trainable=False,
                                             controller=zeros)
    batch = 16
    obs, ctx = task.reset(batch, seed)
    gen = torch.Generator().manual_seed(seed)
    steps = max(1, (n_rollouts * task.horizon) // batch)
    batches, _, _, _ = collect(task, runtimes, steps, obs, ctx, gen)
    rows = batches[gname].ctx.reshape(-1, batches[gname].ctx.shape[-1])
    if rows.shape[0] > n_obs:
        rng = np.random.default_rng(seed)
        rows = rows[np.sort(rng.choice(rows.shape[0], n_obs, replace=False))]
    return rows.astype(np.float64)


def cmd_snd_report(args) -> int:
    group, meta = load_policy_group(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = _rollout_contexts(group, meta, args.observations, args.rollouts, args.seed)
    obs = ObservationSet(rows)
    policy = group.policy
    if policy.needs_snd_hat():
        from .dico import estimate_snd_hat
        estimate_snd_hat(policy, obs)
    evaluators = composed_evaluators(policy)
    value = snd(evaluators, obs) if policy.n_agents >= 2 else 0.0
    matrix = (pairwise_distance_matrix(evaluators, obs)
              if policy.n_agents >= 2 else None)
    write_snd_series_csv(out / "snd.csv", [(0, value)])
    report = {"snd": value, "snd_des": policy.snd_des, "mode": policy.mode,
              "observations": obs.count}
    if matrix is not None:
        matrix.write_csv(out / "distance_matrix.csv")
        report["per_agent_mean_distance"] = matrix.per_agent_mean().tolist()
    with open(out / "report.json", "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_render(args) -> int:
    from .render import render_frames
    distances = None
    if args.distances:
        import csv as _csv
        per_agent: dict = {}
        with open(args.distances) as f:
            for row in _csv.DictReader(f):
                i, j, d = int(row["i"]), int(row["j"]), float(row["d"])
                per_agent.setdefault(i, []).append(d)
                per_agent.setdefault(j, []).append(d)
        means = {k: float(np.mean(v)) for k, v in per_agent.items()}
        top = max(means.values()) or 1.0
        distances = {k: v / top for k, v in means.items()}
    paths = render_frames(args.dump, args.out, distances=distances,
                          draw_arrows=not args.no_arrows)
    print(f"wrote {len(paths)} frames to {args.out}")
    return 0


def cmd_heuristic_play(args) -> int:
    from .match import play_heuristic_match
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stats = play_heuristic_match(args.team_size, args.matches, args.seed,
                                 _strengths(args.strengths_blue),
                                 _strengths(args.strengths_red),
                                 dump_path=args.dump)
    stats.write_json(out / "matchstats.json")
    print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_describe(args) -> int:
    from .checkpoint import load_checkpoint
    meta, arrays = load_checkpoint(args.checkpoint)
    desc = dict(meta)
    desc["parameters"] = {name: list(a.shape) for name, a in arrays.items()}
    desc["parameter_count"] = int(sum(a.size for a in arrays.values()))
    print(json.dumps(desc, indent=2, sort_keys=True))
    return 0


COMMANDS = {
    "train": cmd_train,
    "match": cmd_match,
    "snd-report": cmd_snd_report,
    "render": cmd_render,
    "heuristic-play": cmd_heuristic_play,
    "describe": cmd_describe,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DivmarlError as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

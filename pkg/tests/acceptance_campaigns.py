"""Desk-scale training campaigns behind the acceptance criteria.

Each campaign is a deterministic `train` invocation cached by name: a run
directory containing manifest.json counts as complete and is reused.  Set
DIVMARL_ACCEPTANCE_CACHE to relocate (or clear the directory to force
retraining).  The cache exists because the full campaign set takes a
couple of hours; the acceptance tests only read the metric CSVs.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from divmarl.config import Config
from divmarl.training import train

CACHE = Path(os.environ.get("DIVMARL_ACCEPTANCE_CACHE", "/tmp/divmarl_acceptance"))


def run_cached(name: str, values: dict) -> Path:
    run_dir = CACHE / name
    if (run_dir / "manifest.json").exists():
        return run_dir
    train(Config(values), run_dir=run_dir)
    return run_dir


def read_metrics(run_dir: Path) -> list:
    with open(run_dir / "metrics.csv") as f:
        return list(csv.DictReader(f))


def column(rows, key) -> np.ndarray:
    return np.array([float(r[key]) for r in rows])


# -- criterion 6: Pac-Men exploration ------------------------------------

PACMEN_FRAMES = 5_000_000
PACMEN_SEEDS = (0, 1, 2, 3, 4, 5)


def pacmen_run(seed: int, diverse: bool) -> Path:
    arm = "div" if diverse else "hom"
    return run_cached(f"pacmen_{arm}_seed{seed}", {
        "task.id": "pacmen",
        "train.total_frames": PACMEN_FRAMES,
        "train.frames_per_iteration": 72_000,
        "train.num_envs": 240,
        "train.minibatch_size": 4096,
        "train.epochs": 3,
        "train.gamma": 0.99,
        "train.lam": 0.9,
        "train.lr": 3e-4,
        "train.entropy_coef": 1e-3,
        "dico.mode": "min_bound" if diverse else "equality",
        "dico.snd_des": 2.0 if diverse else 0.0,
        "run.seed": seed,
    })


# -- criterion 7: Dynamic Passage resilience ------------------------------

PASSAGE_ITERATIONS = 500
PASSAGE_FRAMES_PER_ITER = 4800
PASSAGE_SEEDS = (0, 1, 2, 3, 4, 5)
PASSAGE_WINDOWS = "100-300,400-100000"


def passage_run(seed: int, heterogeneous: bool) -> Path:
    arm = "het" if heterogeneous else "hom"
    return run_cached(f"passage_{arm}_seed{seed}", {
        "task.id": "passage",
        "train.total_frames": PASSAGE_ITERATIONS * PASSAGE_FRAMES_PER_ITER,
        "train.frames_per_iteration": PASSAGE_FRAMES_PER_ITER,
        "train.num_envs": 32,
        "train.minibatch_size": 2048,
        "train.epochs": 4,
        "train.gamma": 0.99,
        "train.lam": 0.9,
        "train.lr": 3e-4,
        "dico.mode": "unconstrained" if heterogeneous else "equality",
        "dico.snd_des": 0.0,
        "task.passage.disturbance": PASSAGE_WINDOWS,
        "run.seed": seed,
    })


# -- criterion 8: Tag strategy ordering ------------------------------------

TAG_SEEDS = (0, 1, 2, 3, 4)
TAG_EVADER_FRAMES = 1_000_000
TAG_CHASER_FRAMES = 2_000_000


def tag_evader_run(seed: int) -> Path:
    return run_cached(f"tag_evader_seed{seed}", {
        "task.id": "tag",
        "train.total_frames": TAG_EVADER_FRAMES,
        "train.frames_per_iteration": 24_000,
        "train.num_envs": 120,
        "train.minibatch_size": 2048,
        "train.epochs": 3,
        "task.tag.red_mode": "pursuit",
        "run.seed": 1000 + seed,
    })


def tag_chaser_run(seed: int, snd_des: float) -> Path:
    evader_dir = tag_evader_run(seed)
    return run_cached(f"tag_chasers_snd{snd_des}_seed{seed}", {
        "task.id": "tag",
        "train.total_frames": TAG_CHASER_FRAMES,
        "train.frames_per_iteration": 24_000,
        "train.num_envs": 120,
        "train.minibatch_size": 2048,
        "train.epochs": 3,
        "dico.mode": "equality",
        "dico.snd_des": snd_des,
        "task.tag.green_mode": "checkpoint",
        "task.tag.green_checkpoint": str(evader_dir / "checkpoints" / "green_final.bin"),
        "run.seed": seed,
    })


# -- criterion 10: Soccer smoke ---------------------------------------------

SOCCER_SEEDS = (0, 1, 2)
SOCCER_FRAME_CAP = 10_000_000


def soccer_smoke_run(seed: int) -> Path:
    return run_cached(f"soccer_smoke_seed{seed}", {
        "task.id": "soccer",
        "task.soccer.team_size": 2,
        "train.total_frames": SOCCER_FRAME_CAP,
        "train.frames_per_iteration": 62_500,
        "train.num_envs": 125,
        "train.minibatch_size": 4096,
        "train.epochs": 3,
        "train.gamma": 0.99,
        "train.lam": 0.9,
        "train.lr": 3e-4,
        "dico.mode": "equality",
        "dico.snd_des": 0.2,
        "train.eval_interval": 4,
        "train.eval_matches": 64,
        "train.early_stop_score": 0.81,
        "opponent.curriculum": "0:0,0,0",  # opponents never introduced
        "run.seed": seed,
    })


def converged_window(rows, frac: float = 0.2) -> list:
    k = max(1, int(len(rows) * frac))
    return rows[-k:]

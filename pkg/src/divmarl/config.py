"""Layered key-value run configuration.

Config files are plain text: one `key = value` per line, `#` comments.
Later files override earlier ones, and command-line `--set key=value`
overrides files.  Every key must appear in the registry below; unknown
keys fail with the list of valid ones.  Values are typed by the registry
(bool/int/float/str).
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .errors import ConfigError


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


# key -> (parser, default, help)
REGISTRY: dict = {
    "run.seed": (int, 0, "master seed for networks, sampling, and worlds"),
    "run.out": (str, "runs", "output directory for run artifacts"),
    "run.name": (str, "", "run directory name (timestamped when empty)"),

    "task.id": (str, "navigate", "one of soccer|pacmen|passage|tag|navigate"),
    "task.horizon": (int, 0, "episode cap override; 0 keeps the task default"),

    "task.soccer.team_size": (int, 2, "players per side"),
    "task.soccer.kicking": (_bool, False, "enable rotation + kick channels"),
    "task.soccer.embodiments": (str, "uniform", "uniform | phys_diff"),
    "task.soccer.spawn": (str, "uniform", "uniform | formation | line"),
    "task.soccer.context": (str, "", "concat | setgnn; empty = by team size"),

    "task.passage.disturbance": (str, "", "iteration windows, e.g. 100-300,400-800"),

    "task.tag.red_mode": (str, "policy", "policy | pursuit (scripted chasers)"),
    "task.tag.green_mode": (str, "policy", "policy | checkpoint"),
    "task.tag.green_checkpoint": (str, "", "frozen evader checkpoint path"),
    "task.tag.green_freeze_frames": (int, 0, "freeze evader after N frames; 0 = never"),

    "dico.snd_des": (float, 0.0, "diversity target in action units"),
    "dico.mode": (str, "equality", "equality | min_bound | unconstrained"),
    "dico.grad_through_scale": (_bool, True, "differentiate through the scale factor"),
    "dico.buffer_size": (int, 4096, "rolling estimation-buffer capacity"),
    "dico.hidden": (str, "64,64", "policy-head hidden widths"),

    "model.encoder_hidden": (str, "128,128", "encoder MLP widths (set-GNN model)"),
    "model.context_dim": (int, 128, "context width produced by the set-GNN model"),

    "train.algorithm": (str, "", "ippo | mappo; empty = task default"),
    "train.total_frames": (int, 100_000, "training budget in environment frames"),
    "train.frames_per_iteration": (int, 10_000, "frames collected per iteration"),
    "train.num_envs": (int, 32, "parallel worlds"),
    "train.minibatch_size": (int, 2048, "PPO minibatch size (in transitions)"),
    "train.epochs": (int, 4, "PPO epochs per iteration"),
    "train.clip": (float, 0.2, "PPO clip ratio"),
    "train.gamma": (float, 0.99, "discount in (0, 1]"),
    "train.lam": (float, 0.9, "advantage-estimation lambda"),
    "train.lr": (float, 3e-4, "Adam learning rate"),
    "train.entropy_coef": (float, 1e-3, "entropy bonus coefficient"),
    "train.value_coef": (float, 1.0, "value-loss coefficient"),
    "train.max_grad_norm": (float, 5.0, "gradient clipping norm"),
    "train.eval_interval": (int, 0, "evaluate every N iterations (soccer); 0 = off"),
    "train.eval_matches": (int, 64, "matches per evaluation"),
    "train.early_stop_score": (float, float("nan"), "stop when eval score exceeds this"),
    "train.checkpoint_interval": (int, 0, "checkpoint every N iterations; 0 = final only"),

    "opponent.curriculum": (str, "0:0,0,0",
                            "breakpoints frame:speed,decision,precision;..."),
    "opponent.replan_every": (int, 10, "heuristic replanning period (steps)"),
    "opponent.candidates": (int, 16, "off-ball candidate samples per replan"),
}


class Config:
    """Resolved configuration: registry defaults + files + overrides."""

    def __init__(self, values: dict | None = None):
        self.values = {k: spec[1] for k, spec in REGISTRY.items()}
        if values:
            for k, v in values.items():
                self.set(k, v)

    def set(self, key: str, raw) -> None:
        if key not in REGISTRY:
            valid = "\n  ".join(sorted(REGISTRY))
            raise ConfigError(f"unknown config key {key!r}; valid keys:\n  {valid}")
        parser = REGISTRY[key][0]
        if isinstance(raw, str):
            try:
                self.values[key] = parser(raw)
            except (ValueError, ConfigError) as e:
                raise ConfigError(f"bad value for {key}: {raw!r} ({e})") from e
        else:
            self.values[key] = raw

    def __getitem__(self, key: str):
        if key not in REGISTRY:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    def as_dict(self) -> dict:
        return dict(self.values)

    def load_file(self, path) -> None:
        path = resolve_config_path(path)
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            self.set(key.strip(), value.strip())

    def apply_overrides(self, pairs) -> None:
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} must look like key=value")
            key, _, value = pair.partition("=")
            self.set(key.strip(), value.strip())


def resolve_config_path(path) -> Path:
    """Literal path if it exists, else a packaged preset of that name."""
    p = Path(path)
    if p.exists():
        return p
    preset = resources.files("divmarl").joinpath("presets", p.name)
    if preset.is_file():
        return Path(str(preset))
    raise ConfigError(f"config file not found: {path}")


def load_config(files=(), overrides=()) -> Config:
    cfg = Config()
    for f in files:
        cfg.load_file(f)
    cfg.apply_overrides(overrides)
    return cfg


def parse_hidden(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError as e:
        raise ConfigError(f"bad width list {text!r}") from e


def parse_windows(text: str) -> tuple:
    """'100-300,400-800' -> ((100, 300), (400, 800)); empty string -> ()."""
    if not text.strip():
        return ()
    out = []
    for part in text.split(","):
        try:
            a, _, b = part.partition("-")
            out.append((int(a), int(b)))
        except ValueError as e:
            raise ConfigError(f"bad iteration window {part!r}") from e
    return tuple(out)

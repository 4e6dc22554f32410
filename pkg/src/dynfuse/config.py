"""Flat key=value configuration: parsing, validation, and the key registry.

Config files hold one ``section.key=value`` per line; ``#`` starts a
comment. Command-line overrides use the same ``key=value`` syntax. Unknown
keys are rejected, and all config errors are collected and reported
together.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Tuple

from .errors import ConfigError
from .fusion import MODES

HEADS = ("mf", "gcn")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class TrainConfig:
    """Every knob of a training run; defaults follow the tuned settings."""

    lr: float = 1e-3
    l2: float = 1e-6
    batch_size: int = 3000
    max_epochs: int = 200
    patience: int = 10
    eval_k: int = 10
    seed: int = 0
    mode: str = "dynamic-full"
    layers: int = 1
    meta_dim: int = 5
    meta_hidden: int = 64
    rank: int = 8
    out_dim: int = 32
    collab_dim: int = 32
    head: str = "mf"
    gcn_layers: int = 2
    gcn_per_type: bool = False

    def validate(self) -> List[str]:
        problems = []
        if self.lr < 0:
            problems.append(f"train.lr must be >= 0, got {self.lr}")
        if self.l2 < 0:
            problems.append(f"train.l2 must be >= 0, got {self.l2}")
        for name, value in (("train.batch_size", self.batch_size),
                            ("train.max_epochs", self.max_epochs),
                            ("train.patience", self.patience),
                            ("train.eval_k", self.eval_k),
                            ("fusion.layers", self.layers),
                            ("fusion.meta_dim", self.meta_dim),
                            ("fusion.meta_hidden", self.meta_hidden),
                            ("fusion.rank", self.rank),
                            ("fusion.out_dim", self.out_dim),
                            ("model.collab_dim", self.collab_dim),
                            ("model.gcn_layers", self.gcn_layers)):
            if value < 1:
                problems.append(f"{name} must be >= 1, got {value}")
        if self.seed < 0:
            problems.append(f"train.seed must be >= 0, got {self.seed}")
        if self.mode not in MODES:
            problems.append(f"fusion.mode must be one of {MODES}, got {self.mode!r}")
        if self.head not in HEADS:
            problems.append(f"model.head must be one of {HEADS}, got {self.head!r}")
        return problems

    @property
    def rep_dim(self) -> int:
        return self.out_dim + self.collab_dim


@dataclass
class RunConfig:
    """TrainConfig plus the run-level wiring (paths, report cutoffs, threads)."""

    train: TrainConfig = field(default_factory=TrainConfig)
    data_dir: str = ""
    out_dir: str = "out"
    ks: Tuple[int, ...] = (10, 20)
    threads: int = 0  # 0 = leave BLAS threading alone


# dotted key -> (target, attribute, parser)
_TRAIN_KEYS = {
    "train.lr": ("lr", float),
    "train.l2": ("l2", float),
    "train.batch_size": ("batch_size", int),
    "train.max_epochs": ("max_epochs", int),
    "train.patience": ("patience", int),
    "train.eval_k": ("eval_k", int),
    "train.seed": ("seed", int),
    "fusion.mode": ("mode", str),
    "fusion.layers": ("layers", int),
    "fusion.meta_dim": ("meta_dim", int),
    "fusion.meta_hidden": ("meta_hidden", int),
    "fusion.rank": ("rank", int),
    "fusion.out_dim": ("out_dim", int),
    "model.collab_dim": ("collab_dim", int),
    "model.head": ("head", str),
    "model.gcn_layers": ("gcn_layers", int),
    "model.gcn_per_type": ("gcn_per_type", _parse_bool),
}

_RUN_KEYS = {
    "data.dir": ("data_dir", str),
    "out.dir": ("out_dir", str),
    "eval.ks": ("ks", lambda s: tuple(int(k) for k in s.split(","))),
}

KNOWN_KEYS = tuple(sorted(set(_TRAIN_KEYS) | set(_RUN_KEYS)))

# Keys a checkpoint may echo: the model-shape subset plus dataset dims.
CHECKPOINT_KEYS = tuple(sorted(
    set(_TRAIN_KEYS)
    | {"data.n_users", "data.n_items", "data.input_dim"}
))


def parse_kv_lines(lines, source: str) -> Dict[str, str]:
    """Parse ``key=value`` lines; blank lines and # comments are skipped."""
    out: Dict[str, str] = {}
    problems = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            problems.append(f"{source}:{lineno}: expected key=value, got {line!r}")
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    if problems:
        raise ConfigError("; ".join(problems))
    return out


def parse_config_file(path) -> Dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_kv_lines(path.read_text(encoding="utf-8").splitlines(), str(path))


def parse_overrides(pairs) -> Dict[str, str]:
    return parse_kv_lines(pairs, "override")


def build_run_config(mapping: Dict[str, str]) -> RunConfig:
    """Assemble a RunConfig, reporting every unknown/invalid key at once."""
    run = RunConfig()
    train_kwargs = {}
    run_kwargs = {}
    problems = []
    for key, value in mapping.items():
        if key in _TRAIN_KEYS:
            attr, parse = _TRAIN_KEYS[key]
            try:
                train_kwargs[attr] = parse(value)
            except ValueError as exc:
                problems.append(f"{key}: {exc}")
        elif key in _RUN_KEYS:
            attr, parse = _RUN_KEYS[key]
            try:
                run_kwargs[attr] = parse(value)
            except ValueError as exc:
                problems.append(f"{key}: {exc}")
        else:
            problems.append(f"unknown config key {key!r}")
    train = replace(TrainConfig(), **train_kwargs)
    problems.extend(train.validate())
    if problems:
        raise ConfigError("; ".join(problems))
    return replace(run, train=train, **run_kwargs)


def train_config_echo(config: TrainConfig) -> Dict[str, str]:
    """Dotted-key text form of a TrainConfig (for checkpoints and reports)."""
    echo = {}
    for key, (attr, _) in _TRAIN_KEYS.items():
        value = getattr(config, attr)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = format(value, ".12g")
        echo[key] = str(value)
    return echo


def train_config_from_echo(echo: Dict[str, str]) -> TrainConfig:
    """Rebuild a TrainConfig from checkpoint echo; unknown keys are rejected."""
    kwargs = {}
    problems = []
    for key, value in echo.items():
        if key in _TRAIN_KEYS:
            attr, parse = _TRAIN_KEYS[key]
            try:
                kwargs[attr] = parse(value)
            except ValueError as exc:
                problems.append(f"{key}: {exc}")
        elif key not in CHECKPOINT_KEYS:
            problems.append(f"unknown config key {key!r}")
    if problems:
        raise ConfigError("; ".join(problems))
    config = replace(TrainConfig(), **kwargs)
    problems = config.validate()
    if problems:
        raise ConfigError("; ".join(problems))
    return config

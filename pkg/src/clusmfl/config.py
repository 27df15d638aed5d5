"""Experiment configuration: defaults, flat key=value files, CLI overrides.

Precedence is defaults < config file < command-line flags. The resolved
configuration is echoed next to the outputs in the same key=value format,
so an echo file can be replayed as a config file.
"""

from __future__ import annotations

from dataclasses import dataclass, fields


class ConfigError(Exception):
    """Invalid configuration; the CLI maps this to exit code 1."""


@dataclass
class ExperimentConfig:
    seed: int = 0
    method: str = "clusmfl"  # clusmfl | fedavg | fedprox
    maa: bool = True
    ctr: bool = True
    mc: bool = True
    clients: int = 10
    rounds: int = 30
    local_epochs: int = 10
    lr: float = 0.01
    min_lr: float = 0.0
    tau: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 1.0
    mu_prox: float = 0.01
    alpha: float = 0.2  # share of PET-only clients = share of MRI-only clients
    beta: float = 0.2  # unimodal instance shares on multimodal clients
    folds: int = 5
    embed_dim: int = 32
    enc_hidden: tuple[int, ...] = (64,)
    clf_hidden: tuple[int, ...] = (32,)
    batch_size: int = 0  # 0 = full batch
    data_csv: str = ""  # empty = synthetic data
    class_counts: tuple[int, ...] = (297, 451, 167)
    feature_dim: int = 90
    separation: float = 2.0
    noise: float = 1.0
    coupling: float = 0.7
    data_seed: int = -1  # -1 = reuse seed
    split_mode: str = "cv"  # cv | literal
    test_mix: bool = True
    finch_level: int = 0
    workers: int = 1
    checkpoint: bool = False
    dump_pools: bool = False
    wall_clock: bool = False
    outdir: str = "runs/out"


def validate(config: ExperimentConfig) -> ExperimentConfig:
    if config.method not in ("clusmfl", "fedavg", "fedprox"):
        raise ConfigError(f"unknown method {config.method!r}")
    for name in ("clients", "rounds", "local_epochs", "folds", "embed_dim", "feature_dim"):
        if getattr(config, name) < 1:
            raise ConfigError(f"{name} must be a positive count")
    for name in ("lr", "tau"):
        if getattr(config, name) <= 0:
            raise ConfigError(f"{name} must be strictly positive")
    for name in ("lambda1", "lambda2", "mu_prox", "min_lr", "separation", "noise"):
        if getattr(config, name) < 0:
            raise ConfigError(f"{name} must be nonnegative")
    for name in ("alpha", "beta"):
        v = getattr(config, name)
        if not 0.0 <= v <= 0.5:
            raise ConfigError(f"{name} must lie in [0, 0.5] (applied to both modalities)")
    if not 0.0 <= config.coupling <= 1.0:
        raise ConfigError("coupling must lie in [0, 1]")
    if config.split_mode not in ("cv", "literal"):
        raise ConfigError(f"unknown split_mode {config.split_mode!r}")
    if config.batch_size < 0 or config.workers < 1 or config.finch_level < 0:
        raise ConfigError("batch_size, workers and finch_level must be nonnegative")
    if not config.class_counts or any(c < 1 for c in config.class_counts):
        raise ConfigError("class_counts must be positive")
    return config


def load_config_file(path) -> dict[str, str]:
    """Parse flat `key = value` lines; '#' starts a comment."""
    values: dict[str, str] = {}
    known = {f.name for f in fields(ExperimentConfig)}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path} line {lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"{path} line {lineno}: unknown key {key!r}")
            values[key] = value
    return values


def resolve(file_values: dict[str, str] | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Apply config-file strings, then non-None overrides, then validate."""
    config = ExperimentConfig()
    if file_values:
        for key, raw in file_values.items():
            setattr(config, key, _coerce(key, raw))
    if overrides:
        for key, value in overrides.items():
            if value is not None:
                setattr(config, key, value)
    return validate(config)


def _coerce(key: str, raw: str):
    default = getattr(ExperimentConfig(), key)
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an int, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a float, got {raw!r}") from None
    if isinstance(default, tuple):
        try:
            return tuple(int(part) for part in raw.split(",") if part.strip() != "")
        except ValueError:
            raise ConfigError(f"{key}: expected comma-separated ints, got {raw!r}") from None
    return raw


def echo(config: ExperimentConfig) -> str:
    """Resolved configuration as replayable key = value lines."""
    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"

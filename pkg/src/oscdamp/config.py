"""Experiment configuration: TOML parsing with strict keys, seed fan-out."""

import os
from dataclasses import dataclass, field, fields

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .control import PSSParams, SCSConfig
from .drl import AgentConfig
from .env import EnvConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    max_episodes: int = 5000
    batch_size: int = 32
    buffer_capacity: int = 1000
    noise_start: float = 0.2
    noise_end: float = 0.02
    per_alpha: float = 0.6
    per_beta_start: float = 0.4
    per_beta_end: float = 1.0
    per_eps: float = 1e-3
    checkpoint_every: int = 100


@dataclass(frozen=True)
class CalibrationConfig:
    thresholds: tuple = (0.01, 0.02, 0.04, 0.06, 0.1, 0.2, 0.35, 0.5)
    trials: int = 20


@dataclass(frozen=True)
class EvaluationConfig:
    delays: tuple = (0.0, 0.35, 0.8)
    episodes: int = 20
    nonlinear: bool = True
    episode_steps: int = 600      # evaluation horizon; settling needs ~60 s


@dataclass(frozen=True)
class ExperimentConfig:
    model_file: str
    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: dict = field(default_factory=dict)       # AgentConfig kwargs sans dims
    train: TrainConfig = field(default_factory=TrainConfig)
    scs: SCSConfig = field(default_factory=SCSConfig)
    pss: PSSParams = field(default_factory=PSSParams)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def agent_config(self, obs_dim, act_dim):
        return AgentConfig(obs_dim=obs_dim, act_dim=act_dim, **self.agent)


def _build(cls, table, where, coerce=()):
    allowed = {f.name for f in fields(cls)}
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    table = dict(table)
    for key in coerce:
        if key in table:
            table[key] = tuple(table[key])
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{where}] section: {exc}") from exc


_AGENT_KEYS = {"hidden", "gamma", "tau", "actor_lr", "critic_lr", "optimizer"}


def load_experiment(path):
    """Parse an experiment TOML file; unknown keys are hard errors."""
    with open(path, "rb") as f:
        try:
            raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config parse failure: {exc}") from exc
    known = {"model", "seed", "env", "agent", "train", "scs", "pss",
             "calibration", "evaluation"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if "model" not in raw or "file" not in raw["model"]:
        raise ConfigError("missing [model] file entry")
    extra = set(raw["model"]) - {"file"}
    if extra:
        raise ConfigError(f"unknown keys in [model]: {sorted(extra)}")
    model_file = raw["model"]["file"]
    if not os.path.isabs(model_file):
        model_file = os.path.join(os.path.dirname(os.path.abspath(path)), model_file)

    agent_table = raw.get("agent", {})
    bad = set(agent_table) - _AGENT_KEYS
    if bad:
        raise ConfigError(f"unknown keys in [agent]: {sorted(bad)}")

    return ExperimentConfig(
        model_file=model_file,
        seed=int(raw.get("seed", 0)),
        env=_build(EnvConfig, raw.get("env", {}), "env"),
        agent=dict(agent_table),
        train=_build(TrainConfig, raw.get("train", {}), "train"),
        scs=_build(SCSConfig, raw.get("scs", {}), "scs"),
        pss=_build(PSSParams, raw.get("pss", {}), "pss"),
        calibration=_build(CalibrationConfig, raw.get("calibration", {}), "calibration",
                           coerce=("thresholds",)),
        evaluation=_build(EvaluationConfig, raw.get("evaluation", {}), "evaluation",
                          coerce=("delays",)),
    )


# seed fan-out: named streams keyed off the master seed so adding scenarios
# never perturbs earlier ones
_STREAMS = {"train": 0, "episode": 1, "explore": 2, "sample": 3,
            "calibrate": 4, "evaluate": 5, "init": 6, "simulate": 7}


def derived_seed(master, stream, *indices):
    key = (_STREAMS[stream],) + tuple(int(i) for i in indices)
    return np.random.SeedSequence(entropy=int(master), spawn_key=key)


def derived_rng(master, stream, *indices):
    return np.random.default_rng(derived_seed(master, stream, *indices))

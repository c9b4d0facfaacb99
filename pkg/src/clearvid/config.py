"""Run configuration: one YAML file with nested per-module sections.

Every field has a default; unknown keys anywhere are rejected by name so
typos fail loudly. Section seeds are derived from the global seed unless set
explicitly, keeping one (config, seed) pair sufficient to reproduce a run.
"""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import CorpusConfig
from .denoiser import DenoiserConfig
from .errors import ConfigError
from .noise import ARMAParams
from .seeding import derive_seed
from .train import TrainConfig
from .tta import TTAConfig


@dataclass
class ScheduleConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    n_ddim_steps: int = 25


@dataclass
class NoiseConfig:
    phi: float = 0.6
    tau: float = 0.3

    def arma(self) -> ARMAParams:
        return ARMAParams(phi=self.phi, tau=self.tau)


@dataclass
class EvalConfig:
    ssim_window: int = 11
    ssim_sigma: float = 1.5


@dataclass
class RunConfig:
    seed: int = 0
    data: CorpusConfig = field(default_factory=CorpusConfig)
    model: DenoiserConfig = field(default_factory=DenoiserConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    tta: TTAConfig = field(default_factory=TTAConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


_SECTIONS = {
    "data": CorpusConfig,
    "model": DenoiserConfig,
    "schedule": ScheduleConfig,
    "noise": NoiseConfig,
    "train": TrainConfig,
    "tta": TTAConfig,
    "eval": EvalConfig,
}


def _build_section(name: str, cls, payload: dict):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(payload) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in section {name!r}: {sorted(unknown)}")
    return cls(**payload)


def load_config(path=None, overrides: dict | None = None, seed=None) -> RunConfig:
    """Read a YAML config (all keys optional) and resolve section seeds."""
    raw: dict = {}
    if path is not None:
        text = Path(path).read_text()
        loaded = yaml.safe_load(text)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config root must be a mapping, got {type(loaded).__name__}")
        raw = loaded
    if overrides:
        for key, section in overrides.items():
            raw.setdefault(key, {}).update(section)

    unknown = set(raw) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")

    cfg = RunConfig(seed=int(raw.get("seed", 0)))
    for name, cls in _SECTIONS.items():
        payload = raw.get(name, {})
        if payload is None:
            payload = {}
        if not isinstance(payload, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        setattr(cfg, name, _build_section(name, cls, dict(payload)))

    if seed is not None:
        cfg.seed = int(seed)
    # derive per-module seeds from the global seed unless given explicitly
    for section, sub in (("data", cfg.data), ("train", cfg.train), ("tta", cfg.tta)):
        explicit = isinstance(raw.get(section), dict) and "seed" in raw[section] and seed is None
        if not explicit:
            sub.seed = derive_seed(cfg.seed, section)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    payload = {"seed": cfg.seed}
    for name in _SECTIONS:
        section = dataclasses.asdict(getattr(cfg, name))
        for key, val in list(section.items()):
            if isinstance(val, tuple):
                section[key] = list(val)
        payload[name] = section
    return yaml.safe_dump(payload, sort_keys=True)


def write_config_echo(cfg: RunConfig, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config_used.yaml").write_text(dump_config(cfg))

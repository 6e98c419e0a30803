"""Experiment configuration: one INI file, validated before any work starts.

Sections: ``[experiment]`` (seed), ``[frame]``, ``[gen]``, ``[model]``,
``[train]`` (shared by both stages), ``[pretrain]`` / ``[finetune]``
(stage overrides) and ``[eval]``. Values are parsed as JSON where
possible (numbers, lists, booleans), else kept as strings.
"""

import configparser
import json
from dataclasses import asdict, dataclass, field, fields

from .datagen.corpus import GenConfig
from .dsp import FrameConfig
from .nn.model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    nlms_taps: int = 512
    nlms_mu: float = 0.5
    nlms_eps: float = 1e-8
    workers: int = 1
    spectrograms: int = 2


@dataclass
class ExperimentConfig:
    seed: int = 0
    frame: FrameConfig = field(default_factory=FrameConfig)
    gen: GenConfig = field(default_factory=GenConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: dict = field(default_factory=dict)
    pretrain: dict = field(default_factory=dict)
    finetune: dict = field(default_factory=dict)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def train_config(self, stage: str, **overrides) -> TrainConfig:
        d = {"seed": self.seed}
        d.update(self.train)
        d.update(self.pretrain if stage == "pretrain" else self.finetune)
        d.update({k: v for k, v in overrides.items() if v is not None})
        d["stage"] = stage
        try:
            return TrainConfig.from_dict(d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[train]: {exc}") from None

    def to_dict(self):
        return {
            "seed": self.seed, "frame": asdict(self.frame), "gen": asdict(self.gen),
            "model": asdict(self.model), "train": dict(self.train), "pretrain": dict(self.pretrain),
            "finetune": dict(self.finetune), "eval": asdict(self.eval),
        }


_SECTIONS = ("experiment", "frame", "gen", "model", "train", "pretrain", "finetune", "eval")
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"stage"}


def _value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _build(cls, section, values):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"[{section}]: unknown keys {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def parse_config(text: str = "") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep key case
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    unknown = set(cp.sections()) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    sec = {s: {k: _value(v) for k, v in cp.items(s)} if cp.has_section(s) else {} for s in _SECTIONS}

    exp = sec["experiment"]
    if set(exp) - {"seed"}:
        raise ConfigError(f"[experiment]: unknown keys {sorted(set(exp) - {'seed'})}")
    seed = exp.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("[experiment]: seed must be a non-negative integer")
    gen = sec["gen"]
    for key in ("test_ser_choices", "test_snr_levels"):
        if key in gen and not isinstance(gen[key], list):
            raise ConfigError(f"[gen]: {key} must be a JSON list")
    for s in ("train", "pretrain", "finetune"):
        bad = set(sec[s]) - _TRAIN_KEYS
        if bad:
            raise ConfigError(f"[{s}]: unknown keys {sorted(bad)}")
    cfg = ExperimentConfig(
        seed=seed,
        frame=_build(FrameConfig, "frame", sec["frame"]),
        gen=_build(GenConfig, "gen", gen),
        model=_build(ModelConfig, "model", sec["model"]),
        train=sec["train"], pretrain=sec["pretrain"], finetune=sec["finetune"],
        eval=_build(EvalConfig, "eval", sec["eval"]),
    )
    try:
        cfg.gen.validate()
    except ValueError as exc:
        raise ConfigError(f"[gen]: {exc}") from None
    for stage in ("pretrain", "finetune"):
        cfg.train_config(stage)
    return cfg


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return parse_config("")
    with open(path) as fh:
        return parse_config(fh.read())

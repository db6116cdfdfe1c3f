"""Experiment configuration and the flat ``key = value`` config file format.

A config file holds one ``section.key = value`` pair per line, ``#`` starts a
comment. Sections are ``scenario``, ``walk`` and ``experiment``; a bare key is
looked up in ``experiment``. Tuples are written comma-separated.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, asdict, fields, replace
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .node2vec import WalkConfig
from .scenario import ScenarioConfig

VARIANTS = ("full", "wo_road", "wo_gcn", "wo_lstm", "wo_memory", "wo_rnn", "wo_memory_rnn")
BASELINES = ("ma", "lr", "lstm", "persistence")


@dataclass(frozen=True)
class ExperimentConfig:
    batch_size: int = 16
    T: int = 7
    epochs: int = 100
    lr: float = 1e-4
    L_m: int = 12
    D_m: int = 64
    seed: int = 0
    variant: str = "full"
    d_model: int = 128
    d_lstm: int = 128
    lstm_layers: int = 2
    gcn_layers: int = 1
    rnn_hidden: int = 8
    dropout: float = 0.1
    head_dropout: float = 0.1
    clip_norm: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    target_eps: float = 1e-4
    memory_init_std: float = 0.1
    eval_batch: int = 1024
    n_seeds: int = 5

    def __post_init__(self):
        tag = self.variant
        if tag not in VARIANTS and not (tag.startswith("baseline:") and tag.split(":", 1)[1] in BASELINES):
            raise ConfigError(f"unknown variant {tag!r}; expected one of {VARIANTS} or baseline:{{{','.join(BASELINES)}}}")
        if self.T < 0:
            raise ConfigError("T must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.gcn_layers != 1:
            raise ConfigError("only a single GCN layer is supported")
        if self.lstm_layers < 1:
            raise ConfigError("lstm_layers must be >= 1")
        if min(self.L_m, self.D_m, self.d_model, self.d_lstm, self.rnn_hidden) < 1:
            raise ConfigError("all widths must be >= 1")
        for name in ("dropout", "head_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


# Reduced widths and a shorter, faster schedule for single-core desk runs.
DESK_PROFILE = dict(d_model=32, d_lstm=32, epochs=12, lr=2e-3)


def desk_config(**overrides) -> ExperimentConfig:
    return ExperimentConfig(**{**DESK_PROFILE, **overrides})


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig = dataclasses.field(default_factory=ScenarioConfig)
    walk: WalkConfig = dataclasses.field(default_factory=WalkConfig)
    experiment: ExperimentConfig = dataclasses.field(default_factory=ExperimentConfig)

    def to_dict(self) -> dict:
        return {"scenario": self.scenario.to_dict(), "walk": self.walk.to_dict(),
                "experiment": self.experiment.to_dict()}

    def flat(self) -> dict[str, Any]:
        return {f"{sec}.{k}": v for sec, d in self.to_dict().items() for k, v in d.items()}


_SECTIONS = {"scenario": ScenarioConfig, "walk": WalkConfig, "experiment": ExperimentConfig}


def _coerce(cls, key: str, raw: Any):
    spec = {f.name: f for f in fields(cls)}
    if key not in spec:
        raise ConfigError(f"unknown key {cls.__name__}.{key}")
    default = spec[key].default
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(default, tuple) else raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            if text.lower() not in {"true", "false", "1", "0", "yes", "no"}:
                raise ValueError(text)
            return text.lower() in {"true", "1", "yes"}
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            item = type(default[0]) if default else float
            return tuple(item(x) for x in text.split(",") if x.strip())
        return text
    except ValueError:
        raise ConfigError(f"{cls.__name__}.{key}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_pairs(lines) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def build_run_config(pairs: dict[str, Any], base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    grouped: dict[str, dict] = {s: {} for s in _SECTIONS}
    for key, value in pairs.items():
        sec, _, name = key.rpartition(".")
        sec = sec or "experiment"
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown config section {sec!r} in key {key!r}")
        grouped[sec][name] = _coerce(_SECTIONS[sec], name, value)
    try:
        return RunConfig(
            scenario=replace(base.scenario, **grouped["scenario"]),
            walk=replace(base.walk, **grouped["walk"]),
            experiment=replace(base.experiment, **grouped["experiment"]),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_run_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    pairs: dict[str, str] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        pairs.update(parse_pairs(p.read_text().splitlines()))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    return build_run_config(pairs)


def dump_run_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in cfg.flat().items():
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"

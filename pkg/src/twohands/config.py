"""Run configuration with defaults equal to the published constants."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ContractError, ParseError
from .objectives import LossWeights
from .refiner import RefineConfig

FULL_MODEL_VERTICES = 778
FULL_MODEL_JOINTS = 21
DEFAULT_SEQUENCE_LENGTH = 10
DEFAULT_FPS = 30.0


@dataclass
class MetricSettings:
    root_index: int = 0
    pck_max_mm: float = 50.0
    pck_steps: int = 51


@dataclass
class SynthSettings:
    frames: int = DEFAULT_SEQUENCE_LENGTH
    noise: float = 0.05
    fps: float = DEFAULT_FPS


@dataclass
class EncoderSettings:
    dims: tuple[int, int, int] = (32, 16, 8)
    global_dims: tuple[int, int] = (32, 16)
    heads: int = 4
    positional: bool = True


@dataclass
class ModelSettings:
    right: str | None = None  # model file; None selects the mini-hand
    left: str | None = None
    mini_hand_seed: int = 0


@dataclass
class RunConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    refine: dict = field(default_factory=dict)  # RefineConfig overrides except weights/threads
    metrics: MetricSettings = field(default_factory=MetricSettings)
    synth: SynthSettings = field(default_factory=SynthSettings)
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    models: ModelSettings = field(default_factory=ModelSettings)

    def refine_config(self, threads: int = 1) -> RefineConfig:
        return RefineConfig(weights=self.weights, threads=threads, **self.refine)


_SECTIONS = {
    "weights": LossWeights,
    "metrics": MetricSettings,
    "synth": SynthSettings,
    "encoder": EncoderSettings,
    "models": ModelSettings,
}
_REFINE_KEYS = {f.name for f in fields(RefineConfig)} - {"weights", "threads"}


def config_from_dict(doc: dict) -> RunConfig:
    kwargs = {}
    for key, value in doc.items():
        if key == "refine":
            if not isinstance(value, dict):
                raise ParseError("config: 'refine' must be an object")
            unknown = set(value) - _REFINE_KEYS
            if unknown:
                raise ParseError(f"config: unknown refine setting(s) {sorted(unknown)}")
            # validate eagerly so bad settings fail before any work starts
            RefineConfig(**value)
            kwargs["refine"] = dict(value)
        elif key in _SECTIONS:
            cls = _SECTIONS[key]
            if not isinstance(value, dict):
                raise ParseError(f"config: '{key}' must be an object")
            try:
                section = cls(**value)
            except TypeError as exc:
                raise ParseError(f"config: bad '{key}' section: {exc}") from exc
            if cls is EncoderSettings:
                section.dims = tuple(section.dims)
                section.global_dims = tuple(section.global_dims)
            kwargs[key] = section
        else:
            raise ParseError(f"config: unknown section '{key}'")
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ParseError(f"{path}: cannot read config: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed config (line {exc.lineno}): {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: config must be a JSON object")
    try:
        return config_from_dict(doc)
    except ContractError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def config_to_dict(cfg: RunConfig) -> dict:
    out = asdict(cfg)
    out["encoder"]["dims"] = list(cfg.encoder.dims)
    out["encoder"]["global_dims"] = list(cfg.encoder.global_dims)
    return out

"""Experiment configuration documents (JSON)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..scenarios import ScenarioConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Everything a train/evaluate run needs.

    ``attacks`` holds catalog names (``noise``, ``untargeted``,
    ``targeted:<target>``, ``semi:<band>``) or the single entry ``catalog``.
    """

    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    model: str = "series"
    model_options: dict = field(default_factory=dict)
    train_mode: str = "ordinary"
    train: TrainConfig = field(default_factory=TrainConfig)
    attacks: list = field(default_factory=lambda: ["catalog"])
    epsilon: float = 0.15
    steps: int = 100
    repetitions: int = 100
    lam: float = 1000.0
    beta: float = 1.0
    seed: int = 0
    out_dir: str = "out"

    def __post_init__(self):
        if self.model not in ("series", "maps"):
            raise ConfigError(f"model must be 'series' or 'maps', got {self.model!r}")
        if self.train_mode not in ("ordinary", "adversarial"):
            raise ConfigError(f"train_mode must be 'ordinary' or 'adversarial', got {self.train_mode!r}")
        if self.epsilon < 0 or self.steps < 1 or self.repetitions < 1:
            raise ConfigError("epsilon must be >= 0, steps and repetitions >= 1")
        if self.beta <= 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if self.train_mode == "adversarial" and self.train.adv_steps < 1:
            raise ConfigError("adversarial training needs at least one inner PGD step")

    def model_kwargs(self) -> dict:
        sc = self.scenario
        kw = {"history": sc.history, "horizon": sc.horizon}
        if self.model == "maps":
            kw.update(context=sc.context, height=sc.map_height, width=sc.map_width)
        kw.update(self.model_options)
        return kw

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        try:
            sc = doc.get("scenario", {})
            if isinstance(sc, str):
                path = Path(sc) if base_dir is None else base_dir / sc
                sc = json.loads(path.read_text())
            doc["scenario"] = ScenarioConfig.from_dict(sc)
            tr = doc.get("train", {})
            tknown = {f.name for f in fields(TrainConfig)}
            if set(tr) - tknown:
                raise ConfigError(f"unknown train config keys: {sorted(set(tr) - tknown)}")
            doc["train"] = TrainConfig(**tr)
            return cls(**doc)
        except ConfigError:
            raise
        except (TypeError, ValueError, OSError) as err:
            raise ConfigError(f"invalid config: {err}") from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file {path} is not valid JSON: {err}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        if "length" in doc and "scenario" not in doc:
            doc = {"scenario": doc}
        return cls.from_dict(doc, path.parent)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

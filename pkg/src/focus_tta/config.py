"""Single JSON run configuration covering augmentation, training, sampling and adaptation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .diffusion import GuidanceConfig
from .freqaug import MixConfig
from .neural.train import AuxConfig, TrainConfig
from .tta.corruptions import CorruptionSpec
from .tta.runner import DEFAULT_STREAM, AdaptationRun


@dataclass
class AdaptConfig:
    method: str = "frozen"
    mode: str = "episodic"
    k: int = 1
    learning_rate: float = 3e-3
    task: str = "seg"
    batch_size: int = 1
    live_consistency: bool = False
    corruptions: tuple[str, ...] = tuple(k.value for k in DEFAULT_STREAM)
    severity: int = 5
    corruption_seed: int = 0
    n_images: int = 0  # 0 = whole dataset

    def __post_init__(self):
        self.corruptions = tuple(self.corruptions)
        self.to_run()  # validate eagerly

    def to_run(self, metrics_path=None) -> AdaptationRun:
        stream = [CorruptionSpec(kind, self.severity, self.corruption_seed) for kind in self.corruptions]
        return AdaptationRun(
            method=self.method,
            mode=self.mode,
            k=self.k,
            stream=stream,
            learning_rate=self.learning_rate,
            task=self.task,
            batch_size=self.batch_size,
            live_consistency=self.live_consistency,
            metrics_path=None if metrics_path is None else str(metrics_path),
        )


SECTIONS = {
    "mix": MixConfig,
    "train": TrainConfig,
    "aux": AuxConfig,
    "guidance": GuidanceConfig,
    "adapt": AdaptConfig,
}
SEED_FIELDS = {"mix": "rng_seed", "train": "seed", "aux": "seed", "guidance": "seed", "adapt": "corruption_seed"}


@dataclass
class RunConfig:
    mix: MixConfig = field(default_factory=MixConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    aux: AuxConfig = field(default_factory=AuxConfig)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, Enum):
                return v.value
            if isinstance(v, (list, tuple)):
                return [plain(x) for x in v]
            return v

        return {name: {f.name: plain(getattr(getattr(self, name), f.name)) for f in dataclasses.fields(cls)}
                for name, cls in SECTIONS.items()}

    def with_seed(self, seed: int) -> "RunConfig":
        """Copy with every section's seed set to ``seed``."""
        doc = self.to_dict()
        for section, key in SEED_FIELDS.items():
            doc[section][key] = seed
        return config_from_dict(doc)


def _build_section(name: str, cls, values: dict):
    if not isinstance(values, dict):
        raise ValueError(f"section {name!r} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ValueError(f"unknown keys in {name!r}: {', '.join(unknown)}")
    return cls(**values)


def config_from_dict(doc: dict) -> RunConfig:
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ValueError(f"unknown config sections: {', '.join(unknown)}")
    return RunConfig(**{name: _build_section(name, cls, doc.get(name, {})) for name, cls in SECTIONS.items()})


def load_config(path=None) -> RunConfig:
    """Defaults when ``path`` is None; otherwise the file merged over the defaults."""
    if path is None:
        return RunConfig()
    return config_from_dict(json.loads(Path(path).read_text()))

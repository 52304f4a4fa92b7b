"""Run configuration: one JSON document with a block per pipeline stage.

Unknown keys are rejected at every level.  A ``run.json`` written by the CLI
is accepted as a config too (its ``config`` member is used).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import bayes, curriculum, synthesis, vibe
from .errors import ConfigError, ContractError
from .nnet import NetSpec, TrainConfig
from .seeding import derive_seed


@dataclass
class VibeBlock:
    samples_per_pixel: int = 20
    match_radius: int = 20
    min_matches: int = 2
    subsample_factor: int = 16


@dataclass
class MaskBlock:
    open_radius: int = 1
    close_radius: int = 1
    min_area: int | None = None


@dataclass
class MotionBlock:
    vicinity: int | None = None  # default: 2% of the frame diagonal


@dataclass
class BayesBlock:
    input_size: list = field(default_factory=lambda: [64, 64])
    bayesian: bool = True
    mc_samples: int = bayes.DEFAULT_MC_SAMPLES
    ddof: int = 0
    residual: bool = True
    gain: float = 3.0
    architecture: str = "small"
    widths: list = field(default_factory=lambda: [8, 16, 32])
    rates: list = field(default_factory=lambda: [0.1, 0.3, 0.4])
    fc: list = field(default_factory=lambda: [64])
    fc_rate: float = 0.5
    learning_rate: float = 0.003
    epochs: int = 20
    batch_size: int = 16
    class_weights: list = field(default_factory=lambda: [1.0, 5.0])
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def spec(self, init_seed: int) -> NetSpec:
        size = tuple(self.input_size)
        if self.architecture == "vgg19":
            return bayes.vgg19_like_spec(size, init_seed=init_seed)
        if self.architecture != "small":
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        return bayes.conv_stack_spec(size, widths=tuple(self.widths), rates=tuple(self.rates),
                                     fc=tuple(self.fc), fc_rate=self.fc_rate, init_seed=init_seed)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
                           class_weights=list(self.class_weights), seed=seed, momentum=self.momentum,
                           weight_decay=self.weight_decay)


@dataclass
class CurriculumBlock:
    thresholds: list = field(default_factory=lambda: list(curriculum.DEFAULT_THRESHOLDS))
    holdout_fraction: float = 0.3
    normal_keep_every: int = 5


@dataclass
class MetricsBlock:
    pad_epochs: int = 60  # SGD epochs of the proxy A-distance probe


BLOCKS = {
    "vibe": VibeBlock,
    "maskops": MaskBlock,
    "motionmap": MotionBlock,
    "segmenter": synthesis.SegmenterConfig,
    "synthesis": synthesis.SynthesisConfig,
    "bayes": BayesBlock,
    "curriculum": CurriculumBlock,
    "metrics": MetricsBlock,
}


def _block(cls, doc, name):
    if not isinstance(doc, dict):
        raise ConfigError(f"config block {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {', '.join(unknown)}")
    try:
        return cls(**doc)
    except (TypeError, ContractError) as exc:
        raise ConfigError(f"invalid {name!r} block: {exc}") from exc


@dataclass
class RunConfig:
    seed: int = 0
    paths: dict = field(default_factory=dict)
    vibe: VibeBlock = field(default_factory=VibeBlock)
    maskops: MaskBlock = field(default_factory=MaskBlock)
    motionmap: MotionBlock = field(default_factory=MotionBlock)
    segmenter: synthesis.SegmenterConfig = field(default_factory=synthesis.SegmenterConfig)
    synthesis: synthesis.SynthesisConfig = field(default_factory=synthesis.SynthesisConfig)
    bayes: BayesBlock = field(default_factory=BayesBlock)
    curriculum: CurriculumBlock = field(default_factory=CurriculumBlock)
    metrics: MetricsBlock = field(default_factory=MetricsBlock)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        if "config" in doc and "command" in doc:
            doc = doc["config"]
        unknown = sorted(set(doc) - {"seed", "paths", *BLOCKS})
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {', '.join(unknown)}")
        seed = doc.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ConfigError("seed must be an integer")
        paths = doc.get("paths", {})
        if not isinstance(paths, dict):
            raise ConfigError("paths must be an object")
        blocks = {name: _block(cls_, doc.get(name, {}), name) for name, cls_ in BLOCKS.items()}
        cfg = cls(seed=seed, paths=dict(paths), **blocks)
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def check(self) -> None:
        try:
            self.vibe_params()
            self.curriculum_config()
        except ContractError as exc:
            raise ConfigError(str(exc)) from exc
        if self.curriculum.normal_keep_every < 1:
            raise ConfigError("normal_keep_every must be >= 1")
        if len(self.bayes.input_size) != 2 or min(self.bayes.input_size) < 8:
            raise ConfigError("bayes.input_size must be [h, w] with both >= 8")

    def to_dict(self) -> dict:
        return asdict(self)

    def stage_seed(self, *names) -> int:
        return derive_seed(self.seed, *names)

    # -- module parameter objects -------------------------------------------

    def vibe_params(self) -> vibe.VibeParams:
        return vibe.VibeParams(**asdict(self.vibe), seed=self.stage_seed("vibe"))

    def mask_config(self) -> synthesis.MaskConfig:
        return synthesis.MaskConfig(**asdict(self.maskops))

    def curriculum_config(self) -> curriculum.CurriculumConfig:
        b = self.bayes
        seed = self.stage_seed("curriculum")
        return curriculum.CurriculumConfig(
            thresholds=tuple(self.curriculum.thresholds), holdout_fraction=self.curriculum.holdout_fraction,
            mc_samples=b.mc_samples, input_size=tuple(b.input_size), bayesian=b.bayesian, ddof=b.ddof,
            residual=b.residual, gain=b.gain, seed=seed, train=b.train_config(self.stage_seed("train")),
            spec=b.spec(self.stage_seed("init") % 2**32))

"""Run configuration: nested dataclasses, JSON round-trip, presets, overrides.

Unknown keys are rejected when loading, and every run directory gets an echo
of the fully resolved configuration so results are reconstructible from the
output alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, is_dataclass

from .model import ModelConfig, StageConfig, paper_scale_config
from .sampling import AugmentConfig, CurriculumConfig
from .videos import DatasetConfig


@dataclass
class OptimConfig:
    base_lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup_epochs: int = 5


@dataclass
class LossConfig:
    temperature: float = 0.07
    queue_capacity: int = 512
    clips_per_video: int = 2
    context_weight: float = 1.0
    context_distance_unit: str = "clips"  # regress |start difference| / clip_len; "frames" for raw
    context_enabled: bool = True


@dataclass
class InferenceConfig:
    n_temporal_clips: int = 4
    n_spatial_crops: int = 1


@dataclass
class EvalConfig:
    epochs: int = 40
    base_lr: float = 0.05
    batch_size: int = 8
    warmup_epochs: int = 0
    retrieval_ks: tuple = (1, 5, 10, 20, 50)


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    epochs: int = 30
    batch_size: int = 8
    clip_len: int = 8
    key_momentum: float = 0.99
    target_fps: int | None = None
    checkpoint_every: int = 0  # additionally checkpoint every k epochs; 0 = end only
    workers: int = 1
    seed: int = 0
    mode: str = "pretrain"

    def validate(self):
        self.dataset.validate()
        self.curriculum.validate()
        self.augment.validate()
        self.model.validate()
        if self.loss.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.loss.clips_per_video < 2:
            raise ValueError("clips_per_video must be at least 2")
        if self.loss.queue_capacity < 1:
            raise ValueError("queue_capacity must be positive")
        if self.loss.context_distance_unit not in ("clips", "frames"):
            raise ValueError("context_distance_unit must be 'clips' or 'frames'")
        if not 0.0 <= self.key_momentum <= 1.0:
            raise ValueError("key_momentum must be in [0, 1]")
        if self.clip_len < 1 or self.clip_len > self.dataset.frames:
            raise ValueError("clip_len must fit inside a video")
        if self.dataset.frames < 2 * self.clip_len:
            raise ValueError("videos must be at least twice the clip length")
        if self.curriculum.max_span > self.dataset.frames:
            raise ValueError("curriculum max_span exceeds video length")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.mode not in ("pretrain", "finetune", "linear"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


def desk_config() -> RunConfig:
    return RunConfig()


def paper_scale_preset() -> RunConfig:
    """Full-size hyperparameters; constructible but far beyond CI budgets."""
    return RunConfig(
        dataset=DatasetConfig(n_classes=8, videos_per_class=50, frames=150, size=112, fps=30),
        curriculum=CurriculumConfig(initial_span=32, max_span=100, hardening_epochs=50),
        augment=AugmentConfig(out_size=112),
        model=paper_scale_config(),
        loss=LossConfig(queue_capacity=65536),
        optim=OptimConfig(base_lr=0.02),
        eval=EvalConfig(epochs=100),
        epochs=100,
        batch_size=16,
        clip_len=16,
        key_momentum=0.999,
        target_fps=15,
    )


PRESETS = {
    "desk": desk_config,
    "paper-scale": paper_scale_preset,
}


# -- serialization ---------------------------------------------------------------


def to_dict(obj) -> dict:
    if is_dataclass(obj):
        out = {}
        for f in fields(obj):
            out[f.name] = to_dict(getattr(obj, f.name))
        return out
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    return obj


def _from_dict(cls, data, path):
    if not isinstance(data, dict):
        raise ValueError(f"config key {path or '<root>'}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown config key(s) {sorted(unknown)} under {path or '<root>'}")
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        kwargs[name] = _coerce_field(known[name], value, sub)
    return cls(**kwargs)


_NESTED = {
    "dataset": DatasetConfig,
    "curriculum": CurriculumConfig,
    "augment": AugmentConfig,
    "model": ModelConfig,
    "loss": LossConfig,
    "optim": OptimConfig,
    "inference": InferenceConfig,
    "eval": EvalConfig,
}


def _coerce_field(f, value, path):
    if f.name in _NESTED and isinstance(value, dict):
        return _from_dict(_NESTED[f.name], value, path)
    if f.name == "stages":
        return tuple(
            StageConfig(
                out_channels=s["out_channels"],
                kernel=tuple(s.get("kernel", (3, 3, 3))),
                stride=tuple(s.get("stride", (1, 2, 2))),
            )
            if isinstance(s, dict)
            else StageConfig(*s)
            for s in value
        )
    if isinstance(value, list):
        return tuple(value)
    return value


def from_dict(data: dict) -> RunConfig:
    return _from_dict(RunConfig, data, "")


def load_config(path) -> RunConfig:
    with open(path) as f:
        return from_dict(json.load(f))


def save_config(path, cfg: RunConfig):
    with open(path, "w") as f:
        json.dump(to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")


def apply_overrides(cfg: RunConfig, overrides: list) -> RunConfig:
    """Apply ``dotted.path=value`` overrides; values parse as JSON, else string."""
    data = to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ValueError(f"override path {dotted!r}: no such config section {part!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ValueError(f"override path {dotted!r}: no such config key {parts[-1]!r}")
        node[parts[-1]] = value
    return from_dict(data)

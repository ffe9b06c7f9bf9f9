"""Run configuration: Table-2 style training hyperparameters plus artifact
plumbing (scale preset, fusion op, freeze flags, paths).

The "paper" preset pins the published dimensions (hidden 768, text 1024,
32 query tokens, 2560x7x7 local grid); "tiny" shrinks every dimension while
preserving the structural ratios so shape and gradient properties transfer.
Dropout does not exist anywhere in the model; drop path is the only
stochastic regularizer.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .errors import ConfigError
from .vision import FUSION_OPS, VisionDims

PRESETS = ("paper", "tiny")
VISION_MODES = ("both", "global", "local")


@dataclass(frozen=True)
class PresetDims:
    vision: VisionDims
    text_width: int
    hidden: int
    expert_ffn_width: int
    default_l_max: int


def preset_dims(preset: str) -> PresetDims:
    if preset == "paper":
        return PresetDims(
            vision=VisionDims(image_size=224, channels=3, block=32, n_tokens=32,
                              token_dim=768, local_channels=2560),
            text_width=1024, hidden=768, expert_ffn_width=3072, default_l_max=26)
    if preset == "tiny":
        return PresetDims(
            vision=VisionDims(image_size=28, channels=3, block=4, n_tokens=8,
                              token_dim=24, local_channels=16),
            text_width=32, hidden=24, expert_ffn_width=96, default_l_max=6)
    raise ConfigError(f"unknown preset {preset!r}; expected one of {PRESETS}")


@dataclass
class RunConfig:
    # Table-2 training hyperparameters
    epochs: int = 20
    layers: int = 6
    heads: int = 6
    batch_size: int = 65
    adam_eps: float = 1e-8
    adam_betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.01
    lr: float = 3e-5
    warmup_ratio: float = 0.1
    floor_lr: float = 0.0
    drop_path: float = 0.3
    # artifact-level fields
    preset: str = "paper"
    fusion_op: str = "concatenate"
    vision_mode: str = "both"
    freeze_extractors: bool = True
    seed: int = 0
    extractor_seed: int = 777
    l_max: int | None = None
    use_position_embeddings: bool = True
    use_modality_type_embeddings: bool = True
    cls_row: str = "first"
    split_ratio: float = 0.8
    split_seed: int = 0
    early_stop_train_acc: float | None = None
    data: str | None = None
    eval_data: str | None = None
    out: str | None = None

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.fusion_op not in FUSION_OPS:
            raise ConfigError(f"unknown fusion op {self.fusion_op!r}")
        if self.vision_mode not in VISION_MODES:
            raise ConfigError(f"unknown vision mode {self.vision_mode!r}")
        dims = preset_dims(self.preset)
        if dims.hidden % self.heads != 0:
            raise ConfigError(
                f"heads {self.heads} does not divide hidden {dims.hidden}")
        if not 0.0 <= self.drop_path < 1.0:
            raise ConfigError(f"drop_path must be in [0, 1), got {self.drop_path}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.l_max is None:
            self.l_max = dims.default_l_max
        self.adam_betas = tuple(self.adam_betas)

    @property
    def dims(self) -> PresetDims:
        return preset_dims(self.preset)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(obj)

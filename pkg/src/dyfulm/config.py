"""Configuration dataclasses and JSON config loading.

A config file is one JSON object with optional sections ``model``, ``train``,
``data`` and ``ablation``. Missing keys fall back to the defaults below;
command-line flags are applied on top by the CLI.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 52
    d_model: int = 32
    layers_a: int = 4
    layers_b: int = 4
    ffn_hidden: int = 64
    t_max: int = 64
    fusion_hidden: int | None = None  # defaults to d_model // 2
    seed: int = 7

    @property
    def fusion_width(self) -> int:
        return self.fusion_hidden if self.fusion_hidden is not None else self.d_model // 2

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "layers_a", "layers_b", "ffn_hidden", "t_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"model.{name} must be positive")
        if self.fusion_width < 1:
            raise ValueError("model.fusion_hidden must be positive")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 6
    seed: int = 7
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 5.0
    dropout: float = 0.1
    debug_nan: bool = False

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("train.learning_rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("train.batch_size and train.epochs must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("train.dropout must lie in [0, 1)")


# hyperparameters used with pretrained backbones at full scale
FULL_SCALE_TRAIN = TrainConfig(learning_rate=1e-5, batch_size=16, epochs=6)


@dataclass(frozen=True)
class DataConfig:
    schema: str = "generic"
    min_frequency: int = 1
    max_vocab: int = 20000
    fine_edges: tuple[float, ...] = (3.0, 5.0, 7.0, 9.0)
    coarse_edges: tuple[float, ...] = (5.0, 7.0)
    synthetic_n: int = 2000
    synthetic_vocab: int = 50
    val_fraction: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "fine_edges", tuple(float(x) for x in self.fine_edges))
        object.__setattr__(self, "coarse_edges", tuple(float(x) for x in self.coarse_edges))
        if len(self.fine_edges) != 4 or len(self.coarse_edges) != 2:
            raise ValueError("need 4 fine and 2 coarse score thresholds")
        if self.schema not in ("generic", "booking"):
            raise ValueError(f"unknown schema {self.schema!r}")


@dataclass(frozen=True)
class AblationToggles:
    use_gated_fusion: bool = True
    use_hierarchical_guidance: bool = True
    use_dynamic_loss: bool = True
    use_layer_fusion: bool = True


VARIANTS: dict[str, AblationToggles] = {
    "full": AblationToggles(),
    "wo-dl": AblationToggles(use_dynamic_loss=False),
    "wo-hg-dl": AblationToggles(use_hierarchical_guidance=False, use_dynamic_loss=False),
    "wo-gf-hg-dl": AblationToggles(use_gated_fusion=False, use_hierarchical_guidance=False,
                                   use_dynamic_loss=False),
}

VARIANT_LABELS = {
    "full": "DyFuLM",
    "wo-gf-hg-dl": "w/o GF+HG+DL",
    "wo-hg-dl": "w/o HG+DL",
    "wo-dl": "w/o DL",
}


@dataclass(frozen=True)
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    variant: str = "full"

    @property
    def toggles(self) -> AblationToggles:
        return VARIANTS[self.variant]

    def to_dict(self) -> dict:
        return {
            "model": asdict(self.model),
            "train": asdict(self.train),
            "data": {**asdict(self.data), "fine_edges": list(self.data.fine_edges),
                     "coarse_edges": list(self.data.coarse_edges)},
            "ablation": {"variant": self.variant, **asdict(self.toggles)},
        }


def _section(cls, values: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**values)


def config_from_dict(raw: dict) -> Config:
    unknown = set(raw) - {"model", "train", "data", "ablation"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    ablation = dict(raw.get("ablation", {}))
    variant = ablation.get("variant", "full")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    return Config(
        model=_section(ModelConfig, raw.get("model", {})),
        train=_section(TrainConfig, raw.get("train", {})),
        data=_section(DataConfig, raw.get("data", {})),
        variant=variant,
    )


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def with_seed(cfg: Config, seed: int) -> Config:
    return replace(cfg, model=replace(cfg.model, seed=seed), train=replace(cfg.train, seed=seed))

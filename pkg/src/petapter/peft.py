"""LoRA, IA3 and Pfeiffer adapters injected into a frozen encoder."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .encoder import ConfigError, EncoderModel
from .rng import SplitMix64

VARIANTS = ("none", "lora", "ia3", "pfeiffer")
LORA_TARGETS = ("wq", "wv")


class PeftError(RuntimeError):
    pass


@dataclass
class PeftConfig:
    variant: str = "none"
    r: int = 8
    alpha: float = 16.0
    c_rate: int = 16
    targets: tuple[str, ...] = LORA_TARGETS

    def validate(self, hidden: int | None = None) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown PEFT variant {self.variant!r}; choose from {VARIANTS}")
        if self.variant == "lora":
            if self.r < 1:
                raise ConfigError(f"LoRA rank must be >= 1, got {self.r}")
            if self.alpha <= 0:
                raise ConfigError(f"LoRA alpha must be > 0, got {self.alpha}")
            bad = [t for t in self.targets if t not in ("wq", "wk", "wv", "wo")]
            if bad:
                raise ConfigError(f"unknown LoRA targets {bad}")
        if self.variant == "pfeiffer" and self.c_rate < 1:
            raise ConfigError(f"c_rate must be >= 1, got {self.c_rate}")

    @property
    def active(self) -> bool:
        return self.variant != "none"

    def bottleneck(self, hidden: int) -> int:
        return max(1, math.ceil(hidden / self.c_rate))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["targets"] = list(self.targets)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PeftConfig":
        d = dict(d)
        d["targets"] = tuple(d.get("targets", LORA_TARGETS))
        return cls(**d)


@dataclass
class PeftState:
    config: PeftConfig
    names: list[str] = field(default_factory=list)

    @property
    def lora_scale(self) -> float:
        return self.config.alpha / self.config.r


def inject(model: EncoderModel, config: PeftConfig, seed: int = 0) -> PeftState:
    """Freeze the base and attach zero-effect adapter tensors.

    LoRA B, Pfeiffer up-projections and IA3 scales start at the identity, so
    the injected model computes exactly what the base did.
    """
    if model.peft is not None:
        raise PeftError("model already has PEFT modules injected")
    cfg = model.config
    config.validate(cfg.hidden)
    for p in model.parameters():
        p.trainable = False
    state = PeftState(config)
    rng = SplitMix64(seed)
    h = cfg.hidden

    def add(name, data):
        model.add(name, data, trainable=True)
        state.names.append(name)

    for i in range(cfg.layers):
        pre = f"layer{i}"
        if config.variant == "lora":
            for target in config.targets:
                site = f"{pre}.attn.{target}"
                d_out, d_in = model.params[site].data.shape
                add(site + ".lora_a", rng.normal(config.r * d_in, 1.0 / math.sqrt(d_in)).reshape(config.r, d_in))
                add(site + ".lora_b", np.zeros((d_out, config.r)))
        elif config.variant == "ia3":
            add(f"{pre}.attn.ia3_k", np.ones(h))
            add(f"{pre}.attn.ia3_v", np.ones(h))
            add(f"{pre}.ffn.ia3_ff", np.ones(cfg.ffn_dim))
        elif config.variant == "pfeiffer":
            b = config.bottleneck(h)
            add(f"{pre}.adapter.down", rng.normal(b * h, 0.02).reshape(b, h))
            add(f"{pre}.adapter.down_b", np.zeros(b))
            add(f"{pre}.adapter.up", np.zeros((h, b)))
            add(f"{pre}.adapter.up_b", np.zeros(h))
    model.peft = state
    return state


def unfreeze_all(model: EncoderModel) -> None:
    """Full fine-tuning mode."""
    for p in model.parameters():
        p.trainable = True


def base_names(model: EncoderModel) -> list[str]:
    extra = set(model.peft.names) if model.peft is not None else set()
    return [n for n in model.params if n not in extra]


def expected_peft_count(config: PeftConfig, hidden: int, layers: int, ffn_dim: int) -> int:
    """Closed-form adapter parameter count."""
    if config.variant == "lora":
        return layers * len(config.targets) * config.r * (hidden + hidden)
    if config.variant == "ia3":
        return layers * (hidden + hidden + ffn_dim)
    if config.variant == "pfeiffer":
        b = config.bottleneck(hidden)
        return layers * (hidden * b + b + b * hidden + hidden)
    return 0


def trainable_parameter_count(model: EncoderModel, head=None) -> dict:
    params = model.parameters() + (head.parameters() if head is not None else [])
    total = sum(p.size for p in params)
    trainable = sum(p.size for p in params if p.trainable)
    return {"trainable": trainable, "total": total, "fraction": trainable / total if total else 0.0}


def merge_lora(model: EncoderModel) -> EncoderModel:
    """Fold every LoRA update into its base matrix; returns a new adapter-free model."""
    state = model.peft
    if state is None or state.config.variant != "lora":
        variant = "none" if state is None else state.config.variant
        raise PeftError(f"merge is only defined for LoRA, model has {variant!r}")
    merged = model.copy()
    scale = state.lora_scale
    for name in state.names:
        if not name.endswith(".lora_a"):
            continue
        site = name[: -len(".lora_a")]
        a = merged.params[name].data
        b = merged.params[site + ".lora_b"].data
        w = merged.params[site].tensor
        w.data = (w.data + scale * (b @ a)).astype(merged.dtype)
    for name in state.names:
        merged.remove(name)
    merged.peft = None
    return merged

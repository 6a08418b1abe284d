"""The assembled tracker network and its configuration presets."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cvlf import CoAConfig, ContrastiveProjection, FusedTokens, FusionConfig, FusionTransformer
from .head import HeadOutput, LossWeights, TrackingHead
from .linguistic import LanguageTokens, LinguisticBranch, LinguisticConfig
from .nn import Module
from .tensor import Tensor
from .visual import ConfigError, VisualBranch, VisualConfig


@dataclass
class ModelConfig:
    visual: VisualConfig = field(default_factory=VisualConfig)
    linguistic: LinguisticConfig = field(default_factory=LinguisticConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    coa: CoAConfig = field(default_factory=CoAConfig)
    loss: LossWeights = field(default_factory=LossWeights)

    @classmethod
    def desk(cls) -> "ModelConfig":
        return cls()

    @classmethod
    def toy(cls) -> "ModelConfig":
        return cls(
            visual=VisualConfig(d_model=32, encoder_repeats=1, num_heads=2, decoder_heads=2, ffn_hidden=64),
            linguistic=LinguisticConfig(width=32, num_layers=1, num_heads=2, ffn_hidden=64),
            fusion=FusionConfig(width=32, num_layers=2, num_heads=2, ffn_hidden=64),
        )

    @classmethod
    def full(cls) -> "ModelConfig":
        return cls(visual=VisualConfig.full(), linguistic=LinguisticConfig.full(),
                   fusion=FusionConfig(width=256, num_layers=6, num_heads=8, ffn_hidden=2048),
                   coa=CoAConfig(temperature=0.5, batch_size=14))

    @property
    def n_fused_tokens(self) -> int:
        return self.visual.n_visual_tokens + self.linguistic.n_tokens + 1

    @property
    def window_side(self) -> int:
        return math.isqrt(self.n_fused_tokens)

    def validate(self) -> "ModelConfig":
        self.visual.validate()
        self.linguistic.validate()
        self.coa.validate()
        self.loss.validate()
        n = self.n_fused_tokens
        if self.window_side ** 2 != n:
            raise ConfigError(
                f"N_v' + N_l + 1 = {self.visual.n_visual_tokens} + {self.linguistic.n_tokens} + 1 = {n} "
                "is not a perfect square; the candidate window cannot be formed")
        if self.fusion.width % self.fusion.num_heads:
            raise ConfigError("fusion width not divisible by heads")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(visual=VisualConfig(**d["visual"]), linguistic=LinguisticConfig(**d["linguistic"]),
                   fusion=FusionConfig(**d["fusion"]), coa=CoAConfig(**d["coa"]), loss=LossWeights(**d["loss"]))


@dataclass
class ForwardResult:
    f_v0: Tensor
    f_l0: Tensor
    fused: FusedTokens
    head: HeadOutput


class COST(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.visual = VisualBranch(cfg.visual, rng)
        self.linguistic = LinguisticBranch(cfg.linguistic, rng)
        self.contrastive = ContrastiveProjection(cfg.visual.d_model, cfg.linguistic.width, cfg.fusion.width, rng)
        self.fusion = FusionTransformer(cfg.fusion, cfg.visual.d_model, cfg.linguistic.width,
                                        cfg.visual.n_visual_tokens, cfg.linguistic.n_tokens, rng)
        self.head = TrackingHead(cfg.fusion.width, rng)

    def encode_language(self, tokens: LanguageTokens, batch: int = 1, use_language: bool = True) -> Tensor:
        if not use_language:
            return Tensor(np.zeros((batch, self.cfg.linguistic.n_tokens, self.cfg.linguistic.width)))
        return self.linguistic(tokens)

    def forward(self, search, template=None, template_tokens=None, f_l0=None, tokens=None,
                use_language: bool = True) -> ForwardResult:
        f_v0, _ = self.visual(search, template, template_tokens)
        if f_l0 is None:
            f_l0 = self.encode_language(tokens, f_v0.shape[0], use_language)
        fused = self.fusion(f_v0, f_l0)
        return ForwardResult(f_v0, f_l0, fused, self.head(fused))

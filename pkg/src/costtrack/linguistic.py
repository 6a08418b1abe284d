"""Linguistic branch: hashed word tokenizer and a small layer-averaged transformer encoder."""
from __future__ import annotations

import re
import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Module, parameter
from .tensor import Tensor
from .transformer import AttentionConfig, EncoderBlock

PAD_ID = 0
CLS_ID = 1
SEP_ID = 2
N_SPECIAL = 3

_WORD = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass
class LinguisticConfig:
    vocab_size: int = 4096
    width: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_hidden: int = 128
    max_words: int = 18
    dropout: float = 0.1

    @classmethod
    def full(cls) -> "LinguisticConfig":
        return cls(vocab_size=30522, width=768, num_layers=12, num_heads=12, ffn_hidden=3072, max_words=38)

    @property
    def n_tokens(self) -> int:
        return self.max_words + 2

    def validate(self):
        if self.width % self.num_heads:
            raise ValueError(f"linguistic width {self.width} not divisible by {self.num_heads} heads")
        if self.vocab_size <= N_SPECIAL:
            raise ValueError("vocabulary too small for the special tokens")
        if self.num_layers < 1 or self.max_words < 0:
            raise ValueError("need at least one layer and a non-negative word budget")
        return self


@dataclass
class LanguageTokens:
    ids: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.ids.shape != self.mask.shape:
            raise ValueError("ids and mask shapes differ")


def split_words(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def word_id(word: str, vocab_size: int) -> int:
    return N_SPECIAL + zlib.crc32(word.encode("utf-8")) % (vocab_size - N_SPECIAL)


def tokenize(description: str, config: LinguisticConfig) -> LanguageTokens:
    """[CLS] w_1..w_k [SEP] then zero padding to max_words + 2 positions."""
    words = split_words(description or "")[: config.max_words]
    ids = np.zeros(config.n_tokens, dtype=np.int64)
    ids[0] = CLS_ID
    for i, w in enumerate(words, start=1):
        ids[i] = word_id(w, config.vocab_size)
    ids[len(words) + 1] = SEP_ID
    mask = np.zeros(config.n_tokens, dtype=np.int64)
    mask[: len(words) + 2] = 1
    return LanguageTokens(ids, mask)


def tokenize_batch(descriptions, config: LinguisticConfig) -> LanguageTokens:
    toks = [tokenize(d, config) for d in descriptions]
    return LanguageTokens(np.stack([t.ids for t in toks]), np.stack([t.mask for t in toks]))


class LinguisticBranch(Module):
    def __init__(self, cfg: LinguisticConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.token_embedding = parameter(rng.normal(0.0, 0.02, (cfg.vocab_size, cfg.width)))
        self.segment_embedding = parameter(rng.normal(0.0, 0.02, (2, cfg.width)))
        self.position_embedding = parameter(rng.normal(0.0, 0.02, (cfg.n_tokens, cfg.width)))
        att = AttentionConfig(cfg.width, cfg.num_heads, cfg.ffn_hidden, cfg.dropout)
        self.layers = [EncoderBlock(att, rng) for _ in range(cfg.num_layers)]

    def embed(self, ids: np.ndarray) -> Tensor:
        # single-sentence input: every token uses segment 0
        tok = T.embedding(self.token_embedding, ids)
        return tok + self.segment_embedding[0] + self.position_embedding[: ids.shape[-1]]

    def forward(self, tokens: LanguageTokens) -> Tensor:
        return linguistic_transformer(tokens, self)


def linguistic_transformer(tokens: LanguageTokens, branch: LinguisticBranch) -> Tensor:
    """F^l_0 [B, N_l, C_l]: mean of every encoder layer's output; padded keys are masked out."""
    ids = np.asarray(tokens.ids)
    mask = np.asarray(tokens.mask)
    if ids.ndim == 1:
        ids, mask = ids[None], mask[None]
    x = branch.embed(ids)
    outputs = []
    for layer in branch.layers:
        x = layer(x, key_mask=mask)
        outputs.append(x)
    if len(outputs) == 1:
        return outputs[0]
    total = outputs[0]
    for o in outputs[1:]:
        total = total + o
    return total * (1.0 / len(outputs))

"""Contrastive visual-linguistic fusion: InfoNCE alignment and the fusion transformer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Linear, Module, parameter
from .tensor import Tensor
from .transformer import AttentionConfig, EncoderBlock

VISUAL, LANGUAGE, OBJ = 0, 1, 2
DENOMINATOR_MODES = ("standard", "as-written")


@dataclass
class CoAConfig:
    temperature: float = 0.5
    batch_size: int = 14
    denominator_mode: str = "standard"

    def validate(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 2:
            raise ValueError("contrastive batch needs at least two pairs")
        if self.denominator_mode not in DENOMINATOR_MODES:
            raise ValueError(f"denominator_mode must be one of {DENOMINATOR_MODES}")
        return self


@dataclass
class FusionConfig:
    width: int = 64          # C_p
    num_layers: int = 6      # L
    num_heads: int = 4
    ffn_hidden: int = 128
    dropout: float = 0.1


@dataclass
class EmbeddingPair:
    visual: Tensor    # [N, C_p]
    language: Tensor  # [N, C_p]


@dataclass
class IndexMap:
    kinds: np.ndarray          # per position: VISUAL / LANGUAGE / OBJ
    grid_side: int             # visual tokens form a grid_side x grid_side map, row-major

    @property
    def visual_positions(self) -> np.ndarray:
        return np.flatnonzero(self.kinds == VISUAL)

    def cell(self, position: int) -> tuple[int, int]:
        if self.kinds[position] != VISUAL:
            raise ValueError(f"position {position} is not a visual token")
        return divmod(int(position), self.grid_side)


@dataclass
class FusedTokens:
    tokens: Tensor      # [B, N_v' + N_l + 1, C_p]
    index_map: IndexMap

    def __len__(self):
        return self.tokens.shape[-2]


def make_index_map(n_visual: int, n_language: int) -> IndexMap:
    side = int(round(np.sqrt(n_visual)))
    if side * side != n_visual:
        raise ValueError(f"{n_visual} visual tokens do not form a square grid")
    kinds = np.concatenate([np.full(n_visual, VISUAL), np.full(n_language, LANGUAGE), [OBJ]]).astype(np.int64)
    return IndexMap(kinds, side)


# -- contrastive alignment ----------------------------------------------------
def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero-norm vector")
    return float(a @ b / (na * nb))


def _l2_normalize(x: Tensor) -> Tensor:
    norms = np.linalg.norm(x.data, axis=-1)
    if np.any(norms == 0):
        raise ValueError("zero-norm embedding cannot be compared by cosine similarity")
    return x / (x * x).sum(axis=-1, keepdims=True).sqrt()


def similarity_matrix(visual, language) -> Tensor:
    """S[i, j] = sim(F^v_i, F^l_j) for row-stacked embeddings."""
    v = _l2_normalize(T.as_tensor(visual))
    l = _l2_normalize(T.as_tensor(language))
    return T.matmul(v, l.swapaxes(-1, -2))


def infonce_from_similarity(sim, temperature: float, mode: str = "standard") -> Tensor:
    """Summed InfoNCE over rows: anchor i, positive column i.

    ``standard`` normalises over every column; ``as-written`` drops the
    positive column from the denominator.
    """
    sim = T.as_tensor(sim)
    n = sim.shape[-1]
    if sim.shape != (n, n):
        raise ValueError(f"similarity matrix must be square, got {sim.shape}")
    if n < 2:
        raise ValueError("InfoNCE needs a batch of at least two pairs")
    if mode not in DENOMINATOR_MODES:
        raise ValueError(f"unknown denominator mode {mode!r}")
    logits = sim * (1.0 / temperature)
    eye = np.eye(n, dtype=bool)
    positives = (logits * eye.astype(np.float64)).sum(axis=-1)
    denom = T.logsumexp(logits, axis=-1, mask=None if mode == "standard" else ~eye)
    return (denom - positives).sum()


def _pair_tensors(batch):
    if isinstance(batch, EmbeddingPair):
        return batch.visual, batch.language
    return T.stack([p.visual for p in batch]), T.stack([p.language for p in batch])


def infonce_v2l(batch, config: CoAConfig) -> Tensor:
    v, l = _pair_tensors(batch)
    return infonce_from_similarity(similarity_matrix(v, l), config.temperature, config.denominator_mode)


def infonce_l2v(batch, config: CoAConfig) -> Tensor:
    v, l = _pair_tensors(batch)
    return infonce_from_similarity(similarity_matrix(l, v), config.temperature, config.denominator_mode)


def coa_loss(batch, config: CoAConfig) -> Tensor:
    """Half the sum of both directions, averaged over the N pairs."""
    v, l = _pair_tensors(batch)
    sim = similarity_matrix(v, l)
    n = sim.shape[0]
    v2l = infonce_from_similarity(sim, config.temperature, config.denominator_mode)
    l2v = infonce_from_similarity(sim.swapaxes(0, 1), config.temperature, config.denominator_mode)
    return (v2l + l2v) * (0.5 / n)


def coa_from_similarity(sim, temperature: float, mode: str = "standard") -> Tensor:
    sim = T.as_tensor(sim)
    n = sim.shape[0]
    return (infonce_from_similarity(sim, temperature, mode)
            + infonce_from_similarity(sim.swapaxes(0, 1), temperature, mode)) * (0.5 / n)


class ContrastiveProjection(Module):
    """The two linear maps g_v, g_l used only by the alignment loss."""

    def __init__(self, visual_width, language_width, width, rng):
        self.g_v = Linear(visual_width, width, rng)
        self.g_l = Linear(language_width, width, rng)

    def forward(self, f_v0, f_l0, language_mask=None):
        return project_embeddings(f_v0, f_l0, self.g_v, self.g_l, language_mask)


def project_embeddings(f_v0, f_l0, g_v, g_l, language_mask=None) -> EmbeddingPair:
    """Mean-pool each modality over its tokens, then project to C_p.

    Language pooling ignores padded positions when ``language_mask`` is given.
    """
    f_v0, f_l0 = T.as_tensor(f_v0), T.as_tensor(f_l0)
    pooled_v = f_v0.mean(axis=-2)
    if language_mask is not None:
        m = np.asarray(language_mask, dtype=np.float64)
        if m.ndim == 1:
            m = m[None] if f_l0.ndim == 3 else m
        w = m / m.sum(axis=-1, keepdims=True)
        pooled_l = (f_l0 * w[..., None]).sum(axis=-2)
    else:
        pooled_l = f_l0.mean(axis=-2)
    ev, el = g_v(pooled_v), g_l(pooled_l)
    if np.any(np.linalg.norm(ev.data, axis=-1) == 0) or np.any(np.linalg.norm(el.data, axis=-1) == 0):
        raise ValueError("projection produced a zero vector; cosine similarity undefined")
    return EmbeddingPair(ev, el)


# -- fusion transformer ----------------------------------------------------------
class FusionTransformer(Module):
    def __init__(self, cfg: FusionConfig, visual_width: int, language_width: int,
                 n_visual: int, n_language: int, rng: np.random.Generator):
        self.cfg = cfg
        self.n_visual = n_visual
        self.n_language = n_language
        self.proj_v = Linear(visual_width, cfg.width, rng)
        self.proj_l = Linear(language_width, cfg.width, rng)
        self.obj_token = parameter(rng.normal(0.0, 0.02, cfg.width))
        self.position = parameter(rng.normal(0.0, 0.02, (n_visual + n_language + 1, cfg.width)))
        att = AttentionConfig(cfg.width, cfg.num_heads, cfg.ffn_hidden, cfg.dropout)
        self.layers = [EncoderBlock(att, rng) for _ in range(cfg.num_layers)]
        self.index_map = make_index_map(n_visual, n_language)

    @property
    def n_tokens(self) -> int:
        return self.n_visual + self.n_language + 1

    def forward(self, f_v0, f_l0, obj=None) -> FusedTokens:
        return fuse(f_v0, f_l0, self, obj)


def fuse(f_v0, f_l0, fusion: FusionTransformer, obj=None) -> FusedTokens:
    """Project both modalities to C_p, concatenate visual | language | [OBJ], and encode.

    The learnable position table is added to every layer's queries and keys;
    with zero layers the output is the projected concatenation plus positions.
    """
    f_v0, f_l0 = T.as_tensor(f_v0), T.as_tensor(f_l0)
    if f_v0.shape[-2] != fusion.n_visual or f_l0.shape[-2] != fusion.n_language:
        raise ValueError(f"fusion expects {fusion.n_visual} visual and {fusion.n_language} language tokens, "
                         f"got {f_v0.shape[-2]} and {f_l0.shape[-2]}")
    b = f_v0.shape[0]
    obj = fusion.obj_token if obj is None else T.as_tensor(obj)
    obj_rows = obj.reshape(1, 1, -1) + np.zeros((b, 1, 1))
    x = T.concat([fusion.proj_v(f_v0), fusion.proj_l(f_l0), obj_rows], axis=1)
    if not fusion.layers:
        x = x + fusion.position
    for layer in fusion.layers:
        x = layer(x, pos_q=fusion.position)
    return FusedTokens(x, fusion.index_map)

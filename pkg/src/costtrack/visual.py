"""Visual branch: strided convolutional stem, two-stream visual transformer, post convolutions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module
from .tensor import ShapeError, Tensor
from .transformer import AttentionConfig, EncoderBlock, spatial_sine_encoding

# Natural-image statistics in 8-bit pixel units (RGB).
PIXEL_MEAN = np.array([0.485, 0.456, 0.406]) * 255.0
PIXEL_STD = np.array([0.229, 0.224, 0.225]) * 255.0

STEM_STRIDE = 8


class ConfigError(ValueError):
    pass


@dataclass
class VisualConfig:
    search_size: int = 128
    template_size: int = 64
    d_model: int = 64
    encoder_repeats: int = 2
    num_heads: int = 4
    decoder_heads: int = 4
    ffn_hidden: int = 128
    post_conv_count: int = 3
    post_conv_kernel: int = 3
    dropout: float = 0.1
    pos_every_layer: bool = True

    @classmethod
    def full(cls) -> "VisualConfig":
        return cls(search_size=256, template_size=128, d_model=256, encoder_repeats=4, num_heads=8,
                   decoder_heads=8, ffn_hidden=2048, post_conv_count=3, post_conv_kernel=5)

    def validate(self):
        for name in ("search_size", "template_size"):
            size = getattr(self, name)
            if size <= 0 or size % STEM_STRIDE:
                raise ConfigError(f"{name}={size} is not a positive multiple of the stem stride {STEM_STRIDE}")
        if self.d_model % 4:
            raise ConfigError(f"visual d_model={self.d_model} must be divisible by 4 (spatial encoding)")
        if self.d_model % self.num_heads or self.d_model % self.decoder_heads:
            raise ConfigError("visual d_model not divisible by head count")
        if self.encoder_repeats < 0 or self.post_conv_count < 0 or self.post_conv_kernel < 1:
            raise ConfigError("negative repeat/conv counts")
        if self.visual_side <= 0:
            raise ConfigError(f"post-conv chain exhausts the {self.search_side}x{self.search_side} map")
        return self

    @property
    def search_side(self) -> int:
        return self.search_size // STEM_STRIDE

    @property
    def template_side(self) -> int:
        return self.template_size // STEM_STRIDE

    @property
    def n_search_tokens(self) -> int:
        return self.search_side ** 2

    @property
    def n_template_tokens(self) -> int:
        return self.template_side ** 2

    @property
    def visual_side(self) -> int:
        return self.search_side - self.post_conv_count * (self.post_conv_kernel - 1)

    @property
    def n_visual_tokens(self) -> int:
        return self.visual_side ** 2


def normalize_image(image: np.ndarray) -> np.ndarray:
    """HxWx3 RGB pixels (0..255) -> 3xHxW normalised float64 array."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected HxWx3 image, got {image.shape}")
    out = ((image - PIXEL_MEAN) / PIXEL_STD).transpose(2, 0, 1)
    if not np.all(np.isfinite(out)):
        raise ValueError("image contains non-finite values")
    return np.ascontiguousarray(out)


class PatchStem(Module):
    """Three stride-2 2x2 convolutions (total stride 8) standing in for the ResNet backbone."""

    def __init__(self, d_model: int, rng: np.random.Generator):
        mid = max(d_model // 2, 8)
        self.convs = [Conv2d(3, mid, 2, rng, stride=2),
                      Conv2d(mid, d_model, 2, rng, stride=2),
                      Conv2d(d_model, d_model, 2, rng, stride=2)]

    def forward(self, image):
        return stem_forward(image, self)


def stem_forward(image, stem: PatchStem) -> tuple[Tensor, int, int]:
    """Image [B,3,H,W] -> tokens [B, (H/8)(W/8), C] plus the token grid shape."""
    image = T.as_tensor(image)
    if image.ndim == 3:
        image = image.reshape(1, *image.shape)
    _, c, h, w = image.shape
    if c != 3:
        raise ShapeError(f"stem expects 3 channels, got {c}")
    if h % STEM_STRIDE or w % STEM_STRIDE:
        raise ShapeError(f"image {h}x{w} not divisible by stem stride {STEM_STRIDE}")
    x = image
    for i, conv in enumerate(stem.convs):
        x = conv(x)
        if i < len(stem.convs) - 1:
            x = x.relu()
    b, ch, gh, gw = x.shape
    return x.reshape(b, ch, gh * gw).swapaxes(1, 2), gh, gw


def project_visual(f_xz, convs, side: int | None = None) -> tuple[Tensor, int]:
    """Reshape [B, N, C] tokens to a square map, apply unpadded stride-1 convs, flatten back.

    ReLU separates consecutive convolutions. Returns the tokens and the output side.
    """
    f_xz = T.as_tensor(f_xz)
    b, n, c = f_xz.shape
    if side is None:
        side = math.isqrt(n)
    if side * side != n:
        raise ShapeError(f"{n} visual tokens do not form a square map")
    shrink = sum(conv.weight.shape[-1] - 1 for conv in convs)
    if side - shrink <= 0:
        raise ConfigError(f"conv chain exhausts the {side}x{side} map (shrinks by {shrink})")
    x = f_xz.swapaxes(1, 2).reshape(b, c, side, side)
    for i, conv in enumerate(convs):
        x = T.conv2d(x, conv.weight, conv.bias, 1, 0)
        if i < len(convs) - 1:
            x = x.relu()
    out_side = x.shape[-1]
    return x.reshape(b, c, out_side * out_side).swapaxes(1, 2), out_side


class VisualBranch(Module):
    def __init__(self, cfg: VisualConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        att = AttentionConfig(cfg.d_model, cfg.num_heads, cfg.ffn_hidden, cfg.dropout)
        dec = AttentionConfig(cfg.d_model, cfg.decoder_heads, cfg.ffn_hidden, cfg.dropout)
        self.stem = PatchStem(cfg.d_model, rng)
        # per repeat: self-attn (search), self-attn (template), cross (search<-template), cross (template<-search)
        self.encoders = [[EncoderBlock(att, rng) for _ in range(4)] for _ in range(cfg.encoder_repeats)]
        self.decoder = EncoderBlock(dec, rng)
        self.post_convs = [Conv2d(cfg.d_model, cfg.d_model, cfg.post_conv_kernel, rng)
                           for _ in range(cfg.post_conv_count)]
        self._pos_cache: dict[tuple[int, int], np.ndarray] = {}

    def pos(self, h: int, w: int) -> np.ndarray:
        key = (h, w)
        if key not in self._pos_cache:
            self._pos_cache[key] = spatial_sine_encoding(h, w, self.cfg.d_model)
        return self._pos_cache[key]

    def encode_template(self, template) -> tuple[Tensor, int, int]:
        return stem_forward(template, self.stem)

    def forward(self, search, template=None, template_tokens=None):
        """Returns (F^v_0 tokens [B, N_v', C], output side)."""
        fx, hx, wx = stem_forward(search, self.stem)
        if template_tokens is None:
            template_tokens = stem_forward(template, self.stem)
        fz, hz, wz = template_tokens
        f_xz = visual_transformer(fx, fz, self, (hx, wx), (hz, wz))
        return project_visual(f_xz, self.post_convs, hx if hx == wx else None)


def visual_transformer(fx, fz, branch: VisualBranch, search_grid, template_grid) -> Tensor:
    """S encoder repeats (self-attention per stream, then cross-attention both ways), then a
    cross-attention decoder with search queries and template keys/values. Output length = search tokens."""
    fx, fz = T.as_tensor(fx), T.as_tensor(fz)
    d = branch.cfg.d_model
    if fx.shape[-1] != d or fz.shape[-1] != d:
        raise ShapeError(f"token widths {fx.shape[-1]}/{fz.shape[-1]} != {d}")
    px = branch.pos(*search_grid)
    pz = branch.pos(*template_grid)
    if branch.cfg.pos_every_layer:
        lx, lz = px, pz
    else:
        fx, fz = fx + px, fz + pz
        lx = lz = None
    for sa_x, sa_z, ca_x, ca_z in branch.encoders:
        fx = sa_x(fx, pos_q=lx)
        fz = sa_z(fz, pos_q=lz)
        fx, fz = ca_x(fx, fz, pos_q=lx, pos_kv=lz), ca_z(fz, fx, pos_q=lz, pos_kv=lx)
    return branch.decoder(fx, fz, pos_q=lx, pos_kv=lz)

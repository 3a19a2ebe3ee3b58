"""Frozen vision-transformer encoder: patch embedding plus pre-norm blocks."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .autodiff import (
    Tensor,
    add,
    as_tensor,
    concat,
    constant,
    gelu,
    layer_norm,
    matmul,
    mul,
    reshape,
    softmax_rows,
    transpose,
)
from .errors import ConfigError, ShapeError
from .lora import AdaptedProjection, LoRAPair, Projection, linear, lora_forward

LN_EPS = 1e-6


@dataclass(frozen=True)
class EncoderConfig:
    patch_size: int = 14
    depth: int = 4
    dim: int = 64
    heads: int = 4
    img_h: int = 56
    img_w: int = 56
    extract_layers: tuple = (1, 2, 3, 4)
    in_chans: int = 3
    mlp_ratio: int = 4

    def __post_init__(self):
        object.__setattr__(self, "extract_layers", tuple(int(i) for i in self.extract_layers))
        for f in ("patch_size", "depth", "dim", "heads", "img_h", "img_w", "in_chans", "mlp_ratio"):
            if getattr(self, f) < 1:
                raise ConfigError(f"{f} must be >= 1, got {getattr(self, f)}")
        if self.img_h % self.patch_size or self.img_w % self.patch_size:
            raise ConfigError(
                f"image {self.img_h}x{self.img_w} is not divisible by patch size {self.patch_size}")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if not self.extract_layers:
            raise ConfigError("extract_layers must not be empty")
        for layer in self.extract_layers:
            if not 1 <= layer <= self.depth:
                raise ConfigError(f"extract layer {layer} outside [1, {self.depth}]")

    @property
    def grid_h(self) -> int:
        return self.img_h // self.patch_size

    @property
    def grid_w(self) -> int:
        return self.img_w // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.in_chans

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["extract_layers"] = list(self.extract_layers)
        return d


@dataclass
class BlockWeights:
    """Frozen weights of one transformer block. Linear weights are ``out x in``."""

    ln1_g: Tensor
    ln1_b: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self) -> list[tuple[str, Tensor]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    @classmethod
    def from_arrays(cls, arrays: dict) -> "BlockWeights":
        return cls(**{f.name: constant(arrays[f.name]) for f in fields(cls)})


@dataclass
class EncoderWeights:
    patch_w: Tensor  # D x (p*p*C)
    patch_b: Tensor
    pos: Tensor  # (N_p + 1) x D
    cls_token: Tensor
    blocks: list = field(default_factory=list)

    def named(self) -> list[tuple[str, Tensor]]:
        out = [("patch_w", self.patch_w), ("patch_b", self.patch_b),
               ("pos", self.pos), ("cls_token", self.cls_token)]
        for i, blk in enumerate(self.blocks):
            out.extend((f"blocks.{i}.{n}", t) for n, t in blk.named())
        return out


def init_encoder(cfg: EncoderConfig, seed: int) -> EncoderWeights:
    """Random frozen weights standing in for a pretrained backbone."""
    rng = np.random.default_rng(seed)
    d, hidden = cfg.dim, cfg.mlp_ratio * cfg.dim

    def w(n_out, n_in):
        return rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_out, n_in))

    blocks = []
    for _ in range(cfg.depth):
        blocks.append(BlockWeights.from_arrays(dict(
            ln1_g=np.ones(d), ln1_b=np.zeros(d),
            wq=w(d, d), bq=np.zeros(d),
            wk=w(d, d), bk=np.zeros(d),
            wv=w(d, d), bv=np.zeros(d),
            wo=w(d, d), bo=np.zeros(d),
            ln2_g=np.ones(d), ln2_b=np.zeros(d),
            w1=w(hidden, d), b1=np.zeros(hidden),
            w2=w(d, hidden), b2=np.zeros(d),
        )))
    return EncoderWeights(
        patch_w=constant(w(d, cfg.patch_dim)),
        patch_b=constant(np.zeros(d)),
        pos=constant(rng.normal(0.0, 0.02, size=(cfg.n_patches + 1, d))),
        cls_token=constant(rng.normal(0.0, 0.02, size=d)),
        blocks=blocks,
    )


def patchify_embed(image, patch_w: Tensor, patch_b: Optional[Tensor], patch_size: int) -> Tensor:
    """Split ``H x W x C`` into non-overlapping patches (raster order) and project each to D."""
    image = as_tensor(image)
    if image.ndim != 3:
        raise ShapeError(f"image must be HxWxC, got {image.shape}")
    h, w, c = image.shape
    p = patch_size
    if h % p or w % p:
        raise ShapeError(f"image {h}x{w} not divisible by patch size {p}")
    gh, gw = h // p, w // p
    x = reshape(image, (gh, p, gw, p, c))
    x = transpose(x, (0, 2, 1, 3, 4))
    x = reshape(x, (gh * gw, p * p * c))
    return linear(x, patch_w, patch_b)


def add_pos_and_class(patches: Tensor, pos: Tensor, cls_token: Tensor) -> Tensor:
    n, d = patches.shape
    if pos.shape != (n + 1, d) or cls_token.shape != (d,):
        raise ShapeError(
            f"pos {pos.shape} / class token {cls_token.shape} do not fit {n} patches of dim {d}")
    return add(concat([reshape(cls_token, (1, d)), patches], axis=0), pos)


def embed(image, weights: EncoderWeights, cfg: EncoderConfig) -> Tensor:
    patches = patchify_embed(image, weights.patch_w, weights.patch_b, cfg.patch_size)
    return add_pos_and_class(patches, weights.pos, weights.cls_token)


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
              attn_bias=None, return_weights: bool = False):
    """Multi-head scaled dot-product attention on ``N x D`` rows.

    Logits are scaled by ``1/sqrt(D / heads)``; ``attn_bias`` (broadcastable to
    ``heads x N x N``) is added before the softmax.
    """
    n, d = q.shape
    if d % heads:
        raise ConfigError(f"dim {d} is not divisible by {heads} heads")
    dh = d // heads

    def split(t):
        return transpose(reshape(t, (n, heads, dh)), (1, 0, 2))

    qh, kh, vh = split(q), split(k), split(v)
    logits = mul(matmul(qh, transpose(kh, (0, 2, 1))), 1.0 / np.sqrt(dh))
    if attn_bias is not None:
        logits = add(logits, attn_bias)
    weights = softmax_rows(logits)
    out = reshape(transpose(matmul(weights, vh), (1, 0, 2)), (n, d))
    return (out, weights) if return_weights else out


def _project(x: Tensor, weight: Tensor, bias: Tensor, pair: Optional[LoRAPair]) -> Tensor:
    if pair is None:
        return linear(x, weight, bias)
    return lora_forward(AdaptedProjection(Projection(weight, bias), pair), x)


def block_forward(tokens: Tensor, weights: BlockWeights, heads: int,
                  lora: Optional[dict] = None, attn_bias=None) -> Tensor:
    """Pre-norm residual block; q and v go through their LoRA pairs when given."""
    d = tokens.shape[-1]
    if weights.wq.shape != (d, d):
        raise ShapeError(f"block weights {weights.wq.shape} do not match token dim {d}")
    if d % heads:
        raise ConfigError(f"dim {d} is not divisible by {heads} heads")
    lora = lora or {}
    h = layer_norm(tokens, weights.ln1_g, weights.ln1_b, LN_EPS)
    q = _project(h, weights.wq, weights.bq, lora.get("q"))
    k = linear(h, weights.wk, weights.bk)
    v = _project(h, weights.wv, weights.bv, lora.get("v"))
    x = add(tokens, linear(attention(q, k, v, heads, attn_bias), weights.wo, weights.bo))
    h = layer_norm(x, weights.ln2_g, weights.ln2_b, LN_EPS)
    return add(x, linear(gelu(linear(h, weights.w1, weights.b1)), weights.w2, weights.b2))


def encoder_forward(tokens: Tensor, blocks: Sequence[BlockWeights], heads: int,
                    loras: Optional[Sequence[dict]] = None) -> list[Tensor]:
    """Run every block and return all intermediate outputs ``t^1 .. t^L``."""
    if not blocks:
        raise ConfigError("encoder needs at least one block")
    if loras is not None and len(loras) != len(blocks):
        raise ConfigError(f"{len(loras)} LoRA entries for {len(blocks)} blocks")
    outputs = []
    x = tokens
    for i, blk in enumerate(blocks):
        x = block_forward(x, blk, heads, None if loras is None else loras[i])
        outputs.append(x)
    return outputs

"""Bin-classification depth head over multi-layer token features."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import (
    Tensor,
    bilinear_resize,
    concat,
    constant,
    getitem,
    matmul,
    parameter,
    reshape,
    softmax_rows,
)
from .errors import ConfigError, ShapeError
from .lora import linear
from .vit import EncoderConfig

UPSAMPLE = 4


@dataclass(frozen=True)
class BinConfig:
    n_bins: int = 256
    d_min: float = 0.0
    d_max: float = 150.0

    def __post_init__(self):
        if self.n_bins < 1:
            raise ConfigError(f"n_bins must be >= 1, got {self.n_bins}")
        if not self.d_max > self.d_min:
            raise ConfigError(f"need d_min < d_max, got [{self.d_min}, {self.d_max}]")

    @property
    def centers(self) -> np.ndarray:
        width = (self.d_max - self.d_min) / self.n_bins
        return self.d_min + (np.arange(self.n_bins) + 0.5) * width


@dataclass
class DecoderHead:
    weight: Tensor  # n_bins x C
    bias: Tensor

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def n_params(self) -> int:
        return self.weight.size + self.bias.size


def init_head(in_dim: int, n_bins: int, seed, std: float = 0.02) -> DecoderHead:
    rng = np.random.default_rng(seed)
    return DecoderHead(parameter(rng.normal(0.0, std, size=(n_bins, in_dim))),
                       parameter(np.zeros(n_bins)))


def assemble_feature_grid(layer_outputs: Sequence[Tensor], cfg: EncoderConfig) -> Tensor:
    """Drop the class token, unflatten to the patch grid, upsample x4, concatenate layers."""
    maps = []
    for layer in cfg.extract_layers:
        if not 1 <= layer <= len(layer_outputs):
            raise ConfigError(f"layer {layer} requested but only {len(layer_outputs)} outputs exist")
        tokens = layer_outputs[layer - 1]
        patches = getitem(tokens, slice(1, None))
        if patches.shape[0] != cfg.n_patches:
            raise ShapeError(f"layer {layer}: {patches.shape[0]} patch tokens, expected {cfg.n_patches}")
        grid = reshape(patches, (cfg.grid_h, cfg.grid_w, patches.shape[1]))
        maps.append(bilinear_resize(grid, UPSAMPLE * cfg.grid_h, UPSAMPLE * cfg.grid_w))
    return maps[0] if len(maps) == 1 else concat(maps, axis=-1)


def bin_logits(grid: Tensor, head: DecoderHead) -> Tensor:
    h, w, c = grid.shape
    if c != head.in_dim:
        raise ShapeError(f"feature grid has {c} channels, head expects {head.in_dim}")
    flat = linear(reshape(grid, (h * w, c)), head.weight, head.bias)
    return reshape(flat, (h, w, head.weight.shape[0]))


def bins_to_depth(logits: Tensor, bins: BinConfig) -> Tensor:
    """Softmax-weighted mean of the bin centres, per pixel."""
    h, w, nb = logits.shape
    if nb != bins.n_bins:
        raise ShapeError(f"{nb} logits per pixel for {bins.n_bins} bins")
    probs = softmax_rows(reshape(logits, (h * w, nb)))
    depth = matmul(probs, constant(bins.centers.reshape(nb, 1)))
    return reshape(depth, (h, w))


def decode(layer_outputs: Sequence[Tensor], cfg: EncoderConfig, head: DecoderHead,
           bins: BinConfig, out_h: int, out_w: int) -> Tensor:
    """Depth in millimetres at ``out_h x out_w`` (every pixel valid)."""
    grid = assemble_feature_grid(layer_outputs, cfg)
    depth = bins_to_depth(bin_logits(grid, head), bins)
    return bilinear_resize(depth, out_h, out_w)

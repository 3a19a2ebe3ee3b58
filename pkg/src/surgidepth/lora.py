"""Low-rank adapters for frozen linear projections.

A pair ``(A, B)`` with ``A: r x d_in`` and ``B: d_out x r`` perturbs a frozen
weight ``W0: d_out x d_in`` so that the effective weight is ``W0 + scale * B A``.
During training the product ``B A`` is never formed; the input goes through
``A`` then ``B``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tensor, add, constant, matmul, mul, parameter, transpose
from .errors import ConfigError, ShapeError

LORA_INIT_STD = 0.02


@dataclass
class LoRAPair:
    A: Tensor
    B: Tensor
    scale: float = 1.0

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    @property
    def n_params(self) -> int:
        return self.A.size + self.B.size

    def delta(self) -> np.ndarray:
        """The dense update ``scale * B @ A`` (deployment only)."""
        return self.scale * (self.B.data @ self.A.data)


@dataclass
class Projection:
    """A frozen linear map ``y = x W^T + b`` acting on row vectors."""

    weight: Tensor
    bias: Optional[Tensor] = None


@dataclass
class AdaptedProjection:
    base: Projection
    lora: LoRAPair

    @property
    def effective_weight(self) -> np.ndarray:
        return self.base.weight.data + self.lora.delta()


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} vs weight {weight.shape}")
    y = matmul(x, transpose(weight))
    return y if bias is None else add(y, bias)


def lora_forward(proj: AdaptedProjection, x: Tensor) -> Tensor:
    """``x W0^T + scale * (x A^T) B^T + b``."""
    w0, pair = proj.base.weight, proj.lora
    if x.shape[-1] != w0.shape[1]:
        raise ShapeError(f"lora_forward: input dim {x.shape[-1]} vs weight {w0.shape}")
    if pair.A.shape[1] != w0.shape[1] or pair.B.shape[0] != w0.shape[0]:
        raise ShapeError(f"LoRA factors {pair.A.shape}/{pair.B.shape} do not fit weight {w0.shape}")
    low = matmul(matmul(x, transpose(pair.A)), transpose(pair.B))
    if pair.scale != 1.0:
        low = mul(low, pair.scale)
    y = add(matmul(x, transpose(w0)), low)
    return y if proj.base.bias is None else add(y, proj.base.bias)


def init_pair(rank: int, d_in: int, d_out: int, seed, scale: float = 1.0,
              std: float = LORA_INIT_STD) -> LoRAPair:
    """Gaussian ``A`` (std 0.02) and all-zero ``B``.

    ``seed`` may be an int or a ``numpy.random.SeedSequence``.
    """
    if rank < 1:
        raise ConfigError(f"LoRA rank must be >= 1, got {rank}")
    if rank > min(d_in, d_out):
        raise ConfigError(f"LoRA rank {rank} exceeds min(d_in, d_out) = {min(d_in, d_out)}")
    rng = np.random.default_rng(seed)
    return LoRAPair(
        A=parameter(rng.normal(0.0, std, size=(rank, d_in))),
        B=parameter(np.zeros((d_out, rank))),
        scale=scale,
    )


def inject_qv(blocks: Sequence, rank: int, seed: int, scale: float = 1.0) -> list[dict[str, LoRAPair]]:
    """One independent ``q`` and ``v`` pair per block; ``k`` and ``o`` stay untouched."""
    if rank < 1:
        raise ConfigError(f"LoRA rank must be >= 1, got {rank}")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = root.spawn(2 * len(blocks))
    pairs = []
    for i, blk in enumerate(blocks):
        d_out, d_in = blk.wq.shape
        if rank > min(d_in, d_out):
            raise ConfigError(f"LoRA rank {rank} exceeds model dim {min(d_in, d_out)}")
        pairs.append({
            "q": init_pair(rank, d_in, d_out, children[2 * i], scale),
            "v": init_pair(rank, blk.wv.shape[1], blk.wv.shape[0], children[2 * i + 1], scale),
        })
    return pairs


def merge(proj: AdaptedProjection) -> Projection:
    """Fold the adapter into a plain frozen projection for deployment."""
    return Projection(constant(proj.effective_weight), proj.base.bias)


def unmerge(merged: Projection, lora: LoRAPair) -> Projection:
    """Subtract the adapter again; recovers ``W0`` up to rounding."""
    return Projection(constant(merged.weight.data - lora.delta()), merged.bias)


def count_trainable(depth: int, dim: int, rank: int, decoder_params: int = 0) -> int:
    """Trainable parameters: ``4 * L * D * r`` for q/v adapters plus the decoder."""
    if min(depth, dim, rank, decoder_params) < 0:
        raise ValueError("parameter counts need non-negative arguments")
    return 4 * depth * dim * rank + decoder_params

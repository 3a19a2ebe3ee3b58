"""Freeze-and-adapt training: AdamW over LoRA factors and the decoder head only."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import Tensor, backward
from .datagen import Sample
from .errors import ConfigError, TrainingError
from .losses import LossWeights, total_loss
from .model import DepthModel

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-5
    weight_decay: float = 1e-4
    batch_size: int = 8
    epochs: int = 50
    lambda1: float = 1.0
    lambda2: float = 0.85
    lambda3: float = 0.5
    rank: int = 4
    seed: int = 0
    grad_scales: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.rank < 0:
            raise ConfigError(f"rank must be >= 0, got {self.rank}")
        if self.grad_scales < 1:
            raise ConfigError(f"grad_scales must be >= 1, got {self.grad_scales}")
        LossWeights(self.lambda1, self.lambda2, self.lambda3)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda3)


@dataclass
class OptimizerState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "OptimizerState":
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params], 0)


@dataclass
class TrainLog:
    epoch_loss: list = field(default_factory=list)
    step_loss: list = field(default_factory=list)


def trainable_params(model: DepthModel) -> list[Tensor]:
    return [t for _, t in model.named_trainable()]


def optimizer_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]],
                   state: OptimizerState, cfg: TrainConfig) -> None:
    """One AdamW update in place.

    Weight decay is decoupled (``p -= lr * wd * p``) and applies to matrices
    only, LoRA ``A`` and ``B`` included; bias vectors are not decayed.
    """
    step = state.step + 1
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {i} at step {step}")
    state.step = step
    bc1 = 1.0 - cfg.beta1 ** step
    bc2 = 1.0 - cfg.beta2 ** step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros(p.shape)
        if p.ndim >= 2 and cfg.weight_decay:
            p.data *= 1.0 - cfg.lr * cfg.weight_decay
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p.data -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def batch_loss(model: DepthModel, batch: Sequence[Sample], cfg: TrainConfig) -> Tensor:
    w = cfg.loss_weights
    loss = None
    for s in batch:
        li = total_loss(model.forward(s.image), s.depth, w, cfg.grad_scales)
        loss = li if loss is None else loss + li
    return loss * (1.0 / len(batch))


def dataset_loss(model: DepthModel, data: Sequence[Sample], cfg: TrainConfig) -> float:
    """Mean per-sample loss, no gradient bookkeeping kept."""
    w = cfg.loss_weights
    return float(np.mean([total_loss(model.forward(s.image), s.depth, w, cfg.grad_scales).item()
                          for s in data]))


def fit(model: DepthModel, data: Sequence[Sample], cfg: TrainConfig,
        on_epoch: Optional[Callable[[int, TrainLog], None]] = None) -> TrainLog:
    """Seeded-shuffle epochs of forward / loss / backward / AdamW over the trainable tensors."""
    if not data:
        raise TrainingError("empty training set")
    params = trainable_params(model)
    state = OptimizerState.for_params(params)
    rng = np.random.default_rng(cfg.seed)
    log = TrainLog()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        losses = []
        for b, start in enumerate(range(0, len(data), cfg.batch_size)):
            batch = [data[i] for i in order[start:start + cfg.batch_size]]
            for p in params:
                p.zero_grad()
            try:
                loss = batch_loss(model, batch, cfg)
                backward(loss)
                optimizer_step(params, [p.grad for p in params], state, cfg)
            except (TrainingError, ValueError) as exc:
                raise TrainingError(f"epoch {epoch + 1}, batch {b + 1}: {exc}") from exc
            losses.append(loss.item())
            log.step_loss.append(loss.item())
        log.epoch_loss.append(float(np.mean(losses)))
        logger.info("epoch %d/%d loss %.6f", epoch + 1, cfg.epochs, log.epoch_loss[-1])
        if on_epoch is not None:
            on_epoch(epoch + 1, log)
    return log


def tensor_digest(tensors: Sequence[Tensor]) -> str:
    """SHA-256 over shapes and raw bytes, for freeze checks."""
    h = hashlib.sha256()
    for t in tensors:
        h.update(str(t.shape).encode())
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()

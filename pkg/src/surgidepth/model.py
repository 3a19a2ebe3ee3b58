"""Full depth network: frozen encoder + q/v adapters + bin-classification head."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .autodiff import Tensor, constant, parameter
from .decoder import BinConfig, DecoderHead, decode, init_head
from .depthmap import DepthMap
from .errors import DataError
from .fileio import load_checkpoint, save_checkpoint
from .lora import AdaptedProjection, LoRAPair, Projection, count_trainable, inject_qv, merge
from .vit import BlockWeights, EncoderConfig, EncoderWeights, embed, encoder_forward, init_encoder

# Per-channel ImageNet input normalisation.
IMAGE_MEAN = np.array([0.485, 0.456, 0.406])
IMAGE_STD = np.array([0.229, 0.224, 0.225])

# Backbone profiles. Patch 14 / 224 px input; intermediate layers follow the
# usual four-way split of each depth. The MLP is the plain 4x GELU variant for
# every size.
PROFILES = {
    "toy": EncoderConfig(14, 4, 64, 4, 56, 56, (1, 2, 3, 4)),
    "small": EncoderConfig(14, 12, 384, 6, 224, 224, (3, 6, 9, 12)),
    "base": EncoderConfig(14, 12, 768, 12, 224, 224, (3, 6, 9, 12)),
    "large": EncoderConfig(14, 24, 1024, 16, 224, 224, (5, 12, 18, 24)),
    "giant": EncoderConfig(14, 40, 1536, 24, 224, 224, (10, 20, 30, 40)),
}


def normalize_image(image) -> np.ndarray:
    """``(image - mean) / std`` per RGB channel; ``image`` is HxWx3 in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    return (image - IMAGE_MEAN) / IMAGE_STD


def count_parameters(cfg: EncoderConfig, rank: int, n_bins: int = 256) -> dict:
    """Analytic parameter budget of a model built from ``cfg``."""
    d, hidden = cfg.dim, cfg.mlp_ratio * cfg.dim
    embed_params = d * cfg.patch_dim + d + (cfg.n_patches + 1) * d + d
    per_block = 4 * (d * d + d) + (hidden * d + hidden) + (d * hidden + d) + 4 * d
    backbone = embed_params + cfg.depth * per_block
    decoder = n_bins * len(cfg.extract_layers) * d + n_bins
    lora = count_trainable(cfg.depth, d, rank)
    total = backbone + lora + decoder
    return {
        "backbone": backbone,
        "lora": lora,
        "decoder": decoder,
        "trainable": lora + decoder,
        "total": total,
        "lora_ratio": lora / total,
    }


@dataclass
class DepthModel:
    cfg: EncoderConfig
    encoder: EncoderWeights
    head: DecoderHead
    bins: BinConfig
    loras: Optional[list] = None

    @property
    def rank(self) -> int:
        return 0 if not self.loras else self.loras[0]["q"].rank

    def layer_outputs(self, image) -> list[Tensor]:
        tokens = embed(normalize_image(image), self.encoder, self.cfg)
        return encoder_forward(tokens, self.encoder.blocks, self.cfg.heads, self.loras)

    def forward(self, image) -> Tensor:
        """Differentiable depth map (mm) at the model input resolution."""
        outputs = self.layer_outputs(image)
        return decode(outputs, self.cfg, self.head, self.bins, self.cfg.img_h, self.cfg.img_w)

    def predict(self, image) -> DepthMap:
        depth = self.forward(np.asarray(image, dtype=np.float64)).data
        return DepthMap(depth.copy(), np.ones(depth.shape, dtype=bool))

    def named_trainable(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, pairs in enumerate(self.loras or []):
            for which in ("q", "v"):
                out.append((f"lora.blocks.{i}.{which}.A", pairs[which].A))
                out.append((f"lora.blocks.{i}.{which}.B", pairs[which].B))
        out.append(("decoder.weight", self.head.weight))
        out.append(("decoder.bias", self.head.bias))
        return out

    def named_frozen(self) -> list[tuple[str, Tensor]]:
        return [(f"encoder.{n}", t) for n, t in self.encoder.named()]

    def merged(self) -> "DepthModel":
        """A copy with every adapter folded into its q/v weight; no adapters remain."""
        if not self.loras:
            return replace(self, loras=None)
        blocks = []
        for blk, pairs in zip(self.encoder.blocks, self.loras):
            q = merge(AdaptedProjection(Projection(blk.wq, blk.bq), pairs["q"]))
            v = merge(AdaptedProjection(Projection(blk.wv, blk.bv), pairs["v"]))
            blocks.append(replace(blk, wq=q.weight, wv=v.weight))
        return replace(self, encoder=replace(self.encoder, blocks=blocks), loras=None)


def build_model(cfg: EncoderConfig, rank: int = 4, seed: int = 0,
                bins: Optional[BinConfig] = None, lora_scale: float = 1.0) -> DepthModel:
    """Random frozen backbone, fresh adapters (B = 0) and a small random head.

    ``rank = 0`` builds the model without adapters.
    """
    bins = bins or BinConfig()
    enc_seed, lora_seed, head_seed = np.random.SeedSequence(seed).spawn(3)
    encoder = init_encoder(cfg, enc_seed)
    loras = inject_qv(encoder.blocks, rank, lora_seed, lora_scale) if rank > 0 else None
    head = init_head(len(cfg.extract_layers) * cfg.dim, bins.n_bins, head_seed)
    return DepthModel(cfg, encoder, head, bins, loras)


def frozen_copy(model: DepthModel) -> DepthModel:
    """Same backbone and head values, no adapters, everything frozen."""
    head = DecoderHead(constant(model.head.weight.data), constant(model.head.bias.data))
    return DepthModel(model.cfg, model.encoder, head, model.bins, None)


def save_model(model: DepthModel, path, include_frozen: bool = True) -> None:
    """Checkpoint every tensor with its role.

    With ``include_frozen=False`` only adapters and head are written; loading
    such a file needs the backbone rebuilt from the same seed.
    """
    tensors = [(n, t.data, "trainable") for n, t in model.named_trainable()]
    if include_frozen:
        tensors += [(n, t.data, "frozen") for n, t in model.named_frozen()]
    scale = model.loras[0]["q"].scale if model.loras else 1.0
    meta = {
        "encoder": model.cfg.to_dict(),
        "bins": {"n_bins": model.bins.n_bins, "d_min": model.bins.d_min, "d_max": model.bins.d_max},
        "rank": model.rank,
        "lora_scale": scale,
    }
    save_checkpoint(path, tensors, meta)


def _take(tensors: dict, name: str) -> np.ndarray:
    try:
        return tensors[name][0]
    except KeyError:
        raise DataError(f"checkpoint has no tensor {name!r}") from None


def load_model(path, backbone_seed: Optional[int] = None) -> DepthModel:
    """Inverse of :func:`save_model`.

    A checkpoint without frozen tensors is completed with the backbone that
    ``build_model(..., seed=backbone_seed)`` would produce.
    """
    tensors, meta = load_checkpoint(path)
    try:
        cfg = EncoderConfig(**meta["encoder"])
        bins = BinConfig(**meta["bins"])
        rank, scale = int(meta["rank"]), float(meta["lora_scale"])
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: incomplete checkpoint metadata ({exc})") from None

    if "encoder.patch_w" in tensors:
        enc = {n[len("encoder."):]: a for n, (a, _) in tensors.items() if n.startswith("encoder.")}
        blocks = []
        for i in range(cfg.depth):
            prefix = f"blocks.{i}."
            blocks.append(BlockWeights.from_arrays(
                {k[len(prefix):]: v for k, v in enc.items() if k.startswith(prefix)}))
        encoder = EncoderWeights(constant(enc["patch_w"]), constant(enc["patch_b"]),
                                 constant(enc["pos"]), constant(enc["cls_token"]), blocks)
    elif backbone_seed is not None:
        encoder = build_model(cfg, 0, backbone_seed, bins).encoder
    else:
        raise DataError(f"{path} holds no backbone and no backbone seed was given")

    loras = None
    if rank > 0:
        loras = [{w: LoRAPair(parameter(_take(tensors, f"lora.blocks.{i}.{w}.A")),
                              parameter(_take(tensors, f"lora.blocks.{i}.{w}.B")), scale)
                  for w in ("q", "v")} for i in range(cfg.depth)]
    head = DecoderHead(parameter(_take(tensors, "decoder.weight")),
                       parameter(_take(tensors, "decoder.bias")))
    return DepthModel(cfg, encoder, head, bins, loras)

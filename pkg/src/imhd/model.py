"""Full model assembly: ViT encoder, tile-slot tables, projector, decoder
with gated blocks; parameter naming, freeze groups and counting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import decoder as dec_mod
from . import nn
from . import tiling
from . import vit as vit_mod
from .rng import Rng
from .tensor import Tensor

# freeze-mask groups: the bridge is the gated blocks plus the projection path
GROUP_VIT = "vit"
GROUP_BRIDGE = "bridge"
GROUP_LLM = "llm"
ALL_GROUPS = (GROUP_VIT, GROUP_BRIDGE, GROUP_LLM)
_GROUP_ALIASES = {"gated_blocks+projector": GROUP_BRIDGE}


def canonical_group(name: str) -> str:
    name = _GROUP_ALIASES.get(name, name)
    if name not in ALL_GROUPS:
        raise ValueError(f"unknown parameter group {name!r}; expected one of {ALL_GROUPS}")
    return name


@dataclass
class ModelConfig:
    vit: vit_mod.VitConfig = field(default_factory=vit_mod.VitConfig)
    decoder: dec_mod.DecoderConfig = field(default_factory=dec_mod.DecoderConfig)
    max_grid: int = 3
    projector_hidden: int = 64
    pool_slots: int | None = None   # perceiver-style bottleneck; None = off

    @property
    def d_visual(self) -> int:
        return self.decoder.d_visual


@dataclass
class MultimodalModel:
    cfg: ModelConfig
    vit: vit_mod.VitParams
    pos_table: tiling.TilePosTable
    projector: nn.MlpParams
    pool_queries: Tensor | None
    dec: dec_mod.DecoderParams
    xattn: dict[int, dec_mod.GatedXAttnParams]
    seed: int = 0

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = list(nn.iter_named(self.vit, "vit"))
        out += nn.iter_named(self.pos_table, "pos_table")
        out += nn.iter_named(self.projector, "projector")
        if self.pool_queries is not None:
            out.append(("pool.queries", self.pool_queries))
        out += nn.iter_named(self.xattn, "xattn")
        out += nn.iter_named(self.dec, "dec")
        return out

    @property
    def vit_resolution(self) -> int:
        return self.vit.resolution(self.cfg.vit.patch_size)

    def encode_image(self, img: np.ndarray, max_grid: int | None = None,
                     process_order: list[int] | None = None) -> tiling.VisualFeatures:
        return tiling.encode_image(
            img, self.vit, self.cfg.vit, self.pos_table, self.projector,
            max_grid=self.cfg.max_grid if max_grid is None else max_grid,
            pool_queries=self.pool_queries, process_order=process_order)

    def forward_logits(self, ids, visual=None, media=None) -> Tensor:
        return dec_mod.decoder_forward(ids, self.dec, self.cfg.decoder,
                                       visual=visual, xattn=self.xattn, media=media)


def group_of(name: str) -> str:
    """Map a parameter name to its freeze group."""
    if name.startswith("vit."):
        return GROUP_VIT
    if name.startswith(("pos_table.", "projector.", "pool.", "xattn.")):
        return GROUP_BRIDGE
    if name.startswith("dec."):
        return GROUP_LLM
    raise ValueError(f"cannot place parameter {name!r} in a freeze group")


def build_model(cfg: ModelConfig, rng: Rng, vit_resolution: int | None = None) -> MultimodalModel:
    d_vit = cfg.vit.d_model
    schedule = dec_mod.insertion_schedule(cfg.decoder.n_layers, cfg.decoder.xattn_interval)
    xattn = {layer: dec_mod.init_gated_block(rng.split(f"xattn{layer}"), cfg.decoder.d_model,
                                             cfg.d_visual, cfg.decoder.mlp_ratio)
             for layer in schedule}
    pool = None
    if cfg.pool_slots:
        pool = Tensor(rng.split("pool").trunc_normal((cfg.pool_slots, d_vit)), requires_grad=True)
    return MultimodalModel(
        cfg=cfg,
        vit=vit_mod.init_vit(cfg.vit, rng.split("vit"), resolution=vit_resolution),
        pos_table=tiling.init_pos_table(rng.split("pos_table"), cfg.max_grid, d_vit),
        projector=nn.init_mlp(rng.split("projector"), d_vit, cfg.projector_hidden, cfg.d_visual),
        pool_queries=pool,
        dec=dec_mod.init_decoder(cfg.decoder, rng.split("dec")),
        xattn=xattn,
        seed=rng.seed,
    )


def extend_model_resolution(model: MultimodalModel, new_resolution: int) -> None:
    model.vit = vit_mod.extend_resolution(model.vit, model.cfg.vit, new_resolution)


def count_parameters(model: MultimodalModel) -> dict[str, int]:
    """Exact parameter counts by component; values sum to the total.

    The tile-slot tables (and pool queries, when enabled) sit on the
    projection path, so they are counted under "projector".
    """
    buckets = {"vit": 0, "decoder": 0, "gated_blocks": 0, "projector": 0}
    for name, p in model.named_parameters():
        if name.startswith("vit."):
            buckets["vit"] += p.size
        elif name.startswith("xattn."):
            buckets["gated_blocks"] += p.size
        elif name.startswith("dec."):
            buckets["decoder"] += p.size
        else:
            buckets["projector"] += p.size
    return buckets

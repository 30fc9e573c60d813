"""Miniature ViT over one base-resolution tile.

The encoder exposes its penultimate-layer hidden states as features: with
n_layers blocks configured, the forward pass runs the first n_layers - 1
and never touches the last block's weights. The positional grid can be
bilinearly resampled to extend the supported tile resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nn
from . import tensor as T
from .rng import Rng
from .tensor import Tensor, bilinear_resample_grid


class ResolutionMismatch(ValueError):
    """Tile resolution does not match the positional grid; interpolate first."""


@dataclass
class VitConfig:
    base_resolution: int = 32
    patch_size: int = 4
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 3
    channels: int = 3
    use_cls: bool = True
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.base_resolution % self.patch_size != 0:
            raise ValueError("base_resolution must be divisible by patch_size")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.n_layers < 2:
            raise ValueError("need n_layers >= 2 to expose a penultimate layer")


def vit_token_count(resolution: int, patch_size: int, use_cls: bool) -> int:
    if resolution % patch_size != 0:
        raise ValueError(f"resolution {resolution} not divisible by patch size {patch_size}")
    side = resolution // patch_size
    return side * side + (1 if use_cls else 0)


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """[c, H, W] -> [n_patches, c*p*p], patches row-major from the top-left."""
    image = np.asarray(image, dtype=np.float64)
    c, h, w = image.shape
    if h % patch_size or w % patch_size:
        raise ValueError(f"image {h}x{w} not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    # [c, gh, p, gw, p] -> [gh, gw, c, p, p] -> flatten per patch
    blocks = image.reshape(c, gh, patch_size, gw, patch_size)
    return blocks.transpose(1, 3, 0, 2, 4).reshape(gh * gw, c * patch_size * patch_size)


@dataclass
class VitParams:
    patch_proj: nn.LinearParams
    cls: Tensor | None
    cls_pos: Tensor | None
    pos_embed: Tensor            # [grid, grid, d_model]
    blocks: list[nn.BlockParams]

    @property
    def grid(self) -> int:
        return self.pos_embed.shape[0]

    def resolution(self, patch_size: int) -> int:
        return self.grid * patch_size


def init_vit(cfg: VitConfig, rng: Rng, resolution: int | None = None) -> VitParams:
    res = cfg.base_resolution if resolution is None else resolution
    if res % cfg.patch_size != 0:
        raise ValueError("resolution must be divisible by patch_size")
    grid = res // cfg.patch_size
    d = cfg.d_model
    return VitParams(
        patch_proj=nn.init_linear(rng.split("patch"), cfg.channels * cfg.patch_size ** 2, d),
        cls=Tensor(rng.split("cls").trunc_normal((d,)), requires_grad=True) if cfg.use_cls else None,
        cls_pos=Tensor(np.zeros(d), requires_grad=True) if cfg.use_cls else None,
        pos_embed=Tensor(rng.split("pos").trunc_normal((grid, grid, d)), requires_grad=True),
        blocks=[nn.init_block(rng.split(f"block{i}"), d, cfg.mlp_ratio) for i in range(cfg.n_layers)],
    )


def vit_forward(tile, params: VitParams, cfg: VitConfig) -> Tensor:
    """Encode one [c, R, R] tile to [tokens, d_model] penultimate features."""
    data = tile.data if isinstance(tile, Tensor) else np.asarray(tile, dtype=np.float64)
    c, h, w = data.shape
    want = params.resolution(cfg.patch_size)
    if c != cfg.channels:
        raise ValueError(f"expected {cfg.channels} channels, got {c}")
    if h != want or w != want:
        raise ResolutionMismatch(
            f"tile is {h}x{w} but the positional grid supports {want}x{want}; "
            "call extend_resolution to interpolate the grid first")
    patches = Tensor(patchify(data, cfg.patch_size))
    x = nn.linear(patches, params.patch_proj)
    grid = params.grid
    pos = params.pos_embed.reshape(grid * grid, cfg.d_model)
    if cfg.use_cls:
        x = T.concat([params.cls.reshape(1, cfg.d_model), x], axis=0)
        pos = T.concat([params.cls_pos.reshape(1, cfg.d_model), pos], axis=0)
    x = T.add(x, pos)
    for block in params.blocks[:-1]:
        x = nn.transformer_block(x, block, cfg.n_heads)
    return x


def extend_resolution(params: VitParams, cfg: VitConfig, new_resolution: int) -> VitParams:
    """Resample the positional grid for a new tile resolution.

    All other weights are shared by reference; the cls positional vector is
    copied unchanged. Corner grid embeddings are preserved exactly.
    """
    if new_resolution % cfg.patch_size != 0:
        raise ValueError("new_resolution must be divisible by patch_size")
    new_grid = new_resolution // cfg.patch_size
    if new_grid == params.grid:
        return params
    resampled = bilinear_resample_grid(params.pos_embed.data, new_grid, new_grid)
    pos = Tensor(resampled, requires_grad=params.pos_embed.requires_grad)
    return replace(params, pos_embed=pos)

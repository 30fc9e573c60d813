"""Dynamic-resolution handling: snap-resize, tile + thumbnail, 2D tile
position embeddings, MLP projection, and visual-feature assembly.

The canonical feature order is thumbnail first, then tiles row-major; each
segment is tokens_per_tile rows of the projected width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from . import vit as vit_mod
from .rng import Rng
from .tensor import Tensor, bilinear_resample_grid


def snap_resolution(h: int, w: int, tile_size: int, max_grid: int) -> tuple[int, int]:
    """Round each axis to the nearest tile multiple (ties up), clamped to
    [tile_size, max_grid * tile_size]."""
    if h < 1 or w < 1:
        raise ValueError("image dims must be >= 1")

    def snap(x: int) -> int:
        m = (2 * x + tile_size) // (2 * tile_size)
        return min(max(m, 1), max_grid) * tile_size

    return snap(h), snap(w)


def resize_image(img: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Align-corners bilinear resize of a [c, h, w] image."""
    img = np.asarray(img, dtype=np.float64)
    grid = bilinear_resample_grid(img.transpose(1, 2, 0), new_h, new_w)
    return np.ascontiguousarray(grid.transpose(2, 0, 1))


@dataclass
class TileLayout:
    rows: int
    cols: int
    tile_size: int
    includes_thumbnail: bool = True

    @property
    def n_tiles(self) -> int:
        return self.rows * self.cols

    @property
    def n_passes(self) -> int:
        return self.n_tiles + (1 if self.includes_thumbnail else 0)


@dataclass
class TiledImage:
    layout: TileLayout
    tiles: list[np.ndarray]              # row-major [c, T, T] crops
    indices: list[tuple[int, int]]       # (row, col) per tile
    thumbnail: np.ndarray                # [c, T, T]
    original_dims: tuple[int, int]


def tile_image(img: np.ndarray, tile_size: int, max_grid: int) -> TiledImage:
    """Snap, resize, crop non-overlapping tiles, and keep a thumbnail of the
    snapped image."""
    img = np.asarray(img, dtype=np.float64)
    _, h, w = img.shape
    new_h, new_w = snap_resolution(h, w, tile_size, max_grid)
    snapped = img if (new_h, new_w) == (h, w) else resize_image(img, new_h, new_w)
    rows, cols = new_h // tile_size, new_w // tile_size
    tiles, indices = [], []
    for i in range(rows):
        for j in range(cols):
            tiles.append(snapped[:, i * tile_size:(i + 1) * tile_size,
                                 j * tile_size:(j + 1) * tile_size].copy())
            indices.append((i, j))
    thumbnail = resize_image(snapped, tile_size, tile_size)
    return TiledImage(layout=TileLayout(rows=rows, cols=cols, tile_size=tile_size),
                      tiles=tiles, indices=indices, thumbnail=thumbnail,
                      original_dims=(h, w))


@dataclass
class TilePosTable:
    """Learned 2D slot embeddings: POS(i, j) = row[i] + col[j]; the thumbnail
    has its own vector. All vectors live in the ViT feature width."""
    row: Tensor    # [max_grid, d_model]
    col: Tensor    # [max_grid, d_model]
    thumb: Tensor  # [d_model]

    @property
    def max_grid(self) -> int:
        return self.row.shape[0]


def init_pos_table(rng: Rng, max_grid: int, d_model: int) -> TilePosTable:
    return TilePosTable(
        row=Tensor(rng.split("row").trunc_normal((max_grid, d_model)), requires_grad=True),
        col=Tensor(rng.split("col").trunc_normal((max_grid, d_model)), requires_grad=True),
        thumb=Tensor(rng.split("thumb").trunc_normal((d_model,)), requires_grad=True),
    )


def zero_pos_table(max_grid: int, d_model: int) -> TilePosTable:
    """The w/o-PE ablation: slot embeddings contribute nothing."""
    return TilePosTable(row=Tensor(np.zeros((max_grid, d_model)), requires_grad=True),
                        col=Tensor(np.zeros((max_grid, d_model)), requires_grad=True),
                        thumb=Tensor(np.zeros(d_model), requires_grad=True))


def tile_position_embedding(table: TilePosTable, i: int | None = None,
                            j: int | None = None, thumbnail: bool = False) -> Tensor:
    if thumbnail:
        return table.thumb
    if not (0 <= i < table.max_grid and 0 <= j < table.max_grid):
        raise ValueError(f"tile index ({i}, {j}) outside grid of size {table.max_grid}")
    row = T.embedding(table.row, np.array([i])).reshape(-1)
    col = T.embedding(table.col, np.array([j])).reshape(-1)
    return T.add(row, col)


def project_features(vit_tokens: Tensor, projector: nn.MlpParams) -> Tensor:
    """Token-wise two-layer MLP from ViT width down to the fused width."""
    if vit_tokens.shape[-1] != projector.fc1.w.shape[0]:
        raise T.ShapeError(
            f"projector expects width {projector.fc1.w.shape[0]}, got {vit_tokens.shape[-1]}")
    return nn.mlp(vit_tokens, projector)


def attention_pool(tokens: Tensor, queries: Tensor) -> Tensor:
    """Compress [n, d] tokens to [q, d] slots with learned-query attention.

    This is the optional perceiver-style bottleneck; off by default.
    """
    d = tokens.shape[-1]
    scores = T.mul(T.matmul(queries, tokens.transpose(1, 0)), 1.0 / np.sqrt(d))
    return T.matmul(T.softmax(scores, axis=-1), tokens)


@dataclass
class VisualFeatures:
    tokens: Tensor                 # [(tiles+1) * tokens_per_segment, d_visual]
    segment_ids: np.ndarray        # per-row segment index; thumbnail = 0
    tokens_per_segment: int
    layout: TileLayout

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def d_visual(self) -> int:
        return self.tokens.shape[1]


def vit_tile_tokens(tiled: TiledImage, params: vit_mod.VitParams,
                    cfg: vit_mod.VitConfig) -> list[Tensor]:
    """Raw ViT features per segment: thumbnail first, then tiles row-major."""
    return [vit_mod.vit_forward(tiled.thumbnail, params, cfg)] + \
           [vit_mod.vit_forward(t, params, cfg) for t in tiled.tiles]


def assemble_features(segment_tokens: list[Tensor], tiled: TiledImage,
                      table: TilePosTable, projector: nn.MlpParams,
                      pool_queries: Tensor | None = None,
                      process_order: list[int] | None = None) -> VisualFeatures:
    """Add slot embeddings, optionally pool, project, and concatenate.

    ``process_order`` only changes the order segments are computed in (the
    concurrency hook); the assembled block is identical for any order.
    """
    n_seg = len(segment_tokens)
    order = list(range(n_seg)) if process_order is None else list(process_order)
    if sorted(order) != list(range(n_seg)):
        raise ValueError("process_order must be a permutation of the segments")
    slots: list[Tensor | None] = [None] * n_seg
    for s in order:
        toks = segment_tokens[s]
        if s == 0:
            pos = table.thumb
        else:
            i, j = tiled.indices[s - 1]
            pos = tile_position_embedding(table, i, j)
        toks = T.add(toks, pos)
        if pool_queries is not None:
            toks = attention_pool(toks, pool_queries)
        slots[s] = project_features(toks, projector)
    per_seg = slots[0].shape[0]
    tokens = T.concat(slots, axis=0)
    segment_ids = np.repeat(np.arange(n_seg), per_seg)
    return VisualFeatures(tokens=tokens, segment_ids=segment_ids,
                          tokens_per_segment=per_seg, layout=tiled.layout)


def encode_image(img: np.ndarray, vit_params: vit_mod.VitParams, vit_cfg: vit_mod.VitConfig,
                 table: TilePosTable, projector: nn.MlpParams, max_grid: int,
                 pool_queries: Tensor | None = None,
                 process_order: list[int] | None = None) -> VisualFeatures:
    tile_size = vit_params.resolution(vit_cfg.patch_size)
    tiled = tile_image(img, tile_size, max_grid)
    segs = vit_tile_tokens(tiled, vit_params, vit_cfg)
    return assemble_features(segs, tiled, table, projector,
                             pool_queries=pool_queries, process_order=process_order)

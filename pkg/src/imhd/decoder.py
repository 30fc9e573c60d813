"""Causal byte-level decoder with tanh-gated cross-attention blocks.

Gated blocks precede every ``xattn_interval``-th self-attention layer. Text
hidden states are the queries; projected visual tokens are keys/values. Both
gate vectors start at zero, so a fresh model is exactly its text-only self.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .rng import Rng
from .tensor import Tensor
from .tiling import VisualFeatures

IMAGE_TOKEN = 256
EOS_TOKEN = 257
N_SPECIAL = 2


def encode_text(text: str | bytes) -> list[int]:
    """Byte-level ids: token id == byte value."""
    data = text.encode() if isinstance(text, str) else bytes(text)
    return list(data)


def decode_tokens(ids) -> bytes:
    return bytes(i for i in ids if 0 <= i < 256)


@dataclass
class DecoderConfig:
    vocab_size: int = 258
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 8
    max_seq_len: int = 256
    xattn_interval: int = 4
    d_visual: int = 48
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if not 1 <= self.xattn_interval <= self.n_layers:
            raise ValueError("xattn_interval must be in [1, n_layers]")


def insertion_schedule(n_layers: int, interval: int) -> tuple[int, ...]:
    """Layer indices that get a gated cross-attention block in front."""
    if interval < 1:
        raise ValueError("interval must be >= 1")
    return tuple(range(0, n_layers, interval))


@dataclass
class GatedXAttnParams:
    """Cross-attention + feed-forward, each gated by tanh of a per-channel
    vector. Gates init to exactly zero so the block starts as an identity."""
    ln: nn.LayerNormParams
    attn: nn.AttentionParams
    attn_gate: Tensor
    ff_ln: nn.LayerNormParams
    ff: nn.MlpParams
    ff_gate: Tensor


def init_gated_block(rng: Rng, d_model: int, d_visual: int, mlp_ratio: int = 4) -> GatedXAttnParams:
    return GatedXAttnParams(
        ln=nn.init_layernorm(d_model),
        attn=nn.init_attention(rng.split("attn"), d_model, d_kv=d_visual, bias=False),
        attn_gate=Tensor(np.zeros(d_model), requires_grad=True),
        ff_ln=nn.init_layernorm(d_model),
        ff=nn.init_mlp(rng.split("ff"), d_model, mlp_ratio * d_model, d_model, bias=False),
        ff_gate=Tensor(np.zeros(d_model), requires_grad=True),
    )


@dataclass
class DecoderParams:
    tok_embed: Tensor   # [vocab, d]; tied with the output projection
    pos_embed: Tensor   # [max_seq_len, d]
    blocks: list[nn.BlockParams]
    ln_f: nn.LayerNormParams


def init_decoder(cfg: DecoderConfig, rng: Rng) -> DecoderParams:
    d = cfg.d_model
    return DecoderParams(
        tok_embed=Tensor(rng.split("tok").trunc_normal((cfg.vocab_size, d)), requires_grad=True),
        pos_embed=Tensor(rng.split("pos").trunc_normal((cfg.max_seq_len, d)), requires_grad=True),
        blocks=[nn.init_block(rng.split(f"block{i}"), d, cfg.mlp_ratio) for i in range(cfg.n_layers)],
        ln_f=nn.init_layernorm(d),
    )


def media_indices(ids) -> list[int]:
    """Per-token index of the most recent image marker at or before it,
    or -1 before any image. Indices are non-decreasing."""
    out, current = [], -1
    for t in ids:
        if t == IMAGE_TOKEN:
            current += 1
        out.append(current)
    return out


def _cross_mask(media: list[int], features: list[VisualFeatures]) -> np.ndarray:
    """[t, total_visual] boolean mask: token row may attend only tokens of
    its own image's feature block."""
    image_of = np.concatenate([np.full(f.n_tokens, i) for i, f in enumerate(features)])
    med = np.asarray(media)[:, None]
    return (med >= 0) & (image_of[None, :] == med)


def gated_xattn_forward(hidden: Tensor, visual: Tensor, block: GatedXAttnParams,
                        n_heads: int, mask: np.ndarray | None = None) -> Tensor:
    """residual + tanh(attn_gate) * xattn, then residual + tanh(ff_gate) * ff."""
    if visual.shape[0] == 0:
        raise ValueError("empty visual block passed to gated cross-attention")
    attn = nn.multihead_attention(nn.layer_norm(hidden, block.ln), visual,
                                  block.attn, n_heads, mask=mask)
    hidden = T.add(hidden, T.mul(T.tanh(block.attn_gate), attn))
    ff = nn.mlp(nn.layer_norm(hidden, block.ff_ln), block.ff)
    return T.add(hidden, T.mul(T.tanh(block.ff_gate), ff))


def decoder_forward(ids, params: DecoderParams, cfg: DecoderConfig,
                    visual: VisualFeatures | list[VisualFeatures] | None = None,
                    xattn: dict[int, GatedXAttnParams] | None = None,
                    media: list[int] | None = None) -> Tensor:
    """Logits [t, vocab] with causal self-attention and optional gated
    cross-attention per the insertion schedule.

    With ``visual`` None the gated blocks are skipped entirely, which is the
    text-only baseline a fresh (gate-zero) model reproduces exactly.
    """
    ids = list(ids)
    t = len(ids)
    if t > cfg.max_seq_len:
        raise ValueError(f"sequence of {t} tokens exceeds max_seq_len {cfg.max_seq_len}")
    if any(i < 0 or i >= cfg.vocab_size for i in ids):
        raise IndexError(f"token id out of range [0, {cfg.vocab_size})")

    feats = visual if isinstance(visual, (list, tuple)) or visual is None else [visual]
    cross_mask = None
    vtokens = None
    if feats:
        if media is None:
            media = media_indices(ids)
        if max(media) >= len(feats):
            raise ValueError(f"media mask references image {max(media)} but only "
                             f"{len(feats)} feature blocks were given")
        vtokens = feats[0].tokens if len(feats) == 1 else T.concat([f.tokens for f in feats], axis=0)
        cross_mask = _cross_mask(media, feats)

    x = T.add(T.embedding(params.tok_embed, np.asarray(ids)),
              T.narrow(params.pos_embed, 0, 0, t))
    causal = np.tril(np.ones((t, t), dtype=bool))
    schedule = insertion_schedule(cfg.n_layers, cfg.xattn_interval)
    for layer, block in enumerate(params.blocks):
        if vtokens is not None and layer in schedule:
            x = gated_xattn_forward(x, vtokens, xattn[layer], cfg.n_heads, mask=cross_mask)
        x = nn.transformer_block(x, block, cfg.n_heads, mask=causal)
    x = nn.layer_norm(x, params.ln_f)
    return T.matmul(x, params.tok_embed.transpose(1, 0))


def gate_statistics(xattn: dict[int, GatedXAttnParams]) -> dict[int, dict[str, float]]:
    """Mean |tanh(gate)| per gated block and gate type; all zeros at init."""
    return {layer: {"attn": float(np.abs(np.tanh(b.attn_gate.data)).mean()),
                    "ff": float(np.abs(np.tanh(b.ff_gate.data)).mean())}
            for layer, b in sorted(xattn.items())}

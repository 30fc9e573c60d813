"""Shared transformer building blocks: linear / layernorm / attention / MLP.

Parameter structs are plain dataclasses of Tensors; ``iter_named`` walks any
of them (and containers of them) into stable dotted names for checkpoints,
freeze masks and parameter counting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, is_dataclass

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import Tensor


@dataclass
class LinearParams:
    w: Tensor
    b: Tensor | None = None


def init_linear(rng: Rng, d_in: int, d_out: int, bias: bool = True, std: float = 0.02) -> LinearParams:
    w = Tensor(rng.trunc_normal((d_in, d_out), std=std), requires_grad=True)
    b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None
    return LinearParams(w=w, b=b)


def linear(x: Tensor, p: LinearParams) -> Tensor:
    out = T.matmul(x, p.w)
    if p.b is not None:
        out = T.add(out, p.b)
    return out


@dataclass
class LayerNormParams:
    g: Tensor
    b: Tensor


def init_layernorm(d: int) -> LayerNormParams:
    return LayerNormParams(g=Tensor(np.ones(d), requires_grad=True),
                           b=Tensor(np.zeros(d), requires_grad=True))


def layer_norm(x: Tensor, p: LayerNormParams) -> Tensor:
    return T.layernorm(x, p.g, p.b)


@dataclass
class AttentionParams:
    q: LinearParams
    k: LinearParams
    v: LinearParams
    o: LinearParams


def init_attention(rng: Rng, d_model: int, d_kv: int | None = None, bias: bool = True) -> AttentionParams:
    d_kv = d_model if d_kv is None else d_kv
    return AttentionParams(
        q=init_linear(rng.split("q"), d_model, d_model, bias=bias),
        k=init_linear(rng.split("k"), d_kv, d_model, bias=bias),
        v=init_linear(rng.split("v"), d_kv, d_model, bias=bias),
        o=init_linear(rng.split("o"), d_model, d_model, bias=bias),
    )


def multihead_attention(q_in: Tensor, kv_in: Tensor, p: AttentionParams,
                        n_heads: int, mask: np.ndarray | None = None) -> Tensor:
    """Attention of [t, d] queries over [n, d_kv] keys/values.

    ``mask`` is a boolean [t, n] array of allowed pairs; rows with nothing
    allowed yield exactly zero output. None means attend to everything.
    """
    t, d = q_in.shape
    dh = d // n_heads
    q = linear(q_in, p.q).reshape(t, n_heads, dh).transpose(1, 0, 2)
    n = kv_in.shape[0]
    k = linear(kv_in, p.k).reshape(n, n_heads, dh).transpose(1, 2, 0)
    v = linear(kv_in, p.v).reshape(n, n_heads, dh).transpose(1, 0, 2)
    scores = T.mul(T.matmul(q, k), 1.0 / math.sqrt(dh))
    if mask is None:
        attn = T.softmax(scores, axis=-1)
    else:
        attn = T.masked_softmax(scores, mask[None, :, :])
    out = T.matmul(attn, v).transpose(1, 0, 2).reshape(t, d)
    return linear(out, p.o)


@dataclass
class MlpParams:
    fc1: LinearParams
    fc2: LinearParams


def init_mlp(rng: Rng, d_in: int, d_hidden: int, d_out: int, bias: bool = True) -> MlpParams:
    return MlpParams(
        fc1=init_linear(rng.split("fc1"), d_in, d_hidden, bias=bias),
        fc2=init_linear(rng.split("fc2"), d_hidden, d_out, bias=bias),
    )


def mlp(x: Tensor, p: MlpParams) -> Tensor:
    return linear(T.gelu(linear(x, p.fc1)), p.fc2)


@dataclass
class BlockParams:
    """Pre-norm transformer block: attention then MLP, each with residual."""
    ln1: LayerNormParams
    attn: AttentionParams
    ln2: LayerNormParams
    mlp: MlpParams


def init_block(rng: Rng, d_model: int, mlp_ratio: int = 4) -> BlockParams:
    return BlockParams(
        ln1=init_layernorm(d_model),
        attn=init_attention(rng.split("attn"), d_model),
        ln2=init_layernorm(d_model),
        mlp=init_mlp(rng.split("mlp"), d_model, mlp_ratio * d_model, d_model),
    )


def transformer_block(x: Tensor, p: BlockParams, n_heads: int,
                      mask: np.ndarray | None = None) -> Tensor:
    h = layer_norm(x, p.ln1)
    x = T.add(x, multihead_attention(h, h, p.attn, n_heads, mask=mask))
    return T.add(x, mlp(layer_norm(x, p.ln2), p.mlp))


def iter_named(obj, prefix: str):
    """Yield (dotted_name, Tensor) pairs from nested dataclasses/lists/dicts."""
    if obj is None:
        return
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif is_dataclass(obj):
        for f in fields(obj):
            yield from iter_named(getattr(obj, f.name), f"{prefix}.{f.name}")
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from iter_named(item, f"{prefix}.{i}")
    elif isinstance(obj, dict):
        for key in sorted(obj):
            yield from iter_named(obj[key], f"{prefix}.{key}")


def n_params(named) -> int:
    return sum(p.size for _, p in named)

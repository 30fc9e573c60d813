import math

import numpy as np
import numpy.testing as npt
import pytest

from imhd import nn
from imhd import tensor as T
from imhd.decoder import (EOS_TOKEN, IMAGE_TOKEN, decode_tokens, encode_text,
                          gate_statistics, gated_xattn_forward, init_gated_block,
                          insertion_schedule, media_indices)
from imhd.model import ModelConfig, build_model, count_parameters
from imhd.rng import Rng
from imhd.tensor import Tensor
from imhd.tiling import TileLayout, VisualFeatures
from imhd.vit import VitConfig


def tiny_model(seed=0, **dec_kw):
    from imhd.decoder import DecoderConfig
    cfg = ModelConfig(
        vit=VitConfig(base_resolution=8, patch_size=4, d_model=16, n_heads=2, n_layers=2),
        decoder=DecoderConfig(vocab_size=258, d_model=32, n_heads=4, n_layers=4,
                              max_seq_len=64, xattn_interval=2, d_visual=12, **dec_kw),
        projector_hidden=16,
    )
    return build_model(cfg, Rng(seed))


def fake_features(rng, n_tokens=6, d_visual=12):
    return VisualFeatures(tokens=Tensor(rng.normal(size=(n_tokens, d_visual))),
                          segment_ids=np.zeros(n_tokens, dtype=int),
                          tokens_per_segment=n_tokens,
                          layout=TileLayout(rows=1, cols=1, tile_size=8))


def test_tokenizer_roundtrip():
    ids = encode_text("Hello, bytes!")
    assert all(0 <= i < 256 for i in ids)
    assert decode_tokens(ids) == b"Hello, bytes!"
    assert decode_tokens([IMAGE_TOKEN] + ids + [EOS_TOKEN]) == b"Hello, bytes!"
    assert IMAGE_TOKEN == 256 and EOS_TOKEN == 257


def test_insertion_schedule_paper_scale():
    assert insertion_schedule(32, 4) == tuple(range(0, 32, 4))
    assert len(insertion_schedule(32, 4)) == 8


def test_insertion_schedule_toy_and_dense():
    assert insertion_schedule(8, 4) == (0, 4)
    assert insertion_schedule(8, 2) == (0, 2, 4, 6)


def test_insertion_schedule_size_law():
    for n in range(1, 33):
        for k in range(1, n + 1):
            assert len(insertion_schedule(n, k)) == math.ceil(n / k)


def test_gated_block_is_identity_at_init():
    rng = np.random.default_rng(0)
    block = init_gated_block(Rng(1), 32, 12)
    hidden = Tensor(rng.normal(size=(5, 32)))
    visual = Tensor(rng.normal(size=(7, 12)))
    out = gated_xattn_forward(hidden, visual, block, n_heads=4)
    assert np.abs(out.data - hidden.data).max() == 0.0


def test_gated_block_single_token_attention():
    # one query, one visual token, huge gates: the attention sub-block output
    # is exactly the o-projection of that token's value vector
    rng = np.random.default_rng(2)
    block = init_gated_block(Rng(3), 32, 12)
    block.attn_gate.data[...] = 50.0   # tanh -> 1
    block.ff_gate.data[...] = 0.0
    hidden = Tensor(rng.normal(size=(1, 32)))
    visual = Tensor(rng.normal(size=(1, 12)))
    out = gated_xattn_forward(hidden, visual, block, n_heads=4)
    v = visual.data @ block.attn.v.w.data
    expect = hidden.data + np.tanh(50.0) * (v @ block.attn.o.w.data)
    npt.assert_allclose(out.data, expect, rtol=1e-10)


def test_gated_block_rejects_empty_visual():
    block = init_gated_block(Rng(4), 32, 12)
    with pytest.raises(ValueError):
        gated_xattn_forward(Tensor(np.zeros((2, 32))), Tensor(np.zeros((0, 12))), block, 4)


def test_masked_out_rows_get_zero_attention():
    # rows whose mask is empty receive exactly zero from cross-attention
    # (bias-free projections make the zero exact)
    rng = np.random.default_rng(5)
    block = init_gated_block(Rng(6), 32, 12)
    block.attn_gate.data[...] = rng.normal(size=32)
    block.ff_gate.data[...] = 0.0
    hidden = Tensor(rng.normal(size=(4, 32)))
    visual = Tensor(rng.normal(size=(6, 12)))
    mask = np.zeros((4, 6), dtype=bool)
    mask[2:] = True  # first two rows precede any image
    out = gated_xattn_forward(hidden, visual, block, n_heads=4, mask=mask)
    npt.assert_array_equal(out.data[:2], hidden.data[:2])
    assert np.abs(out.data[2:] - hidden.data[2:]).max() > 0


def test_media_indices_convention():
    ids = [65, IMAGE_TOKEN, 66, 67, IMAGE_TOKEN, 68]
    assert media_indices(ids) == [-1, 0, 0, 0, 1, 1]


def test_gate_zero_identity_full_model():
    m = tiny_model()
    rng = np.random.default_rng(7)
    feats = fake_features(rng)
    ids = [IMAGE_TOKEN] + encode_text("abc") + [EOS_TOKEN]
    with_visual = m.forward_logits(ids, visual=feats).data
    without = m.forward_logits(ids, visual=None).data
    assert np.abs(with_visual - without).max() == 0.0


def test_causality_under_perturbation():
    m = tiny_model(seed=8)
    rng = np.random.default_rng(9)
    base_ids = list(rng.integers(0, 256, size=12))
    base = m.forward_logits(base_ids).data
    for _ in range(6):
        k = int(rng.integers(0, 12))
        ids = list(base_ids)
        ids[k] = int((ids[k] + 1 + rng.integers(0, 200)) % 256)
        out = m.forward_logits(ids).data
        if k > 0:
            npt.assert_array_equal(out[:k], base[:k])
        assert np.abs(out[k:] - base[k:]).max() > 0


def test_multi_image_tokens_attend_only_their_own_block():
    m = tiny_model(seed=10)
    # nonzero gates so cross-attention actually contributes
    for b in m.xattn.values():
        b.attn_gate.data[...] = 0.7
    rng = np.random.default_rng(11)
    f1, f2 = fake_features(rng), fake_features(rng)
    ids = [IMAGE_TOKEN] + encode_text("ab") + [IMAGE_TOKEN] + encode_text("cd")
    base = m.forward_logits(ids, visual=[f1, f2]).data
    f2_perturbed = fake_features(np.random.default_rng(99))
    out = m.forward_logits(ids, visual=[f1, f2_perturbed]).data
    k = ids.index(IMAGE_TOKEN, 1)  # second marker position
    npt.assert_array_equal(out[:k], base[:k])
    assert np.abs(out[k:] - base[k:]).max() > 0


def test_forward_validates_inputs():
    m = tiny_model(seed=12)
    with pytest.raises(IndexError):
        m.forward_logits([0, 999])
    with pytest.raises(ValueError):
        m.forward_logits(list(range(100)))  # max_seq_len 64
    feats = fake_features(np.random.default_rng(0), n_tokens=4)
    with pytest.raises(ValueError):
        # media index 1 but only one feature block
        m.forward_logits([IMAGE_TOKEN, 5, IMAGE_TOKEN, 6], visual=[feats])


def test_gate_grads_flow_on_fresh_model():
    m = tiny_model(seed=13)
    rng = np.random.default_rng(14)
    feats = fake_features(rng)
    ids = [IMAGE_TOKEN] + encode_text("xyz") + [EOS_TOKEN]
    logits = m.forward_logits(ids, visual=feats)
    T.cross_entropy(logits, ids[1:] + [0]).backward()
    for b in m.xattn.values():
        assert b.attn_gate.grad is not None and np.abs(b.attn_gate.grad).max() > 0


def test_gate_statistics_fresh_and_range():
    m = tiny_model(seed=15)
    stats = gate_statistics(m.xattn)
    assert set(stats) == {0, 2}
    assert all(v["attn"] == 0.0 and v["ff"] == 0.0 for v in stats.values())
    for b in m.xattn.values():
        b.attn_gate.data[...] = np.random.default_rng(16).normal(size=32) * 10
    stats = gate_statistics(m.xattn)
    assert all(0 <= v["attn"] < 1.0 for v in stats.values())


def test_count_parameters_single_linear():
    lin = nn.init_linear(Rng(17), 8, 16)
    assert nn.n_params(nn.iter_named(lin, "lin")) == 8 * 16 + 16


def test_count_parameters_buckets_sum_and_pinned_total():
    from imhd.model import ModelConfig
    m = build_model(ModelConfig(), Rng(18))
    counts = count_parameters(m)
    total = sum(p.size for _, p in m.named_parameters())
    assert sum(counts.values()) == total
    assert counts == {"vit": 157312, "decoder": 432896,
                      "gated_blocks": 94976, "projector": 7728}


def test_doubling_decoder_layers_only_grows_decoder_bucket():
    from imhd.decoder import DecoderConfig
    base = count_parameters(build_model(ModelConfig(), Rng(19)))
    deeper = count_parameters(build_model(
        ModelConfig(decoder=DecoderConfig(n_layers=16, xattn_interval=16)), Rng(19)))
    assert deeper["decoder"] > base["decoder"]
    assert deeper["vit"] == base["vit"]
    assert deeper["projector"] == base["projector"]

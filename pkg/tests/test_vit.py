import numpy as np
import numpy.testing as npt
import pytest

from imhd import nn
from imhd import tensor as T
from imhd.rng import Rng
from imhd.vit import (ResolutionMismatch, VitConfig, extend_resolution, init_vit,
                      patchify, vit_forward, vit_token_count)

from fdcheck import max_rel_err, numeric_grad


def small_cfg(**kw) -> VitConfig:
    base = dict(base_resolution=8, patch_size=4, d_model=16, n_heads=2, n_layers=2)
    base.update(kw)
    return VitConfig(**base)


def test_patchify_orders_patches_row_major():
    img = np.arange(16.0).reshape(1, 4, 4)
    patches = patchify(img, 2)
    assert patches.shape == (4, 4)
    npt.assert_array_equal(patches[0], [0, 1, 4, 5])       # top-left block
    npt.assert_array_equal(patches[1], [2, 3, 6, 7])       # top-right next
    npt.assert_array_equal(patches[3], [10, 11, 14, 15])


def test_patchify_single_patch_is_flat_image():
    img = np.random.default_rng(0).normal(size=(3, 4, 4))
    patches = patchify(img, 4)
    assert patches.shape == (1, 48)
    npt.assert_array_equal(patches[0], img.reshape(-1))


def test_patchify_counts():
    patches = patchify(np.zeros((3, 32, 32)), 4)
    assert patches.shape == (64, 48)
    with pytest.raises(ValueError):
        patchify(np.zeros((3, 30, 32)), 4)


def test_token_count_paper_scale():
    assert vit_token_count(1344, 14, True) == 9217
    assert vit_token_count(224, 14, True) == 257
    assert vit_token_count(448, 14, True) == 1025
    assert vit_token_count(448, 14, False) == 1024
    with pytest.raises(ValueError):
        vit_token_count(450, 14, True)


def test_forward_token_count_matches_vit_token_count():
    for use_cls in (True, False):
        cfg = small_cfg(use_cls=use_cls)
        params = init_vit(cfg, Rng(0))
        out = vit_forward(np.zeros((3, 8, 8)), params, cfg)
        assert out.shape == (vit_token_count(8, 4, use_cls), cfg.d_model)


def test_forward_is_penultimate_output():
    # with 2 layers the output is the input of layer 2, i.e. after one block
    cfg = small_cfg()
    rng = Rng(1)
    params = init_vit(cfg, rng)
    tile = rng.split("img").uniform((3, 8, 8))
    out = vit_forward(tile, params, cfg)

    patches = T.Tensor(patchify(tile, 4))
    x = nn.linear(patches, params.patch_proj)
    x = T.concat([params.cls.reshape(1, 16), x], axis=0)
    pos = T.concat([params.cls_pos.reshape(1, 16),
                    params.pos_embed.reshape(4, 16)], axis=0)
    x = nn.transformer_block(T.add(x, pos), params.blocks[0], cfg.n_heads)
    npt.assert_array_equal(out.data, x.data)


def test_last_layer_weights_do_not_matter():
    cfg = small_cfg(n_layers=3)
    rng = Rng(2)
    params = init_vit(cfg, rng)
    tile = rng.split("img").uniform((3, 8, 8))
    before = vit_forward(tile, params, cfg).data
    for _, p in nn.iter_named(params.blocks[-1], "last"):
        p.data += 123.0
    npt.assert_array_equal(vit_forward(tile, params, cfg).data, before)


def test_zero_weights_zero_image_gives_zero_tokens():
    cfg = small_cfg()
    params = init_vit(cfg, Rng(3))
    for name, p in nn.iter_named(params, "vit"):
        if not (name.endswith("ln1.g") or name.endswith("ln2.g")):
            p.data[...] = 0.0
    out = vit_forward(np.zeros((3, 8, 8)), params, cfg)
    npt.assert_array_equal(out.data, 0.0)


def test_forward_golden_checksum():
    cfg = VitConfig()  # toy default 32/4/64
    rng = Rng(1234)
    params = init_vit(cfg, rng)
    tile = rng.split("tile").uniform((3, 32, 32))
    out = vit_forward(tile, params, cfg)
    checksum = float(out.data.sum())
    # pinned from the first run; guards against silent numeric drift
    npt.assert_allclose(checksum, 27.814640047253462, rtol=1e-12)


def test_resolution_mismatch_error_mentions_interpolation():
    cfg = small_cfg()
    params = init_vit(cfg, Rng(4))
    with pytest.raises(ResolutionMismatch, match="extend_resolution"):
        vit_forward(np.zeros((3, 16, 16)), params, cfg)


def test_extend_resolution_identity_returns_same_params():
    cfg = small_cfg()
    params = init_vit(cfg, Rng(5))
    assert extend_resolution(params, cfg, 8) is params


def test_extend_resolution_preserves_corners_and_shares_weights():
    cfg = VitConfig(base_resolution=32, patch_size=4, d_model=32, n_heads=2, n_layers=2)
    params = init_vit(cfg, Rng(6))
    ext = extend_resolution(params, cfg, 64)
    assert ext.pos_embed.shape == (16, 16, 32)
    old = params.pos_embed.data
    new = ext.pos_embed.data
    npt.assert_array_equal(new[0, 0], old[0, 0])
    npt.assert_array_equal(new[0, -1], old[0, -1])
    npt.assert_array_equal(new[-1, 0], old[-1, 0])
    npt.assert_array_equal(new[-1, -1], old[-1, -1])
    assert ext.patch_proj.w is params.patch_proj.w
    assert ext.cls is params.cls
    assert ext.cls_pos is params.cls_pos
    assert ext.blocks is params.blocks
    with pytest.raises(ValueError):
        extend_resolution(params, cfg, 30)


def test_extend_constant_grid_stays_constant():
    cfg = small_cfg()
    params = init_vit(cfg, Rng(7))
    params.pos_embed.data[...] = 0.5
    ext = extend_resolution(params, cfg, 16)
    npt.assert_array_equal(ext.pos_embed.data, 0.5)


def test_extended_forward_differs_only_through_positions():
    # weights are untouched by extension, so on a constant image any change
    # comes from the positional grid alone. With the grid zeroed (and no cls
    # token skewing the attention average) per-patch rows match exactly.
    cfg = small_cfg(use_cls=False)
    rng = Rng(8)
    params = init_vit(cfg, rng)
    const8 = np.full((3, 8, 8), 0.25)
    const16 = np.full((3, 16, 16), 0.25)
    ext = extend_resolution(params, cfg, 16)
    out16 = vit_forward(const16, ext, cfg)
    assert out16.shape == (vit_token_count(16, 4, False), cfg.d_model)
    params.pos_embed.data[...] = 0.0
    ext0 = extend_resolution(params, cfg, 16)
    a = vit_forward(const8, params, cfg).data
    b = vit_forward(const16, ext0, cfg).data
    npt.assert_allclose(b, np.broadcast_to(a[0], b.shape), atol=1e-12)


def test_vit_backward_matches_central_differences():
    cfg = small_cfg()
    rng = Rng(9)
    params = init_vit(cfg, rng)
    tile = rng.split("img").uniform((3, 8, 8))
    w = rng.split("w").normal((vit_token_count(8, 4, True), cfg.d_model))

    def loss_tensor():
        return T.tsum(T.mul(vit_forward(tile, params, cfg), w))

    loss_tensor().backward()
    for name, p in [("patch.w", params.patch_proj.w), ("cls", params.cls),
                    ("pos", params.pos_embed), ("b0.attn.q.w", params.blocks[0].attn.q.w),
                    ("b0.ln1.g", params.blocks[0].ln1.g)]:
        def f():
            with T.no_grad():
                return loss_tensor().item()
        num = numeric_grad(f, p.data, h=1e-4)
        assert max_rel_err(p.grad, num) < 1e-4, name

import math

import numpy as np
import numpy.testing as npt
import pytest

from imhd.optim import AdamW, LrSchedule, clip_grad_norm, lr_at
from imhd.tensor import Tensor


def test_zero_grad_zero_decay_leaves_params():
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    p.grad = np.zeros(3)
    opt = AdamW([("p", p)], weight_decay=0.0)
    opt.step(lr=0.1)
    npt.assert_array_equal(p.data, [1.0, -2.0, 3.0])


def test_first_step_is_bias_corrected():
    # m-hat = g, v-hat = g^2, so the first delta is lr * g / (|g| + eps)
    p = Tensor(np.array([1.0]), requires_grad=True)
    p.grad = np.array([1.0])
    opt = AdamW([("p", p)], beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0)
    opt.step(lr=0.1)
    npt.assert_allclose(p.data, 1.0 - 0.1 / (1.0 + 1e-8), rtol=1e-15)


def test_decay_is_decoupled_and_applied_first():
    p = Tensor(np.array([2.0]), requires_grad=True)
    p.grad = np.array([0.0])
    opt = AdamW([("p", p)], weight_decay=0.1)
    opt.step(lr=0.5)
    npt.assert_allclose(p.data, 2.0 - 0.5 * 0.1 * 2.0, rtol=1e-15)


def test_frozen_params_are_skipped():
    p = Tensor(np.array([5.0]), requires_grad=False)
    p.grad = np.array([1.0])
    opt = AdamW([("p", p)], weight_decay=0.1)
    opt.step(lr=0.5)
    npt.assert_array_equal(p.data, [5.0])


def test_converges_on_quadratic():
    x = Tensor(np.array([5.0]), requires_grad=True)
    opt = AdamW([("x", x)], beta1=0.9, beta2=0.999, eps=1e-8)
    for _ in range(100):
        x.grad = 2.0 * x.data  # d/dx x^2
        opt.step(lr=0.1)
    assert abs(x.data[0]) < 0.1


def test_clip_below_threshold_is_identity():
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.array([0.3, 0.4])
    norm = clip_grad_norm([("p", p)], max_norm=1.0)
    assert norm == pytest.approx(0.5)
    npt.assert_array_equal(p.grad, [0.3, 0.4])


def test_clip_scales_to_max_norm():
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.array([3.0, 4.0])
    norm = clip_grad_norm([("p", p)], max_norm=1.0)
    assert norm == pytest.approx(5.0)
    npt.assert_allclose(p.grad, [0.6, 0.8], rtol=1e-15)


def test_clip_property_and_idempotence():
    rng = np.random.default_rng(0)
    for _ in range(25):
        params = []
        for i in range(4):
            p = Tensor(np.zeros(rng.integers(1, 6)), requires_grad=True)
            p.grad = rng.normal(scale=rng.uniform(0.01, 10), size=p.shape)
            params.append((f"p{i}", p))
        clip_grad_norm(params, max_norm=1.0)
        post = math.sqrt(sum(float((p.grad ** 2).sum()) for _, p in params))
        assert post <= 1.0 + 1e-12
        snapshot = [p.grad.copy() for _, p in params]
        clip_grad_norm(params, max_norm=1.0)
        for (_, p), g in zip(params, snapshot):
            npt.assert_allclose(p.grad, g, rtol=1e-12, atol=0)


def test_lr_schedule_shape():
    s = LrSchedule(peak_lr=1e-3, min_lr=1e-4, warmup_steps=10, total_steps=100)
    assert lr_at(s, 0) == 0.0
    assert lr_at(s, 10) == 1e-3
    assert lr_at(s, 100) == 1e-4
    assert lr_at(s, 250) == 1e-4  # clamp past the end
    # continuity around warmup
    assert abs(lr_at(s, 10) - lr_at(s, 11)) < 1e-4


def test_lr_constant_when_peak_equals_min():
    s = LrSchedule(peak_lr=1e-4, min_lr=1e-4, warmup_steps=5, total_steps=50)
    for step in range(5, 51):
        assert lr_at(s, step) == 1e-4


def test_lr_cosine_midpoint():
    s = LrSchedule(peak_lr=1e-5, min_lr=1e-6, warmup_steps=0, total_steps=100)
    assert lr_at(s, 50) == pytest.approx(5.5e-6, rel=1e-12)


def test_lr_schedule_validation():
    with pytest.raises(ValueError):
        LrSchedule(peak_lr=1e-3, min_lr=1e-4, warmup_steps=100, total_steps=100)
    with pytest.raises(ValueError):
        LrSchedule(peak_lr=0.0, min_lr=1e-4, warmup_steps=0, total_steps=10)

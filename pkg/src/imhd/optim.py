"""AdamW with decoupled weight decay, global-norm clipping, warmup+cosine LR."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamWState:
    """Per-parameter moments; ``step`` is shared by the owning optimizer."""
    m: np.ndarray
    v: np.ndarray


def adamw_step(param: Tensor, grad: np.ndarray, state: AdamWState, step: int,
               lr: float, beta1: float, beta2: float, eps: float,
               weight_decay: float) -> None:
    """One bias-corrected update; decay is applied before the Adam delta."""
    if grad.shape != param.data.shape:
        raise ValueError(f"grad shape {grad.shape} != param shape {param.data.shape}")
    if weight_decay:
        param.data -= lr * weight_decay * param.data
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    mhat = state.m / (1.0 - beta1 ** step)
    vhat = state.v / (1.0 - beta2 ** step)
    param.data -= lr * mhat / (np.sqrt(vhat) + eps)


class AdamW:
    """Drives adamw_step over named parameters, honoring requires_grad.

    Parameters with requires_grad False are skipped entirely (no decay,
    no moment update), which is what the per-stage freeze masks rely on.
    A missing grad on a trainable parameter counts as an all-zero grad.
    """

    def __init__(self, params: list[tuple[str, Tensor]], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._state: dict[str, AdamWState] = {}

    def _state_for(self, name: str, p: Tensor) -> AdamWState:
        st = self._state.get(name)
        if st is None:
            st = AdamWState(m=np.zeros_like(p.data), v=np.zeros_like(p.data))
            self._state[name] = st
        return st

    def step(self, lr: float) -> None:
        self.step_count += 1
        for name, p in self.params:
            if not p.requires_grad:
                continue
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            adamw_step(p, grad, self._state_for(name, p), self.step_count,
                       lr, self.beta1, self.beta2, self.eps, self.weight_decay)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def clip_grad_norm(params, max_norm: float = 1.0) -> float:
    """Scale all grads so their global L2 norm is <= max_norm.

    Returns the pre-clip norm. Applying it twice equals applying it once.
    """
    sq = 0.0
    grads = []
    for item in params:
        p = item[1] if isinstance(item, tuple) else item
        if p.requires_grad and p.grad is not None:
            sq += float((p.grad * p.grad).sum())
            grads.append(p)
    norm = math.sqrt(sq)
    if norm > max_norm:
        scale = max_norm / norm
        for p in grads:
            p.grad *= scale
    return norm


@dataclass
class LrSchedule:
    """Linear warmup to peak_lr, cosine decay to min_lr at total_steps."""
    peak_lr: float
    min_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if self.peak_lr <= 0 or self.min_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError("need 0 <= warmup_steps < total_steps")


def lr_at(schedule: LrSchedule, step: int) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    if step <= schedule.warmup_steps:
        if schedule.warmup_steps == 0:
            return schedule.peak_lr
        return schedule.peak_lr * step / schedule.warmup_steps
    if step >= schedule.total_steps:
        return schedule.min_lr
    progress = (step - schedule.warmup_steps) / (schedule.total_steps - schedule.warmup_steps)
    return schedule.min_lr + 0.5 * (schedule.peak_lr - schedule.min_lr) * (1.0 + math.cos(math.pi * progress))

"""Layer primitives: fully-connected, batch normalization, leaky rectifier
composition, the Adam optimizer, and the warmup + cosine learning-rate
schedule.

Training default is float32; verification paths build float64 layers by
passing ``dtype=np.float64`` at init time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .tensor import Tensor, leaky_relu, matmul, sqrt

LEAKY_SLOPE = 0.01


@dataclass
class LinearLayer:
    """Dense map x @ weight + bias with weight shaped (c_in, c_out).

    ``bias=None`` gives a pure matrix map (used by the relation transform,
    which must stay strictly linear so anchor terms cancel exactly).
    """

    weight: Tensor
    bias: Tensor | None = None

    @property
    def c_in(self) -> int:
        return self.weight.shape[0]

    @property
    def c_out(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]


def linear_init(c_in: int, c_out: int, seed_parts, dtype=np.float32, bias: bool = True) -> LinearLayer:
    """Weights uniform in +-sqrt(1/c_in), biases zero."""
    bound = float(np.sqrt(1.0 / c_in))
    gen = rng.generator(*seed_parts)
    w = gen.uniform(-bound, bound, size=(c_in, c_out)).astype(dtype)
    weight = Tensor(w, requires_grad=True)
    b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True) if bias else None
    return LinearLayer(weight, b)


def matmul_add(x: Tensor, layer: LinearLayer) -> Tensor:
    out = matmul(x, layer.weight)
    if layer.bias is not None:
        out = out + layer.bias
    return out


@dataclass
class BatchNormState:
    """Per-channel affine + running statistics.

    ``mode`` is "train" or "eval"; callers may override per call. Train mode
    normalizes with the biased batch variance and updates running stats with
    the unbiased one (momentum convention: new = (1-m)*old + m*batch).
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    mode: str = "train"

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]


def batchnorm_init(channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5) -> BatchNormState:
    return BatchNormState(
        gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
        beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
        running_mean=np.zeros(channels, dtype=dtype),
        running_var=np.ones(channels, dtype=dtype),
        momentum=momentum,
        eps=eps,
    )


def batchnorm(x: Tensor, state: BatchNormState, train: bool | None = None) -> Tensor:
    out, _ = batchnorm_pair(x, None, state, train=train)
    return out


def batchnorm_pair(
    x: Tensor,
    x_extra: Tensor | None,
    state: BatchNormState,
    train: bool | None = None,
) -> tuple[Tensor, Tensor | None]:
    """Normalize ``x`` and optionally ``x_extra`` with statistics from ``x``.

    The extra rows (anchor encodings) are normalized by the main rows'
    statistics but contribute nothing to them, so anchor placement cannot
    leak into the main rows' normalization.
    """
    if train is None:
        train = state.mode == "train"
    if train:
        n = x.shape[0]
        if n < 2:
            raise ValueError(f"batchnorm train mode needs at least 2 rows, got {n}")
        mu = x.mean(axis=0)
        centered = x - mu
        var = (centered * centered).mean(axis=0)
        inv = 1.0 / sqrt(var + state.eps)
        out = centered * inv * state.gamma + state.beta
        extra = None
        if x_extra is not None:
            extra = (x_extra - mu) * inv * state.gamma + state.beta
        m = state.momentum
        unbiased = var.data * (n / max(n - 1, 1))
        state.running_mean[...] = (1.0 - m) * state.running_mean + m * mu.data
        state.running_var[...] = (1.0 - m) * state.running_var + m * unbiased
        return out, extra
    inv = 1.0 / np.sqrt(state.running_var + state.eps)
    scale = Tensor(inv) * state.gamma
    shift = state.beta - Tensor(state.running_mean * inv) * state.gamma
    out = x * scale + shift
    extra = None if x_extra is None else x_extra * scale + shift
    return out, extra


def fc_bn_lrelu(x: Tensor, fc: LinearLayer, bn: BatchNormState, train: bool) -> Tensor:
    """The recurring block body: dense map, normalization, leaky rectifier."""
    return leaky_relu(batchnorm(matmul_add(x, fc), bn, train=train), LEAKY_SLOPE)


# -- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[Tensor]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState, lr: float) -> None:
    """In-place bias-corrected Adam update; a zero gradient leaves its
    parameter untouched only while the moments are zero (standard behavior)."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- learning-rate schedule ----------------------------------------------------


@dataclass
class LrSchedule:
    lr_max: float = 2e-3
    lr_min: float = 2e-4
    t_max: int = 200
    warmup_epochs: int = 1

    def __post_init__(self):
        if self.lr_min > self.lr_max:
            raise ValueError("lr_min must not exceed lr_max")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")


def lr_at(epoch: int, sched: LrSchedule, batch_frac: float = 1.0) -> float:
    """Learning rate for an epoch (optionally a fractional position within it).

    Warmup ramps linearly with the batch fraction up to lr_max; afterwards a
    cosine decay runs from lr_max at t=0 down to lr_min at t=t_max and stays
    clamped there.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch < sched.warmup_epochs:
        frac = (epoch + batch_frac) / sched.warmup_epochs
        return sched.lr_max * frac
    t = min(epoch - sched.warmup_epochs, sched.t_max)
    return sched.lr_min + 0.5 * (sched.lr_max - sched.lr_min) * (1.0 + np.cos(np.pi * t / sched.t_max))

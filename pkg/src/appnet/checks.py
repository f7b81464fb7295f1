"""Self-contained verification suites: the operator-family cancellation
property, component reuse identities, block-level oracle equivalence, anchor
independence, and whole-network gradient agreement with central finite
differences. The command-line ``oracle-check`` runs these; the test suite
asserts them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from . import tensor as T
from .appblock import (
    AggregatorStyle,
    AppBlockConfig,
    PullFeatureMode,
    init_app_block_params,
    position_encode,
    pull,
    push,
)
from .families import Family, combine, direct_map, pull_from_push, pull_map, push_map
from .geometry import BlockPartition
from .network import AppNet, AppNetConfig
from .reference import direct_block_aggregate
from .tensor import Tensor, backward
from .trainer import cross_entropy

ALL_FAMILIES = (Family.LINEAR, Family.EXPONENTIAL, Family.SINE, Family.COSINE)
ALL_STYLES = (AggregatorStyle.ADAPTIVE_WEIGHT, AggregatorStyle.POINTWISE_MLP)
ALL_PULL_MODES = (PullFeatureMode.FEATURE_DIFFERENCE, PullFeatureMode.ZERO_FEATURE)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def check_reducibility(trials: int = 1000, c_max: int = 64, dtype=np.float64, seed: int = 0) -> CheckResult:
    """Random (W, x, a, y) draws: combining the pushed and pulled components
    must equal the fused endpoint relation, with the anchor cancelling."""
    tol = 1e-12 if np.dtype(dtype) == np.float64 else 1e-5
    gen = rng.generator(seed, "reducibility")
    worst = 0.0
    for _ in range(trials):
        c = int(gen.integers(1, c_max + 1))
        w = (gen.normal(size=(c, c)) / (3.0 * np.sqrt(c))).astype(dtype)
        x, a, y = gen.uniform(-1.0, 1.0, size=(3, c)).astype(dtype)
        for family in ALL_FAMILIES:
            u = (x - a) @ w
            v = (a - y) @ w
            fused = direct_map(family, ((x - y) @ w).astype(dtype))
            got = combine(family, push_map(family, u), pull_map(family, v))
            worst = max(worst, float(np.abs(got - fused).max()))
    return CheckResult(
        "reducibility",
        worst < tol,
        f"max |combined - fused| = {worst:.3e} over {trials} draws/family ({np.dtype(dtype).name}, tol {tol:g})",
    )


def check_reuse_identities(trials: int = 500, c_max: int = 32, seed: int = 0) -> CheckResult:
    """pull_from_push(push_map(u)) must equal push_map(-u) to rounding."""
    gen = rng.generator(seed, "reuse")
    worst = 0.0
    for _ in range(trials):
        c = int(gen.integers(1, c_max + 1))
        u = gen.normal(size=c) * 2.0
        for family in ALL_FAMILIES:
            derived = pull_from_push(family, push_map(family, u))
            fresh = pull_map(family, -u)
            for d, f in zip(derived, fresh):
                scale = np.maximum(np.abs(f), 1.0)
                worst = max(worst, float((np.abs(d - f) / scale).max()))
    return CheckResult(
        "reuse-identities",
        worst < 1e-13,
        f"max relative deviation = {worst:.3e} over {trials} draws/family",
    )


def _random_block_instance(gen, n_max=128, c_max=8):
    n = int(gen.integers(12, n_max + 1))
    c = int(gen.integers(2, c_max + 1))
    positions = gen.normal(size=(n, 3))
    features = gen.normal(size=(n, c))
    m = int(gen.integers(2, max(3, n // 4)))
    anchor_idx = rng.sample_indices(n, m, int(gen.integers(2**62)))
    partition = BlockPartition.from_anchors(positions, positions[anchor_idx])
    return positions, features, partition


def _pull_output(positions, features, partition, config, params, train=False):
    phi, phi_aux = position_encode(positions, params, config, partition, train=train)
    state = push(Tensor(features.astype(params.dtype)), phi, phi_aux, partition, config, params)
    return pull(state, Tensor(features.astype(params.dtype)), partition, config, params).data


def check_oracle_equivalence(instances: int = 500, seed: int = 0, tol: float = 1e-10) -> CheckResult:
    """Push-then-pull must equal the quadratic anchor-free loop."""
    gen = rng.generator(seed, "oracle")
    combos = [(f, s, m) for f in ALL_FAMILIES for s in ALL_STYLES for m in ALL_PULL_MODES]
    worst = 0.0
    for trial in range(instances):
        positions, features, partition = _random_block_instance(gen)
        family, style, mode = combos[trial % len(combos)]
        config = AppBlockConfig(
            c_in=features.shape[1], c_out=features.shape[1], family=family, style=style, pull_mode=mode
        )
        params = init_app_block_params(config, (seed, "oracle", trial), dtype=np.float64)
        got = _pull_output(positions, features, partition, config, params)
        want = direct_block_aggregate(positions, features, partition, config, params)
        worst = max(worst, float(np.abs(got - want).max()))
    return CheckResult(
        "oracle-equivalence",
        worst < tol,
        f"max |push.pull - direct| = {worst:.3e} over {instances} instances (tol {tol:g})",
    )


def check_anchor_independence(clouds: int = 100, n_max: int = 256, seed: int = 0, tol: float = 1e-10) -> CheckResult:
    """Replacing anchor coordinates (assignment fixed) must not move the pull
    output; anchors may only decide the grouping."""
    gen = rng.generator(seed, "anchor")
    worst = 0.0
    for trial in range(clouds):
        positions, features, partition = _random_block_instance(gen, n_max=n_max)
        moved = BlockPartition(gen.normal(size=partition.anchors.shape) * 3.0, partition.assignment)
        for family in ALL_FAMILIES:
            for style in ALL_STYLES:
                for mode in ALL_PULL_MODES:
                    config = AppBlockConfig(
                        c_in=features.shape[1], c_out=features.shape[1], family=family, style=style, pull_mode=mode
                    )
                    params = init_app_block_params(config, (seed, "anchor", trial), dtype=np.float64)
                    base = _pull_output(positions, features, partition, config, params)
                    shifted = _pull_output(positions, features, moved, config, params)
                    worst = max(worst, float(np.abs(base - shifted).max()))
    return CheckResult(
        "anchor-independence",
        worst < tol,
        f"max |pull(original) - pull(moved anchors)| = {worst:.3e} over {clouds} clouds x 16 configs (tol {tol:g})",
    )


# -- gradient agreement -------------------------------------------------------


def tiny_gradcheck_net(num_classes: int = 2, seed: int = 3) -> AppNet:
    config = AppNetConfig(
        num_classes=num_classes,
        input_channels=4,
        embed_channels=6,
        block_channels=(8, 8),
        r_a=(4, 4),
        r_d=(2, 2),
        classifier_hidden=8,
        dropout=0.0,
        dtype="float64",
    )
    return AppNet(config, seed=seed)


def finite_difference_gradients(net: AppNet, samples, labels, forward_seed: int = 11, h: float = 1e-6):
    """Central-difference loss gradients for every parameter.

    Returns (worst_rel, worst_abs_smallgrad, detail): informative gradients
    are compared relatively; structurally zero gradients (for example biases
    feeding a normalization) are compared absolutely against the difference
    noise floor.
    """

    def loss_value() -> float:
        saved = [(bn.running_mean.copy(), bn.running_var.copy()) for _, bn in net.bn_states()]
        logits = net.forward_batch(samples, seed=forward_seed)
        value = cross_entropy(logits, labels)
        for (m, v), (_, bn) in zip(saved, net.bn_states()):
            bn.running_mean, bn.running_var = m, v
        return value

    loss = loss_value()
    backward(loss)
    analytic = {name: p.grad.copy() for name, p in net.named_parameters()}
    for p in net.parameters():
        p.zero_grad()

    worst_rel, worst_abs = 0.0, 0.0
    detail = ""
    for name, p in net.named_parameters():
        flat = p.data.reshape(-1)
        grads = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = loss_value().item()
            flat[i] = orig - h
            minus = loss_value().item()
            flat[i] = orig
            fd = (plus - minus) / (2.0 * h)
            scale = max(abs(fd), abs(grads[i]))
            if scale < 1e-5:
                worst_abs = max(worst_abs, abs(fd - grads[i]))
                continue
            relative = abs(fd - grads[i]) / scale
            if relative > worst_rel:
                worst_rel = relative
                detail = f"{name}[{i}]"
    return worst_rel, worst_abs, detail


def check_gradients(seed: int = 3, tol: float = 1e-4) -> CheckResult:
    net = tiny_gradcheck_net(seed=seed).train()
    gen = rng.generator(seed, "gradcheck-data")
    samples = [(gen.normal(size=(32, 3)), gen.normal(size=(32, 4))) for _ in range(2)]
    labels = np.array([1, 0])
    worst_rel, worst_abs, where = finite_difference_gradients(net, samples, labels)
    passed = worst_rel < tol and worst_abs < 1e-6
    return CheckResult(
        "gradients",
        passed,
        f"worst rel err {worst_rel:.3e} (at {where or 'n/a'}), worst near-zero abs err {worst_abs:.3e} (tol {tol:g})",
    )


def run_all(trials: int = 1000, precision: str = "double", seed: int = 0) -> list[CheckResult]:
    dtype = np.float64 if precision == "double" else np.float32
    scale = max(1, trials)
    return [
        check_reducibility(trials=scale, dtype=dtype, seed=seed),
        check_reuse_identities(trials=max(50, scale // 2), seed=seed),
        check_oracle_equivalence(instances=max(32, scale // 4), seed=seed),
        check_anchor_independence(clouds=max(16, scale // 20), seed=seed),
        check_gradients(seed=3),
    ]

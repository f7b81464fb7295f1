"""Full classification network: input embedding, cascaded aggregation blocks,
dual global pooling, classifier head.

Point counts shrink by the per-block downsample ratios (1024 -> 128 -> 16 -> 2
at the defaults). Batches are processed as one stacked point set with
per-sample partitions, so batch normalization pools statistics over all
points of all samples while feature exchange never crosses samples.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from enum import Enum

import numpy as np

from . import rng
from .appblock import (
    AggregatorStyle,
    AppBlockConfig,
    AppBlockParams,
    PosencMode,
    PullFeatureMode,
    Sampler,
    UpdateStyle,
    app_block_apply,
    init_app_block_params,
    sample_anchor_indices,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .families import Family
from .geometry import BlockPartition, PointCloud, one_nn_assign_indices
from .instrument import MacCounter
from .layers import (
    BatchNormState,
    batchnorm_init,
    fc_bn_lrelu,
    linear_init,
    matmul_add,
)
from .tensor import (
    Tensor,
    concat,
    reshape,
    segment_max,
    segment_mean,
    segment_mean_np,
    segment_sum,
    segment_sum_np,
)


class Pooling(str, Enum):
    AVG_MAX = "avg_max"
    MAX = "max"
    AVG = "avg"
    POSITION_ADAPTIVE = "position_adaptive"


@dataclass
class AppNetConfig:
    num_classes: int = 40
    input_channels: int = 4  # 3 for raw xyz or plain normals, 4 with curvature
    embed_channels: int = 32
    block_channels: tuple = (128, 256, 512)
    r_a: tuple = (64, 64, 64)
    r_d: tuple = (8, 8, 8)
    family: Family = Family.EXPONENTIAL
    style: AggregatorStyle = AggregatorStyle.ADAPTIVE_WEIGHT
    update_style: UpdateStyle = UpdateStyle.CONCAT
    pull_mode: PullFeatureMode = PullFeatureMode.FEATURE_DIFFERENCE
    posenc_mode: PosencMode = PosencMode.GLOBAL
    pooling: Pooling = Pooling.AVG_MAX
    sampler: Sampler = Sampler.RANDOM
    classifier_hidden: int = 320
    dropout: float = 0.5
    dtype: str = "float32"

    def __post_init__(self):
        self.family = Family(self.family)
        self.style = AggregatorStyle(self.style)
        self.update_style = UpdateStyle(self.update_style)
        self.pull_mode = PullFeatureMode(self.pull_mode)
        self.posenc_mode = PosencMode(self.posenc_mode)
        self.pooling = Pooling(self.pooling)
        self.sampler = Sampler(self.sampler)
        self.block_channels = tuple(int(c) for c in self.block_channels)
        self.r_a = tuple(int(r) for r in self.r_a)
        self.r_d = tuple(int(r) for r in self.r_d)
        if self.depth not in (2, 3, 4):
            raise ValueError(f"supported depths are 2, 3, 4; got {self.depth}")
        if not (len(self.r_a) == len(self.r_d) == self.depth):
            raise ValueError("block_channels, r_a, r_d must share one length")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")

    @property
    def depth(self) -> int:
        return len(self.block_channels)

    def block_config(self, layer: int) -> AppBlockConfig:
        c_in = self.embed_channels if layer == 0 else self.block_channels[layer - 1]
        return AppBlockConfig(
            c_in=c_in,
            c_out=self.block_channels[layer],
            r_a=self.r_a[layer],
            r_d=self.r_d[layer],
            family=self.family,
            style=self.style,
            update_style=self.update_style,
            pull_mode=self.pull_mode,
            posenc_mode=self.posenc_mode,
            sampler=self.sampler,
        )

    @property
    def pool_width(self) -> int:
        last = self.block_channels[-1]
        return 2 * last if self.pooling == Pooling.AVG_MAX else last


def depth_rates(depth: int) -> tuple[tuple, tuple]:
    """Default (r_a, r_d) per depth; deeper stacks shrink late-layer aux rates
    because few points remain after two downsamples."""
    if depth == 2:
        return (64, 64), (8, 8)
    if depth == 3:
        return (64, 64, 64), (8, 8, 8)
    if depth == 4:
        return (64, 64, 16, 16), (4, 4, 8, 8)
    raise ValueError(f"unsupported depth {depth}")


# -- config text round-trip -----------------------------------------------------

_TUPLE_FIELDS = {"block_channels", "r_a", "r_d"}
_INT_FIELDS = {"num_classes", "input_channels", "embed_channels", "classifier_hidden"}
_FLOAT_FIELDS = {"dropout"}


def config_to_text(config: AppNetConfig) -> str:
    lines = []
    for f in fields(config):
        value = getattr(config, f.name)
        if f.name in _TUPLE_FIELDS:
            value = ",".join(str(v) for v in value)
        elif isinstance(value, Enum):
            value = value.value
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> AppNetConfig:
    kwargs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _TUPLE_FIELDS:
            kwargs[key] = tuple(int(v) for v in value.split(","))
        elif key in _INT_FIELDS:
            kwargs[key] = int(value)
        elif key in _FLOAT_FIELDS:
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    return AppNetConfig(**kwargs)


# -- the network ------------------------------------------------------------------


class AppNet:
    def __init__(self, config: AppNetConfig, seed: int = 0):
        self.config = config
        self.training = True
        dtype = np.dtype(config.dtype)
        self.dtype = dtype
        self.embed_fc = linear_init(config.input_channels, config.embed_channels, (seed, "embed"), dtype)
        self.embed_bn = batchnorm_init(config.embed_channels, dtype)
        self.block_configs = [config.block_config(i) for i in range(config.depth)]
        self.blocks: list[AppBlockParams] = [
            init_app_block_params(bc, (seed, "block", i), dtype) for i, bc in enumerate(self.block_configs)
        ]
        self.head_fc1 = linear_init(config.pool_width, config.classifier_hidden, (seed, "head1"), dtype)
        self.head_bn = batchnorm_init(config.classifier_hidden, dtype)
        self.head_fc2 = linear_init(config.classifier_hidden, config.num_classes, (seed, "head2"), dtype)

    # -- parameter plumbing -----------------------------------------------

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = [
            ("embed.fc.weight", self.embed_fc.weight),
            ("embed.fc.bias", self.embed_fc.bias),
            ("embed.bn.gamma", self.embed_bn.gamma),
            ("embed.bn.beta", self.embed_bn.beta),
        ]
        for i, block in enumerate(self.blocks):
            named += [(f"block{i}.{name}", p) for name, p in block.parameters()]
        named += [
            ("head.fc1.weight", self.head_fc1.weight),
            ("head.fc1.bias", self.head_fc1.bias),
            ("head.bn.gamma", self.head_bn.gamma),
            ("head.bn.beta", self.head_bn.beta),
            ("head.fc2.weight", self.head_fc2.weight),
            ("head.fc2.bias", self.head_fc2.bias),
        ]
        return named

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def bn_states(self) -> list[tuple[str, BatchNormState]]:
        states = [("embed.bn", self.embed_bn)]
        for i, block in enumerate(self.blocks):
            if block.posenc_bn is not None:
                states.append((f"block{i}.posenc.bn", block.posenc_bn))
            if block.mixer_bn is not None:
                states.append((f"block{i}.mixer.bn", block.mixer_bn))
        states.append(("head.bn", self.head_bn))
        return states

    def train(self) -> "AppNet":
        self.training = True
        for _, bn in self.bn_states():
            bn.mode = "train"
        return self

    def eval(self) -> "AppNet":
        self.training = False
        for _, bn in self.bn_states():
            bn.mode = "eval"
        return self

    # -- checkpointing -----------------------------------------------------

    def state_records(self) -> list[tuple[str, np.ndarray]]:
        records = [(name, p.data) for name, p in self.named_parameters()]
        for name, bn in self.bn_states():
            records.append((f"{name}.running_mean", bn.running_mean))
            records.append((f"{name}.running_var", bn.running_var))
        return records

    def load_state_records(self, records: list[tuple[str, np.ndarray]]) -> None:
        table = dict(records)
        for name, p in self.named_parameters():
            arr = table.pop(name)
            if tuple(arr.shape) != tuple(p.data.shape):
                raise ValueError(f"{name}: shape {arr.shape} != expected {p.data.shape}")
            p.data = arr.astype(self.dtype)
        for name, bn in self.bn_states():
            bn.running_mean = table.pop(f"{name}.running_mean").astype(self.dtype)
            bn.running_var = table.pop(f"{name}.running_var").astype(self.dtype)
        if table:
            raise ValueError(f"unused checkpoint records: {sorted(table)}")

    def save(self, path) -> None:
        save_checkpoint(path, self.state_records())

    @classmethod
    def load(cls, path, config: AppNetConfig, seed: int = 0) -> "AppNet":
        net = cls(config, seed=seed)
        net.load_state_records(load_checkpoint(path))
        return net

    # -- forward -----------------------------------------------------------

    def _merged_partitions(self, positions, sample_slices, layer, sample_seeds, plan, trace):
        """Per-sample anchor draws merged into one stacked partition pair."""
        bc = self.block_configs[layer]
        parts = {}
        for stage, ratio in (("aux", bc.r_a), ("down", bc.r_d)):
            anchor_rows = []
            assignment = np.empty(len(positions), dtype=np.int64)
            owner = []
            offset = 0
            local_indices = []
            for s, (lo, hi) in enumerate(sample_slices):
                pts = positions[lo:hi]
                if plan is not None:
                    idx = plan[(layer, stage)][s]
                else:
                    idx = sample_anchor_indices(pts, ratio, bc.sampler, sample_seeds[s], "layer", layer, stage)
                local_indices.append(idx)
                anchors = pts[idx]
                assignment[lo:hi] = one_nn_assign_indices(pts, anchors) + offset
                anchor_rows.append(anchors)
                owner.append(np.full(len(anchors), s, dtype=np.int64))
                offset += len(anchors)
            if trace is not None:
                trace[(layer, stage)] = local_indices
            parts[stage] = (
                BlockPartition(np.concatenate(anchor_rows), assignment),
                np.concatenate(owner),
            )
        return parts["aux"], parts["down"]

    def forward_batch(
        self,
        samples: list[tuple[np.ndarray, np.ndarray]],
        sample_seeds: list[int] | None = None,
        seed: int = 0,
        plan: dict | None = None,
        trace: dict | None = None,
        counter: MacCounter | None = None,
    ) -> Tensor:
        """Logits for a batch of (positions, features) samples.

        Anchor draws derive from per-sample seeds (defaulting to a mix of
        ``seed`` and the sample's batch position) unless an explicit plan
        replays recorded draws.
        """
        if not samples:
            raise ValueError("empty batch")
        if sample_seeds is None:
            sample_seeds = [rng.mix_seed(seed, "sample", i) for i in range(len(samples))]
        counts = [len(p) for p, _ in samples]
        if min(counts) < 8:
            raise ValueError("every sample needs at least 8 points")
        slices = []
        lo = 0
        for c in counts:
            slices.append((lo, lo + c))
            lo += c
        positions = np.concatenate([np.asarray(p, dtype=np.float64) for p, _ in samples])
        feats = np.concatenate([np.asarray(f, dtype=self.dtype) for _, f in samples])
        if feats.shape[1] != self.config.input_channels:
            raise ValueError(
                f"expected {self.config.input_channels} input channels, got {feats.shape[1]}"
            )
        sample_ids = np.concatenate(
            [np.full(c, s, dtype=np.int64) for s, c in enumerate(counts)]
        )

        x = fc_bn_lrelu(Tensor(feats), self.embed_fc, self.embed_bn, train=self.training)
        if counter:
            counter.add_macs("embed", feats.shape[0] * self.config.input_channels * self.config.embed_channels)

        for layer, (bc, params) in enumerate(zip(self.block_configs, self.blocks)):
            (aux_part, _), (down_part, down_owner) = self._merged_partitions(
                positions, slices, layer, sample_seeds, plan, trace
            )
            positions, x = app_block_apply(
                positions, x, aux_part, down_part, bc, params, train=self.training, counter=counter
            )
            sample_ids = down_owner
            slices = _slices_from_ids(sample_ids, len(samples))

        pooled = global_pool_batch(x, sample_ids, len(samples), self.config.pooling, positions)
        h = fc_bn_lrelu(pooled, self.head_fc1, self.head_bn, train=self.training)
        if self.training and self.config.dropout > 0:
            keep = 1.0 - self.config.dropout
            mask = (rng.generator(seed, "dropout").random(h.shape) < keep).astype(self.dtype) / self.dtype.type(keep)
            h = h * Tensor(mask)
        logits = matmul_add(h, self.head_fc2)
        if counter:
            counter.add_macs("head", pooled.shape[0] * (self.head_fc1.c_in * self.head_fc1.c_out + self.head_fc2.c_in * self.head_fc2.c_out))
        return logits

    def forward_one(self, positions: np.ndarray, features: np.ndarray, seed: int = 0, **kw) -> Tensor:
        return self.forward_batch([(positions, features)], sample_seeds=[seed], seed=seed, **kw)


def _slices_from_ids(sample_ids: np.ndarray, num_samples: int) -> list[tuple[int, int]]:
    counts = np.bincount(sample_ids, minlength=num_samples)
    ends = np.cumsum(counts)
    return [(int(e - c), int(e)) for c, e in zip(counts, ends)]


def global_pool_batch(
    features: Tensor,
    sample_ids: np.ndarray,
    num_samples: int,
    mode: Pooling,
    positions: np.ndarray | None = None,
) -> Tensor:
    if features.shape[0] == 0:
        raise ValueError("cannot pool an empty point set")
    if mode == Pooling.AVG_MAX:
        return concat(
            [
                segment_mean(features, sample_ids, num_samples),
                segment_max(features, sample_ids, num_samples),
            ]
        )
    if mode == Pooling.MAX:
        return segment_max(features, sample_ids, num_samples)
    if mode == Pooling.AVG:
        return segment_mean(features, sample_ids, num_samples)
    if mode == Pooling.POSITION_ADAPTIVE:
        if positions is None:
            raise ValueError("position-adaptive pooling needs point positions")
        centroid = segment_mean_np(positions, sample_ids, num_samples)
        dist = np.linalg.norm(positions - centroid[sample_ids], axis=1)
        w = 1.0 / (dist + 1e-8)
        w /= segment_sum_np(w, sample_ids, num_samples)[sample_ids]
        weights = Tensor(w[:, None].astype(features.dtype))
        return segment_sum(features * weights, sample_ids, num_samples)
    raise ValueError(f"unknown pooling mode {mode!r}")


def global_pool(features, mode: Pooling, positions: np.ndarray | None = None) -> Tensor:
    """Single point set pooled to one vector (2C for avg+max, C otherwise)."""
    t = features if isinstance(features, Tensor) else Tensor(features)
    ids = np.zeros(t.shape[0], dtype=np.int64)
    pooled = global_pool_batch(t, ids, 1, Pooling(mode), positions)
    return reshape(pooled, (pooled.shape[1],))

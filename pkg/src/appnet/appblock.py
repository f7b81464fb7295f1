"""One aggregation block: position encoding, push, pull, channel mixing, and
block-based downsampling.

The push step sends each point's contribution to its single nearest anchor
(a block mean); the pull step retrieves the block mean and combines it with
the point's own relation components so that the anchor's value cancels. Two
aggregator styles are supported:

* adaptive weight: neighbor features are modulated channel-wise by the
  family kernel of the relation argument, g_i = mean_j f_j * k(u_j - u_i);
* point-wise MLP: the linear family follows the joint form
  g_i = mean_j W [f_j - f_i, phi_j - phi_i]; the nonlinear families
  concatenate the feature-difference mean with the family relation mean,
  g_i = mean_j [f_j - f_i, k(u_j - u_i)].

Both realize anchor-free targets through one shared relation transform; the
pull side reuses the push-side components wherever the family identities
allow and recomputes only where they cannot (zero-feature point-wise pulls).

Downsampling draws a second, independent anchor set and max-pools features
per block; composing the two partitions is what grows the receptive field.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .families import Family, combine, component_count, pull_from_push, push_map
from .geometry import (
    BlockPartition,
    PointCloud,
    fps_subsample_indices,
    random_subsample_indices,
    subsample_count,
)
from .instrument import MacCounter
from .layers import (
    LEAKY_SLOPE,
    BatchNormState,
    LinearLayer,
    batchnorm_init,
    batchnorm_pair,
    fc_bn_lrelu,
    linear_init,
    matmul_add,
)
from .tensor import Tensor, concat, leaky_relu, segment_max, segment_mean, take_rows


class AggregatorStyle(str, Enum):
    POINTWISE_MLP = "pw"
    ADAPTIVE_WEIGHT = "aw"


class UpdateStyle(str, Enum):
    CONCAT = "concat"
    NO_CONCAT = "no_concat"
    RESIDUAL = "residual"
    IDENTITY = "identity"


class PullFeatureMode(str, Enum):
    FEATURE_DIFFERENCE = "feature_difference"
    ZERO_FEATURE = "zero_feature"


class PosencMode(str, Enum):
    GLOBAL = "global"
    LOCAL = "local"
    NONE = "none"


class Sampler(str, Enum):
    RANDOM = "random"
    FPS = "fps"


@dataclass
class AppBlockConfig:
    c_in: int
    c_out: int
    r_a: int = 64
    r_d: int = 8
    family: Family = Family.EXPONENTIAL
    style: AggregatorStyle = AggregatorStyle.ADAPTIVE_WEIGHT
    update_style: UpdateStyle = UpdateStyle.CONCAT
    pull_mode: PullFeatureMode = PullFeatureMode.FEATURE_DIFFERENCE
    posenc_mode: PosencMode = PosencMode.GLOBAL
    sampler: Sampler = Sampler.RANDOM

    def __post_init__(self):
        self.family = Family(self.family)
        self.style = AggregatorStyle(self.style)
        self.update_style = UpdateStyle(self.update_style)
        self.pull_mode = PullFeatureMode(self.pull_mode)
        self.posenc_mode = PosencMode(self.posenc_mode)
        self.sampler = Sampler(self.sampler)
        if self.c_in < 1 or self.c_out < 1:
            raise ValueError("channel widths must be >= 1")
        if self.r_a < 1 or self.r_d < 1:
            raise ValueError("ratios must be >= 1")
        if self.posenc_mode == PosencMode.NONE and self.c_in < 3:
            raise ValueError("raw-coordinate mode needs c_in >= 3")
        if self.update_style == UpdateStyle.RESIDUAL and self.c_out != self.c_in:
            raise ValueError("residual update requires c_out == c_in")
        if self.update_style == UpdateStyle.IDENTITY and self.c_out != self.pulled_width:
            raise ValueError(f"identity update requires c_out == {self.pulled_width}")

    @property
    def pulled_width(self) -> int:
        """Width of the pull output before channel mixing."""
        if self.style == AggregatorStyle.POINTWISE_MLP and self.family != Family.LINEAR:
            return 2 * self.c_in
        return self.c_in

    @property
    def relation_in(self) -> int:
        """Input width of the shared relation transform."""
        if self.style == AggregatorStyle.POINTWISE_MLP and self.family == Family.LINEAR:
            return 2 * self.c_in
        return self.c_in

    @property
    def mixer_in(self) -> int | None:
        if self.update_style == UpdateStyle.IDENTITY:
            return None
        if self.update_style == UpdateStyle.CONCAT:
            return self.pulled_width + self.c_in
        return self.pulled_width


@dataclass
class AppBlockParams:
    posenc_fc: LinearLayer | None
    posenc_bn: BatchNormState | None
    relation: LinearLayer  # bias-free; shared by push and pull
    mixer_fc: LinearLayer | None
    mixer_bn: BatchNormState | None
    dtype: np.dtype = np.dtype(np.float32)

    def parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        if self.posenc_fc is not None:
            named += [("posenc.fc.weight", self.posenc_fc.weight), ("posenc.fc.bias", self.posenc_fc.bias)]
            named += [("posenc.bn.gamma", self.posenc_bn.gamma), ("posenc.bn.beta", self.posenc_bn.beta)]
        named.append(("relation.weight", self.relation.weight))
        if self.mixer_fc is not None:
            named += [("mixer.fc.weight", self.mixer_fc.weight), ("mixer.fc.bias", self.mixer_fc.bias)]
            named += [("mixer.bn.gamma", self.mixer_bn.gamma), ("mixer.bn.beta", self.mixer_bn.beta)]
        return named


def init_app_block_params(config: AppBlockConfig, seed_parts, dtype=np.float32) -> AppBlockParams:
    dtype = np.dtype(dtype)
    posenc_fc = posenc_bn = None
    if config.posenc_mode != PosencMode.NONE:
        posenc_fc = linear_init(3, config.c_in, (*seed_parts, "posenc"), dtype=dtype)
        posenc_bn = batchnorm_init(config.c_in, dtype=dtype)
    relation = linear_init(config.relation_in, config.c_in, (*seed_parts, "relation"), dtype=dtype, bias=False)
    mixer_fc = mixer_bn = None
    if config.mixer_in is not None:
        mixer_fc = linear_init(config.mixer_in, config.c_out, (*seed_parts, "mixer"), dtype=dtype)
        mixer_bn = batchnorm_init(config.c_out, dtype=dtype)
    return AppBlockParams(posenc_fc, posenc_bn, relation, mixer_fc, mixer_bn, dtype)


# -- position encoding ---------------------------------------------------------


def position_encode(
    points: np.ndarray,
    params: AppBlockParams,
    config: AppBlockConfig,
    partition: BlockPartition | None = None,
    train: bool = False,
    counter: MacCounter | None = None,
) -> tuple[Tensor, Tensor | None]:
    """Encode point positions (and anchor positions) to c_in channels.

    Global mode encodes raw coordinates; local mode encodes each point's
    offset from its anchor (anchors encode the zero offset); the raw mode
    zero-pads coordinates to width. Anchor rows are normalized with the
    source rows' batch statistics without contributing to them, so the
    encodings of real points never depend on anchor placement.
    """
    dtype = params.dtype
    n = len(points)
    aux = partition.anchors if partition is not None else None

    if config.posenc_mode == PosencMode.NONE:
        pad = np.zeros((n, config.c_in), dtype=dtype)
        pad[:, :3] = points
        phi = Tensor(pad)
        phi_aux = None
        if aux is not None:
            pad_aux = np.zeros((len(aux), config.c_in), dtype=dtype)
            pad_aux[:, :3] = aux
            phi_aux = Tensor(pad_aux)
        if counter:
            counter.add_mem("posenc", phi.size)
        return phi, phi_aux

    if config.posenc_mode == PosencMode.LOCAL:
        if partition is None:
            raise ValueError("local position encoding needs a partition")
        src = points - partition.anchors[partition.assignment]
        aux_in = np.zeros((partition.num_blocks, 3)) if aux is not None else None
    else:
        src = points
        aux_in = aux

    x = Tensor(np.asarray(src, dtype=dtype))
    h = matmul_add(x, params.posenc_fc)
    h_aux = None
    if aux_in is not None:
        h_aux = matmul_add(Tensor(np.asarray(aux_in, dtype=dtype)), params.posenc_fc)
    h, h_aux = batchnorm_pair(h, h_aux, params.posenc_bn, train=train)
    phi = leaky_relu(h, LEAKY_SLOPE)
    phi_aux = None if h_aux is None else leaky_relu(h_aux, LEAKY_SLOPE)
    if counter:
        counter.add_macs("posenc", n * 3 * config.c_in)
        counter.add_mem("posenc", phi.size)
        if phi_aux is not None:
            counter.add_macs("posenc_aux", phi_aux.shape[0] * 3 * config.c_in)
            counter.add_mem("posenc_aux", phi_aux.size)
    return phi, phi_aux


# -- push / pull ---------------------------------------------------------------


@dataclass
class PushState:
    """Anchor accumulators plus the per-point components the pull step reuses."""

    accumulators: list[Tensor]  # per-component block means, each (M, c_in)
    components: tuple  # push-side components per point, each (N, c_in)
    delta: Tensor  # phi_i - phi_anchor(i), kept for pulls that cannot reuse
    feat_acc: Tensor | None = None  # block mean of raw features (point-wise nonlinear)


def push(
    features: Tensor,
    phi: Tensor,
    phi_aux: Tensor,
    partition: BlockPartition,
    config: AppBlockConfig,
    params: AppBlockParams,
    counter: MacCounter | None = None,
) -> PushState:
    assign = partition.assignment
    m = partition.num_blocks
    c = config.c_in
    n = features.shape[0]
    delta = phi - take_rows(phi_aux, assign)

    if config.style == AggregatorStyle.POINTWISE_MLP and config.family == Family.LINEAR:
        joint = concat([features, delta])
        pushed = joint @ params.relation.weight
        acc = segment_mean(pushed, assign, m)
        if counter:
            counter.add_macs("relation", n * 2 * c * c)
            counter.add_macs("push", m * c)
            counter.add_mem("push", pushed.size + acc.size)
        return PushState([acc], (pushed,), delta)

    u = delta @ params.relation.weight
    alpha = push_map(config.family, u)
    if counter:
        counter.add_macs("relation", n * c * c)

    if config.style == AggregatorStyle.ADAPTIVE_WEIGHT:
        weighted = [features * a for a in alpha]
        if config.family == Family.LINEAR:
            # additive kernel: the raw feature mean carries the pull-side term
            weighted.append(features)
        accs = [segment_mean(w, assign, m) for w in weighted]
        if counter:
            counter.add_macs("push", len(alpha) * n * c + len(accs) * m * c)
            counter.add_mem("push", sum(w.size for w in weighted) + sum(a.size for a in accs))
        return PushState(accs, alpha, delta)

    accs = [segment_mean(a, assign, m) for a in alpha]
    feat_acc = segment_mean(features, assign, m)
    if counter:
        counter.add_macs("push", (len(accs) + 1) * m * c)
        counter.add_mem("push", sum(a.size for a in accs) + feat_acc.size)
    return PushState(accs, alpha, delta, feat_acc)


def pull(
    state: PushState,
    features: Tensor,
    partition: BlockPartition,
    config: AppBlockConfig,
    params: AppBlockParams,
    counter: MacCounter | None = None,
) -> Tensor:
    """Combine each point's gathered block mean with its own pull components.

    The result equals the anchor-free per-block average over the point's
    block mates; anchors only decide the grouping.
    """
    assign = partition.assignment
    n, c = features.shape[0], config.c_in

    if config.style == AggregatorStyle.POINTWISE_MLP and config.family == Family.LINEAR:
        gathered = take_rows(state.accumulators[0], assign)
        if config.pull_mode == PullFeatureMode.FEATURE_DIFFERENCE:
            g = gathered - state.components[0]
        else:
            # zero-feature pull: fresh transform, the push result cannot be reused
            zeros = Tensor(np.zeros(features.shape, dtype=params.dtype))
            beta = concat([zeros, -state.delta]) @ params.relation.weight
            g = gathered + beta
            if counter:
                counter.add_macs("relation", n * 2 * c * c)
        if counter:
            counter.add_mem("pull", g.size)
        return g

    beta = pull_from_push(config.family, state.components)
    gathered = [take_rows(a, assign) for a in state.accumulators]

    if config.style == AggregatorStyle.ADAPTIVE_WEIGHT:
        if config.family == Family.LINEAR:
            g = gathered[0] + gathered[1] * beta[0]
            mults = n * c
        else:
            g = combine(config.family, tuple(gathered), beta)
            mults = component_count(config.family) * n * c
        if counter:
            counter.add_macs("pull", mults)
            counter.add_mem("pull", g.size)
        return g

    g_rel = combine(config.family, tuple(gathered), beta)
    g_feat = take_rows(state.feat_acc, assign)
    if config.pull_mode == PullFeatureMode.FEATURE_DIFFERENCE:
        g_feat = g_feat - features
    g = concat([g_feat, g_rel])
    if counter:
        counter.add_macs("pull", component_count(config.family) * n * c)
        counter.add_mem("pull", g.size)
    return g


def channel_mix(
    g: Tensor,
    features: Tensor,
    config: AppBlockConfig,
    params: AppBlockParams,
    train: bool = False,
    counter: MacCounter | None = None,
) -> Tensor:
    if config.update_style == UpdateStyle.IDENTITY:
        return g
    if config.update_style == UpdateStyle.CONCAT:
        h = concat([g, features])
    else:
        h = g
    out = fc_bn_lrelu(h, params.mixer_fc, params.mixer_bn, train=train)
    if config.update_style == UpdateStyle.RESIDUAL:
        out = out + features
    if counter:
        counter.add_macs("mixing", h.shape[0] * params.mixer_fc.c_in * params.mixer_fc.c_out)
        counter.add_mem("mixing", out.size)
    return out


# -- downsampling ----------------------------------------------------------------


def sample_anchor_indices(positions: np.ndarray, ratio: int, sampler: Sampler, *seed_parts) -> np.ndarray:
    count = subsample_count(len(positions), ratio)
    if sampler == Sampler.FPS:
        return fps_subsample_indices(positions, count, *seed_parts)
    return random_subsample_indices(len(positions), ratio, *seed_parts)


def block_downsample(
    positions: np.ndarray,
    features: Tensor,
    partition: BlockPartition,
    counter: MacCounter | None = None,
) -> tuple[np.ndarray, Tensor]:
    pooled = segment_max(features, partition.assignment, partition.num_blocks)
    if counter:
        counter.add_mem("pool", pooled.size)
    return partition.anchors, pooled


def block_downsample_seeded(
    positions: np.ndarray, features: Tensor, r_d: int, seed: int, sampler: Sampler = Sampler.RANDOM
) -> tuple[np.ndarray, Tensor]:
    idx = sample_anchor_indices(positions, r_d, sampler, seed)
    partition = BlockPartition.from_anchors(positions, positions[idx])
    return block_downsample(positions, features, partition)


# -- whole block -----------------------------------------------------------------


def app_block_apply(
    positions: np.ndarray,
    features: Tensor,
    aux_partition: BlockPartition,
    down_partition: BlockPartition,
    config: AppBlockConfig,
    params: AppBlockParams,
    train: bool = False,
    counter: MacCounter | None = None,
) -> tuple[np.ndarray, Tensor]:
    """Run the block against externally built partitions (the batched path)."""
    phi, phi_aux = position_encode(positions, params, config, aux_partition, train=train, counter=counter)
    state = push(features, phi, phi_aux, aux_partition, config, params, counter=counter)
    g = pull(state, features, aux_partition, config, params, counter=counter)
    mixed = channel_mix(g, features, config, params, train=train, counter=counter)
    return block_downsample(positions, mixed, down_partition, counter=counter)


def app_block_forward(
    cloud: PointCloud,
    features: Tensor,
    config: AppBlockConfig,
    params: AppBlockParams,
    seed: int,
    train: bool = False,
    counter: MacCounter | None = None,
    plan: dict | None = None,
    trace: dict | None = None,
) -> tuple[PointCloud, Tensor]:
    """Full block on one cloud; anchor draws derive from (seed, stage).

    ``plan`` replays previously recorded anchor index draws; ``trace``
    captures the draws made here so a run can be replayed or permuted.
    """
    positions = cloud.positions
    if plan is not None:
        aux_idx, down_idx = plan["aux"], plan["down"]
    else:
        aux_idx = sample_anchor_indices(positions, config.r_a, config.sampler, seed, "aux")
        down_idx = sample_anchor_indices(positions, config.r_d, config.sampler, seed, "down")
    if trace is not None:
        trace["aux"], trace["down"] = aux_idx, down_idx
    aux_part = BlockPartition.from_anchors(positions, positions[aux_idx])
    down_part = BlockPartition.from_anchors(positions, positions[down_idx])
    new_positions, pooled = app_block_apply(
        positions, features, aux_part, down_part, config, params, train=train, counter=counter
    )
    return PointCloud(new_positions), pooled

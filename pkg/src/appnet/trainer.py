"""Training and evaluation loops.

One training step stacks a mini-batch of clouds into a single point set,
runs the network in train mode, and applies a bias-corrected Adam update at
the scheduled learning rate (per-batch linear warmup through the first
epoch, cosine decay afterwards). Geometry inputs (normals, curvature) are
estimated online; augmented training samples are re-estimated every epoch
while clean evaluation samples hit a per-sample cache. Runs are bit
reproducible for a fixed seed on one platform.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from . import tensor as T
from .data import DatasetManifest, read_xyz, rotate_z
from .layers import AdamState, LrSchedule, adam_step, lr_at
from .network import AppNet, AppNetConfig, config_to_text
from .surface import estimate
from .tensor import Tensor, backward, pick_columns
from .geometry import PointCloud

INPUT_MODES = ("xyz", "normal", "normal+curvature")


def input_channels(mode: str) -> int:
    if mode not in INPUT_MODES:
        raise ValueError(f"input mode must be one of {INPUT_MODES}, got {mode!r}")
    return 4 if mode == "normal+curvature" else 3


@dataclass
class TrainConfig:
    epochs: int = 50
    train_batch: int = 32
    test_batch: int = 16
    schedule: LrSchedule = field(default_factory=LrSchedule)
    seed: int = 0
    input_mode: str = "normal+curvature"
    augment: bool = True
    jitter_sigma: float = 0.01
    knn_k: int = 16
    viewpoint: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.epochs < 1 or self.train_batch < 1 or self.test_batch < 1:
            raise ValueError("epochs and batch sizes must be >= 1")
        input_channels(self.input_mode)


@dataclass
class Metrics:
    oa: float
    per_class: np.ndarray
    count: int


@dataclass
class EpochRow:
    epoch: int
    lr: float
    train_loss: float
    train_oa: float
    test_oa: float

    def csv_line(self) -> str:
        return f"{self.epoch},{self.lr:.8g},{self.train_loss:.6f},{self.train_oa:.4f},{self.test_oa:.4f}"


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy over softmax logits (shift-stabilized)."""
    shift = T.rowmax_detached(logits)
    z = logits - Tensor(shift)
    lse = T.log(T.sum_(T.exp(z), axis=1))
    return T.mean_(lse - pick_columns(z, np.asarray(labels, dtype=np.int64)))


def load_samples(manifest: DatasetManifest) -> list[tuple[np.ndarray, int]]:
    return [(read_xyz(path).positions, cid) for path, cid in manifest.paths()]


def compute_features(positions: np.ndarray, mode: str, k: int, viewpoint) -> np.ndarray:
    if mode == "xyz":
        return positions.copy()
    desc = estimate(PointCloud(positions), k=k, viewpoint=viewpoint)
    return desc.feature_matrix(with_curvature=(mode == "normal+curvature"))


def _augment(positions: np.ndarray, jitter_sigma: float, *seed_parts) -> np.ndarray:
    gen = rng.generator(*seed_parts)
    out = rotate_z(positions, float(gen.uniform(0.0, 2.0 * np.pi)))
    if jitter_sigma > 0:
        out = out + gen.normal(0.0, jitter_sigma, size=out.shape)
    return out


class _FeatureCache:
    """Descriptor cache for unaugmented samples, keyed by sample index."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.store: dict[int, np.ndarray] = {}

    def get(self, idx: int, positions: np.ndarray) -> np.ndarray:
        feats = self.store.get(idx)
        if feats is None:
            feats = compute_features(positions, self.cfg.input_mode, self.cfg.knn_k, self.cfg.viewpoint)
            self.store[idx] = feats
        return feats


def evaluate_net(
    net: AppNet,
    samples: list[tuple[np.ndarray, int]],
    cfg: TrainConfig,
    cache: _FeatureCache | None = None,
    eval_seed: int = 0,
) -> Metrics:
    """Eval-mode accuracy: running statistics, no augmentation, argmax vote."""
    cache = cache or _FeatureCache(cfg)
    was_training = net.training
    net.eval()
    num_classes = net.config.num_classes
    hits = np.zeros(num_classes)
    totals = np.zeros(num_classes)
    for lo in range(0, len(samples), cfg.test_batch):
        chunk = samples[lo : lo + cfg.test_batch]
        batch = [(pos, cache.get(lo + j, pos)) for j, (pos, _) in enumerate(chunk)]
        seeds = [rng.mix_seed(eval_seed, "eval", lo + j) for j in range(len(chunk))]
        logits = net.forward_batch(batch, sample_seeds=seeds)
        preds = np.argmax(logits.data, axis=1)
        for (_, label), pred in zip(chunk, preds):
            totals[label] += 1
            hits[label] += float(pred == label)
    if was_training:
        net.train()
    per_class = hits / np.maximum(totals, 1)
    return Metrics(oa=float(hits.sum() / totals.sum()), per_class=per_class, count=int(totals.sum()))


def train(
    net_config: AppNetConfig,
    cfg: TrainConfig,
    train_manifest: DatasetManifest,
    test_manifest: DatasetManifest,
    checkpoint_path=None,
    log=None,
) -> tuple[AppNet, list[EpochRow], Metrics]:
    """Train, track the best test accuracy, and leave the network holding the
    best-epoch weights (also written to ``checkpoint_path`` with a config
    sidecar)."""
    if train_manifest.num_classes != net_config.num_classes:
        raise ValueError(
            f"network expects {net_config.num_classes} classes, dataset has {train_manifest.num_classes}"
        )
    if input_channels(cfg.input_mode) != net_config.input_channels:
        raise ValueError(
            f"input mode {cfg.input_mode!r} provides {input_channels(cfg.input_mode)} channels, "
            f"network expects {net_config.input_channels}"
        )
    train_samples = load_samples(train_manifest)
    test_samples = load_samples(test_manifest)
    labels_all = np.array([label for _, label in train_samples])

    net = AppNet(net_config, seed=cfg.seed)
    params = net.parameters()
    adam = AdamState.for_params(params)
    train_cache = _FeatureCache(cfg)
    test_cache = _FeatureCache(cfg)

    n_train = len(train_samples)
    num_batches = max(1, -(-n_train // cfg.train_batch))
    rows: list[EpochRow] = []
    best = Metrics(oa=-1.0, per_class=np.zeros(net_config.num_classes), count=0)
    best_records = None

    for epoch in range(cfg.epochs):
        order = rng.generator(cfg.seed, "shuffle", epoch).permutation(n_train)
        net.train()
        epoch_loss = 0.0
        epoch_hits = 0
        lr = lr_at(epoch, cfg.schedule)
        t0 = time.perf_counter()
        for b in range(num_batches):
            idx = order[b * cfg.train_batch : (b + 1) * cfg.train_batch]
            if len(idx) == 0:
                continue
            batch = []
            for i in idx:
                pos = train_samples[i][0]
                if cfg.augment:
                    pos = _augment(pos, cfg.jitter_sigma, cfg.seed, "aug", epoch, int(i))
                    feats = compute_features(pos, cfg.input_mode, cfg.knn_k, cfg.viewpoint)
                else:
                    feats = train_cache.get(int(i), pos)
                batch.append((pos, feats))
            seeds = [rng.mix_seed(cfg.seed, "part", epoch, int(i)) for i in idx]
            logits = net.forward_batch(batch, sample_seeds=seeds, seed=rng.mix_seed(cfg.seed, "drop", epoch, b))
            labels = labels_all[idx]
            loss = cross_entropy(logits, labels)
            backward(loss)
            lr = lr_at(epoch, cfg.schedule, batch_frac=(b + 1) / num_batches)
            grads = [p.grad for p in params]
            adam_step(params, grads, adam, lr)
            for p in params:
                p.zero_grad()
            epoch_loss += loss.item() * len(idx)
            epoch_hits += int((np.argmax(logits.data, axis=1) == labels).sum())

        test_metrics = evaluate_net(net, test_samples, cfg, cache=test_cache, eval_seed=cfg.seed)
        row = EpochRow(
            epoch=epoch,
            lr=lr,
            train_loss=epoch_loss / n_train,
            train_oa=epoch_hits / n_train,
            test_oa=test_metrics.oa,
        )
        rows.append(row)
        if log:
            log(row.csv_line() + f"  [{time.perf_counter() - t0:.1f}s]")
        if test_metrics.oa > best.oa:
            best = test_metrics
            best_records = [(name, arr.copy()) for name, arr in net.state_records()]

    if best_records is not None:
        net.load_state_records(best_records)
    if checkpoint_path is not None:
        net.save(checkpoint_path)
        Path(str(checkpoint_path) + ".config").write_text(config_to_text(net_config), encoding="utf-8")
    return net, rows, best


def evaluate_checkpoint(checkpoint_path, manifest: DatasetManifest, cfg: TrainConfig, net_config: AppNetConfig) -> Metrics:
    if not Path(checkpoint_path).exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint_path}")
    net = AppNet.load(checkpoint_path, net_config)
    samples = load_samples(manifest)
    return evaluate_net(net, samples, cfg, eval_seed=cfg.seed)

"""Training orchestration: labeled sets, normalization, mini-batch SGD.

Feature rows from the single- and double-compressed corpora are merged,
shuffled, split into train/validation by source image (overlapping
windows of one image are heavily correlated, so row-level splits would
leak), z-scored with training-split statistics, and fed to the network
in seeded mini-batches. Everything is a deterministic function of the
config seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .features import FEATURE_LEN
from .net import (
    Network,
    TrainingDivergedError,
    backward,
    batch_loss,
    forward,
    init_network,
    sgd_step,
)

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    q1: int = 0  # quality factors travel as provenance metadata
    q2: int = 0
    epochs: int = 20
    batch_size: int = 128
    lr: float = 0.001
    dropout: float = 0.5
    seed: int = 0
    val_fraction: float = 0.1
    patience: int = 5  # early stop after this many epochs without val improvement

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


@dataclass
class LabeledSet:
    """Feature rows with labels and per-row provenance.

    Label 0 = single compressed, 1 = double compressed. image_ids pair
    each row with its source image (the same id covers both compression
    variants of one source, so validation splits keep them together).
    """

    rows: np.ndarray  # (n, 133)
    labels: np.ndarray  # (n,)
    image_ids: np.ndarray  # (n,)
    anchors: np.ndarray  # (n,) row index in the source feature matrix

    def __post_init__(self):
        n = len(self.rows)
        if not (len(self.labels) == len(self.image_ids) == len(self.anchors) == n):
            raise ValueError("rows, labels, and provenance must have equal length")

    def __len__(self) -> int:
        return len(self.rows)

    def subset(self, index: np.ndarray) -> "LabeledSet":
        return LabeledSet(
            rows=self.rows[index],
            labels=self.labels[index],
            image_ids=self.image_ids[index],
            anchors=self.anchors[index],
        )


@dataclass
class NormStats:
    """Per-feature z-score statistics, std floored at 1e-8."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, rows: np.ndarray) -> np.ndarray:
        return (rows - self.mean) / self.std

    def invert(self, rows: np.ndarray) -> np.ndarray:
        return rows * self.std + self.mean


def build_labeled_set(
    f_sc: list[np.ndarray], f_dc: list[np.ndarray], seed: int
) -> LabeledSet:
    """Concatenate per-image feature matrices of both classes and shuffle.

    f_sc[i] and f_dc[i] describe the same source image and share image
    id i. The shuffle is a seeded permutation preserving row/label pairs.
    """
    if not f_sc or not f_dc:
        raise ValueError("both feature lists must be nonempty")
    rows, labels, ids, anchors = [], [], [], []
    for label, matrices in ((0, f_sc), (1, f_dc)):
        for i, mat in enumerate(matrices):
            mat = np.asarray(mat, dtype=np.float64)
            if mat.ndim != 2 or mat.shape[1] != FEATURE_LEN:
                raise ValueError(f"feature matrix {i} has shape {mat.shape}")
            rows.append(mat)
            labels.append(np.full(len(mat), label, dtype=np.int64))
            ids.append(np.full(len(mat), i, dtype=np.int64))
            anchors.append(np.arange(len(mat), dtype=np.int64))
    merged = LabeledSet(
        rows=np.concatenate(rows),
        labels=np.concatenate(labels),
        image_ids=np.concatenate(ids),
        anchors=np.concatenate(anchors),
    )
    perm = np.random.default_rng(seed).permutation(len(merged))
    return merged.subset(perm)


def fit_norm(data: LabeledSet | np.ndarray) -> NormStats:
    """Feature means and stds over the given rows (training rows only)."""
    rows = data.rows if isinstance(data, LabeledSet) else np.asarray(data)
    if len(rows) < 2:
        raise ValueError("need at least 2 rows to fit normalization statistics")
    return NormStats(
        mean=rows.mean(axis=0),
        std=np.maximum(rows.std(axis=0), STD_FLOOR),
    )


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    train_acc: float
    val_acc: float
    wall_seconds: float


def _split_by_image(
    data: LabeledSet, val_fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Boolean train/val row masks; whole images go to one side."""
    ids = np.unique(data.image_ids)
    if val_fraction <= 0.0 or len(ids) < 2:
        return np.ones(len(data), dtype=bool), np.zeros(len(data), dtype=bool)
    n_val = min(len(ids) - 1, max(1, round(val_fraction * len(ids))))
    val_ids = rng.permutation(ids)[:n_val]
    val_mask = np.isin(data.image_ids, val_ids)
    return ~val_mask, val_mask


def _accuracy(net: Network, rows: np.ndarray, labels: np.ndarray, chunk: int = 4096) -> float:
    if len(rows) == 0:
        return float("nan")
    hits = 0
    for s in range(0, len(rows), chunk):
        probs = forward(net, rows[s : s + chunk]).probs
        hits += int(np.count_nonzero(np.argmax(probs, axis=1) == labels[s : s + chunk]))
    return hits / len(rows)


def train(config: TrainConfig, data: LabeledSet) -> tuple[Network, list[EpochLog]]:
    """Mini-batch SGD over the labeled set; returns the model and log.

    The batch gradient is the mean of per-sample gradients. Validation
    rows never touch the parameters or the normalization statistics.
    Stops early when validation accuracy has not improved for
    ``config.patience`` epochs (0 disables early stopping).
    """
    if len(data) == 0:
        raise ValueError("training set is empty")
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    split_rng = np.random.default_rng(seeds[0])
    train_rng = np.random.default_rng(seeds[1])

    train_mask, val_mask = _split_by_image(data, config.val_fraction, split_rng)
    train_idx = np.flatnonzero(train_mask)
    val_idx = np.flatnonzero(val_mask)
    if len(train_idx) < 2:
        raise ValueError("training split has fewer than 2 rows")

    norm = fit_norm(data.rows[train_idx])
    rows_n = norm.apply(data.rows)
    labels = data.labels

    net = init_network(int(seeds[2].generate_state(1)[0]), dropout_rate=config.dropout)
    net.norm_mean = norm.mean.copy()
    net.norm_std = norm.std.copy()

    log: list[EpochLog] = []
    best_val = -1.0
    stale = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = train_rng.permutation(train_idx)
        loss_sum = 0.0
        hit_sum = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            acts = forward(net, rows_n[batch], training=True, rng=train_rng)
            batch_mean = batch_loss(acts.probs, labels[batch])
            if not np.isfinite(batch_mean):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch + 1}, batch {start // config.batch_size + 1}"
                )
            loss_sum += batch_mean * len(batch)
            hit_sum += int(np.count_nonzero(np.argmax(acts.probs, axis=1) == labels[batch]))
            grads = backward(net, acts, labels[batch])
            sgd_step(net, grads, config.lr)
        val_acc = _accuracy(net, rows_n[val_idx], labels[val_idx])
        log.append(
            EpochLog(
                epoch=epoch + 1,
                mean_loss=loss_sum / len(order),
                train_acc=hit_sum / len(order),
                val_acc=val_acc,
                wall_seconds=time.perf_counter() - t0,
            )
        )
        if len(val_idx) and config.patience > 0:
            if val_acc > best_val + 1e-12:
                best_val = val_acc
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    return net, log


def write_train_log(path, log: list[EpochLog]) -> None:
    """One tab-separated line per epoch."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("epoch\tmean_loss\ttrain_acc\tval_acc\twall_seconds\n")
        for rec in log:
            fh.write(
                f"{rec.epoch}\t{rec.mean_loss:.6f}\t{rec.train_acc:.6f}"
                f"\t{rec.val_acc:.6f}\t{rec.wall_seconds:.3f}\n"
            )


def read_config_file(path) -> dict[str, str]:
    """Flat key=value config file; '#' starts a comment line."""
    out = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}: malformed config line {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out

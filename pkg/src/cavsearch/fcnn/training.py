"""Training loop: momentum SGD against weighted per-pixel BCE.

Determinism contract: with a fixed config and dataset, every run
produces bit-identical parameters.  Weight initialization draws from a
generator seeded by ``(seed, 1)``, the epoch-e shuffle from
``(seed, 2, e)``; all math is float32 with float64 loss accumulation on
a single thread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..dataset import DatasetManifest, read_pgm
from ..errors import ConfigError
from ..geometry import rasterize_polygon
from .checkpoint import Checkpoint
from .network import NetworkConfig, UNet
from .ops import bce_loss


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 8
    learning_rate: float = 0.05
    momentum: float = 0.9
    positive_class_weight: float = 5.0
    early_stop_patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.positive_class_weight <= 0:
            raise ConfigError("positive_class_weight must be positive")
        if self.early_stop_patience < 0:
            raise ConfigError("early_stop_patience must be non-negative "
                              "(0 disables early stopping)")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")


def load_split_arrays(manifest: DatasetManifest, data_dir: str | Path,
                      split: str):
    """Images and rasterized targets for one split.

    Returns ``(x, t)``: inputs scaled to [0, 1], shape (N, 1, H, W)
    float32, and binary target masks of the same shape (union of each
    sample's annotation polygons).
    """
    records = manifest.subset(split) if manifest.has_splits \
        else manifest.records
    if not records:
        raise ConfigError(f"no samples in split {split!r}")
    dims = {(r.width, r.height) for r in records}
    if len(dims) > 1:
        raise ConfigError(f"split {split!r} mixes image sizes: {dims}")
    data_dir = Path(data_dir)
    images, targets = [], []
    for rec in records:
        img = read_pgm(data_dir / rec.image_path)
        if img.shape != (rec.height, rec.width):
            raise ConfigError(
                f"{rec.image_path}: file is {img.shape[1]}x{img.shape[0]} "
                f"but manifest says {rec.width}x{rec.height}")
        mask = np.zeros((rec.height, rec.width), dtype=bool)
        for poly in rec.regions:
            mask |= rasterize_polygon(poly, rec.width, rec.height)
        images.append(img.astype(np.float32) / 255.0)
        targets.append(mask.astype(np.float32))
    x = np.stack(images)[:, None]
    t = np.stack(targets)[:, None]
    return x, t


def _mean_loss(net: UNet, x: np.ndarray, t: np.ndarray, batch_size: int,
               positive_class_weight: float) -> float:
    total = 0.0
    for start in range(0, len(x), batch_size):
        xb = x[start:start + batch_size]
        tb = t[start:start + batch_size]
        net.forward(xb)
        loss, _ = bce_loss(net.logits, tb, positive_class_weight)
        total += loss * xb.size
    return total / x.size


def train(net_config: NetworkConfig, train_config: TrainConfig,
          manifest: DatasetManifest, data_dir: str | Path):
    """Train on the manifest's train split, select on its val split.

    Returns ``(checkpoint, log)``.  The checkpoint holds the parameters
    of the epoch with the lowest validation loss (epoch 0 = untrained
    baseline, so ``epochs=0`` yields the initial network).  ``log``
    has one entry per evaluated epoch.  Training stops early after
    ``early_stop_patience`` consecutive epochs without validation
    improvement; a patience of 0 disables early stopping.
    """
    if not manifest.has_splits:
        raise ConfigError("manifest has no split labels; run a split first")
    x_train, t_train = load_split_arrays(manifest, data_dir, "train")
    x_val, t_val = load_split_arrays(manifest, data_dir, "val")

    net = UNet(net_config,
               rng=np.random.default_rng(
                   np.random.SeedSequence([train_config.seed, 1])))
    bs = train_config.batch_size
    pw = train_config.positive_class_weight

    best_val = _mean_loss(net, x_val, t_val, bs, pw)
    best_params = {k: v.copy() for k, v in net.params.items()}
    best_epoch = 0
    stall = 0
    log = [{"epoch": 0, "train_loss": None, "val_loss": best_val,
            "improved": True}]

    for epoch in range(1, train_config.epochs + 1):
        order = np.random.default_rng(
            np.random.SeedSequence([train_config.seed, 2, epoch])
        ).permutation(len(x_train))
        running = 0.0
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            xb = x_train[idx]
            tb = t_train[idx]
            net.forward(xb, train=True)
            loss, grad = bce_loss(net.logits, tb, pw)
            running += loss * xb.size
            grads = net.backward(grad)
            net.sgd_step(grads, train_config.learning_rate,
                         train_config.momentum)
        train_loss = running / x_train.size
        val_loss = _mean_loss(net, x_val, t_val, bs, pw)
        improved = val_loss < best_val
        log.append({"epoch": epoch, "train_loss": train_loss,
                    "val_loss": val_loss, "improved": improved})
        if improved:
            best_val = val_loss
            best_params = {k: v.copy() for k, v in net.params.items()}
            best_epoch = epoch
            stall = 0
        else:
            stall += 1
            if (train_config.early_stop_patience
                    and stall >= train_config.early_stop_patience):
                break
        if not math.isfinite(val_loss):
            break

    checkpoint = Checkpoint(config=net_config, params=best_params,
                            epoch=best_epoch, best_val_loss=best_val,
                            seed=train_config.seed)
    return checkpoint, log

"""Training loop: cross-entropy loss, SGD with momentum and weight decay,
step-decay schedule, paired augmentation, per-epoch logging, and best
checkpoint selection on the validation split."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .autodiff import (
    NumericError,
    Parameter,
    Tensor,
    clamp,
    log,
    nearest_resize_array,
    resize_array,
)
from .checkpoint import pack_text, save_model
from .config import ModelConfig
from .data import ChangePair, DatasetError, DatasetSplit, PairHandle
from .fusion import ProbabilityMap
from .metrics import ConfusionStats, confusion, scores
from .model import ChangeDetector, build_model

LOSS_CLAMP = 1e-7


class TrainingAborted(RuntimeError):
    """Raised when a NaN loss stops a run; the last good checkpoint stays."""

    def __init__(self, message: str, checkpoint: str | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint


def bce_loss(prob: ProbabilityMap, label: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of the change-class probability."""
    label = np.asarray(label)
    if not np.isin(label, (0, 1)).all():
        raise DatasetError("loss labels must be strictly 0/1 valued")
    p1 = prob.change_prob()
    if label.shape != p1.shape:
        raise DatasetError(f"label shape {label.shape} does not match prediction {p1.shape}")
    p1 = clamp(p1, LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    y = Tensor(label.astype(p1.data.dtype))
    ce = y * log(p1) + (1.0 - y) * log(1.0 - p1)
    return -(ce.mean())


class SGD:
    """Momentum SGD; weight decay is added to the gradient before the
    velocity update."""

    def __init__(self, params: list[Parameter], lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = [np.zeros_like(p.data) for p in params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p, v in zip(self.params, self._velocity):
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            grad = grad + self.weight_decay * p.data
            v *= self.momentum
            v += grad
            p.data = p.data - self.lr * v


def lr_at_epoch(cfg: ModelConfig, epoch: int) -> float:
    return cfg.learning_rate * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)


# -- augmentation ---------------------------------------------------------


def flip_horizontal(pair: ChangePair) -> ChangePair:
    return ChangePair(
        np.ascontiguousarray(pair.image_t1[:, :, ::-1]),
        np.ascontiguousarray(pair.image_t2[:, :, ::-1]),
        np.ascontiguousarray(pair.label[:, ::-1]),
        pair.id,
    )


def rescale_crop(pair: ChangePair, scale: float, oy: int, ox: int) -> ChangePair:
    """Upscale by ``scale`` then crop back to the original size at
    (oy, ox); the label resizes nearest-neighbour to stay binary."""
    _, h, w = pair.image_t1.shape
    nh, nw = int(round(h * scale)), int(round(w * scale))
    t1 = resize_array(pair.image_t1, (nh, nw))[:, oy:oy + h, ox:ox + w]
    t2 = resize_array(pair.image_t2, (nh, nw))[:, oy:oy + h, ox:ox + w]
    lab = nearest_resize_array(pair.label, (nh, nw))[oy:oy + h, ox:ox + w]
    return ChangePair(np.ascontiguousarray(t1), np.ascontiguousarray(t2),
                      np.ascontiguousarray(lab), pair.id)


def blur_images(pair: ChangePair, sigma: float) -> ChangePair:
    t1 = gaussian_filter(pair.image_t1, sigma=(0.0, sigma, sigma)).astype(np.float32)
    t2 = gaussian_filter(pair.image_t2, sigma=(0.0, sigma, sigma)).astype(np.float32)
    return ChangePair(t1, t2, pair.label, pair.id)


def augment_pair(pair: ChangePair, seed: int, cfg: ModelConfig) -> ChangePair:
    """Seeded augmentation; geometry is shared by both images and the
    label, blur touches images only."""
    rng = np.random.default_rng(seed)
    out = pair
    if cfg.aug_rescale and cfg.aug_rescale_max > 1.0:
        scale = float(rng.uniform(1.0, cfg.aug_rescale_max))
        _, h, w = pair.image_t1.shape
        nh, nw = int(round(h * scale)), int(round(w * scale))
        if (nh, nw) != (h, w):
            oy = int(rng.integers(0, nh - h + 1))
            ox = int(rng.integers(0, nw - w + 1))
            out = rescale_crop(out, scale, oy, ox)
    if cfg.aug_flip and rng.random() < 0.5:
        out = flip_horizontal(out)
    if cfg.aug_blur and rng.random() < cfg.aug_blur_prob:
        sigma = float(rng.uniform(cfg.aug_blur_sigma_min, cfg.aug_blur_sigma_max))
        out = blur_images(out, sigma)
    return out


def _augmentation_enabled(cfg: ModelConfig) -> bool:
    return cfg.aug_flip or cfg.aug_rescale or cfg.aug_blur


# -- evaluation --------------------------------------------------------------


def evaluate(model: ChangeDetector, pool: list[PairHandle]) -> tuple[float, float]:
    """Mean loss and micro-averaged F1 over a list of pairs."""
    total_loss = 0.0
    stats = ConfusionStats()
    for handle in pool:
        pair = handle.load()
        prob = model.forward(pair.image_t1, pair.image_t2)
        total_loss += bce_loss(prob, pair.label).item()
        stats = stats + confusion(prob.predicted(), pair.label)
    return total_loss / len(pool), scores(stats).f1


def evaluate_scores(model: ChangeDetector, pool: list[PairHandle]):
    stats = ConfusionStats()
    for handle in pool:
        pair = handle.load()
        prob = model.forward(pair.image_t1, pair.image_t2)
        stats = stats + confusion(prob.predicted(), pair.label)
    return scores(stats)


# -- the loop ----------------------------------------------------------------


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_f1: float

    def as_csv(self) -> str:
        return f"{self.epoch},{self.train_loss:.8f},{self.val_loss:.8f},{self.val_f1:.8f}"


@dataclass
class TrainResult:
    logs: list[EpochLog] = field(default_factory=list)
    best_epoch: int = -1
    best_path: str = ""
    final_path: str = ""
    log_path: str = ""


def _checkpoint(path: str, model: ChangeDetector, cfg: ModelConfig, epoch: int) -> None:
    save_model(path, model, extra={
        "__config__": pack_text(cfg.to_text()),
        "__epoch__": np.asarray([float(epoch)], dtype=np.float64),
    })


def train(cfg: ModelConfig, dataset: DatasetSplit, out_dir: str,
          model: ChangeDetector | None = None) -> TrainResult:
    """Run the full schedule; returns logs plus checkpoint paths.

    Aborts on a NaN loss, leaving the last saved checkpoint untouched.
    """
    if not dataset.train:
        raise DatasetError("training needs a non-empty train split")
    os.makedirs(out_dir, exist_ok=True)
    model = model if model is not None else build_model(cfg)
    opt = SGD(model.parameters(), lr=cfg.learning_rate, momentum=cfg.momentum,
              weight_decay=cfg.weight_decay)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xD5)))
    val_pool = dataset.val if dataset.val else dataset.train

    result = TrainResult(
        best_path=os.path.join(out_dir, "best.ckpt"),
        final_path=os.path.join(out_dir, "final.ckpt"),
        log_path=os.path.join(out_dir, "train_log.csv"),
    )
    best_key: float | None = None
    last_val = (float("nan"), float("nan"))
    lines = ["epoch,train_loss,val_loss,val_f1"]

    for epoch in range(cfg.epochs):
        opt.lr = lr_at_epoch(cfg, epoch)
        order = shuffle_rng.permutation(len(dataset.train))
        seen = 0
        loss_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            opt.zero_grad()
            batch_loss = None
            for idx in batch:
                pair = dataset.train[int(idx)].load()
                if _augmentation_enabled(cfg):
                    aug_seed = np.random.SeedSequence(
                        (cfg.seed, epoch, int(idx))).generate_state(1)[0]
                    pair = augment_pair(pair, int(aug_seed), cfg)
                prob = model.forward(pair.image_t1, pair.image_t2)
                loss = bce_loss(prob, pair.label)
                batch_loss = loss if batch_loss is None else batch_loss + loss
            batch_loss = batch_loss * (1.0 / len(batch))
            value = batch_loss.item()
            if not np.isfinite(value):
                _write_log(result.log_path, lines)
                raise TrainingAborted(
                    f"non-finite loss at epoch {epoch}",
                    checkpoint=result.best_path if best_key is not None else None)
            batch_loss.backward()
            opt.step()
            loss_sum += value * len(batch)
            seen += len(batch)
        train_loss = loss_sum / seen

        if epoch % cfg.validate_every == 0 or epoch == cfg.epochs - 1:
            last_val = evaluate(model, val_pool)
        val_loss, val_f1 = last_val

        entry = EpochLog(epoch, train_loss, val_loss, val_f1)
        result.logs.append(entry)
        lines.append(entry.as_csv())

        key = val_loss if cfg.selection_metric == "val_loss" else -val_f1
        if best_key is None or key < best_key:
            best_key = key
            result.best_epoch = epoch
            _checkpoint(result.best_path, model, cfg, epoch)

    _checkpoint(result.final_path, model, cfg, cfg.epochs - 1)
    _write_log(result.log_path, lines)
    return result


def _write_log(path: str, lines: list[str]) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)

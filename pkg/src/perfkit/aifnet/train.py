"""Training loop, bolus-specific augmentation and VOF recalibration."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import metrics
from ..errors import DegenerateSignalError, TrainingError, ValidationError
from ..types import CtpVolume4D, ProbVolume, VascularFunction, VFKind
from .model import (AifNetModel, build_model, forward, gradients,
                    _pearson_loss_grad, _curve_values)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    max_epochs: int = 200
    patience: int = 10
    shift_max_frames: int = 5
    scale_range: tuple[float, float] = (0.8, 1.2)
    baseline_frames: int = 3
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValidationError(f"learning rate must be positive, got {self.learning_rate}")
        if not (0 <= self.momentum < 1):
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValidationError("max_epochs and patience must be positive")
        if self.patience > self.max_epochs:
            raise ValidationError(
                f"patience {self.patience} exceeds max_epochs {self.max_epochs}")
        if self.shift_max_frames < 0:
            raise ValidationError("shift_max_frames must be >= 0")
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ValidationError(f"invalid scale range {self.scale_range}")


def _shift_frames(arr: np.ndarray, s: int) -> np.ndarray:
    """Shift along axis 0, replicating the first/last entry (s > 0: late arrival)."""
    if s == 0:
        return arr.copy()
    if s > 0:
        head = np.repeat(arr[:1], s, axis=0)
        return np.concatenate([head, arr[:-s]], axis=0)
    s = -s
    tail = np.repeat(arr[-1:], s, axis=0)
    return np.concatenate([arr[s:], tail], axis=0)


def augment(x: CtpVolume4D, y: VascularFunction, rng: np.random.Generator,
            cfg: TrainConfig) -> tuple[CtpVolume4D, VascularFunction]:
    """Random bolus-arrival shift plus peak-to-baseline rescaling.

    The same shift and the same scaling rule (each signal about its own
    pre-contrast baseline) are applied to the series and to the reference
    curve, so the label stays consistent with the transformed input.
    """
    n = x.n_frames
    if cfg.baseline_frames >= n:
        raise ValidationError(
            f"baseline_frames {cfg.baseline_frames} must be < {n} frames")
    if cfg.shift_max_frames >= n:
        raise ValidationError(
            f"shift_max_frames {cfg.shift_max_frames} must be < {n} frames")
    s = int(rng.integers(-cfg.shift_max_frames, cfg.shift_max_frames + 1))
    a = float(rng.uniform(cfg.scale_range[0], cfg.scale_range[1]))

    data = _shift_frames(x.data.astype(np.float64), s)
    pre = data[:cfg.baseline_frames].mean(axis=0)
    data = (data - pre) * a + pre
    x_aug = CtpVolume4D(data=data, dt_seconds=x.dt_seconds, brain_mask=x.brain_mask)

    vals = _shift_frames(y.values, s)
    base = vals[:cfg.baseline_frames].mean()
    vals = (vals - base) * a + base
    return x_aug, VascularFunction(values=vals, dt_seconds=y.dt_seconds, kind=y.kind)


def _truncate(x: CtpVolume4D, y: VascularFunction, n: int):
    if x.n_frames == n and len(y) == n:
        return x, y
    return (CtpVolume4D(data=x.data[:n], dt_seconds=x.dt_seconds,
                        brain_mask=x.brain_mask),
            VascularFunction(values=y.values[:n], dt_seconds=y.dt_seconds, kind=y.kind))


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_val_loss(self) -> float:
        return min(self.val_loss) if self.val_loss else math.nan


def _sgd_step(model: AifNetModel, grads, lr: float, momentum: float) -> None:
    for layer, (dw, db) in zip(model.all_layers(), grads):
        layer.vw = momentum * layer.vw - lr * dw
        layer.w = layer.w + layer.vw
        layer.vb = momentum * layer.vb - lr * db
        layer.b = layer.b + layer.vb


def train(dataset, train_idx, val_idx, cfg: TrainConfig, kind: VFKind,
          k_layers: int) -> tuple[AifNetModel, TrainHistory]:
    """SGD with momentum, batch size one, early stopping on validation loss.

    dataset is a list of (CtpVolume4D, VascularFunction) pairs; every sample
    is truncated to the shortest series so the channel count is consistent.
    Returns the best-validation snapshot and the per-epoch loss history.
    """
    train_idx = list(train_idx)
    val_idx = list(val_idx)
    if not train_idx or not val_idx:
        raise TrainingError("training and validation splits must be non-empty")
    t_train = min(min(x.n_frames for x, _ in dataset),
                  min(len(y) for _, y in dataset))
    data = [_truncate(x, y, t_train) for x, y in dataset]

    rng = np.random.default_rng(cfg.seed)
    model = build_model(kind, k_layers, t_train, rng)
    history = TrainHistory()
    best = math.inf
    best_weights = model.copy_weights()
    since_best = 0

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_idx))
        epoch_losses = []
        for j in order:
            x, y = data[train_idx[int(j)]]
            x_aug, y_aug = augment(x, y, rng, cfg)
            loss, grads = gradients(model, x_aug, y_aug)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"divergence: non-finite training loss at epoch {epoch}")
            _sgd_step(model, grads, cfg.learning_rate, cfg.momentum)
            epoch_losses.append(loss)
        val = _mean_val_loss(model, data, val_idx)
        if not math.isfinite(val):
            raise TrainingError(f"divergence: non-finite validation loss at epoch {epoch}")
        history.train_loss.append(float(np.mean(epoch_losses)))
        history.val_loss.append(val)
        if val < best:
            best = val
            best_weights = model.copy_weights()
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    model.load_weights(best_weights)
    return model, history


def _mean_val_loss(model: AifNetModel, data, val_idx) -> float:
    losses = []
    for i in val_idx:
        x, y = data[i]
        _, yhat = forward(model, x)
        losses.append(_pearson_loss_grad(_curve_values(y), yhat.values)[0])
    return float(np.mean(losses))


def recalibrate_vof(vof_hat: VascularFunction, pvol: ProbVolume, x: CtpVolume4D,
                    baseline_frames: int = 3) -> VascularFunction:
    """Rescale the predicted VOF to the peak-to-baseline of the voxel with
    the largest probability-weighted PTB.

    Averaging many voxels underestimates venous peaks; the output curve's
    PTB equals the raw PTB of the selected voxel exactly.
    """
    if pvol.probs.shape != x.spatial_shape:
        raise ValidationError(
            f"probability volume {pvol.probs.shape} does not match series "
            f"spatial dims {x.spatial_shape}")
    ptb_hat, base = metrics.ptb(vof_hat, baseline_frames)
    if ptb_hat <= 0:
        raise DegenerateSignalError("predicted VOF peak-to-baseline is not positive")
    ptb_vox = metrics.ptb_volume(x.data, baseline_frames)
    weighted = ptb_vox * pvol.probs
    target = float(ptb_vox.reshape(-1)[int(np.argmax(weighted))])
    values = base + (vof_hat.values - base) * (target / ptb_hat)
    return VascularFunction(values=values, dt_seconds=vof_hat.dt_seconds,
                            kind=vof_hat.kind)

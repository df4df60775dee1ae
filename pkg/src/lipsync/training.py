"""Composite position/velocity loss, Adam, and the sequence training loop.

The loss is w_pos * Lp + w_vel * Lv where Lp is the squared Frobenius norm
of the per-frame displacement error and Lv compares backward finite
differences of prediction and ground truth. Velocity terms start at the
second frame.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError
from .features import FeatureSequence
from .mesh import DisplacementSequence
from .model import NetworkParams, backward, forward_with_cache, save_checkpoint

log = logging.getLogger(__name__)

REDUCTION_SUM = "sum"
REDUCTION_MEAN = "mean_per_frame"


@dataclass(frozen=True)
class LossConfig:
    w_position: float = 1.0
    w_velocity: float = 0.5
    reduction: str = REDUCTION_MEAN

    def __post_init__(self):
        if self.w_position < 0 or self.w_velocity < 0:
            raise ValueError("loss weights must be non-negative")
        if self.reduction not in (REDUCTION_SUM, REDUCTION_MEAN):
            raise ValueError(f"unknown reduction {self.reduction!r}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 1
    seed: int = 0
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    batch_size: int = 1  # sequences accumulated per optimizer step
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class Sample:
    """One corpus item: features paired with ground-truth displacements."""

    id: str
    features: FeatureSequence
    displacements: DisplacementSequence


@dataclass
class MetricRow:
    epoch: int
    split: str
    lp: float
    lv: float
    total: float


@dataclass
class TrainResult:
    params: NetworkParams
    best_params: NetworkParams
    metrics: list[MetricRow]
    best_epoch: int


def _frames(tensor) -> np.ndarray:
    arr = tensor.frames if isinstance(tensor, DisplacementSequence) else tensor
    return np.asarray(arr, dtype=np.float64)


def _check_shapes(pred, truth):
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} != ground truth shape {truth.shape}")


def loss_position(pred, truth, reduction: str = REDUCTION_SUM) -> float:
    """Sum over frames of the squared Frobenius norm of the error."""
    p, y = _frames(pred), _frames(truth)
    _check_shapes(p, y)
    value = float(((y - p) ** 2).sum())
    if reduction == REDUCTION_MEAN:
        value /= len(p)
    return value


def loss_velocity(pred, truth, reduction: str = REDUCTION_SUM) -> float:
    """Backward-difference velocity mismatch, summed from the second frame."""
    p, y = _frames(pred), _frames(truth)
    _check_shapes(p, y)
    if len(p) < 2:
        return 0.0
    d = (y[1:] - y[:-1]) - (p[1:] - p[:-1])
    value = float((d**2).sum())
    if reduction == REDUCTION_MEAN:
        value /= len(p) - 1
    return value


def _loss_terms(pred, truth, cfg: LossConfig):
    """(lp, lv, total, dTotal/dPred) with the configured reduction applied."""
    p, y = _frames(pred), _frames(truth)
    _check_shapes(p, y)
    t_len = len(p)

    err = y - p
    lp = float((err**2).sum())
    grad_p = -2.0 * err

    grad_v = np.zeros_like(p)
    if t_len >= 2:
        d = err[1:] - err[:-1]
        lv = float((d**2).sum())
        grad_v[1:] -= 2.0 * d
        grad_v[:-1] += 2.0 * d
    else:
        lv = 0.0

    if cfg.reduction == REDUCTION_MEAN:
        lp /= t_len
        grad_p /= t_len
        if t_len >= 2:
            lv /= t_len - 1
            grad_v /= t_len - 1

    total = cfg.w_position * lp + cfg.w_velocity * lv
    grad = cfg.w_position * grad_p + cfg.w_velocity * grad_v
    return lp, lv, total, grad


def loss_total(pred, truth, cfg: LossConfig = LossConfig()):
    """Weighted combined loss and its analytic gradient w.r.t. the prediction."""
    _, _, total, grad = _loss_terms(pred, truth, cfg)
    return total, grad


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros(cls, net: NetworkParams) -> "AdamState":
        return cls(
            m={name: np.zeros_like(arr) for name, arr in net.items()},
            v={name: np.zeros_like(arr) for name, arr in net.items()},
        )


def adam_step(net: NetworkParams, grads: dict, state: AdamState, cfg: TrainConfig) -> AdamState:
    """Bias-corrected Adam update, in place on the network arrays."""
    state.t += 1
    correct1 = 1.0 - cfg.beta1**state.t
    correct2 = 1.0 - cfg.beta2**state.t
    for name, arr in net.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        arr -= cfg.learning_rate * (m / correct1) / (np.sqrt(v / correct2) + cfg.eps)
    return state


def clip_gradients(grads: dict, max_norm: float):
    """Scale the gradient dict in place if its global L2 norm exceeds max_norm."""
    total = float(np.sqrt(sum(float((g**2).sum()) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
        return total, True
    return total, False


# ---------------------------------------------------------------------------
# training loop


def _validate_items(items, split):
    for s in items:
        if s.features.n_frames != s.displacements.n_frames:
            raise DataError(
                f"item {s.id!r} in {split} split: {s.features.n_frames} feature frames vs "
                f"{s.displacements.n_frames} displacement frames"
            )


def evaluate_loss(items, net: NetworkParams, cfg: LossConfig):
    """Mean per-item (lp, lv) of the current parameters over a sample list."""
    lps, lvs = [], []
    for s in items:
        pred, _ = forward_with_cache(net, s.features)
        lp, lv, _, _ = _loss_terms(pred, s.displacements, cfg)
        lps.append(lp)
        lvs.append(lv)
    return float(np.mean(lps)), float(np.mean(lvs))


def train(
    train_items,
    net: NetworkParams,
    loss_cfg: LossConfig = LossConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    val_items=(),
    sink=None,
    checkpoint_dir=None,
) -> TrainResult:
    """Full-sequence BPTT over the corpus; one optimizer step per batch.

    Epoch order is shuffled deterministically from the seed. Emits per-epoch
    train/validation metrics through ``sink`` (a callable taking an event
    dict) and retains the parameters of the best validation epoch.
    """
    train_items = list(train_items)
    val_items = list(val_items)
    if not train_items:
        raise DataError("training corpus is empty")
    _validate_items(train_items, "train")
    _validate_items(val_items, "validation")

    rng = np.random.default_rng(train_cfg.seed)
    state = AdamState.zeros(net)
    metrics: list[MetricRow] = []
    best = (np.inf, None, 0)
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    def emit(event):
        if sink is not None:
            sink(event)

    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(len(train_items))
        epoch_lp, epoch_lv = [], []
        pending = None
        pending_count = 0

        for pos, idx in enumerate(order):
            s = train_items[idx]
            pred, tape = forward_with_cache(net, s.features)
            lp, lv, _, dpred = _loss_terms(pred, s.displacements, loss_cfg)
            epoch_lp.append(lp)
            epoch_lv.append(lv)
            grads = backward(net, tape, dpred)

            if pending is None:
                pending = grads
            else:
                for name in pending:
                    pending[name] += grads[name]
            pending_count += 1

            if pending_count == train_cfg.batch_size or pos == len(order) - 1:
                if pending_count > 1:
                    for g in pending.values():
                        g /= pending_count
                norm, clipped = clip_gradients(pending, train_cfg.clip_norm)
                if clipped:
                    log.debug("epoch %d: clipped gradient norm %.3f", epoch, norm)
                    emit({"event": "clip", "epoch": epoch, "norm": norm})
                adam_step(net, pending, state, train_cfg)
                pending = None
                pending_count = 0

        row = MetricRow(
            epoch=epoch,
            split="train",
            lp=float(np.mean(epoch_lp)),
            lv=float(np.mean(epoch_lv)),
            total=loss_cfg.w_position * float(np.mean(epoch_lp))
            + loss_cfg.w_velocity * float(np.mean(epoch_lv)),
        )
        metrics.append(row)
        emit({"event": "epoch", "split": "train", "epoch": epoch, "lp": row.lp, "lv": row.lv})

        if val_items:
            vlp, vlv = evaluate_loss(val_items, net, loss_cfg)
            vtotal = loss_cfg.w_position * vlp + loss_cfg.w_velocity * vlv
            metrics.append(MetricRow(epoch=epoch, split="val", lp=vlp, lv=vlv, total=vtotal))
            emit({"event": "epoch", "split": "val", "epoch": epoch, "lp": vlp, "lv": vlv})
            if vtotal < best[0]:
                best = (vtotal, net.copy(), epoch)
                if ckpt_dir is not None:
                    save_checkpoint(net, ckpt_dir / "best.lsn1")

        if (
            ckpt_dir is not None
            and train_cfg.checkpoint_every > 0
            and epoch % train_cfg.checkpoint_every == 0
        ):
            save_checkpoint(net, ckpt_dir / f"epoch_{epoch:04d}.lsn1")

    best_params = best[1] if best[1] is not None else net
    return TrainResult(params=net, best_params=best_params, metrics=metrics, best_epoch=best[2])


def write_metrics_csv(metrics, path) -> None:
    """CSV log, one `epoch,split,lp,lv,total` line per row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "split", "lp", "lv", "total"])
        for row in metrics:
            writer.writerow([row.epoch, row.split, repr(row.lp), repr(row.lv), repr(row.total)])

"""Supervised training for the enhancer: Charbonnier loss, Adam, curve log.

Training pairs are full frames in [0, 1]; each epoch draws one aligned
random crop per pair, batches them, and takes one Adam step per batch.
Validation runs on full frames (reflect-padded to the stream divisor and
cropped back). The per-epoch curve is written as CSV with the header
``epoch,train_loss,val_loss,val_psnr_db``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import ShapeError, Tape, Tensor, sum_all
from .network import (
    ModelParams,
    NetConfig,
    crop_back,
    forward,
    init_model,
    pad_to_multiple,
    save_checkpoint,
)

__all__ = [
    "ImagePair",
    "TrainConfig",
    "CurveRow",
    "TrainingDiverged",
    "charbonnier_loss",
    "psnr",
    "random_crop_pair",
    "Adam",
    "train",
    "evaluate_pairs",
    "write_curve_csv",
]

CURVE_HEADER = ("epoch", "train_loss", "val_loss", "val_psnr_db")


class TrainingDiverged(RuntimeError):
    """Loss stopped being finite; carries the epoch and step that broke."""


@dataclass(frozen=True)
class ImagePair:
    """Aligned (degraded, reference) frames, each (1, 3, h, w) in [0, 1]."""

    low: Tensor
    high: Tensor
    pair_id: str = ""

    def __post_init__(self):
        if self.low.dims != self.high.dims:
            raise ShapeError(
                f"pair {self.pair_id!r} dims differ: {self.low.dims} vs {self.high.dims}"
            )
        if self.low.n != 1 or self.low.c != 3:
            raise ShapeError(
                f"pair {self.pair_id!r} must be (1, 3, h, w), got {self.low.dims}"
            )
        for name, t in (("low", self.low), ("high", self.high)):
            if float(t.data.min()) < 0.0 or float(t.data.max()) > 1.0:
                raise ValueError(
                    f"pair {self.pair_id!r} {name} values fall outside [0, 1]"
                )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    crop: int = 128
    batch: int = 4
    lr: float = 2e-4
    charbonnier_eps: float = 1e-3
    seed: int = 0
    curve_output: Path | None = None
    checkpoint_dir: Path | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.crop < 1 or self.batch < 1:
            raise ValueError(f"epochs, crop and batch must be >= 1, got {self}")
        if self.lr < 0 or self.charbonnier_eps <= 0:
            raise ValueError(f"need lr >= 0 and charbonnier_eps > 0, got {self}")


@dataclass(frozen=True)
class CurveRow:
    epoch: int
    train_loss: float
    val_loss: float
    val_psnr_db: float


def charbonnier_loss(pred: Tensor, target: Tensor, eps: float = 1e-3,
                     tape: Tape | None = None) -> Tensor:
    """Smooth L1: mean of sqrt((pred - target)^2 + eps^2).

    Everywhere differentiable; approaches mean absolute error as eps -> 0
    and never drops below eps.
    """
    if pred.dims != target.dims:
        raise ShapeError(f"loss dims differ: {pred.dims} vs {target.dims}")
    diff = pred.data - target.data
    root = np.sqrt(diff * diff + eps * eps)
    out = Tensor(root.mean(dtype=pred.dtype).reshape(1, 1, 1, 1))
    if tape is not None:
        def backward(g):
            scale = float(g.reshape(())) / pred.size
            return (scale * diff / root, None)

        tape.record(out, (pred, target), backward)
    return out


def psnr(pred: Tensor, target: Tensor, peak: float = 1.0) -> float:
    """10 * log10(peak^2 / mse) in dB; +inf when the images are identical."""
    if pred.dims != target.dims:
        raise ShapeError(f"psnr dims differ: {pred.dims} vs {target.dims}")
    mse = float(np.mean((pred.data - target.data) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def random_crop_pair(pair: ImagePair, size: int, rng: np.random.Generator) -> ImagePair:
    """One aligned size x size crop at a uniform offset; identity when exact."""
    h, w = pair.low.h, pair.low.w
    if size > h or size > w:
        raise ShapeError(f"crop {size} exceeds frame dims {pair.low.dims}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    if (top, left, size, size) == (0, 0, h, w):
        return pair
    sl = np.s_[:, :, top : top + size, left : left + size]
    return ImagePair(Tensor(pair.low.data[sl].copy()),
                     Tensor(pair.high.data[sl].copy()), pair.pair_id)


class Adam:
    """Adam with bias correction; state keyed by parameter path."""

    def __init__(self, params: ModelParams, lr: float = 2e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {p: np.zeros_like(t.data) for p, t in params.items()}
        self._v = {p: np.zeros_like(t.data) for p, t in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for path, tensor in self.params.items():
            g = grads.get(path)
            if g is None:
                g = np.zeros_like(tensor.data)
            m = self._m[path]
            v = self._v[path]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            tensor.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def evaluate_pairs(params: ModelParams, pairs: Sequence[ImagePair],
                   eps: float = 1e-3) -> tuple[float, float]:
    """Full-frame loss and PSNR over a pair set.

    Frames are reflect-padded evenly to the stream divisor, enhanced, and
    cropped back. PSNR is computed from the pooled MSE over all pixels, so
    it moves monotonically with aggregate squared error.
    """
    if not pairs:
        raise ValueError("evaluate_pairs needs at least one pair")
    total_loss = 0.0
    sq_sum = 0.0
    n_px = 0
    for pair in pairs:
        padded, frame = pad_to_multiple(pair.low, params.config.divisor)
        pred = crop_back(forward(padded, params), frame)
        total_loss += charbonnier_loss(pred, pair.high, eps).item()
        sq_sum += float(((pred.data - pair.high.data) ** 2).sum())
        n_px += pred.size
    mse = sq_sum / n_px
    val_psnr = math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)
    return total_loss / len(pairs), val_psnr


def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    return [order[i : i + size] for i in range(0, len(order), size)]


def train(pairs: Sequence[ImagePair], val_pairs: Sequence[ImagePair],
          net_config: NetConfig, train_config: TrainConfig,
          params: ModelParams | None = None) -> tuple[ModelParams, list[CurveRow]]:
    """Train an enhancer, returning the parameters and the per-epoch curve.

    Same seed, same data, same configs give a bit-identical curve and
    checkpoint. ``val_pairs`` may be empty, in which case the training
    pairs stand in for validation. A non-finite loss aborts with
    TrainingDiverged naming the epoch and step.
    """
    if not pairs:
        raise ValueError("train needs at least one training pair")
    if train_config.crop % net_config.divisor:
        raise ShapeError(
            f"crop {train_config.crop} not divisible by stream divisor "
            f"{net_config.divisor}"
        )
    if params is None:
        params = init_model(net_config)
    val_set = val_pairs if val_pairs else pairs
    opt = Adam(params, lr=train_config.lr)
    rng = np.random.default_rng(train_config.seed)
    rows: list[CurveRow] = []

    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(len(pairs))
        losses = []
        for step, batch in enumerate(_batches(order, train_config.batch)):
            crops = [random_crop_pair(pairs[i], train_config.crop, rng) for i in batch]
            low = Tensor(np.concatenate([c.low.data for c in crops], axis=0))
            high = Tensor(np.concatenate([c.high.data for c in crops], axis=0))
            tape = Tape()
            pred = forward(low, params, tape)
            loss = charbonnier_loss(pred, high, train_config.charbonnier_eps, tape)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at epoch {epoch} step {step}"
                )
            tape.backward(loss)
            grads = {}
            for path, tensor in params.items():
                g = tape.grad(tensor)
                if g is not None:
                    grads[path] = g
            opt.step(grads)
            losses.append(value)
        val_loss, val_psnr = evaluate_pairs(params, val_set, train_config.charbonnier_eps)
        rows.append(CurveRow(epoch, float(np.mean(losses)), val_loss, val_psnr))
        if train_config.checkpoint_dir is not None:
            ckpt_dir = Path(train_config.checkpoint_dir)
            ckpt_dir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(params, ckpt_dir / f"epoch_{epoch:04d}.ckpt")

    if train_config.curve_output is not None:
        write_curve_csv(rows, train_config.curve_output)
    return params, rows


def _fmt(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.6g}"


def write_curve_csv(rows: Sequence[CurveRow], path: str | Path) -> None:
    """Write the per-epoch curve with 6-significant-digit floats."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_HEADER)
        for row in rows:
            writer.writerow([
                row.epoch,
                _fmt(row.train_loss),
                _fmt(row.val_loss),
                _fmt(row.val_psnr_db),
            ])

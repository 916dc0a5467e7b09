"""Optimization loop: reconstruction losses, Adam, plateau-based learning
rate decay, early stopping, and checkpointing of the best validation model."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .blocks import l2_penalty
from .errors import ConfigError, DataError, NumericError, ShapeError
from .model import BearConfig, forward, init_params
from .serialize import Checkpoint
from .tensor import ParameterSet, Tensor, add, add_n, custom_op, no_grad, scale

# Validation loss changes smaller than this do not count as improvements.
IMPROVE_EPS = 1e-6

# Log arguments are clamped away from 0 and 1 by this margin.
BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters.

    The learning rate is multiplied by ``decay_factor`` whenever the best
    validation loss stalls for ``plateau_patience`` consecutive epochs, and
    training stops after ``stop_patience`` consecutive stalled epochs.
    """

    loss: str = "bce"
    lr0: float = 1e-4
    plateau_patience: int = 5
    decay_factor: float = 0.5
    stop_patience: int = 10
    batch_size: int = 16
    max_epochs: int = 100
    val_fraction: float = 0.1
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.loss not in ("bce", "mse"):
            raise ConfigError(f"loss must be 'bce' or 'mse', got {self.loss!r}")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if self.plateau_patience < 1:
            raise ConfigError(f"plateau_patience must be at least 1, got {self.plateau_patience}")
        if not 0.0 < self.decay_factor < 1.0:
            raise ConfigError(f"decay_factor must be in (0, 1), got {self.decay_factor}")
        if self.stop_patience < self.plateau_patience:
            raise ConfigError(
                f"stop_patience={self.stop_patience} must be at least "
                f"plateau_patience={self.plateau_patience}, otherwise decay can never trigger"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ConfigError(f"max_epochs must be nonnegative, got {self.max_epochs}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be nonnegative, got {self.l2}")
        if self.seed < 0:
            raise ConfigError(f"seed must be nonnegative, got {self.seed}")


@dataclass
class EpochRecord:
    """One row of the training log."""

    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    seconds: float


# ---------------------------------------------------------------------------
# losses


def bce_loss(x: Tensor, xhat: Tensor) -> Tensor:
    """Mean binary cross entropy, -mean(x log xhat + (1-x) log(1-xhat)).

    The reconstruction is clamped to [BCE_CLAMP, 1 - BCE_CLAMP] inside the
    logs, and the clamp contributes zero gradient outside that window.
    """
    if x.shape != xhat.shape:
        raise ShapeError(f"bce_loss: shapes {x.shape} and {xhat.shape} differ")
    clamped = np.clip(xhat.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    value = -(x.data * np.log(clamped) + (1.0 - x.data) * np.log(1.0 - clamped)).mean()
    count = x.size

    def backward(g) -> None:
        gs = float(g)
        if xhat.requires_grad:
            inside = (xhat.data > BCE_CLAMP) & (xhat.data < 1.0 - BCE_CLAMP)
            grad = (clamped - x.data) / (clamped * (1.0 - clamped))
            xhat._accumulate((gs / count) * grad * inside)
        if x.requires_grad:
            x._accumulate((gs / count) * (np.log(1.0 - clamped) - np.log(clamped)))

    return custom_op(value, (x, xhat), backward)


def mse_loss(x: Tensor, xhat: Tensor) -> Tensor:
    """Mean squared elementwise difference."""
    if x.shape != xhat.shape:
        raise ShapeError(f"mse_loss: shapes {x.shape} and {xhat.shape} differ")
    diff = xhat.data - x.data
    value = (diff * diff).mean()
    count = x.size

    def backward(g) -> None:
        gs = float(g)
        if xhat.requires_grad:
            xhat._accumulate((2.0 * gs / count) * diff)
        if x.requires_grad:
            x._accumulate((-2.0 * gs / count) * diff)

    return custom_op(value, (x, xhat), backward)


LOSS_FUNCTIONS: dict[str, Callable[[Tensor, Tensor], Tensor]] = {
    "bce": bce_loss,
    "mse": mse_loss,
}


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with bias correction; gradients are zeroed after each step."""

    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self, params: ParameterSet) -> None:
        self.params = params
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / correction1
            v_hat = v / correction2
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)
        self.params.zero_grads()


def adam_step(params: ParameterSet, state: Adam, lr: float) -> None:
    """One optimizer update over every parameter (state carries the moments)."""
    if state.params is not params:
        raise ValueError("adam_step: state was built for a different parameter set")
    state.step(lr)


# ---------------------------------------------------------------------------
# schedule state machines


def _improvement_flags(history: Sequence[float], threshold: float = IMPROVE_EPS) -> list[bool]:
    """Per-epoch flags: did this epoch beat the best of all prior epochs?

    The first epoch establishes the baseline and counts as not improving, so
    a flat run of length p is a p-epoch plateau.
    """
    flags: list[bool] = []
    best = math.inf
    for i, value in enumerate(history):
        flags.append(i > 0 and value < best - threshold)
        best = min(best, value)
    return flags


def plateau_decay(history: Sequence[float], lr: float, cfg: TrainConfig) -> float:
    """Return the learning rate after this epoch: decayed when the best
    validation loss has stalled for ``plateau_patience`` consecutive epochs.

    The stall counter resets both on improvement and after each decay, so a
    continuing plateau decays again only after another full patience window.
    """
    if not history:
        raise ValueError("plateau_decay: history must be nonempty")
    counter = 0
    fired_last = False
    for i, improved in enumerate(_improvement_flags(history)):
        if improved:
            counter = 0
            fired = False
        else:
            counter += 1
            fired = counter >= cfg.plateau_patience
            if fired:
                counter = 0
        if i == len(history) - 1:
            fired_last = fired
    return lr * cfg.decay_factor if fired_last else lr


def early_stop(history: Sequence[float], cfg: TrainConfig) -> bool:
    """True when the trailing run of non-improving epochs reaches
    ``stop_patience``."""
    flags = _improvement_flags(history)
    run = 0
    for improved in reversed(flags):
        if improved:
            break
        run += 1
    return run >= cfg.stop_patience


# ---------------------------------------------------------------------------
# the training loop


def _chunks(seq: np.ndarray, size: int):
    for start in range(0, len(seq), size):
        yield seq[start : start + size]


def fit(
    images: Sequence[np.ndarray],
    cfg: TrainConfig,
    bcfg: BearConfig,
) -> tuple[Checkpoint, list[EpochRecord]]:
    """Train from scratch on ``images`` (each (n, n, d), elements in [0, 1]).

    Returns the best-validation checkpoint and the per-epoch log. The seeded
    shuffle fixes the train/validation split and every batch order, so a rerun
    with identical inputs reproduces the run exactly.
    """
    if len(images) == 0:
        raise DataError("fit: dataset is empty")
    if len(images) < 2:
        raise DataError("fit: need at least 2 images to split off a validation set")
    expected = (bcfg.n, bcfg.n, bcfg.d)
    for i, img in enumerate(images):
        if img.shape != expected:
            raise ShapeError(f"fit: image {i} has shape {img.shape}, expected {expected}")

    params = init_params(bcfg)
    optimizer = Adam(params)
    loss_fn = LOSS_FUNCTIONS[cfg.loss]
    recurrent = [t for name, t in params.items() if name.endswith("recurrent-kernels")]

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(images))
    n_val = min(max(1, round(cfg.val_fraction * len(images))), len(images) - 1)
    val_set = [images[i] for i in order[:n_val]]
    train_set = [images[i] for i in order[n_val:]]

    def validation_loss() -> float:
        total = 0.0
        with no_grad():
            for img in val_set:
                x = Tensor(img)
                total += float(loss_fn(x, forward(x, params, bcfg)).data)
        return total / len(val_set)

    records: list[EpochRecord] = []
    history: list[float] = []
    lr = cfg.lr0
    best_val = math.inf
    best_values = params.value_arrays()
    best_epoch = 0

    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        epoch_order = rng.permutation(len(train_set))
        running = 0.0
        seen = 0
        for batch in _chunks(epoch_order, cfg.batch_size):
            losses = []
            for i in batch:
                x = Tensor(train_set[i])
                losses.append(loss_fn(x, forward(x, params, bcfg)))
            batch_loss = scale(add_n(losses), 1.0 / len(batch))
            value = float(batch_loss.data)
            if not math.isfinite(value):
                raise NumericError(f"non-finite training loss in epoch {epoch}")
            objective = batch_loss
            if cfg.l2 > 0:
                objective = add(batch_loss, l2_penalty(recurrent, cfg.l2))
            objective.backward()
            optimizer.step(lr)
            running += value * len(batch)
            seen += len(batch)
        train_loss = running / seen
        val_loss = validation_loss()
        if not math.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss in epoch {epoch}")
        records.append(EpochRecord(epoch, train_loss, val_loss, lr, time.perf_counter() - started))
        history.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_values = params.value_arrays()
            best_epoch = epoch
        lr = plateau_decay(history, lr, cfg)
        if early_stop(history, cfg):
            break

    best_params = init_params(bcfg)
    best_params.load_values(best_values)
    metadata = {
        "epochs_run": str(len(records)),
        "best_epoch": str(best_epoch),
        "best_val_loss": repr(best_val) if records else "nan",
        "loss": cfg.loss,
        "n_train": str(len(train_set)),
        "n_val": str(n_val),
    }
    return Checkpoint(config=bcfg, params=best_params, metadata=metadata), records


EPOCH_LOG_HEADER = "epoch,train_loss,val_loss,lr,seconds"


def write_epoch_log(path: str | Path, records: Sequence[EpochRecord]) -> None:
    """Write the per-epoch CSV log (`epoch,train_loss,val_loss,lr,seconds`)."""
    lines = [EPOCH_LOG_HEADER]
    for r in records:
        lines.append(f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.lr!r},{r.seconds!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

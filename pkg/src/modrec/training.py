"""Standard and adversarial training loops.

Both loops share the same skeleton: keyed shuffling per epoch, Adam updates,
validation after every epoch, early stopping on patience, and restoration of
the best parameters before returning. The adversarial loop replaces each
clean batch with attacked copies built against the current model (eval-mode
forward for the attack, train-mode forward for the update).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import attacks, dsp
from .autodiff import Tape, adam_init, adam_step, ops, zero_grad
from .dataset import LabeledDataset
from .errors import ConfigError, DataError
from .models import Model


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 1e-3
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    val_robust_accuracy: list[float] | None = None
    best_epoch: int = -1
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_accuracy": self.val_accuracy,
            "val_robust_accuracy": self.val_robust_accuracy,
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
        }


def shuffled_batches(n: int, batch_size: int, seed: int, epoch: int):
    """Deterministic epoch shuffle keyed by (seed, epoch); yields index arrays."""
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def _batch_accuracy(model: Model, x: np.ndarray, y: np.ndarray,
                    batch_size: int = 256) -> float:
    hits = 0
    for start in range(0, len(y), batch_size):
        sl = slice(start, start + batch_size)
        hits += int(np.sum(model.classify(x[sl]) == y[sl]))
    return hits / len(y)


def _sgd_epoch(model: Model, make_batch, order, opt_state, lr, step0):
    """One pass over pre-shuffled batches; returns (mean loss, state, steps)."""
    total_loss = 0.0
    total_n = 0
    step = step0
    for idx in order:
        x, y = make_batch(idx, step)
        zero_grad(model.params)
        with Tape() as tape:
            logits = model.forward(x, train=True, step=step)
            loss = ops.softmax_cross_entropy(logits, y, reduction="mean")
        tape.backward(loss)
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in model.params]
        new_data, opt_state = adam_step([p.data for p in model.params],
                                        grads, opt_state, lr=lr)
        for p, d in zip(model.params, new_data):
            p.data = d
        zero_grad(model.params)
        total_loss += float(loss.data) * len(y)
        total_n += len(y)
        step += 1
    return total_loss / max(total_n, 1), opt_state, step


def _run_loop(model: Model, ds: LabeledDataset, config: TrainConfig,
              make_batch, val_metric, robust_tracking: bool) -> TrainHistory:
    train_idx = ds.indices("train")
    val_idx = ds.indices("val")
    if len(train_idx) == 0:
        raise DataError("training split is empty")
    if len(val_idx) == 0:
        raise DataError("validation split is empty; cannot select a model")

    history = TrainHistory(
        val_robust_accuracy=[] if robust_tracking else None)
    opt_state = adam_init([p.data for p in model.params])
    best_metric = -np.inf
    best_params = model.get_param_data()
    since_best = 0
    step = 0
    for epoch in range(config.epochs):
        order = [train_idx[b] for b in shuffled_batches(
            len(train_idx), config.batch_size, config.seed, epoch)]
        mean_loss, opt_state, step = _sgd_epoch(
            model, make_batch, order, opt_state, config.lr, step)
        history.train_loss.append(mean_loss)

        metric, val_acc, val_rob = val_metric(model, val_idx)
        history.val_accuracy.append(val_acc)
        if robust_tracking:
            history.val_robust_accuracy.append(val_rob)

        if metric > best_metric:
            best_metric = metric
            best_params = model.get_param_data()
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                history.stopped_early = True
                break
    model.set_param_data(best_params)
    return history


def train_standard(model: Model, ds: LabeledDataset,
                   config: TrainConfig = TrainConfig()) -> TrainHistory:
    """Minimize cross-entropy on clean signals; select by val accuracy."""

    def make_batch(idx, step):
        return ds.to_batch(idx)

    def val_metric(m, val_idx):
        x, y = ds.to_batch(val_idx)
        acc = _batch_accuracy(m, x, y)
        return acc, acc, None

    return _run_loop(model, ds, config, make_batch, val_metric,
                     robust_tracking=False)


def train_adversarial(model: Model, ds: LabeledDataset,
                      config: TrainConfig = TrainConfig(),
                      spr_db: float = 20.0,
                      attack_config: attacks.AttackConfig = attacks.TRAIN_PGA
                      ) -> TrainHistory:
    """Train on freshly attacked batches; select by val robust accuracy.

    Every optimizer step sees a purely adversarial batch: the inner attack
    runs against the current parameters with dropout off, then the update
    treats the perturbed signals as ordinary training data.
    """
    eps_all = np.array(
        [dsp.spr_to_epsilon(s, spr_db) for s in ds.signals], dtype=np.float32)

    def make_batch(idx, step):
        x, y = ds.to_batch(idx)
        x_adv, _ = attacks.pga(model, x, y, eps_all[idx], attack_config)
        return x_adv, y

    def val_metric(m, val_idx):
        x, y = ds.to_batch(val_idx)
        acc = _batch_accuracy(m, x, y)
        x_adv, _ = attacks.pga(m, x, y, eps_all[val_idx], attack_config)
        rob = _batch_accuracy(m, x_adv, y)
        return rob, acc, rob

    return _run_loop(model, ds, config, make_batch, val_metric,
                     robust_tracking=True)

"""Gradient attacks on IQ classifiers under an l-infinity SPR budget.

The budget is expressed as a signal-to-perturbation ratio in dB and converted
per signal to an amplitude bound epsilon over every real sample component.
All attacks return the perturbed batch together with per-signal
:class:`Perturbation` records; the invariants live on those records:
``|delta| <= epsilon`` everywhere, and the measured SPR of ``delta`` against
the clean signal never falls below the nominal budget (up to float32
rounding of epsilon, well inside 1e-6 dB).

Model forwards run in eval mode: attack gradients never see dropout noise.
Losses use sum reduction so each signal's gradient is independent of its
batchmates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsp
from .errors import ConfigError, LabelError, ShapeError
from .models import Model


@dataclass(frozen=True)
class AttackConfig:
    """Iterated-attack schedule: step count, step size, direction rule."""

    n_iters: int = 1
    step_frac: float = 1.0
    use_sign: bool = True
    random_start: bool = False

    def __post_init__(self):
        if self.n_iters < 1:
            raise ConfigError(f"n_iters must be >= 1, got {self.n_iters}")
        if not self.step_frac > 0:
            raise ConfigError(f"step_frac must be > 0, got {self.step_frac}")


# Schedules used by adversarial training (short) and evaluation (thorough).
TRAIN_PGA = AttackConfig(n_iters=7, step_frac=0.36)
EVAL_PGA = AttackConfig(n_iters=20, step_frac=0.125)


@dataclass
class Perturbation:
    """One attacked signal: the additive delta, its bound, the loss reached."""

    delta: np.ndarray
    epsilon: float
    achieved_loss: float


def per_signal_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Stable per-row cross-entropy of raw logits against integer labels."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    return lse - z[np.arange(z.shape[0]), y]


def _as_eps_column(epsilon, batch: int, dtype) -> np.ndarray:
    eps = np.asarray(epsilon, dtype=dtype)
    if eps.ndim == 0:
        eps = np.full(batch, eps, dtype=dtype)
    if eps.shape != (batch,):
        raise ShapeError(f"epsilon must be scalar or shape ({batch},)")
    if np.any(eps <= 0):
        raise ConfigError("epsilon must be positive")
    return eps.reshape(batch, 1, 1)


def _check_labels(labels, batch: int, n_classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.shape != (batch,) or not np.issubdtype(y.dtype, np.integer):
        raise LabelError(f"labels must be {batch} integers")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise LabelError(f"labels must lie in [0, {n_classes})")
    return y


def _records(delta, eps_col, losses) -> list[Perturbation]:
    return [Perturbation(delta[k].copy(), float(eps_col[k, 0, 0]),
                         float(losses[k]))
            for k in range(delta.shape[0])]


def fgsm(model: Model, x: np.ndarray, labels,
         epsilon) -> tuple[np.ndarray, list[Perturbation]]:
    """One-shot sign attack: delta = epsilon * sign(d loss / d x).

    Components with exactly zero gradient stay unperturbed.
    """
    x = np.asarray(x)
    eps = _as_eps_column(epsilon, x.shape[0], x.dtype)
    y = _check_labels(labels, x.shape[0], model.n_classes)
    _, grad, _ = model.loss_and_input_grad(x, y, reduction="sum")
    delta = eps * np.sign(grad)
    x_adv = x + delta
    losses = per_signal_cross_entropy(model.forward(x_adv).data, y)
    return x_adv, _records(delta, eps, losses)


def targeted_fgsm(model: Model, x: np.ndarray, target_labels,
                  epsilon) -> tuple[np.ndarray, list[Perturbation]]:
    """Descend the loss toward a chosen class: delta = -eps * sign(grad).

    ``achieved_loss`` records the cross-entropy against the target label,
    so lower means a more successful targeted attack.
    """
    x = np.asarray(x)
    eps = _as_eps_column(epsilon, x.shape[0], x.dtype)
    y = _check_labels(target_labels, x.shape[0], model.n_classes)
    _, grad, _ = model.loss_and_input_grad(x, y, reduction="sum")
    delta = -eps * np.sign(grad)
    x_adv = x + delta
    losses = per_signal_cross_entropy(model.forward(x_adv).data, y)
    return x_adv, _records(delta, eps, losses)


def pga(model: Model, x: np.ndarray, labels, epsilon,
        config: AttackConfig = EVAL_PGA,
        rng: np.random.Generator | None = None
        ) -> tuple[np.ndarray, list[Perturbation]]:
    """Projected gradient ascent on the loss inside the l-inf epsilon ball.

    Each iteration steps by step_frac * epsilon along the gradient sign (or
    the raw gradient when ``use_sign`` is off) and clamps back to the ball.
    Returns, per signal, the iterate with the highest loss among the
    n_iters visited candidates; the starting point itself is not a
    candidate. With ``n_iters=1, step_frac=1.0`` this reproduces ``fgsm``
    exactly.
    """
    x = np.asarray(x)
    batch = x.shape[0]
    eps = _as_eps_column(epsilon, batch, x.dtype)
    y = _check_labels(labels, batch, model.n_classes)
    if config.random_start:
        if rng is None:
            raise ConfigError("random_start requires an rng")
        delta = (rng.uniform(-1.0, 1.0, size=x.shape) * eps).astype(x.dtype)
    else:
        delta = np.zeros_like(x)

    step = (config.step_frac * eps).astype(x.dtype)
    best_loss = np.full(batch, -np.inf)
    best_delta = np.zeros_like(x)

    def consider(cand_delta, losses):
        better = losses > best_loss
        best_loss[better] = losses[better]
        best_delta[better] = cand_delta[better]

    # each gradient pass also yields logits at the previous iterate, so the
    # candidates delta_1..delta_{K-1} get scored for free; the last one needs
    # a single extra forward
    for k in range(config.n_iters):
        _, grad, logits = model.loss_and_input_grad(x + delta, y,
                                                    reduction="sum")
        if k > 0:
            consider(delta, per_signal_cross_entropy(logits, y))
        direction = np.sign(grad) if config.use_sign else grad
        delta = np.clip(delta + step * direction, -eps, eps).astype(x.dtype)
    consider(delta, per_signal_cross_entropy(model.forward(x + delta).data, y))

    x_adv = x + best_delta
    return x_adv, _records(best_delta, eps, best_loss)


def attack_batch(model: Model, signals, labels, spr_db: float,
                 kind: str = "fgsm", config: AttackConfig | None = None,
                 targets=None, rng: np.random.Generator | None = None
                 ) -> tuple[np.ndarray, list[Perturbation]]:
    """Attack a list of signals with per-signal epsilon from one SPR budget.

    ``kind`` is 'fgsm', 'targeted-fgsm' (requires ``targets``), or 'pga'
    (uses ``config``, default EVAL_PGA). Epsilon for each signal comes from
    its own measured power, so the SPR budget holds signal by signal.
    """
    x = np.stack([s.to_array(np.float32) for s in signals])
    eps = np.array([dsp.spr_to_epsilon(s, spr_db) for s in signals],
                   dtype=np.float32)
    if kind == "fgsm":
        return fgsm(model, x, labels, eps)
    if kind == "targeted-fgsm":
        if targets is None:
            raise ConfigError("targeted-fgsm requires target labels")
        return targeted_fgsm(model, x, targets, eps)
    if kind == "pga":
        return pga(model, x, labels, eps, config or EVAL_PGA, rng=rng)
    raise ConfigError(f"unknown attack kind {kind!r}")

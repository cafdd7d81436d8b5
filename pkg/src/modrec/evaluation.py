"""Attack evaluation under the robustness and security frameworks.

Robustness framework: the perturbed signal goes straight into the
classifier, as if the attacker sat between receiver and model.

Security framework: the attacker transmits signal + perturbation over the
air, so the classifier sees AWGN applied on top of the perturbed signal.
Noise power is referenced to the clean signal's power; the perturbation
does not buy the attacker a cleaner channel.

Reports carry both fooling-rate definitions side by side: the flip rate
among clean-correct signals, and plain adversarial error 1 - accuracy.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import attacks, dsp
from .errors import ConfigError, ShapeError
from .models import Model


@dataclass
class EvalReport:
    framework: str
    attack_kind: str
    spr_db: float
    channel_snr_db: float | None
    n_signals: int
    clean_accuracy: float
    adv_accuracy: float
    fooling_rate: float
    misclassification_rate: float
    class_names: tuple[str, ...]
    confusion_clean: np.ndarray
    confusion_adv: np.ndarray
    empty_classes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        norm_clean, _ = normalize_confusion(self.confusion_clean)
        norm_adv, _ = normalize_confusion(self.confusion_adv)
        return {
            "framework": self.framework,
            "attack_kind": self.attack_kind,
            "spr_db": self.spr_db,
            "channel_snr_db": self.channel_snr_db,
            "n_signals": self.n_signals,
            "clean_accuracy": self.clean_accuracy,
            "adv_accuracy": self.adv_accuracy,
            "fooling_rate": self.fooling_rate,
            "misclassification_rate": self.misclassification_rate,
            "class_names": list(self.class_names),
            "confusion_clean": self.confusion_clean.tolist(),
            "confusion_adv": self.confusion_adv.tolist(),
            "confusion_clean_normalized": norm_clean.tolist(),
            "confusion_adv_normalized": norm_adv.tolist(),
            "empty_classes": self.empty_classes,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    def write_confusion_csv(self, path, which: str = "adv") -> None:
        """Row-normalized confusion matrix as CSV; true class per row."""
        counts = self.confusion_adv if which == "adv" else self.confusion_clean
        norm, empty = normalize_confusion(counts)
        lines = ["true/pred," + ",".join(self.class_names)]
        for k, name in enumerate(self.class_names):
            tag = name + ("(empty)" if k in empty else "")
            lines.append(tag + "," + ",".join(f"{v:.6f}" for v in norm[k]))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def accuracy(model: Model, x: np.ndarray, y: np.ndarray,
             batch_size: int = 256) -> float:
    preds = classify_batched(model, x, batch_size)
    return float(np.mean(preds == y)) if len(y) else 0.0


def classify_batched(model: Model, x: np.ndarray,
                     batch_size: int = 256) -> np.ndarray:
    parts = [model.classify(x[s:s + batch_size])
             for s in range(0, len(x), batch_size)]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def fooling_rate(clean_pred: np.ndarray, adv_pred: np.ndarray,
                 y_true: np.ndarray) -> float:
    """Fraction of clean-correct signals whose prediction changes."""
    correct = clean_pred == y_true
    if not np.any(correct):
        return 0.0
    return float(np.mean(adv_pred[correct] != clean_pred[correct]))


def confusion_matrix(y_true, y_pred, n_classes: int,
                     snr_tags=None, snr_filter: float | None = None
                     ) -> np.ndarray:
    """Count matrix [true, predicted]; optionally keep one SNR tag only."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ShapeError("prediction/label length mismatch")
    if snr_filter is not None:
        if snr_tags is None:
            raise ConfigError("snr_filter given but no snr tags supplied")
        keep = np.asarray([t == snr_filter for t in snr_tags])
        y_true, y_pred = y_true[keep], y_pred[keep]
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return counts


def normalize_confusion(counts: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Row-normalize; rows with zero signals stay zero and are reported."""
    counts = np.asarray(counts)
    sums = counts.sum(axis=1, keepdims=True)
    empty = [int(k) for k in np.flatnonzero(sums[:, 0] == 0)]
    safe = np.where(sums == 0, 1, sums)
    return counts / safe, empty


def _security_noise(x_adv: np.ndarray, clean_power: np.ndarray,
                    channel_snr_db: float, seed: int,
                    global_idx: np.ndarray) -> np.ndarray:
    """AWGN per signal, power set by the clean signal, one stream per index."""
    out = np.empty_like(x_adv)
    for row, gidx in enumerate(global_idx):
        sigma = dsp.noise_sigma(float(clean_power[row]), channel_snr_db)
        rng = np.random.default_rng([seed, int(gidx)])
        out[row] = x_adv[row] + rng.normal(0.0, sigma, x_adv.shape[1:])
    return out.astype(x_adv.dtype, copy=False)


def evaluate(model: Model, signals, labels, spr_db: float,
             attack_kind: str = "pga",
             attack_config: attacks.AttackConfig = attacks.EVAL_PGA,
             framework: str = "robustness",
             channel_snr_db: float | None = None,
             seed: int = 0, batch_size: int = 256, threads: int = 1,
             class_names: tuple[str, ...] | None = None) -> EvalReport:
    """Attack every signal and score the model under one framework.

    Work splits into batches; with ``threads > 1`` batches run on a thread
    pool (results are merged by index, so thread count never changes any
    number in the report).
    """
    if framework not in ("robustness", "security"):
        raise ConfigError(f"unknown framework {framework!r}")
    if framework == "security" and channel_snr_db is None:
        raise ConfigError("security framework needs channel_snr_db")
    y = np.asarray(labels)
    n = len(signals)
    if y.shape != (n,):
        raise ShapeError("labels must match signals")
    if class_names is None:
        class_names = tuple(f"class{k}" for k in range(model.n_classes))

    def job(start: int):
        batch_sigs = signals[start:start + batch_size]
        yb = y[start:start + batch_size]
        x = np.stack([s.to_array(np.float32) for s in batch_sigs])
        x_adv, _ = attacks.attack_batch(model, batch_sigs, yb, spr_db,
                                        kind=attack_kind,
                                        config=attack_config)
        if framework == "security":
            power = np.array([dsp.average_power(s) for s in batch_sigs])
            gidx = np.arange(start, start + len(batch_sigs))
            x_adv = _security_noise(x_adv, power, channel_snr_db, seed, gidx)
        return start, model.classify(x), model.classify(x_adv)

    starts = list(range(0, n, batch_size))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, starts))
    else:
        results = [job(s) for s in starts]
    results.sort(key=lambda r: r[0])
    clean_pred = np.concatenate([r[1] for r in results]) if results else \
        np.zeros(0, dtype=np.int64)
    adv_pred = np.concatenate([r[2] for r in results]) if results else \
        np.zeros(0, dtype=np.int64)

    conf_clean = confusion_matrix(y, clean_pred, model.n_classes)
    conf_adv = confusion_matrix(y, adv_pred, model.n_classes)
    _, empty = normalize_confusion(conf_clean)
    adv_acc = float(np.mean(adv_pred == y)) if n else 0.0
    return EvalReport(
        framework=framework,
        attack_kind=attack_kind,
        spr_db=float(spr_db),
        channel_snr_db=channel_snr_db,
        n_signals=n,
        clean_accuracy=float(np.mean(clean_pred == y)) if n else 0.0,
        adv_accuracy=adv_acc,
        fooling_rate=fooling_rate(clean_pred, adv_pred, y),
        misclassification_rate=1.0 - adv_acc if n else 0.0,
        class_names=class_names,
        confusion_clean=conf_clean,
        confusion_adv=conf_adv,
        empty_classes=[class_names[k] for k in empty],
    )


def eval_robustness(model: Model, signals, labels, spr_db: float,
                    **kwargs) -> EvalReport:
    return evaluate(model, signals, labels, spr_db,
                    framework="robustness", **kwargs)


def eval_security(model: Model, signals, labels, spr_db: float,
                  channel_snr_db: float, **kwargs) -> EvalReport:
    return evaluate(model, signals, labels, spr_db, framework="security",
                    channel_snr_db=channel_snr_db, **kwargs)


def spr_grid(model: Model, signals, labels, spr_dbs,
             attack_kinds=("fgsm", "pga"),
             attack_config: attacks.AttackConfig = attacks.EVAL_PGA,
             framework: str = "robustness",
             channel_snr_db: float | None = None,
             seed: int = 0, batch_size: int = 256, threads: int = 1,
             class_names=None) -> dict:
    """Accuracy grid over attack kinds and SPR budgets, JSON-ready."""
    grid: dict = {}
    clean_acc = None
    for kind in attack_kinds:
        grid[kind] = {}
        for spr in spr_dbs:
            rep = evaluate(model, signals, labels, spr,
                           attack_kind=kind, attack_config=attack_config,
                           framework=framework,
                           channel_snr_db=channel_snr_db, seed=seed,
                           batch_size=batch_size, threads=threads,
                           class_names=class_names)
            clean_acc = rep.clean_accuracy
            grid[kind][f"{spr:g}"] = {
                "adv_accuracy": rep.adv_accuracy,
                "fooling_rate": rep.fooling_rate,
                "misclassification_rate": rep.misclassification_rate,
            }
    return {"clean_accuracy": clean_acc, "framework": framework,
            "channel_snr_db": channel_snr_db, "grid": grid}

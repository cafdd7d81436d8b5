"""Maximum-likelihood baselines and perturbation geometry.

With known noise variance and NRZ pulses, the within-symbol sample mean is a
sufficient statistic, so the exact likelihood of a received signal under a
candidate constellation reduces to a per-symbol mixture over its states.
That gives a Bayes-optimal classifier to compare learned models against, an
optimal targeted perturbation (shift every symbol toward the nearest state
of the target constellation), and a cosine metric telling how closely a
model's gradient attack tracks that oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import attacks, dsp
from .attacks import Perturbation
from .errors import ConfigError, ShapeError, ZeroPerturbation
from .models import Model


@dataclass(frozen=True)
class MlModelPrior:
    """Channel knowledge the ML classifier conditions on."""

    constellations: tuple[dsp.Constellation, ...]
    noise_var: float
    samples_per_symbol: int = dsp.DEFAULT_SAMPLES_PER_SYMBOL

    def __post_init__(self):
        if not self.noise_var > 0:
            raise ConfigError(f"noise_var must be > 0, got {self.noise_var}")
        if not self.constellations:
            raise ConfigError("need at least one candidate constellation")

    @classmethod
    def for_schemes(cls, schemes, snr_db: float,
                    samples_per_symbol: int = dsp.DEFAULT_SAMPLES_PER_SYMBOL,
                    reference_power: float = 1.0) -> "MlModelPrior":
        """Prior for unit-power constellations observed at a known SNR."""
        sigma = dsp.noise_sigma(reference_power, snr_db)
        return cls(tuple(dsp.constellation(s) for s in schemes),
                   noise_var=sigma * sigma,
                   samples_per_symbol=samples_per_symbol)


def symbol_means(signal, samples_per_symbol: int | None = None) -> np.ndarray:
    """Within-symbol sample means as a complex vector."""
    if isinstance(signal, dsp.IqSignal):
        sps = signal.samples_per_symbol
        values = signal.complex_view()
    else:
        if samples_per_symbol is None:
            raise ShapeError("samples_per_symbol required for raw arrays")
        sps = samples_per_symbol
        arr = np.asarray(signal)
        values = arr[0].astype(np.float64) + 1j * arr[1].astype(np.float64)
    if values.size % sps != 0:
        raise ShapeError(
            f"{values.size} samples not divisible by {sps} per symbol")
    return values.reshape(-1, sps).mean(axis=1)


def _log_likelihoods(est: np.ndarray, prior: MlModelPrior) -> np.ndarray:
    """log L_m for each candidate, up to one constant shared by all."""
    var_sym = prior.noise_var / prior.samples_per_symbol
    out = np.empty(len(prior.constellations))
    for m, constel in enumerate(prior.constellations):
        d2 = np.abs(est[:, None] - constel.states[None, :]) ** 2
        a = -d2 / (2.0 * var_sym)
        amax = a.max(axis=1, keepdims=True)
        lse = amax[:, 0] + np.log(np.exp(a - amax).sum(axis=1))
        out[m] = float(lse.sum()) - est.size * math.log(len(constel))
    return out


def ml_classify(signal, prior: MlModelPrior) -> tuple[int, np.ndarray]:
    """Most likely candidate constellation and all log-likelihoods.

    Ties go to the lowest candidate index (argmax convention).
    """
    est = symbol_means(signal, prior.samples_per_symbol)
    logl = _log_likelihoods(est, prior)
    return int(np.argmax(logl)), logl


def ml_classify_batch(signals, prior: MlModelPrior) -> np.ndarray:
    return np.array([ml_classify(s, prior)[0] for s in signals],
                    dtype=np.int64)


def _nearest_states(points: np.ndarray,
                    constel: dsp.Constellation) -> np.ndarray:
    """Closest target state per point; ties broken by lowest state index."""
    if len(constel) == 0:
        raise ConfigError("target constellation is empty")
    d = np.abs(points[:, None] - constel.states[None, :])
    return constel.states[np.argmin(d, axis=1)]


def oracle_targeted_perturbation(signal: dsp.IqSignal,
                                 target: dsp.Constellation,
                                 epsilon: float,
                                 per_symbol_scale: bool = False
                                 ) -> Perturbation:
    """Shift every symbol toward its nearest target state within the budget.

    The unscaled shift v is (nearest target state - symbol estimate),
    held constant across the symbol's samples. One global factor
    min(1, epsilon / max|v components|) preserves the ML shift direction;
    ``per_symbol_scale`` instead clamps each symbol independently, moving
    budget-limited symbols less far but never changing their direction.
    ``achieved_loss`` is NaN: no model is involved.
    """
    if not epsilon > 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    est = symbol_means(signal)
    v = _nearest_states(est, target) - est
    comps = np.concatenate([np.abs(v.real), np.abs(v.imag)])
    peak = comps.max() if comps.size else 0.0
    if per_symbol_scale:
        per_peak = np.maximum(np.abs(v.real), np.abs(v.imag))
        scale = np.where(per_peak > epsilon, epsilon / np.where(
            per_peak == 0, 1.0, per_peak), 1.0)
        v = v * scale
    elif peak > epsilon:
        v = v * (epsilon / peak)
    sps = signal.samples_per_symbol
    shift = np.repeat(v, sps)
    delta = np.stack([shift.real, shift.imag])
    return Perturbation(delta=delta, epsilon=float(epsilon),
                        achieved_loss=float("nan"))


def alignment(delta_a: np.ndarray, delta_b: np.ndarray) -> float:
    """Cosine similarity of two perturbations over their raw I/Q values."""
    a = np.asarray(delta_a, dtype=np.float64).reshape(-1)
    b = np.asarray(delta_b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {delta_a.shape} vs {delta_b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroPerturbation("alignment undefined for a zero perturbation")
    return float(np.dot(a, b) / (na * nb))


@dataclass
class ConstellationPlot:
    """Symbol clouds before/after perturbation plus the target states."""

    original: np.ndarray
    perturbed: np.ndarray
    target_states: np.ndarray
    labels: tuple[str, str, str] = ("original", "perturbed", "target")

    def __post_init__(self):
        if self.original.shape != self.perturbed.shape:
            raise ShapeError("original/perturbed symbol counts differ")


_SVG_AXIS = 1.6
_SVG_SIZE = 480


def _svg_coord(z: complex) -> tuple[float, float]:
    half = _SVG_SIZE / 2.0
    return (half + z.real / _SVG_AXIS * half,
            half - z.imag / _SVG_AXIS * half)


def _svg_scatter(points, radius, color, opacity=1.0) -> list[str]:
    out = []
    for z in points:
        x, y = _svg_coord(complex(z))
        if abs(z.real) > _SVG_AXIS or abs(z.imag) > _SVG_AXIS:
            continue
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{radius}" '
                   f'fill="{color}" fill-opacity="{opacity}"/>')
    return out


def constellation_export(signal: dsp.IqSignal, perturbed,
                         target: dsp.Constellation,
                         csv_path=None, svg_path=None) -> ConstellationPlot:
    """Build the symbol-cloud plot and optionally write CSV/SVG files.

    CSV columns: symbol_idx, orig_i, orig_q, pert_i, pert_q. The SVG is
    self-contained with fixed axes [-1.6, 1.6] on both I and Q.
    """
    if isinstance(perturbed, dsp.IqSignal):
        pert_est = symbol_means(perturbed)
    else:
        pert_est = symbol_means(perturbed, signal.samples_per_symbol)
    orig_est = symbol_means(signal)
    plot = ConstellationPlot(orig_est, pert_est, target.states.copy())

    if csv_path is not None:
        lines = ["symbol_idx,orig_i,orig_q,pert_i,pert_q"]
        for k, (o, p) in enumerate(zip(orig_est, pert_est)):
            lines.append(f"{k},{o.real:.9g},{o.imag:.9g},"
                         f"{p.real:.9g},{p.imag:.9g}")
        with open(csv_path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    if svg_path is not None:
        half = _SVG_SIZE / 2.0
        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_SIZE}" '
            f'height="{_SVG_SIZE}" viewBox="0 0 {_SVG_SIZE} {_SVG_SIZE}">',
            f'<rect width="{_SVG_SIZE}" height="{_SVG_SIZE}" fill="white"/>',
            f'<line x1="0" y1="{half}" x2="{_SVG_SIZE}" y2="{half}" '
            'stroke="#cccccc"/>',
            f'<line x1="{half}" y1="0" x2="{half}" y2="{_SVG_SIZE}" '
            'stroke="#cccccc"/>',
        ]
        parts += _svg_scatter(orig_est, 3.0, "#e0b000", 0.8)
        parts += _svg_scatter(pert_est, 3.0, "#2060d0", 0.8)
        parts += _svg_scatter(target.states, 5.0, "#d03030")
        parts.append("</svg>")
        with open(svg_path, "w") as fh:
            fh.write("\n".join(parts) + "\n")
    return plot


def _mean_target_distance(points: np.ndarray,
                          target: dsp.Constellation) -> float:
    return float(np.mean(np.abs(points - _nearest_states(points, target))))


def alignment_study(standard_model: Model, robust_model: Model,
                    signals, labels, class_names, target_class: int,
                    spr_db: float = 20.0, batch_size: int = 256) -> dict:
    """Compare each model's targeted-FGSM direction against the ML oracle.

    Signals already belonging to the target class are skipped. For every
    remaining signal: craft a targeted FGSM perturbation per model at the
    given SPR, build the oracle perturbation at the same epsilon, and record
    the cosine alignment plus how far the perturbed symbol clouds moved
    toward the target states. Secondary metric: alignment of the per-symbol
    mean shifts instead of the raw sample streams.
    """
    target = dsp.constellation(class_names[target_class])
    y = np.asarray(labels)
    keep = [k for k in range(len(signals)) if y[k] != target_class]
    if not keep:
        raise ConfigError("no signals outside the target class")

    per_model: dict[str, dict] = {}
    for name, model in (("standard", standard_model), ("robust", robust_model)):
        cos_all, cos_sym_all, dist_orig, dist_pert, cls = [], [], [], [], []
        for start in range(0, len(keep), batch_size):
            idx = keep[start:start + batch_size]
            batch = [signals[k] for k in idx]
            tgt = np.full(len(idx), target_class, dtype=np.int64)
            _, perts = attacks.attack_batch(
                model, batch, y[idx], spr_db, kind="targeted-fgsm",
                targets=tgt)
            for sig, sig_cls, pert in zip(batch, y[idx], perts):
                if not np.any(pert.delta):
                    continue
                oracle = oracle_targeted_perturbation(sig, target,
                                                      pert.epsilon)
                cos_all.append(alignment(pert.delta, oracle.delta))
                cls.append(int(sig_cls))
                orig_est = symbol_means(sig)
                pert_est = symbol_means(sig.to_array(np.float64) + pert.delta,
                                        sig.samples_per_symbol)
                model_shift = pert_est - orig_est
                oracle_shift = symbol_means(oracle.delta,
                                            sig.samples_per_symbol)
                shifts = np.concatenate(
                    [model_shift.real, model_shift.imag])
                oshifts = np.concatenate(
                    [oracle_shift.real, oracle_shift.imag])
                if np.linalg.norm(shifts) > 0 and np.linalg.norm(oshifts) > 0:
                    cos_sym_all.append(alignment(shifts, oshifts))
                dist_orig.append(_mean_target_distance(orig_est, target))
                dist_pert.append(_mean_target_distance(pert_est, target))

        cls = np.array(cls)
        cos_arr = np.array(cos_all)
        per_class = {}
        for c in sorted(set(cls.tolist())):
            per_class[class_names[c]] = float(cos_arr[cls == c].mean())
        per_model[name] = {
            "mean_alignment": float(cos_arr.mean()),
            "mean_symbol_alignment": float(np.mean(cos_sym_all)),
            "per_class_alignment": per_class,
            "mean_distance_original": float(np.mean(dist_orig)),
            "mean_distance_perturbed": float(np.mean(dist_pert)),
            "mean_shift_toward_target": float(
                np.mean(dist_orig) - np.mean(dist_pert)),
        }
    return {
        "target_class": class_names[target_class],
        "spr_db": float(spr_db),
        "n_signals": len(keep),
        "models": per_model,
    }

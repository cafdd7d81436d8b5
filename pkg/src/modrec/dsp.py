"""Constellations, NRZ modulation, AWGN channels, and power/SNR/SPR arithmetic.

All constellations are normalized to unit average symbol power, so a long
random symbol stream has average power ~1.0 regardless of scheme. Signals are
kept as paired real I/Q sample arrays; the complex view is derived on demand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptySignal,
    InvalidSymbol,
    ShapeError,
    UnsupportedScheme,
    ZeroPowerPerturbation,
    ZeroPowerSignal,
)

DEFAULT_SAMPLES_PER_SYMBOL = 8

# APSK ring layouts: (points, radius, phase offset) per ring, inner to outer.
# Radii are conventional satellite-broadcast ring ratios; exact values are an
# artifact constant, recorded in dataset metadata via the scheme name.
_APSK_RINGS = {
    "16apsk": ((4, 1.0, math.pi / 4), (12, 2.57, math.pi / 12)),
    "32apsk": ((4, 1.0, math.pi / 4), (12, 2.53, math.pi / 12), (16, 4.30, 0.0)),
    "64apsk": (
        (4, 1.0, math.pi / 4),
        (12, 2.73, math.pi / 12),
        (20, 4.52, math.pi / 20),
        (28, 6.31, math.pi / 28),
    ),
}


@dataclass(frozen=True)
class Constellation:
    """A named set of unit-average-power complex symbol states."""

    scheme_name: str
    states: np.ndarray  # complex128, deterministic order
    bits_per_symbol: int

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.complex128)
        object.__setattr__(self, "states", states)
        if states.ndim != 1 or states.size == 0:
            raise ShapeError("constellation states must be a nonempty 1-d array")

    def __len__(self) -> int:
        return self.states.size


@dataclass
class IqSignal:
    """Baseband signal as paired in-phase/quadrature real sample sequences."""

    i: np.ndarray
    q: np.ndarray
    samples_per_symbol: int = DEFAULT_SAMPLES_PER_SYMBOL
    symbol_indices: np.ndarray | None = None
    snr_db: float | None = None

    def __post_init__(self):
        self.i = np.asarray(self.i)
        self.q = np.asarray(self.q)
        if self.i.shape != self.q.shape or self.i.ndim != 1:
            raise ShapeError(
                f"i/q must be equal-length 1-d arrays, got {self.i.shape} vs {self.q.shape}"
            )
        if not (np.all(np.isfinite(self.i)) and np.all(np.isfinite(self.q))):
            raise ShapeError("signal samples must be finite")
        if self.symbol_indices is not None:
            self.symbol_indices = np.asarray(self.symbol_indices, dtype=np.int64)
            if len(self.i) != len(self.symbol_indices) * self.samples_per_symbol:
                raise ShapeError(
                    "sample count must equal symbol count times samples_per_symbol"
                )

    def __len__(self) -> int:
        return len(self.i)

    def to_array(self, dtype=None) -> np.ndarray:
        """Return the [2, N] real representation (row 0 = I, row 1 = Q)."""
        out = np.stack([self.i, self.q])
        return out if dtype is None else out.astype(dtype)

    @classmethod
    def from_array(cls, arr: np.ndarray, samples_per_symbol: int = DEFAULT_SAMPLES_PER_SYMBOL,
                   symbol_indices=None, snr_db=None) -> "IqSignal":
        arr = np.asarray(arr)
        if arr.ndim != 2 or arr.shape[0] != 2:
            raise ShapeError(f"expected [2, N] array, got shape {arr.shape}")
        return cls(arr[0], arr[1], samples_per_symbol, symbol_indices, snr_db)

    def complex_view(self) -> np.ndarray:
        return self.i.astype(np.float64) + 1j * self.q.astype(np.float64)


@dataclass(frozen=True)
class Channel:
    """Channel descriptor: AWGN at a fixed SNR, with its own noise seed."""

    kind: str = "awgn"
    snr_db: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.kind != "awgn":
            raise UnsupportedScheme(f"unsupported channel kind: {self.kind!r}")
        if not math.isfinite(self.snr_db):
            raise ShapeError("channel snr_db must be finite")


def _normalize(states: np.ndarray) -> np.ndarray:
    return states / math.sqrt(float(np.mean(np.abs(states) ** 2)))


def _psk_states(order: int, phase: float = 0.0) -> np.ndarray:
    k = np.arange(order)
    return np.exp(1j * (2 * np.pi * k / order + phase))


def _ask_states(order: int) -> np.ndarray:
    levels = np.arange(-(order - 1), order, 2, dtype=np.float64)
    return _normalize(levels.astype(np.complex128))


def _square_qam_states(order: int) -> np.ndarray:
    side = int(round(math.sqrt(order)))
    levels = np.arange(-(side - 1), side, 2, dtype=np.float64)
    grid = [complex(a, b) for a in levels for b in levels]
    return _normalize(np.array(grid))


def _cross_qam_states(order: int) -> np.ndarray:
    # 32: 6x6 grid minus single corner points; 128: 12x12 minus 2x2 corner blocks.
    side, trim = {32: (6, 1), 128: (12, 2)}[order]
    levels = np.arange(-(side - 1), side, 2, dtype=np.float64)
    cut = levels[-trim] - 1e-9
    grid = [
        complex(a, b)
        for a in levels
        for b in levels
        if not (abs(a) > cut and abs(b) > cut)
    ]
    assert len(grid) == order
    return _normalize(np.array(grid))


def _apsk_states(scheme: str) -> np.ndarray:
    pts = []
    for count, radius, phase in _APSK_RINGS[scheme]:
        k = np.arange(count)
        pts.append(radius * np.exp(1j * (2 * np.pi * k / count + phase)))
    return _normalize(np.concatenate(pts))


_BUILDERS = {
    "ook": lambda: np.array([0.0, math.sqrt(2.0)], dtype=np.complex128),
    "4ask": lambda: _ask_states(4),
    "8ask": lambda: _ask_states(8),
    "bpsk": lambda: np.array([-1.0, 1.0], dtype=np.complex128),
    "qpsk": lambda: _psk_states(4, phase=math.pi / 4),
    "8psk": lambda: _psk_states(8),
    "16psk": lambda: _psk_states(16),
    "32psk": lambda: _psk_states(32),
    "16apsk": lambda: _apsk_states("16apsk"),
    "32apsk": lambda: _apsk_states("32apsk"),
    "64apsk": lambda: _apsk_states("64apsk"),
    "16qam": lambda: _square_qam_states(16),
    "32qam": lambda: _cross_qam_states(32),
    "64qam": lambda: _square_qam_states(64),
    "128qam": lambda: _cross_qam_states(128),
    "256qam": lambda: _square_qam_states(256),
}

SUPPORTED_SCHEMES = tuple(sorted(_BUILDERS))

# Default 16-scheme class set for full-scale dataset generation.
DEFAULT_SCHEME_SET = (
    "ook", "4ask", "8ask", "bpsk", "qpsk", "8psk", "16psk", "32psk",
    "16apsk", "32apsk", "16qam", "32qam", "64qam", "128qam", "256qam", "64apsk",
)


def constellation(scheme: str) -> Constellation:
    """Build the normalized constellation for a scheme identifier.

    State ordering is deterministic (construction order), and the mean of
    |s|^2 over states is 1.0 to within 1e-12.
    """
    key = scheme.lower()
    if key not in _BUILDERS:
        raise UnsupportedScheme(
            f"unknown scheme {scheme!r}; supported: {', '.join(SUPPORTED_SCHEMES)}"
        )
    states = _BUILDERS[key]()
    return Constellation(key, states, int(round(math.log2(states.size))))


def modulate(constel: Constellation, symbols, samples_per_symbol: int = DEFAULT_SAMPLES_PER_SYMBOL) -> IqSignal:
    """NRZ-modulate a symbol index sequence: each state held for sps samples."""
    symbols = np.asarray(symbols, dtype=np.int64)
    if samples_per_symbol < 1:
        raise ShapeError("samples_per_symbol must be >= 1")
    if symbols.size and (symbols.min() < 0 or symbols.max() >= len(constel)):
        bad = symbols[(symbols < 0) | (symbols >= len(constel))][0]
        raise InvalidSymbol(
            f"symbol index {bad} out of range for {constel.scheme_name} "
            f"({len(constel)} states)"
        )
    values = np.repeat(constel.states[symbols], samples_per_symbol)
    return IqSignal(
        values.real.copy(), values.imag.copy(),
        samples_per_symbol=samples_per_symbol, symbol_indices=symbols,
    )


def average_power(signal: IqSignal) -> float:
    """Mean of i^2 + q^2 per complex sample."""
    n = len(signal)
    if n == 0:
        raise EmptySignal("average power of an empty signal is undefined")
    i = signal.i.astype(np.float64)
    q = signal.q.astype(np.float64)
    return float(np.mean(i * i + q * q))


def noise_sigma(reference_power: float, snr_db: float) -> float:
    """Per-component AWGN standard deviation for a target SNR.

    Noise is circularly symmetric, so each of I and Q carries half the noise
    power: sigma^2 = P / (2 * 10^(snr_db/10)).
    """
    if reference_power <= 0.0:
        raise ZeroPowerSignal("cannot scale noise to a zero-power signal")
    return math.sqrt(reference_power / (2.0 * 10.0 ** (snr_db / 10.0)))


def apply_awgn(signal: IqSignal, snr_db: float, rng: np.random.Generator, *,
               reference_power: float | None = None) -> IqSignal:
    """Add circularly symmetric Gaussian noise at the given SNR.

    Per-component variance is P / (2 * 10^(snr_db/10)) where P is the signal's
    average power, or `reference_power` when given (used when the noise level
    must be referenced to a different signal, e.g. the clean one).
    """
    power = average_power(signal) if reference_power is None else float(reference_power)
    sigma = noise_sigma(power, snr_db)
    noise = rng.normal(0.0, sigma, size=(2, len(signal)))
    return IqSignal(
        signal.i + noise[0].astype(signal.i.dtype),
        signal.q + noise[1].astype(signal.q.dtype),
        samples_per_symbol=signal.samples_per_symbol,
        symbol_indices=signal.symbol_indices,
        snr_db=snr_db,
    )


def spr_to_epsilon(signal: IqSignal, spr_db: float) -> float:
    """l-inf radius for a perturbation at the given signal-to-perturbation ratio.

    epsilon = sqrt(P_signal / 10^(spr_db/10)). The bound applies to every real
    component (I and Q jointly) of the perturbation, so a perturbation
    saturating the bound everywhere measures exactly spr_db.
    """
    power = average_power(signal)
    if power <= 0.0:
        raise ZeroPowerSignal("SPR budget undefined for a zero-power signal")
    return math.sqrt(power / 10.0 ** (spr_db / 10.0))


def perturbation_power(delta: np.ndarray) -> float:
    """Mean squared value per real component of a [2, N] perturbation."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.size == 0:
        raise EmptySignal("empty perturbation")
    return float(np.mean(delta * delta))


def measured_spr(signal: IqSignal, delta) -> float:
    """Realized signal-to-perturbation ratio in dB.

    Signal power is per complex sample; perturbation power is per real
    component, matching the l-inf budget convention: a perturbation saturated
    at |delta| = epsilon everywhere measures exactly the nominal SPR, and any
    in-budget perturbation measures at or above it.
    """
    d = delta.to_array() if isinstance(delta, IqSignal) else np.asarray(delta)
    if d.ndim != 2 or d.shape[0] != 2 or d.shape[1] != len(signal):
        raise ShapeError(
            f"perturbation shape {d.shape} does not match signal length {len(signal)}"
        )
    p_delta = perturbation_power(d)
    if p_delta <= 0.0:
        raise ZeroPowerPerturbation("measured SPR undefined for a zero perturbation")
    return 10.0 * math.log10(average_power(signal) / p_delta)

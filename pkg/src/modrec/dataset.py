"""Labeled IQ dataset generation, stratified splits, and binary persistence.

On-disk layout (little-endian throughout, documented in docs/dataset_format.md):

    bytes 0..31   fixed header: magic "MRDS", u16 version, u16 float width,
                  u32 signal count, u32 samples per signal, u32 class count,
                  12 reserved zero bytes
    sample block  n_signals * 2 * samples_per_signal float32 values
                  (per signal: the full I row, then the full Q row)
    metadata      UTF-8 JSON record to end of file: class names, generation
                  spec, labels, split tags, SNR tags, symbol indices
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import dsp
from .errors import (
    DataError,
    FormatError,
    InvalidSplit,
    ShapeError,
    UnsupportedScheme,
    VersionError,
)

MAGIC = b"MRDS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHIII12x")
assert _HEADER.size == 32

TRAIN, VAL, TEST = "train", "val", "test"


@dataclass(frozen=True)
class DatasetSpec:
    """Generation recipe: class list, per-class count, signal geometry, channel."""

    schemes: tuple[str, ...]
    signals_per_class: int = 500
    samples_per_signal: int = 256
    samples_per_symbol: int = 8
    snr_db: float = 20.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "schemes", tuple(s.lower() for s in self.schemes))
        if self.signals_per_class < 1:
            raise ShapeError("signals_per_class must be >= 1")
        if self.samples_per_signal % self.samples_per_symbol != 0:
            raise ShapeError(
                "samples_per_signal must be divisible by samples_per_symbol"
            )
        for s in self.schemes:
            if s not in dsp.SUPPORTED_SCHEMES:
                raise UnsupportedScheme(f"unknown scheme {s!r}")


# Desk-scale default: 8 classes that keep the confusable low/high-order pairs,
# CPU-trainable in minutes.
CRML_TINY = DatasetSpec(
    schemes=("ook", "bpsk", "qpsk", "8psk", "4ask", "16qam", "64qam", "16apsk"),
    signals_per_class=500,
    samples_per_signal=256,
    samples_per_symbol=8,
    snr_db=20.0,
)

# Full-scale preset: 16 digital schemes, 10000 signals of 1024 samples each.
CRML2018 = DatasetSpec(
    schemes=dsp.DEFAULT_SCHEME_SET,
    signals_per_class=10000,
    samples_per_signal=1024,
    samples_per_symbol=8,
    snr_db=20.0,
)

PRESETS = {"crml-tiny": CRML_TINY, "crml2018": CRML2018}


@dataclass
class LabeledDataset:
    signals: list[dsp.IqSignal]
    labels: np.ndarray
    class_names: tuple[str, ...]
    split_tags: list[str]
    spec: DatasetSpec

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.signals) == len(self.labels) == len(self.split_tags)):
            raise ShapeError("signals, labels, and split tags must align")
        if len(self.labels) and self.labels.max() >= len(self.class_names):
            raise ShapeError("label outside class_names range")

    def __len__(self) -> int:
        return len(self.signals)

    def indices(self, tag: str) -> np.ndarray:
        return np.array([k for k, t in enumerate(self.split_tags) if t == tag],
                        dtype=np.int64)

    def to_batch(self, indices=None) -> tuple[np.ndarray, np.ndarray]:
        """Stack signals into a float32 [n, 2, N] array plus labels."""
        if indices is None:
            indices = np.arange(len(self))
        x = np.stack([self.signals[k].to_array(np.float32) for k in indices]) \
            if len(indices) else np.zeros((0, 2, self.spec.samples_per_signal), np.float32)
        return x, self.labels[np.asarray(indices, dtype=np.int64)]


def generate(spec: DatasetSpec) -> LabeledDataset:
    """Generate the labeled dataset deterministically from the spec.

    Each signal draws uniform random symbols and AWGN from its own RNG stream
    keyed by (seed, class, index), so output is independent of generation
    order. Samples are stored at float32 (training/disk precision).
    """
    n_symbols = spec.samples_per_signal // spec.samples_per_symbol
    signals: list[dsp.IqSignal] = []
    labels = []
    for class_idx, scheme in enumerate(spec.schemes):
        constel = dsp.constellation(scheme)
        for sig_idx in range(spec.signals_per_class):
            rng = np.random.default_rng([spec.seed, class_idx, sig_idx])
            symbols = rng.integers(0, len(constel), n_symbols)
            clean = dsp.modulate(constel, symbols, spec.samples_per_symbol)
            noisy = dsp.apply_awgn(clean, spec.snr_db, rng)
            signals.append(dsp.IqSignal(
                noisy.i.astype(np.float32), noisy.q.astype(np.float32),
                samples_per_symbol=spec.samples_per_symbol,
                symbol_indices=symbols, snr_db=spec.snr_db,
            ))
            labels.append(class_idx)
    return LabeledDataset(signals, np.array(labels), spec.schemes,
                          [TRAIN] * len(signals), spec)


def split(ds: LabeledDataset, train_frac: float = 0.70,
          val_frac_of_train: float = 0.05, seed: int = 0) -> LabeledDataset:
    """Stratified per-class random split into train/val/test tags.

    Per class: round(n * train_frac) signals go to train+val, of which
    round(. * val_frac_of_train) are validation; the remainder is test.
    """
    if not (0.0 < train_frac < 1.0):
        raise InvalidSplit(f"train_frac must be in (0, 1), got {train_frac}")
    if not (0.0 <= val_frac_of_train < 1.0):
        raise InvalidSplit(
            f"val_frac_of_train must be in [0, 1), got {val_frac_of_train}"
        )
    tags = [TEST] * len(ds)
    for class_idx in range(len(ds.class_names)):
        rng = np.random.default_rng([seed, class_idx])
        members = np.flatnonzero(ds.labels == class_idx)
        perm = members[rng.permutation(len(members))]
        n_fit = round(len(members) * train_frac)
        n_val = round(n_fit * val_frac_of_train)
        for k in perm[: n_fit - n_val]:
            tags[k] = TRAIN
        for k in perm[n_fit - n_val: n_fit]:
            tags[k] = VAL
    return LabeledDataset(ds.signals, ds.labels.copy(), ds.class_names, tags, ds.spec)


def save(ds: LabeledDataset, path) -> None:
    samples = np.empty((len(ds), 2, ds.spec.samples_per_signal), dtype="<f4")
    for k, sig in enumerate(ds.signals):
        samples[k, 0] = sig.i
        samples[k, 1] = sig.q
    meta = {
        "class_names": list(ds.class_names),
        "labels": ds.labels.tolist(),
        "snr_db": [sig.snr_db for sig in ds.signals],
        "spec": asdict(ds.spec),
        "split_tags": list(ds.split_tags),
        "symbol_indices": [
            None if sig.symbol_indices is None else sig.symbol_indices.tolist()
            for sig in ds.signals
        ],
        "samples_per_symbol": ds.spec.samples_per_symbol,
    }
    meta["spec"]["schemes"] = list(meta["spec"]["schemes"])
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, 32, len(ds),
                          ds.spec.samples_per_signal, len(ds.class_names))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(samples.tobytes())
        fh.write(json.dumps(meta, sort_keys=True, separators=(",", ":")).encode())


def load(path) -> LabeledDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError("file shorter than the 32-byte header", offset=len(raw))
    magic, version, width, n_signals, n_samples, n_classes = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version > FORMAT_VERSION:
        raise VersionError(
            f"file format version {version} is newer than supported ({FORMAT_VERSION})"
        )
    if width != 32:
        raise FormatError(f"unsupported float width {width}", offset=6)
    block_end = _HEADER.size + n_signals * 2 * n_samples * 4
    if len(raw) < block_end:
        raise FormatError(
            f"sample block truncated: need {block_end} bytes, file has {len(raw)}",
            offset=len(raw),
        )
    samples = np.frombuffer(raw, dtype="<f4", count=n_signals * 2 * n_samples,
                            offset=_HEADER.size).reshape(n_signals, 2, n_samples)
    try:
        meta = json.loads(raw[block_end:].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"metadata record unreadable: {exc}", offset=block_end)
    if len(meta["class_names"]) != n_classes:
        raise FormatError("metadata class count disagrees with header", offset=block_end)

    spec_fields = dict(meta["spec"])
    spec_fields["schemes"] = tuple(spec_fields["schemes"])
    spec = DatasetSpec(**spec_fields)
    signals = []
    for k in range(n_signals):
        sym = meta["symbol_indices"][k]
        signals.append(dsp.IqSignal(
            samples[k, 0].copy(), samples[k, 1].copy(),
            samples_per_symbol=meta["samples_per_symbol"],
            symbol_indices=None if sym is None else np.array(sym, dtype=np.int64),
            snr_db=meta["snr_db"][k],
        ))
    return LabeledDataset(signals, np.array(meta["labels"]),
                          tuple(meta["class_names"]), list(meta["split_tags"]), spec)


def empirical_snr_db(ds: LabeledDataset, max_signals: int | None = None) -> float:
    """Aggregate measured SNR: total clean power over total noise power.

    Requires ground-truth symbol indices to rebuild the clean waveform.
    """
    total_sig = total_noise = 0.0
    limit = len(ds) if max_signals is None else min(max_signals, len(ds))
    for k in range(limit):
        sig = ds.signals[k]
        if sig.symbol_indices is None:
            raise DataError("empirical SNR needs ground-truth symbol indices")
        constel = dsp.constellation(ds.class_names[ds.labels[k]])
        clean = dsp.modulate(constel, sig.symbol_indices, sig.samples_per_symbol)
        noise_i = sig.i.astype(np.float64) - clean.i
        noise_q = sig.q.astype(np.float64) - clean.q
        total_sig += float(np.sum(clean.i ** 2 + clean.q ** 2))
        total_noise += float(np.sum(noise_i ** 2 + noise_q ** 2))
    if total_noise == 0.0:
        raise DataError("no noise present; SNR unbounded")
    return 10.0 * np.log10(total_sig / total_noise)

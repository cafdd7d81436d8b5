"""Differentiable primitives.

Every function here computes its forward value eagerly and, when an active
tape exists and gradients are required, records a backward closure. Arrays
keep the dtype they came in with, so float64 runs stay float64 end to end
(the gradient checker relies on this).

Layout conventions: feature maps are [batch, channels, height, width];
dense activations are [batch, features].
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import LabelError, ShapeError
from .tensor import Tensor, active_tape


def _as_pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


def _pad_axis(size: int, kernel: int, stride: int, mode) -> tuple[int, int]:
    """Per-axis padding: 'valid', 'same' (output = ceil(size/stride)), or (lo, hi)."""
    if mode == "valid":
        return (0, 0)
    if mode == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + kernel - size, 0)
        return (total // 2, total - total // 2)
    lo, hi = mode
    return (int(lo), int(hi))


def _resolve_padding(padding, kh, kw, sh, sw, h, w):
    if padding in ("valid", "same"):
        return _pad_axis(h, kh, sh, padding), _pad_axis(w, kw, sw, padding)
    mode_h, mode_w = padding
    return _pad_axis(h, kh, sh, mode_h), _pad_axis(w, kw, sw, mode_w)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride=1, padding="valid") -> Tensor:
    """2-d cross-correlation of [B,C,H,W] input with [Cout,C,KH,KW] weights.

    ``padding`` is 'valid', 'same', or a per-axis pair where each entry is
    itself 'valid'/'same'/(lo, hi). Implemented as im2col plus one matmul;
    the backward pass scatters column gradients back per kernel offset.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be 4-d, got {x.data.shape}")
    if w.data.ndim != 4:
        raise ShapeError(f"conv2d weight must be 4-d, got {w.data.shape}")
    batch, cin, h, wd = x.data.shape
    cout, cin_w, kh, kw = w.data.shape
    if cin != cin_w:
        raise ShapeError(f"input has {cin} channels, weight expects {cin_w}")
    if b is not None and b.data.shape != (cout,):
        raise ShapeError(f"bias must have shape ({cout},), got {b.data.shape}")
    sh, sw = _as_pair(stride)
    (ph0, ph1), (pw0, pw1) = _resolve_padding(padding, kh, kw, sh, sw, h, wd)
    if h + ph0 + ph1 < kh or wd + pw0 + pw1 < kw:
        raise ShapeError("kernel larger than padded input")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph0, ph1), (pw0, pw1)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    oh, ow = win.shape[2], win.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    cols = cols.reshape(batch * oh * ow, cin * kh * kw)
    wmat = w.data.reshape(cout, -1)
    out_data = cols @ wmat.T
    if b is not None:
        out_data = out_data + b.data
    out_data = out_data.reshape(batch, oh, ow, cout).transpose(0, 3, 1, 2)

    parents = (x, w) if b is None else (x, w, b)
    out = Tensor(out_data, requires_grad=any(p.requires_grad for p in parents))
    tape = active_tape()
    if tape is not None and out.requires_grad:
        def backward(g):
            g = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
            gmat = g.reshape(batch * oh * ow, cout)
            dw = (gmat.T @ cols).reshape(w.data.shape) if w.requires_grad else None
            db = g.sum(axis=(0, 1, 2)) if b is not None and b.requires_grad else None
            dx = None
            if x.requires_grad:
                dwin = (gmat @ wmat).reshape(batch, oh, ow, cin, kh, kw)
                dwin = dwin.transpose(0, 3, 1, 2, 4, 5)
                dxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i:i + oh * sh:sh, j:j + ow * sw:sw] += \
                            dwin[:, :, :, :, i, j]
                dx = dxp[:, :, ph0:ph0 + h, pw0:pw0 + wd]
            return (dx, dw) if b is None else (dx, dw, db)
        tape.record(out, parents, backward)
    return out


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine layer: [B,F] @ [F,U] + [U]."""
    if x.data.ndim != 2:
        raise ShapeError(f"dense input must be 2-d, got {x.data.shape}")
    if w.data.ndim != 2 or w.data.shape[0] != x.data.shape[1]:
        raise ShapeError(
            f"weight {w.data.shape} incompatible with input {x.data.shape}"
        )
    if b is not None and b.data.shape != (w.data.shape[1],):
        raise ShapeError(f"bias shape {b.data.shape} does not match weight")
    out_data = x.data @ w.data
    if b is not None:
        out_data = out_data + b.data
    parents = (x, w) if b is None else (x, w, b)
    out = Tensor(out_data, requires_grad=any(p.requires_grad for p in parents))
    tape = active_tape()
    if tape is not None and out.requires_grad:
        def backward(g):
            dx = g @ w.data.T if x.requires_grad else None
            dw = x.data.T @ g if w.requires_grad else None
            db = g.sum(axis=0) if b is not None and b.requires_grad else None
            return (dx, dw) if b is None else (dx, dw, db)
        tape.record(out, parents, backward)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), requires_grad=x.requires_grad)
    tape = active_tape()
    if tape is not None and out.requires_grad:
        mask = x.data > 0
        tape.record(out, (x,), lambda g: (g * mask,))
    return out


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    keep = rng.random(x.data.shape) >= p
    scale = 1.0 / (1.0 - p)
    factor = keep.astype(x.data.dtype) * np.asarray(scale, dtype=x.data.dtype)
    out = Tensor(x.data * factor, requires_grad=x.requires_grad)
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, (x,), lambda g: (g * factor,))
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors (residual connections)."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data,
                 requires_grad=a.requires_grad or b.requires_grad)
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, (a, b), lambda g: (g, g))
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape), requires_grad=x.requires_grad)
    tape = active_tape()
    if tape is not None and out.requires_grad:
        orig = x.data.shape
        tape.record(out, (x,), lambda g: (g.reshape(orig),))
    return out


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.data.shape[0], -1))


def softmax_cross_entropy(logits: Tensor, labels, reduction: str = "mean") -> Tensor:
    """Cross-entropy between softmax(logits) [B,C] and integer labels [B].

    Computed via the log-sum-exp identity, so large logits do not overflow.
    ``reduction`` is 'mean' or 'sum'; 'sum' keeps per-signal gradients
    independent of batch size, which the attack code relies on.
    """
    if reduction not in ("mean", "sum"):
        raise ValueError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be 2-d, got {logits.data.shape}")
    y = labels.data if isinstance(labels, Tensor) else np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != logits.data.shape[0]:
        raise LabelError(
            f"labels must be 1-d of length {logits.data.shape[0]}, got {y.shape}"
        )
    if not np.issubdtype(y.dtype, np.integer):
        raise LabelError(f"labels must be integers, got dtype {y.dtype}")
    n, n_classes = logits.data.shape
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise LabelError(
            f"labels must lie in [0, {n_classes}), got range "
            f"[{y.min()}, {y.max()}]"
        )

    # float64 internally: at float32 a confident row's softmax rounds to
    # exactly 1.0 and its gradient to exactly 0, silently blinding
    # gradient-based attacks on precisely the high-margin signals
    z = logits.data.astype(np.float64, copy=False)
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    per_signal = lse - z[np.arange(n), y]
    value = per_signal.mean() if reduction == "mean" else per_signal.sum()
    out = Tensor(np.asarray(value, dtype=logits.data.dtype),
                 requires_grad=logits.requires_grad)
    tape = active_tape()
    if tape is not None and out.requires_grad:
        def backward(g):
            probs = np.exp(z - lse[:, None])
            probs[np.arange(n), y] -= 1.0
            if reduction == "mean":
                probs /= n
            return ((probs * g).astype(logits.data.dtype, copy=False),)
        tape.record(out, (logits,), backward)
    return out

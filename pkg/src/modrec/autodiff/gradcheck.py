"""Finite-difference verification of analytic gradients.

Two entry points: ``gradcheck`` compares one differentiable function against
central differences at sampled coordinates, and ``run_primitive_suite``
fuzzes every primitive over many random shapes/strides/paddings. All checks
run in float64; central differences with a scaled step keep the numerical
oracle good to ~1e-9, far below the tolerances asserted by callers.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tape, Tensor, active_tape


def _project(t: Tensor, r: np.ndarray) -> Tensor:
    """Scalar probe <t, r>; random r exercises non-uniform cotangents."""
    out = Tensor(np.asarray((t.data * r).sum(), dtype=t.data.dtype),
                 requires_grad=t.requires_grad)
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, (t,), lambda g: (g * r,))
    return out


def gradcheck(f, wrt: list[Tensor], n_coords: int = 8,
              rng: np.random.Generator | None = None,
              h_scale: float = 1e-5) -> float:
    """Max relative error between tape gradients of f() and central FD.

    ``f`` must be a zero-argument callable returning a scalar Tensor and be
    deterministic across calls (seed any internal randomness). It is run once
    under a tape for the analytic side, then repeatedly tape-free while
    coordinates of each tensor in ``wrt`` are nudged by +-h.
    """
    rng = rng or np.random.default_rng(0)
    for t in wrt:
        t.data = np.ascontiguousarray(t.data)
        t.zero_grad()
    with Tape() as tape:
        loss = f()
    tape.backward(loss, targets=wrt)

    worst = 0.0
    for t in wrt:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        k = min(n_coords, flat.size)
        coords = rng.choice(flat.size, size=k, replace=False)
        for c in coords:
            orig = flat[c]
            h = h_scale * max(1.0, abs(orig))
            flat[c] = orig + h
            f_plus = f().item()
            flat[c] = orig - h
            f_minus = f().item()
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic.reshape(-1)[c]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, err)
    return worst


def _case_conv2d(rng):
    b, cin, cout = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 5)
    h, w = rng.integers(1, 5), rng.integers(3, 9)
    kh, kw = rng.integers(1, h + 1), rng.integers(1, min(w, 3) + 1)
    stride = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
    padding = ["valid", "same", (("valid", "same"))][rng.integers(0, 3)]
    x = Tensor(rng.standard_normal((b, cin, h, w)), requires_grad=True)
    wt = Tensor(rng.standard_normal((cout, cin, kh, kw)), requires_grad=True)
    bias = Tensor(rng.standard_normal(cout), requires_grad=True)
    out_shape = ops.conv2d(x, wt, bias, stride=stride, padding=padding).shape
    r = rng.standard_normal(out_shape)
    return (lambda: _project(
        ops.conv2d(x, wt, bias, stride=stride, padding=padding), r),
        [x, wt, bias])


def _case_dense(rng):
    b, fin, fout = rng.integers(1, 5), rng.integers(1, 8), rng.integers(1, 6)
    x = Tensor(rng.standard_normal((b, fin)), requires_grad=True)
    w = Tensor(rng.standard_normal((fin, fout)), requires_grad=True)
    bias = Tensor(rng.standard_normal(fout), requires_grad=True)
    r = rng.standard_normal((b, fout))
    return (lambda: _project(ops.dense(x, w, bias), r), [x, w, bias])


def _case_relu(rng):
    shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
    # keep inputs away from the kink at zero, where FD is meaningless
    mag = rng.uniform(0.1, 2.0, size=shape)
    x = Tensor(mag * rng.choice([-1.0, 1.0], size=shape), requires_grad=True)
    r = rng.standard_normal(shape)
    return (lambda: _project(ops.relu(x), r), [x])


def _case_dropout(rng):
    shape = tuple(rng.integers(1, 5, size=2))
    p = float(rng.uniform(0.0, 0.8))
    mask_seed = int(rng.integers(0, 2**32))
    x = Tensor(rng.standard_normal(shape), requires_grad=True)
    r = rng.standard_normal(shape)
    return (lambda: _project(
        ops.dropout(x, p, np.random.default_rng(mask_seed)), r), [x])


def _case_add(rng):
    shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
    a = Tensor(rng.standard_normal(shape), requires_grad=True)
    b = Tensor(rng.standard_normal(shape), requires_grad=True)
    r = rng.standard_normal(shape)
    return (lambda: _project(ops.add(a, b), r), [a, b])


def _case_reshape(rng):
    b, m, n = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 5)
    x = Tensor(rng.standard_normal((b, m, n)), requires_grad=True)
    r = rng.standard_normal(b * m * n)
    return (lambda: _project(ops.flatten(x), r.reshape(b, m * n)), [x])


def _case_softmax_cross_entropy(rng):
    b, c = rng.integers(1, 6), rng.integers(2, 7)
    x = Tensor(3.0 * rng.standard_normal((b, c)), requires_grad=True)
    y = rng.integers(0, c, size=b)
    reduction = ["mean", "sum"][rng.integers(0, 2)]
    return (lambda: ops.softmax_cross_entropy(x, y, reduction=reduction), [x])


PRIMITIVE_CASES = {
    "conv2d": _case_conv2d,
    "dense": _case_dense,
    "relu": _case_relu,
    "dropout": _case_dropout,
    "add": _case_add,
    "reshape": _case_reshape,
    "softmax_cross_entropy": _case_softmax_cross_entropy,
}


def run_primitive_suite(seed: int = 0, cases_per_op: int = 100,
                        n_coords: int = 6) -> dict[str, float]:
    """Fuzz every primitive; returns op name -> worst relative error seen."""
    report = {}
    for op_idx, (name, builder) in enumerate(sorted(PRIMITIVE_CASES.items())):
        worst = 0.0
        for case in range(cases_per_op):
            rng = np.random.default_rng([seed, op_idx, case])
            f, wrt = builder(rng)
            worst = max(worst, gradcheck(f, wrt, n_coords=n_coords, rng=rng))
        report[name] = worst
    return report

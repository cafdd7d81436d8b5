"""Tensor values and the gradient tape.

Operations executed inside a ``with Tape() as tape:`` block record themselves
onto that tape; ``tape.backward(loss)`` then walks the records in reverse and
accumulates gradients into ``.grad`` of every tensor that requires them. A
tape is single-use: one forward, one backward. Outside any tape block the
same operations run forward-only, which is what inference uses.

The active-tape stack is thread-local so forward passes may run concurrently
on worker threads without sharing state.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import TapeEmpty

_LOCAL = threading.local()


def _stack() -> list["Tape"]:
    if not hasattr(_LOCAL, "tapes"):
        _LOCAL.tapes = []
    return _LOCAL.tapes


def active_tape() -> "Tape | None":
    stack = _stack()
    return stack[-1] if stack else None


class Tensor:
    """A numpy array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()


@dataclass
class _Node:
    out: Tensor
    parents: tuple[Tensor, ...]
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    _nodes: list[_Node] = field(default_factory=list)
    _output_ids: set[int] = field(default_factory=set)
    _consumed: bool = False

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, out: Tensor, parents: tuple[Tensor, ...],
               backward_fn) -> None:
        self._nodes.append(_Node(out, parents, backward_fn))
        self._output_ids.add(id(out))

    def backward(self, loss: Tensor, grad: np.ndarray | None = None,
                 targets: Sequence[Tensor] | None = None) -> None:
        """Accumulate d(loss)/d(tensor) into ``.grad`` for requiring tensors.

        ``grad`` seeds the walk (defaults to ones, so ``loss`` is normally a
        scalar). When ``targets`` is given, only those tensors receive
        ``.grad`` writes; everything else is left untouched.
        """
        if self._consumed:
            raise TapeEmpty("tape already consumed by a previous backward call")
        if not self._nodes:
            raise TapeEmpty("no operations recorded; run a forward pass first")
        if id(loss) not in self._output_ids:
            raise TapeEmpty("loss tensor was not produced under this tape")
        self._consumed = True

        if grad is None:
            if loss.data.size != 1:
                raise ValueError("backward on a non-scalar needs an explicit grad")
            grad = np.ones_like(loss.data)
        flowing: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.dtype)}

        sinks = None if targets is None else {id(t) for t in targets}
        for node in reversed(self._nodes):
            g = flowing.pop(id(node.out), None)
            if g is None:
                continue
            parent_grads = node.backward_fn(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in flowing:
                    flowing[key] = flowing[key] + pg
                else:
                    flowing[key] = pg
                if id(parent) not in self._output_ids and \
                        (sinks is None or key in sinks):
                    parent.grad = pg if parent.grad is None else parent.grad + pg

    def __len__(self) -> int:
        return len(self._nodes)

"""Dense float32 tensors with tape-based reverse-mode differentiation.

The graph is rebuilt on every forward pass: operations executed inside a
``record()`` context append (output, backward-rule) entries to the active
tape, and ``Tape.backward`` replays them in exact reverse order, summing
gradients at fan-out points.  Nothing is recorded outside a ``record()``
context, which doubles as inference mode.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Iterator

import numpy as np

DTYPE = np.float32


class ShapeMismatch(ValueError):
    """Raised when operand shapes do not conform; message names both shapes."""


class Tensor:
    """n-dimensional float32 value array, optionally tracked for gradients."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        if not arr.flags["C_CONTIGUOUS"]:  # ascontiguousarray would promote 0-d to 1-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(())[()])

    def detach(self) -> "Tensor":
        """New leaf sharing this tensor's storage, outside any graph."""
        return Tensor.__new__(Tensor)._init_shared(self.data)

    def _init_shared(self, data: np.ndarray) -> "Tensor":
        self.data = data
        self.grad = None
        self.requires_grad = False
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray, owned: bool = False) -> None:
        """Sum ``g`` into ``grad``.  ``owned`` marks a freshly allocated array
        that no other tensor aliases, letting the first accumulation adopt it
        without a copy."""
        if g.shape != self.data.shape:
            raise ShapeMismatch(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            if owned and g.dtype == DTYPE:
                self.grad = g
            else:
                self.grad = g.astype(DTYPE, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class Tape:
    """Ordered record of executed operations, replayed backwards for grads."""

    def __init__(self):
        self._entries: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._produced: set[int] = set()

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, out: Tensor, backward: Callable[[np.ndarray], None]) -> None:
        self._entries.append((out, backward))
        self._produced.add(id(out))

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every tensor with requires_grad reachable
        from ``loss``.  Repeated calls accumulate."""
        if loss.data.size != 1:
            raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise ValueError("loss was not produced on this tape")
        loss.accumulate_grad(np.ones_like(loss.data))
        for out, rule in reversed(self._entries):
            if out.grad is not None:
                rule(out.grad)


_STACK: list[Tape] = []


def active_tape() -> Tape | None:
    return _STACK[-1] if _STACK else None


@contextmanager
def record(tape: Tape | None = None) -> Iterator[Tape]:
    """Make ``tape`` (or a fresh one) the active recording target."""
    t = tape if tape is not None else Tape()
    _STACK.append(t)
    try:
        yield t
    finally:
        _STACK.pop()


def backward(loss: Tensor) -> None:
    """Backward through the active tape; see ``Tape.backward``."""
    t = active_tape()
    if t is None:
        raise ValueError("backward called with no active tape")
    t.backward(loss)


@contextmanager
def frozen(params: Iterable[Tensor]) -> Iterator[None]:
    """Temporarily clear requires_grad so recorded ops treat these tensors
    as constants; gradient still flows *through* ops that consume them."""
    params = list(params)
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, s in zip(params, saved):
            p.requires_grad = s

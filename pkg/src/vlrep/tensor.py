"""Reverse-mode autodiff substrate over numpy arrays.

A ``Tensor`` wraps an ndarray and, when gradients are enabled, remembers the
operation that produced it as a closure plus parent links. ``GradTape`` walks
that graph once in reverse topological order and accumulates ``.grad`` on
every reachable node. Parameters that do not participate in a computation
keep a gradient of exactly zero.

All operations are pure and deterministic; the substrate is dtype-agnostic
(training typically runs in float32, gradient checks in float64).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """n-dimensional array with optional autodiff graph links.

    ``data`` is the stored ndarray (row-major), ``grad`` accumulates
    d(scalar root)/d(this tensor) after a backward pass. Non-leaf tensors
    keep ``_parents`` and a ``_backward`` closure that routes the incoming
    gradient to the parents.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ):
        if isinstance(data, np.ndarray):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    # -- basic array protocol -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- graph bookkeeping ----------------------------------------------------

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def grad_or_zeros(self) -> np.ndarray:
        """Gradient after a backward pass; exactly zero if unused."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def backward(self) -> None:
        """Run reverse-mode accumulation from this scalar."""
        GradTape(self).run()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # operator sugar; the actual implementations live in ops.py and are
    # attached at import time to avoid a circular module dependency.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops

        return ops.add(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def make_node(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: Callable[[np.ndarray], None],
) -> Tensor:
    """Create an op output, recording graph links only when needed."""
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        return Tensor(data, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


class GradTape:
    """One reverse pass over the graph reachable from a scalar root.

    The tape linearizes the graph once (iterative DFS, so deep chains do not
    hit the recursion limit) and calls each node's backward closure exactly
    once. Tapes are single-use and must not be shared across threads.
    """

    def __init__(self, root: Tensor):
        if root.size != 1:
            raise DimensionError(f"backward root must be scalar, got shape {root.shape}")
        self.root = root
        self._order = self._toposort(root)
        self.nodes_visited = 0

    @staticmethod
    def _toposort(root: Tensor) -> list[Tensor]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    def run(self) -> None:
        self.root.accumulate(np.ones_like(self.root.data))
        for node in reversed(self._order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                self.nodes_visited += 1


class ParamSet:
    """Named, insertion-ordered collection of trainable tensors.

    Names are unique; iteration order is deterministic (insertion order),
    which downstream code relies on for reproducible optimizer state and
    checkpoint layout.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        t = Tensor(np.asarray(data), requires_grad=trainable)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def tensors(self) -> Iterator[Tensor]:
        return iter(self._params.values())

    def trainable_items(self) -> Iterator[tuple[str, Tensor]]:
        return ((n, t) for n, t in self._params.items() if t.requires_grad)

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name, t in self._params.items():
            out.add(name, t.data.copy(), trainable=t.requires_grad)
        return out

    def merged_with(self, other: "ParamSet", prefix: str = "") -> "ParamSet":
        """New ParamSet sharing this set's tensors plus ``other``'s (views, not copies)."""
        out = ParamSet()
        out._params.update(self._params)
        for name, t in other.items():
            key = prefix + name
            if key in out._params:
                raise ValueError(f"duplicate parameter name on merge: {key!r}")
            out._params[key] = t
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in state.items():
            if name not in self._params:
                raise KeyError(f"unknown parameter {name!r}")
            cur = self._params[name]
            if cur.data.shape != arr.shape:
                raise DimensionError(
                    f"shape mismatch for {name!r}: {cur.data.shape} vs {arr.shape}"
                )
            cur.data = arr.copy()

"""Dense float64 tensors recorded on a reverse-mode tape.

Operations executed while a :class:`Tape` is active (``with Tape() as tape:``)
and touching at least one tensor with ``requires_grad`` are appended to the
tape together with a closure computing the vector-Jacobian product.  The tape
is stored per thread, so independent model replicas can run on separate
threads.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

_state = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _active_tape() -> Optional["Tape"]:
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node_id", "name", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # arithmetic sugar, implemented in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __pow__(self, exponent: float):
        from . import ops
        return ops.power(self, exponent)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        from . import ops
        return ops.max(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    kind: str
    inputs: tuple
    output: int
    backward: Optional[Callable] = None


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended in execution order, so every node's inputs precede it
    and a single reverse sweep visits each node once.
    """

    nodes: list = field(default_factory=list)
    _tensors: list = field(default_factory=list, repr=False)
    _index: dict = field(default_factory=dict, repr=False)

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()
        for t in self._tensors:
            t.node_id = None

    def _register(self, t: Tensor, kind: str = "leaf") -> int:
        key = id(t)
        idx = self._index.get(key)
        if idx is None:
            idx = len(self.nodes)
            self.nodes.append(Node(kind, (), idx))
            self._tensors.append(t)
            self._index[key] = idx
            t.node_id = idx
        return idx

    def node_index(self, t: Tensor) -> Optional[int]:
        return self._index.get(id(t))

    def record(self, kind: str, inputs: Sequence[Tensor], out: Tensor, backward: Callable) -> None:
        in_ids = tuple(
            self._register(t) if (t.requires_grad and self.node_index(t) is None) else self.node_index(t)
            for t in inputs
        )
        idx = len(self.nodes)
        self.nodes.append(Node(kind, in_ids, idx, backward))
        self._tensors.append(out)
        self._index[id(out)] = idx
        out.node_id = idx

    def backward(self, loss: Tensor, params: Optional[Sequence[Tensor]] = None) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf.

        Tensors in ``params`` that the loss does not reach receive a zero gradient.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        root = self.node_index(loss)
        grads: dict = {}
        if root is not None:
            grads[root] = np.ones_like(loss.data)
            for node in reversed(self.nodes[: root + 1]):
                g = grads.pop(node.output, None)
                if g is None:
                    continue
                if node.backward is None:
                    grads[node.output] = g  # leaf: keep for assignment below
                    continue
                in_grads = node.backward(g)
                for in_id, ig in zip(node.inputs, in_grads):
                    if in_id is None or ig is None:
                        continue
                    prev = grads.get(in_id)
                    grads[in_id] = ig if prev is None else prev + ig
        for idx, g in grads.items():
            t = self._tensors[idx]
            if not t.requires_grad or self.nodes[idx].backward is not None:
                continue
            g = np.asarray(g, dtype=np.float64).reshape(t.shape)
            t.grad = g.copy() if t.grad is None else t.grad + g
        if params is not None:
            for p in params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)


def backward(loss: Tensor, tape: Optional[Tape] = None, params=None) -> None:
    """Run the reverse sweep of ``tape`` (default: the active tape) from ``loss``."""
    tape = tape or _active_tape()
    if tape is None:
        raise RuntimeError("no tape recorded this loss")
    tape.backward(loss, params=params)


def record(kind: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn: Callable) -> Tensor:
    """Wrap ``out_data`` as a tensor and record it when any input needs gradients."""
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(kind, inputs, out, backward_fn)
    return out

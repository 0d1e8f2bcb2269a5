"""Dense float64 tensor with reverse-mode gradients.

A :class:`Tensor` is an immutable value. Operations in :mod:`locvalid.tensor.ops`
return new tensors that remember their inputs and a vector-Jacobian product,
so :func:`backward` can walk the recorded graph from a scalar loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from locvalid.exceptions import DimensionError, GraphError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """Immutable N-dimensional array of doubles.

    Args:
        data: Anything ``np.asarray`` understands. Always copied to float64.
        requires_grad: Whether :func:`backward` should populate ``grad``.
        name: Optional label, used by parameter containers and checkpoints.
    """

    __slots__ = ("_data", "requires_grad", "grad", "name", "op", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64, copy=True)
        arr.setflags(write=False)
        self._data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Optional[BackwardFn] = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], vjp: BackwardFn, op: str):
        out = cls.__new__(cls)
        arr = np.asarray(data, dtype=np.float64)
        if arr.flags.writeable:
            arr.setflags(write=False)
        out._data = arr
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out.name = None
        out.op = op
        out._parents = tuple(parents)
        out._vjp = vjp if out.requires_grad else None
        return out

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the values."""
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def numpy(self) -> np.ndarray:
        """Writable copy of the values."""
        return self._data.copy()

    def item(self) -> float:
        return float(self._data.item())

    def reshape(self, *shape) -> "Tensor":
        """New tensor with the same elements in a different shape."""
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        new = self._data.reshape(shape)
        src = self.shape
        return Tensor._from_op(new, (self,), lambda g: (g.reshape(src),), "reshape")

    def sum(self) -> "Tensor":
        src = self.shape
        return Tensor._from_op(
            np.asarray(self._data.sum()), (self,), lambda g: (np.broadcast_to(g, src).copy(),), "sum"
        )

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"


def as_tensor(x) -> Tensor:
    """Return ``x`` unchanged if it is a Tensor, otherwise wrap it as a constant."""
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass(frozen=True)
class Node:
    """One recorded operation: op id, input positions and the produced value."""

    op: str
    inputs: tuple[int, ...]
    value: Tensor


@dataclass
class Graph:
    """Topologically ordered view of the computation reaching a loss.

    ``nodes[i].inputs`` always refer to indices smaller than ``i``.
    """

    nodes: list[Node] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.nodes)

    def index(self, t: Tensor) -> int:
        for i, node in enumerate(self.nodes):
            if node.value is t:
                return i
        raise KeyError("tensor is not part of this graph")

    def gradient(self, t: Tensor) -> Optional[np.ndarray]:
        return self.nodes[self.index(t)].value.grad


def build_graph(root: Tensor) -> Graph:
    """Collect every tensor ``root`` depends on, inputs before consumers.

    Raises:
        GraphError: If the parent links contain a cycle.
    """
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        t, i = stack.pop()
        key = id(t)
        if i == 0:
            s = state.get(key)
            if s == 2:
                continue
            if s == 1:
                raise GraphError(f"cycle detected at {t!r}")
            state[key] = 1
        if i < len(t._parents):
            stack.append((t, i + 1))
            parent = t._parents[i]
            ps = state.get(id(parent))
            if ps == 1:
                raise GraphError(f"cycle detected at {parent!r}")
            if ps is None:
                stack.append((parent, 0))
        else:
            state[key] = 2
            order.append(t)
    pos = {id(t): k for k, t in enumerate(order)}
    nodes = [Node(t.op, tuple(pos[id(p)] for p in t._parents), t) for t in order]
    return Graph(nodes)


def backward(loss: Tensor) -> Graph:
    """Populate ``grad`` on every tensor upstream of a scalar ``loss``.

    Gradients of previous calls are discarded; each call starts from zero.

    Returns:
        The graph that was differentiated.

    Raises:
        DimensionError: If ``loss`` is not a single element.
        GraphError: If the graph is cyclic.
    """
    if loss.size != 1:
        raise DimensionError(f"loss must be scalar, got shape {loss.shape}", axis="loss")
    graph = build_graph(loss)
    for node in graph.nodes:
        node.value.grad = None
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(graph.nodes):
        t = node.value
        g = grads.pop(id(t), None)
        if g is None or not t.requires_grad:
            continue
        t.grad = g
        if t._vjp is None:
            continue
        for parent, pg in zip(t._parents, t._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise GraphError(f"{t.op} returned gradient {pg.shape} for input {parent.shape}")
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    return graph

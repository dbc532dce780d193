"""Reverse-mode automatic differentiation core.

A :class:`Tensor` is an immutable dense float array (float32 by default,
float64 in gradient-check mode).  Ops from :mod:`latent_foray.engine.ops`
record onto the innermost active :class:`Tape`, which is rebuilt for every
forward pass (define-by-run).  Backward walks the tape in reverse recorded
order, which is a valid topological order by construction.

Vector-Jacobian products are themselves expressed with engine ops, so
calling :meth:`Tape.gradients` with ``create_graph=True`` keeps recording
and makes gradients differentiable (used for the R1 gradient penalty).

Thread model: tapes are thread-local.  Tensors never store tape state for
leaves, so read-only parameter sets can be shared between threads running
independent tapes.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import NonScalarLoss

_ALLOWED_DTYPES = (np.float32, np.float64)


class Tensor:
    """Dense n-dimensional float array, optionally participating in a tape."""

    __slots__ = ("data", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        # Node on the tape that produced this tensor (outputs only; leaves
        # are registered by the tape itself so shared parameters stay
        # thread-safe).
        self.node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Operator sugar; implementations live in ops.py to keep recording in
    # one place.  Imported lazily to avoid a module cycle.
    def _ops(self):
        from . import ops

        return ops

    def __add__(self, other):
        return self._ops().add(self, _coerce(other, self))

    def __radd__(self, other):
        return self._ops().add(_coerce(other, self), self)

    def __sub__(self, other):
        return self._ops().subtract(self, _coerce(other, self))

    def __rsub__(self, other):
        return self._ops().subtract(_coerce(other, self), self)

    def __mul__(self, other):
        return self._ops().multiply(self, _coerce(other, self))

    def __rmul__(self, other):
        return self._ops().multiply(_coerce(other, self), self)

    def __truediv__(self, other):
        ops = self._ops()
        return ops.multiply(self, ops.reciprocal(_coerce(other, self)))

    def __neg__(self):
        return self._ops().scale(self, -1.0)

    def __matmul__(self, other):
        return self._ops().matmul(self, other)

    def __getitem__(self, key):
        return self._ops().tensor_slice(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return self._ops().reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False):
        return self._ops().sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return self._ops().mean(self, axis=axis, keepdims=keepdims)


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def constant(data, dtype=None) -> Tensor:
    """A tensor that never takes gradient (mask, target, literal)."""
    return Tensor(data, requires_grad=False, dtype=dtype)


class Node:
    """One recorded operation (or watched leaf) on a tape."""

    __slots__ = ("index", "op", "parents", "vjp", "shape", "dtype", "tape")

    def __init__(self, index, op, parents, vjp, shape, dtype, tape):
        self.index = index
        self.op = op
        self.parents: tuple["Node | None", ...] = parents
        # vjp(upstream: Tensor) -> tuple[Tensor | None, ...], one entry per
        # parent; None for leaves.
        self.vjp: Callable[[Tensor], tuple] | None = vjp
        self.shape = shape
        self.dtype = dtype
        self.tape: "Tape" = tape


_state = threading.local()


def _tape_stack() -> list:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    if not stack or not _grad_enabled():
        return None
    return stack[-1]


class no_grad:
    """Context manager that suspends recording (used on pure-eval paths)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tape:
    """Ordered record of one forward pass plus its gradient buffers.

    Every node's inputs precede it in ``nodes`` because recording happens
    at execution time.  Use as a context manager::

        with Tape() as tape:
            loss = ...
        grads = tape.gradients(loss, params)
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaves: dict[int, Node] = {}  # id(tensor) -> leaf node
        self._leaf_tensors: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        assert stack and stack[-1] is self, "tapes must unwind in LIFO order"
        stack.pop()
        return False

    # -- recording -----------------------------------------------------

    def watch(self, tensor: Tensor) -> Node:
        """Register a leaf so gradients can be asked for it."""
        node = self._leaves.get(id(tensor))
        if node is None:
            node = Node(len(self.nodes), "leaf", (), None, tensor.shape, tensor.dtype, self)
            self.nodes.append(node)
            self._leaves[id(tensor)] = node
            self._leaf_tensors[id(tensor)] = tensor
        return node

    def node_for(self, tensor: Tensor) -> Node | None:
        """Node of `tensor` on this tape, watching it if it is a grad leaf."""
        node = tensor.node
        if node is not None and node.tape is self:
            return node
        if tensor.requires_grad:
            return self.watch(tensor)
        return None

    def record(self, op: str, parents: Sequence[Node | None], vjp, out: Tensor) -> Tensor:
        node = Node(len(self.nodes), op, tuple(parents), vjp, out.shape, out.dtype, self)
        self.nodes.append(node)
        out.node = node
        out.requires_grad = True
        return out

    # -- gradient computation -------------------------------------------

    def _run_backward(self, loss: Tensor, create_graph: bool) -> dict[int, Tensor]:
        if loss.size != 1:
            raise NonScalarLoss(f"loss has shape {loss.shape}; expected a scalar")
        root = loss.node if (loss.node is not None and loss.node.tape is self) else None
        if root is None:
            # Loss does not depend on anything recorded here.
            return {}

        # Mark ancestors of the loss so unrelated branches are skipped.
        reachable = np.zeros(len(self.nodes), dtype=bool)
        stack = [root]
        reachable[root.index] = True
        while stack:
            node = stack.pop()
            for parent in node.parents:
                if parent is not None and not reachable[parent.index]:
                    reachable[parent.index] = True
                    stack.append(parent)

        seed = Tensor(np.ones(loss.shape, dtype=loss.dtype))
        grads: dict[int, Tensor] = {root.index: seed}
        snapshot = self.nodes[: root.index + 1]

        def accumulate(node: Node, contribution: Tensor):
            held = grads.get(node.index)
            if held is None:
                grads[node.index] = contribution
            else:
                from . import ops

                grads[node.index] = ops.add(held, contribution)

        if create_graph:
            self._propagate(snapshot, reachable, grads, accumulate)
        else:
            with no_grad():
                self._propagate(snapshot, reachable, grads, accumulate)
        return grads

    @staticmethod
    def _propagate(snapshot, reachable, grads, accumulate):
        for node in reversed(snapshot):
            if not reachable[node.index] or node.vjp is None:
                continue
            upstream = grads.get(node.index)
            if upstream is None:
                continue
            contributions = node.vjp(upstream)
            for parent, contribution in zip(node.parents, contributions):
                if parent is None or contribution is None:
                    continue
                if contribution.shape != parent.shape:
                    raise AssertionError(
                        f"vjp of {node.op} produced shape {contribution.shape} "
                        f"for parent of shape {parent.shape}"
                    )
                accumulate(parent, contribution)

    def gradients(
        self,
        loss: Tensor,
        sources: Iterable[Tensor],
        create_graph: bool = False,
    ) -> list[Tensor]:
        """d(loss)/d(source) for each source; zeros if loss is independent."""
        sources = list(sources)
        for src in sources:
            if src.requires_grad:
                self.watch(src)
        grads = self._run_backward(loss, create_graph)
        out = []
        for src in sources:
            node = self._leaves.get(id(src))
            if node is None and src.node is not None and src.node.tape is self:
                node = src.node
            grad = grads.get(node.index) if node is not None else None
            if grad is None:
                grad = Tensor(np.zeros(src.shape, dtype=src.dtype))
            out.append(grad)
        return out

    def backward(self, loss: Tensor, create_graph: bool = False) -> "GradientBuffers":
        """Gradients for every reachable node, keyed by node.

        The seed gradient of the loss is 1.  Leaves watched on this tape can
        be queried by tensor identity via :meth:`GradientBuffers.of`.
        """
        grads = self._run_backward(loss, create_graph)
        return GradientBuffers(self, grads)


class GradientBuffers:
    """Read-only view of one backward pass's gradient buffers."""

    def __init__(self, tape: Tape, grads: dict[int, Tensor]):
        self._tape = tape
        self._grads = grads

    def of(self, tensor: Tensor) -> Tensor:
        node = self._tape._leaves.get(id(tensor))
        if node is None and tensor.node is not None and tensor.node.tape is self._tape:
            node = tensor.node
        if node is None or node.index not in self._grads:
            return Tensor(np.zeros(tensor.shape, dtype=tensor.dtype))
        return self._grads[node.index]

    def by_node(self) -> dict[int, Tensor]:
        return dict(self._grads)

    def __len__(self) -> int:
        return len(self._grads)

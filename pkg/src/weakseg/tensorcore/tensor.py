"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is define-by-run: every operation returns a fresh Tensor that
remembers its parents and a closure propagating the output gradient to
them. Trainable tensors live in a ParameterStore under stable names; a
parameter referenced from several graph branches is a single storage
location, so gradients from all branches accumulate additively into it.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """A dense n-d array plus an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "name", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.name = name
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._reject_item()

    def _reject_item(self):
        raise ValueError(f"item() requires a scalar tensor, got shape {self.shape}")

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def detach(self):
        """A leaf view of the same data, cut off from the graph."""
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    # Small arithmetic surface used when composing losses. Constants are
    # wrapped as leaves; their gradients are computed and discarded.
    def __add__(self, other):
        from . import ops

        return ops.add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, _wrap(other))

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, _wrap(-1.0))


def _wrap(value):
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))


def topo_order(root: Tensor):
    """Parents-before-children ordering of the graph below ``root``."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor):
    """Populate grads of every tensor reachable from a scalar loss."""
    if loss.data.size != 1:
        raise ValueError(f"backward() requires a scalar loss, got shape {loss.shape}")
    order = topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward()


class ParameterStore:
    """Registry of trainable tensors under stable string identifiers."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        tensor.name = name
        self._params[name] = tensor
        return tensor

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """name -> data, in registration order (used by checkpointing)."""
        return {name: p.data for name, p in self._params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in self._params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: stored {arr.shape}, expected {p.data.shape}")
            p.data = arr.copy()

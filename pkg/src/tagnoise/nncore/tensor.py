"""Dense float64 tensors with reverse-mode automatic differentiation."""
import numpy as np


class ShapeError(ValueError):
    pass


class UsageError(RuntimeError):
    pass


class Tensor:
    """An ndarray plus a gradient slot and (for op outputs) a graph edge.

    ``_backward`` maps the upstream gradient to one gradient per parent
    (``None`` for parents that need none).
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Propagate gradients from this node to every leaf that requires them.

        The recorded graph is released afterwards; calling ``backward`` again
        on the same output raises ``UsageError``.
        """
        if self._backward is None:
            raise UsageError(
                "backward() called on a tensor with no recorded computation; "
                "run a forward pass first"
            )
        if grad is None:
            if self.data.size != 1:
                raise UsageError("implicit gradient only defined for scalar outputs")
            grad = np.ones_like(self.data)

        order = []
        seen = set()
        stack = [(self, False)]
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
                if id(p) not in seen and p._backward is not None:
                    stack.append((p, False))

        pending = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if p._backward is None:
                    p.grad = pg if p.grad is None else p.grad + pg
                else:
                    prev = pending.get(id(p))
                    pending[id(p)] = pg if prev is None else prev + pg
        for node in order:
            node._parents = ()
            node._backward = None

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def sum(self):
        return tsum(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data, parents, backward):
    out = Tensor(data, requires_grad=_GRAD[0] and any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and b.data.size != 1:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    scalar_b = a.shape != b.shape
    return make_node(
        a.data + b.data,
        (a, b),
        lambda g: (g, np.sum(g).reshape(b.shape) if scalar_b else g),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and b.data.size != 1:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    scalar_b = a.shape != b.shape

    def backward(g):
        gb = g * a.data
        return g * b.data, (np.sum(gb).reshape(b.shape) if scalar_b else gb)

    return make_node(a.data * b.data, (a, b), backward)


def tsum(a):
    return make_node(np.sum(a.data), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


_GRAD = [True]


class no_grad:
    """Context manager that stops op outputs from recording graph edges."""

    def __enter__(self):
        self._prev = _GRAD[0]
        _GRAD[0] = False

    def __exit__(self, *exc):
        _GRAD[0] = self._prev

"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps a float32 or float64 ndarray.  Operations build a
tape: each result remembers its parent tensors and a closure computing
vector-Jacobian products.  ``backward()`` on a scalar loss walks the tape in
reverse topological order and accumulates gradients into the ``grad`` field
of leaf tensors that were created with ``requires_grad=True``.

Two properties the rest of the pipeline leans on:

* Results whose inputs carry no gradient requirement are plain constants --
  no parents, no closures -- so running a frozen network costs no tape.
* Every op checks its output for NaN/inf and raises ``NumericError``
  immediately, which turns silent numeric corruption into a located failure.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, DimensionError, NumericError

_FLOAT_DTYPES = (np.float32, np.float64)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by '{op}'")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise ContractError("wrap ndarray or sequence, not another Tensor")
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in _FLOAT_DTYPES else np.float32
        if np.dtype(dtype) not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise DimensionError(f"unsupported dtype {dtype}; use float32 or float64")
        self.data = np.ascontiguousarray(arr, dtype=dtype)
        _check_finite(self.data, "tensor")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._vjp = None

    # -- construction of op results ------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents, vjp, op: str) -> "Tensor":
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        else:
            # Constant result: keep no references so frozen-network forward
            # passes build no tape at all.
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    # -- basic introspection ---------------------------------------------

    @property
    def shape(self) -> tuple:
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

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """The underlying array.  Treat it as read-only."""
        return self.data

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._vjp = None
        return out

    def clear_grad(self) -> None:
        self.grad = None

    # -- backward pass ----------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        ``self`` must be a scalar.  Repeated calls add on top of existing
        gradients; clear with ``clear_grad`` (or the optimizer's
        ``zero_grad``) between steps.
        """
        if self.data.size != 1:
            raise ContractError("backward() requires a scalar tensor")
        if not self.requires_grad:
            raise ContractError("backward() on a tensor with no gradient path")

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- binary elementwise ops (numpy broadcasting rules) ----------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            if other.data.dtype != self.data.dtype:
                raise DimensionError(
                    f"dtype mismatch: {self.data.dtype.name} vs {other.data.dtype.name}"
                )
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        b = self._coerce(other)
        a = self
        data = a.data + b.data

        def vjp(g):
            return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

        return Tensor._result(data, (a, b), vjp, "add")

    __radd__ = __add__

    def __sub__(self, other):
        b = self._coerce(other)
        a = self
        data = a.data - b.data

        def vjp(g):
            return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

        return Tensor._result(data, (a, b), vjp, "sub")

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __mul__(self, other):
        b = self._coerce(other)
        a = self
        data = a.data * b.data

        def vjp(g):
            return (
                _unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape),
            )

        return Tensor._result(data, (a, b), vjp, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        b = self._coerce(other)
        a = self
        # The finiteness check is the error channel; silence numpy's warning.
        with np.errstate(divide="ignore", invalid="ignore"):
            data = a.data / b.data

        def vjp(g):
            ga = _unbroadcast(g / b.data, a.data.shape)
            gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
            return ga, gb

        return Tensor._result(data, (a, b), vjp, "div")

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def __neg__(self):
        a = self
        return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")

    # -- unary elementwise ops ---------------------------------------------

    def exp(self):
        a = self
        with np.errstate(over="ignore"):
            out = np.exp(a.data)
        return Tensor._result(out, (a,), lambda g: (g * out,), "exp")

    def log(self):
        a = self
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(a.data)
        return Tensor._result(out, (a,), lambda g: (g / a.data,), "log")

    def sqrt(self):
        a = self
        with np.errstate(invalid="ignore"):
            out = np.sqrt(a.data)
        return Tensor._result(out, (a,), lambda g: (g / (2.0 * out),), "sqrt")

    def sigmoid(self):
        a = self
        # Split by sign so exp never overflows.
        x = a.data
        out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                       np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        out = out.astype(x.dtype)
        return Tensor._result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")

    def tanh(self):
        a = self
        out = np.tanh(a.data)
        return Tensor._result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")

    def silu(self):
        """x * sigmoid(x), fused so the tape holds one node."""
        a = self
        x = a.data
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        s = s.astype(x.dtype)
        out = x * s

        def vjp(g):
            return (g * (s + x * s * (1.0 - s)),)

        return Tensor._result(out, (a,), vjp, "silu")

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, a.data.shape).astype(a.data.dtype),)

        return Tensor._result(np.asarray(data), (a,), vjp, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        a = self
        data = a.data.mean(axis=axis, keepdims=keepdims)
        count = a.data.size // max(data.size, 1)

        def vjp(g):
            if axis is None:
                gg = g
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
            scaled = gg / a.data.dtype.type(count)
            return (np.broadcast_to(scaled, a.data.shape).astype(a.data.dtype),)

        return Tensor._result(np.asarray(data), (a,), vjp, "mean")

    # -- shape ops -------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        data = a.data.reshape(shape)

        def vjp(g):
            return (g.reshape(a.data.shape),)

        return Tensor._result(data, (a,), vjp, "reshape")

    def swapaxes(self, ax1: int, ax2: int):
        a = self
        data = np.ascontiguousarray(a.data.swapaxes(ax1, ax2))

        def vjp(g):
            return (np.ascontiguousarray(g.swapaxes(ax1, ax2)),)

        return Tensor._result(data, (a,), vjp, "swapaxes")

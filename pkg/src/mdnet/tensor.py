"""Dense float tensor with reverse-mode automatic differentiation.

The engine is deliberately small: a ``Tensor`` wraps a numpy array, and every
differentiable operation records its inputs plus a backward closure.  Calling
``backward()`` on a scalar walks the recorded graph in reverse topological
order and accumulates gradients into ``.grad`` of every tensor that requires
them.  Repeated ``backward()`` calls keep accumulating; ``zero_grad()`` resets.

Storage defaults to float32.  Passing a float64 array (or ``dtype=np.float64``)
keeps 64-bit precision end to end, which is what the finite-difference checks
in the test suite rely on.
"""

import contextlib

import numpy as np

from .errors import ContractError, DimensionError

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


def _as_array(data, dtype):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if isinstance(data, (np.ndarray, np.floating)) and arr.dtype in _FLOAT_DTYPES:
        return arr
    return arr.astype(np.float32)


class Tensor:
    """N-dimensional float array with an optional autodiff lineage.

    Attributes:
        data: the underlying numpy array (float32 unless built as float64).
        grad: accumulated gradient array of the same shape, or None.
        requires_grad: whether backward passes should reach this tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = None

    # ------------------------------------------------------------------
    # basic accessors
    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype):
        """Detached copy in another float dtype (keeps requires_grad)."""
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, op={self._op})"

    # ------------------------------------------------------------------
    # autodiff machinery
    # ------------------------------------------------------------------
    def backward(self):
        """Accumulate d(self)/d(x) into x.grad for every reachable tensor x.

        ``self`` must hold a single element.  Each call adds one full pass of
        gradients on top of whatever is already stored, so callers that want
        fresh gradients must ``zero_grad()`` their parameters first.
        """
        if self.size != 1:
            raise ContractError(
                f"backward() needs a scalar loss, got shape {tuple(self.shape)}"
            )
        topo = self._toposort()
        pass_grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = pass_grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad = node.grad + g
            if node._backward is None:
                continue
            contribs = node._backward(g)
            for parent, contrib in zip(node._parents, contribs):
                if contrib is None or not parent.requires_grad:
                    continue
                prev = pass_grads.get(id(parent))
                pass_grads[id(parent)] = contrib if prev is None else prev + contrib
        return self

    def _toposort(self):
        order, visited, stack = [], set(), [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return order

    # ------------------------------------------------------------------
    # arithmetic
    # ------------------------------------------------------------------
    def __add__(self, other):
        other = _wrap(other, self.dtype)
        out = _node(self.data + other.data, (self, other), "add")
        if out._op:
            sa, sb = self.shape, other.shape
            out._backward = lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
        return out

    __radd__ = __add__

    def __neg__(self):
        out = _node(-self.data, (self,), "neg")
        if out._op:
            out._backward = lambda g: (-g,)
        return out

    def __sub__(self, other):
        other = _wrap(other, self.dtype)
        out = _node(self.data - other.data, (self, other), "sub")
        if out._op:
            sa, sb = self.shape, other.shape
            out._backward = lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
        return out

    def __rsub__(self, other):
        return _wrap(other, self.dtype) - self

    def __mul__(self, other):
        other = _wrap(other, self.dtype)
        out = _node(self.data * other.data, (self, other), "mul")
        if out._op:
            a, b, sa, sb = self.data, other.data, self.shape, other.shape
            out._backward = lambda g: (_unbroadcast(g * b, sa), _unbroadcast(g * a, sb))
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other, self.dtype)
        out = _node(self.data / other.data, (self, other), "div")
        if out._op:
            a, b, sa, sb = self.data, other.data, self.shape, other.shape
            out._backward = lambda g: (
                _unbroadcast(g / b, sa),
                _unbroadcast(-g * a / (b * b), sb),
            )
        return out

    def __matmul__(self, other):
        if self.ndim != 2 or other.ndim != 2:
            raise DimensionError(
                f"matmul expects 2-d operands, got {self.ndim}-d @ {other.ndim}-d"
            )
        if self.shape[1] != other.shape[0]:
            raise DimensionError(
                f"matmul inner dims differ: {self.shape} @ {other.shape}"
            )
        out = _node(self.data @ other.data, (self, other), "matmul")
        if out._op:
            a, b = self.data, other.data
            out._backward = lambda g: (g @ b.T, a.T @ g)
        return out

    # ------------------------------------------------------------------
    # shape ops
    # ------------------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        out = _node(self.data.reshape(shape), (self,), "reshape")
        if out._op:
            out._backward = lambda g: (g.reshape(old),)
        return out

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        out = _node(self.data.transpose(axes), (self,), "permute")
        if out._op:
            out._backward = lambda g: (g.transpose(inv),)
        return out

    def __getitem__(self, index):
        out = _node(self.data[index], (self,), "slice")
        if out._op:
            shape, dtype = self.shape, self.dtype

            def bwd(g):
                full = np.zeros(shape, dtype=dtype)
                np.add.at(full, index, g)
                return (full,)

            out._backward = bwd
        return out

    def gather(self, index_arrays):
        """Advanced indexing with a tuple of integer arrays (differentiable)."""
        index = tuple(index_arrays)
        out = _node(self.data[index], (self,), "gather")
        if out._op:
            shape, dtype = self.shape, self.dtype

            def bwd(g):
                full = np.zeros(shape, dtype=dtype)
                np.add.at(full, index, g)
                return (full,)

            out._backward = bwd
        return out

    # ------------------------------------------------------------------
    # reductions and pointwise math
    # ------------------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        out = _node(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum")
        if out._op:
            shape = self.shape

            def bwd(g):
                if axis is None:
                    return (np.broadcast_to(g, shape).copy(),)
                gx = g if keepdims else np.expand_dims(g, axis)
                return (np.broadcast_to(gx, shape).copy(),)

            out._backward = bwd
        return out

    def mean(self, axis=None, keepdims=False):
        count = self.size if axis is None else np.prod(
            [self.shape[a] for a in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    def log(self):
        out = _node(np.log(self.data), (self,), "log")
        if out._op:
            x = self.data
            out._backward = lambda g: (g / x,)
        return out

    def exp(self):
        y = np.exp(self.data)
        out = _node(y, (self,), "exp")
        if out._op:
            out._backward = lambda g: (g * y,)
        return out

    def relu(self):
        mask = self.data > 0
        out = _node(np.where(mask, self.data, 0), (self,), "relu")
        if out._op:
            out._backward = lambda g: (g * mask,)
        return out


def _wrap(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _node(data, parents, op):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._op = op
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def concat(tensors, axis=0):
    """Differentiable concatenation along an axis."""
    tensors = list(tensors)
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat")
    if out._op:
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        out._backward = lambda g: tuple(np.split(g, splits, axis=axis))
    return out


def softmax(t, axis=-1):
    """Numerically stable softmax: rows sum to 1 along ``axis``."""
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _node(y, (t,), "softmax")
    if out._op:
        out._backward = lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return out


def log_softmax(t, axis=-1):
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    out = _node(y, (t,), "log_softmax")
    if out._op:
        sm = np.exp(y)
        out._backward = lambda g: (g - sm * g.sum(axis=axis, keepdims=True),)
    return out


def smooth_l1(t):
    """Elementwise robust loss: 0.5*x^2 for |x| < 1, |x| - 0.5 otherwise."""
    x = t.data
    small = np.abs(x) < 1.0
    y = np.where(small, 0.5 * x * x, np.abs(x) - 0.5)
    out = _node(y, (t,), "smooth_l1")
    if out._op:
        out._backward = lambda g: (g * np.clip(x, -1.0, 1.0),)
    return out

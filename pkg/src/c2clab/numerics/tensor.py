"""Dense tensors with reverse-mode gradient propagation.

numpy arrays hold the values; every differentiable op wires a closure that
scatters the output gradient back into its inputs. ``backward()`` walks the
graph in reverse topological order and accumulates into ``.grad`` (never
overwrites, so shared subexpressions work).

Only the shapes this model needs are supported: matmul is strictly 2-D,
broadcasting follows numpy rules, indexing is limited to ints and slices.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidConfig, InvalidInput, NumericalError, ShapeError

_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction inside its scope."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(np.float64)
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.ndim != 0:
                raise InvalidInput("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        _accumulate(self, grad)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # operator sugar; scalars and arrays are wrapped as constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(value, dtype=None):
    return value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g


def _make(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a, b, opname):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    data = a.data - b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    data = a.data / b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), backward)


def neg(a):
    a = as_tensor(a)

    def backward(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(data, (a, b), backward)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    data = np.where(mask, a.data, 0.0)

    def backward(g):
        _accumulate(a, g * mask)

    return _make(data, (a,), backward)


def exp(a):
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * data)

    return _make(data, (a,), backward)


def log(a):
    a = as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return _make(data, (a,), backward)


def sqrt(a):
    a = as_tensor(a)
    data = np.sqrt(a.data)

    def backward(g):
        _accumulate(a, g * 0.5 / data)

    return _make(data, (a,), backward)


def power(a, exponent):
    a = as_tensor(a)
    data = a.data ** exponent

    def backward(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1))

    return _make(data, (a,), backward)


def tensor_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _make(data, (a,), backward)


def mean_over_axis(a, axis, keepdims=False, sorted_reduce=False):
    """Mean along one axis.

    With ``sorted_reduce`` the addends are sorted before summation, which
    makes the result exactly invariant to permutations along that axis
    (same multiset of floats, same rounding). The gradient is the usual
    uniform 1/n either way.
    """
    a = as_tensor(a)
    n = a.shape[axis]
    if sorted_reduce:
        data = np.sort(a.data, axis=axis).sum(axis=axis, keepdims=keepdims) / n
    else:
        data = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g / n, a.shape).copy())

    return _make(data, (a,), backward)


def mean_all(a):
    a = as_tensor(a)
    n = a.data.size
    data = a.data.sum() / n

    def backward(g):
        _accumulate(a, np.broadcast_to(g / n, a.shape).copy())

    return _make(data, (a,), backward)


def concat(parts, axis=0):
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise InvalidInput("concat of zero tensors")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(part, g[tuple(idx)])

    return _make(data, tuple(parts), backward)


def reshape(a, shape):
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(data, (a,), backward)


def transpose(a, axes=None):
    a = as_tensor(a)
    data = a.data.transpose(axes)
    if axes is None:
        inverse = None
    else:
        inverse = np.argsort(axes)

    def backward(g):
        _accumulate(a, g.transpose(inverse))

    return _make(data, (a,), backward)


def getitem(a, key):
    """Basic indexing only (ints and slices); gradient scatters back."""
    a = as_tensor(a)
    data = a.data[key]

    def backward(g):
        buf = np.zeros_like(a.data)
        buf[key] += g
        _accumulate(a, buf)

    return _make(data, (a,), backward)


def gather_columns(a, cols):
    """Select columns of a 2-D tensor; repeated columns accumulate grads."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"gather_columns expects a matrix, got shape {a.shape}")
    cols = np.asarray(cols, dtype=np.intp)
    data = a.data[:, cols]
    rows = np.arange(a.shape[0])[:, None]

    def backward(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, (rows, cols[None, :]), g)
        _accumulate(a, buf)

    return _make(data, (a,), backward)


def gather_pairs(a, rows, cols):
    """out[b, i] = a[b, rows[i], cols[i]] for a 3-D tensor."""
    a = as_tensor(a)
    if a.ndim != 3:
        raise ShapeError(f"gather_pairs expects rank 3, got shape {a.shape}")
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    if rows.shape != cols.shape:
        raise ShapeError("gather_pairs: row/col index lists differ in length")
    batch = np.arange(a.shape[0])[:, None]
    data = a.data[batch, rows[None, :], cols[None, :]]

    def backward(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, (batch, rows[None, :], cols[None, :]), g)
        _accumulate(a, buf)

    return _make(data, (a,), backward)


def slice_channels(a, start, stop):
    """Slice the last axis; the shared-channel trick behind feature splits."""
    return getitem(a, (Ellipsis, slice(start, stop)))


def conv1d_temporal(x, weight, bias=None, pad_mode="edge"):
    """Temporal convolution over (batch, time, channels) with same-length output.

    `weight` has shape (kernel, in_channels, out_channels) with odd kernel.
    Edge padding keeps a constant sequence constant, which zero padding
    would break at the boundary frames.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv1d_temporal: got shapes {x.shape}, {weight.shape}")
    k, c_in, c_out = weight.shape
    if k % 2 != 1:
        raise ShapeError("conv1d_temporal: kernel size must be odd")
    if x.shape[2] != c_in:
        raise ShapeError(f"conv1d_temporal: {x.shape[2]} input channels vs weight {c_in}")
    if pad_mode not in ("edge", "zeros"):
        raise InvalidConfig(f"unknown pad_mode {pad_mode!r}")
    b_, t, _ = x.shape
    pad = (k - 1) // 2
    np_mode = "edge" if pad_mode == "edge" else "constant"
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)), mode=np_mode)
    data = np.zeros((b_, t, c_out), dtype=x.data.dtype)
    for j in range(k):
        data += xp[:, j:j + t, :] @ weight.data[j]
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"conv1d_temporal: bias shape {bias.shape} != ({c_out},)")
        data = data + bias.data
        parents.append(bias)

    def backward(g):
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(weight.data)
        flat_g = g.reshape(-1, c_out)
        for j in range(k):
            window = xp[:, j:j + t, :]
            dw[j] = window.reshape(-1, c_in).T @ flat_g
            dxp[:, j:j + t, :] += g @ weight.data[j].T
        dx = dxp[:, pad:pad + t, :].copy()
        if pad_mode == "edge" and pad > 0:
            dx[:, 0, :] += dxp[:, :pad, :].sum(axis=1)
            dx[:, -1, :] += dxp[:, pad + t:, :].sum(axis=1)
        _accumulate(x, dx)
        _accumulate(weight, dw)
        if bias is not None:
            _accumulate(bias, g.sum(axis=(0, 1)))

    return _make(data, tuple(parents), backward)


def cosine_similarity(a, b, zero_tol=1e-12):
    """Row-by-row cosine similarity: (n, d) x (m, d) -> (n, m)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"cosine_similarity: shapes {a.shape}, {b.shape}")
    na = np.linalg.norm(a.data, axis=1)
    nb = np.linalg.norm(b.data, axis=1)
    if np.any(na < zero_tol) or np.any(nb < zero_tol):
        raise NumericalError("cosine_similarity: zero-norm row")
    dots = a.data @ b.data.T
    data = dots / (na[:, None] * nb[None, :])

    def backward(g):
        weighted = g / (na[:, None] * nb[None, :])
        ga = weighted @ b.data - ((g * data).sum(axis=1) / (na * na))[:, None] * a.data
        gb = weighted.T @ a.data - ((g * data).sum(axis=0) / (nb * nb))[:, None] * b.data
        _accumulate(a, ga)
        _accumulate(b, gb)

    return _make(data, (a, b), backward)


def softmax_cross_entropy_with_temperature(logits, targets, temperature, reduction="mean"):
    """Cross entropy of softmax(logits / temperature) against integer targets.

    reduction "mean" gives a scalar, "none" the per-row loss vector.
    """
    if temperature <= 0:
        raise InvalidConfig(f"temperature must be positive, got {temperature}")
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross entropy expects (batch, classes), got {logits.shape}")
    targets = np.asarray(targets, dtype=np.intp)
    n, m = logits.shape
    if targets.shape != (n,):
        raise ShapeError(f"targets shape {targets.shape} != ({n},)")
    if np.any(targets < 0) or np.any(targets >= m):
        raise InvalidInput("cross entropy target index out of range")
    z = logits.data / temperature
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1)
    probs = ez / denom[:, None]
    losses = np.log(denom) - z[np.arange(n), targets]
    if reduction == "mean":
        data = losses.mean()
    elif reduction == "none":
        data = losses
    else:
        raise InvalidConfig(f"unknown reduction {reduction!r}")

    def backward(g):
        delta = probs.copy()
        delta[np.arange(n), targets] -= 1.0
        if reduction == "mean":
            grad = delta * (g / (n * temperature))
        else:
            grad = delta * (g[:, None] / temperature)
        _accumulate(logits, grad)

    return _make(data, (logits,), backward)


def one_hot(indices, num_classes, dtype=np.float64):
    """Plain numpy one-hot rows (constants, not part of the graph)."""
    indices = np.asarray(indices, dtype=np.intp)
    out = np.zeros((indices.shape[0], num_classes), dtype=dtype)
    out[np.arange(indices.shape[0]), indices] = 1.0
    return out

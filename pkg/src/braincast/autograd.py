"""A small reverse-mode differentiation tape over numpy arrays.

Only the operations the forecasting model needs are provided. Arrays may be
complex; for a real scalar loss the gradient of a complex array ``z`` is
stored as ``dL/dRe(z) + 1j * dL/dIm(z)``, which makes the backward rule of
every linear map its conjugate transpose. Gradients flowing into a real
array from a complex expression keep only their real part.
"""

from __future__ import annotations

import numpy as np

from . import numerics


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad=None):
        """Accumulate gradients of this tensor into every leaf on the tape.

        Returns a dict mapping ``id(leaf)`` to its gradient array; leaves
        that were named also get an entry under their name.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad)}
        out = {}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                out[id(node)] = g
                if node.name is not None:
                    out[node.name] = g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _match(pg, parent.data)
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg
        return out


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _match(g, like):
    """Sum out broadcast axes and drop the imaginary part for real targets."""
    if g.shape != like.shape:
        extra = g.ndim - like.ndim
        if extra > 0:
            g = g.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, n in enumerate(like.shape) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
    if np.iscomplexobj(g) and not np.iscomplexobj(like):
        g = g.real
    return g


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def param(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def _node(data, parents, backward):
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


# elementwise -----------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (g * np.conj(b.data), g * np.conj(a.data)))


def scale(a, c):
    a = as_tensor(a)
    return _node(a.data * c, (a,), lambda g: (g * np.conj(c),))


def cos(a):
    a = as_tensor(a)
    return _node(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def sin(a):
    a = as_tensor(a)
    return _node(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def gelu(a):
    a = as_tensor(a)
    cdf = numerics.normal_cdf(a.data)

    def backward(g):
        return (g * (cdf + a.data * numerics.normal_pdf(a.data)),)

    return _node(a.data * cdf, (a,), backward)


def real(a):
    a = as_tensor(a)
    return _node(a.data.real, (a,), lambda g: (g,))


# linear algebra ----------------------------------------------------------------

def _mm(a, b):
    """``a @ b``; a shared 2-D right operand is applied as one folded GEMM,
    and real-by-complex products run as two real GEMMs."""
    if b.ndim == 2 and a.ndim > 2:
        return _mm(a.reshape(-1, a.shape[-1]), b).reshape(*a.shape[:-1], b.shape[-1])
    if a.ndim == 2 and b.ndim == 2:
        a, b = _blas_ready(a), _blas_ready(b)
        if np.iscomplexobj(b) and not np.iscomplexobj(a):
            return (a @ np.ascontiguousarray(b.real)) + 1j * (a @ np.ascontiguousarray(b.imag))
    return a @ b


def _blas_ready(x):
    f = x.flags
    return x if (f.c_contiguous or f.f_contiguous) else np.ascontiguousarray(x)


def matmul(a, b):
    """``a @ b`` with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    out = _mm(a.data, b.data)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _mm(g, np.conj(np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # shared weight: fold the batch axes into one product
                a2 = a.data.reshape(-1, a.shape[-1])
                gb = _mm(np.conj(a2).T, g.reshape(-1, g.shape[-1]))
            else:
                gb = np.conj(np.swapaxes(a.data, -1, -2)) @ g
        return ga, gb

    return _node(out, (a, b), backward)


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts, axis=-1):
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([p.data for p in parts], axis=axis), parts,
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def take_last(a, index):
    """Permute the last axis by an involutive index (``out[..., k] = a[..., index[k]]``)."""
    a = as_tensor(a)
    index = np.asarray(index)
    inv = np.argsort(index)
    return _node(a.data[..., index], (a,), lambda g: (g[..., inv],))


# normalizations ------------------------------------------------------------------

def softmax(a):
    a = as_tensor(a)
    s = numerics.softmax_rows(a.data)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (a,), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        gx_hat = g * gain.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, g * xhat, g

    return _node(out, (x, gain, bias), backward)


# reductions ------------------------------------------------------------------------

def sum_all(a):
    a = as_tensor(a)
    return _node(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape),))


def square(a):
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))

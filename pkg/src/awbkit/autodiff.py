"""Reverse-mode automatic differentiation on numpy arrays.

A `Tensor` wraps an ndarray and remembers how it was produced. Calling
`backward()` on a scalar result walks the graph in reverse topological
order and accumulates gradients into every tensor created with
`requires_grad=True`.

Numeric policy: tensors hold float32 by default (float64 is supported and
is what the finite-difference checks use); full reductions (sum, mean,
dot, norm, bin contraction) accumulate in float64 before casting back.
Forward values raise `NumericDomainError` instead of producing NaN when
an op leaves its domain.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .exceptions import InvalidArgumentError, InvalidStateError, NumericDomainError

DEFAULT_DTYPE = np.float32

# arccos inputs are clamped to this closed interval so the loss stays
# differentiable at zero angular error
ARCCOS_CLAMP = 1.0 - 1e-7

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
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
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None, _parents=(), _op="leaf"):
        arr = np.asarray(data)
        if dtype is not None:
            arr = np.asarray(arr, dtype=dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._parents = tuple(_parents)
        self._backward: Callable[[], None] | None = None
        self._op = _op

    # ------------------------------------------------------------------ basics

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, grad={self.requires_grad})"

    def backward(self):
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise InvalidStateError(
                f"backward() requires a scalar, got shape {self.data.shape}"
            )
        if not self.requires_grad:
            raise InvalidStateError("backward() on a tensor that does not require grad")

        # iterative topological sort (graphs can be deep for big batches)
        topo: list[Tensor] = []
        seen = {id(self)}
        stack: list[tuple[Tensor, int]] = [(self, 0)]
        while stack:
            node, i = stack.pop()
            if i < len(node._parents):
                stack.append((node, i + 1))
                p = node._parents[i]
                if id(p) not in seen and p.requires_grad:
                    seen.add(id(p))
                    stack.append((p, 0))
            else:
                topo.append(node)

        self.grad[...] = 1.0
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # ---------------------------------------------------------------- operators

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _result(data, parents, op, needs=None) -> Tensor:
    """Create an op output; graph edges only when grad mode is on."""
    needs = needs if needs is not None else any(p.requires_grad for p in parents)
    if _grad_enabled and needs:
        return Tensor(data, requires_grad=True, _parents=parents, _op=op)
    return Tensor(data, _op=op)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _coerce_pair(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    # scalars follow the other operand's dtype so float32 graphs stay float32
    if a.data.ndim == 0 and a.data.dtype != b.data.dtype:
        a = Tensor(a.data, dtype=b.data.dtype)
    elif b.data.ndim == 0 and b.data.dtype != a.data.dtype:
        b = Tensor(b.data, dtype=a.data.dtype)
    return a, b


# ------------------------------------------------------------ elementwise ops


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    out = _result(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad, a.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(out.grad, b.shape)
        out._backward = _bw
    return out


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    out = _result(a.data - b.data, (a, b), "sub")
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad, a.shape)
            if b.requires_grad:
                b.grad -= _unbroadcast(out.grad, b.shape)
        out._backward = _bw
    return out


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    out = _result(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad * b.data, a.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(out.grad * a.data, b.shape)
        out._backward = _bw
    return out


def div(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    if np.any(b.data == 0):
        raise NumericDomainError("div", "division by zero")
    out = _result(a.data / b.data, (a, b), "div")
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad / b.data, a.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape)
        out._backward = _bw
    return out


def power(a, p) -> Tensor:
    """Elementwise x**p for a python scalar exponent."""
    if isinstance(p, Tensor) or not np.isscalar(p):
        raise InvalidArgumentError("power expects a scalar exponent")
    a = as_tensor(a)
    if p != int(p) and np.any(a.data < 0):
        raise NumericDomainError("power", f"negative base with exponent {p}")
    out = _result(a.data ** p, (a,), "power")
    if out.requires_grad:
        def _bw():
            a.grad += out.grad * p * a.data ** (p - 1)
        out._backward = _bw
    return out


def absolute(a) -> Tensor:
    a = as_tensor(a)
    out = _result(np.abs(a.data), (a,), "abs")
    if out.requires_grad:
        def _bw():
            a.grad += out.grad * np.sign(a.data)
        out._backward = _bw
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = _result(np.exp(a.data), (a,), "exp")
    if out.requires_grad:
        def _bw():
            a.grad += out.grad * out.data
        out._backward = _bw
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericDomainError("log", "non-positive input")
    out = _result(np.log(a.data), (a,), "log")
    if out.requires_grad:
        def _bw():
            a.grad += out.grad / a.data
        out._backward = _bw
    return out


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise NumericDomainError("sqrt", "negative input")
    out = _result(np.sqrt(a.data), (a,), "sqrt")
    if out.requires_grad:
        def _bw():
            # d sqrt/dx = 1/(2 sqrt x); defined as 0 where the forward
            # underflowed to exactly zero (empty histogram bins)
            denom = 2.0 * out.data
            g = np.where(denom > 0, out.grad, 0.0) / np.where(denom > 0, denom, 1.0)
            a.grad += g.astype(a.data.dtype, copy=False)
        out._backward = _bw
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = _result(np.maximum(a.data, 0), (a,), "relu")
    if out.requires_grad:
        def _bw():
            a.grad += out.grad * (a.data > 0)
        out._backward = _bw
    return out


def clamp_min(a, floor: float) -> Tensor:
    """max(x, floor); gradient passes only where x > floor."""
    a = as_tensor(a)
    out = _result(np.maximum(a.data, floor), (a,), "clamp_min")
    if out.requires_grad:
        def _bw():
            a.grad += out.grad * (a.data > floor)
        out._backward = _bw
    return out


def arccos(a) -> Tensor:
    """arccos with inputs clamped to [-1+1e-7, 1-1e-7].

    The clamp keeps the gradient finite at zero angular error; the
    backward pass uses the clamped value.
    """
    a = as_tensor(a)
    if np.any(~np.isfinite(a.data)):
        raise NumericDomainError("arccos", "non-finite input")
    clamped = np.clip(a.data, -ARCCOS_CLAMP, ARCCOS_CLAMP)
    out = _result(np.arccos(clamped), (a,), "arccos")
    if out.requires_grad:
        def _bw():
            inside = (a.data > -ARCCOS_CLAMP) & (a.data < ARCCOS_CLAMP)
            local = -1.0 / np.sqrt(1.0 - clamped * clamped)
            a.grad += out.grad * local * inside
        out._backward = _bw
    return out


# ------------------------------------------------------------ shape handling


def reshape(a, *shape) -> Tensor:
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = _result(a.data.reshape(shape), (a,), "reshape")
    if out.requires_grad:
        def _bw():
            a.grad += out.grad.reshape(a.shape)
        out._backward = _bw
    return out


def permute(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    out = _result(np.transpose(a.data, axes), (a,), "permute")
    if out.requires_grad:
        inv = tuple(np.argsort(axes))
        def _bw():
            a.grad += np.transpose(out.grad, inv)
        out._backward = _bw
    return out


def index(a, i: int) -> Tensor:
    """Select entry `i` along axis 0 (keeps the remaining axes)."""
    a = as_tensor(a)
    out = _result(a.data[i], (a,), "index")
    if out.requires_grad:
        def _bw():
            a.grad[i] += out.grad
        out._backward = _bw
    return out


def stack(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise InvalidArgumentError("stack of zero tensors")
    out = _result(np.stack([t.data for t in tensors]), tuple(tensors), "stack")
    if out.requires_grad:
        def _bw():
            for k, t in enumerate(tensors):
                if t.requires_grad:
                    t.grad += out.grad[k]
        out._backward = _bw
    return out


# ------------------------------------------------------------ linear algebra


def matmul(a, b) -> Tensor:
    """2-D @ 2-D or 2-D @ 1-D matrix product."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2):
        raise InvalidArgumentError(
            f"matmul supports (M,K)@(K,N) or (M,K)@(K,), got {a.shape} @ {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise InvalidArgumentError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = _result(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def _bw():
            if b.ndim == 2:
                if a.requires_grad:
                    a.grad += out.grad @ b.data.T
                if b.requires_grad:
                    b.grad += a.data.T @ out.grad
            else:
                if a.requires_grad:
                    a.grad += np.outer(out.grad, b.data)
                if b.requires_grad:
                    b.grad += a.data.T @ out.grad
        out._backward = _bw
    return out


def dot(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise InvalidArgumentError(f"dot needs equal-length vectors, got {a.shape}, {b.shape}")
    val = np.dot(a.data.astype(np.float64), b.data.astype(np.float64))
    out = _result(np.asarray(val, dtype=a.dtype), (a, b), "dot")
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                a.grad += out.grad * b.data
            if b.requires_grad:
                b.grad += out.grad * a.data
        out._backward = _bw
    return out


def norm(a) -> Tensor:
    """Euclidean norm of a vector (float64 accumulation)."""
    a = as_tensor(a)
    if a.ndim != 1:
        raise InvalidArgumentError(f"norm expects a vector, got shape {a.shape}")
    val = np.sqrt(np.sum(a.data.astype(np.float64) ** 2))
    out = _result(np.asarray(val, dtype=a.dtype), (a,), "norm")
    if out.requires_grad:
        def _bw():
            n = float(out.data)
            if n == 0.0:
                raise NumericDomainError("norm", "gradient at the zero vector")
            a.grad += out.grad * a.data / np.asarray(n, dtype=a.dtype)
        out._backward = _bw
    return out


def inverse3(a) -> Tensor:
    """Inverse of a 3x3 matrix.

    The inverse is computed in float64 and cast back. Backward uses
    d(A^-1) pushed through as  dL/dA = -A^-T (dL/dA^-1) A^-T.
    """
    a = as_tensor(a)
    if a.shape != (3, 3):
        raise InvalidArgumentError(f"inverse3 expects (3,3), got {a.shape}")
    inv = np.linalg.inv(a.data.astype(np.float64)).astype(a.dtype)
    out = _result(inv, (a,), "inverse3")
    if out.requires_grad:
        def _bw():
            it = out.data.T
            a.grad += -(it @ out.grad @ it)
        out._backward = _bw
    return out


# ---------------------------------------------------------------- reductions


def tsum(a) -> Tensor:
    a = as_tensor(a)
    val = np.sum(a.data, dtype=np.float64)
    out = _result(np.asarray(val, dtype=a.dtype), (a,), "sum")
    if out.requires_grad:
        def _bw():
            a.grad += out.grad
        out._backward = _bw
    return out


def tmean(a) -> Tensor:
    a = as_tensor(a)
    if a.data.size == 0:
        raise InvalidArgumentError("mean of an empty tensor")
    val = np.sum(a.data, dtype=np.float64) / a.data.size
    out = _result(np.asarray(val, dtype=a.dtype), (a,), "mean")
    if out.requires_grad:
        inv_n = 1.0 / a.data.size
        def _bw():
            a.grad += out.grad * inv_n
        out._backward = _bw
    return out


def weighted_cross_bin(ku, w, kv) -> Tensor:
    """Contract per-pixel bin kernels into a 2-D histogram.

    out[u, v] = sum_i w[i] * ku[i, u] * kv[i, v]

    ku, kv: (n, m) kernel responses; w: (n,) pixel weights. The sum over
    pixels accumulates in float64 (all addends are non-negative in the
    histogram use, so permuting pixels changes the result only at the
    last-bit level).
    """
    ku, w, kv = as_tensor(ku), as_tensor(w), as_tensor(kv)
    n, m = ku.shape
    if w.shape != (n,) or kv.shape != (n, m):
        raise InvalidArgumentError(
            f"weighted_cross_bin shapes: ku {ku.shape}, w {w.shape}, kv {kv.shape}"
        )
    ku64 = ku.data.astype(np.float64)
    kv64 = kv.data.astype(np.float64)
    w64 = w.data.astype(np.float64)
    val = (ku64 * w64[:, None]).T @ kv64
    out = _result(val.astype(ku.dtype), (ku, w, kv), "weighted_cross_bin")
    if out.requires_grad:
        def _bw():
            g = out.grad
            if ku.requires_grad:
                ku.grad += (w.data[:, None] * (kv.data @ g.T)).astype(ku.dtype, copy=False)
            if kv.requires_grad:
                kv.grad += (w.data[:, None] * (ku.data @ g)).astype(kv.dtype, copy=False)
            if w.requires_grad:
                w.grad += np.sum((ku.data @ g) * kv.data, axis=1, dtype=np.float64).astype(
                    w.dtype, copy=False
                )
        out._backward = _bw
    return out


# ------------------------------------------------------------------- layers


def _pair(v):
    return (v, v) if np.isscalar(v) else tuple(v)


def conv2d(x, w, b, stride=1, pad=0) -> Tensor:
    """2-D convolution (cross-correlation) with zero padding.

    x: (N, C, H, W), w: (F, C, kh, kw), b: (F,).
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 4 or w.ndim != 4 or b.ndim != 1:
        raise InvalidArgumentError("conv2d expects x(N,C,H,W), w(F,C,kh,kw), b(F,)")
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if cw != c or b.shape[0] != f:
        raise InvalidArgumentError(f"conv2d channel mismatch: x {x.shape}, w {w.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    if oh < 1 or ow < 1:
        raise InvalidArgumentError(
            f"conv2d output would be empty for input {x.shape}, kernel {(kh, kw)}"
        )

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    st = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(st[0], st[1], st[2], st[3], st[2] * sh, st[3] * sw),
    )
    # (N*oh*ow, C*kh*kw) @ (C*kh*kw, F) in one GEMM
    cols = view.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * kh * kw)
    wmat = w.data.reshape(f, c * kh * kw).T
    om = cols @ wmat
    outv = om.reshape(n, oh, ow, f).transpose(0, 3, 1, 2) + b.data[None, :, None, None]
    out = _result(outv, (x, w, b), "conv2d")
    if out.requires_grad:
        def _bw():
            g = out.grad.transpose(0, 2, 3, 1).reshape(n * oh * ow, f)
            if b.requires_grad:
                b.grad += np.sum(out.grad, axis=(0, 2, 3), dtype=np.float64).astype(
                    b.dtype, copy=False
                )
            if w.requires_grad:
                w.grad += (cols.T @ g).T.reshape(f, c, kh, kw)
            if x.requires_grad:
                dcols = (g @ wmat.T).reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
                dxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw] += dcols[
                            :, :, i, j, :, :
                        ]
                x.grad += dxp[:, :, ph : ph + h, pw : pw + wd]
        out._backward = _bw
    return out


def linear(x, w, b) -> Tensor:
    """Affine layer: x (N, D) @ w (D, K) + b (K,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise InvalidArgumentError("linear expects x(N,D), w(D,K), b(K,)")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise InvalidArgumentError(f"linear shape mismatch: {x.shape} @ {w.shape} + {b.shape}")
    out = _result(x.data @ w.data + b.data, (x, w, b), "linear")
    if out.requires_grad:
        def _bw():
            if x.requires_grad:
                x.grad += out.grad @ w.data.T
            if w.requires_grad:
                w.grad += x.data.T @ out.grad
            if b.requires_grad:
                b.grad += np.sum(out.grad, axis=0, dtype=np.float64).astype(b.dtype, copy=False)
        out._backward = _bw
    return out


# ------------------------------------------------------------- finite check


def gradcheck(build_loss, params, h=1e-4, rtol=1e-3, atol=1e-5):
    """Compare reverse-mode gradients against central finite differences.

    build_loss: zero-argument callable that runs a fresh forward pass and
    returns the scalar loss Tensor (it must read `params` data in place).
    params: tensors to check (should be float64 for meaningful results).

    Returns (ok, worst) where worst describes the largest violation.
    """
    for p in params:
        p.zero_grad()
    loss = build_loss()
    loss.backward()
    analytic = [p.grad.copy() for p in params]

    ok = True
    worst = {"rel": 0.0, "abs": 0.0, "param": None, "index": None}
    for k, p in enumerate(params):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = float(build_loss().data)
            flat[i] = keep - h
            dn = float(build_loss().data)
            flat[i] = keep
            fd = (up - dn) / (2 * h)
            an = float(analytic[k].reshape(-1)[i])
            err = abs(an - fd)
            scale = max(abs(an), abs(fd))
            rel = err / scale if scale > 0 else 0.0
            if err > atol + rtol * scale:
                ok = False
            if rel > worst["rel"] or (rel == worst["rel"] and err > worst["abs"]):
                worst = {"rel": rel, "abs": err, "param": k, "index": i}
    return ok, worst

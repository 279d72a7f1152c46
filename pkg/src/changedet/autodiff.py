"""Minimal reverse-mode autodiff over numpy arrays.

Everything else in the package is built from the primitives here: a
``Tensor`` wrapping an ndarray plus a backward closure, ``Parameter`` for
trainable values, and a small ``Module`` container for parameter trees.
Forward math runs in whatever dtype the inputs carry; float32 is the
training default and float64 is used for finite-difference checks.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """Raised on non-finite inputs where finiteness is a precondition."""


class ContractError(RuntimeError):
    """Raised when an operation is used outside its contract."""


def _as_array(data, dtype=None) -> np.ndarray:
    if dtype is not None:
        return np.ascontiguousarray(data, dtype=dtype)
    if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
        return np.ascontiguousarray(data)
    return np.ascontiguousarray(data, dtype=DEFAULT_DTYPE)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcast when producing it."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """N-dimensional array with an optional gradient.

    Treated as immutable after construction except for ``grad``
    accumulation; the backward pass is single threaded per graph.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    # -- construction -------------------------------------------------

    @staticmethod
    def zeros(shape, dtype=None, requires_grad=False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype or DEFAULT_DTYPE), requires_grad)

    @staticmethod
    def ones(shape, dtype=None, requires_grad=False) -> "Tensor":
        return Tensor(np.ones(shape, dtype=dtype or DEFAULT_DTYPE), requires_grad)

    # -- bookkeeping ---------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        """Backpropagate from a scalar; grads accumulate additively."""
        if self.data.size != 1:
            raise ContractError(
                f"backward() requires a scalar loss, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node.requires_grad and node._parents == ():
                node._accumulate(grad)
            if node._backward is not None:
                node._backward(grad, grads)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- operators -----------------------------------------------------

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

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self):
        return transpose(self)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def abs(self):
        return tabs(self)


class Parameter(Tensor):
    """Trainable tensor with a checkpoint name (unique within a model)."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name


class Module:
    """Container that tracks parameters and submodules by attribute name."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._modules[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> Iterable[tuple[str, Parameter]]:
        for key, param in self._params.items():
            yield (f"{prefix}{key}", param)
        for key, mod in self._modules.items():
            yield from mod.named_parameters(prefix=f"{prefix}{key}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def assign_names(self, prefix: str = "") -> None:
        """Stamp hierarchical checkpoint names onto every parameter."""
        for name, param in self.named_parameters(prefix):
            param.name = name


class ModuleList(Module):
    def __init__(self, mods: Sequence[Module] = ()):
        super().__init__()
        self._items: list[Module] = []
        for mod in mods:
            self.append(mod)

    def append(self, mod: Module) -> None:
        setattr(self, str(len(self._items)), mod)
        self._items.append(mod)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


TensorLike = Union[Tensor, np.ndarray, float, int]


def _wrap(x: TensorLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _make(out_data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _send(grads: dict, node: Tensor, grad: np.ndarray) -> None:
    if not node.requires_grad:
        return
    key = id(node)
    if key in grads:
        grads[key] = grads[key] + grad
    else:
        grads[key] = grad


# -- elementwise ops -----------------------------------------------------


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, like=a)
    out_data = a.data + b.data

    def backward(grad, grads):
        _send(grads, a, _unbroadcast(grad, a.shape))
        _send(grads, b, _unbroadcast(grad, b.shape))

    return _make(out_data, (a, b), backward)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, like=a)
    out_data = a.data - b.data

    def backward(grad, grads):
        _send(grads, a, _unbroadcast(grad, a.shape))
        _send(grads, b, _unbroadcast(-grad, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, like=a)
    out_data = a.data * b.data

    def backward(grad, grads):
        _send(grads, a, _unbroadcast(grad * b.data, a.shape))
        _send(grads, b, _unbroadcast(grad * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, like=a)
    out_data = a.data / b.data

    def backward(grad, grads):
        _send(grads, a, _unbroadcast(grad / b.data, a.shape))
        _send(grads, b, _unbroadcast(-grad * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), backward)


def tabs(x: Tensor) -> Tensor:
    # subgradient at 0 is defined as 0
    sign = np.sign(x.data)
    out_data = np.abs(x.data)

    def backward(grad, grads):
        _send(grads, x, grad * sign)

    return _make(out_data, (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out_data = np.where(mask, x.data, 0)

    def backward(grad, grads):
        _send(grads, x, grad * mask)

    return _make(out_data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign for stability at large |x|
    d = x.data
    out_data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                        np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out_data = out_data.astype(d.dtype, copy=False)

    def backward(grad, grads):
        _send(grads, x, grad * out_data * (1.0 - out_data))

    return _make(out_data, (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    out_data = np.sqrt(x.data)

    def backward(grad, grads):
        _send(grads, x, grad * 0.5 / out_data)

    return _make(out_data, (x,), backward)


def log(x: Tensor) -> Tensor:
    out_data = np.log(x.data)

    def backward(grad, grads):
        _send(grads, x, grad / x.data)

    return _make(out_data, (x,), backward)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    out_data = np.clip(x.data, lo, hi)
    mask = (x.data > lo) & (x.data < hi)

    def backward(grad, grads):
        _send(grads, x, grad * mask)

    return _make(out_data, (x,), backward)


# -- shape ops ------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    if isinstance(shape, int):
        shape = (shape,)
    old_shape = x.shape
    out_data = np.ascontiguousarray(x.data.reshape(shape))

    def backward(grad, grads):
        _send(grads, x, grad.reshape(old_shape))

    return _make(out_data, (x,), backward)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got shape {x.shape}")
    out_data = np.ascontiguousarray(x.data.T)

    def backward(grad, grads):
        _send(grads, x, np.ascontiguousarray(grad.T))

    return _make(out_data, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    extents = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + extents)

    def backward(grad, grads):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * grad.ndim
            sl[axis] = slice(lo, hi)
            _send(grads, t, np.ascontiguousarray(grad[tuple(sl)]))

    return _make(out_data, tuple(tensors), backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    if not (0 <= start and start + length <= x.shape[axis]):
        raise ShapeError(f"narrow [{start}:{start + length}] out of range for axis {axis} of {x.shape}")
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, start + length)
    out_data = np.ascontiguousarray(x.data[tuple(sl)])

    def backward(grad, grads):
        g = np.zeros_like(x.data)
        g[tuple(sl)] = grad
        _send(grads, x, g)

    return _make(out_data, (x,), backward)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = x.data.sum(axis=axis, keepdims=keepdims)
    out_data = np.asarray(out_data)

    def backward(grad, grads):
        g = np.asarray(grad)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _send(grads, x, np.broadcast_to(g, x.shape).copy())

    return _make(out_data, (x,), backward)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= x.shape[ax]
    return mul(tsum(x, axis, keepdims), 1.0 / count)


# -- linear algebra --------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def backward(grad, grads):
        _send(grads, a, grad @ b.data.T)
        _send(grads, b, a.data.T @ grad)

    return _make(out_data, (a, b), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of an R x C tensor, stabilized by max subtraction."""
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-D tensor, got shape {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax_rows received non-finite input")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=1, keepdims=True)

    def backward(grad, grads):
        inner = (grad * out_data).sum(axis=1, keepdims=True)
        _send(grads, x, out_data * (grad - inner))

    return _make(out_data, (x,), backward)


# -- convolution, resize, pooling ------------------------------------------


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of a C_in x H x W map with a C_out x C_in x k x k kernel."""
    if x.ndim != 3 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects CHW input and OIkk kernel, got {x.shape} and {kernel.shape}")
    c_in, h, w = x.shape
    c_out, kc_in, kh, kw = kernel.shape
    if kh != kw or kh not in (1, 3):
        raise ShapeError(f"conv2d supports square 1x1 or 3x3 kernels, got {kh}x{kw}")
    if kc_in != c_in:
        raise ShapeError(f"conv2d channel mismatch: input has {c_in}, kernel expects {kc_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match {c_out} output channels")

    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.shape}, k={kh}, stride={stride}, padding={padding}")

    if padding:
        xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data

    # im2col: one BLAS product instead of per-offset accumulation
    cols = np.empty((c_in * kh * kw, h_out * w_out), dtype=x.data.dtype)
    row = 0
    for ci in range(c_in):
        for di in range(kh):
            for dj in range(kw):
                cols[row] = xp[ci, di:di + stride * h_out:stride,
                               dj:dj + stride * w_out:stride].reshape(-1)
                row += 1
    kmat = kernel.data.reshape(c_out, c_in * kh * kw)
    out_data = (kmat @ cols).reshape(c_out, h_out, w_out)
    if bias is not None:
        out_data += bias.data[:, None, None]

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(grad, grads):
        gflat = grad.reshape(c_out, h_out * w_out)
        if bias is not None:
            _send(grads, bias, gflat.sum(axis=1))
        _send(grads, kernel, (gflat @ cols.T).reshape(kernel.shape))
        gcols = kmat.T @ gflat
        gxp = np.zeros_like(xp)
        row = 0
        for ci in range(c_in):
            for di in range(kh):
                for dj in range(kw):
                    gxp[ci, di:di + stride * h_out:stride,
                        dj:dj + stride * w_out:stride] += gcols[row].reshape(h_out, w_out)
                    row += 1
        if padding:
            gxp = gxp[:, padding:-padding, padding:-padding]
        _send(grads, x, np.ascontiguousarray(gxp))

    return _make(out_data, parents, backward)


@lru_cache(maxsize=256)
def _resize_matrix(src: int, dst: int) -> np.ndarray:
    """dst x src interpolation weights with half-pixel sample centers."""
    mat = np.zeros((dst, src), dtype=np.float64)
    scale = src / dst
    for i in range(dst):
        pos = (i + 0.5) * scale - 0.5
        pos = min(max(pos, 0.0), src - 1.0)
        i0 = int(np.floor(pos))
        i1 = min(i0 + 1, src - 1)
        frac = pos - i0
        mat[i, i0] += 1.0 - frac
        mat[i, i1] += frac
    return mat


def bilinear_resize(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Resize a C x H x W map with half-pixel-center bilinear sampling."""
    if x.ndim != 3:
        raise ShapeError(f"bilinear_resize expects a CHW tensor, got shape {x.shape}")
    h_out, w_out = int(size[0]), int(size[1])
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"bilinear_resize target must be positive, got {size}")
    _, h, w = x.shape
    ry = _resize_matrix(h, h_out).astype(x.data.dtype)
    rx = _resize_matrix(w, w_out).astype(x.data.dtype)
    out_data = np.matmul(np.matmul(ry, x.data), rx.T)

    def backward(grad, grads):
        _send(grads, x, np.matmul(np.matmul(ry.T, grad), rx))

    return _make(out_data, (x,), backward)


def resize_array(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Plain-ndarray counterpart of bilinear_resize (no graph)."""
    h_out, w_out = int(size[0]), int(size[1])
    _, h, w = arr.shape
    ry = _resize_matrix(h, h_out).astype(arr.dtype)
    rx = _resize_matrix(w, w_out).astype(arr.dtype)
    return np.matmul(np.matmul(ry, arr), rx.T)


def nearest_resize_array(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize of an H x W array, half-pixel centers."""
    h_out, w_out = int(size[0]), int(size[1])
    h, w = arr.shape
    rows = np.clip(np.round((np.arange(h_out) + 0.5) * h / h_out - 0.5), 0, h - 1).astype(int)
    cols = np.clip(np.round((np.arange(w_out) + 0.5) * w / w_out - 0.5), 0, w - 1).astype(int)
    return arr[np.ix_(rows, cols)]


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean of a C x H x W map."""
    if x.ndim != 3:
        raise ShapeError(f"global_avg_pool expects a CHW tensor, got shape {x.shape}")
    _, h, w = x.shape
    out_data = x.data.mean(axis=(1, 2))

    def backward(grad, grads):
        g = np.broadcast_to(grad[:, None, None] / (h * w), x.shape)
        _send(grads, x, g.astype(x.data.dtype, copy=False).copy())

    return _make(out_data, (x,), backward)

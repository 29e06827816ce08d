"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tape`` records every tracked operation in execution order; ``Tape.backward``
replays the records in exact reverse order and accumulates gradients additively
into the inputs. Arrays default to float32; a graph built from float64 leaves
stays float64 (the finite-difference checker relies on this).
"""

from __future__ import annotations

import numpy as np

_TAPES: list["Tape"] = []


class Tensor:
    """Array value plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "_tracked")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        # float64 survives only when handed in as a numpy value (gradient
        # checks); python scalars and everything else become float32 so
        # constants cannot promote a float32 graph
        if isinstance(data, (np.ndarray, np.floating)) and data.dtype in (np.float32, np.float64):
            arr = np.asarray(data)
        else:
            arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.grad = None
        self._tracked = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return self.data.item()

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """Same values, cut from the graph (stop-gradient)."""
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, tracked={self._tracked})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of executed ops; replayed in reverse for gradients."""

    def __init__(self):
        self._ops: list[tuple[Tensor, object]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPES.pop()
        if popped is not self:
            raise RuntimeError("tape stack corrupted")
        return False

    def __len__(self):
        return len(self._ops)

    def backward(self, loss: Tensor):
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self._ops):
            if out.grad is not None:
                fn(out.grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs, backward) -> Tensor:
    if _TAPES and any(t._tracked for t in inputs):
        out._tracked = True
        _TAPES[-1]._ops.append((out, backward))
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t._tracked:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g back down to `shape` after a numpy broadcast."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _record(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _record(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data / b.data)

    def backward(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * out.data / b.data, b.data.shape))

    return _record(out, (a, b), backward)


# ---------------------------------------------------------------------------
# pointwise nonlinearities
# ---------------------------------------------------------------------------

def elu(x) -> Tensor:
    x = _as_tensor(x)
    neg = np.expm1(np.minimum(x.data, 0.0))
    out = Tensor(np.where(x.data > 0, x.data, neg))

    def backward(g):
        _accum(x, g * np.where(x.data > 0, 1.0, neg + 1.0))

    return _record(out, (x,), backward)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    z = np.clip(x.data, -60.0, 60.0)
    out = Tensor(np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z))))

    def backward(g):
        _accum(x, g * out.data * (1.0 - out.data))

    return _record(out, (x,), backward)


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.tanh(x.data))

    def backward(g):
        _accum(x, g * (1.0 - out.data * out.data))

    return _record(out, (x,), backward)


def softplus(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.logaddexp(np.zeros((), dtype=x.data.dtype), x.data))

    def backward(g):
        z = np.clip(x.data, -60.0, 60.0)
        s = np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))
        _accum(x, g * s)

    return _record(out, (x,), backward)


def square(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data * x.data)

    def backward(g):
        _accum(x, g * 2.0 * x.data)

    return _record(out, (x,), backward)


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.exp(x.data))

    def backward(g):
        _accum(x, g * out.data)

    return _record(out, (x,), backward)


def log(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.log(x.data))

    def backward(g):
        _accum(x, g / x.data)

    return _record(out, (x,), backward)


# ---------------------------------------------------------------------------
# shape manipulation and reductions
# ---------------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.reshape(shape))

    def backward(g):
        _accum(x, g.reshape(x.data.shape))

    return _record(out, (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(ts, np.split(g, offsets, axis=axis)):
            _accum(t, piece)

    return _record(out, ts, backward)


def slice_rows(x, start: int, stop: int) -> Tensor:
    """Contiguous row range along axis 0."""
    x = _as_tensor(x)
    out = Tensor(x.data[start:stop])

    def backward(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        _accum(x, full)

    return _record(out, (x,), backward)


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, x.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(gg, x.data.shape).copy())

    return _record(out, (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    if axis is None:
        n = x.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([x.data.shape[a] for a in axis]))
    else:
        n = x.data.shape[axis]
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _record(out, (a, b), backward)


def affine(x, w, b) -> Tensor:
    """x[B,I] @ w[I,O] + b[O]."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"affine shape mismatch: x {x.data.shape} vs w {w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ValueError(f"affine bias shape {b.data.shape} vs w {w.data.shape}")
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# 1-D convolutions (same-style padding: pad total K-1, L_out = ceil(L/stride))
# ---------------------------------------------------------------------------

def _conv_geometry(length: int, kernel: int, stride: int):
    if kernel % 2 != 1:
        raise ValueError(f"conv kernel size must be odd, got {kernel}")
    if stride < 1:
        raise ValueError(f"conv stride must be positive, got {stride}")
    pad_left = (kernel - 1) // 2
    pad_right = kernel - 1 - pad_left
    out_len = -(-length // stride)
    return pad_left, pad_right, out_len


def conv1d(x, kernels, stride: int = 1, bias=None) -> Tensor:
    """Cross-correlation of x[B,Ci,L] with kernels[Co,Ci,K] -> [B,Co,ceil(L/stride)]."""
    x, w = _as_tensor(x), _as_tensor(kernels)
    if x.data.ndim != 3 or w.data.ndim != 3 or x.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"conv1d shape mismatch: x {x.data.shape} vs kernels {w.data.shape}")
    B, Ci, L = x.data.shape
    Co, _, K = w.data.shape
    pad_l, pad_r, Lout = _conv_geometry(L, K, stride)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad_l, pad_r)))
    idx = np.arange(Lout)[:, None] * stride + np.arange(K)[None, :]
    win = xp[:, :, idx]  # [B,Ci,Lout,K]
    out_data = np.einsum("bilk,oik->bol", win, w.data, optimize=True)
    inputs = [x, w]
    if bias is not None:
        b = _as_tensor(bias)
        if b.data.shape != (Co,):
            raise ValueError(f"conv1d bias shape {b.data.shape}, expected ({Co},)")
        out_data = out_data + b.data[:, None]
        inputs.append(b)
    else:
        b = None
    out = Tensor(out_data)

    def backward(g):
        _accum(w, np.einsum("bilk,bol->oik", win, g, optimize=True))
        if x._tracked:
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[:, :, k : k + stride * Lout : stride] += np.einsum(
                    "bol,oi->bil", g, w.data[:, :, k], optimize=True
                )
            _accum(x, gxp[:, :, pad_l : pad_l + L])
        if b is not None:
            _accum(b, g.sum(axis=(0, 2)))

    return _record(out, inputs, backward)


def conv1d_transpose(x, kernels, out_length: int, stride: int = 1, bias=None) -> Tensor:
    """Adjoint of conv1d with the same padding rule: x[B,Co,M] -> [B,Ci,out_length]."""
    x, w = _as_tensor(x), _as_tensor(kernels)
    if x.data.ndim != 3 or w.data.ndim != 3 or x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"conv1d_transpose shape mismatch: x {x.data.shape} vs kernels {w.data.shape}")
    B, Co, M = x.data.shape
    _, Ci, K = w.data.shape
    pad_l, pad_r, expect = _conv_geometry(out_length, K, stride)
    if expect != M:
        raise ValueError(
            f"conv1d_transpose: declared output length {out_length} maps to {expect} "
            f"steps at stride {stride}, but input has length {M}"
        )
    padded = np.zeros((B, Ci, out_length + K - 1), dtype=x.data.dtype)
    for k in range(K):
        padded[:, :, k : k + stride * M : stride] += np.einsum(
            "bom,oi->bim", x.data, w.data[:, :, k], optimize=True
        )
    out_data = padded[:, :, pad_l : pad_l + out_length]
    inputs = [x, w]
    if bias is not None:
        b = _as_tensor(bias)
        if b.data.shape != (Ci,):
            raise ValueError(f"conv1d_transpose bias shape {b.data.shape}, expected ({Ci},)")
        out_data = out_data + b.data[:, None]
        inputs.append(b)
    else:
        b = None
    out = Tensor(out_data)
    idx = np.arange(M)[:, None] * stride + np.arange(K)[None, :]

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (pad_l, pad_r)))
        gwin = gp[:, :, idx]  # [B,Ci,M,K]
        _accum(x, np.einsum("bimk,oik->bom", gwin, w.data, optimize=True))
        _accum(w, np.einsum("bimk,bom->oik", gwin, x.data, optimize=True))
        if b is not None:
            _accum(b, g.sum(axis=(0, 2)))

    return _record(out, inputs, backward)


# ---------------------------------------------------------------------------
# recurrent cell and stochastic sampling
# ---------------------------------------------------------------------------

def gru_cell(h, x, params: dict) -> Tensor:
    """Gated recurrent update of h[B,H] from input x[B,M].

    params: wz/bz update gate, wr/br reset gate, wn/bn candidate; gate weights
    act on [h;x], the candidate on [r*h;x].
    """
    h, x = _as_tensor(h), _as_tensor(x)
    hx = concat([h, x], axis=1)
    z = sigmoid(affine(hx, params["wz"], params["bz"]))
    r = sigmoid(affine(hx, params["wr"], params["br"]))
    n = tanh(affine(concat([mul(r, h), x], axis=1), params["wn"], params["bn"]))
    return add(mul(z, h), mul(sub(1.0, z), n))


def sample_gaussian(mean, stddev, rng: np.random.Generator) -> Tensor:
    """Reparameterized sample mean + eps*stddev with eps ~ N(0, I)."""
    mean, stddev = _as_tensor(mean), _as_tensor(stddev)
    if np.any(stddev.data <= 0):
        raise ValueError(f"sample_gaussian: non-positive stddev (min {stddev.data.min()})")
    eps = rng.standard_normal(mean.data.shape).astype(mean.data.dtype)
    return add(mean, mul(stddev, Tensor(eps)))

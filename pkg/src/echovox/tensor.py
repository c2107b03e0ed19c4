"""Minimal reverse-mode autodiff over numpy arrays.

Implements exactly the operators the two networks need: 2-D/1-D
convolution, stride-2 transposed convolution, dense layers, leaky
rectifier, dropout, batch normalization, pairwise max pooling, channel
concatenation and mean-squared error.  Each operator records a backward
closure on the output tensor; Tensor.backward() replays them in reverse
topological order.

Values are float32 for training and inference.  The finite-difference
oracle (gradcheck module) builds float64 tensors instead; operators
preserve the dtype of their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import RngStream

_FLOAT_DTYPES = (np.float32, np.float64)

# toggled by no_grad(); when False no backward closures are recorded
_grad_enabled = True


class no_grad:
    """Context manager disabling graph construction (inference paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class Tensor:
    """N-dimensional float array with an optional gradient.

    data is kept row-major; dims is the shape tuple.  grad, once
    populated by backward(), always has the same shape as data.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _FLOAT_DTYPES:
            raise TypeError(f"tensor dtype must be float32/float64, got {arr.dtype}")
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    # --- introspection -------------------------------------------------

    @property
    def dims(self) -> tuple:
        return self.data.shape

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

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.dims}, requires_grad={self.requires_grad})"

    # --- graph plumbing -------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Reverse-mode sweep from a scalar tensor."""
        if self.size != 1:
            raise ValueError(f"backward() needs a scalar tensor, got shape {self.dims}")
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        self.grad = np.ones_like(self.data)
        for t in reversed(topo):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    # --- movement ops ---------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _result(np.reshape(self.data, shape), (self,))
        if out._tracked():
            src_shape = self.dims

            def bwd(g):
                self._accumulate(g.reshape(src_shape))

            out._backward = bwd
        return out

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        axes = axes or tuple(reversed(range(self.ndim)))
        out = _result(np.transpose(self.data, axes), (self,))
        if out._tracked():
            inv = np.argsort(axes)

            def bwd(g):
                self._accumulate(np.transpose(g, inv))

            out._backward = bwd
        return out

    def __mul__(self, other) -> "Tensor":
        """Multiply by a constant scalar or array (no gradient to the constant)."""
        c = np.asarray(other, dtype=self.data.dtype)
        out = _result(self.data * c, (self,))
        if out._tracked():

            def bwd(g):
                gx = g * c
                # undo broadcasting, if any
                if gx.shape != self.dims:
                    extra = gx.ndim - self.ndim
                    gx = gx.sum(axis=tuple(range(extra)))
                    keep = tuple(i for i, n in enumerate(self.dims) if n == 1 and gx.shape[i] != 1)
                    if keep:
                        gx = gx.sum(axis=keep, keepdims=True)
                self._accumulate(gx)

            out._backward = bwd
        return out

    __rmul__ = __mul__

    def _tracked(self) -> bool:
        return self.requires_grad


def _result(data: np.ndarray, parents: tuple) -> Tensor:
    """Build an op output; track it only when grad mode is on and needed."""
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(data)
    out.grad = None
    out._backward = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    else:
        out.requires_grad = False
        out._parents = ()
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# batch-normalization running statistics (buffers, not parameters)
# ---------------------------------------------------------------------------


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def zeros(cls, channels: int, dtype=np.float32) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))

    def copy(self) -> "RunningStats":
        return RunningStats(self.mean.copy(), self.var.copy())


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def _promote(x: Tensor, want_ndim: int):
    """Add a leading batch axis when the input is a single sample."""
    if x.ndim == want_ndim:
        return x.data[None], True
    if x.ndim == want_ndim + 1:
        return x.data, False
    raise ShapeError(f"expected {want_ndim}-d or {want_ndim + 1}-d input, got shape {x.dims}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution, input [Cin,H,W] or [B,Cin,H,W], weight [Cout,Cin,kh,kw]."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    xb, squeeze = _promote(x, 3)
    B, Cin, H, W = xb.shape
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be 4-d [Cout,Cin,kh,kw], got {weight.dims}")
    Cout, Cw, kh, kw = weight.dims
    if Cw != Cin:
        raise ShapeError(f"conv2d channel mismatch: input has Cin={Cin}, weight expects Cin={Cw}")
    if bias.dims != (Cout,):
        raise ShapeError(f"conv2d bias must have shape ({Cout},), got {bias.dims}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if H + 2 * pad < kh or W + 2 * pad < kw:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {H + 2 * pad}x{W + 2 * pad}")

    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xb
    # im2col: [B,Cin,Ho,Wo,kh,kw] view -> [B*Ho*Wo, Cin*kh*kw]
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    view = view[:, :, ::stride, ::stride]
    cols = view.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, Cin * kh * kw)
    wmat = weight.data.reshape(Cout, Cin * kh * kw)
    out = cols @ wmat.T + bias.data
    out = out.reshape(B, Ho, Wo, Cout).transpose(0, 3, 1, 2)

    res = _result(out[0] if squeeze else out, (x, weight, bias))
    if res._tracked():

        def bwd(g):
            gb = g[None] if squeeze else g
            gcols = gb.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, Cout)
            if bias.requires_grad:
                bias._accumulate(gcols.sum(axis=0))
            if weight.requires_grad:
                weight._accumulate((gcols.T @ cols).reshape(weight.dims))
            if x.requires_grad:
                dcols = (gcols @ wmat).reshape(B, Ho, Wo, Cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
                dxp = np.zeros((B, Cin, H + 2 * pad, W + 2 * pad), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += dcols[:, :, i, j]
                dx = dxp[:, :, pad:pad + H, pad:pad + W] if pad else dxp
                x._accumulate(dx[0] if squeeze else dx)

        res._backward = bwd
    return res


def conv1d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """1-D convolution with "same" zero padding, input [Cin,T] or [B,Cin,T].

    Pads ceil((k-1)/2) zeros on the left and floor((k-1)/2) on the right,
    so the time length is preserved for every kernel size and an even
    kernel leans on past samples (hand convolution with a left zero-pad).
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    xb, squeeze = _promote(x, 2)
    B, Cin, T = xb.shape
    if weight.ndim != 3:
        raise ShapeError(f"conv1d weight must be 3-d [Cout,Cin,k], got {weight.dims}")
    Cout, Cw, k = weight.dims
    if Cw != Cin:
        raise ShapeError(f"conv1d channel mismatch: input has Cin={Cin}, weight expects Cin={Cw}")
    if bias.dims != (Cout,):
        raise ShapeError(f"conv1d bias must have shape ({Cout},), got {bias.dims}")
    pl, pr = k - 1 - (k - 1) // 2, (k - 1) // 2
    if k > T + pl + pr:
        raise ShapeError(f"kernel size {k} exceeds padded length {T + pl + pr}")

    xp = np.pad(xb, ((0, 0), (0, 0), (pl, pr)))
    view = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # [B,Cin,T,k]
    cols = view.transpose(0, 2, 1, 3).reshape(B * T, Cin * k)
    wmat = weight.data.reshape(Cout, Cin * k)
    out = (cols @ wmat.T + bias.data).reshape(B, T, Cout).transpose(0, 2, 1)

    res = _result(out[0] if squeeze else out, (x, weight, bias))
    if res._tracked():

        def bwd(g):
            gb = g[None] if squeeze else g
            gcols = gb.transpose(0, 2, 1).reshape(B * T, Cout)
            if bias.requires_grad:
                bias._accumulate(gcols.sum(axis=0))
            if weight.requires_grad:
                weight._accumulate((gcols.T @ cols).reshape(weight.dims))
            if x.requires_grad:
                dcols = (gcols @ wmat).reshape(B, T, Cin, k).transpose(0, 2, 3, 1)
                dxp = np.zeros((B, Cin, T + pl + pr), dtype=g.dtype)
                for j in range(k):
                    dxp[:, :, j:j + T] += dcols[:, :, j]
                x._accumulate(dxp[0, :, pl:pl + T] if squeeze else dxp[:, :, pl:pl + T])

        res._backward = bwd
    return res


def deconv1d(x: Tensor, weight: Tensor) -> Tensor:
    """Transposed 1-D convolution, kernel 2 / stride 2: exact 2x upsampling.

    Each input element scatters weight*value into its two output slots,
    so input [C,T] (or [B,C,T]) becomes [Cout,2T].
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    xb, squeeze = _promote(x, 2)
    B, C, T = xb.shape
    if weight.ndim != 3 or weight.dims[2] != 2:
        raise ShapeError(f"deconv1d weight must be [Cout,Cin,2], got {weight.dims}")
    Cout, Cw, _ = weight.dims
    if Cw != C:
        raise ShapeError(f"deconv1d channel mismatch: input has C={C}, weight expects Cin={Cw}")

    out = np.einsum("ocj,bct->botj", weight.data, xb).reshape(B, Cout, 2 * T)
    res = _result(out[0] if squeeze else out, (x, weight))
    if res._tracked():

        def bwd(g):
            gb = (g[None] if squeeze else g).reshape(B, Cout, T, 2)
            if weight.requires_grad:
                weight._accumulate(np.einsum("botj,bct->ocj", gb, xb))
            if x.requires_grad:
                dx = np.einsum("ocj,botj->bct", weight.data, gb)
                x._accumulate(dx[0] if squeeze else dx)

        res._backward = bwd
    return res


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine layer: weight [M,N] @ input [N] + bias [M] (batched: [B,N] -> [B,M])."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    xb, squeeze = _promote(x, 1)
    B, N = xb.shape
    if weight.ndim != 2:
        raise ShapeError(f"dense weight must be 2-d [M,N], got {weight.dims}")
    M, Nw = weight.dims
    if Nw != N:
        raise ShapeError(f"dense shape mismatch: input has N={N}, weight expects N={Nw}")
    if bias.dims != (M,):
        raise ShapeError(f"dense bias must have shape ({M},), got {bias.dims}")

    out = xb @ weight.data.T + bias.data
    res = _result(out[0] if squeeze else out, (x, weight, bias))
    if res._tracked():

        def bwd(g):
            gb = g[None] if squeeze else g
            if bias.requires_grad:
                bias._accumulate(gb.sum(axis=0))
            if weight.requires_grad:
                weight._accumulate(gb.T @ xb)
            if x.requires_grad:
                dx = gb @ weight.data
                x._accumulate(dx[0] if squeeze else dx)

        res._backward = bwd
    return res


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    """Elementwise x if x >= 0 else alpha*x."""
    x = _as_tensor(x)
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must be in [0,1), got {alpha}")
    mask = x.data >= 0
    out = np.where(mask, x.data, alpha * x.data)
    res = _result(out, (x,))
    if res._tracked():

        def bwd(g):
            x._accumulate(np.where(mask, g, alpha * g))

        res._backward = bwd
    return res


def dropout(x: Tensor, p: float, rng: RngStream, training: bool) -> Tensor:
    """Zero each element with probability p, scaling survivors by 1/(1-p).

    Identity at inference.  The mask comes from the given rng stream, so
    a recreated stream reproduces the exact same mask sequence.
    """
    x = _as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0,1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.uniform(size=x.dims) >= p).astype(x.data.dtype)
    scale = keep / np.asarray(1.0 - p, dtype=x.data.dtype)
    out = x.data * scale
    res = _result(out, (x,))
    if res._tracked():

        def bwd(g):
            x._accumulate(g * scale)

        res._backward = bwd
    return res


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, stats: RunningStats,
              training: bool, eps: float = 1e-5, momentum: float = 0.9) -> Tensor:
    """Batch normalization over the batch (and any trailing spatial axes).

    x is [B], [B,C], [B,C,T] or [B,C,H,W]; statistics are per channel
    (axis 1; a bare [B] input is treated as one channel).  In training
    the batch mean/variance normalize and the running stats are updated
    with the given momentum (keep rate); at inference the running stats
    are used.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.ndim == 0:
        raise ShapeError("batchnorm input must have a batch axis")
    xb = x.data if x.ndim > 1 else x.data[:, None]
    B = xb.shape[0]
    C = xb.shape[1]
    if gamma.dims != (C,) or beta.dims != (C,):
        raise ShapeError(f"gamma/beta must have shape ({C},), got {gamma.dims}/{beta.dims}")
    axes = (0,) + tuple(range(2, xb.ndim))
    shape = (1, C) + (1,) * (xb.ndim - 2)

    if training:
        if B < 2:
            raise ValueError(f"batchnorm in training needs batch size >= 2, got {B}")
        mean = xb.mean(axis=axes)
        var = xb.var(axis=axes)  # biased, matches the normalization below
        stats.mean[:] = momentum * stats.mean + (1.0 - momentum) * mean
        stats.var[:] = momentum * stats.var + (1.0 - momentum) * var
    else:
        mean = stats.mean.astype(xb.dtype)
        var = stats.var.astype(xb.dtype)

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xb - mean.reshape(shape)) * inv.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)
    out = out.reshape(x.dims)

    res = _result(out, (x, gamma, beta))
    if res._tracked():
        n = xb.size // C  # elements reduced per channel

        def bwd(g):
            gb = g.reshape(xb.shape)
            if beta.requires_grad:
                beta._accumulate(gb.sum(axis=axes))
            if gamma.requires_grad:
                gamma._accumulate((gb * xhat).sum(axis=axes))
            if x.requires_grad:
                dxhat = gb * gamma.data.reshape(shape)
                if training:
                    # gradient through the batch statistics
                    t1 = dxhat.sum(axis=axes, keepdims=True)
                    t2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
                    dx = (dxhat - t1 / n - xhat * t2 / n) * inv.reshape(shape)
                else:
                    dx = dxhat * inv.reshape(shape)
                x._accumulate(dx.reshape(x.dims))

        res._backward = bwd
    return res


def maxpool1d(x: Tensor) -> Tensor:
    """Non-overlapping pairwise max over time (stride 2), input [C,T] or [B,C,T]."""
    x = _as_tensor(x)
    xb, squeeze = _promote(x, 2)
    B, C, T = xb.shape
    if T % 2 != 0:
        raise ShapeError(f"maxpool1d needs an even time length, got T={T}")
    pairs = xb.reshape(B, C, T // 2, 2)
    # argmax picks the first element on ties -> deterministic gradient routing
    idx = pairs.argmax(axis=3)
    out = np.take_along_axis(pairs, idx[..., None], axis=3)[..., 0]

    res = _result(out[0] if squeeze else out, (x,))
    if res._tracked():

        def bwd(g):
            gb = g[None] if squeeze else g
            dpairs = np.zeros_like(pairs)
            np.put_along_axis(dpairs, idx[..., None], gb[..., None], axis=3)
            dx = dpairs.reshape(B, C, T)
            x._accumulate(dx[0] if squeeze else dx)

        res._backward = bwd
    return res


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Channel-axis concatenation of [Ca,T] and [Cb,T] (or batched)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != b.ndim or a.ndim not in (2, 3):
        raise ShapeError(f"concat expects two 2-d or two 3-d tensors, got {a.dims} and {b.dims}")
    axis = a.ndim - 2
    if a.dims[-1] != b.dims[-1]:
        raise ShapeError(f"concat time mismatch: {a.dims[-1]} vs {b.dims[-1]}")
    if a.ndim == 3 and a.dims[0] != b.dims[0]:
        raise ShapeError(f"concat batch mismatch: {a.dims[0]} vs {b.dims[0]}")
    Ca = a.dims[axis]
    out = np.concatenate([a.data, b.data], axis=axis)
    res = _result(out, (a, b))
    if res._tracked():

        def bwd(g):
            ga, gb = np.split(g, [Ca], axis=axis)
            if a.requires_grad:
                a._accumulate(ga)
            if b.requires_grad:
                b._accumulate(gb)

        res._backward = bwd
    return res


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of the squared difference (scalar tensor)."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.dims != target.dims:
        raise ShapeError(f"mse shape mismatch: {pred.dims} vs {target.dims}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).mean(), dtype=pred.data.dtype)
    res = _result(out, (pred, target))
    if res._tracked():

        def bwd(g):
            scale = 2.0 * g / n
            if pred.requires_grad:
                pred._accumulate(scale * diff)
            if target.requires_grad:
                target._accumulate(-scale * diff)

        res._backward = bwd
    return res

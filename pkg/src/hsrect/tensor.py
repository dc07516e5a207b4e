"""Dense tensor arithmetic with a scoped reverse-mode gradient tape.

Covers exactly the primitives the rectifier network and its losses need:
grouped/dilated 2-D convolution, GeLU/sigmoid, axis average-pooling,
broadcast arithmetic, channel permutation/concat/slice, fixed separable
linear maps (the differentiable downsampler) and full reductions.

All compute is float64; anything cheaper belongs at the file I/O boundary.
Every operation is a pure function of its inputs and records itself on the
active tape (if any), so concurrent evaluation on disjoint data is safe.
"""

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "smul",
    "component",
    "activation",
    "gelu",
    "sigmoid",
    "conv2d",
    "avgpool_axes",
    "broadcast_mul",
    "permute_channels",
    "concat_channels",
    "slice_channels",
    "pad_channels_replicate",
    "linmap2d",
    "clamp01",
    "sum_all",
    "mean_all",
]

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Raised when tensor extents are inconsistent; names the offending axis."""


class Tensor:
    """N-dimensional float64 array, rank <= 4, row-major.

    Axis order is H x W x C for feature maps and K x K x Cin x Cout for
    convolution kernels.
    """

    __slots__ = ("data",)

    def __init__(self, data, validate: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 4:
            raise ShapeError(f"rank {arr.ndim} exceeds 4")
        if validate and not np.all(np.isfinite(arr)):
            raise ValueError("non-finite value in tensor input")
        self.data = arr

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # Small arithmetic sugar; delegates to the taped primitives.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


class _Node:
    __slots__ = ("op", "in_tids", "out_tid", "backward")

    def __init__(self, op, in_tids, out_tid, backward):
        self.op = op
        self.in_tids = in_tids
        self.out_tid = out_tid
        self.backward = backward


_ACTIVE_TAPE = None


class Tape:
    """Recorded operation graph for one reverse pass.

    Single-writer: one recording context per training step.  Nodes are kept
    in execution order (topological by construction) and the backward sweep
    visits each node exactly once.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._tids: dict[int, int] = {}
        self._tensors: list[Tensor] = []  # keeps ids alive while recording
        self._leaves: list[int] = []

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already recording")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def _assign(self, t: Tensor) -> int:
        tid = self._tids.get(id(t))
        if tid is None:
            tid = len(self._tensors)
            self._tids[id(t)] = tid
            self._tensors.append(t)
        return tid

    def tid_of(self, t: Tensor):
        return self._tids.get(id(t))

    def watch(self, t: Tensor) -> None:
        """Mark a tensor as a differentiable leaf."""
        tid = self._assign(t)
        if tid not in self._leaves:
            self._leaves.append(tid)

    def record(self, op: str, inputs, output: Tensor, backward_fn) -> None:
        if backward_fn is None:
            raise ValueError(f"primitive {op!r} has no registered adjoint")
        in_tids = tuple(self._tids.get(id(t)) for t in inputs)
        out_tid = self._assign(output)
        self._nodes.append(_Node(op, in_tids, out_tid, backward_fn))

    def gradients(self, loss: Tensor) -> dict[int, Tensor]:
        """Reverse sweep from a scalar loss; returns leaf-id -> gradient.

        Unused leaves map to zero tensors of the leaf's shape.
        """
        if loss.data.shape != ():
            raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
        loss_tid = self._tids.get(id(loss))
        if loss_tid is None:
            raise ValueError("loss was not recorded on this tape")
        adjoint: dict[int, np.ndarray] = {loss_tid: np.ones((), dtype=np.float64)}
        for node in reversed(self._nodes):
            g = adjoint.get(node.out_tid)
            if g is None:
                continue
            for tid, gin in zip(node.in_tids, node.backward(g)):
                if tid is None or gin is None:
                    continue
                acc = adjoint.get(tid)
                adjoint[tid] = gin if acc is None else acc + gin
        out = {}
        for tid in self._leaves:
            g = adjoint.get(tid)
            if g is None:
                g = np.zeros_like(self._tensors[tid].data)
            out[tid] = Tensor(g)
        return out

    def gradient(self, loss: Tensor, wrt) -> list[Tensor]:
        """Gradients of `loss` for an ordered sequence of watched tensors."""
        table = self.gradients(loss)
        return [table[self._tids[id(t)]] for t in wrt]


def backward(tape: Tape, loss: Tensor) -> dict[int, Tensor]:
    """Reverse-mode gradients of a scalar loss for every watched leaf."""
    return tape.gradients(loss)


def _emit(op, inputs, out_data, backward_fn):
    out = Tensor(out_data)
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.record(op, inputs, out, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    ash, bsh = a.data.shape, b.data.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _emit("add", (a, b), out, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    ash, bsh = a.data.shape, b.data.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return _emit("sub", (a, b), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _emit("mul", (a, b), out, bwd)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (not differentiated through)."""
    def bwd(g):
        return (g * c,)

    return _emit("scale", (a,), a.data * c, bwd)


def smul(s: Tensor, a: Tensor) -> Tensor:
    """Learnable scalar times tensor; gradient flows to both."""
    if s.data.shape != ():
        raise ShapeError(f"smul scalar has shape {s.data.shape}")
    sd, ad = s.data, a.data

    def bwd(g):
        return np.asarray((g * ad).sum()), g * sd

    return _emit("smul", (s, a), sd * ad, bwd)


def component(v: Tensor, i: int) -> Tensor:
    """Scalar component of a rank-1 tensor."""
    if v.data.ndim != 1:
        raise ShapeError(f"component expects rank 1, got {v.data.ndim}")
    n = v.data.shape[0]

    def bwd(g):
        out = np.zeros(n, dtype=np.float64)
        out[i] = g
        return (out,)

    return _emit("component", (v,), np.asarray(v.data[i]), bwd)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def gelu(x: Tensor) -> Tensor:
    # Exact form: x * Phi(x) with Phi the standard normal CDF via erf.
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    out = xd * cdf

    def bwd(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return _emit("gelu", (x,), out, bwd)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    s = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))),
                 np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))

    def bwd(g):
        return (g * s * (1.0 - s),)

    return _emit("sigmoid", (x,), s, bwd)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "gelu":
        return gelu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _pad_input(x: np.ndarray, pad: int, mode: str) -> np.ndarray:
    if pad == 0:
        return x
    if mode == "zero":
        return np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    if mode == "reflect":
        return np.pad(x, ((pad, pad), (pad, pad), (0, 0)), mode="reflect")
    raise ValueError(f"unknown pad mode {mode!r}")


def _patches(xp: np.ndarray, k: int, stride: int, dilation: int):
    # (Hout, Wout, C, K, K) view over the padded input.
    keff = dilation * (k - 1) + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (keff, keff), axis=(0, 1))
    return win[::stride, ::stride, :, ::dilation, ::dilation]


def _col2im(dp: np.ndarray, hp: int, wp: int, stride: int, dilation: int) -> np.ndarray:
    # Scatter patch gradients (Hout, Wout, C, K, K) back onto the padded grid.
    hout, wout, c, k, _ = dp.shape
    out = np.zeros((hp, wp, c), dtype=np.float64)
    for k1 in range(k):
        r0 = k1 * dilation
        for k2 in range(k):
            c0 = k2 * dilation
            out[r0:r0 + hout * stride:stride, c0:c0 + wout * stride:stride, :] += dp[:, :, :, k1, k2]
    return out


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, *,
           stride: int = 1, padding: int = 0, pad_mode: str = "zero",
           dilation: int = 1, groups: int = 1) -> Tensor:
    """2-D cross-correlation on an H x W x Cin map.

    Kernel layout is K x K x (Cin/groups) x Cout; spatial extent must be odd;
    depthwise is groups == Cin == Cout.
    """
    xd, kd = x.data, kernel.data
    if xd.ndim != 3:
        raise ShapeError(f"conv2d input must be H x W x C, got rank {xd.ndim}")
    if kd.ndim != 4:
        raise ShapeError(f"conv2d kernel must be K x K x Cin/g x Cout, got rank {kd.ndim}")
    h, w, cin = xd.shape
    k1, k2, kcin, cout = kd.shape
    if k1 != k2 or k1 % 2 == 0:
        raise ShapeError(f"kernel spatial extent must be square and odd, got {k1}x{k2}")
    if dilation < 1:
        raise ShapeError(f"dilation must be >= 1, got {dilation}")
    if cin % groups or cout % groups:
        raise ShapeError(f"channel axis not divisible by groups: Cin={cin} Cout={cout} groups={groups}")
    if kcin != cin // groups:
        raise ShapeError(f"kernel Cin axis is {kcin}, expected {cin // groups}")
    if bias is not None and bias.data.shape != (cout,):
        raise ShapeError(f"bias axis is {bias.data.shape}, expected ({cout},)")

    xp = _pad_input(xd, padding, pad_mode)
    hp, wp = xp.shape[:2]
    keff = dilation * (k1 - 1) + 1
    hout = (h + 2 * padding - keff) // stride + 1
    wout = (w + 2 * padding - keff) // stride + 1
    if hout < 1 or wout < 1:
        raise ShapeError(f"empty output ({hout}x{wout}) for input {h}x{w}")

    pt = _patches(xp, k1, stride, dilation)  # (hout, wout, cin, k, k)
    depthwise = groups == cin == cout
    if depthwise:
        out = np.einsum("hwckl,klc->hwc", pt, kd[:, :, 0, :], optimize=True)
    elif groups == 1:
        out = np.tensordot(pt, kd, axes=([2, 3, 4], [2, 0, 1]))
    else:
        cg, og = cin // groups, cout // groups
        out = np.empty((hout, wout, cout), dtype=np.float64)
        for g in range(groups):
            out[:, :, g * og:(g + 1) * og] = np.tensordot(
                pt[:, :, g * cg:(g + 1) * cg], kd[:, :, :, g * og:(g + 1) * og],
                axes=([2, 3, 4], [2, 0, 1]))
    if bias is not None:
        out = out + bias.data

    def bwd(g):
        if depthwise:
            dk = np.einsum("hwckl,hwc->klc", pt, g, optimize=True)[:, :, None, :]
            dp = g[:, :, :, None, None] * kd[:, :, 0, :].transpose(2, 0, 1)[None, None, :, :, :]
        elif groups == 1:
            dk = np.tensordot(pt, g, axes=([0, 1], [0, 1])).transpose(1, 2, 0, 3)
            dp = np.tensordot(g, kd, axes=(2, 3)).transpose(0, 1, 4, 2, 3)
        else:
            cg, og = cin // groups, cout // groups
            dk = np.empty_like(kd)
            dp = np.empty_like(pt)
            for gi in range(groups):
                gs = g[:, :, gi * og:(gi + 1) * og]
                ps = pt[:, :, gi * cg:(gi + 1) * cg]
                dk[:, :, :, gi * og:(gi + 1) * og] = np.tensordot(
                    ps, gs, axes=([0, 1], [0, 1])).transpose(1, 2, 0, 3)
                dp[:, :, gi * cg:(gi + 1) * cg] = np.tensordot(
                    gs, kd[:, :, :, gi * og:(gi + 1) * og], axes=(2, 3)).transpose(0, 1, 4, 2, 3)
        dxp = _col2im(np.ascontiguousarray(dp), hp, wp, stride, dilation)
        if padding == 0:
            dx = dxp
        elif pad_mode == "zero":
            dx = dxp[padding:padding + h, padding:padding + w, :]
        else:  # reflect: fold padded rows/cols back onto their source samples
            ri = np.pad(np.arange(h), padding, mode="reflect")
            rj = np.pad(np.arange(w), padding, mode="reflect")
            dx = np.zeros_like(xd)
            np.add.at(dx, (ri[:, None], rj[None, :]), dxp)
        db = None if bias is None else g.sum(axis=(0, 1))
        return dx, dk, db

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _emit("conv2d", inputs, out, bwd)


# ---------------------------------------------------------------------------
# pooling / gating / channel ops
# ---------------------------------------------------------------------------

def avgpool_axes(x: Tensor, keep: str) -> Tensor:
    """Average pooling of an H x W x C map down to one of three views:
    keep='height' -> H x 1 x C, keep='width' -> 1 x W x C, keep='none' -> 1 x 1 x C.
    """
    xd = x.data
    if xd.ndim != 3:
        raise ShapeError(f"avgpool_axes input must be H x W x C, got rank {xd.ndim}")
    h, w, _ = xd.shape
    if keep == "height":
        out, denom = xd.mean(axis=1, keepdims=True), w
    elif keep == "width":
        out, denom = xd.mean(axis=0, keepdims=True), h
    elif keep == "none":
        out, denom = xd.mean(axis=(0, 1), keepdims=True), h * w
    else:
        raise ValueError(f"unknown keep mode {keep!r}")

    def bwd(g):
        return (np.broadcast_to(g / denom, xd.shape).copy(),)

    return _emit("avgpool", (x,), out, bwd)


def broadcast_mul(feature: Tensor, gate: Tensor) -> Tensor:
    """Elementwise product with the gate expanded along singleton H/W axes."""
    fd, gd = feature.data, gate.data
    if fd.ndim != 3 or gd.ndim != 3:
        raise ShapeError("broadcast_mul operands must be rank 3")
    if gd.shape[2] != fd.shape[2]:
        raise ShapeError(f"gate channel axis {gd.shape[2]} != feature {fd.shape[2]}")
    for ax in (0, 1):
        if gd.shape[ax] not in (1, fd.shape[ax]):
            raise ShapeError(f"gate axis {ax} extent {gd.shape[ax]} not broadcastable to {fd.shape[ax]}")
    return mul(feature, gate)


def permute_channels(x: Tensor, perm) -> Tensor:
    """Reorder channels: output channel j = input channel perm[j]."""
    perm = np.asarray(perm, dtype=np.intp)
    c = x.data.shape[-1]
    if sorted(perm.tolist()) != list(range(c)):
        raise ValueError(f"perm is not a bijection of 0..{c - 1}")
    inv = np.empty_like(perm)
    inv[perm] = np.arange(c)

    def bwd(g):
        return (g[..., inv],)

    return _emit("permute", (x,), x.data[..., perm], bwd)


def concat_channels(parts) -> Tensor:
    parts = list(parts)
    spans = np.cumsum([0] + [p.data.shape[-1] for p in parts])
    out = np.concatenate([p.data for p in parts], axis=-1)

    def bwd(g):
        return tuple(g[..., spans[i]:spans[i + 1]] for i in range(len(parts)))

    return _emit("concat", tuple(parts), out, bwd)


def slice_channels(x: Tensor, lo: int, hi: int) -> Tensor:
    shape = x.data.shape

    def bwd(g):
        out = np.zeros(shape, dtype=np.float64)
        out[..., lo:hi] = g
        return (out,)

    return _emit("slice", (x,), x.data[..., lo:hi].copy(), bwd)


def pad_channels_replicate(x: Tensor, n: int) -> Tensor:
    """Append n copies of the last channel (spectrally smooth continuation)."""
    if n == 0:
        return x
    c = x.data.shape[-1]
    out = np.concatenate([x.data] + [x.data[..., -1:]] * n, axis=-1)

    def bwd(g):
        dx = g[..., :c].copy()
        dx[..., -1] += g[..., c:].sum(axis=-1)
        return (dx,)

    return _emit("pad_channels", (x,), out, bwd)


# ---------------------------------------------------------------------------
# fixed linear maps, clamping, reductions
# ---------------------------------------------------------------------------

def _apply_separable(rh: np.ndarray, rw: np.ndarray, x: np.ndarray) -> np.ndarray:
    # out[i, j, c] = sum_{u,v} rh[i, u] rw[j, v] x[u, v, c]
    t = np.tensordot(rh, x, axes=(1, 0))
    return np.tensordot(rw, t, axes=(1, 1)).transpose(1, 0, 2)


def linmap2d(x: Tensor, rh: np.ndarray, rw: np.ndarray) -> Tensor:
    """Fixed separable linear map over the two spatial axes (per channel).

    Used for the differentiable degradation operator inside the loss; the
    adjoint is multiplication by the transposed factors.
    """
    if x.data.ndim != 3:
        raise ShapeError("linmap2d input must be H x W x C")
    if rh.shape[1] != x.data.shape[0]:
        raise ShapeError(f"row factor expects H={rh.shape[1]}, input has {x.data.shape[0]}")
    if rw.shape[1] != x.data.shape[1]:
        raise ShapeError(f"column factor expects W={rw.shape[1]}, input has {x.data.shape[1]}")
    out = _apply_separable(rh, rw, x.data)

    def bwd(g):
        return (_apply_separable(rh.T, rw.T, g),)

    return _emit("linmap2d", (x,), out, bwd)


def clamp01(x: Tensor) -> Tensor:
    xd = x.data
    out = np.clip(xd, 0.0, 1.0)
    inside = (xd > 0.0) & (xd < 1.0)

    def bwd(g):
        return (g * inside,)

    return _emit("clamp01", (x,), out, bwd)


def sum_all(x: Tensor) -> Tensor:
    shape = x.data.shape

    def bwd(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", (x,), np.asarray(x.data.sum()), bwd)


def mean_all(x: Tensor) -> Tensor:
    shape, n = x.data.shape, x.data.size

    def bwd(g):
        return (np.broadcast_to(g / n, shape).copy(),)

    return _emit("mean", (x,), np.asarray(x.data.mean()), bwd)

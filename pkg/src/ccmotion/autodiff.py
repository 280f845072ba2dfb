"""Reverse-mode automatic differentiation over dense numpy tensors.

The op set is exactly what the motion network needs: elementwise
arithmetic and activations, reductions, time/channel slicing, a dilated
causal 1-D convolution, and a fused binary-cross-entropy-with-logits
primitive (the numerically stable max(z,0) - z*y + log1p(exp(-|z|))
form, whose adjoint is sigmoid(z) - y).

A ``Tape`` records every primitive application in execution order;
``backward`` replays the stored adjoint closures in exact reverse
order, so gradients are deterministic and bit-reproducible for a given
graph. Variables built without a tape (``tape=None``) skip closure
construction entirely, which is the inference fast path: the same
forward code serves training and evaluation.

Shapes are strict: binary ops require identical operand shapes, except
that python/0-d scalars are always accepted as constants. The general
broadcasting rabbit hole is deliberately avoided.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DimensionError",
    "TapeError",
    "Tape",
    "Var",
    "constant",
    "add",
    "sub",
    "mul",
    "neg",
    "square",
    "vexp",
    "vlog",
    "relu",
    "tanh",
    "sigmoid",
    "clip_min",
    "vsum",
    "vmean",
    "narrow",
    "conv1d",
    "gated_activation",
    "bce_with_logits",
    "dropout_mask",
    "backward",
]


class DimensionError(ValueError):
    """Operand shapes do not line up for the requested op."""


class TapeError(RuntimeError):
    """Tape misuse: mixed tapes, or backward through an off-tape value."""


class Tape:
    """Append-only record of primitive applications.

    ``backward`` walks ``_records`` in reverse, so adjoint propagation
    visits operations in the exact opposite order of recording.
    """

    __slots__ = ("_records",)

    def __init__(self) -> None:
        self._records: list[Var] = []

    def _add(self, var: "Var") -> None:
        self._records.append(var)

    def __len__(self) -> int:
        return len(self._records)


class Var:
    """A node in the computation: numpy payload plus adjoint slot.

    ``grad`` is lazily allocated during backward; leaves created with a
    tape participate in recording, tape-less Vars are constants.
    """

    __slots__ = ("data", "grad", "tape", "_bwd")

    def __init__(self, data, tape: Tape | None = None, *, check_finite: bool = True):
        arr = np.asarray(data, dtype=np.float64)
        if check_finite and not np.all(np.isfinite(arr)):
            raise ValueError("non-finite entries in tensor construction")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.tape = tape
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self) -> str:
        return f"Var(shape={self.data.shape}, tape={self.tape is not None})"

    # operator sugar; scalars are treated as constants
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

    def __neg__(self):
        return neg(self)


def constant(data) -> Var:
    return Var(data, tape=None)


def _coerce(x) -> Var:
    if isinstance(x, Var):
        return x
    return Var(np.asarray(x, dtype=np.float64), tape=None, check_finite=False)


def _joint_tape(*vars_: Var) -> Tape | None:
    tape = None
    for v in vars_:
        if v.tape is not None:
            if tape is None:
                tape = v.tape
            elif tape is not v.tape:
                raise TapeError("operands recorded on different tapes")
    return tape


def _make(data: np.ndarray, tape: Tape | None, bwd) -> Var:
    out = Var(data, tape=tape, check_finite=False)
    if tape is not None:
        out._bwd = bwd()
        tape._add(out)
    return out


def _accum(v: Var, g: np.ndarray) -> None:
    if v.tape is None:
        return
    if v.grad is None:
        v.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        v.grad += g


def _check_same_shape(a: Var, b: Var, opname: str) -> None:
    if a.data.shape != b.data.shape and a.data.shape != () and b.data.shape != ():
        raise DimensionError(
            f"{opname}: shape mismatch {a.data.shape} vs {b.data.shape}")


def _unbroadcast_scalar(g: np.ndarray, v: Var) -> np.ndarray:
    # scalar operand against an array: fold the adjoint back down
    if v.data.shape == () and g.shape != ():
        return np.sum(g)
    return g


def add(a, b) -> Var:
    a, b = _coerce(a), _coerce(b)
    _check_same_shape(a, b, "add")
    tape = _joint_tape(a, b)
    data = a.data + b.data

    def bwd():
        def run(g):
            _accum(a, _unbroadcast_scalar(g, a))
            _accum(b, _unbroadcast_scalar(g, b))
        return run

    return _make(data, tape, bwd)


def sub(a, b) -> Var:
    a, b = _coerce(a), _coerce(b)
    _check_same_shape(a, b, "sub")
    tape = _joint_tape(a, b)
    data = a.data - b.data

    def bwd():
        def run(g):
            _accum(a, _unbroadcast_scalar(g, a))
            _accum(b, _unbroadcast_scalar(-g, b))
        return run

    return _make(data, tape, bwd)


def mul(a, b) -> Var:
    a, b = _coerce(a), _coerce(b)
    _check_same_shape(a, b, "mul")
    tape = _joint_tape(a, b)
    ad, bd = a.data, b.data
    data = ad * bd

    def bwd():
        def run(g):
            _accum(a, _unbroadcast_scalar(g * bd, a))
            _accum(b, _unbroadcast_scalar(g * ad, b))
        return run

    return _make(data, tape, bwd)


def neg(a) -> Var:
    a = _coerce(a)

    def bwd():
        def run(g):
            _accum(a, -g)
        return run

    return _make(-a.data, a.tape, bwd)


def square(a) -> Var:
    a = _coerce(a)
    ad = a.data

    def bwd():
        def run(g):
            _accum(a, g * (2.0 * ad))
        return run

    return _make(ad * ad, a.tape, bwd)


def vexp(a) -> Var:
    a = _coerce(a)
    out = np.exp(a.data)

    def bwd():
        def run(g):
            _accum(a, g * out)
        return run

    return _make(out, a.tape, bwd)


def vlog(a) -> Var:
    a = _coerce(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log of non-positive value")
    ad = a.data

    def bwd():
        def run(g):
            _accum(a, g / ad)
        return run

    return _make(np.log(ad), a.tape, bwd)


def relu(a) -> Var:
    a = _coerce(a)
    mask = a.data > 0.0

    def bwd():
        def run(g):
            _accum(a, g * mask)
        return run

    return _make(np.where(mask, a.data, 0.0), a.tape, bwd)


def tanh(a) -> Var:
    a = _coerce(a)
    out = np.tanh(a.data)

    def bwd():
        def run(g):
            _accum(a, g * (1.0 - out * out))
        return run

    return _make(out, a.tape, bwd)


def sigmoid(a) -> Var:
    a = _coerce(a)
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-a.data))

    def bwd():
        def run(g):
            _accum(a, g * out * (1.0 - out))
        return run

    return _make(out, a.tape, bwd)


def clip_min(a, lo: float) -> Var:
    """max(a, lo) elementwise; subgradient passes only where a > lo."""
    a = _coerce(a)
    mask = a.data > lo

    def bwd():
        def run(g):
            _accum(a, g * mask)
        return run

    return _make(np.maximum(a.data, lo), a.tape, bwd)


def vsum(a, axis=None, keepdims: bool = False) -> Var:
    a = _coerce(a)
    shape = a.data.shape
    data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bwd():
        def run(g):
            if axis is None:
                _accum(a, np.broadcast_to(g, shape))
            else:
                ge = g if keepdims else np.expand_dims(g, axis)
                _accum(a, np.broadcast_to(ge, shape))
        return run

    return _make(data, a.tape, bwd)


def vmean(a, axis=None, keepdims: bool = False) -> Var:
    a = _coerce(a)
    shape = a.data.shape
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = 1
        for ax in axes:
            count *= shape[ax]
    data = np.mean(a.data, axis=axis, keepdims=keepdims)

    def bwd():
        def run(g):
            if axis is None:
                _accum(a, np.broadcast_to(g / count, shape))
            else:
                ge = g if keepdims else np.expand_dims(g, axis)
                _accum(a, np.broadcast_to(ge / count, shape))
        return run

    return _make(data, a.tape, bwd)


def narrow(a, axis: int, start: int, length: int) -> Var:
    """Contiguous slice along one axis (adjoint scatter-adds back)."""
    a = _coerce(a)
    nd = a.data.ndim
    if not -nd <= axis < nd:
        raise DimensionError(f"narrow: axis {axis} out of range for rank {nd}")
    axis = axis % nd
    size = a.data.shape[axis]
    if start < 0 or length < 0 or start + length > size:
        raise DimensionError(
            f"narrow: slice [{start}:{start + length}] outside extent {size}")
    idx = tuple(slice(None) if i != axis else slice(start, start + length)
                for i in range(nd))
    data = a.data[idx]

    def bwd():
        def run(g):
            buf = np.zeros_like(a.data)
            buf[idx] = g
            _accum(a, buf)
        return run

    return _make(data, a.tape, bwd)


def conv1d(x, w, b=None, *, dilation: int = 1, causal: bool = True) -> Var:
    """1-D convolution along the last axis (cross-correlation semantics).

    x: (C_in, T) or (B, C_in, T); w: (C_out, C_in, K); b: (C_out,) or None.
    Causal mode left-pads with (K-1)*dilation zeros so out[t] sees
    inputs at t, t-d, ..., t-(K-1)*d only. Output length always equals
    T. Non-causal mode exists only for K == 1 (per-frame affine); any
    wider non-causal kernel has no same-length semantics here and is
    rejected rather than inventing a padding rule.
    """
    x, w = _coerce(x), _coerce(w)
    bv = _coerce(b) if b is not None else None
    if not isinstance(dilation, int) or dilation < 1:
        raise ValueError(f"conv1d: dilation must be a positive int, got {dilation}")
    xd, wd = x.data, w.data
    squeeze = xd.ndim == 2
    if squeeze:
        xd = xd[None]
    if xd.ndim != 3 or wd.ndim != 3:
        raise DimensionError(
            f"conv1d: expected x (B,C_in,T) and w (C_out,C_in,K), got {x.data.shape} / {wd.shape}")
    B, c_in, T = xd.shape
    c_out, c_in_w, K = wd.shape
    if c_in != c_in_w:
        raise DimensionError(f"conv1d: C_in mismatch {c_in} vs {c_in_w}")
    if bv is not None and bv.data.shape != (c_out,):
        raise DimensionError(f"conv1d: bias shape {bv.data.shape} != ({c_out},)")
    if not causal and K != 1:
        raise ValueError("conv1d: non-causal mode is only defined for kernel size 1")

    pad = (K - 1) * dilation if causal else 0
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, 0))) if pad else xd
    out = np.zeros((B, c_out, T), dtype=np.float64)
    for k in range(K):
        seg = xp[:, :, k * dilation: k * dilation + T]
        out += np.matmul(wd[:, :, k], seg)
    if bv is not None:
        out += bv.data[:, None]
    tape = _joint_tape(x, w, *( [bv] if bv is not None else [] ))

    def bwd():
        def run(g):
            if squeeze:
                gb = g[None] if g.ndim == 2 else g
            else:
                gb = g
            if bv is not None:
                _accum(bv, gb.sum(axis=(0, 2)))
            gw = np.zeros_like(wd)
            gx_pad = np.zeros_like(xp)
            for k in range(K):
                seg = xp[:, :, k * dilation: k * dilation + T]
                gw[:, :, k] = np.einsum("bot,bit->oi", gb, seg)
                gx_pad[:, :, k * dilation: k * dilation + T] += np.matmul(
                    wd[:, :, k].T, gb)
            gx = gx_pad[:, :, pad:] if pad else gx_pad
            _accum(w, gw)
            _accum(x, gx[0] if squeeze else gx)
        return run

    data = out[0] if squeeze else out
    return _make(data, tape, bwd)


def gated_activation(filter_pre, gate_pre) -> Var:
    """tanh(filter) * sigmoid(gate), the WaveNet-style gate."""
    return mul(tanh(filter_pre), sigmoid(gate_pre))


def bce_with_logits(logits, labels) -> Var:
    """Elementwise BCE on raw logits against constant {0,1} labels.

    Stable form max(z,0) - z*y + log1p(exp(-|z|)); adjoint is
    sigmoid(z) - y. Labels never receive gradients.
    """
    z = _coerce(logits)
    y = np.asarray(labels if not isinstance(labels, Var) else labels.data,
                   dtype=np.float64)
    if y.shape != z.data.shape:
        raise DimensionError(f"bce: labels {y.shape} vs logits {z.data.shape}")
    zd = z.data
    data = np.maximum(zd, 0.0) - zd * y + np.log1p(np.exp(-np.abs(zd)))

    def bwd():
        def run(g):
            with np.errstate(over="ignore"):
                sig = 1.0 / (1.0 + np.exp(-zd))
            _accum(z, g * (sig - y))
        return run

    return _make(data, z.tape, bwd)


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: zeros with prob p, survivors scaled 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    if p == 0.0:
        return np.ones(shape, dtype=np.float64)
    keep = rng.random(shape) >= p
    return keep.astype(np.float64) / (1.0 - p)


def backward(tape: Tape, loss: Var, params: dict[str, Var] | None = None):
    """Propagate adjoints from ``loss`` through every recorded op.

    Walks the tape strictly in reverse recording order. When ``params``
    is given, returns {name: gradient array} (zeros for parameters the
    loss never touched); otherwise gradients are left on ``Var.grad``.
    """
    if loss.tape is not tape:
        raise TapeError("loss was not recorded on this tape")
    if loss.data.shape != ():
        raise ValueError("backward expects a scalar loss")
    for rec in tape._records:
        rec.grad = None
    if params:
        for p in params.values():
            p.grad = None
    loss.grad = np.array(1.0)
    seen = False
    for rec in reversed(tape._records):
        if rec is loss:
            seen = True
        if not seen or rec.grad is None:
            continue
        rec._bwd(rec.grad)
    if params is not None:
        return {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()
        }
    return None

"""Dense-tensor reverse-mode automatic differentiation on numpy storage.

A ``Tensor`` wraps a real numpy array. Operations executed while a ``Tape``
is active append backward closures to it; ``Tape.backward(loss)`` replays
them in reverse and accumulates gradients additively into every tensor with
``requires_grad=True``. Without an active tape the same operations run as
plain (cheap, allocation-only) numpy calls, which is how inference works.

Design rules enforced here:
  * no implicit broadcasting -- binary ops demand equal shapes, scalars are
    explicit, and the single documented exception is ``bias_add`` which
    broadcasts a vector over the trailing channel axis;
  * every operation output is checked for NaN/Inf (toggle via the
    ``DPNO_CHECK_FINITE`` environment variable or ``set_check_finite``);
  * float32 and float64 are supported but never mixed silently.
"""
from __future__ import annotations

import os

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "bias_add",
    "matmul",
    "transpose",
    "reshape",
    "gelu",
    "concat_channels",
    "tensor_sum",
    "relative_l2",
    "backward",
    "set_check_finite",
]

_CHECK_FINITE = os.environ.get("DPNO_CHECK_FINITE", "1") != "0"

# tanh-form GeLU constants: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))
_GELU_A = 0.7978845608028654  # sqrt(2/pi)
_GELU_B = 0.044715

_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def set_check_finite(enabled: bool) -> None:
    """Enable/disable the NaN/Inf check after every operation."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


def _validate_finite(arr: np.ndarray, op: str) -> None:
    if _CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by '{op}'")


class Tensor:
    """Real-valued dense tensor with optional gradient tracking.

    ``data`` is a numpy float array (any shape, including scalars); ``grad``
    is populated by ``Tape.backward`` and accumulates across calls until
    explicitly zeroed.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float64)
        if any(d <= 0 for d in arr.shape):
            raise ValueError(f"tensor dimensions must be positive, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError("tensor initialised with non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar; scalars allowed where the op supports them
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else scale_shift(self, 1.0, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else scale_shift(self, 1.0, -other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of operations for one reverse sweep.

    Operations append backward closures in execution order (a topological
    order by construction). ``backward`` may be called exactly once.
    """

    def __init__(self):
        self._records = []
        self._consumed = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def record(self, backward_fn) -> None:
        self._records.append(backward_fn)

    def __len__(self):
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss)=1 and sweep the record in reverse."""
        if self._consumed:
            raise RuntimeError("tape already consumed by a previous backward call")
        if loss.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {tuple(loss.shape)}")
        self._consumed = True
        loss.accumulate_grad(np.ones_like(loss.data))
        for fn in reversed(self._records):
            fn()
        self._records.clear()


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(loss: Tensor, tape: Tape) -> None:
    """Functional alias for ``tape.backward(loss)``."""
    tape.backward(loss)


def _make_output(data: np.ndarray, inputs, op: str) -> tuple[Tensor, Tape | None]:
    _validate_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.grad = None
    tape = _active_tape() if out.requires_grad else None
    return out, tape


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")
    if a.data.dtype != b.data.dtype:
        raise ValueError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out, tape = _make_output(a.data + b.data, (a, b), "add")
    if tape is not None:
        def _bw():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate_grad(g)
            if b.requires_grad:
                b.accumulate_grad(g)
        tape.record(_bw)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    out, tape = _make_output(a.data - b.data, (a, b), "sub")
    if tape is not None:
        def _bw():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate_grad(g)
            if b.requires_grad:
                b.accumulate_grad(-g)
        tape.record(_bw)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    out, tape = _make_output(a.data * b.data, (a, b), "mul")
    if tape is not None:
        def _bw():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate_grad(g * b.data)
            if b.requires_grad:
                b.accumulate_grad(g * a.data)
        tape.record(_bw)
    return out


def scale(a: Tensor, c) -> Tensor:
    c = float(c)
    out, tape = _make_output(a.data * c, (a,), "scale")
    if tape is not None:
        def _bw():
            g = out.grad
            if g is None:
                return
            a.accumulate_grad(g * c)
        tape.record(_bw)
    return out


def scale_shift(a: Tensor, c, d) -> Tensor:
    """c*a + d with python scalars c, d."""
    c = float(c)
    d = float(d)
    out, tape = _make_output(a.data * c + d, (a,), "scale_shift")
    if tape is not None:
        def _bw():
            g = out.grad
            if g is None:
                return
            a.accumulate_grad(g * c)
        tape.record(_bw)
    return out


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """x + b with b broadcast over the trailing channel axis.

    The one sanctioned broadcast: ``x`` has shape ``[..., C]`` and ``b`` has
    shape ``[C]``.
    """
    if b.data.ndim != 1:
        raise ValueError(f"bias_add: bias must be 1-d, got shape {b.data.shape}")
    if x.data.shape[-1] != b.data.shape[0]:
        raise ValueError(
            f"bias_add: channel mismatch, x {x.data.shape} vs bias {b.data.shape}"
        )
    if x.data.dtype != b.data.dtype:
        raise ValueError(f"bias_add: dtype mismatch {x.data.dtype} vs {b.data.dtype}")
    out, tape = _make_output(x.data + b.data, (x, b), "bias_add")
    if tape is not None:
        def _bw():
            g = out.grad
            if g is None:
                return
            if x.requires_grad:
                x.accumulate_grad(g)
            if b.requires_grad:
                b.accumulate_grad(g.reshape(-1, g.shape[-1]).sum(axis=0))
        tape.record(_bw)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product, plain [m,k]@[k,n] or with one leading batch axis.

    Accepted shapes: (m,k)@(k,n), (B,m,k)@(k,n), (B,m,k)@(B,k,n).
    """
    ad, bd = a.data, b.data
    if ad.dtype != bd.dtype:
        raise ValueError(f"matmul: dtype mismatch {ad.dtype} vs {bd.dtype}")
    if ad.ndim == 2 and bd.ndim == 2:
        mode = "mm"
    elif ad.ndim == 3 and bd.ndim == 2:
        mode = "bm"
    elif ad.ndim == 3 and bd.ndim == 3:
        if ad.shape[0] != bd.shape[0]:
            raise ValueError(f"matmul: batch mismatch {ad.shape} vs {bd.shape}")
        mode = "bb"
    else:
        raise ValueError(f"matmul: unsupported ranks {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul: inner dimensions disagree, {ad.shape} @ {bd.shape}")
    out, tape = _make_output(ad @ bd, (a, b), "matmul")
    if tape is not None:
        def _bw():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate_grad(g @ np.swapaxes(bd, -1, -2))
            if b.requires_grad:
                if mode == "bm":
                    b.accumulate_grad(np.tensordot(ad, g, axes=([0, 1], [0, 1])))
                else:
                    b.accumulate_grad(np.swapaxes(ad, -1, -2) @ g)
        tape.record(_bw)
    return out


def transpose(a: Tensor) -> Tensor:
    """2-d transpose."""
    if a.data.ndim != 2:
        raise ValueError(f"transpose expects a 2-d tensor, got shape {a.data.shape}")
    out, tape = _make_output(a.data.T.copy(), (a,), "transpose")
    if tape is not None:
        def _bw():
            g = out.grad
            if g is None:
                return
            a.accumulate_grad(g.T)
        tape.record(_bw)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    orig = a.data.shape
    out, tape = _make_output(a.data.reshape(shape), (a,), "reshape")
    if tape is not None:
        def _bw():
            g = out.grad
            if g is None:
                return
            a.accumulate_grad(g.reshape(orig))
        tape.record(_bw)
    return out


def gelu(x: Tensor) -> Tensor:
    """GeLU in tanh form: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).

    The backward pass uses the closed-form derivative of the same expression.
    """
    xd = x.data
    x2 = xd * xd
    t = np.tanh(_GELU_A * xd * (1.0 + _GELU_B * x2))
    out, tape = _make_output(0.5 * xd * (1.0 + t), (x,), "gelu")
    if tape is not None:
        def _bw():
            g = out.grad
            if g is None:
                return
            sech2 = 1.0 - t * t
            dinner = _GELU_A * (1.0 + 3.0 * _GELU_B * x2)
            x.accumulate_grad(g * (0.5 * (1.0 + t) + 0.5 * xd * sech2 * dinner))
        tape.record(_bw)
    return out


def concat_channels(parts) -> Tensor:
    """Concatenate along the trailing channel axis; backward splits back."""
    parts = list(parts)
    if not parts:
        raise ValueError("concat_channels: empty part list")
    if len(parts) == 1:
        return parts[0]
    lead = parts[0].data.shape[:-1]
    dt = parts[0].data.dtype
    for p in parts[1:]:
        if p.data.shape[:-1] != lead:
            raise ValueError(
                f"concat_channels: non-channel axes differ, {parts[0].data.shape} vs {p.data.shape}"
            )
        if p.data.dtype != dt:
            raise ValueError(f"concat_channels: dtype mismatch {dt} vs {p.data.dtype}")
    widths = [p.data.shape[-1] for p in parts]
    out, tape = _make_output(np.concatenate([p.data for p in parts], axis=-1), parts, "concat_channels")
    if tape is not None:
        offsets = np.cumsum([0] + widths)
        def _bw():
            g = out.grad
            if g is None:
                return
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    p.accumulate_grad(g[..., lo:hi])
        tape.record(_bw)
    return out


def tensor_sum(a: Tensor) -> Tensor:
    """Sum of all entries, returned as a scalar tensor."""
    out, tape = _make_output(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), "sum")
    if tape is not None:
        def _bw():
            g = out.grad
            if g is None:
                return
            a.accumulate_grad(np.full_like(a.data, g))
        tape.record(_bw)
    return out


def relative_l2(pred: Tensor, target) -> Tensor:
    """Mean over the batch of per-sample relative L2 errors.

    Each sample is flattened over all non-batch axes and scored as
    ``||pred_i - target_i||_2 / ||target_i||_2``; the result is the mean of
    those ratios. Differentiable with respect to ``pred`` only; ``target``
    is treated as a constant. A zero-norm target sample is rejected.
    """
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.data.shape != tgt.shape:
        raise ValueError(f"relative_l2: shape mismatch {pred.data.shape} vs {tgt.shape}")
    nb = pred.data.shape[0]
    p2 = pred.data.reshape(nb, -1)
    t2 = tgt.reshape(nb, -1)
    diff = p2 - t2
    dn = np.sqrt((diff * diff).sum(axis=1))
    tn = np.sqrt((t2 * t2).sum(axis=1))
    if np.any(tn == 0.0):
        bad = int(np.argmax(tn == 0.0))
        raise ValueError(f"relative_l2: target sample {bad} has zero norm")
    ratios = dn / tn
    out, tape = _make_output(np.asarray(ratios.mean(), dtype=pred.data.dtype), (pred,), "relative_l2")
    if tape is not None:
        def _bw():
            g = out.grad
            if g is None:
                return
            # d/d pred_i = diff_i / (||diff_i|| * ||t_i|| * B); zero where pred == target
            safe = np.where(dn > 0.0, dn, 1.0)
            coeff = np.where(dn > 0.0, 1.0 / (safe * tn * nb), 0.0)
            gp = (diff * coeff[:, None]) * float(g)
            pred.accumulate_grad(gp.reshape(pred.data.shape))
        tape.record(_bw)
    return out

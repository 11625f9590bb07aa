"""Dense rank-2 float64 tensors with reverse-mode automatic differentiation.

Every value is a (rows, cols) matrix; vectors are stored as (rows, 1).
Operations executed while a :class:`Tape` is active are recorded on it, and
``Tape.backward`` replays the records in exact reverse execution order,
accumulating gradients additively wherever a tensor fed more than one op.
Without an active tape the same functions run forward-only, which is what
evaluation uses.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import EmptyPoolError, FullyMaskedError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "matmul",
    "transpose",
    "add",
    "add_bias_broadcast",
    "elementwise_sub",
    "elementwise_mul",
    "relu",
    "sigmoid",
    "tanh",
    "softmax_columns",
    "concat_rows",
    "concat_cols",
    "slice_rows",
    "slice_cols",
    "gather_cols",
    "row_max_pool",
    "sum_all",
    "log_sum_exp",
    "grad_check",
    "gradient_fault",
]

_TAPE_STACK: list["Tape"] = []

# Multiplier applied to the ReLU backward rule.  Anything other than 1.0 is a
# deliberate corruption used as a negative control for gradient verification.
_RELU_GRAD_FAULT = 1.0


class Tensor:
    """A (rows, cols) float64 array that can participate in a tape.

    ``grad`` is ``None`` until a backward pass populates it; repeated
    backward passes accumulate into it.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are rank <= 2, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def copy(self) -> "Tensor":
        out = Tensor(self.data.copy(), requires_grad=self.requires_grad)
        if self.grad is not None:
            out.grad = self.grad.copy()
        return out

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Execution-ordered op record used for reverse-mode differentiation.

    Use as a context manager; ops executed inside the ``with`` block are
    recorded.  Records hold the op's output tensors and a closure that maps
    output gradients to input-gradient contributions.
    """

    def __init__(self):
        self._records: list[tuple[tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must be exited in LIFO order"
        return False

    def __len__(self) -> int:
        return len(self._records)

    def record(self, outputs: tuple[Tensor, ...], backward: Callable) -> None:
        self._records.append((outputs, backward))

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every ``requires_grad`` tensor reachable from ``loss``.

        Visits the recorded ops in exact reverse execution order.  Repeated
        calls without zeroing accumulate, and a tensor feeding several ops
        receives the sum of all its downstream contributions.
        """
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
        flow: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        owners: dict[int, Tensor] = {id(loss): loss}

        def accum(t: Tensor, g: np.ndarray) -> None:
            if not t.requires_grad:
                return
            key = id(t)
            cur = flow.get(key)
            if cur is None:
                flow[key] = np.array(g)  # own the buffer; g may alias op caches
                owners[key] = t
            else:
                cur += g

        for outputs, bwd in reversed(self._records):
            grads_out = [flow.get(id(o)) for o in outputs]
            if all(g is None for g in grads_out):
                continue
            bwd(grads_out, accum)

        for key, g in flow.items():
            t = owners[key]
            t.grad = g if t.grad is None else t.grad + g


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _unary_setup(x: Tensor) -> tuple[Tape | None, bool]:
    tape = _active_tape()
    return tape, tape is not None and x.requires_grad


def _binary_setup(a: Tensor, b: Tensor) -> tuple[Tape | None, bool]:
    tape = _active_tape()
    return tape, tape is not None and (a.requires_grad or b.requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; backward is dA = dC @ B^T, dB = A^T @ dC."""
    ad, bd = a.data, b.data
    if ad.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {ad.shape} @ {bd.shape}")
    out = Tensor(ad @ bd)
    tape, rec = _binary_setup(a, b)
    if rec:
        out.requires_grad = True

        def bwd(gs, accum):
            g = gs[0]
            if a.requires_grad:
                accum(a, g @ bd.T)
            if b.requires_grad:
                accum(b, ad.T @ g)

        tape.record((out,), bwd)
    return out


def transpose(x: Tensor) -> Tensor:
    out = Tensor(np.ascontiguousarray(x.data.T))
    tape, rec = _unary_setup(x)
    if rec:
        out.requires_grad = True
        tape.record((out,), lambda gs, accum: accum(x, gs[0].T))
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Entrywise sum of two same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes disagree: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data)
    tape, rec = _binary_setup(a, b)
    if rec:
        out.requires_grad = True

        def bwd(gs, accum):
            g = gs[0]
            if a.requires_grad:
                accum(a, g)
            if b.requires_grad:
                accum(b, g)

        tape.record((out,), bwd)
    return out


def add_bias_broadcast(m: Tensor, bias: Tensor) -> Tensor:
    """Add a (rows, 1) bias to every column; backward sums columns into the bias."""
    md, bd = m.data, bias.data
    if bd.shape[1] != 1 or bd.shape[0] != md.shape[0]:
        raise ShapeError(
            f"bias broadcast needs ({md.shape[0]}, 1) bias for matrix {md.shape}, got {bd.shape}"
        )
    out = Tensor(md + bd)
    tape, rec = _binary_setup(m, bias)
    if rec:
        out.requires_grad = True

        def bwd(gs, accum):
            g = gs[0]
            if m.requires_grad:
                accum(m, g)
            if bias.requires_grad:
                accum(bias, g.sum(axis=1, keepdims=True))

        tape.record((out,), bwd)
    return out


def elementwise_sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub shapes disagree: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data - b.data)
    tape, rec = _binary_setup(a, b)
    if rec:
        out.requires_grad = True

        def bwd(gs, accum):
            g = gs[0]
            if a.requires_grad:
                accum(a, g)
            if b.requires_grad:
                accum(b, -g)

        tape.record((out,), bwd)
    return out


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shapes disagree: {a.data.shape} vs {b.data.shape}")
    ad, bd = a.data, b.data
    out = Tensor(ad * bd)
    tape, rec = _binary_setup(a, b)
    if rec:
        out.requires_grad = True

        def bwd(gs, accum):
            g = gs[0]
            if a.requires_grad:
                accum(a, g * bd)
            if b.requires_grad:
                accum(b, g * ad)

        tape.record((out,), bwd)
    return out


def relu(x: Tensor) -> Tensor:
    """max(0, x); the subgradient at exactly 0 is taken as 0."""
    xd = x.data
    out = Tensor(np.maximum(xd, 0.0))
    tape, rec = _unary_setup(x)
    if rec:
        out.requires_grad = True
        tape.record(
            (out,),
            lambda gs, accum: accum(x, gs[0] * (xd > 0.0) * _RELU_GRAD_FAULT),
        )
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp may overflow for very negative inputs; the limit 0.0 is correct.
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid(x: Tensor) -> Tensor:
    out = Tensor(_sigmoid(x.data))
    tape, rec = _unary_setup(x)
    if rec:
        out.requires_grad = True
        od = out.data
        tape.record((out,), lambda gs, accum: accum(x, gs[0] * od * (1.0 - od)))
    return out


def tanh(x: Tensor) -> Tensor:
    out = Tensor(np.tanh(x.data))
    tape, rec = _unary_setup(x)
    if rec:
        out.requires_grad = True
        od = out.data
        tape.record((out,), lambda gs, accum: accum(x, gs[0] * (1.0 - od * od)))
    return out


def softmax_columns(m: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Column-wise softmax with per-column max subtraction.

    ``mask`` is an optional boolean array of the same shape; masked (False)
    entries come out exactly 0 and every column must keep at least one valid
    entry.
    """
    md = m.data
    if md.shape[1] == 0 or md.shape[0] == 0:
        raise FullyMaskedError(f"softmax over empty matrix of shape {md.shape}")
    if mask is None:
        shifted = md - md.max(axis=0, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != md.shape:
            raise ShapeError(f"mask shape {mask.shape} does not match matrix {md.shape}")
        counts = mask.sum(axis=0)
        if (counts == 0).any():
            col = int(np.flatnonzero(counts == 0)[0])
            raise FullyMaskedError(f"softmax column {col} is fully masked")
        neg = np.where(mask, md, -np.inf)
        shifted = neg - neg.max(axis=0, keepdims=True)
        with np.errstate(invalid="ignore"):
            e = np.where(mask, np.exp(shifted), 0.0)
    out_data = e / e.sum(axis=0, keepdims=True)
    out = Tensor(out_data)
    tape, rec = _unary_setup(m)
    if rec:
        out.requires_grad = True
        od = out.data

        def bwd(gs, accum):
            g = gs[0]
            accum(m, od * (g - (g * od).sum(axis=0, keepdims=True)))

        tape.record((out,), bwd)
    return out


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Stack ``a`` above ``b``; backward splits the gradient by row ranges."""
    if a.data.shape[1] != b.data.shape[1]:
        raise ShapeError(
            f"concat_rows column counts disagree: {a.data.shape} vs {b.data.shape}"
        )
    out = Tensor(np.vstack((a.data, b.data)))
    tape, rec = _binary_setup(a, b)
    if rec:
        out.requires_grad = True
        split = a.data.shape[0]

        def bwd(gs, accum):
            g = gs[0]
            if a.requires_grad:
                accum(a, g[:split])
            if b.requires_grad:
                accum(b, g[split:])

        tape.record((out,), bwd)
    return out


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate tensors left-to-right along columns."""
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat_cols needs at least one tensor")
    rows = ts[0].data.shape[0]
    for t in ts[1:]:
        if t.data.shape[0] != rows:
            raise ShapeError(
                f"concat_cols row counts disagree: {ts[0].data.shape} vs {t.data.shape}"
            )
    out = Tensor(np.hstack([t.data for t in ts]))
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in ts):
        out.requires_grad = True
        widths = [t.data.shape[1] for t in ts]
        offsets = np.cumsum([0] + widths)

        def bwd(gs, accum):
            g = gs[0]
            for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    accum(t, g[:, lo:hi])

        tape.record((out,), bwd)
    return out


def slice_rows(m: Tensor, start: int, stop: int) -> Tensor:
    rows = m.data.shape[0]
    if not (0 <= start < stop <= rows):
        raise ShapeError(f"row slice [{start}:{stop}] out of range for {m.data.shape}")
    out = Tensor(m.data[start:stop].copy())
    tape, rec = _unary_setup(m)
    if rec:
        out.requires_grad = True

        def bwd(gs, accum):
            z = np.zeros_like(m.data)
            z[start:stop] = gs[0]
            accum(m, z)

        tape.record((out,), bwd)
    return out


def slice_cols(m: Tensor, start: int, stop: int) -> Tensor:
    cols = m.data.shape[1]
    if not (0 <= start < stop <= cols):
        raise ShapeError(f"column slice [{start}:{stop}] out of range for {m.data.shape}")
    out = Tensor(m.data[:, start:stop].copy())
    tape, rec = _unary_setup(m)
    if rec:
        out.requires_grad = True

        def bwd(gs, accum):
            z = np.zeros_like(m.data)
            z[:, start:stop] = gs[0]
            accum(m, z)

        tape.record((out,), bwd)
    return out


def gather_cols(m: Tensor, indices: Sequence[int]) -> Tensor:
    """Select columns by index (repeats allowed); backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"gather_cols needs a flat index list, got shape {idx.shape}")
    cols = m.data.shape[1]
    if idx.size and (idx.min() < 0 or idx.max() >= cols):
        raise ShapeError(f"gather_cols index out of range for {m.data.shape}")
    out = Tensor(m.data[:, idx])
    tape, rec = _unary_setup(m)
    if rec:
        out.requires_grad = True

        def bwd(gs, accum):
            z = np.zeros_like(m.data)
            np.add.at(z.T, idx, gs[0].T)
            accum(m, z)

        tape.record((out,), bwd)
    return out


def row_max_pool(m: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Per-row maximum over (unmasked) columns, as a (rows, 1) tensor.

    The backward pass routes each row's gradient to the lowest-index column
    attaining the maximum.
    """
    md = m.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (md.shape[1],):
            raise ShapeError(
                f"column mask of length {mask.shape} does not fit matrix {md.shape}"
            )
        keep = np.flatnonzero(mask)
        if keep.size == 0:
            raise EmptyPoolError("max pool over fully masked columns")
        vals = md[:, keep]
    else:
        if md.shape[1] == 0:
            raise EmptyPoolError("max pool over zero columns")
        keep = None
        vals = md
    out = Tensor(vals.max(axis=1, keepdims=True))
    tape, rec = _unary_setup(m)
    if rec:
        out.requires_grad = True
        local_arg = vals.argmax(axis=1)
        arg = local_arg if keep is None else keep[local_arg]

        def bwd(gs, accum):
            z = np.zeros_like(md)
            z[np.arange(md.shape[0]), arg] = gs[0][:, 0]
            accum(m, z)

        tape.record((out,), bwd)
    return out


def sum_all(m: Tensor) -> Tensor:
    """Sum of all entries as a 1x1 tensor."""
    out = Tensor(np.array([[m.data.sum()]]))
    tape, rec = _unary_setup(m)
    if rec:
        out.requires_grad = True
        tape.record(
            (out,),
            lambda gs, accum: accum(m, np.full_like(m.data, gs[0][0, 0])),
        )
    return out


def log_sum_exp(v: Tensor) -> Tensor:
    """log(sum(exp(v))) for a column vector, computed shift-stably."""
    vd = v.data
    if vd.shape[1] != 1 or vd.shape[0] == 0:
        raise ShapeError(f"log_sum_exp needs a non-empty column vector, got {vd.shape}")
    hi = vd.max()
    e = np.exp(vd - hi)
    total = e.sum()
    out = Tensor(np.array([[hi + np.log(total)]]))
    tape, rec = _unary_setup(v)
    if rec:
        out.requires_grad = True
        soft = e / total
        tape.record((out,), lambda gs, accum: accum(v, gs[0][0, 0] * soft))
    return out


def finite_difference_sweep(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float,
    floors: Sequence[float],
) -> list[float]:
    """Central-difference sweep returning max |a - n| / max(|a|, |n|, floor)
    for each requested denominator floor (one forward pair per entry)."""
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
        tape.backward(loss)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]
    for p in params:
        p.zero_grad()

    worst = [0.0] * len(floors)
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = f().item()
            flat[i] = orig - eps
            f_minus = f().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = gflat[i]
            diff = abs(a - numeric)
            scale = max(abs(a), abs(numeric))
            for j, floor in enumerate(floors):
                err = diff / max(scale, floor)
                if err > worst[j]:
                    worst[j] = err
    return worst


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
) -> float:
    """Compare tape gradients of ``f()`` against central finite differences.

    ``f`` must be a deterministic closure over ``params`` returning a scalar
    tensor.  Returns the maximum of |a - n| / max(|a|, |n|, 1e-8) over every
    entry of every parameter.
    """
    return finite_difference_sweep(f, params, eps, (1e-8,))[0]


class gradient_fault:
    """Context manager that corrupts the ReLU backward rule by ``scale``.

    Used as a negative control: with any ``scale`` != 1.0, gradient checks
    through ReLU must fail loudly.
    """

    def __init__(self, scale: float):
        self.scale = scale
        self._saved = None

    def __enter__(self):
        global _RELU_GRAD_FAULT
        self._saved = _RELU_GRAD_FAULT
        _RELU_GRAD_FAULT = self.scale
        return self

    def __exit__(self, exc_type, exc, tb):
        global _RELU_GRAD_FAULT
        _RELU_GRAD_FAULT = self._saved
        return False

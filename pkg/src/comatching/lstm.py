"""LSTM cells and bidirectional sequence encoders on the tensor tape.

The cell uses the standard gate set (input/forget/output sigmoids, tanh
candidate, no peepholes) with the four gate blocks stacked row-wise in the
order [input; forget; candidate; output].  ``lstm_run`` unrolls a whole
sequence as a single tape record with a hand-derived backward pass, which
keeps tape overhead per sequence constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptySequenceError, ShapeError
from .tensor import Tensor, _active_tape, _sigmoid, concat_rows

__all__ = ["LstmWeights", "BiLstmWeights", "lstm_cell", "lstm_run", "bilstm_encode"]


@dataclass
class LstmWeights:
    """Parameters of one LSTM direction: gates stacked as [i; f; g; o] rows."""

    w_x: Tensor  # (4h, input_size)
    w_h: Tensor  # (4h, h)
    b: Tensor    # (4h, 1)

    @property
    def hidden_size(self) -> int:
        return self.w_h.data.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_x.data.shape[1]

    @classmethod
    def create(
        cls,
        input_size: int,
        hidden_size: int,
        rng: np.random.Generator,
        weight_scale: float = 0.05,
        forget_bias: float = 1.0,
    ) -> "LstmWeights":
        """Uniform[-scale, scale] weights, zero biases except the forget gate."""
        h4 = 4 * hidden_size
        w_x = rng.uniform(-weight_scale, weight_scale, size=(h4, input_size))
        w_h = rng.uniform(-weight_scale, weight_scale, size=(h4, hidden_size))
        b = np.zeros((h4, 1))
        b[hidden_size : 2 * hidden_size] = forget_bias
        return cls(
            Tensor(w_x, requires_grad=True),
            Tensor(w_h, requires_grad=True),
            Tensor(b, requires_grad=True),
        )

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.w_x", self.w_x), (f"{prefix}.w_h", self.w_h), (f"{prefix}.b", self.b)]


@dataclass
class BiLstmWeights:
    """Forward and backward directions, each with hidden size out_size // 2."""

    fwd: LstmWeights
    bwd: LstmWeights

    @property
    def input_size(self) -> int:
        return self.fwd.input_size

    @property
    def output_size(self) -> int:
        return 2 * self.fwd.hidden_size

    @classmethod
    def create(
        cls,
        input_size: int,
        output_size: int,
        rng: np.random.Generator,
        weight_scale: float = 0.05,
    ) -> "BiLstmWeights":
        if output_size % 2 != 0:
            raise ConfigError(f"bidirectional output size must be even, got {output_size}")
        half = output_size // 2
        return cls(
            LstmWeights.create(input_size, half, rng, weight_scale),
            LstmWeights.create(input_size, half, rng, weight_scale),
        )

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return self.fwd.named(f"{prefix}.fwd") + self.bwd.named(f"{prefix}.bwd")


def _check_cell_shapes(x: np.ndarray, h: np.ndarray, c: np.ndarray, w: LstmWeights) -> int:
    h4, d_in = w.w_x.data.shape
    if h4 % 4 != 0:
        raise ShapeError(f"gate matrix rows must be 4*h, got {w.w_x.data.shape}")
    hid = h4 // 4
    if w.w_h.data.shape != (h4, hid):
        raise ShapeError(f"recurrent matrix shape {w.w_h.data.shape} != ({h4}, {hid})")
    if w.b.data.shape != (h4, 1):
        raise ShapeError(f"gate bias shape {w.b.data.shape} != ({h4}, 1)")
    if x.shape[0] != d_in:
        raise ShapeError(f"cell input has {x.shape[0]} rows, weights expect {d_in}")
    if h.shape[0] != hid or c.shape[0] != hid:
        raise ShapeError(
            f"state rows ({h.shape[0]}, {c.shape[0]}) do not match hidden size {hid}"
        )
    if not (x.shape[1] == h.shape[1] == c.shape[1]):
        raise ShapeError(
            f"cell batch widths disagree: x {x.shape}, h {h.shape}, c {c.shape}"
        )
    return hid


def _gates(z: np.ndarray, hid: int):
    i = _sigmoid(z[:hid])
    f = _sigmoid(z[hid : 2 * hid])
    g = np.tanh(z[2 * hid : 3 * hid])
    o = _sigmoid(z[3 * hid :])
    return i, f, g, o


def _gate_grads(di, df, dg, do, i, f, g, o) -> np.ndarray:
    return np.concatenate(
        (di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)),
        axis=0,
    )


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, w: LstmWeights) -> tuple[Tensor, Tensor]:
    """One LSTM step on column vectors (or a column batch).

    Returns (h_t, c_t) with c_t = f*c_prev + i*g and h_t = o*tanh(c_t).
    """
    xd, hd, cd = x.data, h_prev.data, c_prev.data
    hid = _check_cell_shapes(xd, hd, cd, w)
    wx, wh, bd = w.w_x.data, w.w_h.data, w.b.data
    z = wx @ xd + wh @ hd + bd
    i, f, g, o = _gates(z, hid)
    c_new = f * cd + i * g
    tc = np.tanh(c_new)
    h_out = Tensor(o * tc)
    c_out = Tensor(c_new)

    tape = _active_tape()
    inputs = (x, h_prev, c_prev, w.w_x, w.w_h, w.b)
    if tape is not None and any(t.requires_grad for t in inputs):
        h_out.requires_grad = True
        c_out.requires_grad = True

        def bwd(gs, accum):
            gh, gc = gs
            if gh is not None:
                do = gh * tc
                dc = gc + gh * o * (1.0 - tc * tc) if gc is not None else gh * o * (1.0 - tc * tc)
            else:
                do = np.zeros_like(tc)
                dc = gc
            di = dc * g
            df = dc * cd
            dg = dc * i
            dz = _gate_grads(di, df, dg, do, i, f, g, o)
            if w.w_x.requires_grad:
                accum(w.w_x, dz @ xd.T)
            if w.w_h.requires_grad:
                accum(w.w_h, dz @ hd.T)
            if w.b.requires_grad:
                accum(w.b, dz.sum(axis=1, keepdims=True))
            if x.requires_grad:
                accum(x, wx.T @ dz)
            if h_prev.requires_grad:
                accum(h_prev, wh.T @ dz)
            if c_prev.requires_grad:
                accum(c_prev, dc * f)

        tape.record((h_out, c_out), bwd)
    return h_out, c_out


def lstm_run(x: Tensor, w: LstmWeights, reverse: bool = False) -> Tensor:
    """Unroll one LSTM direction over the columns of ``x`` (shape d x T).

    Output column t is the hidden state after the step that consumed input
    column t; with ``reverse`` the columns are consumed right-to-left, so
    column t summarizes the suffix starting at t.  Initial states are zero.
    The whole unroll is one tape record with an exact backward-through-time
    gradient.
    """
    xd = x.data
    T = xd.shape[1]
    if T == 0:
        raise EmptySequenceError("lstm_run over an empty sequence")
    hid = _check_cell_shapes(xd[:, :1], np.zeros((w.hidden_size, 1)), np.zeros((w.hidden_size, 1)), w)
    wx, wh, bd = w.w_x.data, w.w_h.data, w.b.data

    order = range(T - 1, -1, -1) if reverse else range(T)
    x_proc = xd[:, list(order)]                      # (d, T) in processing order
    zs = wx @ x_proc + bd                            # input contributions, all steps at once

    h = np.zeros((hid, 1))
    c = np.zeros((hid, 1))
    h_prevs = np.empty((hid, T))
    cache = []
    out = np.empty((hid, T))
    for k, t in enumerate(order):
        h_prevs[:, k : k + 1] = h
        z = zs[:, k : k + 1] + wh @ h
        i, f, g, o = _gates(z, hid)
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h = o * tc
        cache.append((i, f, g, o, tc, c))
        c = c_new
        out[:, t : t + 1] = h

    result = Tensor(out)
    tape = _active_tape()
    inputs = (x, w.w_x, w.w_h, w.b)
    if tape is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        steps = list(order)

        def bwd(gs, accum):
            g_out = gs[0]
            dz_all = np.empty((4 * hid, T))
            dh = np.zeros((hid, 1))
            dc = np.zeros((hid, 1))
            for k in range(T - 1, -1, -1):
                i, f, g, o, tc, c_prev = cache[k]
                gh = g_out[:, steps[k] : steps[k] + 1] + dh
                do = gh * tc
                dc = dc + gh * o * (1.0 - tc * tc)
                di = dc * g
                df = dc * c_prev
                dg = dc * i
                dz = _gate_grads(di, df, dg, do, i, f, g, o)
                dz_all[:, k : k + 1] = dz
                dh = wh.T @ dz
                dc = dc * f
            if w.w_x.requires_grad:
                accum(w.w_x, dz_all @ x_proc.T)
            if w.w_h.requires_grad:
                accum(w.w_h, dz_all @ h_prevs.T)
            if w.b.requires_grad:
                accum(w.b, dz_all.sum(axis=1, keepdims=True))
            if x.requires_grad:
                dxp = wx.T @ dz_all
                dx = np.empty_like(xd)
                dx[:, steps] = dxp
                accum(x, dx)

        tape.record((result,), bwd)
    return result


def bilstm_encode(x: Tensor, fwd: LstmWeights, bwd: LstmWeights) -> Tensor:
    """Bidirectional encoding of a (d, T) sequence into (l, T) states.

    Column t is the forward state at t stacked over the backward state at t;
    both directions contribute l/2 rows.
    """
    if x.data.shape[1] == 0:
        raise EmptySequenceError("cannot encode an empty sequence")
    if fwd.hidden_size != bwd.hidden_size or fwd.input_size != bwd.input_size:
        raise ShapeError(
            f"direction weights disagree: fwd ({fwd.input_size}->{fwd.hidden_size}) "
            f"vs bwd ({bwd.input_size}->{bwd.hidden_size})"
        )
    return concat_rows(lstm_run(x, fwd), lstm_run(x, bwd, reverse=True))

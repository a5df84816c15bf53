"""Neural building blocks: fused LSTM step, Bi-LSTM, char convolution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from jere.ndcore.tensor import (
    Tensor,
    _acc,
    _record,
    concat,
    max_rows,
    rows,
    row,
    stack,
    zeros,
)


def uniform_init(rng: np.random.Generator, shape, scale: float = 0.1,
                 dtype=np.float32) -> Tensor:
    """Trainable tensor drawn uniformly from [-scale, scale]."""
    return Tensor(rng.uniform(-scale, scale, size=shape).astype(dtype), requires_grad=True)


@dataclass
class LSTMParams:
    """Combined gate weights, input/forget/cell/output stacked along axis 0."""

    w_x: Tensor  # (4H, d_in)
    w_h: Tensor  # (4H, H)
    b: Tensor    # (4H,)

    @property
    def hidden_size(self) -> int:
        return self.w_h.data.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_x.data.shape[1]


def lstm_params(rng: np.random.Generator, d_in: int, hidden: int,
                dtype=np.float32, scale: float = 0.1) -> LSTMParams:
    return LSTMParams(
        w_x=uniform_init(rng, (4 * hidden, d_in), scale, dtype),
        w_h=uniform_init(rng, (4 * hidden, hidden), scale, dtype),
        b=uniform_init(rng, (4 * hidden,), scale, dtype),
    )


def _sig(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, p: LSTMParams) -> tuple[Tensor, Tensor]:
    """One LSTM cell update; fused into a single taped op."""
    hidden = p.hidden_size
    if x.data.shape != (p.input_size,) or h_prev.data.shape != (hidden,) \
            or c_prev.data.shape != (hidden,):
        raise ValueError(
            f"lstm_step dimension mismatch: x{x.data.shape} h{h_prev.data.shape} "
            f"c{c_prev.data.shape} vs params in={p.input_size} hidden={hidden}")
    z = p.w_x.data @ x.data + p.w_h.data @ h_prev.data + p.b.data
    i = _sig(z[:hidden])
    f = _sig(z[hidden:2 * hidden])
    g = np.tanh(z[2 * hidden:3 * hidden])
    o = _sig(z[3 * hidden:])
    c_data = f * c_prev.data + i * g
    tc = np.tanh(c_data)
    h_data = o * tc
    needs = any(t.requires_grad for t in (x, h_prev, c_prev, p.w_x, p.w_h, p.b))
    h_out = Tensor(h_data, requires_grad=needs)
    c_out = Tensor(c_data, requires_grad=needs)

    def fn():
        gh = h_out.grad if h_out.grad is not None else 0.0
        gc = c_out.grad if c_out.grad is not None else 0.0
        go = gh * tc
        gc_total = gc + gh * o * (1.0 - tc * tc)
        gi = gc_total * g
        gg = gc_total * i
        gf = gc_total * c_prev.data
        gz = np.concatenate([
            gi * i * (1.0 - i),
            gf * f * (1.0 - f),
            gg * (1.0 - g * g),
            go * o * (1.0 - o),
        ])
        _acc(p.w_x, np.outer(gz, x.data))
        _acc(p.w_h, np.outer(gz, h_prev.data))
        _acc(p.b, gz)
        _acc(x, p.w_x.data.T @ gz)
        _acc(h_prev, p.w_h.data.T @ gz)
        _acc(c_prev, gc_total * f)

    _record((h_out, c_out), fn)
    return h_out, c_out


def bilstm(seq: Tensor, fwd: LSTMParams, bwd: LSTMParams) -> Tensor:
    """Bi-directional LSTM over (n, d_in); output row i is fwd(i) || bwd(i)."""
    n = seq.data.shape[0]
    if n == 0:
        raise ValueError("bilstm over empty sequence")
    dtype = seq.dtype
    h = zeros((fwd.hidden_size,), dtype)
    c = zeros((fwd.hidden_size,), dtype)
    fwd_states = []
    for i in range(n):
        h, c = lstm_step(row(seq, i), h, c, fwd)
        fwd_states.append(h)
    h = zeros((bwd.hidden_size,), dtype)
    c = zeros((bwd.hidden_size,), dtype)
    bwd_states: list[Tensor | None] = [None] * n
    for i in range(n - 1, -1, -1):
        h, c = lstm_step(row(seq, i), h, c, bwd)
        bwd_states[i] = h
    return stack([concat([fwd_states[i], bwd_states[i]]) for i in range(n)])


def conv1d_same(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded 1-D convolution over rows.

    x: (L, d_in); w: (d_out, width * d_in) with an odd width; b: (d_out,).
    Edge windows see zero vectors, so every position yields an output row.
    """
    length, d_in = x.data.shape
    d_out, flat = w.data.shape
    if flat % d_in != 0:
        raise ValueError("conv1d_same: weight width not a multiple of input dim")
    width = flat // d_in
    if width % 2 != 1:
        raise ValueError("conv1d_same requires an odd filter width")
    half = width // 2
    w3 = w.data.reshape(d_out, width, d_in)
    padded = np.zeros((length + 2 * half, d_in), dtype=x.dtype)
    padded[half:half + length] = x.data
    out_data = np.broadcast_to(b.data, (length, d_out)).copy()
    for k in range(width):
        out_data += padded[k:k + length] @ w3[:, k, :].T
    needs = x.requires_grad or w.requires_grad or b.requires_grad
    out = Tensor(out_data, requires_grad=needs)

    def fn():
        g = out.grad
        _acc(b, g.sum(axis=0))
        if w.requires_grad:
            gw = np.empty_like(w.data).reshape(d_out, width, d_in)
            for k in range(width):
                gw[:, k, :] = g.T @ padded[k:k + length]
            _acc(w, gw.reshape(d_out, flat))
        if x.requires_grad:
            gpad = np.zeros_like(padded)
            for k in range(width):
                gpad[k:k + length] += g @ w3[:, k, :]
            _acc(x, gpad[half:half + length])

    _record((out,), fn)
    return out


def char_cnn(char_ids, char_emb: Tensor, conv_w: Tensor, conv_b: Tensor) -> Tensor:
    """Character-level word feature: embed, convolve, max-pool over positions."""
    x = rows(char_emb, char_ids)
    return max_rows(conv1d_same(x, conv_w, conv_b))

"""Discrete-time selective state-space scan over channel sequences.

The core recurrence, applied along a serialized scan path of length T with
channel vectors x_t in R^C and hidden state h_t in R^N:

    h_t = A h_{t-1} + B x_t
    y_t = C_out h_t + D * x_t          (* is per-channel)

A is diagonal and parameterized as tanh(a_raw), which pins every mode inside
(-1, 1) and keeps the recurrence stable for any parameter value. The
parameters are used directly in discrete time; there is no step-size
discretization stage.

Two implementations share this contract. ``ssm_scan`` runs the time loop in
plain array code and registers a single graph node whose backward is the
hand-derived reverse recurrence. ``ssm_scan_naive`` builds the same
computation step by step out of primitive tensor ops, so its gradients come
from the generic tape; it exists to cross-check the fused op and is
deliberately unoptimized.

Selection (off by default) makes the input and readout maps depend on the
current input: b_t = W_B x_t and c_t = W_C x_t, with the state widened to
one N-vector per channel and a rank-one outer-product injection

    H_t = A H_{t-1} + b_t x_t^T        (H_t is N x C)
    y_t = H_t^T c_t + D * x_t
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError, Tensor, concat_rows, matmul, reshape, take_rows, tanh, transpose


@dataclass
class SSMParams:
    a_raw: Tensor              # (N,); transition diagonal is tanh(a_raw)
    b: Tensor                  # (N, C) static input map
    c_out: Tensor              # (C, N) static readout map
    d: Tensor                  # (C,) skip gain
    w_b: Tensor | None = None  # (N, C) selection map for b_t
    w_c: Tensor | None = None  # (N, C) selection map for c_t
    selective: bool = False

    @property
    def state_dim(self) -> int:
        return self.a_raw.shape[0]

    @property
    def channels(self) -> int:
        return self.b.shape[1]

    def named(self, prefix: str = "") -> dict:
        out = {
            prefix + "a_raw": self.a_raw,
            prefix + "b": self.b,
            prefix + "c_out": self.c_out,
            prefix + "d": self.d,
        }
        if self.selective:
            out[prefix + "w_b"] = self.w_b
            out[prefix + "w_c"] = self.w_c
        return out


def init_ssm_params(
    state_dim: int, channels: int, rng: np.random.Generator, selective: bool = False
) -> SSMParams:
    n, c = state_dim, channels
    p = SSMParams(
        a_raw=Tensor(rng.normal(0.0, 0.5, size=n), requires_grad=True),
        b=Tensor(rng.normal(0.0, 1.0 / np.sqrt(c), size=(n, c)), requires_grad=True),
        c_out=Tensor(rng.normal(0.0, 1.0 / np.sqrt(n), size=(c, n)), requires_grad=True),
        d=Tensor(np.ones(c), requires_grad=True),
        selective=selective,
    )
    if selective:
        p.w_b = Tensor(rng.normal(0.0, 1.0 / np.sqrt(c), size=(n, c)), requires_grad=True)
        p.w_c = Tensor(rng.normal(0.0, 1.0 / np.sqrt(c), size=(n, c)), requires_grad=True)
    return p


def selective_params(x_t: Tensor, w_b: Tensor, w_c: Tensor) -> tuple[Tensor, Tensor]:
    """Per-step input-dependent maps: (b_t, c_t) as (N,) tensors."""
    col = reshape(x_t, (x_t.data.size, 1))
    b_t = reshape(matmul(w_b, col), (w_b.shape[0],))
    c_t = reshape(matmul(w_c, col), (w_c.shape[0],))
    return b_t, c_t


def _check_seq(seq: Tensor, params: SSMParams) -> None:
    if seq.ndim != 2:
        raise DimensionError(f"ssm_scan: expected a (T, C) sequence, got {seq.shape}")
    if seq.shape[1] != params.channels:
        raise DimensionError(
            f"ssm_scan: sequence channels {seq.shape} do not match params C={params.channels}"
        )
    if params.selective and (params.w_b is None or params.w_c is None):
        raise DimensionError("ssm_scan: selective params need w_b and w_c")


def _h0_array(h0, n: int) -> np.ndarray:
    if h0 is None:
        return np.zeros(n)
    arr = h0.data if isinstance(h0, Tensor) else np.asarray(h0, dtype=np.float64)
    if arr.shape != (n,):
        raise DimensionError(f"ssm_scan: initial state shape {arr.shape} != ({n},)")
    return arr


def _static_forward(xs, a, b, c_out, d, h0):
    t_len, _ = xs.shape
    hs = np.empty((t_len + 1, a.size))
    hs[0] = h0
    for t in range(t_len):
        hs[t + 1] = a * hs[t] + b @ xs[t]
    ys = hs[1:] @ c_out.T + xs * d
    return ys, hs


def _selective_forward(xs, a, d, w_b, w_c, h0):
    t_len, c = xs.shape
    n = a.size
    bsel = xs @ w_b.T  # (T, N)
    csel = xs @ w_c.T  # (T, N)
    hs = np.empty((t_len + 1, n, c))
    hs[0] = h0[:, None]
    ys = np.empty_like(xs)
    for t in range(t_len):
        hs[t + 1] = a[:, None] * hs[t] + bsel[t][:, None] * xs[t][None, :]
        ys[t] = hs[t + 1].T @ csel[t]
    ys += xs * d
    return ys, hs, bsel, csel


def ssm_scan(seq: Tensor, params: SSMParams, h0: Tensor | None = None) -> Tensor:
    """Run the recurrence over a (T, C) sequence; one fused graph node."""
    _check_seq(seq, params)
    n = params.state_dim
    h0_arr = _h0_array(h0, n)
    a = np.tanh(params.a_raw.data)
    xs = seq.data

    if not params.selective:
        b, c_out, d = params.b.data, params.c_out.data, params.d.data
        ys, hs = _static_forward(xs, a, b, c_out, d, h0_arr)

        def bw(g):
            dc_out = g.T @ hs[1:]
            dd = (g * xs).sum(axis=0)
            dx = g * d
            dh = np.zeros(n)
            da = np.zeros(n)
            db = np.zeros_like(b)
            for t in range(xs.shape[0] - 1, -1, -1):
                dh = dh + c_out.T @ g[t]
                da += dh * hs[t]
                db += np.outer(dh, xs[t])
                dx[t] += b.T @ dh
                dh = a * dh
            da_raw = da * (1.0 - a * a)
            grads = [dx, da_raw, db, dc_out, dd]
            if isinstance(h0, Tensor):
                grads.append(dh)
            return tuple(grads)

        parents = [seq, params.a_raw, params.b, params.c_out, params.d]
        if isinstance(h0, Tensor):
            parents.append(h0)
        return Tensor._node(ys, tuple(parents), bw, "ssm_scan")

    w_b, w_c, d = params.w_b.data, params.w_c.data, params.d.data
    ys, hs, bsel, csel = _selective_forward(xs, a, d, w_b, w_c, h0_arr)

    def bw(g):
        dd = (g * xs).sum(axis=0)
        dx = g * d
        dh = np.zeros_like(hs[0])
        da = np.zeros(n)
        dw_b = np.zeros_like(w_b)
        dw_c = np.zeros_like(w_c)
        for t in range(xs.shape[0] - 1, -1, -1):
            dc_t = hs[t + 1] @ g[t]
            dh = dh + np.outer(csel[t], g[t])
            da += (dh * hs[t]).sum(axis=1)
            db_t = dh @ xs[t]
            dx[t] += dh.T @ bsel[t]
            dw_b += np.outer(db_t, xs[t])
            dw_c += np.outer(dc_t, xs[t])
            dx[t] += w_b.T @ db_t + w_c.T @ dc_t
            dh = a[:, None] * dh
        da_raw = da * (1.0 - a * a)
        grads = [dx, da_raw, dd, dw_b, dw_c]
        if isinstance(h0, Tensor):
            grads.append(dh.sum(axis=1))
        return tuple(grads)

    parents = [seq, params.a_raw, params.d, params.w_b, params.w_c]
    if isinstance(h0, Tensor):
        parents.append(h0)
    return Tensor._node(ys, tuple(parents), bw, "ssm_scan_selective")


def ssm_state_trajectory(seq_data: np.ndarray, params: SSMParams, h0=None) -> np.ndarray:
    """Hidden states h_1..h_T for inspection; shares the fused forward code."""
    xs = np.asarray(seq_data, dtype=np.float64)
    a = np.tanh(params.a_raw.data)
    h0_arr = _h0_array(h0, params.state_dim)
    if params.selective:
        _, hs, _, _ = _selective_forward(xs, a, params.d.data, params.w_b.data, params.w_c.data, h0_arr)
    else:
        _, hs = _static_forward(xs, a, params.b.data, params.c_out.data, params.d.data, h0_arr)
    return hs[1:]


def ssm_scan_naive(seq: Tensor, params: SSMParams, h0: Tensor | None = None) -> Tensor:
    """Reference implementation: the same contract as ``ssm_scan``, built one
    step at a time from primitive ops so the tape produces its gradients.
    """
    _check_seq(seq, params)
    t_len, c = seq.shape
    n = params.state_dim
    a_col = reshape(tanh(params.a_raw), (n, 1))
    d_col = reshape(params.d, (c, 1))
    outs = []

    if not params.selective:
        h = reshape(h0, (n, 1)) if isinstance(h0, Tensor) else Tensor(_h0_array(h0, n).reshape(n, 1))
        for t in range(t_len):
            x_t = transpose(take_rows(seq, [t]))  # (C, 1)
            h = a_col * h + matmul(params.b, x_t)
            y_t = matmul(params.c_out, h) + d_col * x_t
            outs.append(transpose(y_t))
        return concat_rows(outs)

    ones_row = Tensor(np.ones((1, c)))
    if isinstance(h0, Tensor):
        big_h = matmul(reshape(h0, (n, 1)), ones_row)
    else:
        big_h = Tensor(np.broadcast_to(_h0_array(h0, n)[:, None], (n, c)).copy())
    for t in range(t_len):
        x_t = transpose(take_rows(seq, [t]))  # (C, 1)
        b_t = matmul(params.w_b, x_t)         # (N, 1)
        c_t = matmul(params.w_c, x_t)         # (N, 1)
        big_h = a_col * big_h + matmul(b_t, transpose(x_t))
        y_t = matmul(transpose(big_h), c_t) + d_col * x_t
        outs.append(transpose(y_t))
    return concat_rows(outs)

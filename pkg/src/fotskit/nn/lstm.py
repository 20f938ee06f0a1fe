"""Bidirectional LSTM whose two directions are summed, with per-item valid lengths.

Gate layout inside the stacked weights is (input, forget, cell, output).
A step whose mask is 0 zeroes both the hidden and the cell state, so the
reverse direction of a padded item starts from a clean state at its last
valid frame, exactly as if the item had been run on its own.
"""
import numpy as np

from ..errors import DimensionError
from .functional import sigmoid


def _run_direction(x, w_ih, w_hh, b, mask, reverse):
    t_len, n, _ = x.shape
    hid = w_hh.shape[1]
    xw = x @ w_ih.T + b
    h = np.zeros((n, hid), dtype=x.dtype)
    c = np.zeros((n, hid), dtype=x.dtype)
    out = np.zeros((t_len, n, hid), dtype=x.dtype)
    steps = []
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    for t in order:
        a = xw[t] + h @ w_hh.T
        i = sigmoid(a[:, :hid])
        f = sigmoid(a[:, hid:2 * hid])
        g = np.tanh(a[:, 2 * hid:3 * hid])
        o = sigmoid(a[:, 3 * hid:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = mask[t][:, None]
        steps.append((t, h, c, i, f, g, o, tc, m))
        h = h_new * m
        c = c_new * m
        out[t] = h
    return out, (x, w_ih, w_hh, steps)


def _backward_direction(dout, cache):
    x, w_ih, w_hh, steps = cache
    hid = w_hh.shape[1]
    n = x.shape[1]
    dxw = np.zeros((x.shape[0], n, 4 * hid), dtype=dout.dtype)
    dw_hh = np.zeros_like(w_hh)
    dh_next = np.zeros((n, hid), dtype=dout.dtype)
    dc_next = np.zeros((n, hid), dtype=dout.dtype)
    for t, h_prev, c_prev, i, f, g, o, tc, m in reversed(steps):
        dh = (dout[t] + dh_next) * m
        dc = dc_next * m + dh * o * (1.0 - tc * tc)
        da = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            dh * tc * o * (1.0 - o),
        ], axis=1)
        dxw[t] = da
        dw_hh += da.T @ h_prev
        dh_next = da @ w_hh
        dc_next = dc * f
    flat_x = x.reshape(-1, x.shape[2])
    flat_d = dxw.reshape(-1, 4 * hid)
    dw_ih = flat_d.T @ flat_x
    db = flat_d.sum(axis=0)
    dx = dxw @ w_ih
    return dx, dw_ih, dw_hh, db


def bilstm(seq, params, mask=None):
    """Run both directions over ``seq`` (T, N, C) and sum their hidden states.

    ``params`` maps ``fw_w_ih, fw_w_hh, fw_b, bw_w_ih, bw_w_hh, bw_b`` to arrays;
    ``mask`` is (T, N) with 1 for valid frames.  Returns ``(out, cache)`` with
    ``out`` of shape (T, N, hidden).
    """
    if seq.ndim != 3:
        raise DimensionError(f"bilstm expects (T, N, C) input, got rank {seq.ndim}")
    if seq.shape[0] < 1:
        raise ValueError("bilstm needs a sequence with at least one step")
    if seq.shape[2] != params["fw_w_ih"].shape[1]:
        raise DimensionError(f"bilstm feature axis mismatch: input has {seq.shape[2]}, "
                             f"weights expect {params['fw_w_ih'].shape[1]}")
    if mask is None:
        mask = np.ones(seq.shape[:2], dtype=seq.dtype)
    else:
        mask = mask.astype(seq.dtype)
    out_f, cache_f = _run_direction(seq, params["fw_w_ih"], params["fw_w_hh"], params["fw_b"], mask, False)
    out_b, cache_b = _run_direction(seq, params["bw_w_ih"], params["bw_w_hh"], params["bw_b"], mask, True)
    return out_f + out_b, (cache_f, cache_b)


def bilstm_backward(dout, cache):
    """Returns ``(dseq, grads)`` where ``grads`` uses the same keys as ``params``."""
    cache_f, cache_b = cache
    dx_f, dwi_f, dwh_f, db_f = _backward_direction(dout, cache_f)
    dx_b, dwi_b, dwh_b, db_b = _backward_direction(dout, cache_b)
    grads = {
        "fw_w_ih": dwi_f, "fw_w_hh": dwh_f, "fw_b": db_f,
        "bw_w_ih": dwi_b, "bw_w_hh": dwh_b, "bw_b": db_b,
    }
    return dx_f + dx_b, grads

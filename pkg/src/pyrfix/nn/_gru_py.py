"""Pure-numpy GRU sequence kernel (fallback for the compiled extension).

Layout shared with the compiled kernel:
  xp    (T, B, 3H)  input-side projections with biases folded, blocks [r|z|n]
  Wh    (3H, H)     stacked hidden-side weights [W_hr; W_hz; W_hn]
  gates (T, B, 3H)  cached activations [r|z|n]
  hn    (T, B, H)   cached h_prev @ W_hn.T (the term gated by r)

Gate equations (reset r, update z, new n):
  r = sigmoid(xp_r + h @ W_hr.T)        z = sigmoid(xp_z + h @ W_hz.T)
  n = tanh(xp_n + r * (h @ W_hn.T))     h' = (1 - z) * n + z * h
"""

from __future__ import annotations

import numpy as np

from .core import sigmoid

IS_COMPILED = False


def gru_seq_forward(xp: np.ndarray, h0: np.ndarray, Wh: np.ndarray):
    T, B, H3 = xp.shape
    H = H3 // 3
    hs = np.empty((T, B, H), dtype=xp.dtype)
    gates = np.empty((T, B, H3), dtype=xp.dtype)
    hn = np.empty((T, B, H), dtype=xp.dtype)
    h = h0
    for t in range(T):
        hp = h @ Wh.T
        r = sigmoid(xp[t, :, :H] + hp[:, :H])
        z = sigmoid(xp[t, :, H:2 * H] + hp[:, H:2 * H])
        hn[t] = hp[:, 2 * H:]
        n = np.tanh(xp[t, :, 2 * H:] + r * hn[t])
        gates[t, :, :H] = r
        gates[t, :, H:2 * H] = z
        gates[t, :, 2 * H:] = n
        h = (1.0 - z) * n + z * h
        hs[t] = h
    return hs, gates, hn


def gru_seq_backward(d_hs: np.ndarray, h0: np.ndarray, hs: np.ndarray,
                     gates: np.ndarray, hn: np.ndarray, Wh: np.ndarray):
    T, B, H = d_hs.shape
    d_xp = np.empty((T, B, 3 * H), dtype=d_hs.dtype)
    d_Wh = np.zeros_like(Wh)
    carry = np.zeros((B, H), dtype=d_hs.dtype)
    d_hp = np.empty((B, 3 * H), dtype=d_hs.dtype)
    for t in range(T - 1, -1, -1):
        h_prev = h0 if t == 0 else hs[t - 1]
        r = gates[t, :, :H]
        z = gates[t, :, H:2 * H]
        n = gates[t, :, 2 * H:]
        dh = d_hs[t] + carry
        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        dn_pre = dn * (1.0 - n * n)
        dz_pre = dz * z * (1.0 - z)
        dr = dn_pre * hn[t]
        dr_pre = dr * r * (1.0 - r)
        d_xp[t, :, :H] = dr_pre
        d_xp[t, :, H:2 * H] = dz_pre
        d_xp[t, :, 2 * H:] = dn_pre
        d_hp[:, :H] = dr_pre
        d_hp[:, H:2 * H] = dz_pre
        d_hp[:, 2 * H:] = dn_pre * r
        d_Wh += d_hp.T @ h_prev
        carry = dh * z + d_hp @ Wh
    return d_xp, carry, d_Wh

"""GRU cell/layer, bidirectional pyramid encoder, and attention decoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import Module, uniform_init
from .core import Affine, Embedding, PyramidContraction, sigmoid
from . import kernels

_GATE_VIEWS = {
    "W_ir": ("Wi", 0), "W_iz": ("Wi", 1), "W_in": ("Wi", 2),
    "W_hr": ("Wh", 0), "W_hz": ("Wh", 1), "W_hn": ("Wh", 2),
    "b_ir": ("bi", 0), "b_iz": ("bi", 1), "b_in": ("bi", 2),
    "b_hr": ("bh", 0), "b_hz": ("bh", 1), "b_hn": ("bh", 2),
}


class GruLayer(Module):
    """One GRU direction; runs full sequences via the selected kernel and
    single steps in Python (used by the decoder).

    Parameters are stored stacked as Wi (3H, d_in), Wh (3H, H), bi, bh (3H,)
    with gate blocks ordered [reset | update | new].  Per-gate matrices are
    exposed as views (``layer.view("W_hn")``).
    """

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator,
                 dtype=np.float32, kernel: str | None = None):
        super().__init__()
        self.d_in, self.d_hidden = d_in, d_hidden
        self.kernel_name = kernel
        H = d_hidden
        self.add_param("Wi", uniform_init(rng, (3 * H, d_in), d_in, dtype))
        self.add_param("Wh", uniform_init(rng, (3 * H, H), H, dtype))
        self.add_param("bi", uniform_init(rng, (3 * H,), d_in, dtype))
        self.add_param("bh", uniform_init(rng, (3 * H,), H, dtype))

    def view(self, name: str) -> np.ndarray:
        base, block = _GATE_VIEWS[name]
        H = self.d_hidden
        return self.params[base][block * H:(block + 1) * H]

    def _kernel(self):
        return kernels.get_kernel(self.kernel_name)

    # -- full-sequence mode (encoder) ---------------------------------------

    def forward_seq(self, xs: np.ndarray, h0: np.ndarray | None = None):
        """xs (B, T, d_in) -> hidden states (B, T, H) and final state (B, H)."""
        B, T, _ = xs.shape
        H = self.d_hidden
        if h0 is None:
            h0 = np.zeros((B, H), dtype=xs.dtype)
        if T == 0:
            self.push_cache(("seq", None, h0, None, None, None, xs))
            return np.zeros((B, 0, H), dtype=xs.dtype), h0
        xp = xs @ self.params["Wi"].T + (self.params["bi"] + self.params["bh"])
        xp = np.ascontiguousarray(xp.transpose(1, 0, 2))
        hs, gates, hn = self._kernel().gru_seq_forward(xp, h0, self.params["Wh"])
        self.push_cache(("seq", hs, h0, gates, hn, xp.shape, xs))
        return hs.transpose(1, 0, 2), hs[-1]

    def backward_seq(self, d_hs: np.ndarray, d_hlast: np.ndarray | None = None):
        """Gradients for forward_seq; d_hs (B, T, H).  Returns (d_xs, d_h0)."""
        tag, hs, h0, gates, hn, _, xs = self.pop_cache()
        assert tag == "seq"
        B, T, H = d_hs.shape
        if T == 0:
            d_h0 = np.zeros_like(h0) if d_hlast is None else d_hlast.copy()
            return np.zeros_like(xs), d_h0
        d_hs_k = np.ascontiguousarray(d_hs.transpose(1, 0, 2))
        if d_hlast is not None:
            d_hs_k[-1] += d_hlast
        d_xp, d_h0, d_Wh = self._kernel().gru_seq_backward(
            d_hs_k, h0, hs, gates, hn, self.params["Wh"])
        self.grads["Wh"] += d_Wh
        flat_dxp = d_xp.transpose(1, 0, 2).reshape(-1, 3 * H)
        self.grads["Wi"] += flat_dxp.T @ xs.reshape(-1, self.d_in)
        bias_grad = flat_dxp.sum(axis=0)
        self.grads["bi"] += bias_grad
        self.grads["bh"] += bias_grad
        d_xs = (flat_dxp @ self.params["Wi"]).reshape(B, T, self.d_in)
        return d_xs, d_h0

    # -- single-step mode (decoder) -----------------------------------------

    def step(self, x: np.ndarray, h: np.ndarray) -> np.ndarray:
        """One cell update: x (B, d_in), h (B, H) -> new hidden (B, H)."""
        H = self.d_hidden
        xp = x @ self.params["Wi"].T + (self.params["bi"] + self.params["bh"])
        hp = h @ self.params["Wh"].T
        r = sigmoid(xp[:, :H] + hp[:, :H])
        z = sigmoid(xp[:, H:2 * H] + hp[:, H:2 * H])
        hn = hp[:, 2 * H:]
        n = np.tanh(xp[:, 2 * H:] + r * hn)
        h_new = (1.0 - z) * n + z * h
        self.push_cache(("step", x, h, r, z, n, hn))
        return h_new

    def backward_step(self, d_h_new: np.ndarray):
        tag, x, h, r, z, n, hn = self.pop_cache()
        assert tag == "step"
        H = self.d_hidden
        dn = d_h_new * (1.0 - z)
        dz = d_h_new * (h - n)
        dn_pre = dn * (1.0 - n * n)
        dz_pre = dz * z * (1.0 - z)
        dr = dn_pre * hn
        dr_pre = dr * r * (1.0 - r)
        d_xp = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
        d_hp = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
        self.grads["Wi"] += d_xp.T @ x
        self.grads["Wh"] += d_hp.T @ h
        bias_grad = d_xp.sum(axis=0)
        self.grads["bi"] += bias_grad
        self.grads["bh"] += bias_grad
        d_x = d_xp @ self.params["Wi"]
        d_h = d_h_new * z + d_hp @ self.params["Wh"]
        return d_x, d_h


def gru_cell_step(x: np.ndarray, h_prev: np.ndarray, layer: GruLayer) -> np.ndarray:
    """Single unbatched cell update; desk-check entry point."""
    return layer.step(np.atleast_2d(x), np.atleast_2d(h_prev))[0]


class BiGruLayer(Module):
    """Forward and backward GRU over the sequence, outputs summed."""

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator,
                 dtype=np.float32, kernel: str | None = None):
        super().__init__()
        self.fwd = GruLayer(d_in, d_hidden, rng, dtype, kernel)
        self.bwd = GruLayer(d_in, d_hidden, rng, dtype, kernel)

    def forward(self, xs: np.ndarray):
        """xs (B, T, d_in) -> (B, T, H) plus the two final states."""
        f_hs, f_last = self.fwd.forward_seq(xs)
        b_hs_rev, b_last = self.bwd.forward_seq(xs[:, ::-1])
        return f_hs + b_hs_rev[:, ::-1], (f_last, b_last)

    def backward(self, d_hs: np.ndarray):
        d_xs_b, _ = self.bwd.backward_seq(
            np.ascontiguousarray(d_hs[:, ::-1]))
        d_xs_f, _ = self.fwd.backward_seq(np.ascontiguousarray(d_hs))
        return d_xs_f + d_xs_b[:, ::-1]


@dataclass
class EncoderState:
    """Final-layer memory plus per-layer final hidden states."""

    memory: np.ndarray                      # (B, S, H)
    layer_finals: list = field(default_factory=list)


class GruEncoder(Module):
    """Stacked bidirectional GRU; pyramid contraction between layers when on."""

    def __init__(self, vocab_size: int, d_model: int, n_layers: int,
                 pyramid: bool, window: int, rng: np.random.Generator,
                 dtype=np.float32, kernel: str | None = None):
        super().__init__()
        self.n_layers = n_layers
        self.pyramid = pyramid
        self.window = window
        self.embedding = Embedding(vocab_size, d_model, rng, dtype)
        self.layers = [BiGruLayer(d_model, d_model, rng, dtype, kernel)
                       for _ in range(n_layers)]
        self.contractions = (
            [PyramidContraction(d_model, window, rng, dtype)
             for _ in range(n_layers - 1)] if pyramid else [])

    def forward(self, src_ids: np.ndarray) -> EncoderState:
        src_ids = np.atleast_2d(np.asarray(src_ids))
        if src_ids.shape[1] < 1:
            raise ValueError("encoder input must contain at least one token")
        x = self.embedding.forward(src_ids)
        finals = []
        for i, layer in enumerate(self.layers):
            hs, last = layer.forward(x)
            finals.append(last)
            x = hs
            if self.pyramid and i < self.n_layers - 1:
                x = self.contractions[i].forward(x)
        return EncoderState(memory=x, layer_finals=finals)

    def backward(self, d_memory: np.ndarray) -> None:
        d = d_memory
        for i in range(self.n_layers - 1, -1, -1):
            if self.pyramid and i < self.n_layers - 1:
                d = self.contractions[i].backward(d)
            d = self.layers[i].backward(d)
        self.embedding.backward(d)


class GruDecoder(Module):
    """Uni-directional stacked GRU with attention over the encoder memory.

    Each step embeds the previous token, runs the stack, attends over the
    memory with the top hidden state, and projects concat(context, hidden)
    to vocabulary logits.
    """

    def __init__(self, vocab_size: int, d_model: int, n_layers: int,
                 attention: Module, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.n_layers = n_layers
        self.d_model = d_model
        self.vocab_size = vocab_size
        self.embedding = Embedding(vocab_size, d_model, rng, dtype)
        self.cells = [GruLayer(d_model, d_model, rng, dtype)
                      for _ in range(n_layers)]
        self.attention = attention
        self.out_proj = Affine(vocab_size, 2 * d_model, rng, dtype)

    def init_state(self, batch: int, dtype) -> list[np.ndarray]:
        return [np.zeros((batch, self.d_model), dtype=dtype)
                for _ in range(self.n_layers)]

    def step(self, prev_ids: np.ndarray, state: list[np.ndarray],
             memory: np.ndarray, return_features: bool = False):
        """(B,) ids + per-layer states -> (logits (B, V), new states, weights).

        With return_features the concat(context, hidden) vector is returned
        in place of logits (used by the classification head).
        """
        x = self.embedding.forward(np.asarray(prev_ids).reshape(-1, 1))[:, 0]
        new_state = []
        for layer, h in zip(self.cells, state):
            x = layer.step(x, h)
            new_state.append(x)
        weights, context = self.attention.forward(x, memory)
        feat = np.concatenate([context, x], axis=1)
        if return_features:
            return feat, new_state, weights
        logits = self.out_proj.forward(feat)
        return logits, new_state, weights

    def backward_step(self, d_logits: np.ndarray | None,
                      d_state: list[np.ndarray],
                      d_feat_extra: np.ndarray | None = None):
        """Reverse one step.

        d_state carries gradients flowing into each layer's *output* state
        from the next time step; returns (d_prev_state, d_memory) where
        d_memory is this step's contribution via attention.  Pass
        d_logits=None when the step was run with return_features.
        """
        if d_logits is None:
            d_feat = d_feat_extra
        else:
            d_feat = self.out_proj.backward(d_logits)
            if d_feat_extra is not None:
                d_feat = d_feat + d_feat_extra
        d = self.d_model
        d_context, d_top = d_feat[:, :d], d_feat[:, d:]
        d_hbar, d_memory = self.attention.backward(d_context)
        d_x = d_top + d_hbar + d_state[-1]
        d_prev_state = [None] * self.n_layers
        for i in range(self.n_layers - 1, -1, -1):
            d_in, d_h = self.cells[i].backward_step(d_x)
            d_prev_state[i] = d_h
            d_x = d_in + (d_state[i - 1] if i > 0 else 0)
        self.embedding.backward(d_x[:, None, :])
        return d_prev_state, d_memory

"""Alignment scoring and context vectors: Bahdanau, Luong global and local.

Every module maps a decoder hidden state (B, d) and encoder memory
(B, S, d) to (weights (B, S), context (B, d)) and backpropagates with
``backward(d_context, d_weights=None) -> (d_dec_hidden, d_memory)``.
"""

from __future__ import annotations

import numpy as np

from .base import Module, uniform_init
from .core import sigmoid, softmax


def _check_memory(memory: np.ndarray) -> None:
    if memory.ndim != 3 or memory.shape[1] < 1:
        raise ValueError("attention memory must be (B, S >= 1, d)")


def _softmax_backward(alpha: np.ndarray, d_alpha: np.ndarray) -> np.ndarray:
    inner = np.sum(alpha * d_alpha, axis=-1, keepdims=True)
    return alpha * (d_alpha - inner)


class BahdanauAttention(Module):
    """u_tk = (W1 h_dec + b1) . (W2 h_k + b2), softmax weights.

    ``literal_norm=True`` normalizes by the raw score sum instead of
    exponentiating (undefined for non-positive score sums; study knob only).
    """

    def __init__(self, d_model: int, rng: np.random.Generator,
                 dtype=np.float32, literal_norm: bool = False):
        super().__init__()
        self.literal_norm = literal_norm
        self.add_param("W1", uniform_init(rng, (d_model, d_model), d_model, dtype))
        self.add_param("b1", uniform_init(rng, (d_model,), d_model, dtype))
        self.add_param("W2", uniform_init(rng, (d_model, d_model), d_model, dtype))
        self.add_param("b2", uniform_init(rng, (d_model,), d_model, dtype))

    def forward(self, h_dec: np.ndarray, memory: np.ndarray):
        _check_memory(memory)
        q = h_dec @ self.params["W1"].T + self.params["b1"]
        k = memory @ self.params["W2"].T + self.params["b2"]
        u = np.einsum("bd,bsd->bs", q, k)
        if self.literal_norm:
            total = u.sum(axis=-1, keepdims=True)
            alpha = u / total
        else:
            alpha = softmax(u)
        context = np.einsum("bs,bsd->bd", alpha, memory)
        self.push_cache((h_dec, memory, q, k, u, alpha))
        return alpha, context

    def backward(self, d_context: np.ndarray, d_weights: np.ndarray | None = None):
        h_dec, memory, q, k, u, alpha = self.pop_cache()
        d_alpha = np.einsum("bd,bsd->bs", d_context, memory)
        if d_weights is not None:
            d_alpha = d_alpha + d_weights
        d_memory = alpha[..., None] * d_context[:, None, :]
        if self.literal_norm:
            total = u.sum(axis=-1, keepdims=True)
            du = (d_alpha - np.sum(d_alpha * alpha, axis=-1, keepdims=True)) / total
        else:
            du = _softmax_backward(alpha, d_alpha)
        d_q = np.einsum("bs,bsd->bd", du, k)
        d_k = du[..., None] * q[:, None, :]
        self.grads["W1"] += d_q.T @ h_dec
        self.grads["b1"] += d_q.sum(axis=0)
        flat_dk = d_k.reshape(-1, d_k.shape[-1])
        self.grads["W2"] += flat_dk.T @ memory.reshape(-1, memory.shape[-1])
        self.grads["b2"] += flat_dk.sum(axis=0)
        d_hdec = d_q @ self.params["W1"]
        d_memory += d_k @ self.params["W2"]
        return d_hdec, d_memory


class LuongAttention(Module):
    """Global attention with dot, general, or concat alignment scores."""

    def __init__(self, kind: str, d_model: int, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        if kind not in ("dot", "general", "concat"):
            raise ValueError(f"unknown Luong scorer {kind!r}")
        self.kind = kind
        self.d_model = d_model
        if kind == "general":
            self.add_param("W_a", uniform_init(rng, (d_model, d_model), d_model, dtype))
        elif kind == "concat":
            self.add_param("W_a", uniform_init(rng, (d_model, 2 * d_model),
                                               2 * d_model, dtype))
            self.add_param("v_a", uniform_init(rng, (d_model,), d_model, dtype))

    def scores(self, h_dec: np.ndarray, memory: np.ndarray):
        """Alignment scores u (B, S) plus the scorer's backward closure."""
        if self.kind == "dot":
            u = np.einsum("bd,bsd->bs", h_dec, memory)

            def back(du):
                d_h = np.einsum("bs,bsd->bd", du, memory)
                d_m = du[..., None] * h_dec[:, None, :]
                return d_h, d_m

        elif self.kind == "general":
            W_a = self.params["W_a"]
            q = h_dec @ W_a
            u = np.einsum("bd,bsd->bs", q, memory)

            def back(du):
                d_q = np.einsum("bs,bsd->bd", du, memory)
                d_m = du[..., None] * q[:, None, :]
                self.grads["W_a"] += h_dec.T @ d_q
                return d_q @ W_a.T, d_m

        else:  # concat
            W_a, v_a = self.params["W_a"], self.params["v_a"]
            d = self.d_model
            B, S, _ = memory.shape
            pair = np.concatenate(
                [np.broadcast_to(h_dec[:, None, :], memory.shape), memory], axis=-1)
            m = np.tanh(pair @ W_a.T)
            u = m @ v_a

            def back(du):
                d_m = du[..., None] * v_a
                self.grads["v_a"] += (m * du[..., None]).reshape(-1, d).sum(axis=0)
                d_pre = d_m * (1.0 - m * m)
                flat = d_pre.reshape(-1, d)
                self.grads["W_a"] += flat.T @ pair.reshape(-1, 2 * d)
                d_pair = d_pre @ W_a
                d_h = d_pair[..., :d].sum(axis=1)
                return d_h, d_pair[..., d:]

        return u, back

    def forward(self, h_dec: np.ndarray, memory: np.ndarray):
        _check_memory(memory)
        u, back = self.scores(h_dec, memory)
        alpha = softmax(u)
        context = np.einsum("bs,bsd->bd", alpha, memory)
        self.push_cache((memory, alpha, back))
        return alpha, context

    def backward(self, d_context: np.ndarray, d_weights: np.ndarray | None = None):
        memory, alpha, back = self.pop_cache()
        d_alpha = np.einsum("bd,bsd->bs", d_context, memory)
        if d_weights is not None:
            d_alpha = d_alpha + d_weights
        d_memory = alpha[..., None] * d_context[:, None, :]
        du = _softmax_backward(alpha, d_alpha)
        d_hdec, d_mem_scores = back(du)
        return d_hdec, d_memory + d_mem_scores


class LocalAttention(Module):
    """Gaussian-damped attention centered at p = S * sigmoid(W_p . h_dec).

    Weights are produced by a global scorer and reported before damping;
    the context applies exp(-(j - p)^2 / (2 sigma^2)) per position, with
    0-based positions over the (possibly contracted) memory.
    """

    def __init__(self, d_model: int, rng: np.random.Generator,
                 dtype=np.float32, base: str = "general",
                 sigma: float | None = None):
        super().__init__()
        if sigma is not None and sigma <= 0:
            raise ValueError("local attention sigma must be positive")
        self.sigma = sigma
        self.scorer = LuongAttention(base, d_model, rng, dtype)
        self.add_param("W_p", uniform_init(rng, (d_model,), d_model, dtype))

    def effective_sigma(self, S: int) -> float:
        return self.sigma if self.sigma is not None else max(2.0, S / 10.0)

    def forward(self, h_dec: np.ndarray, memory: np.ndarray):
        _check_memory(memory)
        S = memory.shape[1]
        u, back = self.scorer.scores(h_dec, memory)
        alpha = softmax(u)
        s = sigmoid(h_dec @ self.params["W_p"])
        p = S * s
        j = np.arange(S, dtype=memory.dtype)
        sig = self.effective_sigma(S)
        g = np.exp(-((j[None, :] - p[:, None]) ** 2) / (2.0 * sig * sig))
        context = np.einsum("bs,bsd->bd", alpha * g, memory)
        self.push_cache((h_dec, memory, alpha, g, p, s, sig, back))
        return alpha, context

    def backward(self, d_context: np.ndarray, d_weights: np.ndarray | None = None):
        h_dec, memory, alpha, g, p, s, sig, back = self.pop_cache()
        S = memory.shape[1]
        dw = np.einsum("bd,bsd->bs", d_context, memory)
        d_memory = (alpha * g)[..., None] * d_context[:, None, :]
        d_alpha = dw * g
        if d_weights is not None:
            d_alpha = d_alpha + d_weights
        d_g = dw * alpha
        j = np.arange(S, dtype=memory.dtype)
        d_p = np.sum(d_g * g * (j[None, :] - p[:, None]) / (sig * sig), axis=-1)
        d_s = d_p * S
        d_pre = d_s * s * (1.0 - s)
        self.grads["W_p"] += d_pre @ h_dec
        d_hdec = d_pre[:, None] * self.params["W_p"][None, :]
        du = _softmax_backward(alpha, d_alpha)
        d_h_scores, d_mem_scores = back(du)
        return d_hdec + d_h_scores, d_memory + d_mem_scores


def build_attention(kind: str, d_model: int, rng: np.random.Generator,
                    dtype=np.float32, local_base: str = "general",
                    local_sigma: float | None = None) -> Module:
    if kind == "bahdanau":
        return BahdanauAttention(d_model, rng, dtype)
    if kind.startswith("luong_") and kind != "luong_local":
        return LuongAttention(kind.removeprefix("luong_"), d_model, rng, dtype)
    if kind == "luong_local":
        return LocalAttention(d_model, rng, dtype, base=local_base,
                              sigma=local_sigma)
    raise ValueError(f"unknown attention kind {kind!r}")

"""Shared neural primitives: affine maps, embeddings, pyramid contraction."""

from __future__ import annotations

import math

import numpy as np

from .base import Module, uniform_init


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def output_length(T: int, N: int, w: int = 2) -> int:
    """Sequence length after an N-layer encoder contracting between layers.

    Iterated ceil division by the window, applied N-1 times; equals
    T / w**(N-1) exactly whenever that divides evenly.
    """
    if T < 0 or N < 1 or w < 2:
        raise ValueError("need T >= 0, N >= 1, w >= 2")
    length = T
    for _ in range(N - 1):
        length = -(-length // w)
    return length


class Affine(Module):
    """y = x @ W.T + b over the last axis."""

    def __init__(self, d_out: int, d_in: int, rng: np.random.Generator,
                 dtype=np.float32, bias: bool = True):
        super().__init__()
        self.d_out, self.d_in = d_out, d_in
        self.add_param("W", uniform_init(rng, (d_out, d_in), d_in, dtype))
        if bias:
            self.add_param("b", uniform_init(rng, (d_out,), d_in, dtype))

    def forward(self, x: np.ndarray) -> np.ndarray:
        y = x @ self.params["W"].T
        if "b" in self.params:
            y += self.params["b"]
        self.push_cache(x)
        return y

    def backward(self, d_y: np.ndarray) -> np.ndarray:
        x = self.pop_cache()
        flat_x = x.reshape(-1, self.d_in)
        flat_dy = d_y.reshape(-1, self.d_out)
        self.grads["W"] += flat_dy.T @ flat_x
        if "b" in self.params:
            self.grads["b"] += flat_dy.sum(axis=0)
        return d_y @ self.params["W"]


class Embedding(Module):
    """Learnable row-lookup table."""

    def __init__(self, vocab_size: int, d_model: int, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.vocab_size, self.d_model = vocab_size, d_model
        self.add_param("E", uniform_init(rng, (vocab_size, d_model), d_model, dtype))

    def forward(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise ValueError(f"token id out of range [0, {self.vocab_size})")
        self.push_cache(ids)
        return self.params["E"][ids]

    def backward(self, d_out: np.ndarray) -> None:
        ids = self.pop_cache()
        np.add.at(self.grads["E"], ids.reshape(-1),
                  d_out.reshape(-1, self.d_model))
        return None


class PyramidContraction(Module):
    """Contract w neighboring positions into one: tanh(W_pyr . concat + b_pyr).

    Output length is ceil(T / w); the final partial window is zero-padded.
    Accepts (T, d) or (B, T, d) input.
    """

    def __init__(self, d_model: int, window: int, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        if window < 2:
            raise ValueError("window must be >= 2")
        self.d_model, self.window = d_model, window
        self.add_param("W_pyr", uniform_init(
            rng, (d_model, window * d_model), window * d_model, dtype))
        self.add_param("b_pyr", uniform_init(
            rng, (d_model,), window * d_model, dtype))

    def forward(self, h: np.ndarray) -> np.ndarray:
        squeeze = h.ndim == 2
        if squeeze:
            h = h[None]
        B, T, d = h.shape
        w = self.window
        T_out = -(-T // w) if T else 0
        padded = h
        if T_out * w != T:
            padded = np.concatenate(
                [h, np.zeros((B, T_out * w - T, d), dtype=h.dtype)], axis=1)
        windows = padded.reshape(B, T_out, w * d)
        out = np.tanh(windows @ self.params["W_pyr"].T + self.params["b_pyr"])
        self.push_cache((windows, out, T, squeeze))
        return out[0] if squeeze else out

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        windows, out, T, squeeze = self.pop_cache()
        if squeeze:
            d_out = d_out[None]
        B, T_out, _ = windows.shape
        w, d = self.window, self.d_model
        d_pre = d_out * (1.0 - out * out)
        flat = d_pre.reshape(-1, d)
        self.grads["W_pyr"] += flat.T @ windows.reshape(-1, w * d)
        self.grads["b_pyr"] += flat.sum(axis=0)
        d_windows = d_pre @ self.params["W_pyr"]
        d_h = d_windows.reshape(B, T_out * w, d)[:, :T, :]
        return d_h[0] if squeeze else d_h


class LayerNorm(Module):
    """Normalize over the last axis with learned gain and bias."""

    def __init__(self, d_model: int, dtype=np.float32, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.add_param("gain", np.ones(d_model, dtype=dtype))
        self.add_param("bias", np.zeros(d_model, dtype=dtype))

    def forward(self, x: np.ndarray) -> np.ndarray:
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self.push_cache((xhat, inv_std))
        return xhat * self.params["gain"] + self.params["bias"]

    def backward(self, d_y: np.ndarray) -> np.ndarray:
        xhat, inv_std = self.pop_cache()
        d = xhat.shape[-1]
        flat_dy = d_y.reshape(-1, d)
        flat_xhat = xhat.reshape(-1, d)
        self.grads["gain"] += (flat_dy * flat_xhat).sum(axis=0)
        self.grads["bias"] += flat_dy.sum(axis=0)
        d_xhat = d_y * self.params["gain"]
        mean_d = d_xhat.mean(axis=-1, keepdims=True)
        mean_dx = (d_xhat * xhat).mean(axis=-1, keepdims=True)
        return (d_xhat - mean_d - xhat * mean_dx) * inv_std


def sinusoidal_positions(T: int, d_model: int, dtype=np.float32) -> np.ndarray:
    """Fixed sin/cos position table of shape (T, d_model)."""
    pos = np.arange(T, dtype=np.float64)[:, None]
    dim = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, dim / d_model)
    table = np.zeros((T, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : (d_model // 2)]) if d_model % 2 else np.cos(angle)
    return table.astype(dtype)


class SoftmaxCrossEntropy:
    """Token-level cross entropy over logits (..., V) against id targets."""

    def __init__(self):
        self._cache = None

    def forward(self, logits: np.ndarray, targets: np.ndarray) -> float:
        targets = np.asarray(targets)
        flat = logits.reshape(-1, logits.shape[-1])
        lsm = log_softmax(flat)
        idx = np.arange(flat.shape[0])
        losses = -lsm[idx, targets.reshape(-1)]
        self._cache = (np.exp(lsm), targets, logits.shape)
        return float(losses.mean())

    def backward(self, scale: float = 1.0) -> np.ndarray:
        probs, targets, shape = self._cache
        n = probs.shape[0]
        d_logits = probs.copy()
        d_logits[np.arange(n), targets.reshape(-1)] -= 1.0
        d_logits *= scale / n
        return d_logits.reshape(shape)


def embed(ids, embedding: np.ndarray) -> np.ndarray:
    """Functional row-lookup used by desk checks; validates the id range."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= embedding.shape[0]):
        raise ValueError(f"token id out of range [0, {embedding.shape[0]})")
    return embedding[ids]

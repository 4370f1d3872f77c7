"""Transformer encoder/decoder with length-contracting pyramid layers.

The pyramid variant concatenates neighboring attention outputs before the
feed-forward block (first linear widened from d_model to 2*d_model) and
halves the residual path either by averaging the pair ("ave") or through a
tanh affine map ("aff").  Post-norm after each residual add is the default;
``layer_norm=False`` gives the bare-equation form.
"""

from __future__ import annotations

import math

import numpy as np

from .base import Module, uniform_init
from .core import Affine, Embedding, LayerNorm, softmax, sinusoidal_positions


def causal_mask(T: int) -> np.ndarray:
    return np.tril(np.ones((T, T), dtype=bool))


class MultiHeadAttention(Module):
    """Scaled dot-product attention over heads; residual added by callers."""

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        if d_model % heads:
            raise ValueError("heads must divide d_model")
        self.d_model, self.heads = d_model, heads
        self.d_head = d_model // heads
        for name in ("Wq", "Wk", "Wv", "Wo"):
            self.add_param(name, uniform_init(rng, (d_model, d_model), d_model, dtype))
            self.add_param(name.replace("W", "b"),
                           uniform_init(rng, (d_model,), d_model, dtype))

    def _split(self, x: np.ndarray) -> np.ndarray:
        B, T, _ = x.shape
        return x.reshape(B, T, self.heads, self.d_head).transpose(0, 2, 1, 3)

    def _merge(self, x: np.ndarray) -> np.ndarray:
        B, h, T, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(B, T, h * dh)

    def forward(self, x_q: np.ndarray, x_kv: np.ndarray,
                mask: np.ndarray | None = None) -> np.ndarray:
        p = self.params
        if mask is not None and mask.shape != (x_q.shape[1], x_kv.shape[1]):
            raise ValueError(f"mask shape {mask.shape} does not match "
                             f"({x_q.shape[1]}, {x_kv.shape[1]})")
        q = self._split(x_q @ p["Wq"].T + p["bq"])
        k = self._split(x_kv @ p["Wk"].T + p["bk"])
        v = self._split(x_kv @ p["Wv"].T + p["bv"])
        scores = q @ k.swapaxes(-1, -2) / math.sqrt(self.d_head)
        if mask is not None:
            scores = np.where(mask[None, None], scores, -np.inf)
        att = softmax(scores)
        ctx = self._merge(att @ v)
        out = ctx @ p["Wo"].T + p["bo"]
        self.push_cache((x_q, x_kv, q, k, v, att, ctx))
        return out

    def backward(self, d_out: np.ndarray):
        """Returns (d_x_q, d_x_kv); callers sum them for self-attention."""
        p = self.params
        x_q, x_kv, q, k, v, att, ctx = self.pop_cache()
        d = self.d_model
        flat_dout = d_out.reshape(-1, d)
        self.grads["Wo"] += flat_dout.T @ ctx.reshape(-1, d)
        self.grads["bo"] += flat_dout.sum(axis=0)
        d_ctx = self._split(d_out @ p["Wo"])
        d_att = d_ctx @ v.swapaxes(-1, -2)
        d_v = att.swapaxes(-1, -2) @ d_ctx
        inner = np.sum(att * d_att, axis=-1, keepdims=True)
        d_scores = att * (d_att - inner) / math.sqrt(self.d_head)
        d_q = self._merge(d_scores @ k)
        d_k = self._merge(d_scores.swapaxes(-1, -2) @ q)
        d_v = self._merge(d_v)

        def through(name, grad, x):
            flat = grad.reshape(-1, d)
            self.grads["W" + name] += flat.T @ x.reshape(-1, d)
            self.grads["b" + name] += flat.sum(axis=0)
            return grad @ p["W" + name]

        d_xq = through("q", d_q, x_q)
        d_xkv = through("k", d_k, x_kv) + through("v", d_v, x_kv)
        return d_xq, d_xkv


class FeedForward(Module):
    """Affine -> ReLU -> Affine position-wise block."""

    def __init__(self, d_in: int, d_ff: int, d_out: int,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.lin1 = Affine(d_ff, d_in, rng, dtype)
        self.lin2 = Affine(d_out, d_ff, rng, dtype)

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = self.lin1.forward(x)
        mask = h > 0
        self.push_cache(mask)
        return self.lin2.forward(h * mask)

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        mask = self.pop_cache()
        d_h = self.lin2.backward(d_out) * mask
        return self.lin1.backward(d_h)


class TransformerEncoderLayerRegular(Module):
    def __init__(self, d_model: int, heads: int, d_ff: int,
                 rng: np.random.Generator, dtype=np.float32,
                 layer_norm: bool = True):
        super().__init__()
        self.mha = MultiHeadAttention(d_model, heads, rng, dtype)
        self.ff = FeedForward(d_model, d_ff, d_model, rng, dtype)
        self.layer_norm = layer_norm
        if layer_norm:
            self.ln1 = LayerNorm(d_model, dtype)
            self.ln2 = LayerNorm(d_model, dtype)

    def forward(self, x: np.ndarray) -> np.ndarray:
        c = x + self.mha.forward(x, x)
        if self.layer_norm:
            c = self.ln1.forward(c)
        out = c + self.ff.forward(c)
        if self.layer_norm:
            out = self.ln2.forward(out)
        return out

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        if self.layer_norm:
            d_out = self.ln2.backward(d_out)
        d_c = d_out + self.ff.backward(d_out)
        if self.layer_norm:
            d_c = self.ln1.backward(d_c)
        d_q, d_kv = self.mha.backward(d_c)
        return d_c + d_q + d_kv


class TransformerEncoderLayerPyramid(Module):
    """Halves the sequence: FF consumes concatenated neighbor pairs and the
    residual is the pair average ("ave") or tanh(W_aff . pair + b) ("aff")."""

    def __init__(self, d_model: int, heads: int, d_ff: int, mode: str,
                 rng: np.random.Generator, dtype=np.float32,
                 layer_norm: bool = True):
        super().__init__()
        if mode not in ("ave", "aff"):
            raise ValueError(f"unknown pyramid residual mode {mode!r}")
        self.mode = mode
        self.d_model = d_model
        self.mha = MultiHeadAttention(d_model, heads, rng, dtype)
        self.ff = FeedForward(2 * d_model, d_ff, d_model, rng, dtype)
        if mode == "aff":
            self.aff = Affine(d_model, 2 * d_model, rng, dtype)
        self.layer_norm = layer_norm
        if layer_norm:
            self.ln1 = LayerNorm(d_model, dtype)
            self.ln2 = LayerNorm(d_model, dtype)

    def forward(self, x: np.ndarray) -> np.ndarray:
        B, T, d = x.shape
        c = x + self.mha.forward(x, x)
        if self.layer_norm:
            c = self.ln1.forward(c)
        T_out = -(-T // 2)
        padded = c
        if T % 2:
            padded = np.concatenate(
                [c, np.zeros((B, 1, d), dtype=c.dtype)], axis=1)
        pairs = padded.reshape(B, T_out, 2 * d)
        if self.mode == "ave":
            res = 0.5 * (pairs[..., :d] + pairs[..., d:])
            self.push_cache((T, None))
        else:
            res = np.tanh(self.aff.forward(pairs))
            self.push_cache((T, res))
        out = res + self.ff.forward(pairs)
        if self.layer_norm:
            out = self.ln2.forward(out)
        return out

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        T, res = self.pop_cache()
        d = self.d_model
        if self.layer_norm:
            d_out = self.ln2.backward(d_out)
        d_pairs = self.ff.backward(d_out)
        if self.mode == "ave":
            d_pairs[..., :d] += 0.5 * d_out
            d_pairs[..., d:] += 0.5 * d_out
        else:
            d_pairs += self.aff.backward(d_out * (1.0 - res * res))
        B, T_out, _ = d_pairs.shape
        d_c = d_pairs.reshape(B, 2 * T_out, d)[:, :T, :]
        if self.layer_norm:
            d_c = self.ln1.backward(d_c)
        d_q, d_kv = self.mha.backward(d_c)
        return d_c + d_q + d_kv


class TransformerEncoder(Module):
    """Embedding + positions, then N layers; with pyramid on, the first N-1
    layers contract so the memory length is the iterated ceil-halving."""

    def __init__(self, vocab_size: int, d_model: int, n_layers: int,
                 heads: int, d_ff: int, pyramid: bool, residual_mode: str,
                 rng: np.random.Generator, dtype=np.float32,
                 layer_norm: bool = True):
        super().__init__()
        self.d_model = d_model
        self.scale = math.sqrt(d_model)
        self.embedding = Embedding(vocab_size, d_model, rng, dtype)
        layers: list[Module] = []
        for i in range(n_layers):
            if pyramid and i < n_layers - 1:
                layers.append(TransformerEncoderLayerPyramid(
                    d_model, heads, d_ff, residual_mode, rng, dtype, layer_norm))
            else:
                layers.append(TransformerEncoderLayerRegular(
                    d_model, heads, d_ff, rng, dtype, layer_norm))
        self.layers = layers

    def forward(self, src_ids: np.ndarray) -> np.ndarray:
        src_ids = np.atleast_2d(np.asarray(src_ids))
        if src_ids.shape[1] < 1:
            raise ValueError("encoder input must contain at least one token")
        T = src_ids.shape[1]
        x = self.embedding.forward(src_ids) * self.scale
        x = x + sinusoidal_positions(T, self.d_model, x.dtype)
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, d_memory: np.ndarray) -> None:
        d = d_memory
        for layer in reversed(self.layers):
            d = layer.backward(d)
        self.embedding.backward(d * self.scale)


class TransformerDecoderLayer(Module):
    def __init__(self, d_model: int, heads: int, d_ff: int,
                 rng: np.random.Generator, dtype=np.float32,
                 layer_norm: bool = True):
        super().__init__()
        self.self_mha = MultiHeadAttention(d_model, heads, rng, dtype)
        self.cross_mha = MultiHeadAttention(d_model, heads, rng, dtype)
        self.ff = FeedForward(d_model, d_ff, d_model, rng, dtype)
        self.layer_norm = layer_norm
        if layer_norm:
            self.ln1 = LayerNorm(d_model, dtype)
            self.ln2 = LayerNorm(d_model, dtype)
            self.ln3 = LayerNorm(d_model, dtype)

    def forward(self, x: np.ndarray, memory: np.ndarray) -> np.ndarray:
        a = x + self.self_mha.forward(x, x, causal_mask(x.shape[1]))
        if self.layer_norm:
            a = self.ln1.forward(a)
        c = a + self.cross_mha.forward(a, memory)
        if self.layer_norm:
            c = self.ln2.forward(c)
        out = c + self.ff.forward(c)
        if self.layer_norm:
            out = self.ln3.forward(out)
        return out

    def backward(self, d_out: np.ndarray):
        if self.layer_norm:
            d_out = self.ln3.backward(d_out)
        d_c = d_out + self.ff.backward(d_out)
        if self.layer_norm:
            d_c = self.ln2.backward(d_c)
        d_q, d_memory = self.cross_mha.backward(d_c)
        d_a = d_c + d_q
        if self.layer_norm:
            d_a = self.ln1.backward(d_a)
        d_sq, d_skv = self.self_mha.backward(d_a)
        return d_a + d_sq + d_skv, d_memory


class TransformerDecoder(Module):
    def __init__(self, vocab_size: int, d_model: int, n_layers: int,
                 heads: int, d_ff: int, rng: np.random.Generator,
                 dtype=np.float32, layer_norm: bool = True):
        super().__init__()
        self.d_model = d_model
        self.scale = math.sqrt(d_model)
        self.embedding = Embedding(vocab_size, d_model, rng, dtype)
        self.layers = [TransformerDecoderLayer(d_model, heads, d_ff, rng,
                                               dtype, layer_norm)
                       for _ in range(n_layers)]
        self.out_proj = Affine(vocab_size, d_model, rng, dtype)

    def forward(self, tgt_ids: np.ndarray, memory: np.ndarray,
                return_features: bool = False) -> np.ndarray:
        tgt_ids = np.atleast_2d(np.asarray(tgt_ids))
        if tgt_ids.shape[1] < 1:
            raise ValueError("decoder prefix must be non-empty (starts with SOS)")
        T = tgt_ids.shape[1]
        x = self.embedding.forward(tgt_ids) * self.scale
        x = x + sinusoidal_positions(T, self.d_model, x.dtype)
        for layer in self.layers:
            x = layer.forward(x, memory)
        if return_features:
            return x
        return self.out_proj.forward(x)

    def backward(self, d_logits: np.ndarray, memory_shape,
                 d_features: np.ndarray | None = None) -> np.ndarray:
        """Returns accumulated d_memory.  Pass d_features to skip out_proj."""
        if d_features is not None:
            d_x = d_features
        else:
            d_x = self.out_proj.backward(d_logits)
        d_memory = np.zeros(memory_shape, dtype=d_x.dtype)
        for layer in reversed(self.layers):
            d_x, d_mem = layer.backward(d_x)
            d_memory += d_mem
        self.embedding.backward(d_x * self.scale)
        return d_memory

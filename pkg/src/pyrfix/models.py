"""Model assembly: config -> GRU or Transformer seq2seq with one interface.

Both families expose:
  encode(src_ids) -> encoder output (memory and friends)
  init_decode_state / decode_step / reorder_state   (inference, cache-free)
  train_step(src_ids, tgt_ids, ...) -> loss          (accumulates gradients)
"""

from __future__ import annotations

import numpy as np

from .codetok import EOS_ID, SOS_ID
from .config import ModelConfig
from .nn.base import Module
from .nn.core import SoftmaxCrossEntropy, log_softmax
from .nn.attention import build_attention
from .nn.gru import EncoderState, GruDecoder, GruEncoder
from .nn.transformer import TransformerDecoder, TransformerEncoder
from .nn import checkpoint as ckpt


class GruSeq2Seq(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype=np.float32, kernel: str | None = None):
        super().__init__()
        self.config = config
        self.dtype = dtype
        self.encoder = GruEncoder(config.vocab_size, config.d_model,
                                  config.encoder_layers, config.pyramid,
                                  config.window, rng, dtype, kernel)
        attention = build_attention(config.attention, config.d_model, rng,
                                    dtype, config.local_base, config.local_sigma)
        self.decoder = GruDecoder(config.vocab_size, config.d_model,
                                  config.decoder_layers, attention, rng, dtype)

    # -- inference ----------------------------------------------------------

    def encode(self, src_ids) -> EncoderState:
        enc = self.encoder.forward(src_ids)
        self.clear_caches()
        return enc

    def init_decode_state(self, enc_out: EncoderState, n: int):
        return self.decoder.init_state(n, self.dtype)

    def decode_step(self, prefixes: np.ndarray, state, enc_out: EncoderState):
        B = prefixes.shape[0]
        memory = np.broadcast_to(enc_out.memory,
                                 (B,) + enc_out.memory.shape[1:])
        logits, new_state, _ = self.decoder.step(prefixes[:, -1], state, memory)
        self.clear_caches()
        return log_softmax(logits), new_state

    def reorder_state(self, state, idx):
        return [h[idx] for h in state]

    # -- training -----------------------------------------------------------

    def train_step(self, src_ids, tgt_ids, teacher_forcing: float = 1.0,
                   rng: np.random.Generator | None = None) -> float:
        """Cross-entropy on one pair; gradients accumulate into the module."""
        enc = self.encoder.forward(np.asarray(src_ids)[None])
        memory = enc.memory
        dec_in = [SOS_ID] + list(tgt_ids)
        labels = list(tgt_ids) + [EOS_ID]
        state = self.decoder.init_state(1, self.dtype)
        logits_seq = []
        prev = dec_in[0]
        for t, label in enumerate(labels):
            logits, state, _ = self.decoder.step(np.array([prev]), state, memory)
            logits_seq.append(logits[0])
            if t + 1 < len(labels):
                forced = teacher_forcing >= 1.0 or (
                    rng is not None and rng.random() < teacher_forcing)
                prev = dec_in[t + 1] if forced else int(np.argmax(logits[0]))
        ce = SoftmaxCrossEntropy()
        loss = ce.forward(np.stack(logits_seq), np.array(labels))
        d_logits = ce.backward()
        d_state = [np.zeros_like(h) for h in state]
        d_memory = np.zeros_like(memory)
        for t in range(len(labels) - 1, -1, -1):
            d_state, d_mem = self.decoder.backward_step(
                d_logits[t][None], d_state)
            d_memory += d_mem
        self.encoder.backward(d_memory)
        return loss

    # -- classification hooks ----------------------------------------------

    def first_step_features(self, src_ids):
        """Inference-free feature of the first decoder step (concat ctx, h)."""
        enc = self.encoder.forward(np.asarray(src_ids)[None])
        feat, state, _ = self.decoder.step(
            np.array([SOS_ID]), self.decoder.init_state(1, self.dtype),
            enc.memory, return_features=True)
        return feat

    def backward_first_step(self, d_feat):
        d_state = [np.zeros((1, self.config.d_model), dtype=self.dtype)
                   for _ in range(self.config.decoder_layers)]
        _, d_memory = self.decoder.backward_step(None, d_state, d_feat)
        self.encoder.backward(d_memory)

    @property
    def feature_dim(self) -> int:
        return 2 * self.config.d_model


class TransformerSeq2Seq(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype=np.float32, kernel: str | None = None):
        super().__init__()
        self.config = config
        self.dtype = dtype
        self.encoder = TransformerEncoder(
            config.vocab_size, config.d_model, config.encoder_layers,
            config.heads, config.d_ff, config.pyramid, config.residual_mode,
            rng, dtype, config.layer_norm)
        self.decoder = TransformerDecoder(
            config.vocab_size, config.d_model, config.decoder_layers,
            config.heads, config.d_ff, rng, dtype, config.layer_norm)

    # -- inference ----------------------------------------------------------

    def encode(self, src_ids) -> np.ndarray:
        memory = self.encoder.forward(src_ids)
        self.clear_caches()
        return memory

    def init_decode_state(self, enc_out, n: int):
        return None

    def decode_step(self, prefixes: np.ndarray, state, enc_out: np.ndarray):
        B = prefixes.shape[0]
        memory = np.broadcast_to(enc_out, (B,) + enc_out.shape[1:])
        logits = self.decoder.forward(prefixes, memory)
        self.clear_caches()
        return log_softmax(logits[:, -1]), None

    def reorder_state(self, state, idx):
        return None

    # -- training -----------------------------------------------------------

    def train_step(self, src_ids, tgt_ids, teacher_forcing: float = 1.0,
                   rng: np.random.Generator | None = None) -> float:
        """Full teacher forcing (parallel decode); the ratio is GRU-only."""
        memory = self.encoder.forward(np.asarray(src_ids)[None])
        dec_in = np.array([[SOS_ID] + list(tgt_ids)])
        labels = np.array(list(tgt_ids) + [EOS_ID])
        logits = self.decoder.forward(dec_in, memory)
        ce = SoftmaxCrossEntropy()
        loss = ce.forward(logits[0], labels)
        d_logits = ce.backward()[None]
        d_memory = self.decoder.backward(d_logits, memory.shape)
        self.encoder.backward(d_memory)
        return loss

    # -- classification hooks ----------------------------------------------

    def first_step_features(self, src_ids):
        memory = self.encoder.forward(np.asarray(src_ids)[None])
        self._memory_len = memory.shape[1]
        feats = self.decoder.forward(np.array([[SOS_ID]]), memory,
                                     return_features=True)
        return feats[:, 0]

    def backward_first_step(self, d_feat):
        memory_shape = (1, self._memory_len, self.config.d_model)
        d_memory = self.decoder.backward(None, memory_shape,
                                         d_features=d_feat[:, None, :])
        self.encoder.backward(d_memory)

    @property
    def feature_dim(self) -> int:
        return self.config.d_model


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float32,
                kernel: str | None = None):
    """Fresh model with the recorded initialization seed."""

    rng = np.random.default_rng(seed)
    if config.family == "gru":
        model = GruSeq2Seq(config, rng, dtype, kernel)
    else:
        model = TransformerSeq2Seq(config, rng, dtype, kernel)
    model.init_seed = seed
    return model


def save_model(model, vocab_hash: str | None, path, extra: dict | None = None) -> None:
    extra = dict(extra or {})
    extra.setdefault("init_seed", getattr(model, "init_seed", None))
    ckpt.save_checkpoint(model.named_parameters(), model.config, vocab_hash,
                         path, extra)


def load_model(path, dtype=np.float32, kernel: str | None = None):
    """Returns (model, vocab_hash, extra)."""
    params, config_dict, vocab_hash, extra = ckpt.load_checkpoint(path)
    if config_dict is None:
        raise ckpt.CheckpointError(f"{path}: checkpoint has no model config")
    config = ModelConfig.from_dict(config_dict)
    model = build_model(config, seed=extra.get("init_seed") or 0,
                        dtype=dtype, kernel=kernel)
    model.set_parameters({k: v.astype(dtype) for k, v in params.items()})
    return model, vocab_hash, extra

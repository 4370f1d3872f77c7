"""Transfer learning: reuse a trained encoder for fault classification.

The pretrained encoder keeps its weights (embedding rows for shared tokens
are copied bit-exactly into the expanded table, the last encoder layer is
re-initialized) and feeds a fresh decoder whose first-step output is
projected to class logits.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .codetok import Vocabulary
from .config import ModelConfig
from .models import GruSeq2Seq, TransformerSeq2Seq, build_model
from .nn.base import Module, uniform_init
from .nn.core import Affine, SoftmaxCrossEntropy, log_softmax, softmax
from .nn.optim import Adam, clip_grad_norm


@dataclass
class ClassifierConfig:
    n_class: int
    base_checkpoint: str | None = None
    freeze_encoder: bool = False
    head_seed: int = 0

    def __post_init__(self):
        if self.n_class < 2:
            raise ValueError("n_class must be >= 2")


def expand_embedding(old_embedding: np.ndarray, old_vocab: Vocabulary,
                     new_vocab: Vocabulary, seed: int = 0) -> np.ndarray:
    """Grow (or permute) the embedding to the new vocabulary.

    Rows of tokens present in the old vocabulary move to their new ids
    unchanged (bit-exact); rows for new tokens are freshly initialized.
    """
    d = old_embedding.shape[1]
    if old_embedding.shape[0] != len(old_vocab):
        raise ValueError("embedding rows do not match old vocabulary size")
    rng = np.random.default_rng(seed)
    new = uniform_init(rng, (len(new_vocab), d), d, old_embedding.dtype)
    for new_id, token in enumerate(new_vocab):
        if token in old_vocab:
            new[new_id] = old_embedding[old_vocab.lookup(token)]
    return new


def reinit_last_encoder_layer(encoder: Module, seed: int) -> None:
    """Re-initialize the final encoder layer in place; earlier layers and
    the embedding are untouched."""
    rng = np.random.default_rng(seed)
    layer = encoder.layers[-1]
    for name, p in layer.named_parameters().items():
        if name.endswith(".gain"):
            p[...] = 1.0
        elif name.endswith(".bias"):
            p[...] = 0.0
        else:
            fan_in = p.shape[-1] if p.ndim >= 2 else max(p.shape[0], 1)
            p[...] = uniform_init(rng, p.shape, fan_in, p.dtype)


class FaultClassifier(Module):
    """Encoder (possibly pretrained) + fresh decoder + linear class head."""

    def __init__(self, base_model, n_class: int, head_seed: int = 0,
                 freeze_encoder: bool = False):
        super().__init__()
        if not isinstance(base_model, (GruSeq2Seq, TransformerSeq2Seq)):
            raise TypeError("base_model must be a seq2seq model")
        self.base = base_model
        self.n_class = n_class
        self.freeze_encoder = freeze_encoder
        rng = np.random.default_rng(head_seed)
        self.head = Affine(n_class, base_model.feature_dim, rng,
                           base_model.dtype)

    def forward(self, source_ids) -> np.ndarray:
        """Class logits (n_class,) for one instance."""
        feat = self.base.first_step_features(source_ids)
        return self.head.forward(feat)[0]

    def predict(self, source_ids) -> int:
        logits = self.forward(source_ids)
        self.clear_caches()
        return int(np.argmax(logits))

    def probabilities(self, source_ids) -> np.ndarray:
        logits = self.forward(source_ids)
        self.clear_caches()
        return softmax(logits)

    def train_step(self, source_ids, class_id: int) -> float:
        logits = self.forward(source_ids)
        lsm = log_softmax(logits)
        loss = -float(lsm[class_id])
        d_logits = np.exp(lsm)
        d_logits[class_id] -= 1.0
        d_feat = self.head.backward(d_logits[None])
        self.base.backward_first_step(d_feat)
        return loss

    def trainable_parameters(self) -> dict[str, np.ndarray]:
        params = self.named_parameters()
        if self.freeze_encoder:
            params = {k: v for k, v in params.items()
                      if not k.startswith("base.encoder.")}
        return params


def make_classifier(config: ModelConfig, clf_cfg: ClassifierConfig,
                    pretrained=None, seed: int = 0,
                    old_vocab: Vocabulary | None = None,
                    new_vocab: Vocabulary | None = None,
                    dtype=np.float32) -> FaultClassifier:
    """Classifier over a pretrained model's encoder or a fresh one.

    With a pretrained model, its encoder weights are copied in (the
    embedding expanded to ``new_vocab`` when the vocabularies differ), the
    last encoder layer is re-initialized, and the decoder stays fresh.
    """
    base = build_model(config, seed=seed, dtype=dtype)
    if pretrained is not None:
        own = base.named_parameters()
        for name, value in pretrained.named_parameters().items():
            if name.startswith("encoder.") and own[name].shape == value.shape:
                own[name][...] = value
        if old_vocab is not None and new_vocab is not None:
            base.encoder.embedding.params["E"][...] = expand_embedding(
                pretrained.encoder.embedding.params["E"],
                old_vocab, new_vocab, seed)
        reinit_last_encoder_layer(base.encoder, seed=seed + 1)
    return FaultClassifier(base, clf_cfg.n_class, head_seed=seed,
                           freeze_encoder=clf_cfg.freeze_encoder)


@dataclass
class ClassifierResult:
    history: list[dict] = field(default_factory=list)
    train_accuracy: float = 0.0
    eval_accuracy: float = 0.0


def accuracy(clf: FaultClassifier, pairs, class_ids: dict[str, int]) -> float:
    if not pairs:
        raise ValueError("empty evaluation set")
    hits = sum(1 for p in pairs
               if clf.predict(p.source_tokens) == class_ids[p.label])
    return hits / len(pairs)


def train_classifier(clf: FaultClassifier, train_pairs, eval_pairs,
                     class_ids: dict[str, int], epochs: int = 10,
                     batch_size: int = 8, lr: float = 1e-3, seed: int = 0,
                     clip_norm: float = 5.0) -> ClassifierResult:
    """Cross-entropy + ADAM over labeled pairs; logs held-out accuracy."""
    if not train_pairs:
        raise ValueError("empty training set")
    labels = {class_ids[p.label] for p in train_pairs}
    if len(labels) < 2:
        import warnings
        warnings.warn("single-class training set; classifier is degenerate",
                      stacklevel=2)
    opt = Adam(clf.trainable_parameters(), lr)
    rng = np.random.default_rng(seed)
    result = ClassifierResult()
    for epoch in range(epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_pairs))
        total = 0.0
        for lo in range(0, len(order), batch_size):
            batch = order[lo:lo + batch_size]
            clf.zero_grad()
            for i in batch:
                pair = train_pairs[int(i)]
                total += clf.train_step(pair.source_tokens,
                                        class_ids[pair.label])
            if not math.isfinite(total):
                raise RuntimeError(f"classifier loss diverged in epoch {epoch}")
            grads = clf.trainable_parameters().keys()
            grad_map = {k: v for k, v in clf.named_grads().items() if k in grads}
            inv = 1.0 / len(batch)
            for g in grad_map.values():
                g *= inv
            if clip_norm:
                clip_grad_norm(grad_map, clip_norm)
            opt.step(grad_map)
        eval_acc = accuracy(clf, eval_pairs, class_ids) if eval_pairs else None
        result.history.append({
            "epoch": epoch, "loss": total / len(order),
            "eval_accuracy": eval_acc,
            "wall_s": time.perf_counter() - t0})
    result.train_accuracy = accuracy(clf, train_pairs, class_ids)
    if eval_pairs:
        result.eval_accuracy = accuracy(clf, eval_pairs, class_ids)
    return result


def load_class_list(path) -> dict[str, int]:
    """Class-list file: one class name per line, line number = class id."""
    with open(path, encoding="utf-8") as fh:
        names = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
    return {name: i for i, name in enumerate(names)}


def save_class_list(class_ids: dict[str, int], path) -> None:
    ordered = sorted(class_ids, key=class_ids.get)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for name in ordered:
            fh.write(name + "\n")

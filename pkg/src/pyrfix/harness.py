"""Training loop, repair metrics, throughput, and memory-cost benchmarks."""

from __future__ import annotations

import gc
import json
import math
import time
import tracemalloc
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import ModelConfig
from .decode import beam_search
from .models import build_model
from .nn.optim import Adam, clip_grad_norm


class TrainingDivergedError(RuntimeError):
    pass


class DegenerateFitError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    teacher_forcing: float = 1.0
    clip_norm: float = 5.0
    seed: int = 0
    patience: int = 5
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.teacher_forcing <= 1.0:
            raise ValueError("teacher_forcing must be in [0, 1]")


@dataclass
class BatchRecord:
    epoch: int
    tokens: int
    seconds: float


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float | None
    words_per_sec: float
    wall_s: float


@dataclass
class TrainResult:
    history: list[EpochStats] = field(default_factory=list)
    batch_log: list[BatchRecord] = field(default_factory=list)
    converge_epoch: int | None = None
    best_val_loss: float | None = None
    words_per_sec: float = 0.0
    stopped_early: bool = False


def compute_loss(model, pairs) -> float:
    """Mean teacher-forced loss; gradients are discarded afterwards."""
    if not pairs:
        raise ValueError("empty pair list")
    total = 0.0
    for pair in pairs:
        total += model.train_step(pair.source_tokens, pair.targets[0])
    model.zero_grad()
    return total / len(pairs)


def train(model, train_pairs, val_pairs, cfg: TrainConfig,
          log_path=None, start_epoch: int = 0,
          optimizer: Adam | None = None) -> TrainResult:
    """Minimize token cross-entropy against the first reference repair.

    Batches accumulate per-instance gradients (exact math, no padding),
    average them, clip, and take one ADAM step.  Convergence is recorded
    as the epoch of the best validation loss once no improvement has been
    seen for ``patience`` epochs.  Deterministic under a fixed seed in
    single-threaded runs.
    """
    if not train_pairs:
        raise ValueError("empty training set")
    params = model.named_parameters()
    opt = optimizer or Adam(params, cfg.lr, (cfg.beta1, cfg.beta2), cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult()
    best = math.inf
    best_epoch = None
    stale = 0
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(start_epoch, start_epoch + cfg.epochs):
            t_epoch = time.perf_counter()
            order = rng.permutation(len(train_pairs)) if cfg.shuffle \
                else np.arange(len(train_pairs))
            epoch_loss = 0.0
            for lo in range(0, len(order), cfg.batch_size):
                batch = order[lo:lo + cfg.batch_size]
                t0 = time.perf_counter()
                model.zero_grad()
                tokens = 0
                batch_loss = 0.0
                for i in batch:
                    pair = train_pairs[int(i)]
                    tgt = pair.targets[0]
                    batch_loss += model.train_step(
                        pair.source_tokens, tgt, cfg.teacher_forcing, rng)
                    tokens += len(pair.source_tokens) + len(tgt)
                if not math.isfinite(batch_loss):
                    raise TrainingDivergedError(
                        f"non-finite loss in epoch {epoch}, batch at index {lo}")
                grads = model.named_grads()
                inv = 1.0 / len(batch)
                for g in grads.values():
                    g *= inv
                if cfg.clip_norm:
                    clip_grad_norm(grads, cfg.clip_norm)
                opt.step(grads)
                epoch_loss += batch_loss
                result.batch_log.append(
                    BatchRecord(epoch, tokens, time.perf_counter() - t0))
            train_loss = epoch_loss / len(order)
            val_loss = compute_loss(model, val_pairs) if val_pairs else None
            wall = time.perf_counter() - t_epoch
            epoch_records = [r for r in result.batch_log if r.epoch == epoch]
            wps = throughput(epoch_records, exclude_warmup=(epoch == start_epoch))
            stats = EpochStats(epoch, train_loss, val_loss, wps, wall)
            result.history.append(stats)
            if log_fh:
                log_fh.write(json.dumps({
                    "epoch": epoch, "train_loss": train_loss,
                    "val_loss": val_loss, "words_per_sec": wps,
                    "wall_s": wall}) + "\n")
                log_fh.flush()
            metric = val_loss if val_loss is not None else train_loss
            if metric < best - 1e-9:
                best = metric
                best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale > cfg.patience:
                    result.stopped_early = True
                    break
    finally:
        if log_fh:
            log_fh.close()
    result.converge_epoch = best_epoch
    result.best_val_loss = best if best < math.inf else None
    result.words_per_sec = throughput(result.batch_log, exclude_warmup=True)
    return result


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class EvalResult:
    pair_id: str
    source_length: int
    candidates: list[tuple[list[int], float]]
    matched_rank: int | None     # 1-based rank of the first exact match


@dataclass
class LengthBucket:
    lo: int
    hi: int
    rate: float
    count: int


@dataclass
class MetricsReport:
    repair_rate_1: float
    repair_rate_5: float
    words_per_sec: float | None = None
    converge_epoch: int | None = None
    k: float | None = None
    efficiency: float | None = None
    length_buckets: list[LengthBucket] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_model(model, pairs, width: int = 5, n_best: int = 5,
                   max_len: int | None = None) -> list[EvalResult]:
    if not pairs:
        raise ValueError("empty evaluation set")
    results = []
    for pair in pairs:
        cands = beam_search(model, pair.source_tokens, width, n_best, max_len)
        targets = [tuple(t) for t in pair.targets]
        rank = None
        for r, (ids, _) in enumerate(cands, start=1):
            if tuple(ids) in targets:
                rank = r
                break
        results.append(EvalResult(pair.id, pair.source_length,
                                  [(list(i), s) for i, s in cands], rank))
    return results


def repair_rate(outputs, pairs, n_candidates: int) -> float:
    """Fraction of pairs whose top n candidates contain an exact reference."""
    if not pairs:
        raise ValueError("empty evaluation set")
    if len(outputs) != len(pairs):
        raise ValueError("outputs and pairs must align")
    hits = 0
    for cands, pair in zip(outputs, pairs):
        targets = [tuple(t) for t in pair.targets]
        if any(tuple(ids) in targets for ids in cands[:n_candidates]):
            hits += 1
    return hits / len(pairs)


def rate_at(results: list[EvalResult], n_candidates: int) -> float:
    if not results:
        raise ValueError("empty evaluation set")
    hits = sum(1 for r in results
               if r.matched_rank is not None and r.matched_rank <= n_candidates)
    return hits / len(results)


def length_analysis(results: list[EvalResult], bucket_width: int,
                    n_candidates: int = 1) -> list[LengthBucket]:
    """Per-length-bucket repair rate; empty buckets are omitted."""
    if bucket_width < 1:
        raise ValueError("bucket_width must be >= 1")
    grouped: dict[int, list[EvalResult]] = {}
    for r in results:
        grouped.setdefault(r.source_length // bucket_width, []).append(r)
    buckets = []
    for key in sorted(grouped):
        members = grouped[key]
        hits = sum(1 for r in members
                   if r.matched_rank is not None and r.matched_rank <= n_candidates)
        buckets.append(LengthBucket(key * bucket_width, (key + 1) * bucket_width,
                                    hits / len(members), len(members)))
    return buckets


def throughput(batch_log: list[BatchRecord], exclude_warmup: bool = True) -> float:
    """Total source+target tokens per second over the logged batches."""
    records = batch_log[1:] if exclude_warmup and len(batch_log) > 1 else batch_log
    if not records:
        raise ValueError("no completed batches")
    seconds = sum(r.seconds for r in records)
    if seconds <= 0:
        raise ValueError("zero elapsed time")
    return sum(r.tokens for r in records) / seconds


@dataclass
class MemoryFit:
    k: float              # Mb per instance: slope of peak memory vs batch
    efficiency: float     # 1 / k
    residual: float       # RMS of fit residuals


def memory_cost_fit(samples: list[tuple[float, float]]) -> MemoryFit:
    """Least-squares slope of (batch size, peak Mb) points."""
    if len({b for b, _ in samples}) < 2:
        raise DegenerateFitError("need at least 2 distinct batch sizes")
    x = np.array([b for b, _ in samples], dtype=np.float64)
    y = np.array([m for _, m in samples], dtype=np.float64)
    xc = x - x.mean()
    k = float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
    if k <= 0:
        raise DegenerateFitError(f"non-positive memory slope k={k:.6g}")
    intercept = y.mean() - k * x.mean()
    resid = y - (k * x + intercept)
    return MemoryFit(k, 1.0 / k, float(np.sqrt(np.mean(resid ** 2))))


# ---------------------------------------------------------------------------
# Benchmarks (encoder-only forward+backward)
# ---------------------------------------------------------------------------

def _bench_encoder_setup(config: ModelConfig, T: int, batch_size: int,
                         seed: int, kernel: str | None):
    model = build_model(config, seed=seed, kernel=kernel)
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, config.vocab_size, size=(batch_size, T))
    return model, ids


def _encoder_pass(model, ids, cotangent=None):
    enc = model.encoder.forward(ids)
    memory = enc.memory if hasattr(enc, "memory") else enc
    if cotangent is None or cotangent.shape != memory.shape:
        cotangent = np.ones_like(memory)
    model.encoder.backward(cotangent)
    model.zero_grad()
    return cotangent


def benchmark_encoder(config: ModelConfig, T: int = 512, batch_size: int = 8,
                      iters: int = 3, seed: int = 0,
                      kernel: str | None = None) -> float:
    """Words/s of encoder forward+backward (first pass excluded as warm-up)."""
    model, ids = _bench_encoder_setup(config, T, batch_size, seed, kernel)
    cot = _encoder_pass(model, ids)
    t0 = time.perf_counter()
    for _ in range(iters):
        _encoder_pass(model, ids, cot)
    elapsed = time.perf_counter() - t0
    return batch_size * T * iters / elapsed


def benchmark_memory(config: ModelConfig, batch_sizes=(2, 4, 8), T: int = 256,
                     seed: int = 0, kernel: str | None = None
                     ) -> list[tuple[int, float]]:
    """Peak traced memory (Mb) of one encoder forward+backward per batch size."""
    samples = []
    for B in batch_sizes:
        model, ids = _bench_encoder_setup(config, T, B, seed, kernel)
        gc.collect()
        tracemalloc.start()
        _encoder_pass(model, ids)
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        samples.append((B, peak / 1e6))
    return samples

"""Greedy and beam-search generation scored by summed negative log probability.

Hypotheses carry SOS-prefixed ids internally; returned candidates are body
token ids (no SOS/EOS).  Lower scores are better, ties break lexicographically
on the ids, and completed candidates are collected into a pool that the
search stops filling once it holds n_best entries no live hypothesis can
still beat (scores only grow, so this is safe pruning).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codetok import EOS_ID, SOS_ID


@dataclass
class BeamHypothesis:
    ids: tuple[int, ...]          # SOS-prefixed token ids
    score: float                  # accumulated -sum log P, >= 0
    complete: bool = False

    @property
    def body(self) -> tuple[int, ...]:
        ids = self.ids[1:]
        return ids[:-1] if self.complete else ids

    def sort_key(self):
        return (self.score, self.ids)


def default_max_len(source_len: int) -> int:
    return int(1.5 * source_len) + 10


def greedy_decode(model, source_ids, max_len: int | None = None) -> list[int]:
    """Argmax decoding; stops at EOS or max_len.  Ties pick the lowest id."""
    source_ids = np.asarray(source_ids)
    if max_len is None:
        max_len = default_max_len(len(source_ids))
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    enc_out = model.encode(source_ids)
    state = model.init_decode_state(enc_out, 1)
    prefix = [SOS_ID]
    out: list[int] = []
    for _ in range(max_len):
        logprobs, state = model.decode_step(
            np.array([prefix], dtype=np.int64), state, enc_out)
        token = int(np.argmax(logprobs[0]))  # argmax takes the lowest id on ties
        if token == EOS_ID:
            break
        out.append(token)
        prefix.append(token)
    return out


def beam_search(model, source_ids, width: int = 5, n_best: int = 5,
                max_len: int | None = None,
                length_normalize: bool = False) -> list[tuple[list[int], float]]:
    """Ranked (token ids, score) candidates, best (lowest score) first.

    Keeps ``width`` partial hypotheses per step; EOS children within the
    kept set join the completed pool.  If the pool never reaches n_best,
    the best incomplete hypotheses pad the result.  length_normalize
    divides scores by candidate length for the final ranking only.
    """
    if width < 1 or n_best < 1:
        raise ValueError("width and n_best must be >= 1")
    source_ids = np.asarray(source_ids)
    if max_len is None:
        max_len = default_max_len(len(source_ids))
    enc_out = model.encode(source_ids)
    state = model.init_decode_state(enc_out, 1)
    beams = [BeamHypothesis((SOS_ID,), 0.0)]
    pool: list[BeamHypothesis] = []
    for _ in range(max_len):
        prefixes = np.array([h.ids for h in beams], dtype=np.int64)
        logprobs, state = model.decode_step(prefixes, state, enc_out)
        children: list[tuple[float, tuple[int, ...], int]] = []
        for b, hyp in enumerate(beams):
            neglogp = -logprobs[b]
            for tok in range(neglogp.shape[0]):
                score = hyp.score + float(neglogp[tok])
                if not np.isfinite(score):
                    continue  # zero-probability branch pruned
                children.append((score, hyp.ids + (tok,), b))
        children.sort(key=lambda c: (c[0], c[1]))
        kept = children[:width]
        new_beams: list[BeamHypothesis] = []
        beam_src: list[int] = []
        for score, ids, parent in kept:
            if ids[-1] == EOS_ID:
                pool.append(BeamHypothesis(ids, score, complete=True))
            else:
                new_beams.append(BeamHypothesis(ids, score))
                beam_src.append(parent)
        if not new_beams:
            break
        pool.sort(key=BeamHypothesis.sort_key)
        if len(pool) >= n_best and pool[n_best - 1].score < new_beams[0].score:
            break  # nothing alive can beat the kept pool
        beams = new_beams
        state = model.reorder_state(state, np.array(beam_src))
    else:
        new_beams = beams
    pool.sort(key=BeamHypothesis.sort_key)
    ranked = pool[:n_best]
    if len(ranked) < n_best:
        leftovers = sorted(new_beams, key=BeamHypothesis.sort_key)
        ranked.extend(leftovers[:n_best - len(ranked)])
    if length_normalize:
        ranked.sort(key=lambda h: (h.score / max(len(h.body), 1), h.ids))
    return [(list(h.body), h.score) for h in ranked]

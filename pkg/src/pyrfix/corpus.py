"""Flawed/repaired pair ingestion, cleanup filters, and deterministic splits."""

from __future__ import annotations

import difflib
import json
import math
from collections import Counter
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .codetok import SPACE


class CorpusFormatError(ValueError):
    """Malformed corpus file; carries the offending line number (1-based)."""

    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass
class RawPair:
    """One flawed token sequence and its reference repairs, pre-encoding."""

    id: str
    source: list[str]
    targets: list[list[str]]
    label: str | None = None


@dataclass
class CodePair:
    """Encoded pair: one flawed instance, one-to-several reference repairs."""

    id: str
    source_tokens: list[int]
    targets: list[list[int]]
    label: str | None = None

    def __post_init__(self):
        if not self.targets:
            raise ValueError(f"pair {self.id}: targets must be non-empty")

    @property
    def source_length(self) -> int:
        return len(self.source_tokens)


@dataclass
class SplitSpec:
    """Train/test/validation fractions plus the shuffle seed."""

    train: float = 0.8
    test: float = 0.1
    validation: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("train", "test", "validation"):
            r = getattr(self, name)
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"ratio {name}={r} outside [0, 1]")
        if abs(self.train + self.test + self.validation - 1.0) > 1e-9:
            raise ValueError("split ratios must sum to 1")


# ---------------------------------------------------------------------------
# Cleanup predicates.  The corpora these mirror flag dead code and flawed/
# repaired pairs that differ only in which branch of a condition runs; both
# are heuristics and can be swapped out per corpus.
# ---------------------------------------------------------------------------

_TERMINATORS = ("return", "break")


def has_dead_code(tokens: Sequence[str]) -> bool:
    """True when a statement follows an unconditional return/break in its block."""
    i = 0
    n = len(tokens)
    while i < n:
        if tokens[i] in _TERMINATORS:
            depth = 0
            j = i + 1
            while j < n:
                tok = tokens[j]
                if tok in "([{":
                    depth += 1
                elif tok in ")]}":
                    if depth == 0:
                        break
                    depth -= 1
                elif tok == ";" and depth == 0:
                    break
                j += 1
            j += 1
            while j < n and tokens[j] == SPACE:
                j += 1
            if j < n and tokens[j] != "}":
                return True
            i = j
        else:
            i += 1
    return False


def _changed_spans(a: Sequence[str], b: Sequence[str]) -> list[tuple[int, int]]:
    matcher = difflib.SequenceMatcher(a=list(a), b=list(b), autojunk=False)
    return [(i1, i2) for op, i1, i2, _, _ in matcher.get_opcodes() if op != "equal"]


def _condition_spans(tokens: Sequence[str]) -> list[tuple[int, int]]:
    """Extents of controlling expressions: the (...) after if/while/for/switch."""
    spans = []
    for i, tok in enumerate(tokens):
        if tok not in ("if", "while", "for", "switch"):
            continue
        j = i + 1
        while j < len(tokens) and tokens[j] == SPACE:
            j += 1
        if j >= len(tokens) or tokens[j] != "(":
            continue
        depth = 0
        for k in range(j, len(tokens)):
            if tokens[k] == "(":
                depth += 1
            elif tokens[k] == ")":
                depth -= 1
                if depth == 0:
                    spans.append((j, k + 1))
                    break
    return spans


def is_divergent_if(source: Sequence[str], target: Sequence[str]) -> bool:
    """True when the source->target edit is confined to one conditional's test."""
    spans = _changed_spans(source, target)
    if not spans:
        return False
    conditions = _condition_spans(source)
    for lo, hi in spans:
        if not any(c_lo <= lo and hi <= c_hi for c_lo, c_hi in conditions):
            return False
    first = min(lo for lo, _ in spans)
    last = max(hi for _, hi in spans)
    return any(c_lo <= first and last <= c_hi for c_lo, c_hi in conditions)


def default_predicates() -> dict[str, Callable[[RawPair], bool]]:
    return {
        "dead_code": lambda p: has_dead_code(p.source),
        "divergent_if": lambda p: any(is_divergent_if(p.source, t) for t in p.targets),
    }


def filter_pairs(
    pairs: Sequence[RawPair],
    predicates: Mapping[str, Callable[[RawPair], bool]] | None = None,
    max_length: int | None = None,
) -> tuple[list[RawPair], Counter]:
    """Drop flagged pairs; return survivors plus per-predicate drop counts."""
    if predicates is None:
        predicates = default_predicates()
    kept: list[RawPair] = []
    drops: Counter = Counter()
    for pair in pairs:
        flagged = None
        for name, pred in predicates.items():
            if pred(pair):
                flagged = name
                break
        if flagged is None and max_length is not None and len(pair.source) > max_length:
            flagged = "max_length"
        if flagged is None:
            kept.append(pair)
        else:
            drops[flagged] += 1
    return kept, drops


def split(pairs: Sequence, spec: SplitSpec) -> tuple[list, list, list]:
    """Deterministic shuffle + floor allocation, remainder to train."""
    n = len(pairs)
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_test = math.floor(n * spec.test)
    n_val = math.floor(n * spec.validation)
    n_train = n - n_test - n_val
    shuffled = [pairs[i] for i in perm]
    return (shuffled[:n_train],
            shuffled[n_train:n_train + n_test],
            shuffled[n_train + n_test:])


# ---------------------------------------------------------------------------
# JSONL I/O.  Encoded pairs: {"id", "source_tokens", "targets", "label"}.
# Raw pairs (pre-tokenization input): {"id", "source", "targets", "label"}
# with code as plain strings.
# ---------------------------------------------------------------------------

def save_jsonl(pairs: Sequence[CodePair], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            rec = {"id": p.id, "source_tokens": p.source_tokens,
                   "targets": p.targets, "label": p.label}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_jsonl(path) -> list[CodePair]:
    pairs: list[CodePair] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pairs.append(CodePair(
                    id=str(rec["id"]),
                    source_tokens=[int(t) for t in rec["source_tokens"]],
                    targets=[[int(t) for t in tgt] for tgt in rec["targets"]],
                    label=rec.get("label"),
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusFormatError(str(exc), line_no) from exc
    return pairs


def load_raw_jsonl(path) -> list[dict]:
    """Raw code records awaiting tokenization."""
    records: list[dict] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                records.append({
                    "id": str(rec["id"]),
                    "source": str(rec["source"]),
                    "targets": [str(t) for t in rec["targets"]],
                    "label": rec.get("label"),
                })
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusFormatError(str(exc), line_no) from exc
    return records


def save_raw_jsonl(records: Sequence[Mapping], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(dict(rec), ensure_ascii=False) + "\n")

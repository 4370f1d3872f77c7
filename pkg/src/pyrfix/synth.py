"""Synthetic flawed/repaired C snippets for desk-scale experiments.

Three bug families with deterministic, pattern-local fixes:
  double_free   - a duplicated free(...) statement is deleted
  memset_size   - a memset length is fixed to match the declared buffer
  bounds_check  - an increment is wrapped in an if (x < UCHAR_MAX) guard
"""

from __future__ import annotations

import numpy as np

from .codetok import Vocabulary, rename_functions, tokenize
from .corpus import CodePair, RawPair

CLASSES = ("double_free", "memset_size", "bounds_check")

_FUNC_NAMES = ("proc", "handle", "work", "run_job", "apply", "update",
               "fill", "emit")
_PTR_NAMES = ("data", "p", "dest", "item")
_BUF_NAMES = ("buffer", "store", "block", "arr")
_SIZES = (10, 20, 30, 50, 80, 100)


def _double_free(rng: np.random.Generator) -> tuple[str, str]:
    # benign memset keeps the API surface shared with the other classes
    name = rng.choice(_FUNC_NAMES)
    ptr = rng.choice(_PTR_NAMES)
    n = int(rng.choice(_SIZES))
    filler = ""
    if rng.random() < 0.5:
        filler = f"memset ( {ptr} , 'A' , {n} - 1 ) ; "
    body = (f"void {name} ( ) {{ char * {ptr} ; "
            f"{ptr} = malloc ( {n} ) ; "
            f"{filler}free ( {ptr} ) ; ")
    return body + f"free ( {ptr} ) ; }}", body + "}"


def _memset_size(rng: np.random.Generator) -> tuple[str, str]:
    # single free at the end is benign; the flaw is the size mismatch
    name = rng.choice(_FUNC_NAMES)
    buf = rng.choice(_BUF_NAMES)
    ptr = rng.choice(_PTR_NAMES)
    good = int(rng.choice(_SIZES))
    bad = int(rng.choice([s for s in _SIZES if s != good]))
    head = (f"void {name} ( ) {{ char {buf} [ {good} ] ; char * {ptr} ; "
            f"{ptr} = {buf} ; memset ( {ptr} , 'A' , ")
    tail = f" - 1 ) ; free ( {ptr} ) ; }}" if rng.random() < 0.5 else " - 1 ) ; }"
    return head + str(bad) + tail, head + str(good) + tail


def _bounds_check(rng: np.random.Generator) -> tuple[str, str]:
    # benign, size-matched buffer setup precedes the unguarded increment
    name = rng.choice(_FUNC_NAMES)
    var = rng.choice(_PTR_NAMES)
    res = rng.choice(_BUF_NAMES)
    filler = ""
    if rng.random() < 0.5:
        buf = rng.choice([b for b in _BUF_NAMES if b != res])
        n = int(rng.choice(_SIZES))
        filler = f"char {buf} [ {n} ] ; memset ( {buf} , 'A' , {n} - 1 ) ; "
    inner = f"unsigned char {res} ; {res} = {var} + 1 ;"
    head = f"static void {name} ( unsigned char {var} ) {{ {filler}"
    return (head + inner + " }",
            head + f"if ( {var} < UCHAR_MAX ) {{ {inner} }} }}")


_MAKERS = {"double_free": _double_free, "memset_size": _memset_size,
           "bounds_check": _bounds_check}


def make_repair_corpus(n: int, seed: int = 0, classes=CLASSES,
                       rename: bool = True) -> list[RawPair]:
    """n token-level pairs cycling through the requested bug classes."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        label = classes[i % len(classes)]
        flawed, repaired = _MAKERS[label](rng)
        src = tokenize(flawed)
        tgt = tokenize(repaired)
        if rename:
            src, mapping = rename_functions(src)
            tgt = [mapping.get(t, t) for t in tgt]
        pairs.append(RawPair(id=f"synth-{label}-{i:04d}", source=src,
                             targets=[tgt], label=label))
    return pairs


def encode_pairs(raw_pairs: list[RawPair], vocab: Vocabulary) -> list[CodePair]:
    return [CodePair(id=p.id,
                     source_tokens=vocab.encode(p.source),
                     targets=[vocab.encode(t) for t in p.targets],
                     label=p.label)
            for p in raw_pairs]


def build_corpus(n: int, seed: int = 0, classes=CLASSES, min_count: int = 1
                 ) -> tuple[list[CodePair], Vocabulary]:
    """Convenience: generate, build the vocabulary, and encode."""
    raw = make_repair_corpus(n, seed, classes)
    token_lists = [p.source for p in raw] + [t for p in raw for t in p.targets]
    vocab = Vocabulary.from_corpus(token_lists, min_count)
    return encode_pairs(raw, vocab), vocab

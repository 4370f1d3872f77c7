import numpy as np

from pyrfix.codetok import UNK_ID, detokenize, tokenize
from pyrfix.synth import CLASSES, build_corpus, make_repair_corpus


def test_corpus_deterministic():
    a = make_repair_corpus(20, seed=5)
    b = make_repair_corpus(20, seed=5)
    assert [(p.id, p.source, p.targets) for p in a] == \
           [(p.id, p.source, p.targets) for p in b]


def test_corpus_cycles_classes():
    pairs = make_repair_corpus(9, seed=0)
    assert [p.label for p in pairs] == list(CLASSES) * 3


def test_pairs_retokenize_cleanly():
    # every generated snippet is itself a valid token stream
    for p in make_repair_corpus(15, seed=1, rename=False):
        assert tokenize(detokenize(p.source)) == p.source
        for t in p.targets:
            assert tokenize(detokenize(t)) == t


def test_source_and_target_differ_by_bug():
    for p in make_repair_corpus(12, seed=2):
        assert p.source != p.targets[0]


def test_renaming_applied():
    pairs = make_repair_corpus(6, seed=3, rename=True)
    assert any("FUNC_1" in p.source for p in pairs)


def test_encoded_corpus_in_vocabulary():
    pairs, vocab = build_corpus(30, seed=4)
    for p in pairs:
        assert UNK_ID not in p.source_tokens
        assert all(UNK_ID not in t for t in p.targets)
        assert max(p.source_tokens) < len(vocab)


def test_labels_usable_for_classification():
    pairs, _ = build_corpus(30, seed=5)
    assert {p.label for p in pairs} == set(CLASSES)

import json

import pytest

from pyrfix.codetok import tokenize
from pyrfix.corpus import (CodePair, CorpusFormatError, RawPair, SplitSpec,
                           filter_pairs, has_dead_code, is_divergent_if,
                           load_jsonl, load_raw_jsonl, save_jsonl, split)


def _raw(i, src, tgts, label=None):
    return RawPair(f"p{i}", tokenize(src), [tokenize(t) for t in tgts], label)


def test_code_pair_invariants():
    p = CodePair("x", [4, 5, 6], [[4, 5]])
    assert p.source_length == 3
    with pytest.raises(ValueError):
        CodePair("bad", [4], [])


def test_split_spec_validation():
    SplitSpec(0.8, 0.1, 0.1, seed=1)
    with pytest.raises(ValueError):
        SplitSpec(0.8, 0.3, 0.1)
    with pytest.raises(ValueError):
        SplitSpec(1.2, -0.1, -0.1)


def test_dead_code_predicate():
    assert has_dead_code(tokenize("void f(){return; x=1;}"))
    assert not has_dead_code(tokenize("void f(){x=1; return;}"))
    assert not has_dead_code(tokenize("void f(){if(a){return;} x=1;}"))
    assert has_dead_code(tokenize("while(1){break; y=2;}"))


def test_divergent_if_predicate():
    src = tokenize("void f(){if(a==1){x();}else{y();}}")
    tgt = tokenize("void f(){if(a==2){x();}else{y();}}")
    assert is_divergent_if(src, tgt)
    tgt2 = tokenize("void f(){if(a==1){z();}else{y();}}")
    assert not is_divergent_if(src, tgt2)
    assert not is_divergent_if(src, src)


def test_filter_pairs_counts():
    pairs = [_raw(0, "void f(){x=1;}", ["void f(){x=2;}"])] * 8
    divergent = [_raw(9, "void g(){if(a==1){x();}}", ["void g(){if(a==2){x();}}"])] * 2
    kept, drops = filter_pairs(pairs + divergent)
    assert len(kept) == 8
    assert drops == {"divergent_if": 2}


def test_filter_pairs_empty():
    kept, drops = filter_pairs([])
    assert kept == [] and not drops


def test_filter_pairs_max_length():
    long_pair = RawPair("long", ["x"] * 2000, [["x"]])
    kept, drops = filter_pairs([long_pair], predicates={}, max_length=1000)
    assert kept == [] and drops["max_length"] == 1


def test_filter_pairs_does_not_mutate_survivors():
    p = _raw(0, "int x=1;", ["int x=2;"])
    before = (list(p.source), [list(t) for t in p.targets])
    kept, _ = filter_pairs([p])
    assert kept[0] is p
    assert (list(p.source), [list(t) for t in p.targets]) == before


def _pairs(n):
    return [CodePair(f"p{i}", [4, 5], [[4]]) for i in range(n)]


def test_split_sizes_10():
    tr, te, va = split(_pairs(10), SplitSpec(0.8, 0.1, 0.1, seed=7))
    assert (len(tr), len(te), len(va)) == (8, 1, 1)


def test_split_sizes_31_remainder_to_train():
    tr, te, va = split(_pairs(31), SplitSpec(0.8, 0.1, 0.1, seed=7))
    assert (len(tr), len(te), len(va)) == (25, 3, 3)


def test_split_deterministic():
    pairs = _pairs(20)
    a = split(pairs, SplitSpec(0.8, 0.1, 0.1, seed=3))
    b = split(pairs, SplitSpec(0.8, 0.1, 0.1, seed=3))
    assert [[p.id for p in part] for part in a] == \
           [[p.id for p in part] for part in b]
    c = split(pairs, SplitSpec(0.8, 0.1, 0.1, seed=4))
    assert [[p.id for p in part] for part in a] != \
           [[p.id for p in part] for part in c]


def test_split_disjoint_union():
    pairs = _pairs(23)
    tr, te, va = split(pairs, SplitSpec(0.6, 0.2, 0.2, seed=0))
    ids = [p.id for p in tr + te + va]
    assert sorted(ids) == sorted(p.id for p in pairs)
    assert len(set(ids)) == len(ids)


def test_split_tiny_corpus():
    tr, te, va = split(_pairs(2), SplitSpec(0.8, 0.1, 0.1, seed=0))
    assert len(tr) + len(te) + len(va) == 2


def test_jsonl_roundtrip(tmp_path):
    pairs = [CodePair("a", [4, 5], [[6], [7, 8]], "bug"),
             CodePair("b", [9], [[10]], None)]
    path = tmp_path / "pairs.jsonl"
    save_jsonl(pairs, path)
    assert load_jsonl(path) == pairs
    # LF endings, one JSON object per line
    raw = path.read_bytes()
    assert b"\r" not in raw
    assert len(raw.decode().strip().split("\n")) == 2


def test_jsonl_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert load_jsonl(path) == []


def test_jsonl_missing_field_reports_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = json.dumps({"id": "a", "source_tokens": [1], "targets": [[2]]})
    bad = json.dumps({"id": "b", "source_tokens": [1]})
    path.write_text(good + "\n" + bad + "\n")
    with pytest.raises(CorpusFormatError) as exc:
        load_jsonl(path)
    assert exc.value.line_no == 2


def test_raw_jsonl_roundtrip(tmp_path):
    path = tmp_path / "raw.jsonl"
    path.write_text(json.dumps({"id": "r1", "source": "int x;",
                                "targets": ["int y;"], "label": None}) + "\n")
    recs = load_raw_jsonl(path)
    assert recs[0]["source"] == "int x;"

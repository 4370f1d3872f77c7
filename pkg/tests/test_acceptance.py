"""Acceptance suite: one criterion per test, one printed line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s``.  The two overfit runs
(criterion 5) train real models on a single CPU core and dominate the
runtime; everything else finishes in seconds.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from pyrfix.codetok import detokenize, normalize_whitespace, rename_functions, tokenize
from pyrfix.config import ModelConfig
from pyrfix.corpus import SplitSpec, split
from pyrfix.decode import beam_search
from pyrfix.harness import (TrainConfig, benchmark_encoder, benchmark_memory,
                            evaluate_model, memory_cost_fit, rate_at, train)
from pyrfix.models import build_model
from pyrfix.nn import grad_check, output_length
from pyrfix.nn.attention import BahdanauAttention, LuongAttention
from pyrfix.nn.core import Affine, PyramidContraction
from pyrfix.nn.gru import BiGruLayer, GruEncoder, GruLayer
from pyrfix.nn.transformer import (TransformerEncoder,
                                   TransformerEncoderLayerPyramid,
                                   TransformerEncoderLayerRegular)
from pyrfix.synth import CLASSES, build_corpus
from pyrfix.transfer import (ClassifierConfig, expand_embedding,
                             make_classifier, reinit_last_encoder_layer,
                             train_classifier)

from test_decode import ToyModel, exhaustive_oracle


def _report(num: int, name: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    print(f"\nACCEPTANCE {num} ({name}): {status}  {detail}")


GRU_CFG = ModelConfig(family="gru", attention="bahdanau", encoder_layers=2,
                      decoder_layers=2, d_model=32, d_ff=64, pyramid=True,
                      vocab_size=0)


def _decayed_lr(epoch: int) -> float:
    # step decay keeps late training stable (constant 5e-3 can spike)
    if epoch < 100:
        return 5e-3
    return 2e-3 if epoch < 150 else 1e-3


def _train_chunked(model, pairs, max_epochs, chunk=25, stop=None):
    """Chunked training with one persistent ADAM and step-decayed lr.

    ``stop(model, last_loss)`` is polled between chunks; returns
    (epochs_used, last_train_loss, stop_value).
    """
    from pyrfix.nn.optim import Adam

    opt = Adam(model.named_parameters(), _decayed_lr(0))
    epochs, loss, value = 0, float("inf"), None
    while epochs < max_epochs:
        opt.lr = _decayed_lr(epochs)
        cfg = TrainConfig(epochs=chunk, batch_size=8, lr=opt.lr,
                          patience=10 ** 6, seed=epochs)
        res = train(model, pairs, [], cfg, optimizer=opt)
        epochs += chunk
        loss = res.history[-1].train_loss
        if stop is not None:
            value = stop(model, loss)
            if value:
                break
    return epochs, loss, value


def _train_to_rate(model, pairs, target=0.95, max_epochs=200):
    """Train until the 1-candidate training repair rate clears ``target``."""
    rates = []

    def stop(m, _loss):
        rate = rate_at(evaluate_model(m, pairs, width=1, n_best=1), 1)
        rates.append(rate)
        return rate >= target

    epochs, _, _ = _train_chunked(model, pairs, max_epochs, stop=stop)
    return rates[-1], epochs


@pytest.fixture(scope="module")
def overfit_corpus():
    pairs, vocab = build_corpus(200, seed=7)
    return pairs, vocab


@pytest.fixture(scope="module")
def trained_gru(overfit_corpus):
    pairs, vocab = overfit_corpus
    model = build_model(replace(GRU_CFG, vocab_size=len(vocab)), seed=0)
    t0 = time.perf_counter()
    rate, epochs = _train_to_rate(model, pairs)
    return model, vocab, rate, epochs, time.perf_counter() - t0


# -- 1. pyramid length contract -------------------------------------------------

def test_criterion_1_pyramid_length_contract():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    checked = 0
    for _ in range(1000):
        T = int(rng.integers(0, 1001))
        N = int(rng.integers(1, 6))
        w = int(rng.integers(2, 5))
        expected = T
        for _ in range(N - 1):
            expected = -(-expected // w)
        assert output_length(T, N, w) == expected
        checked += 1
    # a sample of real encoders obeys the same contract
    for _ in range(12):
        T = int(rng.integers(1, 600))
        N = int(rng.integers(1, 5))
        w = int(rng.integers(2, 5))
        enc = GruEncoder(8, 2, N, True, w, np.random.default_rng(1))
        assert enc.forward(rng.integers(0, 8, (1, T))).memory.shape[1] == \
            output_length(T, N, w)
    for _ in range(6):
        T = int(rng.integers(1, 300))
        N = int(rng.integers(1, 4))
        enc = TransformerEncoder(8, 4, N, 2, 8, True, "ave",
                                 np.random.default_rng(2))
        assert enc.forward(rng.integers(0, 8, (1, T))).shape[1] == \
            output_length(T, N, 2)
    # divisible case: exactly T / 2**(N-1)
    enc = GruEncoder(8, 2, 4, True, 2, np.random.default_rng(3))
    assert enc.forward(rng.integers(0, 8, (1, 512))).memory.shape[1] == 64
    elapsed = time.perf_counter() - t0
    ok = elapsed < 10.0
    _report(1, "pyramid length contract",
            ok, f"{checked} randomized cases + live encoders in {elapsed:.1f}s")
    assert ok


# -- 2. gradient suite -----------------------------------------------------------

def test_criterion_2_gradient_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    f64 = np.float64
    suite = []

    cell = GruLayer(4, 4, rng, dtype=f64)
    suite.append(("gru cell", grad_check(
        cell, (rng.standard_normal((2, 4)), rng.standard_normal((2, 4))),
        wrt_inputs=(0, 1), forward=cell.step, backward=cell.backward_step)))

    bi = BiGruLayer(4, 4, rng, dtype=f64)
    suite.append(("bi-gru layer", grad_check(
        bi, (rng.standard_normal((2, 5, 4)),), wrt_inputs=(0,),
        forward=lambda x: bi.forward(x)[0],
        backward=lambda c: (bi.backward(c),))))

    h = rng.standard_normal((2, 4))
    mem = rng.standard_normal((2, 6, 4))
    bah = BahdanauAttention(4, rng, dtype=f64)
    suite.append(("attention bahdanau", grad_check(
        bah, (h, mem), wrt_inputs=(0, 1),
        backward=lambda dw, dc: bah.backward(dc, dw))))
    for kind in ("dot", "general", "concat"):
        att = LuongAttention(kind, 4, rng, dtype=f64)
        suite.append((f"attention luong {kind}", grad_check(
            att, (h, mem), wrt_inputs=(0, 1),
            backward=lambda dw, dc, a=att: a.backward(dc, dw))))

    pyr = PyramidContraction(4, 2, rng, dtype=f64)
    suite.append(("pyramid module", grad_check(
        pyr, (rng.standard_normal((2, 5, 4)),), wrt_inputs=(0,))))

    reg = TransformerEncoderLayerRegular(8, 2, 12, rng, dtype=f64)
    suite.append(("transformer regular", grad_check(
        reg, (rng.standard_normal((1, 5, 8)),), wrt_inputs=(0,),
        backward=lambda c: (reg.backward(c),))))
    for mode in ("ave", "aff"):
        lay = TransformerEncoderLayerPyramid(8, 2, 12, mode, rng, dtype=f64)
        suite.append((f"transformer pyramid {mode}", grad_check(
            lay, (rng.standard_normal((1, 5, 8)),), wrt_inputs=(0,),
            backward=lambda c, m=lay: (m.backward(c),))))

    head = Affine(3, 8, rng, dtype=f64)
    suite.append(("classifier head", grad_check(
        head, (rng.standard_normal((2, 8)),), wrt_inputs=(0,))))

    worst = max(rep.max_rel_err for _, rep in suite)
    elapsed = time.perf_counter() - t0
    ok = all(rep.passed for _, rep in suite) and elapsed < 300
    detail = f"{len(suite)} modules, max rel err {worst:.2e} in {elapsed:.1f}s"
    _report(2, "gradient suite", ok, detail)
    for name, rep in suite:
        assert rep.passed, f"{name}: {rep}"
    assert elapsed < 300


# -- 3. attention normalization ----------------------------------------------------

def test_criterion_3_attention_normalization():
    rng = np.random.default_rng(1)
    variants = [BahdanauAttention(6, rng, dtype=np.float64)] + \
        [LuongAttention(k, 6, rng, dtype=np.float64)
         for k in ("dot", "general", "concat")]
    worst = 0.0
    for i in range(1000):
        att = variants[i % len(variants)]
        S = int(rng.integers(1, 12))
        alpha, _ = att.forward(rng.standard_normal((2, 6)),
                               rng.standard_normal((2, S, 6)))
        worst = max(worst, float(np.abs(alpha.sum(axis=1) - 1.0).max()))
        att.clear_caches()
    gen = LuongAttention("general", 6, rng, dtype=np.float64)
    gen.params["W_a"][...] = np.eye(6)
    dot = LuongAttention("dot", 6, rng, dtype=np.float64)
    diff = 0.0
    for _ in range(50):
        h = rng.standard_normal((2, 6))
        mem = rng.standard_normal((2, 5, 6))
        u_g, _ = gen.scores(h, mem)
        u_d, _ = dot.scores(h, mem)
        diff = max(diff, float(np.abs(u_g - u_d).max()))
    ok = worst <= 1e-6 and diff <= 1e-6
    _report(3, "attention normalization", ok,
            f"max |sum(alpha)-1| {worst:.2e}; general(I) vs dot {diff:.2e}")
    assert ok


# -- 4. beam-search oracle ----------------------------------------------------------

def test_criterion_4_beam_search_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    for trial in range(100):
        V = int(rng.integers(3, 6))
        max_len = int(rng.integers(1, 5))
        n_best = int(rng.integers(1, 6))
        model = ToyModel(V, seed=10_000 + trial)
        got = beam_search(model, [0, 0], width=V ** max_len,
                          n_best=n_best, max_len=max_len)
        want = exhaustive_oracle(model, n_best, max_len)
        assert [g[0] for g in got] == [w[0] for w in want], f"trial {trial}"
        np.testing.assert_allclose([g[1] for g in got], [w[1] for w in want],
                                   rtol=1e-12)
    elapsed = time.perf_counter() - t0
    ok = elapsed < 60
    _report(4, "beam-search oracle", ok,
            f"100 toy models match exhaustive enumeration in {elapsed:.1f}s")
    assert ok


# -- 5. overfit acceptance ------------------------------------------------------------

def test_criterion_5_overfit_gru(trained_gru):
    _, _, rate, epochs, wall = trained_gru
    ok = rate >= 0.95 and epochs <= 200 and wall < 1800
    _report(5, "overfit: pyramid GRU+Bahdanau", ok,
            f"train rate@1 {rate:.3f} after {epochs} epochs in {wall:.0f}s")
    assert ok


def test_criterion_5_overfit_transformer(overfit_corpus):
    pairs, vocab = overfit_corpus
    cfg = ModelConfig(family="transformer", attention="multihead",
                      encoder_layers=2, decoder_layers=2, d_model=32,
                      d_ff=64, heads=4, pyramid=True, residual_mode="ave",
                      vocab_size=len(vocab))
    model = build_model(cfg, seed=0)
    t0 = time.perf_counter()
    rate, epochs = _train_to_rate(model, pairs)
    wall = time.perf_counter() - t0
    ok = rate >= 0.95 and epochs <= 200 and wall < 1800
    _report(5, "overfit: pyramid Transformer", ok,
            f"train rate@1 {rate:.3f} after {epochs} epochs in {wall:.0f}s")
    assert ok


# -- 6. pyramid parity ---------------------------------------------------------------

def test_criterion_6_pyramid_parity():
    pairs, vocab = build_corpus(300, seed=11)
    train_pairs, _, held = split(pairs, SplitSpec(0.8, 0.0, 0.2, seed=11))
    rates = {}
    for pyramid in (True, False):
        cfg = replace(GRU_CFG, pyramid=pyramid, vocab_size=len(vocab))
        model = build_model(cfg, seed=1)
        epochs = 0
        while epochs < 250:
            res = train(model, train_pairs, [],
                        TrainConfig(epochs=25, seed=epochs, **TRAIN_CFG))
            epochs += 25
            if res.history[-1].train_loss < 0.01:
                break
        rates[pyramid] = rate_at(
            evaluate_model(model, held, width=1, n_best=1), 1)
    delta_pp = abs(rates[True] - rates[False]) * 100
    ok = delta_pp <= 10.0
    _report(6, "pyramid parity", ok,
            f"held-out rate@1 pyramid {rates[True]:.3f} vs regular "
            f"{rates[False]:.3f} (delta {delta_pp:.1f}pp)")
    assert ok


# -- 7. throughput ----------------------------------------------------------------------

def test_criterion_7_throughput():
    t0 = time.perf_counter()
    wps = {}
    for pyramid in (True, False):
        cfg = ModelConfig(family="gru", attention="luong_dot",
                          encoder_layers=4, decoder_layers=1, d_model=128,
                          pyramid=pyramid, vocab_size=256)
        wps[pyramid] = benchmark_encoder(cfg, T=512, batch_size=8, iters=2)
    ratio = wps[True] / wps[False]
    elapsed = time.perf_counter() - t0
    ok = ratio >= 1.3 and elapsed < 600
    _report(7, "throughput", ok,
            f"pyramid {wps[True]:.0f} vs regular {wps[False]:.0f} words/s "
            f"(x{ratio:.2f}) in {elapsed:.0f}s")
    assert ok


# -- 8. memory slope ----------------------------------------------------------------------

def test_criterion_8_memory_slope():
    fit = memory_cost_fit([(8, 1000.0), (16, 2000.0), (24, 3000.0)])
    exact = abs(fit.k - 125.0) <= 1e-9 * 125.0
    ks = {}
    for pyramid in (True, False):
        cfg = ModelConfig(family="gru", attention="luong_dot",
                          encoder_layers=3, decoder_layers=1, d_model=64,
                          pyramid=pyramid, vocab_size=256)
        samples = benchmark_memory(cfg, batch_sizes=(2, 4, 8), T=256)
        ks[pyramid] = memory_cost_fit(samples).k
    ok = exact and ks[True] < ks[False]
    _report(8, "memory slope", ok,
            f"synthetic slope exact; instrumented k pyramid {ks[True]:.2f} < "
            f"regular {ks[False]:.2f} Mb/instance")
    assert ok


# -- 9. transfer properties ------------------------------------------------------------------

def test_criterion_9_transfer(trained_gru):
    pre_model, pre_vocab, _, _, _ = trained_gru
    # bit-exact embedding expansion
    labeled, vocab9 = build_corpus(300, seed=13)
    old_emb = pre_model.encoder.embedding.params["E"]
    expanded = expand_embedding(old_emb, pre_vocab, vocab9, seed=0)
    bit_exact = all(
        np.array_equal(expanded[vocab9.lookup(t)], old_emb[pre_vocab.lookup(t)])
        for t in pre_vocab if t in vocab9)
    # reinit touches exactly the last layer
    probe = build_model(replace(GRU_CFG, vocab_size=len(vocab9)), seed=3)
    before = {k: v.copy() for k, v in probe.named_parameters().items()}
    reinit_last_encoder_layer(probe.encoder, seed=4)
    after = probe.named_parameters()
    changed = {k for k, v in before.items() if not np.array_equal(v, after[k])}
    last = f"encoder.layers.{GRU_CFG.encoder_layers - 1}."
    touched_ok = bool(changed) and all(k.startswith(last) for k in changed)
    untouched_ok = all(k in changed or np.array_equal(before[k], after[k])
                       for k in before)
    # pretrained >= fresh on 5/5 seeds
    cfg9 = replace(GRU_CFG, vocab_size=len(vocab9))
    tr, _, ev = split(labeled, SplitSpec(0.8, 0.0, 0.2, seed=13))
    class_ids = {c: i for i, c in enumerate(CLASSES)}
    wins, pairs_acc = 0, []
    for seed in range(5):
        accs = {}
        for tag, base in (("pre", pre_model), ("fresh", None)):
            clf = make_classifier(cfg9, ClassifierConfig(n_class=3),
                                  pretrained=base, seed=seed,
                                  old_vocab=pre_vocab, new_vocab=vocab9)
            res = train_classifier(clf, tr, ev, class_ids, epochs=3,
                                   lr=1e-3, seed=seed)
            accs[tag] = res.eval_accuracy
        wins += accs["pre"] >= accs["fresh"]
        pairs_acc.append((accs["pre"], accs["fresh"]))
    ok = bit_exact and touched_ok and untouched_ok and wins == 5
    detail = (f"embedding rows bit-exact; reinit scoped to layer N; "
              f"pretrained>=fresh {wins}/5 " +
              " ".join(f"{p:.2f}/{f:.2f}" for p, f in pairs_acc))
    _report(9, "transfer properties", ok, detail)
    assert bit_exact and touched_ok and untouched_ok
    assert wins == 5


# -- 10. tokenizer corpus test -----------------------------------------------------------------

def test_criterion_10_tokenizer_corpus():
    rng = np.random.default_rng(5)
    snippets = []
    types = ["int", "char", "long", "unsigned int", "float"]
    names = ["alpha", "beta", "count", "tmp", "val", "acc"]
    ops = ["+", "-", "*", "/", "==", "!=", "<=", ">=", "&&", "||", "<<", ">>"]
    for i in range(120):
        t = types[int(rng.integers(len(types)))]
        a, b = rng.choice(names, size=2, replace=False)
        op = ops[int(rng.integers(len(ops)))]
        n = int(rng.integers(0, 200))
        style = i % 4
        if style == 0:
            src = f"{t} {a} = {n};\n{t} {b} = {a} {op} {n};  /* note {i} */"
        elif style == 1:
            src = (f"{t} helper_{i}({t} {a}) {{\n  if ({a} {op} {n}) "
                   f"{{ return {a}->next; }}\n  return 0;\n}}")
        elif style == 2:
            src = (f'void run_{i}() {{ char s[{n}] = "x y{i}"; '
                   f"printf(s); free(s); }}")
        else:
            src = (f"{t} {a}={n}, {b}={a}{op}2; // inline {i}\n"
                   f"while ({a} != {b}) {{ {a}++; }}")
        snippets.append(src)
    assert len(snippets) >= 100
    for src in snippets:
        toks = tokenize(src)
        assert detokenize(toks) == normalize_whitespace(src)
        renamed, mapping = rename_functions(toks)
        again, mapping2 = rename_functions(renamed)
        assert renamed == again and mapping2 == {}  # idempotent
        assert len(set(mapping.values())) == len(mapping)  # bijective
    _report(10, "tokenizer corpus test", True,
            f"{len(snippets)} snippets round-trip; renaming idempotent+bijective")

import math

import numpy as np
import pytest

from pyrfix.nn.attention import (BahdanauAttention, LocalAttention,
                                 LuongAttention, build_attention)


def _rng(seed=0):
    return np.random.default_rng(seed)


# -- Bahdanau -----------------------------------------------------------------

def test_bahdanau_equal_scores_uniform():
    att = BahdanauAttention(3, _rng(), dtype=np.float64)
    att.params["W1"][...] = 0
    att.params["b1"][...] = 1.0
    att.params["W2"][...] = 0   # keys constant -> all scores equal
    memory = _rng(1).standard_normal((1, 5, 3))
    alpha, context = att.forward(np.zeros((1, 3)), memory)
    np.testing.assert_allclose(alpha, 0.2, atol=1e-12)
    np.testing.assert_allclose(context[0], memory[0].mean(axis=0), atol=1e-12)


def test_bahdanau_single_row():
    att = BahdanauAttention(3, _rng(), dtype=np.float64)
    memory = _rng(2).standard_normal((1, 1, 3))
    alpha, context = att.forward(_rng(3).standard_normal((1, 3)), memory)
    np.testing.assert_allclose(alpha, [[1.0]], atol=1e-12)
    np.testing.assert_allclose(context, memory[:, 0], atol=1e-12)


def test_bahdanau_softmax_by_hand():
    # u = [ln 2, 0] -> alpha = [2/3, 1/3]
    att = BahdanauAttention(2, _rng(), dtype=np.float64)
    att.params["W1"][...] = 0
    att.params["b1"][...] = np.array([1.0, 0.0])
    att.params["W2"][...] = np.eye(2)
    att.params["b2"][...] = 0
    memory = np.array([[[math.log(2.0), 5.0], [0.0, -3.0]]])
    alpha, _ = att.forward(np.zeros((1, 2)), memory)
    np.testing.assert_allclose(alpha, [[2 / 3, 1 / 3]], atol=1e-12)


def test_bahdanau_empty_memory_errors():
    att = BahdanauAttention(3, _rng())
    with pytest.raises(ValueError):
        att.forward(np.zeros((1, 3)), np.zeros((1, 0, 3)))


def test_bahdanau_literal_norm_flag():
    att = BahdanauAttention(2, _rng(), dtype=np.float64, literal_norm=True)
    att.params["W1"][...] = 0
    att.params["b1"][...] = np.array([1.0, 0.0])
    att.params["W2"][...] = np.eye(2)
    att.params["b2"][...] = 0
    memory = np.array([[[3.0, 0.0], [1.0, 0.0]]])
    alpha, _ = att.forward(np.zeros((1, 2)), memory)
    np.testing.assert_allclose(alpha, [[0.75, 0.25]], atol=1e-12)  # u / sum(u)


# -- Luong global ---------------------------------------------------------------

def test_luong_dot_orthogonal_zero():
    att = LuongAttention("dot", 2, _rng(), dtype=np.float64)
    u, _ = att.scores(np.array([[1.0, 0.0]]), np.array([[[0.0, 1.0]]]))
    np.testing.assert_allclose(u, [[0.0]], atol=1e-15)


def test_luong_general_identity_equals_dot():
    rng = _rng(4)
    dot = LuongAttention("dot", 5, rng, dtype=np.float64)
    gen = LuongAttention("general", 5, rng, dtype=np.float64)
    gen.params["W_a"][...] = np.eye(5)
    h = rng.standard_normal((3, 5))
    memory = rng.standard_normal((3, 7, 5))
    u_dot, _ = dot.scores(h, memory)
    u_gen, _ = gen.scores(h, memory)
    np.testing.assert_allclose(u_gen, u_dot, atol=1e-12)
    a_dot = dot.forward(h, memory)
    a_gen = gen.forward(h, memory)
    np.testing.assert_allclose(a_gen[1], a_dot[1], atol=1e-6)


def test_luong_concat_zero_v_uniform():
    att = LuongAttention("concat", 3, _rng(5), dtype=np.float64)
    att.params["v_a"][...] = 0
    memory = _rng(6).standard_normal((2, 4, 3))
    alpha, _ = att.forward(_rng(7).standard_normal((2, 3)), memory)
    np.testing.assert_allclose(alpha, 0.25, atol=1e-12)


def test_global_weights_nonnegative_sum_one_random():
    rng = _rng(8)
    for kind in ("dot", "general", "concat"):
        att = LuongAttention(kind, 4, rng, dtype=np.float64)
        for _ in range(25):
            S = int(rng.integers(1, 9))
            alpha, context = att.forward(rng.standard_normal((2, 4)),
                                         rng.standard_normal((2, S, 4)))
            assert np.all(alpha >= 0)
            np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-6)
            att.clear_caches()


def test_context_in_convex_hull_1d():
    # with d=1 memory rows are scalars: context must lie inside [min, max]
    rng = _rng(9)
    att = LuongAttention("dot", 1, rng, dtype=np.float64)
    for _ in range(20):
        memory = rng.standard_normal((1, 6, 1))
        _, context = att.forward(rng.standard_normal((1, 1)), memory)
        assert memory.min() - 1e-12 <= context[0, 0] <= memory.max() + 1e-12
        att.clear_caches()


def test_permuting_memory_permutes_weights():
    rng = _rng(10)
    att = BahdanauAttention(3, rng, dtype=np.float64)
    h = rng.standard_normal((1, 3))
    memory = rng.standard_normal((1, 6, 3))
    perm = rng.permutation(6)
    alpha, context = att.forward(h, memory)
    att.clear_caches()
    alpha_p, context_p = att.forward(h, memory[:, perm])
    np.testing.assert_allclose(alpha_p, alpha[:, perm], atol=1e-12)
    np.testing.assert_allclose(context_p, context, atol=1e-12)


def test_unknown_scorer_rejected():
    with pytest.raises(ValueError):
        LuongAttention("cosine", 3, _rng())


# -- Luong local ----------------------------------------------------------------

def test_local_center_at_half_for_zero_wp():
    att = LocalAttention(4, _rng(11), dtype=np.float64, base="concat", sigma=2.0)
    att.params["W_p"][...] = 0
    S = 6
    att.scorer.params["v_a"][...] = 0   # uniform pre-damping weights
    memory = np.eye(S)[None, :, :4]
    alpha, context = att.forward(np.zeros((1, 4)), memory)
    # p = S * sigmoid(0) = 3; g_j = exp(-(j-3)^2/8); context[j] = g_j / S
    g = np.exp(-((np.arange(S) - 3.0) ** 2) / 8.0)
    np.testing.assert_allclose(alpha, 1 / S, atol=1e-12)
    np.testing.assert_allclose(context[0, :4], (g / S)[:4], atol=1e-12)


def test_local_gaussian_factor_values():
    # factor 1 at j == p and exp(-1/2) at j == p +- sigma
    sigma = 2.0
    att = LocalAttention(4, _rng(12), dtype=np.float64, base="concat", sigma=sigma)
    att.params["W_p"][...] = 0
    att.scorer.params["v_a"][...] = 0
    S = 8  # p = 4
    memory = np.eye(S)[None, :, :4]
    _, context = att.forward(np.zeros((1, 4)), memory)
    vals = context[0] * S
    np.testing.assert_allclose(vals[4 - 4], math.exp(-2.0), atol=1e-12)
    np.testing.assert_allclose(vals[2], math.exp(-0.5), atol=1e-12)  # j=p-sigma
    assert vals[3] < 1.0  # j=p is index 4 but only 4 dims kept; check decay
    att.clear_caches()


def test_local_sigma_default_rule():
    att = LocalAttention(4, _rng(13))
    assert att.effective_sigma(5) == 2.0
    assert att.effective_sigma(100) == 10.0


def test_local_sigma_validation():
    with pytest.raises(ValueError):
        LocalAttention(4, _rng(14), sigma=-1.0)
    with pytest.raises(ValueError):
        build_attention("luong_local", 4, _rng(15), local_sigma=0.0)


def test_build_attention_kinds():
    rng = _rng(16)
    assert isinstance(build_attention("bahdanau", 4, rng), BahdanauAttention)
    assert isinstance(build_attention("luong_dot", 4, rng), LuongAttention)
    assert isinstance(build_attention("luong_local", 4, rng), LocalAttention)
    with pytest.raises(ValueError):
        build_attention("multihead", 4, rng)

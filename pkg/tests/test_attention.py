"""Matching functions, attention normalization, and attentive context vectors."""

import math

import numpy as np
import pytest

from attconv import autodiff as ad
from attconv.attention import (
    MATCH_METHODS,
    MatchParams,
    apply_attention,
    attention_weights,
    attentive_context,
    match_scores,
)
from attconv.errors import ConfigError, DimensionError


def _hx_hy(rng, d=5, m=4, n=6):
    return ad.constant(rng.standard_normal((d, m))), ad.constant(rng.standard_normal((d, n)))


def _params(method, d, rng):
    return MatchParams.create(method, d, rng)


def test_dot_scores_on_orthonormal_basis():
    hx = ad.constant(np.array([[1.0], [0.0]]))
    hy = ad.constant(np.eye(2))
    scores = match_scores(hx, hy, MatchParams(method="dot"))
    assert scores.value.tolist() == [[1.0, 0.0]]


def test_dot_scores_match_numpy_oracle():
    rng = np.random.default_rng(0)
    Hx, Hy = _hx_hy(rng)
    scores = match_scores(Hx, Hy, MatchParams(method="dot"))
    assert np.allclose(scores.value, Hx.value.T @ Hy.value, atol=1e-15)


def test_bilinear_with_identity_equals_dot():
    rng = np.random.default_rng(1)
    Hx, Hy = _hx_hy(rng)
    bil = MatchParams(method="bilinear", W_e=ad.param(np.eye(5)))
    a = match_scores(Hx, Hy, bil).value
    b = match_scores(Hx, Hy, MatchParams(method="dot")).value
    assert np.array_equal(a, b)


def test_bilinear_scores_match_numpy_oracle():
    rng = np.random.default_rng(2)
    Hx, Hy = _hx_hy(rng)
    params = _params("bilinear", 5, rng)
    scores = match_scores(Hx, Hy, params)
    want = Hx.value.T @ params.W_e.value @ Hy.value
    assert np.allclose(scores.value, want, atol=1e-12)


def test_additive_scores_match_numpy_oracle():
    rng = np.random.default_rng(3)
    Hx, Hy = _hx_hy(rng, d=4, m=3, n=5)
    params = _params("additive", 4, rng)
    scores = match_scores(Hx, Hy, params).value
    We, Ue, ve = params.W_e.value, params.U_e.value, params.v_e.value
    for i in range(3):
        for j in range(5):
            want = ve @ np.tanh(We @ Hx.value[:, i] + Ue @ Hy.value[:, j])
            assert abs(scores[i, j] - want) < 1e-12


def test_additive_with_zero_vector_gives_uniform_attention():
    rng = np.random.default_rng(4)
    Hx, Hy = _hx_hy(rng, d=3, m=2, n=4)
    params = _params("additive", 3, rng)
    params.v_e.value[:] = 0.0
    attn = attention_weights(match_scores(Hx, Hy, params))
    assert np.array_equal(attn.weights.value, np.full((2, 4), 0.25))


def test_match_params_create_surface():
    rng = np.random.default_rng(5)
    assert _params("dot", 4, rng).tensors() == {}
    assert set(_params("bilinear", 4, rng).tensors()) == {"W_e"}
    assert set(_params("additive", 4, rng).tensors()) == {"W_e", "U_e", "v_e"}
    with pytest.raises(ConfigError):
        MatchParams.create("cosine", 4, rng)


def test_match_scores_input_validation():
    rng = np.random.default_rng(6)
    Hx = ad.constant(rng.standard_normal((4, 3)))
    Hy = ad.constant(rng.standard_normal((5, 3)))
    with pytest.raises(DimensionError, match="hidden sizes differ"):
        match_scores(Hx, Hy, MatchParams(method="dot"))
    with pytest.raises(DimensionError):
        match_scores(ad.constant(np.ones(4)), Hx, MatchParams(method="dot"))


@pytest.mark.parametrize("method", MATCH_METHODS)
def test_rows_are_stochastic_for_every_method(method):
    rng = np.random.default_rng(7)
    for trial in range(20):
        d, m, n = rng.integers(1, 7), rng.integers(1, 8), rng.integers(1, 8)
        Hx = ad.constant(rng.standard_normal((d, m)))
        Hy = ad.constant(rng.standard_normal((d, n)))
        params = _params(method, int(d), rng)
        attn = attention_weights(match_scores(Hx, Hy, params))
        sums = attn.weights.value.sum(axis=1)
        assert np.all(np.abs(sums - 1.0) <= 1e-12)
        assert np.all(attn.weights.value >= 0.0)


def test_masked_positions_get_exactly_zero_weight():
    rng = np.random.default_rng(8)
    Hx, Hy = _hx_hy(rng, d=3, m=4, n=5)
    mask = np.array([True, False, True, False, True])
    attn = attention_weights(match_scores(Hx, Hy, MatchParams(method="dot")), mask)
    assert np.all(attn.weights.value[:, ~mask] == 0.0)
    assert np.all(np.abs(attn.weights.value.sum(axis=1) - 1.0) <= 1e-12)
    assert np.array_equal(attn.mask, mask)


def test_two_column_context_oracle():
    # scores [1, 0] over basis columns blends them with softmax weights
    hx = ad.constant(np.array([[1.0], [0.0]]))
    hy = ad.constant(np.eye(2))
    c = attentive_context(match_scores(hx, hy, MatchParams(method="dot")), hy)
    w1 = math.exp(1.0) / (math.exp(1.0) + 1.0)
    assert abs(c.value[0, 0] - w1) < 1e-12
    assert abs(c.value[1, 0] - (1.0 - w1)) < 1e-12


def test_uniform_scores_give_column_means():
    rng = np.random.default_rng(9)
    Hy = ad.constant(rng.standard_normal((4, 6)))
    scores = ad.constant(np.zeros((3, 6)))
    c = attentive_context(scores, Hy)
    want = Hy.value.mean(axis=1)
    for i in range(3):
        assert np.allclose(c.value[:, i], want, atol=1e-15)


def test_single_context_column_passes_through():
    rng = np.random.default_rng(10)
    Hx = ad.constant(rng.standard_normal((4, 5)))
    Hy = ad.constant(rng.standard_normal((4, 1)))
    c = attentive_context(match_scores(Hx, Hy, MatchParams(method="dot")), Hy)
    for i in range(5):
        assert np.array_equal(c.value[:, i], Hy.value[:, 0])


def test_context_vectors_lie_in_convex_hull():
    rng = np.random.default_rng(11)
    for trial in range(60):
        d, m, n = rng.integers(1, 6), rng.integers(1, 6), rng.integers(1, 7)
        Hx = ad.constant(rng.standard_normal((d, m)))
        Hy = ad.constant(rng.standard_normal((d, n)))
        c = attentive_context(match_scores(Hx, Hy, MatchParams(method="dot")), Hy)
        lo = Hy.value.min(axis=1, keepdims=True) - 1e-12
        hi = Hy.value.max(axis=1, keepdims=True) + 1e-12
        assert np.all(c.value >= lo) and np.all(c.value <= hi)


def test_permuting_context_columns_leaves_context_vectors_unchanged():
    rng = np.random.default_rng(12)
    Hx = ad.constant(rng.standard_normal((4, 3)))
    Hy = ad.constant(rng.standard_normal((4, 6)))
    perm = rng.permutation(6)
    Hyp = ad.constant(Hy.value[:, perm])
    a = attentive_context(match_scores(Hx, Hy, MatchParams(method="dot")), Hy)
    b = attentive_context(match_scores(Hx, Hyp, MatchParams(method="dot")), Hyp)
    assert np.allclose(a.value, b.value, atol=1e-12)
    # and the weights themselves permute along for the ride
    wa = attention_weights(match_scores(Hx, Hy, MatchParams(method="dot"))).weights.value
    wb = attention_weights(match_scores(Hx, Hyp, MatchParams(method="dot"))).weights.value
    assert np.allclose(wa[:, perm], wb, atol=1e-12)


def test_apply_attention_checks_column_agreement():
    rng = np.random.default_rng(13)
    weights = ad.constant(np.full((2, 3), 1 / 3))
    Hy = ad.constant(rng.standard_normal((4, 5)))
    with pytest.raises(DimensionError):
        apply_attention(weights, Hy)

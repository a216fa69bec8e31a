import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptive_watermark.core import (SamplerParams, Vocabulary, decode_step, entropy_from_logits,
                                     filter_topk_topp, log_softmax, sample, shannon_entropy, softmax)
from adaptive_watermark.rng import Xoshiro256
from adaptive_watermark.validation import InvalidInputError

mpmath.mp.dps = 50

logit_vectors = st.lists(st.floats(-30, 30, allow_nan=False), min_size=2, max_size=40).map(np.array)


def _mp_softmax(logits):
    z = [mpmath.exp(mpmath.mpf(float(v))) for v in logits]
    s = mpmath.fsum(z)
    return [x / s for x in z]


def test_softmax_and_entropy_match_mpmath():
    g = np.random.default_rng(0)
    for _ in range(200):
        l = g.normal(0, 5, size=g.integers(2, 60))
        p = _mp_softmax(l)
        assert np.max(np.abs(softmax(l) - np.array([float(x) for x in p]))) <= 1e-9
        h = -mpmath.fsum(x * mpmath.log(x) for x in p)
        assert abs(entropy_from_logits(l) - float(h)) <= 1e-9
        assert abs(shannon_entropy(softmax(l)) - float(h)) <= 1e-9


def test_log_softmax_large_logits():
    l = np.array([1000.0, 999.0, -1000.0])
    out = log_softmax(l)
    assert np.isfinite(out).all()
    assert abs(np.exp(out).sum() - 1) < 1e-12


@given(logit_vectors)
@settings(max_examples=100, deadline=None)
def test_entropy_bounds(l):
    h = entropy_from_logits(l)
    assert -1e-12 <= h <= np.log(l.size) + 1e-9


def _brute_filter(p, k, top_p):
    order = sorted(range(p.size), key=lambda i: (-p[i], i))[:k]
    kept = p[order]
    kept = kept / kept.sum()
    n = 1
    while n < len(order) and kept[:n].sum() < top_p - 1e-12:
        n += 1
    out = np.zeros_like(p)
    out[order[:n]] = kept[:n] / kept[:n].sum()
    return out


@given(logit_vectors, st.integers(1, 50), st.floats(0.05, 1.0))
@settings(max_examples=200, deadline=None)
def test_filter_matches_brute_force(l, k, top_p):
    p = softmax(l)
    got = filter_topk_topp(p, SamplerParams(k, top_p))
    np.testing.assert_allclose(got, _brute_filter(p, k, top_p), atol=1e-12)
    assert abs(got.sum() - 1) < 1e-12
    assert (got > 0).sum() <= k


def test_filter_ties_keep_lower_ids():
    p = np.full(4, 0.25)
    out = filter_topk_topp(p, SamplerParams(2, 1.0))
    assert list(out) == [0.5, 0.5, 0.0, 0.0]


def test_sample_only_support_and_frequencies():
    p = np.array([0.0, 0.2, 0.0, 0.8])
    g = Xoshiro256(1)
    draws = np.array([sample(p, g) for _ in range(5000)])
    assert set(draws) <= {1, 3}
    assert abs((draws == 3).mean() - 0.8) < 0.03


def test_decode_step_matches_checked_path():
    g = np.random.default_rng(3)
    for i in range(50):
        l = g.normal(size=30)
        sp = SamplerParams(10, 0.8)
        a = decode_step(l, sp, Xoshiro256(i))
        b = sample(filter_topk_topp(softmax(l), sp), Xoshiro256(i))
        assert a == b


def test_invalid_inputs():
    with pytest.raises(InvalidInputError):
        softmax([np.nan, 1.0])
    with pytest.raises(InvalidInputError):
        softmax([])
    with pytest.raises(InvalidInputError):
        SamplerParams(0, 0.5)
    with pytest.raises(InvalidInputError):
        SamplerParams(5, 0.0)
    with pytest.raises(InvalidInputError):
        shannon_entropy([0.5, 0.6])


def test_vocabulary_roundtrip(tmp_path):
    v = Vocabulary.from_texts(["b a a", "c a b"])
    assert v.tokens == ("a", "b", "c", "<unk>")
    assert list(v.encode("a c zz")) == [0, 2, 3]
    assert v.decode([0, 1]) == "a b"
    v.save(tmp_path / "v.txt")
    w = Vocabulary.load(tmp_path / "v.txt", mode="word")
    assert w == v and w.vocab_hash == v.vocab_hash
    with pytest.raises(InvalidInputError):
        Vocabulary(["a", "a"])


@given(logit_vectors, st.floats(-100, 100))
@settings(max_examples=100, deadline=None)
def test_softmax_shift_invariant(l, c):
    a, b = softmax(l), softmax(l + c)
    np.testing.assert_allclose(b, a, rtol=1e-12, atol=0)


def test_entropy_uniform_and_mass_moves():
    for n in (2, 7, 610):
        assert abs(shannon_entropy(np.full(n, 1 / n)) - np.log(n)) < 1e-9
    g = np.random.default_rng(5)
    for _ in range(500):
        p = g.dirichlet(np.ones(3))
        lo, hi = np.argmin(p), np.argmax(p)
        if p[hi] - p[lo] < 1e-6:
            continue
        q = p.copy()
        eps = min(p[lo], 1e-3) * g.random()
        q[lo] -= eps
        q[hi] += eps
        if eps > 0:
            assert shannon_entropy(q) < shannon_entropy(p)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=30), st.integers(1, 30), st.floats(0.05, 1.0))
@settings(max_examples=100, deadline=None)
def test_filter_support_subset(w, k, top_p):
    w = np.array(w)
    if w.sum() <= 0:
        return
    p = w / w.sum()
    out = filter_topk_topp(p, SamplerParams(k, top_p))
    assert abs(out.sum() - 1) < 1e-9 and (out >= 0).all()
    assert set(np.flatnonzero(out)) <= set(np.flatnonzero(p))


def test_resampling_bit_identical():
    p = softmax(np.random.default_rng(2).normal(size=50))
    g1, g2 = Xoshiro256(99), Xoshiro256(99)
    assert [sample(p, g1) for _ in range(200)] == [sample(p, g2) for _ in range(200)]

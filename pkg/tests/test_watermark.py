import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptive_watermark.core import SamplerParams
from adaptive_watermark.watermark import (AdaptiveWatermarkDetector, AdaptiveWatermarkGenerator, KGWDetector,
                                          KGWParams, WatermarkParams, awts_perturb, detect,
                                          exact_log_likelihood_ratio, generate, generate_plain,
                                          green_token_stats, kgw_detect, kgw_generate, kgw_green_list,
                                          likelihood_ratio_term)
from adaptive_watermark.validation import InvalidInputError

mpmath.mp.dps = 40


def test_awts_example():
    out = awts_perturb([2.0, 1.0, -1.0], [1, 0, 1], 1.5)
    assert list(out) == [5.0, 1.0, -2.5]
    with pytest.raises(InvalidInputError):
        awts_perturb([1.0], [1, 0], 1.0)


def test_likelihood_ratio_term_trivial():
    assert likelihood_ratio_term(3.0, 1.5, 0) == 0
    assert likelihood_ratio_term(3.0, 0.0, 1) == 0


def test_likelihood_ratio_residual():
    g = np.random.default_rng(0)
    for _ in range(1000):
        l = g.normal(0, 3, 5)
        green = g.integers(0, 2, 5)
        delta = float(g.uniform(0, 3))
        k = int(g.integers(5))
        resid = exact_log_likelihood_ratio(l, green, delta, k) - likelihood_ratio_term(l[k], delta, green[k])
        lm = [mpmath.mpf(float(x)) for x in l]
        want = mpmath.log(mpmath.fsum(mpmath.exp(x) for x in lm)) - mpmath.log(
            mpmath.fsum(mpmath.exp(x * (1 + delta * int(v))) for x, v in zip(lm, green)))
        assert abs(resid - float(want)) <= 1e-9 * max(1.0, abs(float(want)))


def test_params_validation():
    with pytest.raises(InvalidInputError):
        WatermarkParams(delta=-1)
    with pytest.raises(InvalidInputError):
        WatermarkParams(measure_threshold=5)
    wp = WatermarkParams(measure_threshold=0)
    assert "opening" not in wp.echo()


def _wp(small, **kw):
    base = dict(alpha=3.5, delta=1.5, measure_threshold=50, opening=small.opening())
    base.update(kw)
    return WatermarkParams(**base)


def test_delta_zero_matches_plain_generation(small):
    wp = _wp(small, delta=0.0)
    for i, prompt in enumerate(small.prompts(10)):
        tr = generate(small.lm, small.mm, small.mapper, prompt, wp, i, 80)
        assert np.array_equal(tr.tokens, generate_plain(small.lm, prompt, 80, i, wp.sampler))


def test_gate_replay_and_trace(small):
    wp = _wp(small)
    det = AdaptiveWatermarkDetector.from_params(small.mm, small.mapper, wp)
    for i, prompt in enumerate(small.prompts(10)):
        tr = generate(small.lm, small.mm, small.mapper, prompt, wp, i, 120)
        rep = det.detect(tr.tokens)
        assert np.array_equal(rep.positions, tr.watermarked_positions)
        assert tr.watermarked[:50].all()
        assert np.isnan(tr.entropy[:50]).all() and not np.isnan(tr.entropy[50:]).any()
        assert np.array_equal(rep.contributions > 0, tr.green[tr.watermarked] == 1)
        d = tr.to_dict()
        assert d["records"][0]["t"] == 1 and len(d["records"]) == 120


def test_alpha_zero_marks_everything_and_huge_alpha_nothing(small):
    prompt = small.prompts(1)[0]
    tr = generate(small.lm, small.mm, small.mapper, prompt, _wp(small, alpha=0.0, measure_threshold=0), 0, 60)
    assert tr.watermarked.all()
    huge = np.log(small.vocab.size) + 1
    tr = generate(small.lm, small.mm, small.mapper, prompt, _wp(small, alpha=huge, measure_threshold=0), 0, 60)
    assert not tr.watermarked.any()
    rep = detect(tr.tokens, small.mm, small.mapper, _wp(small, alpha=huge, measure_threshold=0))
    assert rep.status == "inconclusive" and np.isnan(rep.score)


def test_detection_separates_and_predict(desk):
    wp = _wp(desk)
    det = AdaptiveWatermarkDetector.from_params(desk.mm, desk.mapper, wp)
    wm = [generate(desk.lm, desk.mm, desk.mapper, p, wp, i, 150).tokens for i, p in enumerate(desk.prompts(20))]
    hu = [generate_plain(desk.lm, p, 150, 100 + i) for i, p in enumerate(desk.prompts(20))]
    s_wm, s_hu = det.decision_function(wm), det.decision_function(hu)
    assert s_wm.mean() > s_hu.mean() + 0.2
    det.fit(wm + hu, [True] * 20 + [False] * 20)
    assert det.best_f1_ > 0.8
    assert det.predict(wm).mean() > 0.8
    stats = green_token_stats(wm[0], desk.mm, desk.mapper, wp)
    assert 0 <= stats["over_all"] <= stats["among_w"] <= 1


def test_short_text_flag(small):
    rep = detect(small.prompts(1)[0][:5], small.mm, small.mapper, _wp(small))
    assert rep.short_text and rep.status == "ok"
    assert '"status": "ok"' in rep.to_json()


def test_fixed_mask_generator(small):
    mask = np.zeros(small.vocab.size, dtype=np.int8)
    gen = AdaptiveWatermarkGenerator(small.lm, small.mm, small.mapper, _wp(small), fixed_mask=mask)
    tr = gen.generate(small.prompts(1)[0], 0, 60)
    assert (tr.green[tr.watermarked] == 0).all()


def test_kgw_green_list():
    kp = KGWParams(0.5)
    m = kgw_green_list(kp, 1000)
    assert m.sum() == 500
    assert np.array_equal(m, kgw_green_list(kp, 1000))
    k1 = KGWParams(0.5, scheme="kgw1")
    assert not np.array_equal(kgw_green_list(k1, 1000, 3), kgw_green_list(k1, 1000, 4))
    with pytest.raises(InvalidInputError):
        kgw_green_list(k1, 1000)
    with pytest.raises(InvalidInputError):
        KGWParams(1.0)


def test_kgw_detect_all_green_and_inconclusive():
    kp = KGWParams(0.5)
    green = np.flatnonzero(kgw_green_list(kp, 100))
    assert kgw_detect(green[:20], kp, 100) == 1.0
    assert kgw_detect([], kp, 100) is None
    assert kgw_detect([3], KGWParams(scheme="kgw1"), 100) is None
    det = KGWDetector(100)
    assert det.predict([green[:20]])[0]


def test_kgw_zero_bias_is_plain(small):
    kp = KGWParams(delta_add=0.0)
    p = small.prompts(1)[0]
    assert np.array_equal(kgw_generate(small.lm, p, kp, 3, 50), generate_plain(small.lm, p, 50, 3))


def test_kgw_strong_bias_is_detected(small):
    for scheme in ("kgw0", "kgw1"):
        kp = KGWParams(delta_add=4.0, scheme=scheme)
        toks = kgw_generate(small.lm, small.prompts(1)[0], kp, 1, 200, SamplerParams())
        assert kgw_detect(toks, kp, small.vocab.size) > 0.8


positive_logits = st.lists(st.floats(0.01, 20), min_size=2, max_size=20).map(np.array)


@given(positive_logits, st.floats(0.01, 5))
@settings(max_examples=100, deadline=None)
def test_awts_order_properties(l, delta):
    top = int(np.argmax(l))
    green = np.zeros(l.size, dtype=int)
    green[top] = 1
    assert int(np.argmax(awts_perturb(l, green, delta))) == top
    green = np.random.default_rng(int(l.size)).integers(0, 2, l.size)
    out = awts_perturb(l, green, delta)
    for v in (0, 1):
        idx = np.flatnonzero(green == v)
        assert np.array_equal(np.argsort(l[idx], kind="stable"), np.argsort(out[idx], kind="stable"))


def test_score_separation_and_green_fractions(desk):
    wp = _wp(desk)
    det = AdaptiveWatermarkDetector.from_params(desk.mm, desk.mapper, wp)
    traces = [generate(desk.lm, desk.mm, desk.mapper, p, wp, i, 200) for i, p in enumerate(desk.prompts(100))]
    hu = [generate_plain(desk.lm, p, 200, 1000 + i) for i, p in enumerate(desk.prompts(100))]
    s_wm = det.decision_function([t.tokens for t in traces])
    s_hu = det.decision_function(hu)
    assert s_wm.mean() >= s_hu.mean() + 0.25 * wp.delta
    among, overall, rates = [], [], []
    for t in traces:
        st_ = green_token_stats(t.tokens, desk.mm, desk.mapper, wp)
        among.append(st_["among_w"])
        overall.append(st_["over_all"])
        rates.append(st_["awr"])
        # the all-token fraction is the flagged-green fraction scaled by the flagged share
        assert abs(st_["over_all"] - st_["among_w"] * st_["awr"]) < 1e-12
    assert np.mean(among) > 0.6
    print(f"green among W {np.mean(among):.3f}, over all tokens {np.mean(overall):.3f}, AWR {np.mean(rates):.3f}")

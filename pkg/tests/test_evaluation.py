import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptive_watermark.evaluation import (ExperimentSpec, ModelBundle, ScoredSample, awr, best_f1,
                                           candidate_thresholds, repetition_rate, roc_auc, roc_curve,
                                           run_experiment, tpr_at_fpr)
from adaptive_watermark.lm import Corpus, train_ngram
from adaptive_watermark.redteam import ParaphraseParams
from adaptive_watermark.validation import InvalidInputError
from adaptive_watermark.watermark import WatermarkParams, generate


def S(pos, neg):
    return [ScoredSample(float(s), True) for s in pos] + [ScoredSample(float(s), False) for s in neg]


def _brute_auc(pos, neg):
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_roc_auc_examples():
    assert roc_auc(S([0.9, 0.8], [0.1, 0.2])) == 1.0
    assert roc_auc(S([0.5], [0.5])) == 0.5
    assert roc_auc(S([0.8, 0.4], [0.6, 0.2])) == 0.75
    with pytest.raises(InvalidInputError):
        roc_auc(S([0.5, 0.6], []))
    with pytest.raises(InvalidInputError):
        ScoredSample(float("nan"), True)


scores = st.lists(st.integers(0, 20).map(lambda x: x / 10), min_size=1, max_size=15)


@given(scores, scores)
@settings(max_examples=150, deadline=None)
def test_auc_matches_pairs_and_monotone_invariance(pos, neg):
    auc = roc_auc(S(pos, neg))
    assert abs(auc - _brute_auc(pos, neg)) < 1e-12
    f = lambda x: np.exp(3 * x) - 7  # noqa: E731
    assert abs(roc_auc(S([f(p) for p in pos], [f(n) for n in neg])) - auc) < 1e-12
    # trapezoid under the empirical curve equals the Mann-Whitney form
    fpr, tpr, _ = roc_curve(S(pos, neg))
    assert abs(np.trapezoid(tpr, fpr) - auc) < 1e-12
    f1, _ = best_f1(S(pos, neg))
    P, N = len(pos), len(neg)
    assert f1 >= 2 * P / (2 * P + N) - 1e-12


def test_best_f1_examples():
    assert best_f1(S([0.9, 0.8], [0.1, 0.2]))[0] == 1.0
    f1, thr = best_f1(S([0.3] * 3, [0.3] * 5))
    assert abs(f1 - 2 * 3 / (2 * 3 + 5)) < 1e-12 and thr == -np.inf
    assert list(candidate_thresholds([0.1, 0.3])) == [np.inf, 0.2, -np.inf]


def test_tpr_at_fpr_example():
    s = S([0.9, 0.7, 0.3], [0.5, 0.4, 0.1])
    assert abs(tpr_at_fpr(s, 1 / 3) - 2 / 3) < 1e-12
    assert tpr_at_fpr(s, 0.0) == 2 / 3
    assert tpr_at_fpr(s, 1.0) == 1.0
    with pytest.raises(InvalidInputError):
        tpr_at_fpr(s, 1.5)


def test_repetition_rate_examples():
    assert abs(repetition_rate([0, 0, 0], 1) - 2 / 3) < 1e-12
    assert abs(repetition_rate([0, 1, 0, 1], 2) - 1 / 3) < 1e-12
    with pytest.raises(InvalidInputError):
        repetition_rate([1], 2)


def test_awr_zero_above_max_entropy(small):
    wp = WatermarkParams(alpha=np.log(small.vocab.size) + 0.1, measure_threshold=0)
    traces = [generate(small.lm, small.mm, small.mapper, p, wp, i, 40) for i, p in enumerate(small.prompts(5))]
    assert awr(traces) == 0.0
    wp = WatermarkParams(alpha=0.0, measure_threshold=0)
    traces = [generate(small.lm, small.mm, small.mapper, p, wp, i, 40) for i, p in enumerate(small.prompts(5))]
    assert awr(traces) == 1.0
    with pytest.raises(InvalidInputError):
        awr([])


def _bundle(m):
    return ModelBundle(m.lm, m.mm, m.mapper, m.evaluator, m.prompts(50), m.embedder.nearest_neighbors())


def _spec(m, **kw):
    base = dict(n_per_class=10, length=60, length_jitter=10, seeds=(0, 1),
                watermark=WatermarkParams(alpha=3.5, delta=1.5, measure_threshold=20, opening=m.opening()))
    base.update(kw)
    return ExperimentSpec(**base)


def test_delta_zero_gives_chance_auc(small):
    spec = _spec(small, watermark=WatermarkParams(alpha=3.5, delta=0.0, measure_threshold=20,
                                                  opening=small.opening()))
    rep = run_experiment(spec, _bundle(small))
    assert abs(rep.roc_auc - 0.5) <= 0.05


def test_one_per_class_is_an_error(small):
    with pytest.raises(InvalidInputError):
        run_experiment(_spec(small, n_per_class=1), _bundle(small))


def test_experiment_deterministic_and_serializable(small, tmp_path):
    spec = _spec(small, attack=ParaphraseParams.from_edit_rate(0.2))
    a = run_experiment(spec, _bundle(small))
    b = run_experiment(spec, _bundle(small))
    assert a.to_json() == b.to_json()
    d = json.loads(a.to_json())
    assert set(d["perplexity"]) == {"watermarked", "human"}
    assert len(d["per_seed"]) == 2 and "timing" not in d
    a.write(tmp_path / "r.json", tmp_path / "s.csv", tmp_path / "roc.csv", tmp_path / "t.json")
    assert (tmp_path / "r.json").read_text() == a.to_json()
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "score,label,provenance" and len(rows) == 1 + len(a.samples)
    assert "generation_median_s" in json.loads((tmp_path / "t.json").read_text())


def test_kgw_experiment(small):
    rep = run_experiment(_spec(small, scheme="kgw1", watermark=None), _bundle(small))
    assert rep.awr is None and rep.roc_auc > 0.8


def test_mismatched_models_rejected(small):
    other = Corpus.from_texts(["x y z w", "y z"])
    bad = ModelBundle(small.lm, train_ngram(other, 2), small.mapper, small.evaluator, small.prompts(5))
    with pytest.raises(InvalidInputError):
        run_experiment(_spec(small), bad)
    with pytest.raises(InvalidInputError):
        ExperimentSpec(watermark=None)
    with pytest.raises(InvalidInputError):
        ExperimentSpec(scheme="kgw2")

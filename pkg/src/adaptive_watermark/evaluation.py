"""Detection metrics and the seeded experiment runner.

Positives are watermarked texts.  Every threshold metric treats a text as
flagged when its score is ``>=`` the threshold.
"""

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .core import SamplerParams
from .redteam import ParaphraseParams, paraphrase_attack
from .rng import derive_seed
from .validation import InvalidInputError, check_same_vocab, check_token_ids
from .watermark import (
    AdaptiveWatermarkDetector,
    AdaptiveWatermarkGenerator,
    KGWParams,
    WatermarkParams,
    generate_plain,
    kgw_detect,
    kgw_generate,
)

log = logging.getLogger(__name__)

SCHEMES = ("adaptive", "kgw0", "kgw1")
DEFAULT_METRICS = ("roc_auc", "best_f1", "tpr", "awr", "perplexity", "repetition", "green")


@dataclass(frozen=True)
class ScoredSample:
    score: float
    label: bool  # True: watermarked
    provenance: str = ""

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise InvalidInputError("scores must be finite")


def _split(samples):
    samples = list(samples)
    pos = np.array([s.score for s in samples if s.label], dtype=np.float64)
    neg = np.array([s.score for s in samples if not s.label], dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise InvalidInputError("metrics need both watermarked and human samples")
    return pos, neg


def roc_auc(samples):
    """P(random positive outscores random negative), ties counting one half."""
    pos, neg = _split(samples)
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def candidate_thresholds(scores):
    """Midpoints of the sorted unique scores plus both infinities, descending."""
    u = np.unique(np.asarray(scores, dtype=np.float64))
    mids = (u[:-1] + u[1:]) / 2.0
    return np.concatenate([[np.inf], mids[::-1], [-np.inf]])


def _rates(pos, neg, thr):
    tp = int((pos >= thr).sum())
    fp = int((neg >= thr).sum())
    return tp, fp


def roc_curve(samples):
    """``(fpr, tpr, thresholds)`` over the candidate thresholds."""
    pos, neg = _split(samples)
    thr = candidate_thresholds(np.concatenate([pos, neg]))
    fpr = np.empty(thr.size)
    tpr = np.empty(thr.size)
    for i, t in enumerate(thr):
        tp, fp = _rates(pos, neg, t)
        tpr[i] = tp / pos.size
        fpr[i] = fp / neg.size
    return fpr, tpr, thr


def best_f1(samples):
    """``(F1, threshold)`` maximizing F1 over the candidate thresholds.

    Ties go to the larger threshold.
    """
    pos, neg = _split(samples)
    best, best_thr = -1.0, np.inf
    for t in candidate_thresholds(np.concatenate([pos, neg])):
        tp, fp = _rates(pos, neg, t)
        f1 = 2.0 * tp / (2.0 * tp + fp + (pos.size - tp)) if tp else 0.0
        if f1 > best:
            best, best_thr = f1, float(t)
    return float(best), best_thr


def tpr_at_fpr(samples, fpr_target):
    """Highest TPR over thresholds whose empirical FPR is at most ``fpr_target``."""
    if not 0.0 <= fpr_target <= 1.0:
        raise InvalidInputError("fpr_target must lie in [0, 1]")
    fpr, tpr, _ = roc_curve(samples)
    ok = fpr <= fpr_target + 1e-12
    return float(tpr[ok].max())


def awr(traces):
    """Pooled fraction of generated tokens that were watermarked."""
    traces = list(traces)
    if not traces:
        raise InvalidInputError("awr needs at least one trace")
    total = sum(len(t) for t in traces)
    if total == 0:
        raise InvalidInputError("awr of empty traces is undefined")
    return float(sum(int(t.watermarked.sum()) for t in traces) / total)


def repetition_rate(text, n=1):
    """``1 - distinct n-grams / total n-grams``."""
    ids = [int(t) for t in text]
    n = int(n)
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    if len(ids) < n:
        raise InvalidInputError(f"text of length {len(ids)} has no {n}-grams")
    grams = [tuple(ids[i:i + n]) for i in range(len(ids) - n + 1)]
    return 1.0 - len(set(grams)) / len(grams)


# experiment runner ------------------------------------------------------
@dataclass(frozen=True)
class ExperimentSpec:
    n_per_class: int = 100
    length: int = 200
    length_jitter: int = 30
    seeds: tuple = (0,)
    scheme: str = "adaptive"
    watermark: WatermarkParams = None
    kgw: KGWParams = field(default_factory=KGWParams)
    attack: ParaphraseParams = None
    metrics: tuple = DEFAULT_METRICS
    repetition_orders: tuple = (1, 2, 3, 4)

    def __post_init__(self):
        if int(self.n_per_class) < 1:
            raise InvalidInputError("n_per_class must be >= 1")
        if int(self.length) < 1:
            raise InvalidInputError("length must be >= 1")
        if not 0 <= int(self.length_jitter) < int(self.length):
            raise InvalidInputError("length_jitter must lie in [0, length)")
        if not self.seeds:
            raise InvalidInputError("at least one seed is required")
        if self.scheme not in SCHEMES:
            raise InvalidInputError(f"scheme must be one of {SCHEMES}")
        if self.scheme == "adaptive" and self.watermark is None:
            raise InvalidInputError("the adaptive scheme needs WatermarkParams")
        if self.scheme != "adaptive" and self.kgw.scheme != self.scheme:
            object.__setattr__(self, "kgw", KGWParams(self.kgw.gamma, self.kgw.delta_add, self.scheme, self.kgw.key))

    @property
    def sampler(self):
        return self.watermark.sampler if self.watermark is not None else SamplerParams()


@dataclass
class ModelBundle:
    """Everything an experiment reads.  ``neighbors`` drives paraphrase
    substitutions; ``prompts`` are cycled through in order."""

    lm: object
    mm: object
    mapper: object
    evaluator: object
    prompts: list
    neighbors: np.ndarray = None

    def check(self):
        check_same_vocab(*(m for m in (self.lm, self.mm, self.evaluator) if m is not None))
        V = self.lm.vocab_size_
        if self.mapper is not None and self.mapper.vocab_size_ != V:
            raise InvalidInputError(f"mapper output size {self.mapper.vocab_size_} != vocabulary size {V}")
        if not self.prompts:
            raise InvalidInputError("at least one prompt is required")
        for p in self.prompts:
            check_token_ids(p, V, name="prompt")


@dataclass
class MetricsReport:
    roc_auc: float
    best_f1: float
    threshold: float
    tpr_at_1fpr: float
    tpr_at_10fpr: float
    awr: float = None
    perplexity: dict = None
    repetition: dict = None
    green: dict = None
    decryption_rate: float = None
    n_inconclusive: int = 0
    per_seed: list = field(default_factory=list)
    samples: list = field(default_factory=list, repr=False)
    timing: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        """Deterministic content; wall-clock timing is left out."""
        out = {k: _round(getattr(self, k)) for k in (
            "roc_auc", "best_f1", "threshold", "tpr_at_1fpr", "tpr_at_10fpr", "awr", "perplexity",
            "repetition", "green", "decryption_rate", "n_inconclusive", "per_seed")}
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def write(self, report_path, samples_csv=None, roc_csv=None, timing_path=None):
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
        if samples_csv:
            write_samples_csv(samples_csv, self.samples)
        if roc_csv:
            write_roc_csv(roc_csv, self.samples)
        if timing_path:
            with open(timing_path, "w", encoding="utf-8") as fh:
                json.dump(self.timing, fh, sort_keys=True, indent=2)


def _round(x):
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return None if math.isnan(x) else round(x, 6)
    if isinstance(x, dict):
        return {str(k): _round(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v) for v in x]
    if isinstance(x, np.generic):
        return _round(x.item())
    return x


def write_samples_csv(path, samples):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["score", "label", "provenance"])
        for s in samples:
            w.writerow([f"{s.score:.6f}", "watermarked" if s.label else "human", s.provenance])


def write_roc_csv(path, samples):
    fpr, tpr, thr = roc_curve(samples)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr", "threshold"])
        for a, b, t in zip(fpr, tpr, thr):
            w.writerow([f"{a:.6f}", f"{b:.6f}", t if math.isinf(t) else f"{t:.6f}"])


def _summary(values):
    v = np.asarray(values, dtype=np.float64)
    return {"mean": float(v.mean()), "median": float(np.median(v))}


def _run_seed(spec, models, seed):
    wp = spec.watermark
    V = models.lm.vocab_size_
    if spec.scheme == "adaptive":
        gen = AdaptiveWatermarkGenerator(models.lm, models.mm, models.mapper, wp)
        det = AdaptiveWatermarkDetector.from_params(models.mm, models.mapper, wp)
        score = lambda toks: det.detect(toks)
    else:
        score = lambda toks: kgw_detect(toks, spec.kgw, V)
    if spec.attack is not None and models.neighbors is None:
        raise InvalidInputError("a paraphrase attack needs token neighbours")

    n = int(spec.n_per_class)
    texts = {True: [], False: []}
    prompts = []
    traces = []
    t_gen = []
    for i in range(n):
        prompt = np.asarray(models.prompts[i % len(models.prompts)], dtype=np.int64)
        jit = int(spec.length_jitter)
        g = np.random.Generator(np.random.PCG64(derive_seed(seed, f"len:{i}")))
        length = int(spec.length) + (int(g.integers(-jit, jit + 1)) if jit else 0)
        t0 = time.perf_counter()
        if spec.scheme == "adaptive":
            tr = gen.generate(prompt, derive_seed(seed, f"gen:{i}"), length)
            traces.append(tr)
            wm = tr.tokens
        else:
            wm = kgw_generate(models.lm, prompt, spec.kgw, derive_seed(seed, f"gen:{i}"), length, spec.sampler)
        t_gen.append(time.perf_counter() - t0)
        human = generate_plain(models.lm, prompt, length, derive_seed(seed, f"human:{i}"), spec.sampler)
        if spec.attack is not None:
            pp = ParaphraseParams(spec.attack.substitution, spec.attack.deletion, spec.attack.insertion,
                                  spec.attack.shuffle_window, derive_seed(seed, f"attack:{i}:{spec.attack.seed}"))
            wm = paraphrase_attack(wm, pp, models.neighbors, models.mm, spec.sampler)
        texts[True].append(wm)
        texts[False].append(human)
        prompts.append(prompt)

    samples = []
    inconclusive = 0
    green_w = []
    green_all = []
    t_det = []
    for label in (True, False):
        for i, toks in enumerate(texts[label]):
            t0 = time.perf_counter()
            rep = score(toks)
            t_det.append(time.perf_counter() - t0)
            if spec.scheme == "adaptive":
                s = rep.score if rep.status == "ok" else float("nan")
                if label and rep.status == "ok":
                    n_green = int((rep.contributions > 0).sum())
                    green_w.append(n_green / rep.n_watermarked if wp.delta > 0 else float("nan"))
                    green_all.append(n_green / len(toks))
            else:
                s = float("nan") if rep is None else rep
            if not math.isfinite(s):
                inconclusive += 1
                continue
            kind = "watermarked" if label else "human"
            samples.append(ScoredSample(float(s), label, f"seed={seed};{kind}:{i};scheme={spec.scheme}"))

    out = {"seed": int(seed)}
    metrics = set(spec.metrics)
    if "roc_auc" in metrics:
        out["roc_auc"] = roc_auc(samples)
    f1, thr = best_f1(samples)
    if "best_f1" in metrics:
        out["best_f1"], out["threshold"] = f1, thr
    if "tpr" in metrics:
        out["tpr_at_1fpr"] = tpr_at_fpr(samples, 0.01)
        out["tpr_at_10fpr"] = tpr_at_fpr(samples, 0.10)
    if "awr" in metrics and traces:
        out["awr"] = awr(traces)
    if "perplexity" in metrics and models.evaluator is not None:
        out["perplexity"] = {
            "watermarked": _summary([models.evaluator.perplexity(t, p) for t, p in zip(texts[True], prompts)]),
            "human": _summary([models.evaluator.perplexity(t, p) for t, p in zip(texts[False], prompts)]),
        }
    if "repetition" in metrics:
        out["repetition"] = {
            kind: {str(k): float(np.mean([repetition_rate(t, k) for t in texts[label] if len(t) >= k]))
                   for k in spec.repetition_orders}
            for kind, label in (("watermarked", True), ("human", False))
        }
    if "green" in metrics and green_w:
        out["green"] = {"among_watermarked": float(np.mean(green_w)), "over_all_tokens": float(np.mean(green_all))}
    out["n_inconclusive"] = inconclusive
    timing = {"generation_median_s": float(np.median(t_gen)), "detection_median_s": float(np.median(t_det))}
    return out, samples, timing


def _median_of(per_seed, key, sub=None):
    vals = []
    for r in per_seed:
        v = r.get(key)
        if v is None:
            return None
        for s in (sub or ()):
            v = v[s]
        vals.append(v)
    return float(np.median(vals))


def run_experiment(spec, models):
    """Generate both classes for every seed, score them and summarize.

    Headline numbers are medians over seeds; ``per_seed`` keeps the rest.
    """
    models.check()
    if int(spec.n_per_class) < 2:
        raise InvalidInputError("metrics need at least 2 samples per class")
    per_seed, samples, timings = [], [], []
    for seed in spec.seeds:
        r, s, t = _run_seed(spec, models, int(seed))
        per_seed.append(r)
        samples += s
        timings.append(t)

    def nested(key, inner):
        if per_seed[0].get(key) is None:
            return None
        return {a: {b: _median_of(per_seed, key, (a, b)) for b in per_seed[0][key][a]}
                for a in per_seed[0][key]} if inner else \
            {a: _median_of(per_seed, key, (a,)) for a in per_seed[0][key]}

    return MetricsReport(
        roc_auc=_median_of(per_seed, "roc_auc"),
        best_f1=_median_of(per_seed, "best_f1"),
        threshold=_median_of(per_seed, "threshold"),
        tpr_at_1fpr=_median_of(per_seed, "tpr_at_1fpr"),
        tpr_at_10fpr=_median_of(per_seed, "tpr_at_10fpr"),
        awr=_median_of(per_seed, "awr"),
        perplexity=nested("perplexity", True),
        repetition=nested("repetition", True),
        green=nested("green", False),
        n_inconclusive=int(sum(r["n_inconclusive"] for r in per_seed)),
        per_seed=per_seed,
        samples=samples,
        timing={"per_seed": timings,
                "generation_median_s": float(np.median([t["generation_median_s"] for t in timings])),
                "detection_median_s": float(np.median([t["detection_median_s"] for t in timings]))},
    )


__all__ = [
    "DEFAULT_METRICS", "ExperimentSpec", "MetricsReport", "ModelBundle", "ScoredSample", "awr",
    "best_f1", "candidate_thresholds", "repetition_rate", "roc_auc", "roc_curve", "run_experiment",
    "tpr_at_fpr", "write_roc_csv", "write_samples_csv",
]

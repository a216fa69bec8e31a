"""Entropy-gated, semantics-keyed watermarking and its detector.

Generation perturbs the next-token logits multiplicatively,
``l * (1 + delta * green)``, but only where the measurement model finds the
next-token distribution uncertain (entropy >= alpha) or within the first
``measure_threshold`` tokens.  The green mask comes from the semantic
mapper applied to the text generated so far (or to a secret opening
sentence for the first tokens).  Detection replays the same gate with the
measurement model alone, so neither the generating model nor the prompt is
needed.

The KGW-0 / KGW-1 baselines add a constant to a fixed or previous-token
keyed green list.
"""

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .core import SamplerParams, decode_step, log_softmax
from .rng import Xoshiro256, as_rng, mix64
from .semantics import binarize
from .validation import InvalidInputError, check_same_vocab, check_token_ids


@dataclass(frozen=True)
class WatermarkParams:
    """Shared secret plus sampling configuration."""

    alpha: float = 2.0
    delta: float = 1.5
    measure_threshold: int = 50
    opening: tuple = ()
    sampler: SamplerParams = field(default_factory=SamplerParams)
    max_tokens: int = 200

    def __post_init__(self):
        object.__setattr__(self, "opening", tuple(int(t) for t in self.opening))
        if not self.delta >= 0:
            raise InvalidInputError("delta must be >= 0")
        if int(self.measure_threshold) < 0:
            raise InvalidInputError("measure_threshold must be >= 0")
        if int(self.measure_threshold) > 0 and not self.opening:
            raise InvalidInputError("an opening sentence is required when measure_threshold > 0")

    def echo(self):
        """Public, non-secret view (the opening sentence is omitted)."""
        return {"alpha": self.alpha, "delta": self.delta, "measure_threshold": self.measure_threshold,
                "top_k": self.sampler.top_k, "top_p": self.sampler.top_p}


@dataclass
class GenerationTrace:
    tokens: np.ndarray
    watermarked: np.ndarray  # bool per token
    entropy: np.ndarray  # nan where the gate was not consulted
    green: np.ndarray  # int8: 1 green, 0 red, -1 token was not watermarked
    prompt: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return int(self.tokens.size)

    @property
    def watermarked_positions(self):
        return np.flatnonzero(self.watermarked)

    def to_dict(self):
        return {
            "prompt": [int(t) for t in self.prompt],
            "tokens": [int(t) for t in self.tokens],
            "records": [
                {"t": i + 1, "token": int(tok), "watermarked": bool(w),
                 "entropy": None if math.isnan(h) else round(float(h), 6),
                 "green": None if g < 0 else int(g)}
                for i, (tok, w, h, g) in enumerate(zip(self.tokens, self.watermarked, self.entropy, self.green))
            ],
        }


@dataclass
class DetectionReport:
    score: float  # nan when inconclusive
    n_watermarked: int
    positions: np.ndarray  # 0-based indices of tokens in W
    contributions: np.ndarray  # delta * green entry, aligned with ``positions``
    params: dict
    status: str = "ok"  # ok | inconclusive
    short_text: bool = False

    @property
    def green_fraction(self):
        if self.n_watermarked == 0:
            return float("nan")
        delta = self.params.get("delta", 1.0)
        return float(np.mean(self.contributions > 0)) if delta > 0 else float("nan")

    def to_dict(self):
        return {
            "status": self.status,
            "score": None if self.status != "ok" else round(float(self.score), 6),
            "n_watermarked": int(self.n_watermarked),
            "short_text": bool(self.short_text),
            "positions": [int(p) + 1 for p in self.positions],
            "contributions": [round(float(c), 6) for c in self.contributions],
            "params": self.params,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def awts_perturb(logits, green, delta):
    """Temperature-style perturbation ``l * (1 + delta * green)``."""
    l = np.asarray(logits, dtype=np.float64)
    g = np.asarray(green, dtype=np.float64)
    if l.shape != g.shape:
        raise InvalidInputError("logits and green mask lengths differ")
    return l * (1.0 + delta * g)


def likelihood_ratio_term(logit_k, delta, green_k):
    """Approximate per-token log-likelihood ratio ``l_k * delta * green_k``."""
    return float(logit_k) * float(delta) * float(green_k)


def exact_log_likelihood_ratio(logits, green, delta, k):
    """``log q_k - log p_k`` for the perturbed (q) and intact (p) softmax."""
    return float(log_softmax(awts_perturb(logits, green, delta))[k] - log_softmax(logits)[k])


def _decode_step(logits, sampler, rng):
    return decode_step(logits, sampler, rng)


def _check_models(lm, mm, mapper):
    check_same_vocab(lm, mm)
    V = (mm or lm).vocab_size_
    if mapper is not None and mapper.vocab_size_ != V:
        raise InvalidInputError(f"mapper output size {mapper.vocab_size_} != vocabulary size {V}")
    return V


def generate_plain(lm, prompt, n_tokens, rng, sampler=SamplerParams()):
    """Unwatermarked sampling; consumes exactly one uniform per token."""
    rng = as_rng(rng)
    prompt = check_token_ids(prompt, lm.vocab_size_, name="prompt").tolist()
    ctx = list(prompt)
    out = []
    for _ in range(int(n_tokens)):
        tok = _decode_step(lm.next_logits(ctx), sampler, rng)
        ctx.append(tok)
        out.append(tok)
    return np.asarray(out, dtype=np.int64)


class AdaptiveWatermarkGenerator:
    """Samples watermarked continuations.

    ``fixed_mask``, when given, replaces every green mask (used by the
    strengthened spoofing attack, which pins the semantics).
    """

    def __init__(self, lm, mm, mapper, params, fixed_mask=None):
        self.lm = lm
        self.mm = mm
        self.mapper = mapper
        self.params = params
        self.vocab_size = _check_models(lm, mm, mapper)
        self.fixed_mask = None if fixed_mask is None else np.asarray(fixed_mask, dtype=np.int8)
        self._opening_mask = None

    @property
    def opening_mask(self):
        if self._opening_mask is None:
            self._opening_mask = self.mapper.green_mask(self.params.opening) if self.params.opening else None
        return self._opening_mask

    def mask_for(self, t, generated):
        """Green mask used at 1-based step ``t`` given the tokens before it."""
        if self.fixed_mask is not None:
            return self.fixed_mask
        if t <= int(self.params.measure_threshold):
            return self.opening_mask
        return self.mapper.green_mask(generated)

    def generate(self, prompt, rng, n_tokens=None):
        p = self.params
        rng = as_rng(rng)
        n_tokens = int(p.max_tokens if n_tokens is None else n_tokens)
        prompt = check_token_ids(prompt, self.vocab_size, name="prompt")
        ctx = prompt.tolist()
        gen = []
        wm = np.zeros(n_tokens, dtype=bool)
        ent = np.full(n_tokens, np.nan)
        green = np.full(n_tokens, -1, dtype=np.int8)
        M = int(p.measure_threshold)
        for i in range(n_tokens):
            t = i + 1
            logits = self.lm.next_logits(ctx)
            if t <= M:
                fire = True
            else:
                ent[i] = self.mm.entropy(gen)
                fire = ent[i] >= p.alpha
            if fire:
                mask = self.mask_for(t, gen)
                logits = awts_perturb(logits, mask, p.delta)
            tok = _decode_step(logits, p.sampler, rng)
            if fire:
                wm[i] = True
                green[i] = mask[tok]
            gen.append(tok)
            ctx.append(tok)
        return GenerationTrace(np.asarray(gen, dtype=np.int64), wm, ent, green, prompt)


def generate(lm, mm, mapper, prompt, params, rng, n_tokens=None):
    return AdaptiveWatermarkGenerator(lm, mm, mapper, params).generate(prompt, rng, n_tokens)


class AdaptiveWatermarkDetector(BaseEstimator, ClassifierMixin):
    """Model- and prompt-agnostic detector.

    ``decision_function`` returns the mean of ``delta * green`` over the
    tokens the measurement model flags as potentially watermarked;
    inconclusive texts (no flagged token) score NaN.  ``fit`` picks the
    decision threshold that maximizes F1 on labelled texts.
    """

    def __init__(self, mm=None, mapper=None, alpha=2.0, delta=1.5, measure_threshold=50,
                 opening=(), threshold=None):
        self.mm = mm
        self.mapper = mapper
        self.alpha = alpha
        self.delta = delta
        self.measure_threshold = measure_threshold
        self.opening = opening
        self.threshold = threshold

    @classmethod
    def from_params(cls, mm, mapper, params, threshold=None):
        return cls(mm, mapper, params.alpha, params.delta, params.measure_threshold, params.opening, threshold)

    def _echo(self):
        return {"alpha": float(self.alpha), "delta": float(self.delta),
                "measure_threshold": int(self.measure_threshold)}

    def gate(self, text):
        """0-based positions of potentially watermarked tokens."""
        ids = check_token_ids(text, self.mm.vocab_size_, name="text").tolist()
        M = int(self.measure_threshold)
        return np.asarray(
            [i for i in range(len(ids)) if i + 1 <= M or self.mm.entropy(ids[:i]) >= self.alpha],
            dtype=np.int64)

    def detect(self, text):
        if self.mapper.vocab_size_ != self.mm.vocab_size_:
            raise InvalidInputError("mapper and measurement model disagree on vocabulary size")
        ids = check_token_ids(text, self.mm.vocab_size_, name="text")
        M = int(self.measure_threshold)
        W = self.gate(ids)
        contrib = np.zeros(W.size)
        opening_mask = None
        for j, i in enumerate(W.tolist()):
            if i + 1 <= M:
                if opening_mask is None:
                    opening_mask = self.mapper.green_mask(tuple(self.opening))
                mask = opening_mask
            else:
                mask = self.mapper.green_mask(ids[:i])
            contrib[j] = self.delta * mask[ids[i]]
        short = ids.size < M
        if W.size == 0:
            return DetectionReport(float("nan"), 0, W, contrib, self._echo(), "inconclusive", short)
        return DetectionReport(float(contrib.sum() / W.size), int(W.size), W, contrib, self._echo(), "ok", short)

    def decision_function(self, X):
        return np.array([self.detect(x).score for x in X])

    def fit(self, X, y):
        from .evaluation import best_f1, ScoredSample
        scores = self.decision_function(X)
        samples = [ScoredSample(float(s), bool(l)) for s, l in zip(scores, y) if np.isfinite(s)]
        self.best_f1_, self.threshold_ = best_f1(samples)
        self.classes_ = np.array([False, True])
        return self

    def predict(self, X):
        thr = getattr(self, "threshold_", None)
        thr = self.threshold if self.threshold is not None else thr
        if thr is None:
            thr = 0.5 * self.delta
        return self.decision_function(X) >= thr


def detect(text, mm, mapper, params):
    return AdaptiveWatermarkDetector.from_params(mm, mapper, params).detect(text)


def green_token_stats(text, mm, mapper, params):
    """Green fraction among flagged tokens and green-in-W count over all tokens."""
    rep = detect(text, mm, mapper, params)
    n_green = int((rep.contributions > 0).sum())
    return {"among_w": rep.green_fraction, "over_all": n_green / max(len(text), 1),
            "awr": rep.n_watermarked / max(len(text), 1)}


# KGW baselines ----------------------------------------------------------
@dataclass(frozen=True)
class KGWParams:
    gamma: float = 0.5
    delta_add: float = 2.0
    scheme: str = "kgw0"  # kgw0: fixed list, kgw1: keyed by previous token
    key: int = 15485863

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise InvalidInputError("gamma must lie in (0, 1)")
        if self.scheme not in ("kgw0", "kgw1"):
            raise InvalidInputError("scheme must be 'kgw0' or 'kgw1'")


@lru_cache(maxsize=65536)
def _green_list(seed, vocab_size, n_green):
    g = Xoshiro256(seed)
    keys = np.array([g.next_u64() for _ in range(vocab_size)], dtype=np.uint64)
    order = np.argsort(keys, kind="stable")
    mask = np.zeros(vocab_size, dtype=np.int8)
    mask[order[:n_green]] = 1
    mask.setflags(write=False)
    return mask


def kgw_green_list(kp, vocab_size, prev=None):
    """Green mask: the ``round(gamma |V|)`` ids with the smallest keys drawn
    from a stream seeded by ``mix64(key)`` (KGW-0) or ``mix64(prev, key)``."""
    n_green = int(round(kp.gamma * vocab_size))
    if kp.scheme == "kgw0":
        seed = mix64(kp.key)
    else:
        if prev is None:
            raise InvalidInputError("KGW-1 needs the previous token")
        seed = mix64(int(prev), kp.key)
    return _green_list(seed, int(vocab_size), n_green)


def kgw_generate(lm, prompt, kp, rng, n_tokens=200, sampler=SamplerParams()):
    rng = as_rng(rng)
    V = lm.vocab_size_
    ctx = check_token_ids(prompt, V, name="prompt").tolist()
    out = []
    for _ in range(int(n_tokens)):
        logits = lm.next_logits(ctx)
        prev = ctx[-1] if ctx else 0
        mask = kgw_green_list(kp, V, prev)
        tok = _decode_step(logits + kp.delta_add * mask, sampler, rng)
        ctx.append(tok)
        out.append(tok)
    return np.asarray(out, dtype=np.int64)


def kgw_detect(text, kp, vocab_size):
    """Fraction of green tokens; None when inconclusive."""
    ids = check_token_ids(text, vocab_size, name="text").tolist()
    if kp.scheme == "kgw1":
        if len(ids) < 2:
            return None
        hits = [kgw_green_list(kp, vocab_size, ids[i - 1])[ids[i]] for i in range(1, len(ids))]
    else:
        if not ids:
            return None
        mask = kgw_green_list(kp, vocab_size)
        hits = [mask[t] for t in ids]
    return float(np.mean(hits))


class KGWDetector(BaseEstimator, ClassifierMixin):
    def __init__(self, vocab_size=None, gamma=0.5, delta_add=2.0, scheme="kgw0", key=15485863):
        self.vocab_size = vocab_size
        self.gamma = gamma
        self.delta_add = delta_add
        self.scheme = scheme
        self.key = key

    @property
    def params_(self):
        return KGWParams(self.gamma, self.delta_add, self.scheme, self.key)

    def decision_function(self, X):
        out = [kgw_detect(x, self.params_, self.vocab_size) for x in X]
        return np.array([np.nan if s is None else s for s in out])

    def predict(self, X):
        return self.decision_function(X) >= self.gamma + 0.1


__all__ = [
    "AdaptiveWatermarkDetector", "AdaptiveWatermarkGenerator", "DetectionReport", "GenerationTrace",
    "KGWDetector", "KGWParams", "WatermarkParams", "awts_perturb", "binarize", "detect",
    "exact_log_likelihood_ratio", "generate", "generate_plain", "green_token_stats", "kgw_detect",
    "kgw_generate", "kgw_green_list", "likelihood_ratio_term",
]

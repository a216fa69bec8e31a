"""Attack harnesses: token-edit paraphrasing and frequency-analysis spoofing.

The paraphrase attack stands in for a neural paraphraser with four seeded
token-level edits: nearest-neighbour substitution, deletion, insertion of
tokens sampled from a small language model, and bounded local shuffling.

The spoofing attack queries a watermarked generator many times, counts
how often each common token appears, and guesses that the most frequent
ones are green.  Its decryption rate is the fraction of guesses that are
truly green.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .core import SamplerParams, decode_step
from .rng import Xoshiro256, derive_seed
from .validation import InvalidInputError, check_token_ids

log = logging.getLogger(__name__)

SPOOF_MODES = ("fixed-prefix", "fixed-embedding", "standard")


@dataclass(frozen=True)
class ParaphraseParams:
    substitution: float = 0.1
    deletion: float = 0.05
    insertion: float = 0.05
    shuffle_window: int = 0
    seed: int = 0

    def __post_init__(self):
        for r in (self.substitution, self.deletion, self.insertion):
            if not 0.0 <= r <= 1.0:
                raise InvalidInputError("edit rates must lie in [0, 1]")
        if int(self.shuffle_window) < 0:
            raise InvalidInputError("shuffle_window must be >= 0")

    @classmethod
    def from_edit_rate(cls, rate, seed=0, shuffle_window=2):
        """Split a combined edit rate: half substitutions, a quarter each
        deletions and insertions.  Tokens are also reordered within a
        window of 2 by default, as a paraphrase would."""
        return cls(rate / 2, rate / 4, rate / 4, shuffle_window, seed)

    @property
    def edit_rate(self):
        return self.substitution + self.deletion + self.insertion


def local_shuffle(seq, window, rng):
    """Permute ``seq`` so that no token moves more than ``window`` places."""
    seq = np.asarray(seq)
    if window <= 0 or seq.size < 2:
        return seq.copy()
    keys = np.arange(seq.size) + rng.random(seq.size) * (window + 1)
    return seq[np.argsort(keys, kind="stable")]


def paraphrase_attack(text, pp, neighbors, mm=None, sampler=SamplerParams()):
    """Edit ``text`` token by token.

    ``neighbors[i]`` is the substitute for token ``i`` (its nearest
    neighbour in the attacker's embedding space, never ``i`` itself).
    Inserted tokens are sampled from ``mm`` given the attacked text so far,
    or uniformly when no model is given.  At least one token survives.
    """
    neighbors = np.asarray(neighbors, dtype=np.int64)
    ids = check_token_ids(text, neighbors.shape[0], allow_empty=False, name="text")
    g = np.random.Generator(np.random.PCG64(derive_seed(pp.seed, "paraphrase")))
    draws = Xoshiro256(derive_seed(pp.seed, "paraphrase-insert"))
    n = ids.size
    u_del = g.random(n)
    u_sub = g.random(n)
    u_ins = g.random(n)
    keep = u_del >= pp.deletion
    if not keep.any():
        keep[int(g.integers(n))] = True
    out = []
    for i in range(n):
        if keep[i]:
            out.append(int(neighbors[ids[i]]) if u_sub[i] < pp.substitution else int(ids[i]))
        if u_ins[i] < pp.insertion:
            if mm is None:
                out.append(int(g.integers(neighbors.shape[0])))
            else:
                out.append(decode_step(mm.next_logits(out), sampler, draws))
    return local_shuffle(np.asarray(out, dtype=np.int64), int(pp.shuffle_window), g)


@dataclass(frozen=True)
class SpoofConfig:
    n_generations: int = 5000
    pool_size: int = 181
    top_h: int = 50
    mode: str = "fixed-embedding"
    length: int = 60
    seed: int = 0

    def __post_init__(self):
        if int(self.n_generations) < 1:
            raise InvalidInputError("n_generations must be >= 1")
        if int(self.top_h) < 1 or int(self.top_h) > int(self.pool_size):
            raise InvalidInputError("need 1 <= top_h <= pool_size")
        if self.mode not in SPOOF_MODES:
            raise InvalidInputError(f"mode must be one of {SPOOF_MODES}")
        if int(self.length) < 1:
            raise InvalidInputError("length must be >= 1")


@dataclass
class SpoofResult:
    inferred: np.ndarray  # token ids guessed green, most frequent first
    decryption_rate: float
    pool: np.ndarray
    counts: np.ndarray  # observed count per pool token

    def to_dict(self):
        return {"decryption_rate": round(self.decryption_rate, 6),
                "inferred": [int(t) for t in self.inferred],
                "pool_size": int(self.pool.size)}


def common_pool(token_counts, size):
    """The ``size`` most frequent ids (ties to the lower id)."""
    c = np.asarray(token_counts)
    order = np.lexsort((np.arange(c.size), -c))
    return order[:size]


def spoof_attack(generate_fn, true_green, pool, sc, prefix=None):
    """Frequency analysis over ``sc.n_generations`` samples.

    ``generate_fn(i)`` returns the tokens of generation ``i``.  With a
    ``prefix`` token only the tokens that directly follow it are counted
    (the list being attacked is the one keyed by that prefix).  The top
    ``sc.top_h`` pool tokens by count are the guess; ties go to the token
    earlier in the pool.
    """
    pool = np.asarray(pool, dtype=np.int64)
    true_green = np.asarray(true_green)
    V = true_green.shape[0]
    totals = np.zeros(V, dtype=np.int64)
    for i in range(int(sc.n_generations)):
        toks = np.asarray(generate_fn(i), dtype=np.int64)
        if prefix is not None:
            toks = toks[1:][toks[:-1] == int(prefix)]
        np.add.at(totals, toks, 1)
    seen = pool[totals[pool] > 0]
    if seen.size < pool.size:
        warnings.warn(f"only {seen.size} of {pool.size} pool tokens were observed; shrinking the pool",
                      RuntimeWarning, stacklevel=2)
        pool = seen
    if pool.size == 0:
        return SpoofResult(pool, float("nan"), pool, np.zeros(0, dtype=np.int64))
    counts = totals[pool]
    h = min(int(sc.top_h), pool.size)
    top = pool[np.lexsort((np.arange(pool.size), -counts))[:h]]
    rate = float(np.mean(true_green[top] > 0))
    return SpoofResult(top, rate, pool, counts)


def successor_counts(docs, prefix, vocab_size):
    """How often each token follows ``prefix`` in ``docs``."""
    c = np.zeros(vocab_size, dtype=np.int64)
    for d in docs:
        d = np.asarray(d)
        np.add.at(c, d[1:][d[:-1] == prefix], 1)
    return c


def kgw_spoof(lm, kp, prompts, token_counts, sc, prefix=None):
    """Spoof KGW-0 (global list) or KGW-1 (the list keyed by ``prefix``).

    For KGW-1 the pool is the most common successors of ``prefix`` in the
    training corpus when ``token_counts`` holds those successor counts.
    """
    from .watermark import kgw_generate, kgw_green_list
    V = lm.vocab_size_
    if kp.scheme == "kgw1":
        if prefix is None:
            prefix = int(np.argmax(token_counts))
        green = kgw_green_list(kp, V, prefix)
    else:
        prefix = None
        green = kgw_green_list(kp, V)

    def gen(i):
        prompt = prompts[i % len(prompts)]
        return kgw_generate(lm, prompt, kp, derive_seed(sc.seed, f"spoof:{i}"), sc.length)

    return spoof_attack(gen, green, common_pool(token_counts, sc.pool_size), sc, prefix)


def adaptive_spoof(lm, mm, mapper, params, prompts, token_counts, sc, fixed_context=None):
    """Spoof the adaptive scheme.

    ``fixed-embedding`` mode pins the green mask to the one derived from
    ``fixed_context`` (the opening sentence by default) for every step of
    every generation, which is the strongest position an attacker could be
    in.  ``standard`` mode lets the semantics run free and scores the guess
    against the opening-sentence mask.
    """
    from .watermark import AdaptiveWatermarkGenerator
    ctx = params.opening if fixed_context is None else tuple(fixed_context)
    green = mapper.green_mask(ctx)
    fixed = green if sc.mode == "fixed-embedding" else None
    gen_ = AdaptiveWatermarkGenerator(lm, mm, mapper, params, fixed_mask=fixed)

    def gen(i):
        prompt = prompts[i % len(prompts)]
        return gen_.generate(prompt, derive_seed(sc.seed, f"spoof:{i}"), sc.length).tokens

    return spoof_attack(gen, green, common_pool(token_counts, sc.pool_size), sc)


__all__ = [
    "ParaphraseParams", "SpoofConfig", "SpoofResult", "adaptive_spoof", "common_pool",
    "kgw_spoof", "local_shuffle", "paraphrase_attack", "spoof_attack", "successor_counts",
]

"""Semantic logits-scaling vectors.

A text prefix is embedded into a unit vector, a residual feed-forward
network maps the embedding to one real score per vocabulary entry, and the
positive entries of that score vector form the (context-dependent) green
list.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .rng import derive_seed
from .validation import InvalidInputError, NotFittedError, check_is_fitted, check_token_ids

log = logging.getLogger(__name__)

MAPPER_MAGIC = b"AWMAPPER"
MAPPER_VERSION = 1
_ACTIVATIONS = ("relu", "tanh")


def _np_rng(seed, label):
    return np.random.Generator(np.random.PCG64(derive_seed(seed, label)))


class SentenceEmbedder(BaseEstimator, TransformerMixin):
    """Bag-of-tokens sentence encoder over a seeded random embedding table.

    ``embed`` mean-pools the table rows of the last ``window`` tokens (all
    tokens when ``window`` is None) and L2-normalizes the result.  The empty
    sequence maps to a fixed reserved unit vector.
    """

    def __init__(self, vocab_size=None, dim=64, seed=0, window=None):
        self.vocab_size = vocab_size
        self.dim = dim
        self.seed = seed
        self.window = window

    def fit(self, X=None, y=None):
        if self.vocab_size is None or int(self.vocab_size) < 2:
            raise InvalidInputError("vocab_size must be set (>= 2)")
        if self.window is not None and int(self.window) < 1:
            raise InvalidInputError("window must be None or >= 1")
        g = _np_rng(self.seed, "embedding-table")
        self.table_ = g.standard_normal((int(self.vocab_size), int(self.dim))) / np.sqrt(self.dim)
        empty = _np_rng(self.seed, "empty-sentence").standard_normal(int(self.dim))
        self.empty_ = empty / np.linalg.norm(empty)
        return self

    def _check(self):
        if not hasattr(self, "table_"):
            self.fit()

    def embed(self, seq):
        self._check()
        ids = check_token_ids(seq, self.table_.shape[0])
        if self.window is not None:
            ids = ids[-int(self.window):]
        if ids.size == 0:
            return self.empty_.copy()
        u = self.table_[ids].mean(axis=0)
        n = np.linalg.norm(u)
        if n == 0:
            return self.empty_.copy()
        return u / n

    def transform(self, X):
        return np.stack([self.embed(s) for s in X]) if len(X) else np.zeros((0, self.dim))

    def nearest_neighbors(self):
        """For every token, the most cosine-similar other token."""
        self._check()
        t = self.table_ / np.linalg.norm(self.table_, axis=1, keepdims=True)
        sim = t @ t.T
        np.fill_diagonal(sim, -np.inf)
        return np.argmax(sim, axis=1)


def distance(a, b):
    """Euclidean distance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum()))


@dataclass(frozen=True)
class RescaleBounds:
    """Linear map sending the observed distance range [lower, upper] onto
    the wider range [target_lower, target_upper]."""

    lower: float = 0.0
    upper: float = 2.0
    target_lower: float = -2.0
    target_upper: float = 4.0

    def __post_init__(self):
        if not self.upper > self.lower:
            raise InvalidInputError("upper bound must exceed lower bound")
        if not self.target_upper > self.target_lower:
            raise InvalidInputError("target upper bound must exceed target lower bound")
        if not (self.target_lower < self.lower and self.target_upper > self.upper):
            raise InvalidInputError("target range must strictly contain the observed range")


def rescale_distance(d, bounds):
    b = bounds
    return (np.asarray(d, dtype=np.float64) - b.lower) / (b.upper - b.lower) * (b.target_upper - b.target_lower) + b.target_lower


def binarize(v):
    """1 where the entry is strictly positive, else 0."""
    return (np.asarray(v) > 0).astype(np.int8)


@dataclass(frozen=True)
class AugmentRates:
    deletion: float = 0.1
    insertion: float = 0.1
    substitution: float = 0.1

    def __post_init__(self):
        for r in (self.deletion, self.insertion, self.substitution):
            if not 0.0 <= r <= 1.0:
                raise InvalidInputError("augmentation rates must lie in [0, 1]")


def augment(seq, rates, rng, neighbors, unigram):
    """Shorten, expand and paraphrase ``seq`` by token-level edits.

    ``neighbors[i]`` is the substitute for token ``i``; ``unigram`` is the
    distribution inserted tokens are drawn from.  At least one token always
    survives.  ``rng`` is a numpy Generator.
    """
    seq = np.asarray(seq, dtype=np.int64)
    if seq.size == 0:
        raise InvalidInputError("cannot augment an empty sequence")
    n = seq.size
    u_del = rng.random(n)
    u_sub = rng.random(n)
    u_ins = rng.random(n)
    keep = u_del >= rates.deletion
    if not keep.any():
        keep[int(rng.integers(n))] = True
    out = []
    for i in range(n):
        if keep[i]:
            out.append(int(neighbors[seq[i]]) if u_sub[i] < rates.substitution else int(seq[i]))
        if u_ins[i] < rates.insertion:
            out.append(int(rng.choice(len(unigram), p=unigram)))
    return np.asarray(out, dtype=np.int64)


# network ---------------------------------------------------------------
PARAM_NAMES = ("W_in", "b_in", "W1", "b1", "W2", "b2", "W_out", "b_out")


def init_params(dim, hidden, vocab_size, seed, zero=False):
    shapes = {
        "W_in": (dim, hidden), "b_in": (hidden,),
        "W1": (hidden, hidden), "b1": (hidden,),
        "W2": (hidden, hidden), "b2": (hidden,),
        "W_out": (hidden, vocab_size), "b_out": (vocab_size,),
    }
    if zero:
        return {k: np.zeros(s) for k, s in shapes.items()}
    g = _np_rng(seed, "mapper-init")
    p = {}
    for name in PARAM_NAMES:
        shape = shapes[name]
        if name.startswith("W"):
            fan_in = shape[0]
            scale = np.sqrt(2.0 / fan_in) if name != "W_out" else np.sqrt(1.0 / fan_in)
            if name in ("W1", "W2"):
                scale *= 0.5
            p[name] = g.standard_normal(shape) * scale
        else:
            p[name] = np.zeros(shape)
    return p


def _act(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(z, a, activation):
    if activation == "relu":
        return (z > 0).astype(z.dtype)
    return 1.0 - a * a


def forward(params, U, activation="relu", cache=False):
    """Map embeddings ``U`` (n, L) to scaling vectors (n, |V|)."""
    h0 = U @ params["W_in"] + params["b_in"]
    z1 = h0 @ params["W1"] + params["b1"]
    a1 = _act(z1, activation)
    h1 = h0 + a1
    z2 = h1 @ params["W2"] + params["b2"]
    a2 = _act(z2, activation)
    h2 = h1 + a2
    V = h2 @ params["W_out"] + params["b_out"]
    if cache:
        return V, (U, h0, z1, a1, h1, z2, a2, h2)
    return V


def backward(params, grad_V, cache, activation="relu"):
    U, h0, z1, a1, h1, z2, a2, h2 = cache
    g = {"W_out": h2.T @ grad_V, "b_out": grad_V.sum(axis=0)}
    g_h2 = grad_V @ params["W_out"].T
    g_z2 = g_h2 * _act_grad(z2, a2, activation)
    g["W2"] = h1.T @ g_z2
    g["b2"] = g_z2.sum(axis=0)
    g_h1 = g_h2 + g_z2 @ params["W2"].T
    g_z1 = g_h1 * _act_grad(z1, a1, activation)
    g["W1"] = h0.T @ g_z1
    g["b1"] = g_z1.sum(axis=0)
    g_h0 = g_h1 + g_z1 @ params["W1"].T
    g["W_in"] = U.T @ g_h0
    g["b_in"] = g_h0.sum(axis=0)
    return g


def lipschitz_bound(params, activation="relu"):
    """Product of layer operator norms; bounds ||dv|| / ||du||."""
    s = lambda W: np.linalg.norm(W, 2)  # noqa: E731
    return s(params["W_in"]) * (1 + s(params["W1"])) * (1 + s(params["W2"])) * s(params["W_out"])


def _pair_dist(V, i, j):
    diff = V[i] - V[j]
    d = np.sqrt((diff ** 2).sum(axis=1))
    return diff, d


def loss_and_grad(params, U, n_orig, pairs, pair_targets, tau=0.1, weights=(1.0, 1.0, 1.0, 1.0),
                  activation="relu", hard_sign=False, need_grad=True):
    """Four-term mapper objective on one batch.

    ``U`` stacks ``n_orig`` original embeddings followed by one augmented
    counterpart each.  ``pairs`` index rows of ``U`` for the smoothness term,
    whose targets are the rescaled embedding distances.  Each term is
    averaged over its summation index; the balance terms are additionally
    divided by the length of the inner sum so every term is O(1).

    Returns ``(total, terms, grads)``; ``grads`` is None unless requested.
    """
    w_a, w_b, w_c, w_d = weights
    V, cache = forward(params, U, activation, cache=True)
    n, nv = V.shape
    if n < 2:
        raise InvalidInputError("the loss needs at least two sentences per batch")
    G = np.zeros_like(V)

    # smoothness
    pi, pj = pairs[:, 0], pairs[:, 1]
    diff, d = _pair_dist(V, pi, pj)
    r = pair_targets - d
    term_a = np.abs(r).mean()
    coef = np.where(d > 0, -np.sign(r) / np.where(d > 0, d, 1.0), 0.0) / len(pairs)
    ga = diff * coef[:, None]
    np.add.at(G, pi, w_a * ga)
    np.add.at(G, pj, -w_a * ga)

    # balance within a sentence and across sentences
    S = np.sign(V) if hard_sign else np.tanh(V / tau)
    rows = S.sum(axis=1)
    cols = S.sum(axis=0)
    term_b = np.abs(rows).mean() / nv
    term_c = np.abs(cols).mean() / n
    gS = w_b * np.sign(rows)[:, None] / (n * nv) + w_c * np.sign(cols)[None, :] / (nv * n)
    if not hard_sign:
        G += gS * (1.0 - S * S) / tau

    # contrastive: original vs its augmentation
    oi = np.arange(n_orig)
    diff_d, dd = _pair_dist(V, oi, oi + n_orig)
    term_d = dd.mean()
    coef_d = np.where(dd > 0, 1.0 / np.where(dd > 0, dd, 1.0), 0.0) / n_orig
    gd = diff_d * coef_d[:, None]
    G[oi] += w_d * gd
    G[oi + n_orig] -= w_d * gd

    terms = {"smoothness": term_a, "balance": term_b, "unbiased": term_c, "contrastive": term_d}
    total = w_a * term_a + w_b * term_b + w_c * term_c + w_d * term_d
    grads = backward(params, G, cache, activation) if need_grad else None
    return float(total), terms, grads


class SemanticMapper(BaseEstimator, TransformerMixin):
    """Residual feed-forward network from sentence embeddings to scaling vectors.

    Architecture: linear (L -> H), two residual blocks ``h + act(W h + b)``,
    linear (H -> |V|).  ``fit`` trains with minibatch SGD on the four-term
    objective of :func:`loss_and_grad`; ``transform`` maps token sequences
    to scaling vectors and ``green_mask`` binarizes them.
    """

    def __init__(self, embedder=None, hidden=256, activation="relu", batch_size=128,
                 learning_rate=1e-2, epochs=20, tau=0.1, loss_weights=(1.0, 1.0, 1.0, 1.0),
                 n_pairs=512, augment_rates=AugmentRates(), span_length=(8, 24),
                 n_sentences=4096, target_range=(-2.0, 4.0), n_calibration=1000, seed=0):
        self.embedder = embedder
        self.hidden = hidden
        self.activation = activation
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.tau = tau
        self.loss_weights = loss_weights
        self.n_pairs = n_pairs
        self.augment_rates = augment_rates
        self.span_length = span_length
        self.n_sentences = n_sentences
        self.target_range = target_range
        self.n_calibration = n_calibration
        self.seed = seed

    # setup -------------------------------------------------------------
    def _validate(self):
        if self.embedder is None:
            raise InvalidInputError("an embedder is required")
        if int(self.batch_size) < 2:
            raise InvalidInputError("batch_size must be >= 2")
        if not float(self.tau) > 0:
            raise InvalidInputError("tau must be > 0")
        if self.activation not in _ACTIVATIONS:
            raise InvalidInputError(f"activation must be one of {_ACTIVATIONS}")

    def initialize(self, vocab_size=None, zero=False):
        """Set fresh (seeded) parameters without training."""
        self._validate()
        self.embedder._check()
        V = int(vocab_size or self.embedder.table_.shape[0])
        self.params_ = _round_f32(init_params(self.embedder.table_.shape[1], int(self.hidden), V, self.seed, zero))
        if not hasattr(self, "bounds_"):
            self.bounds_ = RescaleBounds(0.0, 2.0, *self.target_range)
        self.loss_history_ = []
        return self

    def _sample_spans(self, docs, n, g):
        lo, hi = self.span_length
        spans = []
        lens = np.array([len(d) for d in docs])
        ok = np.flatnonzero(lens >= 1)
        for _ in range(n):
            d = docs[ok[g.integers(ok.size)]]
            length = int(min(g.integers(lo, hi + 1), len(d)))
            start = int(g.integers(0, len(d) - length + 1))
            spans.append(np.asarray(d[start:start + length], dtype=np.int64))
        return spans

    def calibrate(self, U, g):
        """Estimate the distance range: lower 0, upper the max over random pairs."""
        n = U.shape[0]
        i = g.integers(0, n, self.n_calibration)
        j = g.integers(0, n, self.n_calibration)
        upper = float(np.sqrt(((U[i] - U[j]) ** 2).sum(axis=1)).max())
        upper = max(upper, 1e-6)
        self.bounds_ = RescaleBounds(0.0, upper, *self.target_range)
        return self.bounds_

    def fit(self, X, y=None):
        """Train on a :class:`~adaptive_watermark.lm.Corpus` or list of id sequences."""
        self._validate()
        docs = X.documents if hasattr(X, "documents") else list(X)
        if not docs:
            raise InvalidInputError("corpus is empty")
        emb = self.embedder
        emb._check()
        V = emb.table_.shape[0]
        g = _np_rng(self.seed, "mapper-train")
        unigram = np.bincount(np.concatenate([np.asarray(d) for d in docs]), minlength=V).astype(float) + 1e-3
        unigram /= unigram.sum()
        neighbors = emb.nearest_neighbors()

        sentences = self._sample_spans(docs, int(self.n_sentences), g)
        U_orig = emb.transform(sentences)
        self.calibrate(U_orig, g)
        self.initialize(V)
        if int(self.epochs) == 0:
            return self
        bs = int(self.batch_size)
        for epoch in range(int(self.epochs)):
            aug = [augment(s, self.augment_rates, g, neighbors, unigram) for s in sentences]
            U_aug = emb.transform(aug)
            order = g.permutation(len(sentences))
            epoch_losses = []
            for start in range(0, len(order) - bs + 1, bs):
                idx = order[start:start + bs]
                U = np.concatenate([U_orig[idx], U_aug[idx]])
                pairs, targets = self._pairs(U, g)
                total, terms, grads = loss_and_grad(
                    self.params_, U, bs, pairs, targets, self.tau, self.loss_weights, self.activation)
                if not np.isfinite(total):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}: {terms}")
                for k in PARAM_NAMES:
                    self.params_[k] -= float(self.learning_rate) * grads[k]
                epoch_losses.append(total)
            mean_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
            self.loss_history_.append(mean_loss)
            log.info("mapper epoch %d loss %.5f", epoch, mean_loss)
        self.params_ = _round_f32(self.params_)
        return self

    def _pairs(self, U, g):
        n = U.shape[0]
        i = g.integers(0, n, int(self.n_pairs))
        j = (i + g.integers(1, n, int(self.n_pairs))) % n
        pairs = np.stack([i, j], axis=1)
        du = np.sqrt(((U[i] - U[j]) ** 2).sum(axis=1))
        return pairs, rescale_distance(du, self.bounds_)

    def evaluate_loss(self, sentences, augmented, g=None, hard_sign=False):
        """Objective value on given original/augmented sentence lists."""
        check_is_fitted(self, "params_")
        g = g if g is not None else _np_rng(self.seed, "mapper-eval")
        U = np.concatenate([self.embedder.transform(sentences), self.embedder.transform(augmented)])
        pairs, targets = self._pairs(U, g)
        total, terms, _ = loss_and_grad(self.params_, U, len(sentences), pairs, targets, self.tau,
                                        self.loss_weights, self.activation, hard_sign=hard_sign,
                                        need_grad=False)
        return total, terms

    # inference ---------------------------------------------------------
    def forward(self, U):
        check_is_fitted(self, "params_")
        U = np.atleast_2d(np.asarray(U, dtype=np.float64))
        return forward(self.params_, U, self.activation)

    def scaling_vector(self, seq):
        return self.forward(self.embedder.embed(seq))[0]

    def green_mask(self, seq):
        return binarize(self.scaling_vector(seq))

    def transform(self, X):
        return self.forward(self.embedder.transform(X))

    @property
    def vocab_size_(self):
        return self.params_["b_out"].shape[0]

    # persistence -------------------------------------------------------
    def to_bytes(self, vocab_hash=0):
        check_is_fitted(self, "params_")
        emb = self.embedder
        p = self.params_
        L, H = p["W_in"].shape
        V = p["b_out"].shape[0]
        b = self.bounds_
        out = bytearray(MAPPER_MAGIC)
        out += struct.pack("<QqqqQqQ", MAPPER_VERSION, L, H, V, int(emb.seed) & (2**64 - 1),
                           -1 if emb.window is None else int(emb.window), int(vocab_hash))
        out += struct.pack("<4d", b.lower, b.upper, b.target_lower, b.target_upper)
        out += struct.pack("<B", _ACTIVATIONS.index(self.activation))
        for name in PARAM_NAMES:
            out += p[name].astype("<f4").tobytes(order="C")
        return bytes(out)

    def save(self, path, vocab_hash=0):
        Path(path).write_bytes(self.to_bytes(vocab_hash))

    @classmethod
    def from_bytes(cls, data, expected_vocab_hash=None):
        if data[:8] != MAPPER_MAGIC:
            raise InvalidInputError("not a mapper file")
        off = 8
        fmt = "<QqqqQqQ"
        version, L, H, V, eseed, window, vhash = struct.unpack_from(fmt, data, off)
        off += struct.calcsize(fmt)
        if version != MAPPER_VERSION:
            raise InvalidInputError(f"unsupported mapper format version {version}")
        if expected_vocab_hash is not None and vhash and vhash != expected_vocab_hash:
            from .validation import VocabularyMismatchError
            raise VocabularyMismatchError("mapper was trained on a different vocabulary")
        lo, up, tlo, tup = struct.unpack_from("<4d", data, off)
        off += 32
        (act,) = struct.unpack_from("<B", data, off)
        off += 1
        shapes = {"W_in": (L, H), "b_in": (H,), "W1": (H, H), "b1": (H,), "W2": (H, H),
                  "b2": (H,), "W_out": (H, V), "b_out": (V,)}
        params = {}
        for name in PARAM_NAMES:
            n = int(np.prod(shapes[name]))
            params[name] = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float64).reshape(shapes[name])
            off += 4 * n
        emb = SentenceEmbedder(vocab_size=V, dim=L, seed=eseed, window=None if window < 0 else window).fit()
        m = cls(embedder=emb, hidden=H, activation=_ACTIVATIONS[act], target_range=(tlo, tup))
        m.params_ = params
        m.bounds_ = RescaleBounds(lo, up, tlo, tup)
        m.vocab_hash_ = vhash
        m.loss_history_ = []
        return m

    @classmethod
    def load(cls, path, expected_vocab_hash=None):
        return cls.from_bytes(Path(path).read_bytes(), expected_vocab_hash)


def _round_f32(params):
    return {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}


def train_mapper(corpus, embedder, **config):
    return SemanticMapper(embedder=embedder, **config).fit(corpus)


def balance_stats(V):
    """Hard-sign imbalance per sentence (rows) and per token (columns)."""
    S = np.sign(np.asarray(V))
    per_sentence = np.abs(S.sum(axis=1)) / S.shape[1]
    per_token = np.abs(S.sum(axis=0)) / S.shape[0]
    return per_sentence, per_token


__all__ = [
    "AugmentRates", "RescaleBounds", "SemanticMapper", "SentenceEmbedder", "augment",
    "balance_stats", "binarize", "distance", "forward", "init_params", "lipschitz_bound",
    "loss_and_grad", "rescale_distance", "train_mapper", "NotFittedError",
]

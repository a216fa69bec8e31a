"""Vocabulary handling and next-token distribution math."""

import hashlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import as_rng
from .validation import InvalidInputError, check_logits, check_probs

UNK = "<unk>"


class Vocabulary:
    """Immutable ordered token inventory with a dense token <-> id bijection.

    ``mode`` records how raw text is split: ``"char"`` (every character is a
    token) or ``"word"`` (whitespace-separated tokens).
    """

    def __init__(self, tokens, mode="word"):
        tokens = tuple(tokens)
        if len(tokens) < 2:
            raise InvalidInputError("a vocabulary needs at least two tokens")
        if len(set(tokens)) != len(tokens):
            raise InvalidInputError("token surfaces must be unique")
        if mode not in ("char", "word"):
            raise InvalidInputError(f"unknown tokenizer mode {mode!r}")
        for tok in tokens:
            if "\n" in tok or tok == "":
                raise InvalidInputError(f"token {tok!r} cannot be serialized")
        self._tokens = tokens
        self._index = {t: i for i, t in enumerate(tokens)}
        self.mode = mode

    @classmethod
    def from_texts(cls, texts, mode="word", max_size=None):
        """Most frequent tokens first (ties alphabetical), ``<unk>`` last."""
        counts = Counter()
        for text in texts:
            counts.update(split_text(text, mode))
        counts.pop(UNK, None)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if max_size is not None:
            ranked = ranked[: max(1, max_size - 1)]
        return cls([t for t, _ in ranked] + [UNK], mode=mode)

    @property
    def tokens(self):
        return self._tokens

    @property
    def size(self):
        return len(self._tokens)

    def __len__(self):
        return len(self._tokens)

    def __getitem__(self, i):
        return self._tokens[i]

    def __contains__(self, tok):
        return tok in self._index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._tokens == other._tokens and self.mode == other.mode

    def __hash__(self):
        return hash((self._tokens, self.mode))

    def __repr__(self):
        return f"Vocabulary(size={self.size}, mode={self.mode!r})"

    @property
    def unk_id(self):
        return self._index.get(UNK)

    def index(self, tok):
        return self._index[tok]

    def encode(self, text):
        """Tokenize ``text``; out-of-vocabulary surfaces map to ``<unk>``."""
        unk = self.unk_id
        ids = []
        for tok in split_text(text, self.mode):
            i = self._index.get(tok, unk)
            if i is None:
                raise InvalidInputError(f"token {tok!r} not in vocabulary and no {UNK} entry")
            ids.append(i)
        return np.asarray(ids, dtype=np.int64)

    def decode(self, ids):
        sep = "" if self.mode == "char" else " "
        return sep.join(self._tokens[int(i)] for i in ids)

    @property
    def vocab_hash(self):
        """64-bit fingerprint of the serialized vocabulary."""
        digest = hashlib.sha256(self.to_text().encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")

    def to_text(self):
        return "\n".join(self._tokens) + "\n"

    def save(self, path):
        """One token per line, UTF-8; the line number is the token id."""
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path, mode=None):
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if mode is None:
            mode = "char" if all(len(t) == 1 for t in lines if t != UNK) else "word"
        return cls(lines, mode=mode)


def split_text(text, mode):
    if mode == "char":
        return list(text)
    return text.split()


@dataclass(frozen=True)
class SamplerParams:
    """Top-K / nucleus cut-offs applied at every sampling step."""

    top_k: int = 50
    top_p: float = 0.9

    def __post_init__(self):
        if int(self.top_k) < 1:
            raise InvalidInputError("top_k must be >= 1")
        if not 0.0 < float(self.top_p) <= 1.0:
            raise InvalidInputError("top_p must lie in (0, 1]")


def softmax(logits):
    l = check_logits(logits)
    z = np.exp(l - l.max())
    return z / z.sum()


def log_softmax(logits):
    l = check_logits(logits)
    shifted = l - l.max()
    return shifted - np.log(np.exp(shifted).sum())


def shannon_entropy(probs):
    """Entropy in nats; zero-probability entries contribute nothing."""
    p = check_probs(probs)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def entropy_from_logits(logits):
    """Entropy of ``softmax(logits)`` computed in log space."""
    logp = log_softmax(logits)
    p = np.exp(logp)
    return float(-(p * logp).sum())


def _descending_order(p):
    # stable sort of -p: ties keep the lower token id first
    return np.argsort(-p, kind="stable")


def _filter_unchecked(p, top_k, top_p):
    k = min(int(top_k), p.shape[0])
    order = _descending_order(p)[:k]
    kept = p[order]
    cum = np.cumsum(kept)
    total = cum[-1]
    if total <= 0:
        raise InvalidInputError("no probability mass survives top-K filtering")
    n = int(np.searchsorted(cum, (float(top_p) - 1e-12) * total, side="left")) + 1
    n = min(max(n, 1), k)
    out = np.zeros_like(p)
    out[order[:n]] = kept[:n] / cum[n - 1]
    return out


def filter_topk_topp(probs, sampler=SamplerParams()):
    """Keep the ``top_k`` most likely tokens, then the shortest prefix of
    those (renormalized) whose cumulative mass reaches ``top_p``."""
    return _filter_unchecked(check_probs(probs), sampler.top_k, sampler.top_p)


def _sample_unchecked(p, rng):
    support = np.flatnonzero(p > 0)
    if support.size == 0:
        raise InvalidInputError("cannot sample from an all-zero distribution")
    cdf = np.cumsum(p[support])
    u = rng.random() * cdf[-1]
    j = int(np.searchsorted(cdf, u, side="right"))
    return int(support[min(j, support.size - 1)])


def sample(probs, rng):
    """Inverse-CDF categorical draw using one uniform from ``rng``.

    The CDF runs over the non-zero entries in ascending token id, so the
    result always has positive probability.
    """
    return _sample_unchecked(np.asarray(probs, dtype=np.float64), as_rng(rng))


def decode_step(logits, sampler, rng):
    """softmax, top-K / top-p filtering and one draw, without input checks."""
    l = np.asarray(logits, dtype=np.float64)
    z = np.exp(l - l.max())
    return _sample_unchecked(_filter_unchecked(z / z.sum(), sampler.top_k, sampler.top_p), rng)

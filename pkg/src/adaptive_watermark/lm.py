"""Add-k smoothed n-gram language models.

Three roles share this class: the generation model, the smaller
measurement model that gates watermarking by entropy, and a held-out
evaluator used for perplexity.
"""

import math
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .core import Vocabulary, entropy_from_logits
from .datasets import read_corpus
from .validation import InvalidInputError, check_is_fitted, check_token_ids

MAGIC = b"AWNGRAM\x00"
FORMAT_VERSION = 1
ROLES = ("generator", "measurement", "evaluator")
LOGIT_MODES = ("counts", "shift")


@dataclass
class Corpus:
    """Tokenized documents over a fixed vocabulary."""

    documents: list
    vocabulary: Vocabulary
    source: str = ""
    texts: list = field(default=None, repr=False)

    def __post_init__(self):
        if not self.documents:
            raise InvalidInputError("corpus is empty")

    @property
    def mode(self):
        return self.vocabulary.mode

    @classmethod
    def from_texts(cls, texts, vocabulary=None, mode="word", max_vocab=None, source=""):
        texts = [t for t in texts if t.strip()]
        if not texts:
            raise InvalidInputError("corpus is empty")
        if vocabulary is None:
            vocabulary = Vocabulary.from_texts(texts, mode=mode, max_size=max_vocab)
        docs = [vocabulary.encode(t) for t in texts]
        docs = [d for d in docs if d.size]
        return cls(docs, vocabulary, source=source, texts=texts)

    @classmethod
    def from_file(cls, path, vocabulary=None, mode="word", max_vocab=None):
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"corpus not found: {path}")
        return cls.from_texts(read_corpus(path), vocabulary, mode, max_vocab, source=str(path))

    def split(self, held_out=0.2):
        """Deterministic split: every ``round(1/held_out)``-th document is held out."""
        step = max(2, int(round(1.0 / held_out)))
        train = [d for i, d in enumerate(self.documents) if i % step != step - 1]
        test = [d for i, d in enumerate(self.documents) if i % step == step - 1]
        return (Corpus(train, self.vocabulary, self.source + "#train"),
                Corpus(test, self.vocabulary, self.source + "#heldout"))

    def token_counts(self):
        counts = np.zeros(self.vocabulary.size, dtype=np.int64)
        for d in self.documents:
            np.add.at(counts, d, 1)
        return counts

    def __len__(self):
        return len(self.documents)


class NGramLanguageModel(BaseEstimator):
    """Add-k smoothed n-gram model.

    For a context ``c`` the model looks at its last ``min(order - 1, len(c))``
    tokens ``h`` and predicts ``P(w | h) = (count(h, w) + k) / (count(h) + k|V|)``.
    Count tables exist for every history length from 0 to ``order - 1``, so
    an empty context falls back to the unigram table and an unseen history
    yields the uniform distribution.  With ``backoff=True`` an unseen
    history is shortened until a seen one is found instead.

    Softmax is invariant to adding a constant to the logits, but
    multiplicative logit perturbations are not, so the constant matters.
    ``logit_mode="counts"`` (default) returns ``log(count(h, w) + k)``, the
    unnormalized log-counts: seen continuations get logits near
    ``log count`` and unseen ones ``log k``.  ``logit_mode="shift"`` returns
    ``log P(w | h) - min_w log P(w | h)``, which is non-negative everywhere
    and makes a multiplicative perturbation much stronger.
    """

    def __init__(self, order=3, k=0.5, backoff=False, vocabulary=None, role="generator",
                 logit_mode="counts"):
        self.order = order
        self.logit_mode = logit_mode
        self.k = k
        self.backoff = backoff
        self.vocabulary = vocabulary
        self.role = role

    def _validate_params(self):
        if int(self.order) < 1:
            raise InvalidInputError("order must be >= 1")
        if not float(self.k) > 0:
            raise InvalidInputError("smoothing constant k must be > 0")
        if self.role not in ROLES:
            raise InvalidInputError(f"role must be one of {ROLES}")
        if self.logit_mode not in LOGIT_MODES:
            raise InvalidInputError(f"logit_mode must be one of {LOGIT_MODES}")

    def fit(self, X, y=None):
        """Count n-grams in ``X`` (a :class:`Corpus` or a list of id sequences)."""
        self._validate_params()
        if isinstance(X, Corpus):
            if self.vocabulary is None:
                self.vocabulary = X.vocabulary
            docs = X.documents
        else:
            docs = list(X)
        if self.vocabulary is None:
            raise InvalidInputError("a vocabulary is required to fit on raw id sequences")
        if not docs:
            raise InvalidInputError("corpus is empty")
        V = self.vocabulary.size
        tables = [defaultdict(Counter) for _ in range(int(self.order))]
        for doc in docs:
            ids = check_token_ids(doc, V).tolist()
            for i, w in enumerate(ids):
                for j in range(min(i, int(self.order) - 1) + 1):
                    tables[j][tuple(ids[i - j:i])][w] += 1
        self._set_tables(tables)
        return self

    def _set_tables(self, tables):
        self.tables_ = []
        for table in tables:
            frozen = {}
            for ctx, counter in table.items():
                toks = np.fromiter(sorted(counter), dtype=np.int64, count=len(counter))
                cnts = np.array([counter[t] for t in toks.tolist()], dtype=np.float64)
                frozen[ctx] = (toks, cnts, float(cnts.sum()))
            self.tables_.append(frozen)
        self.vocab_size_ = self.vocabulary.size
        self._cache = {}
        self._entropy_cache = {}

    @property
    def vocab_hash(self):
        return self.vocabulary.vocab_hash

    def _history(self, context):
        n = int(self.order) - 1
        ctx = tuple(int(c) for c in (context[-n:] if n > 0 else ()))
        if len(context) < n:
            ctx = tuple(int(c) for c in context)
        if self.backoff:
            while ctx and ctx not in self.tables_[len(ctx)]:
                ctx = ctx[1:]
        return ctx

    def _log_probs(self, hist):
        row = self._cache.get(hist)
        if row is not None:
            return row
        V = self.vocab_size_
        k = float(self.k)
        toks, cnts, total = self.tables_[len(hist)].get(hist, (None, None, 0.0))
        denom = total + k * V
        p = np.full(V, k / denom)
        if toks is not None:
            p[toks] += cnts / denom
        row = np.log(p)
        row.setflags(write=False)
        if len(self._cache) > 50_000:
            self._cache.clear()
        self._cache[hist] = row
        return row

    def next_log_proba(self, context=()):
        check_is_fitted(self, "tables_")
        return self._log_probs(self._history(context))

    def next_proba(self, context=()):
        return np.exp(self.next_log_proba(context))

    def next_logits(self, context=()):
        logp = self.next_log_proba(context)
        if self.logit_mode == "counts":
            hist = self._history(context)
            total = self.tables_[len(hist)].get(hist, (None, None, 0.0))[2]
            return logp + math.log(total + float(self.k) * self.vocab_size_)
        return logp - logp.min()

    def entropy(self, context=()):
        """Shannon entropy (nats) of the next-token distribution."""
        check_is_fitted(self, "tables_")
        hist = self._history(context)
        h = self._entropy_cache.get(hist)
        if h is None:
            h = entropy_from_logits(self._log_probs(hist))
            if len(self._entropy_cache) > 200_000:
                self._entropy_cache.clear()
            self._entropy_cache[hist] = h
        return h

    def log_likelihood(self, text, prefix=()):
        """Per-token log-probabilities of ``text`` given ``prefix``."""
        check_is_fitted(self, "tables_")
        ids = check_token_ids(text, self.vocab_size_).tolist()
        ctx = [int(c) for c in prefix]
        out = np.empty(len(ids))
        for i, w in enumerate(ids):
            out[i] = self._log_probs(self._history(ctx))[w]
            ctx.append(w)
        return out

    def perplexity(self, text, prefix=()):
        """``exp`` of the mean negative log-likelihood over the tokens of ``text``."""
        if len(text) == 0:
            raise InvalidInputError("perplexity of an empty text is undefined")
        return float(math.exp(-self.log_likelihood(text, prefix).mean()))

    # persistence -------------------------------------------------------
    def to_bytes(self):
        check_is_fitted(self, "tables_")
        entries = []
        for table in self.tables_:
            for ctx in sorted(table):
                toks, cnts, _ = table[ctx]
                for t, c in zip(toks.tolist(), cnts.tolist()):
                    entries.append((len(ctx),) + ctx + (t, int(c)))
        out = bytearray(MAGIC)
        out += struct.pack("<QqdQqq", FORMAT_VERSION, int(self.order), float(self.k),
                           self.vocab_hash, self.vocab_size_, len(entries))
        out += struct.pack("<?B", bool(self.backoff), LOGIT_MODES.index(self.logit_mode))
        out += self.role.encode("ascii").ljust(16, b"\x00")
        for e in entries:
            out += struct.pack(f"<{len(e)}q", *e)
        return bytes(out)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data, vocabulary):
        if data[:8] != MAGIC:
            raise InvalidInputError("not an n-gram model file")
        off = 8
        version, order, k, vhash, vsize, n = struct.unpack_from("<QqdQqq", data, off)
        off += struct.calcsize("<QqdQqq")
        if version != FORMAT_VERSION:
            raise InvalidInputError(f"unsupported model format version {version}")
        backoff, mode = struct.unpack_from("<?B", data, off)
        off += 2
        if mode >= len(LOGIT_MODES):
            raise InvalidInputError("corrupt n-gram model header")
        role = data[off:off + 16].rstrip(b"\x00").decode("ascii")
        off += 16
        if vocabulary.vocab_hash != vhash or vocabulary.size != vsize:
            from .validation import VocabularyMismatchError
            raise VocabularyMismatchError("model file was trained on a different vocabulary")
        tables = [defaultdict(Counter) for _ in range(order)]
        for _ in range(n):
            (clen,) = struct.unpack_from("<q", data, off)
            vals = struct.unpack_from(f"<{clen + 3}q", data, off)
            off += 8 * (clen + 3)
            ctx = tuple(vals[1:1 + clen])
            tables[clen][ctx][vals[1 + clen]] = vals[2 + clen]
        model = cls(order=order, k=k, backoff=backoff, vocabulary=vocabulary, role=role,
                    logit_mode=LOGIT_MODES[mode])
        model._set_tables(tables)
        return model

    @classmethod
    def load(cls, path, vocabulary):
        return cls.from_bytes(Path(path).read_bytes(), vocabulary)


def train_ngram(corpus, order=3, k=0.5, role="generator", backoff=False, logit_mode="counts"):
    return NGramLanguageModel(order=order, k=k, backoff=backoff, role=role,
                              logit_mode=logit_mode).fit(corpus)

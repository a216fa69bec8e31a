"""Input validation helpers shared by every estimator in the package."""

import numpy as np
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

__all__ = [
    "InvalidInputError",
    "VocabularyMismatchError",
    "NotFittedError",
    "check_is_fitted",
    "check_logits",
    "check_probs",
    "check_token_ids",
    "check_same_vocab",
]


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class VocabularyMismatchError(InvalidInputError):
    """Raised when two models disagree on their vocabulary."""


def check_logits(logits, size=None):
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] == 0:
        raise InvalidInputError(f"logits must be a non-empty 1-D vector, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise InvalidInputError(f"logits length {arr.shape[0]} != vocabulary size {size}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("logits contain non-finite values")
    return arr


def check_probs(probs, atol=1e-9):
    arr = np.asarray(probs, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] == 0:
        raise InvalidInputError("probabilities must be a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise InvalidInputError("probabilities must be finite and non-negative")
    total = arr.sum()
    if abs(total - 1.0) > atol:
        raise InvalidInputError(f"probabilities sum to {total!r}, expected 1")
    return arr


def check_token_ids(ids, vocab_size, allow_empty=True, name="tokens"):
    """Return ``ids`` as an int64 array after range checking."""
    arr = np.asarray(list(ids) if not isinstance(ids, np.ndarray) else ids, dtype=np.int64)
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be a flat sequence of token ids")
    if not allow_empty and arr.size == 0:
        raise InvalidInputError(f"{name} must not be empty")
    if arr.size and (arr.min() < 0 or arr.max() >= vocab_size):
        raise InvalidInputError(f"{name} contain ids outside [0, {vocab_size})")
    return arr


def check_same_vocab(*models):
    """All models must expose the same ``vocab_hash``."""
    hashes = {m.vocab_hash for m in models if m is not None}
    if len(hashes) > 1:
        raise VocabularyMismatchError(f"models were built on different vocabularies: {sorted(hashes)}")

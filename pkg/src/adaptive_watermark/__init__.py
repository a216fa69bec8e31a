"""Adaptive watermarking for language-model text.

Tokens are watermarked only where a small measurement model finds the
next-token distribution uncertain.  At those positions a trained mapping
network turns the meaning of the preceding text into a green list, and
the green logits are scaled up.
"""

from .core import SamplerParams, Vocabulary, filter_topk_topp, sample, shannon_entropy, softmax
from .evaluation import (
    ExperimentSpec,
    MetricsReport,
    ModelBundle,
    ScoredSample,
    awr,
    best_f1,
    repetition_rate,
    roc_auc,
    run_experiment,
    tpr_at_fpr,
)
from .lm import Corpus, NGramLanguageModel, train_ngram
from .redteam import ParaphraseParams, SpoofConfig, adaptive_spoof, kgw_spoof, paraphrase_attack, spoof_attack
from .rng import Xoshiro256, derive_seed
from .semantics import SemanticMapper, SentenceEmbedder, train_mapper
from .validation import InvalidInputError, NotFittedError, VocabularyMismatchError
from .watermark import (
    AdaptiveWatermarkDetector,
    AdaptiveWatermarkGenerator,
    DetectionReport,
    GenerationTrace,
    KGWDetector,
    KGWParams,
    WatermarkParams,
    awts_perturb,
    detect,
    generate,
    generate_plain,
    kgw_detect,
    kgw_generate,
)

__version__ = "0.1.0"

"""Command-line front end.

Every subcommand reads an optional INI config (``--config``); any flag
given on the command line overrides the file.  One global ``--seed`` fans
out to every randomized step through labelled derivation, so single steps
can be rerun in isolation with unchanged results.

Exit codes: 0 success, 2 usage error, 3 input error, 4 model mismatch,
5 inconclusive detection.
"""

import argparse
import configparser
import datetime
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .core import SamplerParams, Vocabulary
from .datasets import make_synthetic_corpus, write_corpus
from .evaluation import ExperimentSpec, ModelBundle, run_experiment
from .lm import Corpus, NGramLanguageModel, train_ngram
from .redteam import ParaphraseParams, SpoofConfig, adaptive_spoof, kgw_spoof, paraphrase_attack, successor_counts
from .rng import derive_seed
from .semantics import SemanticMapper, SentenceEmbedder
from .validation import InvalidInputError, VocabularyMismatchError
from .watermark import (
    AdaptiveWatermarkDetector,
    AdaptiveWatermarkGenerator,
    KGWParams,
    WatermarkParams,
)

log = logging.getLogger("adaptive_watermark")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_MISMATCH, EXIT_INCONCLUSIVE = 0, 2, 3, 4, 5

# section -> key -> (type, default)
DEFAULTS = {
    "paths": {
        "corpus": (str, None), "models": (str, "models"), "opening_sentence_file": (str, None),
        "out": (str, "out"),
    },
    "corpus": {"mode": (str, "word"), "max_vocab": (int, 0), "held_out": (float, 0.2),
               "synthetic_docs": (int, 3000)},
    "lm": {"order": (int, 3), "k": (float, 0.01), "mm_order": (int, 2), "mm_k": (float, 0.01),
           "logit_mode": (str, "counts")},
    "mapper": {"dim": (int, 64), "window": (int, 16), "hidden": (int, 256), "epochs": (int, 20),
               "learning_rate": (float, 1e-2), "batch_size": (int, 128), "n_sentences": (int, 4096),
               "activation": (str, "relu")},
    "watermark": {"alpha": (float, 3.5), "delta": (float, 1.5), "measure_threshold": (int, 50),
                  "top_k": (int, 50), "top_p": (float, 0.9), "max_tokens": (int, 200)},
    "kgw": {"gamma": (float, 0.5), "delta_add": (float, 2.0), "key": (int, 15485863)},
    "experiment": {"n_per_class": (int, 100), "length": (int, 200), "length_jitter": (int, 30),
                   "seeds": (str, "0"), "scheme": (str, "adaptive"), "edit_rate": (float, 0.0),
                   "shuffle_window": (int, 2), "prompt_length": (int, 10)},
    "spoof": {"n_generations": (int, 5000), "pool_size": (int, 181), "top_h": (int, 50),
              "mode": (str, "fixed-embedding"), "length": (int, 60), "scheme": (str, "adaptive")},
}

# command-line flag -> (section, key)
FLAG_KEYS = {
    "corpus": ("paths", "corpus"), "models": ("paths", "models"),
    "opening_sentence_file": ("paths", "opening_sentence_file"), "out": ("paths", "out"),
    "alpha": ("watermark", "alpha"), "delta": ("watermark", "delta"),
    "measure_threshold": ("watermark", "measure_threshold"), "top_k": ("watermark", "top_k"),
    "top_p": ("watermark", "top_p"), "max_tokens": ("watermark", "max_tokens"),
    "order": ("lm", "order"), "scheme": ("experiment", "scheme"),
    "n_per_class": ("experiment", "n_per_class"), "edit_rate": ("experiment", "edit_rate"),
    "n_generations": ("spoof", "n_generations"), "spoof_mode": ("spoof", "mode"),
    "spoof_scheme": ("spoof", "scheme"), "epochs": ("mapper", "epochs"),
}


class CLIError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


def load_config(path=None, overrides=None):
    """Resolved config as a nested dict of typed values."""
    parser = configparser.ConfigParser()
    if path is not None:
        if not Path(path).exists():
            raise CLIError(f"config not found: {path}")
        parser.read(path, encoding="utf-8")
    cfg = {"seed": 0}
    if parser.has_option("DEFAULT", "seed"):
        cfg["seed"] = parser.getint("DEFAULT", "seed")
    for section, keys in DEFAULTS.items():
        cfg[section] = {}
        for key, (typ, default) in keys.items():
            raw = parser.get(section, key, fallback=None)
            cfg[section][key] = default if raw in (None, "") else typ(raw)
    if parser.has_section("global") and parser.has_option("global", "seed"):
        cfg["seed"] = parser.getint("global", "seed")
    for flag, value in (overrides or {}).items():
        if value is None:
            continue
        if flag == "seed":
            cfg["seed"] = int(value)
        elif flag in FLAG_KEYS:
            section, key = FLAG_KEYS[flag]
            cfg[section][key] = value
    return cfg


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def record_manifest(out_dir, paths, command, cfg):
    """Append provenance entries to ``manifest.json`` in ``out_dir``."""
    mf = Path(out_dir) / "manifest.json"
    entries = json.loads(mf.read_text()) if mf.exists() else []
    now = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    names = {Path(p).name for p in paths}
    entries = [e for e in entries if e["path"] not in names]
    for p in paths:
        entries.append({"path": Path(p).name, "sha256": file_sha256(p), "command": command,
                        "config_sha256": config_hash(cfg), "timestamp": now})
    mf.write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n")


# loading helpers ----------------------------------------------------------
def _models_dir(cfg):
    return Path(cfg["paths"]["models"])


def _writable_dir(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CLIError(f"cannot create output directory {path}: {exc}") from exc
    return path


def load_vocabulary(cfg):
    p = _models_dir(cfg) / "vocab.txt"
    if not p.exists():
        raise CLIError(f"vocabulary not found: {p} (run train-lm first)")
    return Vocabulary.load(p, mode=cfg["corpus"]["mode"])


def load_lm(cfg, name, vocab):
    p = _models_dir(cfg) / f"{name}.bin"
    if not p.exists():
        raise CLIError(f"model not found: {p} (run train-lm first)")
    return NGramLanguageModel.load(p, vocab)


def load_mapper(cfg, vocab, path=None):
    p = Path(path) if path else _models_dir(cfg) / "mapper.bin"
    if not p.exists():
        raise CLIError(f"mapper not found: {p} (run train-mapper first)")
    m = SemanticMapper.load(p, expected_vocab_hash=vocab.vocab_hash)
    if m.vocab_size_ != vocab.size:
        raise VocabularyMismatchError(f"mapper output size {m.vocab_size_} != vocabulary size {vocab.size}")
    return m


def load_corpus(cfg, vocab=None):
    path = cfg["paths"]["corpus"]
    if not path:
        raise CLIError("no corpus given (--corpus or [paths] corpus)")
    max_vocab = cfg["corpus"]["max_vocab"] or None
    return Corpus.from_file(path, vocabulary=vocab, mode=cfg["corpus"]["mode"], max_vocab=max_vocab)


def read_opening(cfg, args, vocab):
    inline = getattr(args, "opening_sentence", None)
    if inline is not None:
        if not getattr(args, "allow_inline_secret", False):
            raise CLIError("--opening-sentence exposes the secret in shell history; "
                           "pass --allow-inline-secret to use it anyway", EXIT_USAGE)
        text = inline
    else:
        path = cfg["paths"]["opening_sentence_file"]
        if cfg["watermark"]["measure_threshold"] == 0 and not path:
            return ()
        if not path:
            raise CLIError("an opening sentence file is required (--opening-sentence-file)")
        if not Path(path).exists():
            raise CLIError(f"opening sentence file not found: {path}")
        text = Path(path).read_text(encoding="utf-8").strip()
    ids = vocab.encode(text)
    if ids.size == 0:
        raise CLIError("the opening sentence is empty")
    return tuple(int(i) for i in ids)


def watermark_params(cfg, opening):
    w = cfg["watermark"]
    return WatermarkParams(alpha=w["alpha"], delta=w["delta"], measure_threshold=w["measure_threshold"],
                           opening=opening, sampler=SamplerParams(w["top_k"], w["top_p"]),
                           max_tokens=w["max_tokens"])


def kgw_params(cfg, scheme):
    k = cfg["kgw"]
    return KGWParams(gamma=k["gamma"], delta_add=k["delta_add"], scheme=scheme, key=k["key"])


def read_texts(path, vocab):
    p = Path(path)
    if not p.exists():
        raise CLIError(f"text file not found: {p}")
    lines = [ln for ln in p.read_text(encoding="utf-8").split("\n") if ln.strip()]
    return [vocab.encode(ln) for ln in lines]


def _prompts(cfg, vocab):
    corpus = load_corpus(cfg, vocab)
    _, held = corpus.split(cfg["corpus"]["held_out"])
    n = cfg["experiment"]["prompt_length"]
    return [d[:n] for d in held.documents if d.size >= n] or [held.documents[0]]


def attacker_neighbors(cfg, vocab):
    """Substitution table from an embedding space the defender does not own."""
    emb = SentenceEmbedder(vocab.size, cfg["mapper"]["dim"], seed=derive_seed(cfg["seed"], "attacker-embedder"))
    return emb.fit().nearest_neighbors()


# subcommands ----------------------------------------------------------------
def cmd_make_corpus(cfg, args):
    out = Path(args.path)
    _writable_dir(out.parent)
    write_corpus(out, make_synthetic_corpus(cfg["corpus"]["synthetic_docs"], seed=cfg["seed"]))
    print(out)
    return EXIT_OK


def cmd_train_lm(cfg, args):
    corpus = load_corpus(cfg)
    train, held = corpus.split(cfg["corpus"]["held_out"])
    out = _writable_dir(_models_dir(cfg))
    L = cfg["lm"]
    vocab_path = out / "vocab.txt"
    corpus.vocabulary.save(vocab_path)
    models = {
        "lm": train_ngram(train, L["order"], L["k"], "generator", logit_mode=L["logit_mode"]),
        "mm": train_ngram(train, L["mm_order"], L["mm_k"], "measurement", logit_mode=L["logit_mode"]),
        "evaluator": train_ngram(held, L["order"], L["k"], "evaluator", logit_mode=L["logit_mode"]),
    }
    paths = [vocab_path]
    for name, m in models.items():
        p = out / f"{name}.bin"
        m.save(p)
        paths.append(p)
    record_manifest(out, paths, "train-lm", cfg)
    log.info("trained n-gram models on %d documents (|V|=%d)", len(train), corpus.vocabulary.size)
    print(json.dumps({"vocab_size": corpus.vocabulary.size, "train_docs": len(train),
                      "held_out_docs": len(held)}, sort_keys=True))
    return EXIT_OK


def cmd_train_mapper(cfg, args):
    vocab = load_vocabulary(cfg)
    corpus = load_corpus(cfg, vocab)
    train, _ = corpus.split(cfg["corpus"]["held_out"])
    M = cfg["mapper"]
    window = M["window"] or None
    emb = SentenceEmbedder(vocab.size, M["dim"], seed=derive_seed(cfg["seed"], "embedder"), window=window)
    span = (max(1, window // 2), window) if window else (8, 24)
    mapper = SemanticMapper(emb, hidden=M["hidden"], activation=M["activation"], batch_size=M["batch_size"],
                            learning_rate=M["learning_rate"], epochs=M["epochs"], span_length=span,
                            n_sentences=M["n_sentences"], seed=derive_seed(cfg["seed"], "mapper-train"))
    mapper.fit(train)
    out = _writable_dir(_models_dir(cfg))
    p = out / "mapper.bin"
    mapper.save(p, vocab_hash=vocab.vocab_hash)
    record_manifest(out, [p], "train-mapper", cfg)
    print(json.dumps({"final_loss": round(float(mapper.loss_history_[-1]), 6)}))
    return EXIT_OK


def cmd_generate(cfg, args):
    vocab = load_vocabulary(cfg)
    lm, mm = load_lm(cfg, "lm", vocab), load_lm(cfg, "mm", vocab)
    mapper = load_mapper(cfg, vocab)
    wp = watermark_params(cfg, read_opening(cfg, args, vocab))
    if args.prompt_file:
        prompts = read_texts(args.prompt_file, vocab)
    else:
        prompts = [vocab.encode(args.prompt or "")]
    gen = AdaptiveWatermarkGenerator(lm, mm, mapper, wp)
    out = _writable_dir(cfg["paths"]["out"])
    lines, traces = [], []
    for i in range(args.n):
        prompt = prompts[i % len(prompts)]
        tr = gen.generate(prompt, derive_seed(cfg["seed"], f"gen:{i}"), wp.max_tokens)
        lines.append(vocab.decode(tr.tokens))
        traces.append(tr.to_dict())
    (out / "generated.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "traces.json").write_text(json.dumps(traces, sort_keys=True) + "\n", encoding="utf-8")
    record_manifest(out, [out / "generated.txt", out / "traces.json"], "generate", cfg)
    for ln in lines:
        print(ln)
    return EXIT_OK


def cmd_detect(cfg, args):
    vocab = load_vocabulary(cfg)
    mm = load_lm(cfg, "mm", vocab)
    mapper = load_mapper(cfg, vocab, args.mapper)
    wp = watermark_params(cfg, read_opening(cfg, args, vocab))
    det = AdaptiveWatermarkDetector.from_params(mm, mapper, wp, threshold=args.threshold)
    texts = read_texts(args.text, vocab)
    if not texts:
        raise CLIError("no text to score")
    reports = [det.detect(t) for t in texts]
    thr = 0.5 * wp.delta if args.threshold is None else args.threshold
    for rep in reports:
        if rep.status == "ok":
            verdict = "watermarked" if rep.score >= thr else "not-watermarked"
            print(f"{rep.score:.6f}\t{rep.status}\t{verdict}")
        else:
            print(f"nan\t{rep.status}\t-")
    if args.report:
        Path(args.report).write_text(json.dumps([r.to_dict() for r in reports], sort_keys=True) + "\n",
                                     encoding="utf-8")
    if all(r.status != "ok" for r in reports):
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def _seeds(cfg):
    return tuple(int(s) for s in str(cfg["experiment"]["seeds"]).replace(",", " ").split())


def cmd_evaluate(cfg, args):
    vocab = load_vocabulary(cfg)
    lm, mm, ev = (load_lm(cfg, n, vocab) for n in ("lm", "mm", "evaluator"))
    E = cfg["experiment"]
    scheme = E["scheme"]
    mapper = load_mapper(cfg, vocab) if scheme == "adaptive" else None
    wp = watermark_params(cfg, read_opening(cfg, args, vocab)) if scheme == "adaptive" else None
    attack = None
    if E["edit_rate"] > 0:
        attack = ParaphraseParams.from_edit_rate(E["edit_rate"], seed=derive_seed(cfg["seed"], "attack"),
                                                 shuffle_window=E["shuffle_window"])
    kgw = kgw_params(cfg, scheme if scheme != "adaptive" else "kgw0")
    spec = ExperimentSpec(n_per_class=E["n_per_class"], length=E["length"], length_jitter=E["length_jitter"],
                          seeds=_seeds(cfg), scheme=scheme, watermark=wp, kgw=kgw, attack=attack)
    bundle = ModelBundle(lm, mm, mapper, ev, _prompts(cfg, vocab),
                         attacker_neighbors(cfg, vocab) if attack else None)
    report = run_experiment(spec, bundle)
    out = _writable_dir(cfg["paths"]["out"])
    report.write(out / "report.json", out / "samples.csv", out / "roc.csv", out / "timing.json")
    record_manifest(out, [out / "report.json", out / "samples.csv", out / "roc.csv"], "evaluate", cfg)
    print(json.dumps({"roc_auc": round(report.roc_auc, 6), "best_f1": round(report.best_f1, 6)}, sort_keys=True))
    return EXIT_OK


def cmd_attack(cfg, args):
    vocab = load_vocabulary(cfg)
    mm = load_lm(cfg, "mm", vocab)
    texts = read_texts(args.text, vocab)
    rate = cfg["experiment"]["edit_rate"] or 0.2
    nb = attacker_neighbors(cfg, vocab)
    out = _writable_dir(cfg["paths"]["out"])
    lines = []
    for i, t in enumerate(texts):
        pp = ParaphraseParams.from_edit_rate(rate, seed=derive_seed(cfg["seed"], f"attack:{i}"),
                                             shuffle_window=cfg["experiment"]["shuffle_window"])
        lines.append(vocab.decode(paraphrase_attack(t, pp, nb, mm)))
    p = out / "attacked.txt"
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    record_manifest(out, [p], "attack", cfg)
    print(p)
    return EXIT_OK


def cmd_spoof(cfg, args):
    vocab = load_vocabulary(cfg)
    lm, mm = load_lm(cfg, "lm", vocab), load_lm(cfg, "mm", vocab)
    S = cfg["spoof"]
    corpus = load_corpus(cfg, vocab)
    train, _ = corpus.split(cfg["corpus"]["held_out"])
    prompts = _prompts(cfg, vocab)
    scheme = S["scheme"]
    mode = S["mode"] if scheme == "adaptive" else "fixed-prefix"
    sc = SpoofConfig(S["n_generations"], S["pool_size"], S["top_h"], mode, S["length"],
                     derive_seed(cfg["seed"], "spoof"))
    counts = train.token_counts()
    if scheme == "adaptive":
        wp = watermark_params(cfg, read_opening(cfg, args, vocab))
        res = adaptive_spoof(lm, mm, load_mapper(cfg, vocab), wp, prompts, counts, sc)
    else:
        kp = kgw_params(cfg, scheme)
        prefix = int(np.argmax(counts)) if scheme == "kgw1" else None
        if prefix is not None:
            counts = successor_counts(train.documents, prefix, vocab.size)
        res = kgw_spoof(lm, kp, prompts, counts, sc, prefix)
    out = _writable_dir(cfg["paths"]["out"])
    p = out / "spoof.json"
    p.write_text(json.dumps(dict(res.to_dict(), scheme=scheme, mode=mode), sort_keys=True) + "\n",
                 encoding="utf-8")
    record_manifest(out, [p], "spoof", cfg)
    print(json.dumps({"decryption_rate": round(res.decryption_rate, 6), "scheme": scheme}))
    return EXIT_OK


COMMANDS = {
    "make-corpus": cmd_make_corpus, "train-lm": cmd_train_lm, "train-mapper": cmd_train_mapper,
    "generate": cmd_generate, "detect": cmd_detect, "evaluate": cmd_evaluate, "attack": cmd_attack,
    "spoof": cmd_spoof,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--corpus")
    common.add_argument("--models", help="directory holding vocab.txt and model files")
    common.add_argument("--out", help="output directory")
    common.add_argument("--alpha", type=float)
    common.add_argument("--delta", type=float)
    common.add_argument("--measure-threshold", type=int)
    common.add_argument("--opening-sentence-file")
    common.add_argument("--opening-sentence", help="inline secret (needs --allow-inline-secret)")
    common.add_argument("--allow-inline-secret", action="store_true")
    common.add_argument("--top-k", type=int)
    common.add_argument("--top-p", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="adaptive-watermark", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("make-corpus", parents=[common], help="write the synthetic corpus")
    s.add_argument("path")
    s = sub.add_parser("train-lm", parents=[common], help="train generator, measurement and evaluator models")
    s.add_argument("--order", type=int)
    s = sub.add_parser("train-mapper", parents=[common], help="train the semantic mapper")
    s.add_argument("--epochs", type=int)
    s = sub.add_parser("generate", parents=[common], help="generate watermarked text")
    s.add_argument("--prompt", default="")
    s.add_argument("--prompt-file")
    s.add_argument("-n", type=int, default=1)
    s.add_argument("--max-tokens", type=int)
    s = sub.add_parser("detect", parents=[common], help="score texts (one per line)")
    s.add_argument("text")
    s.add_argument("--mapper", help="mapper file (default: <models>/mapper.bin)")
    s.add_argument("--threshold", type=float)
    s.add_argument("--report", help="write per-text JSON reports here")
    s = sub.add_parser("evaluate", parents=[common], help="run a detection experiment")
    s.add_argument("--scheme", choices=("adaptive", "kgw0", "kgw1"))
    s.add_argument("--n-per-class", type=int)
    s.add_argument("--edit-rate", type=float)
    s = sub.add_parser("attack", parents=[common], help="paraphrase texts (one per line)")
    s.add_argument("text")
    s.add_argument("--edit-rate", type=float)
    s = sub.add_parser("spoof", parents=[common], help="frequency-analysis spoofing attack")
    s.add_argument("--spoof-scheme", choices=("adaptive", "kgw0", "kgw1"))
    s.add_argument("--spoof-mode", choices=("fixed-embedding", "standard"))
    s.add_argument("--n-generations", type=int)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, vars(args))
        return COMMANDS[args.command](cfg, args)
    except VocabularyMismatchError as exc:
        print(f"error: model mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InvalidInputError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

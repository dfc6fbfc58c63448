"""Command-line entry point.

Subcommands: generate, featurize, train, evaluate, search, report.
Configuration comes from a single key-value text file (``key = value`` per
line, ``#`` comments) plus ``--set key=value`` flag overrides; all
randomness flows from the one top-level ``seed`` through named sub-seeds.
Outputs are machine-first (CSV/JSON) with figures rendered next to them;
every artifact carries the corpus hash in a sidecar so reports refuse to
mix incompatible runs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import baselines, corpus as corpus_mod, features, kwsio, network, plotting, spotting, trainer
from .corpus import Corpus, SyntheticConfig, generate_synthetic, load_manifest, save_manifest, select_keywords
from .stemming import get_stemmer
from .targets import Vocabulary, build_vocabulary, load_tag_vectors, save_tag_vectors

SUBSEEDS = {"corpus": 0, "init": 1, "shuffle": 2, "tagger": 3, "keywords": 4}


def derive_seed(seed, name):
    return [int(seed), SUBSEEDS[name]]


# ---------------------------------------------------------------------------
# configuration


DEFAULTS = {
    "seed": 0,
    "stemmer": "identity",
    "standardize": False,
    "vocab_size": 0,  # 0 = use the full synthetic query vocabulary
    "keywords.n": 10,
    "keywords.min_occurrences": 1,
    "keywords.file": "",
    "rankings.top_k": 10,
}
for f_ in SyntheticConfig.__dataclass_fields__:
    if f_ != "seed":
        v = getattr(SyntheticConfig(), f_)
        DEFAULTS[f"synthetic.{f_}"] = list(v) if isinstance(v, tuple) else v
for f_ in features.FeatureConfig.__dataclass_fields__:
    DEFAULTS[f"features.{f_}"] = getattr(features.FeatureConfig(), f_)
for f_ in trainer.TrainConfig.__dataclass_fields__:
    if f_ != "seed":
        DEFAULTS[f"train.{f_}"] = getattr(trainer.TrainConfig(), f_)


class ConfigError(ValueError):
    pass


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None, overrides=()):
    """Resolved flat config dict plus the set of explicitly provided keys."""
    resolved = dict(DEFAULTS)
    provided = set()
    if path:
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, value = (part.strip() for part in line.split("=", 1))
                if key not in DEFAULTS:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                resolved[key] = _parse_value(value)
                provided.add(key)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        resolved[key] = _parse_value(value)
        provided.add(key)
    return resolved, provided


def synthetic_config(cfg):
    kwargs = {}
    for f_ in SyntheticConfig.__dataclass_fields__:
        if f_ == "seed":
            continue
        v = cfg[f"synthetic.{f_}"]
        kwargs[f_] = tuple(v) if isinstance(v, list) else v
    seed_list = derive_seed(cfg["seed"], "corpus")
    # SeedSequence-style list seeds collapse to one int for storage
    kwargs["seed"] = int(
        np.random.SeedSequence(seed_list).generate_state(1, np.uint32)[0]
    )
    return SyntheticConfig(**kwargs)


def feature_config(cfg):
    return features.FeatureConfig(
        **{f_: cfg[f"features.{f_}"] for f_ in features.FeatureConfig.__dataclass_fields__}
    )


def train_config(cfg, provided, data_dir=None):
    kwargs = {
        f_: cfg[f"train.{f_}"]
        for f_ in trainer.TrainConfig.__dataclass_fields__
        if f_ != "seed"
    }
    kwargs["seed"] = int(cfg["seed"])
    if "train.pad_frames" not in provided and data_dir:
        meta = _read_corpus_meta(data_dir)
        if meta and "pad_frames" in meta:
            kwargs["pad_frames"] = meta["pad_frames"]
    return trainer.TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# artifacts


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_corpus_meta(data_dir):
    try:
        with open(os.path.join(data_dir, "corpus_meta.json"), encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        return None


def _corpus_hash(data_dir):
    meta = _read_corpus_meta(data_dir)
    if meta and "corpus_hash" in meta:
        return meta["corpus_hash"]
    return _sha256_file(os.path.join(data_dir, "manifest.jsonl"))


class OutputLock:
    """Guards an output directory against concurrent mutation."""

    def __init__(self, out_dir):
        self.path = os.path.join(out_dir, ".xlkws.lock")

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"output directory is locked by {self.path}; remove the lock "
                "file if no other run is active"
            ) from None
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            os.remove(self.path)
        except FileNotFoundError:
            pass
        return False


def _write_sidecar(path, corpus_hash, cfg):
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as f:
        json.dump({"corpus_hash": corpus_hash, "seed": cfg["seed"]}, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# data loading helpers


def _load_data_dir(data_dir):
    manifest = os.path.join(data_dir, "manifest.jsonl")
    corpus = load_manifest(manifest)
    vocab_path = os.path.join(data_dir, "vocab.txt")
    vocab = None
    if os.path.exists(vocab_path):
        with open(vocab_path, encoding="utf-8") as f:
            vocab = Vocabulary(tuple(line.strip() for line in f if line.strip()))
    lexicon = None
    lex_path = os.path.join(data_dir, "lexicon.json")
    if os.path.exists(lex_path):
        with open(lex_path, encoding="utf-8") as f:
            lexicon = {k: tuple(v) for k, v in json.load(f).items()}
    tag_vectors = None
    tags_path = os.path.join(data_dir, "tags.kwsf")
    if os.path.exists(tags_path) and vocab is not None:
        tag_vectors = load_tag_vectors(tags_path, vocab)
    return corpus, vocab, lexicon, tag_vectors


def _apply_standardization(corpus):
    train_frames = [r.get_frames() for r in corpus.split("train")]
    mean, std = features.compute_standardizer(train_frames)
    for rec in corpus.records():
        rec.frames = features.standardize(rec.get_frames(), mean, std)


def _keywords(cfg, vocab, corpus, stemmer):
    if cfg["keywords.file"]:
        with open(cfg["keywords.file"], encoding="utf-8") as f:
            return [line.strip() for line in f if line.strip()]
    dev_refs = [r.translation for r in corpus.split("dev")]
    return select_keywords(
        vocab,
        dev_refs,
        n=int(cfg["keywords.n"]),
        min_occurrences=int(cfg["keywords.min_occurrences"]),
        seed=derive_seed(cfg["seed"], "keywords"),
        stemmer=stemmer,
    )


def _build_scorer(kind, checkpoint, corpus, vocab, tag_vectors, cfg, provided,
                  data_dir, stemmer):
    if kind == baselines.DE_TEXT_PRIOR:
        refs = [r.translation for r in corpus.split("train")]
        return baselines.prior_scorer(refs, vocab, stemmer)
    if kind == baselines.DE_VISION_CNN:
        if tag_vectors is None:
            raise ConfigError("de_vision_cnn needs tags.kwsf in the data directory")
        return baselines.vision_scorer(tag_vectors, vocab)
    if kind in baselines.TRAINABLE_KINDS:
        if not checkpoint:
            raise ConfigError(f"--checkpoint required to evaluate {kind}")
        params, meta = network.load_params(checkpoint)
        meta = meta or {}
        words = meta.get("words") or list(vocab.words)
        pad_frames = meta.get("pad_frames")
        if pad_frames is None:
            pad_frames = train_config(cfg, provided, data_dir).pad_frames
        return baselines.NetworkScorer(params, words, name=kind, pad_frames=pad_frames)
    raise ConfigError(f"unknown scorer kind {kind!r}; options: {baselines.SCORER_KINDS}")


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args):
    cfg, _ = load_config(args.config, args.set or ())
    out = args.out
    os.makedirs(out, exist_ok=True)
    with OutputLock(out):
        syn = synthetic_config(cfg)
        corpus, lexicon, tag_vectors = generate_synthetic(syn)
        vocab = corpus_mod.query_vocabulary(lexicon)

        frames_dir = os.path.join(out, "frames")
        os.makedirs(frames_dir, exist_ok=True)
        max_len = 0
        for rec in corpus.records():
            path = os.path.join(frames_dir, rec.id + ".kwsf")
            kwsio.write_frames(path, rec.frames)
            max_len = max(max_len, rec.frames.shape[0])
            rec.frames_path = path
            rec.frames = None
        save_manifest(corpus, os.path.join(out, "manifest.jsonl"), relative_to=out)
        save_tag_vectors(os.path.join(out, "tags.kwsf"), tag_vectors)
        with open(os.path.join(out, "lexicon.json"), "w", encoding="utf-8") as f:
            json.dump({k: list(v) for k, v in lexicon.items()}, f, indent=2, sort_keys=True)
            f.write("\n")
        with open(os.path.join(out, "vocab.txt"), "w", encoding="utf-8") as f:
            f.write("\n".join(vocab.words) + "\n")

        pad = max(max_len, network.DEFAULT_SPEC.min_input_length)
        meta = {
            "corpus_hash": _sha256_file(os.path.join(out, "manifest.jsonl")),
            "synthetic_config": {
                k: (list(v) if isinstance(v, tuple) else v)
                for k, v in syn.__dict__.items()
            },
            "seed": cfg["seed"],
            "pad_frames": pad,
        }
        with open(os.path.join(out, "corpus_meta.json"), "w", encoding="utf-8") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
            f.write("\n")
    print(f"generated {len(corpus)} utterances in {out}")
    return 0


def cmd_featurize(args):
    import scipy.io.wavfile

    cfg, _ = load_config(args.config, args.set or ())
    fcfg = feature_config(cfg)
    corpus = load_manifest(args.manifest)
    out = args.out
    os.makedirs(out, exist_ok=True)
    with OutputLock(out):
        frames_dir = os.path.join(out, "frames")
        os.makedirs(frames_dir, exist_ok=True)
        for rec in corpus.records():
            if rec.wav_path is None:
                continue
            rate, samples = scipy.io.wavfile.read(rec.wav_path)
            if rate != fcfg.sample_rate:
                raise ConfigError(
                    f"{rec.wav_path}: sample rate {rate} != configured {fcfg.sample_rate}"
                )
            if samples.dtype.kind == "i":
                samples = samples / float(np.iinfo(samples.dtype).max)
            mfcc = features.extract_mfcc(samples, fcfg)
            full = features.append_deltas(mfcc, fcfg.delta_window)
            path = os.path.join(frames_dir, rec.id + ".kwsf")
            kwsio.write_frames(path, full)
            rec.frames_path = path
            rec.wav_path = None
        save_manifest(corpus, os.path.join(out, "manifest.jsonl"), relative_to=out)
    print(f"featurized corpus written to {out}")
    return 0


def cmd_train(args):
    cfg, provided = load_config(args.config, args.set or ())
    stemmer = get_stemmer(cfg["stemmer"])
    corpus, vocab, lexicon, tag_vectors = _load_data_dir(args.data)
    if vocab is None:
        size = int(cfg["vocab_size"])
        if size <= 0:
            raise ConfigError("vocab_size must be set for corpora without vocab.txt")
        vocab = build_vocabulary(
            [r.translation for r in corpus.split("train")], size
        )
    if cfg["standardize"]:
        _apply_standardization(corpus)
    tcfg = train_config(cfg, provided, args.data)
    keywords = None
    if args.model == baselines.KEY_X_VISION_SPEECH_CNN:
        keywords = _keywords(cfg, vocab, corpus, stemmer)

    out = args.out
    os.makedirs(out, exist_ok=True)
    with OutputLock(out):
        scorer, params, history = baselines.train_variant(
            args.model,
            corpus,
            vocab,
            tcfg,
            tag_vectors=tag_vectors,
            keywords=keywords,
            lexicon=lexicon,
            stemmer=stemmer,
            init_seed=derive_seed(cfg["seed"], "init"),
            log_fn=print if not args.quiet else None,
        )
        corpus_hash = _corpus_hash(args.data)
        ckpt = os.path.join(out, args.model + ".kwsm")
        network.save_params(
            ckpt,
            params,
            extra_metadata={
                "kind": args.model,
                "words": list(scorer.words),
                "corpus_hash": corpus_hash,
                "seed": cfg["seed"],
                "pad_frames": tcfg.pad_frames,
                "best_epoch": history.best_epoch + 1,
            },
        )
        history.write_csv(os.path.join(out, args.model + "_history.csv"))
        plotting.save_history_curve(
            history, os.path.join(out, args.model + "_history.png"), title=args.model
        )
    print(
        f"trained {args.model}: best epoch {history.best_epoch + 1} "
        f"(dev loss {history.dev_loss[history.best_epoch]:.4f}) -> {ckpt}"
    )
    return 0


def cmd_evaluate(args):
    cfg, provided = load_config(args.config, args.set or ())
    stemmer = get_stemmer(cfg["stemmer"])
    corpus, vocab, lexicon, tag_vectors = _load_data_dir(args.data)
    if vocab is None:
        raise ConfigError("evaluate needs vocab.txt in the data directory")
    if cfg["standardize"]:
        _apply_standardization(corpus)
    judge = spotting.RelevanceJudge(stemmer=stemmer)
    keywords = _keywords(cfg, vocab, corpus, stemmer)

    checkpoint = args.checkpoint
    if checkpoint is None and args.model in baselines.TRAINABLE_KINDS:
        candidate = os.path.join(args.out, args.model + ".kwsm")
        if os.path.exists(candidate):
            checkpoint = candidate
    scorer = _build_scorer(
        args.model, checkpoint, corpus, vocab, tag_vectors, cfg, provided,
        args.data, stemmer,
    )
    if scorer.words != vocab.words:
        keywords = [kw for kw in keywords if kw in scorer.words]
        if not keywords:
            raise ConfigError("scorer vocabulary does not cover any selected keyword")

    records = corpus.split(args.split)
    if not records:
        raise ConfigError(f"split {args.split!r} is empty")
    references = {r.id: r.translation for r in records}

    matrix = spotting.score_collection(scorer, records)
    report = spotting.evaluate(
        matrix, references, keywords, judge, include_pooled_eer=args.pooled_eer
    )

    out = args.out
    os.makedirs(out, exist_ok=True)
    with OutputLock(out):
        corpus_hash = _corpus_hash(args.data)
        base = os.path.join(out, f"metrics_{args.model}")
        report.write_csv(base + ".csv")
        report.write_json(base + ".json")
        _write_sidecar(base + ".json", corpus_hash, cfg)
        pr_base = os.path.join(out, f"pr_curve_{args.model}")
        report.write_pr_csv(pr_base + ".csv")
        plotting.save_pr_curve(report.pr_curve, pr_base + ".png", title=args.model)
        spotting.write_rankings_csv(
            os.path.join(out, f"rankings_{args.model}.csv"),
            matrix,
            references,
            keywords,
            judge,
            top_k=int(cfg["rankings.top_k"]),
        )
    print(
        f"{args.model}: P@10 {report.macro_p_at_10:.3f}  "
        f"P@N {report.macro_p_at_n:.3f}  EER {report.macro_eer:.3f}  "
        f"AP {report.pooled_ap:.3f}"
    )
    return 0


def cmd_search(args):
    cfg, provided = load_config(args.config, args.set or ())
    stemmer = get_stemmer(cfg["stemmer"])
    corpus, vocab, lexicon, tag_vectors = _load_data_dir(args.data)
    if vocab is None:
        raise ConfigError("search needs vocab.txt in the data directory")
    if cfg["standardize"]:
        _apply_standardization(corpus)
    judge = spotting.RelevanceJudge(stemmer=stemmer)
    scorer = _build_scorer(
        args.model, args.checkpoint, corpus, vocab, tag_vectors, cfg, provided,
        args.data, stemmer,
    )
    records = corpus.split(args.split)
    references = {r.id: r.translation for r in records}
    matrix = spotting.score_collection(scorer, records)
    by_id = {uid: i for i, uid in enumerate(matrix.ids)}
    col = matrix.column(args.keyword)
    print(f"{'rank':>4}  {'id':<16} {'score':>10}  rel  translation")
    for pos, uid in enumerate(spotting.rank(matrix, args.keyword)[: args.top], start=1):
        ref = references[uid]
        rel = "*" if judge.relevance(ref, args.keyword) else " "
        print(f"{pos:>4}  {uid:<16} {col[by_id[uid]]:>10.6f}  {rel}   {' '.join(ref)}")
    return 0


def cmd_report(args):
    rows = []
    hashes = set()
    for path in args.metrics:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        try:
            with open(path + ".meta.json", encoding="utf-8") as f:
                hashes.add(json.load(f)["corpus_hash"])
        except FileNotFoundError:
            raise ConfigError(f"{path}: missing .meta.json sidecar; cannot verify run compatibility")
        rows.append(data)
    if len(hashes) > 1:
        raise ConfigError(
            "refusing to mix runs from different corpora: "
            f"{len(hashes)} distinct corpus hashes"
        )
    out = args.out
    os.makedirs(out, exist_ok=True)
    with OutputLock(out):
        import csv as _csv

        with open(os.path.join(out, "report.csv"), "w", newline="") as f:
            writer = _csv.writer(f)
            writer.writerow(["model", "p_at_10", "p_at_n", "eer", "ap"])
            for r in rows:
                writer.writerow(
                    [
                        r["scorer"],
                        repr(r["macro_p_at_10"]),
                        repr(r["macro_p_at_n"]),
                        repr(r["macro_eer"]),
                        repr(r["pooled_ap"]),
                    ]
                )
        lines = [f"{'model':<28} {'P@10':>7} {'P@N':>7} {'EER':>7} {'AP':>7}"]
        for r in rows:
            lines.append(
                f"{r['scorer']:<28} {r['macro_p_at_10']:>7.3f} "
                f"{r['macro_p_at_n']:>7.3f} {r['macro_eer']:>7.3f} "
                f"{r['pooled_ap']:>7.3f}"
            )
        table = "\n".join(lines) + "\n"
        with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as f:
            f.write(table)
        plotting.save_report_chart(rows, os.path.join(out, "report.png"))
    print(table, end="")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="xlkws",
        description="Cross-lingual keyword spotting: generate, train, evaluate, search, report.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key-value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")

    p = sub.add_parser("generate", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("featurize", help="extract MFCC+delta frames from waveforms")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train a network variant")
    common(p)
    p.add_argument("--model", required=True, choices=baselines.TRAINABLE_KINDS)
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a split and compute metrics")
    common(p)
    p.add_argument("--model", required=True, choices=baselines.SCORER_KINDS)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p.add_argument("--pooled-eer", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("search", help="rank utterances for one keyword")
    common(p)
    p.add_argument("--keyword", required=True)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--model", required=True, choices=baselines.SCORER_KINDS)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("report", help="side-by-side comparison of metric files")
    p.add_argument("metrics", nargs="+", help="metrics_<model>.json files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # runtime failure -> exit 1 with diagnostic
        print(f"xlkws: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Comparison systems: the unigram text prior, the vision-only scorer, and
the trainable variants (soft visual tags, binary bag-of-words, keyword-only
outputs, and oracle hard targets). All trainable variants reuse the same
trainer unchanged; only the targets and output layer differ."""

from __future__ import annotations

import numpy as np

from . import network, trainer
from .features import fit_length
from .stemming import identity_stem
from .targets import build_bow_target

DE_TEXT_PRIOR = "de_text_prior"
DE_VISION_CNN = "de_vision_cnn"
X_VISION_SPEECH_CNN = "x_vision_speech_cnn"
X_BOW_CNN = "x_bow_cnn"
KEY_X_VISION_SPEECH_CNN = "key_x_vision_speech_cnn"
ORACLE_X_VISION_SPEECH_CNN = "oracle_x_vision_speech_cnn"

SCORER_KINDS = (
    DE_TEXT_PRIOR,
    DE_VISION_CNN,
    X_VISION_SPEECH_CNN,
    X_BOW_CNN,
    KEY_X_VISION_SPEECH_CNN,
    ORACLE_X_VISION_SPEECH_CNN,
)
TRAINABLE_KINDS = (
    X_VISION_SPEECH_CNN,
    X_BOW_CNN,
    KEY_X_VISION_SPEECH_CNN,
    ORACLE_X_VISION_SPEECH_CNN,
)


class BaselineError(ValueError):
    pass


class PriorScorer:
    """Unigram keyword prior from training references; ignores the speech.

    Every utterance gets the identical score row, so every induced ranking
    is the id-order ranking and the macro EER is exactly 0.5.
    """

    name = DE_TEXT_PRIOR

    def __init__(self, train_references, vocab, stemmer=identity_stem):
        self.words = vocab.words
        stem_sets = [{stemmer(t) for t in ref} for ref in train_references]
        n = len(stem_sets)
        if n == 0:
            raise BaselineError("prior scorer needs at least one training reference")
        row = np.zeros(len(vocab), dtype=np.float64)
        for i, word in enumerate(vocab.words):
            stem = stemmer(word)
            row[i] = sum(1 for s in stem_sets if stem in s) / n
        self.row = row

    def score(self, record):
        return self.row


class VisionScorer:
    """Scores each utterance with the tag vector of its paired image."""

    name = DE_VISION_CNN

    def __init__(self, tag_vectors, vocab):
        self.words = vocab.words
        self.tag_vectors = tag_vectors

    def score(self, record):
        try:
            return self.tag_vectors[record.id]
        except KeyError:
            raise BaselineError(f"no tag vector for utterance {record.id!r}") from None


class NetworkScorer:
    """Runs the trained speech network on fixed-length frame matrices."""

    def __init__(self, params, words, name, pad_frames=trainer.DEFAULT_PAD_FRAMES):
        self.params = params
        self.words = tuple(words)
        self.name = name
        self.pad_frames = pad_frames
        if params.output_dim != len(self.words):
            raise BaselineError(
                f"network has {params.output_dim} outputs but {len(self.words)} "
                "words were given"
            )

    def score(self, record):
        frames = fit_length(record.get_frames(), self.pad_frames, self.pad_frames)
        scores, _ = network.forward(self.params, frames)
        return scores


def prior_scorer(train_references, vocab, stemmer=identity_stem):
    return PriorScorer(train_references, vocab, stemmer)


def vision_scorer(tag_vectors, vocab):
    return VisionScorer(tag_vectors, vocab)


def concept_indicator(concepts, lexicon, vocab):
    """Binary vector: 1 for vocab words translating a present concept."""
    active = set()
    for concept in concepts:
        active.update(lexicon.get(concept, ()))
    values = np.zeros(len(vocab), dtype=np.float32)
    for i, word in enumerate(vocab.words):
        if word in active:
            values[i] = 1.0
    return values


def _oracle_target(record, tag_vectors, lexicon, vocab):
    if record.concepts is not None and lexicon is not None:
        return concept_indicator(record.concepts, lexicon, vocab)
    # loaded tagger outputs: binarize at 0.5
    return (np.asarray(tag_vectors[record.id]) >= 0.5).astype(np.float32)


def build_variant_targets(kind, corpus, vocab, tag_vectors=None, keywords=None,
                          lexicon=None, stemmer=identity_stem):
    """Per-utterance training targets and output words for a trainable kind."""
    if kind not in TRAINABLE_KINDS:
        raise BaselineError(f"{kind!r} is not a trainable scorer kind")
    records = corpus.split("train") + corpus.split("dev")
    targets = {}
    words = vocab.words
    if kind == X_VISION_SPEECH_CNN:
        if tag_vectors is None:
            raise BaselineError("x_vision_speech_cnn needs tag vectors")
        for rec in records:
            targets[rec.id] = np.asarray(tag_vectors[rec.id], dtype=np.float32)
    elif kind == X_BOW_CNN:
        for rec in records:
            if not rec.translation:
                raise BaselineError(
                    f"x_bow_cnn needs a reference translation for {rec.id!r}"
                )
            targets[rec.id] = build_bow_target(rec.translation, vocab, stemmer)
    elif kind == KEY_X_VISION_SPEECH_CNN:
        if not keywords:
            raise BaselineError("key_x_vision_speech_cnn needs a keyword list")
        if tag_vectors is None:
            raise BaselineError("key_x_vision_speech_cnn needs tag vectors")
        cols = np.array([vocab.index(kw) for kw in keywords])
        words = tuple(keywords)
        for rec in records:
            targets[rec.id] = np.asarray(tag_vectors[rec.id], dtype=np.float32)[cols]
    elif kind == ORACLE_X_VISION_SPEECH_CNN:
        for rec in records:
            targets[rec.id] = _oracle_target(rec, tag_vectors, lexicon, vocab)
    return targets, words


def train_variant(kind, corpus, vocab, config, tag_vectors=None, keywords=None,
                  lexicon=None, stemmer=identity_stem, spec=None, init_seed=None,
                  log_fn=None):
    """Train one of the network variants; returns (scorer, params, history)."""
    targets, words = build_variant_targets(
        kind, corpus, vocab, tag_vectors=tag_vectors, keywords=keywords,
        lexicon=lexicon, stemmer=stemmer,
    )
    params, history = trainer.train(
        corpus, targets, config, output_dim=len(words), spec=spec,
        init_seed=init_seed, log_fn=log_fn,
    )
    scorer = NetworkScorer(params, words, name=kind, pad_frames=config.pad_frames)
    return scorer, params, history

"""Supervision vectors: query-language vocabulary, binary bag-of-word
targets from reference translations, and (simulated or loaded) soft visual
tag targets."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import kwsio
from .stemming import identity_stem


@dataclass(frozen=True)
class Vocabulary:
    """Ordered list of query-language word types; index = output dimension."""

    words: tuple
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.words)) != len(self.words):
            raise ValueError("vocabulary contains duplicate words")
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.words)})

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self._index

    def index(self, word):
        return self._index[word]


def build_vocabulary(token_lists, size, stop_words=frozenset()):
    """The `size` most frequent non-stop types; ties broken lexicographically."""
    counts = Counter()
    for tokens in token_lists:
        counts.update(t for t in tokens if t not in stop_words)
    if len(counts) < size:
        raise ValueError(
            f"requested vocabulary of {size} but only {len(counts)} "
            "distinct non-stop types are available"
        )
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(tuple(w for w, _ in ranked[:size]))


def build_bow_target(translation, vocab: Vocabulary, stemmer=identity_stem):
    """Multi-hot indicator over the vocabulary; quantity and order ignored.

    Matching is on stems so that inflected forms hit the same entry; the
    stemmer must match the one used by the evaluation judge.
    """
    reference_stems = {stemmer(t) for t in translation}
    values = np.zeros(len(vocab), dtype=np.float32)
    for i, word in enumerate(vocab.words):
        if stemmer(word) in reference_stems:
            values[i] = 1.0
    return values


def simulate_visual_tags(concepts, lexicon, vocab: Vocabulary, p_hi, p_lo,
                         noise_std, seed):
    """Stand-in for an external visual tagger.

    Vocabulary words that translate a present concept get base probability
    p_hi, all others p_lo; Gaussian noise is added and the result clipped
    to [0, 1]. Pure function of the seed.
    """
    if not p_lo < p_hi:
        raise ValueError("require p_lo < p_hi")
    active = set()
    for concept in concepts:
        active.update(lexicon.get(concept, ()))
    values = np.full(len(vocab), p_lo, dtype=np.float64)
    for i, word in enumerate(vocab.words):
        if word in active:
            values[i] = p_hi
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        values = values + rng.normal(0.0, noise_std, size=values.shape)
    return np.clip(values, 0.0, 1.0).astype(np.float32)


def load_tag_vectors(path, vocab: Vocabulary):
    """Load externally produced tag vectors; returns id -> soft vector."""
    ids, matrix = kwsio.read_tag_matrix(path)
    if matrix.shape[1] != len(vocab):
        raise ValueError(
            f"tag vectors have dimension {matrix.shape[1]} but vocabulary "
            f"has {len(vocab)} words"
        )
    vectors = {}
    for uid, row in zip(ids, matrix):
        if row.min() < 0.0 or row.max() > 1.0:
            raise ValueError(f"tag vector for {uid!r} has values outside [0, 1]")
        vectors[uid] = row
    return vectors


def save_tag_vectors(path, vectors):
    """Write id -> vector mapping in the binary tag format (sorted by id)."""
    ids = sorted(vectors)
    matrix = np.stack([vectors[uid] for uid in ids])
    kwsio.write_tag_matrix(path, ids, matrix)

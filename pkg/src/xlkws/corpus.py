"""Corpus data model, manifest ingestion, synthetic generation and keyword
selection.

Synthetic "speech" is built from fixed per-word frame templates rather than
audio: each search-language word owns a random 39-dim template sequence and
an utterance is the concatenation of its words' templates plus Gaussian
noise. This exercises the full network/metric path in seconds while real
audio enters only via manifests referencing waveform or frame files.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kwsio
from .stemming import identity_stem
from .targets import Vocabulary, simulate_visual_tags

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")

FRAME_DIM = 39


class CorpusError(ValueError):
    """Manifest parse or corpus validation failure."""


@dataclass
class UtteranceRecord:
    """One spoken caption with its supervision sources."""

    id: str
    split: str
    frames: np.ndarray | None = None
    frames_path: str | None = None
    wav_path: str | None = None
    concepts: tuple | None = None
    tags_path: str | None = None
    translation: tuple = ()

    def get_frames(self):
        """Frame matrix, loading lazily from frames_path if needed."""
        if self.frames is not None:
            return self.frames
        if self.frames_path is None:
            raise CorpusError(f"record {self.id!r} has no frames or frames_path")
        self.frames = kwsio.read_frames(self.frames_path)
        return self.frames


class Corpus:
    """Utterance records grouped by split, ordered lexicographically by id."""

    def __init__(self, records=()):
        self._records = {}
        for rec in records:
            self.add(rec)

    def add(self, record: UtteranceRecord):
        if record.split not in SPLITS:
            raise CorpusError(
                f"record {record.id!r} has invalid split {record.split!r}"
            )
        if record.id in self._records:
            raise CorpusError(f"duplicate utterance id {record.id!r}")
        self._records[record.id] = record

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self.records())

    def __getitem__(self, uid):
        return self._records[uid]

    def __contains__(self, uid):
        return uid in self._records

    def records(self):
        return [self._records[uid] for uid in sorted(self._records)]

    def split(self, name):
        if name not in SPLITS:
            raise CorpusError(f"unknown split {name!r}")
        return [r for r in self.records() if r.split == name]


def load_manifest(path):
    """Read a JSON-lines manifest into a Corpus.

    Relative frame/tag/wav paths are resolved against the manifest's
    directory; the referenced files are only opened at use.
    """
    import os

    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        if p is None:
            return None
        return p if os.path.isabs(p) else os.path.join(base, p)

    corpus = Corpus()
    n_lines = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            n_lines += 1
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: malformed JSON: {e}") from e
            try:
                rec = UtteranceRecord(
                    id=obj["id"],
                    split=obj["split"],
                    frames_path=resolve(obj.get("frames_path")),
                    wav_path=resolve(obj.get("wav_path")),
                    concepts=tuple(obj["concepts"]) if "concepts" in obj else None,
                    tags_path=resolve(obj.get("tags_path")),
                    translation=tuple(obj.get("translation", ())),
                )
            except KeyError as e:
                raise CorpusError(f"{path}:{lineno}: missing field {e}") from e
            _validate_record(rec, f"{path}:{lineno}")
            corpus.add(rec)
    if n_lines == 0:
        log.warning("manifest %s is empty", path)
    return corpus


def _validate_record(rec, where):
    if rec.split not in SPLITS:
        raise CorpusError(f"{where}: invalid split {rec.split!r}")
    if rec.split == "train" and rec.concepts is None and rec.tags_path is None:
        raise CorpusError(
            f"{where}: train record {rec.id!r} needs a tag source "
            "(concepts or tags_path)"
        )
    if rec.split in ("dev", "test") and not rec.translation:
        raise CorpusError(
            f"{where}: {rec.split} record {rec.id!r} needs a reference translation"
        )


def save_manifest(corpus, path, relative_to=None):
    """Write a corpus back out as a JSON-lines manifest."""
    import os

    def relativize(p):
        if p is None or relative_to is None:
            return p
        return os.path.relpath(p, relative_to)

    with open(path, "w", encoding="utf-8") as f:
        for rec in corpus.records():
            obj = {"id": rec.id, "split": rec.split}
            if rec.frames_path:
                obj["frames_path"] = relativize(rec.frames_path)
            if rec.wav_path:
                obj["wav_path"] = relativize(rec.wav_path)
            if rec.tags_path:
                obj["tags_path"] = relativize(rec.tags_path)
            if rec.concepts is not None:
                obj["concepts"] = list(rec.concepts)
            if rec.translation:
                obj["translation"] = list(rec.translation)
            f.write(json.dumps(obj) + "\n")


@dataclass(frozen=True)
class SyntheticConfig:
    num_search_words: int = 50
    num_query_words: int = 50
    utterances_per_split: tuple = (500, 100, 200)
    words_per_utterance: tuple = (4, 5)
    frames_per_word: tuple = (60, 72)
    template_noise_std: float = 0.1
    tagger_hit_prob: float = 1.0
    tagger_p_hi: float = 0.9
    tagger_p_lo: float = 0.05
    tag_noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.tagger_p_lo < self.tagger_p_hi <= 1.0:
            raise CorpusError("require 0 <= tagger_p_lo < tagger_p_hi <= 1")
        if not 0.0 <= self.tagger_hit_prob <= 1.0:
            raise CorpusError("tagger_hit_prob must be in [0, 1]")
        if self.num_query_words < self.num_search_words:
            raise CorpusError("need at least one query word per search word")
        lo, hi = self.words_per_utterance
        flo, fhi = self.frames_per_word
        if not (1 <= lo <= hi and 1 <= flo <= fhi):
            raise CorpusError("words_per_utterance / frames_per_word ranges invalid")
        if self.template_noise_std < 0 or self.tag_noise_std < 0:
            raise CorpusError("noise stds must be nonnegative")
        from .network import LayerSpec

        min_frames = LayerSpec().min_input_length
        if lo * flo < min_frames:
            raise CorpusError(
                f"minimum utterance length {lo * flo} is below the network "
                f"minimum of {min_frames} frames"
            )


def search_word(i):
    return f"s{i:03d}"


def query_word(i):
    return f"q{i:03d}"


def build_lexicon(config: SyntheticConfig):
    """Search-word -> tuple of query words; first entry is the primary
    translation, extras act as synonyms (activated by the tagger but not
    used in references)."""
    lexicon = {search_word(i): [query_word(i)] for i in range(config.num_search_words)}
    for j in range(config.num_search_words, config.num_query_words):
        lexicon[search_word(j % config.num_search_words)].append(query_word(j))
    return {k: tuple(v) for k, v in lexicon.items()}


def query_vocabulary(lexicon):
    """Vocabulary over the lexicon's query side, lexicographically ordered."""
    words = sorted({q for qs in lexicon.values() for q in qs})
    return Vocabulary(tuple(words))


def generate_synthetic(config: SyntheticConfig):
    """Generate a deterministic synthetic corpus.

    Returns (corpus, lexicon, tag_vectors) where tag_vectors maps every
    utterance id to its simulated visual-tag vector, indexed by
    query_vocabulary(lexicon).
    """
    lexicon = build_lexicon(config)
    vocab = query_vocabulary(lexicon)

    template_rng = np.random.default_rng([config.seed, 0])
    structure_rng = np.random.default_rng([config.seed, 1])

    templates = []
    flo, fhi = config.frames_per_word
    for _ in range(config.num_search_words):
        length = int(template_rng.integers(flo, fhi + 1))
        templates.append(
            template_rng.normal(0.0, 1.0, size=(length, FRAME_DIM)).astype(np.float32)
        )

    corpus = Corpus()
    tag_vectors = {}
    wlo, whi = config.words_per_utterance
    global_index = 0
    for split, count in zip(SPLITS, config.utterances_per_split):
        for i in range(count):
            uid = f"{split}_{i:05d}"
            k = int(structure_rng.integers(wlo, whi + 1))
            word_idx = structure_rng.choice(
                config.num_search_words, size=k, replace=False
            )
            words = tuple(search_word(int(w)) for w in word_idx)

            frames = np.concatenate([templates[int(w)] for w in word_idx])
            if config.template_noise_std > 0:
                noise_rng = np.random.default_rng([config.seed, 2, global_index])
                frames = frames + noise_rng.normal(
                    0.0, config.template_noise_std, size=frames.shape
                )
            frames = frames.astype(np.float32)

            if config.tagger_hit_prob < 1.0:
                hit_rng = np.random.default_rng([config.seed, 4, global_index])
                seen = tuple(
                    w for w in words if hit_rng.random() < config.tagger_hit_prob
                )
            else:
                seen = words
            tag_vectors[uid] = simulate_visual_tags(
                seen,
                lexicon,
                vocab,
                config.tagger_p_hi,
                config.tagger_p_lo,
                config.tag_noise_std,
                seed=[config.seed, 3, global_index],
            )

            translation = tuple(lexicon[w][0] for w in words)
            corpus.add(
                UtteranceRecord(
                    id=uid,
                    split=split,
                    frames=frames,
                    concepts=words,
                    translation=translation,
                )
            )
            global_index += 1
    return corpus, lexicon, tag_vectors


def select_keywords(vocab, references, n, min_occurrences=1, seed=0,
                    stemmer=identity_stem):
    """Uniform random keyword pick from vocabulary words frequent enough in
    the references.

    A word counts as occurring in a reference if their stems match; each
    reference contributes at most one occurrence.
    """
    reference_stem_sets = [{stemmer(t) for t in ref} for ref in references]
    eligible = []
    for word in vocab.words:
        stem = stemmer(word)
        occurrences = sum(1 for stems in reference_stem_sets if stem in stems)
        if occurrences >= min_occurrences:
            eligible.append(word)
    if len(eligible) < n:
        raise CorpusError(
            f"requested {n} keywords but only {len(eligible)} vocabulary words "
            f"have >= {min_occurrences} occurrences in the references"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(eligible), size=n, replace=False)
    return [eligible[int(i)] for i in sorted(chosen)]

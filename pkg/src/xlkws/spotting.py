"""Scoring a search collection and computing retrieval metrics.

Per-keyword metrics (P@10, P@N, EER) are computed from rankings against
stemmed reference translations and macro-averaged over keywords that occur
at least once. AP is pooled over all keyword-utterance pairs, matching a
single global decision threshold swept over the scores. Equal scores are
processed as one block everywhere; EER is linearly interpolated within a
block, which makes a constant scorer come out at exactly 0.5.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .stemming import identity_stem


class EvaluationError(ValueError):
    pass


@dataclass
class ScoreMatrix:
    """Utterances (rows, sorted by id) x vocabulary words (columns)."""

    ids: tuple
    words: tuple
    scores: np.ndarray
    scorer_name: str = ""

    def __post_init__(self):
        self.ids = tuple(self.ids)
        self.words = tuple(self.words)
        if self.scores.shape != (len(self.ids), len(self.words)):
            raise EvaluationError(
                f"score matrix shape {self.scores.shape} does not match "
                f"{len(self.ids)} ids x {len(self.words)} words"
            )
        if list(self.ids) != sorted(self.ids):
            order = np.argsort(np.asarray(self.ids))
            self.scores = self.scores[order]
            self.ids = tuple(self.ids[i] for i in order)
        if not np.all(np.isfinite(self.scores)):
            raise EvaluationError("score matrix contains non-finite entries")
        self._col = {w: j for j, w in enumerate(self.words)}

    def column(self, word):
        try:
            return self.scores[:, self._col[word]]
        except KeyError:
            raise EvaluationError(f"keyword {word!r} not in scorer vocabulary") from None


def score_collection(scorer, utterances):
    """Apply a scorer to every utterance; one row per utterance."""
    rows = []
    ids = []
    for rec in sorted(utterances, key=lambda r: r.id):
        try:
            rows.append(np.asarray(scorer.score(rec), dtype=np.float64))
        except Exception as e:
            raise EvaluationError(f"scorer {scorer.name!r} failed on {rec.id!r}: {e}") from e
        ids.append(rec.id)
    return ScoreMatrix(
        ids=tuple(ids),
        words=tuple(scorer.words),
        scores=np.stack(rows),
        scorer_name=scorer.name,
    )


@dataclass
class RelevanceJudge:
    """Stemmed keyword-in-reference matching with a stem cache."""

    stemmer: callable = identity_stem
    _cache: dict = field(default_factory=dict, repr=False)

    def stem(self, token):
        s = self._cache.get(token)
        if s is None:
            s = self.stemmer(token)
            self._cache[token] = s
        return s

    def relevance(self, reference, keyword):
        kw = self.stem(keyword)
        return any(self.stem(t) == kw for t in reference)


def rank(score_matrix: ScoreMatrix, keyword):
    """Utterance ids from most to least relevant; ties broken by id."""
    col = score_matrix.column(keyword)
    order = sorted(range(len(col)), key=lambda i: (-col[i], score_matrix.ids[i]))
    return [score_matrix.ids[i] for i in order]


def precision_at_k(ranking, relevant, k):
    """Fraction of the top k that are relevant; divisor is k even when the
    collection is smaller."""
    if k < 1:
        raise EvaluationError("k must be >= 1")
    hits = sum(1 for uid in ranking[:k] if uid in relevant)
    return hits / k


def p_at_n(ranking, relevant):
    n = len(relevant)
    if n < 1:
        raise EvaluationError("P@N undefined for a keyword with no occurrences")
    return precision_at_k(ranking, relevant, n)


def _score_blocks(scores, relevance):
    """Distinct scores descending with per-block (relevant, total) counts."""
    scores = np.asarray(scores, dtype=np.float64)
    relevance = np.asarray(relevance, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    blocks = []
    i = 0
    while i < len(order):
        j = i
        s = scores[order[i]]
        rel = 0
        while j < len(order) and scores[order[j]] == s:
            rel += int(relevance[order[j]])
            j += 1
        blocks.append((s, rel, j - i))
        i = j
    return blocks


def eer(scores, relevance):
    """Equal error rate from the threshold sweep over distinct scores.

    FAR and FRR move piecewise-linearly as the threshold passes each block
    of tied scores; the crossing is found by linear interpolation.
    """
    relevance = np.asarray(relevance, dtype=bool)
    pos = int(relevance.sum())
    neg = int(len(relevance) - pos)
    if pos == 0 or neg == 0:
        raise EvaluationError("EER undefined without both relevant and non-relevant items")
    points = [(0.0, 1.0)]  # accept nothing
    tp = fp = 0
    for _, rel, total in _score_blocks(scores, relevance):
        tp += rel
        fp += total - rel
        points.append((fp / neg, 1.0 - tp / pos))
    prev_far, prev_frr = points[0]
    for far, frr in points[1:]:
        if far >= frr:
            d_far = far - prev_far
            d_frr = frr - prev_frr
            denom = d_far - d_frr
            if denom == 0.0:
                return far
            t = (prev_frr - prev_far) / denom
            return prev_far + t * d_far
        prev_far, prev_frr = far, frr
    return 1.0  # unreachable: final point is (1, 0)


def average_precision(scores, relevance):
    """Rank-based AP with tie blocks; returns (ap, pr_points).

    pr_points are (threshold, precision, recall) at each block boundary.
    """
    relevance = np.asarray(relevance, dtype=bool)
    total_rel = int(relevance.sum())
    if total_rel == 0:
        raise EvaluationError("AP undefined without any relevant pair")
    ap = 0.0
    tp = seen = 0
    pr_points = []
    for threshold, rel, total in _score_blocks(scores, relevance):
        prev_tp = tp
        tp += rel
        seen += total
        precision = tp / seen
        ap += ((tp - prev_tp) / total_rel) * precision
        pr_points.append((threshold, precision, tp / total_rel))
    return ap, pr_points


def average_precision_sweep(scores, relevance):
    """Brute-force AP: recount accepted pairs at every distinct threshold.

    Independent oracle for average_precision; both follow the identical
    arithmetic order so results agree bitwise.
    """
    scores = np.asarray(scores, dtype=np.float64)
    relevance = np.asarray(relevance, dtype=bool)
    total_rel = int(relevance.sum())
    if total_rel == 0:
        raise EvaluationError("AP undefined without any relevant pair")
    thresholds = sorted(set(scores.tolist()), reverse=True)
    ap = 0.0
    prev_tp = 0
    for alpha in thresholds:
        accepted = scores >= alpha
        tp = int((accepted & relevance).sum())
        seen = int(accepted.sum())
        precision = tp / seen
        ap += ((tp - prev_tp) / total_rel) * precision
        prev_tp = tp
    return ap


@dataclass
class KeywordMetrics:
    keyword: str
    n_relevant: int
    p_at_10: float
    p_at_n: float | None
    eer: float | None


@dataclass
class MetricsReport:
    scorer_name: str
    per_keyword: list
    macro_p_at_10: float
    macro_p_at_n: float
    macro_eer: float
    pooled_ap: float
    pr_curve: list
    pooled_eer: float | None = None

    def as_dict(self):
        return {
            "scorer": self.scorer_name,
            "macro_p_at_10": self.macro_p_at_10,
            "macro_p_at_n": self.macro_p_at_n,
            "macro_eer": self.macro_eer,
            "pooled_ap": self.pooled_ap,
            "pooled_eer": self.pooled_eer,
            "keywords": [
                {
                    "keyword": m.keyword,
                    "n_relevant": m.n_relevant,
                    "p_at_10": m.p_at_10,
                    "p_at_n": m.p_at_n,
                    "eer": m.eer,
                }
                for m in self.per_keyword
            ],
        }

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.as_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    def write_csv(self, path):
        def fmt(x):
            return "" if x is None else repr(float(x))

        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["keyword", "n_relevant", "p_at_10", "p_at_n", "eer", "ap"])
            for m in self.per_keyword:
                writer.writerow(
                    [m.keyword, m.n_relevant, fmt(m.p_at_10), fmt(m.p_at_n), fmt(m.eer), ""]
                )
            writer.writerow(
                [
                    "__aggregate__",
                    sum(m.n_relevant for m in self.per_keyword),
                    fmt(self.macro_p_at_10),
                    fmt(self.macro_p_at_n),
                    fmt(self.macro_eer),
                    fmt(self.pooled_ap),
                ]
            )

    def write_pr_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["threshold", "precision", "recall"])
            for threshold, precision, recall in self.pr_curve:
                writer.writerow([repr(float(threshold)), repr(float(precision)), repr(float(recall))])


def evaluate(score_matrix: ScoreMatrix, references, keywords, judge=None,
             include_pooled_eer=False):
    """Full retrieval evaluation of a score matrix against references.

    references maps utterance id to its reference translation tokens;
    keywords with no occurrence are reported but excluded from macro
    averages.
    """
    judge = judge or RelevanceJudge()
    missing = [uid for uid in score_matrix.ids if uid not in references]
    if missing:
        raise EvaluationError(f"missing reference translation for {missing[0]!r}")
    for kw in keywords:
        score_matrix.column(kw)  # raises on unknown keyword

    per_keyword = []
    pooled_scores = []
    pooled_rel = []
    n_utts = len(score_matrix.ids)
    for kw in keywords:
        relevant = {
            uid for uid in score_matrix.ids if judge.relevance(references[uid], kw)
        }
        col = score_matrix.column(kw)
        pooled_scores.append(col)
        rel_mask = np.array([uid in relevant for uid in score_matrix.ids])
        pooled_rel.append(rel_mask)

        ranking = rank(score_matrix, kw)
        p10 = precision_at_k(ranking, relevant, 10)
        n = len(relevant)
        pn = p_at_n(ranking, relevant) if n >= 1 else None
        kw_eer = eer(col, rel_mask) if 0 < n < n_utts else None
        per_keyword.append(KeywordMetrics(kw, n, p10, pn, kw_eer))

    def macro(values):
        values = [v for v in values if v is not None]
        if not values:
            raise EvaluationError("no keyword occurs in the references")
        return sum(values) / len(values)

    occurring = [m for m in per_keyword if m.n_relevant >= 1]
    if not occurring:
        raise EvaluationError("no keyword occurs in the references")
    all_scores = np.concatenate(pooled_scores)
    all_rel = np.concatenate(pooled_rel)
    pooled_ap, pr_curve = average_precision(all_scores, all_rel)

    return MetricsReport(
        scorer_name=score_matrix.scorer_name,
        per_keyword=per_keyword,
        macro_p_at_10=macro([m.p_at_10 if m.n_relevant >= 1 else None for m in per_keyword]),
        macro_p_at_n=macro([m.p_at_n for m in per_keyword]),
        macro_eer=macro([m.eer for m in per_keyword]),
        pooled_ap=pooled_ap,
        pr_curve=pr_curve,
        pooled_eer=eer(all_scores, all_rel) if include_pooled_eer else None,
    )


def write_rankings_csv(path, score_matrix, references, keywords, judge=None, top_k=10):
    """Top-k retrievals per keyword with scores and references, for human
    inspection."""
    judge = judge or RelevanceJudge()
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["keyword", "rank", "id", "score", "relevant", "translation"])
        by_id = {uid: i for i, uid in enumerate(score_matrix.ids)}
        for kw in keywords:
            col = score_matrix.column(kw)
            for pos, uid in enumerate(rank(score_matrix, kw)[:top_k], start=1):
                ref = references.get(uid, ())
                writer.writerow(
                    [
                        kw,
                        pos,
                        uid,
                        repr(float(col[by_id[uid]])),
                        int(judge.relevance(ref, kw)),
                        " ".join(ref),
                    ]
                )

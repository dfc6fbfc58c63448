import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xlkws import spotting
from xlkws.spotting import (
    EvaluationError,
    RelevanceJudge,
    ScoreMatrix,
    average_precision,
    average_precision_sweep,
    eer,
    evaluate,
    p_at_n,
    precision_at_k,
    rank,
)
from xlkws.stemming import german_suffix_stem, identity_stem


def matrix(ids, words, scores, name="test"):
    return ScoreMatrix(tuple(ids), tuple(words), np.asarray(scores, dtype=float), name)


class TestRank:
    def test_descending_scores(self):
        m = matrix(["u1", "u2"], ["w"], [[0.9], [0.1]])
        assert rank(m, "w") == ["u1", "u2"]

    def test_ties_broken_by_id(self):
        m = matrix(["u2", "u1"], ["w"], [[0.5], [0.5]])
        assert rank(m, "w") == ["u1", "u2"]

    def test_row_order_irrelevant(self):
        a = matrix(["u1", "u2", "u3"], ["w"], [[0.1], [0.7], [0.4]])
        b = matrix(["u3", "u1", "u2"], ["w"], [[0.4], [0.1], [0.7]])
        assert rank(a, "w") == rank(b, "w")

    def test_unknown_keyword(self):
        m = matrix(["u1"], ["w"], [[0.5]])
        with pytest.raises(EvaluationError, match="nope"):
            rank(m, "nope")


class TestPrecision:
    def test_p_at_10(self):
        ranking = [f"u{i}" for i in range(10)]
        relevant = {f"u{i}" for i in range(6)}
        assert precision_at_k(ranking, relevant, 10) == pytest.approx(0.6)

    def test_perfect_ranking_p_at_n(self):
        ranking = ["a", "b", "c", "d"]
        assert p_at_n(ranking, {"a", "b"}) == 1.0

    def test_two_of_three(self):
        assert p_at_n(["a", "x", "b", "c"], {"a", "b", "c"}) == pytest.approx(2 / 3)

    def test_small_collection_divides_by_k(self):
        assert precision_at_k(["a"], {"a"}, 10) == pytest.approx(0.1)

    def test_empty_relevant_rejected(self):
        with pytest.raises(EvaluationError):
            p_at_n(["a"], set())


class TestEer:
    def test_perfect_separation(self):
        assert eer([0.9, 0.7, 0.4, 0.2], [1, 1, 0, 0]) == 0.0

    def test_perfectly_inverted(self):
        assert eer([0.9, 0.7, 0.4, 0.2], [0, 0, 1, 1]) == 1.0

    def test_constant_scores_interpolate_to_half(self):
        assert eer([0.3] * 8, [1, 0, 1, 0, 0, 1, 0, 0]) == 0.5

    def test_degenerate_rejected(self):
        with pytest.raises(EvaluationError):
            eer([0.5, 0.4], [1, 1])

    def test_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = rng.integers(3, 12)
            scores = rng.random(n)
            rel = rng.integers(0, 2, n)
            if 0 < rel.sum() < n:
                value = eer(scores, rel)
                assert 0.0 <= value <= 1.0


class TestAveragePrecision:
    def test_hand_case(self):
        ap, _ = average_precision([0.9, 0.8, 0.3], [1, 0, 1])
        assert ap == pytest.approx(5 / 6)

    def test_perfect_scorer(self):
        ap, _ = average_precision([0.9, 0.8, 0.1, 0.05], [1, 1, 0, 0])
        assert ap == 1.0

    def test_all_relevant(self):
        ap, _ = average_precision([0.2, 0.9, 0.5], [1, 1, 1])
        assert ap == 1.0

    def test_no_relevant_rejected(self):
        with pytest.raises(EvaluationError):
            average_precision([0.5], [0])

    @settings(max_examples=200, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_rank_form_equals_threshold_sweep_bitwise(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 13))
        # quantized scores produce plenty of ties
        scores = rng.integers(0, 5, n) / 4.0
        rel = rng.integers(0, 2, n)
        if rel.sum() == 0:
            rel[rng.integers(0, n)] = 1
        ap_rank, _ = average_precision(scores, rel)
        ap_sweep = average_precision_sweep(scores, rel)
        assert ap_rank == ap_sweep  # bitwise


class TestMonotoneInvariance:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_strictly_increasing_transform_preserves_metrics(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(12, 25))
        ids = [f"u{i:02d}" for i in range(n)]
        scores = rng.random((n, 2))
        m1 = matrix(ids, ["w1", "w2"], scores)
        m2 = matrix(ids, ["w1", "w2"], scores**3 + 7)
        relevant = set(rng.choice(ids, size=max(2, n // 3), replace=False))
        refs = {uid: ("w1",) if uid in relevant else ("x",) for uid in ids}
        r1 = evaluate(m1, refs, ["w1"])
        r2 = evaluate(m2, refs, ["w1"])
        assert rank(m1, "w1") == rank(m2, "w1")
        assert r1.macro_p_at_10 == r2.macro_p_at_10
        assert r1.macro_p_at_n == r2.macro_p_at_n
        assert r1.macro_eer == r2.macro_eer


class TestRelevanceJudge:
    def test_exact_match(self):
        judge = RelevanceJudge()
        assert judge.relevance(("Hund", "läuft"), "Hund")

    def test_inflection_with_german_stemmer(self):
        judge = RelevanceJudge(stemmer=german_suffix_stem)
        assert judge.relevance(("groß", "Haus"), "großen")

    def test_absent_under_identity(self):
        judge = RelevanceJudge(stemmer=identity_stem)
        assert not judge.relevance(("groß",), "großen")

    @settings(max_examples=100, deadline=None)
    @given(st.text(alphabet="abcdefgäöüß", min_size=1, max_size=12))
    def test_stemmer_idempotent(self, token):
        assert german_suffix_stem(german_suffix_stem(token)) == german_suffix_stem(token)


class TestEvaluate:
    def make_perfect(self, n_utts=30, keywords=("w1", "w2")):
        # each keyword relevant in at least 12 utterances so P@10 can hit 1.0
        ids = [f"u{i:02d}" for i in range(n_utts)]
        refs = {}
        scores = np.zeros((n_utts, len(keywords)))
        for i, uid in enumerate(ids):
            present = []
            if i < 15:
                present.append("w1")
            if i >= 10:
                present.append("w2")
            refs[uid] = tuple(present)
            for j, kw in enumerate(keywords):
                scores[i, j] = 1.0 if kw in refs[uid] else 0.0
        return matrix(ids, keywords, scores), refs

    def test_perfect_oracle_scores(self):
        m, refs = self.make_perfect()
        report = evaluate(m, refs, list(m.words))
        assert report.macro_p_at_10 == 1.0
        assert report.macro_p_at_n == 1.0
        assert report.macro_eer == 0.0
        assert report.pooled_ap == 1.0

    def test_input_order_invariance(self):
        m, refs = self.make_perfect()
        perm = np.random.default_rng(1).permutation(len(m.ids))
        shuffled = ScoreMatrix(
            tuple(m.ids[i] for i in perm), m.words, m.scores[perm], "test"
        )
        r1 = evaluate(m, refs, list(m.words))
        r2 = evaluate(shuffled, refs, list(m.words))
        assert r1.macro_p_at_10 == r2.macro_p_at_10
        assert r1.pooled_ap == r2.pooled_ap

    def test_absent_keyword_excluded_from_macro(self):
        ids = ["u1", "u2", "u3"]
        refs = {"u1": ("a",), "u2": ("a",), "u3": ("b",)}
        m = matrix(ids, ["a", "zzz"], [[0.9, 0.1], [0.8, 0.2], [0.1, 0.9]])
        report = evaluate(m, refs, ["a", "zzz"])
        absent = [k for k in report.per_keyword if k.keyword == "zzz"][0]
        assert absent.n_relevant == 0
        assert absent.p_at_n is None
        present = [k for k in report.per_keyword if k.keyword == "a"][0]
        assert report.macro_p_at_n == present.p_at_n

    def test_missing_reference_rejected(self):
        m = matrix(["u1", "u2"], ["w"], [[0.1], [0.2]])
        with pytest.raises(EvaluationError, match="u2"):
            evaluate(m, {"u1": ("w",)}, ["w"])

    def test_csv_and_json_outputs(self, tmp_path):
        m, refs = self.make_perfect()
        report = evaluate(m, refs, list(m.words), include_pooled_eer=True)
        report.write_csv(tmp_path / "m.csv")
        report.write_json(tmp_path / "m.json")
        report.write_pr_csv(tmp_path / "pr.csv")
        lines = (tmp_path / "m.csv").read_text().strip().splitlines()
        assert lines[0].startswith("keyword,")
        assert lines[-1].startswith("__aggregate__")
        assert (tmp_path / "pr.csv").read_text().startswith("threshold,precision,recall")


def test_score_collection_shape_and_determinism():
    class Toy:
        name = "toy"
        words = tuple(f"w{i}" for i in range(5))

        def score(self, rec):
            rng = np.random.default_rng(abs(hash(rec.id)) % 2**32)
            return rng.random(5)

    from xlkws.corpus import UtteranceRecord

    recs = [UtteranceRecord(id=f"u{i}", split="test", translation=("x",)) for i in range(3)]
    m1 = spotting.score_collection(Toy(), recs)
    m2 = spotting.score_collection(Toy(), recs)
    assert m1.scores.shape == (3, 5)
    assert np.array_equal(m1.scores, m2.scores)


def test_score_collection_error_names_utterance():
    class Broken:
        name = "broken"
        words = ("w",)

        def score(self, rec):
            raise RuntimeError("boom")

    from xlkws.corpus import UtteranceRecord

    recs = [UtteranceRecord(id="u7", split="test", translation=("x",))]
    with pytest.raises(EvaluationError, match="u7"):
        spotting.score_collection(Broken(), recs)

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_mel
from oracles import brute_force_eer, levenshtein
from utts.errors import ValidationError
from utts.eval import (ScoredTrials, Trial, cer_wer, compute_eer, content_frames, cosine, edit_distance,
                       embed_utterances, export_projection, make_trials, phoneme_probe, read_report, read_trials,
                       score_trials, write_report, write_trials)
from utts.features import MelSpectrogram


class TestCosine:
    def test_reference_values(self):
        v = np.array([1.0, 2.0, -3.0])
        assert cosine(v, v) == pytest.approx(1.0)
        assert cosine([1, 0], [0, 1]) == 0.0
        assert cosine(v, -v) == pytest.approx(-1.0)

    def test_missing_embedding_named(self):
        with pytest.raises(ValidationError, match="u9"):
            score_trials({"u1": np.ones(3)}, [Trial("u1", "u9", True)])


class TestEer:
    def test_perfect_separation(self):
        assert compute_eer(ScoredTrials([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0])) == 0.0

    def test_hand_case(self):
        st_ = ScoredTrials([0.9, 0.8, 0.7, 0.75, 0.2, 0.1], [1, 1, 1, 0, 0, 0])
        assert compute_eer(st_) == pytest.approx(1 / 3, abs=1e-15)

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            compute_eer(ScoredTrials([0.1, 0.2], [1, 1]))

    def test_random_scores_near_half(self):
        r = np.random.default_rng(0)
        st_ = ScoredTrials(r.uniform(-1, 1, 10**4), np.arange(10**4) % 2 == 0)
        assert abs(compute_eer(st_) - 0.5) < 0.02

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_matches_brute_force_with_ties(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(2, 200))
        scores = np.round(r.normal(size=n), int(r.integers(0, 3)))
        labels = r.random(n) < 0.5
        labels[0], labels[1] = True, False
        want = brute_force_eer(scores[labels].tolist(), scores[~labels].tolist())
        assert compute_eer(ScoredTrials(scores, labels)) == pytest.approx(float(want), abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_invariant_under_monotone_transform(self, seed):
        r = np.random.default_rng(seed)
        scores = r.uniform(-1, 1, 300)
        labels = r.random(300) < 0.4
        labels[:2] = [True, False]
        a = compute_eer(ScoredTrials(scores, labels))
        b = compute_eer(ScoredTrials(np.tanh(3 * scores) * 0.5 + 0.1, labels))
        assert a == pytest.approx(b, abs=1e-12) and 0.0 <= a <= 1.0


class TestTrials:
    def test_balanced_and_valid(self):
        spk = {f"{s}_{u}": s for s in "abcd" for u in range(5)}
        trials = make_trials(spk, 200, seed=0)
        assert len(trials) == 200 and sum(t.is_target for t in trials) == 100
        for t in trials:
            assert t.utt_a != t.utt_b and (spk[t.utt_a] == spk[t.utt_b]) == t.is_target

    def test_deterministic(self):
        spk = {f"{s}_{u}": s for s in "ab" for u in range(3)}
        assert make_trials(spk, 20, 4) == make_trials(spk, 20, 4)

    def test_file_round_trip(self, tmp_path):
        trials = [Trial("a", "b", True), Trial("c", "d", False)]
        write_trials(tmp_path / "t.tsv", trials)
        assert read_trials(tmp_path / "t.tsv") == trials

    def test_bad_row_rejected(self, tmp_path):
        (tmp_path / "t.tsv").write_text("a\tb\t2\n")
        with pytest.raises(ValidationError):
            read_trials(tmp_path / "t.tsv")


class TestEmbeddings:
    def test_shapes_and_determinism(self, tiny_model, rng):
        mels = [(f"u{i}", MelSpectrogram(random_mel(int(rng.integers(5, 30)), rng))) for i in range(3)]
        a = embed_utterances(mels, tiny_model, "speaker")
        b = embed_utterances(mels, tiny_model, "speaker")
        c = embed_utterances(mels, tiny_model, "content")
        assert all(v.shape == (4,) for v in c.values())
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_content_is_time_average(self, tiny_model, rng):
        mel = MelSpectrogram(random_mel(12, rng))
        np.testing.assert_allclose(embed_utterances([("u", mel)], tiny_model, "content")["u"],
                                   content_frames(mel, tiny_model).mean(axis=0))

    def test_duplicate_ids_rejected(self, tiny_model, rng):
        mel = MelSpectrogram(random_mel(5, rng))
        with pytest.raises(ValidationError):
            embed_utterances([("u", mel), ("u", mel)], tiny_model)


class TestProbe:
    def test_one_hot_is_separable(self):
        y = np.random.default_rng(0).integers(0, 10, size=600)
        assert phoneme_probe(np.eye(10)[y], y, seed=0) >= 0.99

    def test_shuffled_labels_at_chance(self):
        r = np.random.default_rng(1)
        y = r.integers(0, 72, size=4000)
        X = r.normal(size=(4000, 16))
        acc = phoneme_probe(X, y, seed=0, max_iter=200)
        assert abs(acc - 1 / 72) < 4 * math.sqrt((1 / 72) * (71 / 72) / 800)

    def test_deterministic(self):
        r = np.random.default_rng(2)
        X, y = r.normal(size=(200, 5)), r.integers(0, 3, size=200)
        assert phoneme_probe(X, y, seed=3) == phoneme_probe(X, y, seed=3)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            phoneme_probe(np.zeros((5, 2)), np.zeros(4))


class TestProjection:
    def test_rows_and_file(self, tmp_path):
        X = np.random.default_rng(0).normal(size=(15, 6))
        rows = export_projection(X, ["a"] * 15, tmp_path / "p.tsv", method="tsne")
        assert len(rows) == 15
        lines = (tmp_path / "p.tsv").read_text().splitlines()
        assert lines[0] == "id\tlabel\tx\ty" and len(lines) == 16

    def test_duplicates_stay_finite(self):
        X = np.ones((12, 4))
        for method in ("tsne", "pca"):
            rows = export_projection(X, list(range(12)), method=method)
            assert np.all(np.isfinite([[r[2], r[3]] for r in rows]))

    @pytest.mark.parametrize("method", ["tsne", "pca"])
    def test_separated_clusters_stay_apart(self, method):
        r = np.random.default_rng(0)
        X = np.concatenate([r.normal(size=(20, 8)), r.normal(size=(20, 8)) + 40.0])
        xy = np.array([[x, y] for _, _, x, y in export_projection(X, [0] * 20 + [1] * 20, method=method)])
        a, b = xy[:20], xy[20:]
        intra = np.mean([np.linalg.norm(p - q) for g in (a, b) for p, q in itertools.combinations(g, 2)])
        assert np.linalg.norm(a.mean(0) - b.mean(0)) > intra

    def test_too_few_rejected(self):
        with pytest.raises(ValidationError):
            export_projection(np.zeros((9, 2)), [0] * 9)


class TestCerWer:
    def test_identical(self):
        assert cer_wer("the cat", "the cat") == {"cer": 0.0, "wer": 0.0}

    def test_one_substitution(self):
        assert cer_wer("a b c", "a x c")["wer"] == pytest.approx(1 / 3)

    def test_empty_hypothesis(self):
        assert cer_wer("a b c", "")["wer"] == 1.0

    def test_empty_reference_rejected(self):
        with pytest.raises(ValidationError):
            cer_wer(" ", "x")

    @settings(max_examples=200, deadline=None)
    @given(st.text("abc ", max_size=12), st.text("abc ", max_size=12), st.text("abc ", max_size=12))
    def test_metric_axioms(self, a, b, c):
        assert edit_distance(a, b) == edit_distance(b, a)
        assert (edit_distance(a, b) == 0) == (a == b)
        assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)

    @settings(max_examples=200, deadline=None)
    @given(st.text("ab c", min_size=1, max_size=15).filter(str.strip), st.text("ab c", max_size=15))
    def test_rates_match_recursive_oracle(self, ref, hyp):
        rc, hc = " ".join(ref.split()), " ".join(hyp.split())
        got = cer_wer(ref, hyp)
        assert got["cer"] == levenshtein(rc, hc) / len(rc)
        assert got["wer"] == levenshtein(tuple(ref.split()), tuple(hyp.split())) / len(ref.split())

    def test_report_round_trip(self, tmp_path):
        write_report(tmp_path / "r.tsv", [("eer_speaker", 0.125, 100), ("cer", 0.5, 3)])
        assert read_report(tmp_path / "r.tsv") == {"eer_speaker": (0.125, 100), "cer": (0.5, 3)}

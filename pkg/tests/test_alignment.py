import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from utts.alignment import (FA_MASK, FA_PAD, FA_VOCAB, N_PHONES, AlignmentSequence, Codebook, PhonemeDurations,
                            assign_units, durations_from_alignment, expand_phonemes, fit_codebook, fit_length,
                            load_codebook, read_fa_file, resample_alignment, save_codebook, write_fa_file)
from oracles import blobs, purity
from utts.errors import ValidationError
from utts.features import FeatureMatrix


class TestAlignmentSequence:
    def test_vocabularies(self):
        assert FA_VOCAB == 74 and FA_MASK == 72 and FA_PAD == 73
        a = AlignmentSequence.ua([0, 49], 50)
        assert a.vocab_size == 51 and a.mask_id == 50 and a.n_units == 50

    def test_out_of_range_token_rejected(self):
        with pytest.raises(ValidationError):
            AlignmentSequence.ua([51], 50)
        with pytest.raises(ValidationError):
            AlignmentSequence.fa([-1])

    def test_bad_kind_rejected(self):
        with pytest.raises(ValidationError):
            AlignmentSequence([1], "XX", 5)

    def test_tokens_are_read_only(self):
        a = AlignmentSequence.fa([1, 2])
        with pytest.raises(ValueError):
            a.tokens[0] = 3


class TestExpandAndRunLength:
    def test_worked_example(self):
        a = expand_phonemes(PhonemeDurations([55, 2, 7], [3, 2, 1]))
        np.testing.assert_array_equal(a.tokens, [55, 55, 55, 2, 2, 7])
        pd = durations_from_alignment(a)
        np.testing.assert_array_equal(pd.phonemes, [55, 2, 7])
        np.testing.assert_array_equal(pd.durations, [3, 2, 1])

    def test_single_and_empty(self):
        np.testing.assert_array_equal(expand_phonemes(PhonemeDurations([9], [1])).tokens, [9])
        assert len(expand_phonemes(PhonemeDurations([], []))) == 0
        pd = durations_from_alignment(AlignmentSequence.fa([4]))
        assert pd.phonemes.tolist() == [4] and pd.durations.tolist() == [1]

    def test_empty_run_length_rejected(self):
        with pytest.raises(ValidationError):
            durations_from_alignment(AlignmentSequence.fa([]))

    def test_durations_validated(self):
        with pytest.raises(ValidationError):
            PhonemeDurations([1, 2], [1, 0])
        with pytest.raises(ValidationError):
            PhonemeDurations([1, 2], [1])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, N_PHONES - 1), min_size=1, max_size=60))
    def test_expand_of_rle_is_identity(self, toks):
        a = AlignmentSequence.fa(toks)
        assert expand_phonemes(durations_from_alignment(a)) == a

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, N_PHONES - 1), st.integers(1, 9)), min_size=1, max_size=30))
    def test_rle_of_expand_is_identity(self, pairs):
        # run-length encoding merges equal neighbours, so keep adjacent phonemes distinct
        merged = [pairs[0]]
        for p, d in pairs[1:]:
            if p != merged[-1][0]:
                merged.append((p, d))
        pd = PhonemeDurations([p for p, _ in merged], [d for _, d in merged])
        back = durations_from_alignment(expand_phonemes(pd))
        np.testing.assert_array_equal(back.phonemes, pd.phonemes)
        np.testing.assert_array_equal(back.durations, pd.durations)


class TestFaFile:
    def test_round_trip(self, tmp_path):
        pd = PhonemeDurations([3, 70, 0], [4, 1, 12])
        write_fa_file(tmp_path / "x.txt", pd)
        back = read_fa_file(tmp_path / "x.txt")
        np.testing.assert_array_equal(back.phonemes, pd.phonemes)
        np.testing.assert_array_equal(back.durations, pd.durations)

    def test_comments_and_bad_ids(self, tmp_path):
        (tmp_path / "a.txt").write_text("# header\n5 2  # trailing\n\n")
        assert read_fa_file(tmp_path / "a.txt").total_frames == 2
        (tmp_path / "b.txt").write_text("72 2\n")
        with pytest.raises(ValidationError):
            read_fa_file(tmp_path / "b.txt")


class TestResample:
    def test_equal_rates_identity(self):
        a = AlignmentSequence.ua([3, 1, 4, 1, 5], 10)
        assert resample_alignment(a, 50, 50) == a

    def test_two_frames_50_to_62_5(self):
        out = resample_alignment(AlignmentSequence.ua([1, 2], 10), 50.0, 62.5)
        # j -> floor(j * 0.8 + 0.5): 0 -> 0, 1 -> 1, 2 -> 2 clipped to 1
        np.testing.assert_array_equal(out.tokens, [1, 2, 2])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 9), min_size=1, max_size=80), st.floats(1.0, 200.0), st.floats(1.0, 200.0))
    def test_length_and_support(self, toks, src, dst):
        a = AlignmentSequence.ua(toks, 10)
        out = resample_alignment(a, src, dst)
        assert len(out) == int(np.floor(len(a) * dst / src + 0.5))
        assert set(out.tokens.tolist()) <= set(toks)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 9), st.integers(1, 50), st.floats(1.0, 200.0), st.floats(1.0, 200.0))
    def test_constant_stays_constant(self, tok, n, src, dst):
        out = resample_alignment(AlignmentSequence.ua([tok] * n, 10), src, dst)
        assert np.all(out.tokens == tok)

    def test_bad_rate_rejected(self):
        with pytest.raises(ValidationError):
            resample_alignment(AlignmentSequence.ua([1], 10), 0, 50)


class TestFitLength:
    def test_trim_and_pad(self):
        a = AlignmentSequence.ua([1, 2, 3], 10)
        np.testing.assert_array_equal(fit_length(a, 2).tokens, [1, 2])
        np.testing.assert_array_equal(fit_length(a, 5).tokens, [1, 2, 3, 3, 3])
        assert fit_length(a, 3) == a

    def test_large_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            fit_length(AlignmentSequence.ua([1, 2, 3], 10), 6)


class TestCodebook:
    def test_blob_purity(self):
        X, y = blobs(0)
        cb = fit_codebook(FeatureMatrix(X, 50.0), K=4, rng=0)
        labels = assign_units(X, cb).tokens
        assert purity(labels, y) == 1.0

    def test_inertia_non_increasing(self):
        X, _ = blobs(1, k=6, spread=2.0, sep=3.0)
        cb = fit_codebook(X, K=6, rng=2)
        h = np.array(cb.inertia_history)
        assert len(h) >= 2 and np.all(np.diff(h) <= 0)

    def test_k_distinct_points_are_fixed_point(self):
        X = np.random.default_rng(5).normal(size=(7, 3))
        cb = fit_codebook(X, K=7, rng=0)
        got = cb.centroids[np.lexsort(cb.centroids.T)]
        want = X[np.lexsort(X.T)]
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_k_one_rejected(self):
        with pytest.raises(ValidationError):
            fit_codebook(np.zeros((10, 2)) + np.arange(10)[:, None], K=1)

    def test_too_few_distinct_frames_rejected(self):
        with pytest.raises(ValidationError):
            fit_codebook(np.zeros((50, 2)), K=3)

    def test_deterministic_given_seed(self):
        X, _ = blobs(3, spread=3.0, sep=2.0)
        a, b = fit_codebook(X, K=5, rng=11), fit_codebook(X, K=5, rng=11)
        np.testing.assert_array_equal(a.centroids, b.centroids)

    def test_list_of_matrices(self):
        X, y = blobs(4)
        cb = fit_codebook([FeatureMatrix(X[:100], 50.0), FeatureMatrix(X[100:], 50.0)], K=4, rng=0)
        assert purity(assign_units(X, cb).tokens, y) == 1.0

    def test_file_round_trip(self, tmp_path):
        cb = Codebook(np.random.default_rng(0).normal(size=(5, 3)))
        save_codebook(tmp_path / "c.ucb", cb)
        back = load_codebook(tmp_path / "c.ucb")
        np.testing.assert_allclose(back.centroids, cb.centroids.astype(np.float32))


class TestAssignUnits:
    def test_centroid_maps_to_itself(self):
        C = np.random.default_rng(0).normal(size=(6, 4))
        np.testing.assert_array_equal(assign_units(C, Codebook(C)).tokens, np.arange(6))

    def test_tie_goes_to_lowest_index(self):
        C = np.zeros((6, 2))
        C[:, 0] = [10, 20, -1, 30, 40, 1]
        tok = assign_units(np.zeros((1, 2)), Codebook(C)).tokens
        assert tok.tolist() == [2]

    def test_matches_brute_force_scan(self):
        X, _ = blobs(7, spread=4.0, sep=3.0)
        cb = fit_codebook(X, K=8, rng=0)
        got = assign_units(X, cb).tokens
        want = [min(range(cb.K), key=lambda k: (float(((x - cb.centroids[k]) ** 2).sum()), k)) for x in X]
        np.testing.assert_array_equal(got, want)
        assert got.min() >= 0 and got.max() < cb.K

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            assign_units(np.zeros((3, 2)), Codebook(np.zeros((2, 3)) + np.arange(2)[:, None]))

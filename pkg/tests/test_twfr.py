import numpy as np
import pytest

from first_shot_asd.spectrogram import Spectrogram
from first_shot_asd.tuner import TuningConfig
from first_shot_asd.twfr import (TwfrError, check_r, ranked_matrices, ranking, twfr, twfr_batch,
                                 twfr_from_ranked, weights)


class TestRanking:
    def test_sorts_descending(self):
        np.testing.assert_array_equal(ranking(Spectrogram([[1.0, 3.0, 2.0]])).values, [[3.0, 2.0, 1.0]])

    def test_sorted_input_unchanged(self):
        values = np.array([[5.0, 4.0, 4.0, 1.0], [0.0, -1.0, -2.0, -3.0]])
        np.testing.assert_array_equal(ranking(Spectrogram(values)).values, values)

    def test_rows_are_non_increasing_permutations(self, rng):
        values = rng.standard_normal((4, 16))
        ranked = ranking(Spectrogram(values)).values
        for row, original in zip(ranked, values):
            assert np.all(np.diff(row) <= 0)
            np.testing.assert_array_equal(np.sort(row), np.sort(original))


class TestWeights:
    def test_average_pooling(self):
        np.testing.assert_array_equal(weights(1.0, 4), [0.25, 0.25, 0.25, 0.25])

    def test_max_pooling(self):
        np.testing.assert_array_equal(weights(0.0, 3), [1.0, 0.0, 0.0])

    def test_half(self):
        np.testing.assert_allclose(weights(0.5, 3), [4 / 7, 2 / 7, 1 / 7], atol=1e-15)

    def test_single_frame(self):
        np.testing.assert_array_equal(weights(0.7, 1), [1.0])

    def test_sum_to_one_over_grid(self):
        for r in TuningConfig().grid():
            for n_frames in (1, 2, 61, 313):
                w = weights(r, n_frames)
                assert abs(w.sum() - 1.0) <= 1e-12
                assert np.all(w >= 0)

    def test_out_of_range(self):
        with pytest.raises(TwfrError):
            weights(1.2, 3)
        with pytest.raises(TwfrError):
            check_r(-0.01)

    def test_zero_frames(self):
        with pytest.raises(TwfrError):
            weights(0.5, 0)


class TestTwfr:
    def test_hand_value(self):
        vector = twfr(Spectrogram([[1.0, 3.0, 2.0], [0.0, 5.0, 4.0]]), 0.5)
        np.testing.assert_allclose(vector, [17 / 7, 4.0], atol=1e-12)

    def test_pooling_identities(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            m, n = int(rng.integers(1, 33)), int(rng.integers(1, 65))
            spec = Spectrogram(rng.normal(size=(m, n)) * 10)
            np.testing.assert_array_equal(twfr(spec, 0.0), spec.values.max(axis=1))
            np.testing.assert_allclose(twfr(spec, 1.0), spec.values.mean(axis=1), rtol=0, atol=1e-9)

    def test_batch_matches_single(self, rng):
        specs = [Spectrogram(rng.standard_normal((8, n))) for n in (10, 10, 17)]
        batch = twfr_batch(ranked_matrices(specs), 0.83)
        assert batch.shape == (3, 8)
        for row, spec in zip(batch, specs):
            np.testing.assert_allclose(row, twfr(spec, 0.83), atol=1e-12)

    def test_from_ranked(self, rng):
        spec = Spectrogram(rng.standard_normal((3, 5)))
        np.testing.assert_allclose(twfr_from_ranked(ranked_matrices([spec])[0], 0.3), twfr(spec, 0.3), atol=1e-15)

    def test_empty_batch(self):
        with pytest.raises(TwfrError):
            twfr_batch([], 0.5)


class TestPoolingProperties:
    @pytest.mark.parametrize("r", [0.0, 0.37, 1.0, 1.1])
    def test_frame_order_does_not_matter(self, rng, r):
        spec = Spectrogram(rng.standard_normal((6, 40)))
        shuffled = Spectrogram(spec.values[:, rng.permutation(40)])
        np.testing.assert_allclose(twfr(shuffled, r), twfr(spec, r), rtol=0, atol=1e-12)

    def test_between_min_and_max(self):
        rng = np.random.default_rng(11)
        for r in TuningConfig(r_step=0.05).grid():
            spec = Spectrogram(rng.normal(size=(5, int(rng.integers(1, 50)))) * 20)
            vector = twfr(spec, r)
            assert np.all(vector >= spec.values.min(axis=1) - 1e-12)
            assert np.all(vector <= spec.values.max(axis=1) + 1e-12)

    @pytest.mark.parametrize("r", [0.01, 0.5, 0.99])
    def test_weights_decrease_below_one(self, r):
        assert np.all(np.diff(weights(r, 50)) < 0)

    @pytest.mark.parametrize("r", [1.01, 1.05, 1.1])
    def test_weights_increase_above_one(self, r):
        assert np.all(np.diff(weights(r, 50)) > 0)

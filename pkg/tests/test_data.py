"""Synthetic source generation, CSV ingestion and splitting tests."""

import numpy as np
import pytest

from dsckit.data import gen_gaussian_chain, gen_gaussian_field, load_csv, split
from dsckit.model import DegenerateDataError


class TestChain:
    def test_independent_sources(self):
        ts = gen_gaussian_chain(4, 0.0, 50000, seed=0)
        corr = np.corrcoef(ts.samples.T)
        off = corr[~np.eye(4, dtype=bool)]
        assert np.all(np.abs(off) < 4 / np.sqrt(50000))

    def test_neighbor_correlation(self):
        ts = gen_gaussian_chain(5, 0.95, 200000, seed=1)
        corr = np.corrcoef(ts.samples.T)
        for i in range(4):
            assert corr[i, i + 1] == pytest.approx(0.95, abs=0.01)

    def test_two_step_correlation_is_rho_squared(self):
        ts = gen_gaussian_chain(5, 0.95, 200000, seed=2)
        corr = np.corrcoef(ts.samples.T)
        for i in range(3):
            assert corr[i, i + 2] == pytest.approx(0.95 ** 2, abs=0.01)

    def test_entrywise_covariance_error_bound(self):
        count = 100000
        ts = gen_gaussian_chain(4, 0.8, count, seed=3)
        cov = ts.samples.T @ ts.samples / count
        idx = np.arange(4)
        want = 0.8 ** np.abs(idx[:, None] - idx[None, :])
        assert np.all(np.abs(cov - want) < 5 / np.sqrt(count))

    def test_seed_reproducibility(self):
        a = gen_gaussian_chain(3, 0.5, 1000, seed=42)
        b = gen_gaussian_chain(3, 0.5, 1000, seed=42)
        assert a.samples.tobytes() == b.samples.tobytes()

    def test_rho_validation(self):
        with pytest.raises(ValueError):
            gen_gaussian_chain(3, 1.0, 10)


class TestField:
    def test_distance_d0_gives_rho(self):
        positions = [[0.0, 0.0], [100.0, 0.0]]
        ts = gen_gaussian_field(positions, 0.8, 100.0, 200000, seed=4)
        corr = np.corrcoef(ts.samples.T)
        assert corr[0, 1] == pytest.approx(0.8, abs=0.01)

    def test_coincident_sensors_rejected(self):
        with pytest.raises(DegenerateDataError):
            gen_gaussian_field([[0.0, 0.0], [0.0, 0.0]], 0.8, 100.0, 10)

    def test_far_sensors_nearly_independent(self):
        positions = [[0.0, 0.0], [10000.0, 0.0]]
        ts = gen_gaussian_field(positions, 0.8, 100.0, 50000, seed=5)
        corr = np.corrcoef(ts.samples.T)
        assert abs(corr[0, 1]) < 0.02


class TestCsv:
    def test_hand_standardization(self, tmp_path):
        # training half = first 2 rows; their mean/std standardize everything
        path = tmp_path / "d.csv"
        path.write_text("a,b\n1,10\n3,30\n5,50\n7,70\n")
        loaded = load_csv(path)
        assert loaded.header == ("a", "b")
        assert loaded.dropped_rows == 0
        mean, std = 2.0, 1.0
        want0 = (np.array([1, 3, 5, 7]) - mean) / std
        np.testing.assert_allclose(loaded.data.column(0), want0)

    def test_constant_column_rejected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1,5\n1,6\n1,7\n1,8\n")
        with pytest.raises(DegenerateDataError):
            load_csv(path)

    def test_missing_rows_dropped_and_counted(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1,2\n3,\n5,6\n,8\n9,10\n11,12\n")
        loaded = load_csv(path, normalize=False)
        assert loaded.dropped_rows == 2
        assert loaded.data.sample_count == 4

    def test_non_numeric_cell_names_location(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1,2\n3,oops\n5,6\n")
        with pytest.raises(ValueError, match="row 2, column 1"):
            load_csv(path)

    def test_too_few_rows(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1,2\n")
        with pytest.raises(DegenerateDataError):
            load_csv(path)


class TestSplit:
    def test_even_split(self):
        ts = gen_gaussian_chain(2, 0.5, 10, seed=6)
        train, test = split(ts, 0.5)
        assert train.sample_count == 5
        assert test.sample_count == 5

    def test_contiguous_default(self):
        ts = gen_gaussian_chain(2, 0.5, 10, seed=7)
        train, test = split(ts, 0.5)
        np.testing.assert_array_equal(train.samples, ts.samples[:5])
        np.testing.assert_array_equal(test.samples, ts.samples[5:])

    def test_shuffled_split_is_seed_stable_and_exhaustive(self):
        ts = gen_gaussian_chain(2, 0.5, 100, seed=8)
        a_train, a_test = split(ts, 0.3, seed=1, shuffle=True)
        b_train, b_test = split(ts, 0.3, seed=1, shuffle=True)
        assert a_train.samples.tobytes() == b_train.samples.tobytes()
        merged = np.vstack([a_train.samples, a_test.samples])
        assert merged.shape == ts.samples.shape
        order = np.lexsort(merged.T)
        order_orig = np.lexsort(ts.samples.T)
        np.testing.assert_array_equal(merged[order], ts.samples[order_orig])

    def test_bad_fraction(self):
        ts = gen_gaussian_chain(2, 0.5, 10, seed=9)
        with pytest.raises(ValueError):
            split(ts, 0.0)
        with pytest.raises(ValueError):
            split(ts, 0.05)

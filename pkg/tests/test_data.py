import numpy as np
import pytest

from ldprec.data import (SparseRatingMatrix, load_canonical, load_dataset, load_jester,
                         load_libimseti, load_movielens, save_canonical, subsample)
from ldprec.domain import MOVIELENS, RatingDomain
from ldprec.errors import DataFormatError, DomainError, DuplicateEntryError, EmptyDatasetError


class TestSparseRatingMatrix:
    def test_validation(self):
        with pytest.raises(IndexError):
            SparseRatingMatrix(2, 2, [2], [0], [1.0], MOVIELENS)
        with pytest.raises(DomainError):
            SparseRatingMatrix(2, 2, [0], [0], [7.0], MOVIELENS)
        with pytest.raises(ValueError):
            SparseRatingMatrix(2, 2, [0, 1], [0], [1.0], MOVIELENS)

    def test_read_only(self):
        R = SparseRatingMatrix(2, 2, [0], [1], [3.0], MOVIELENS)
        with pytest.raises(ValueError):
            R.ratings[0] = 4.0

    def test_duplicates(self):
        with pytest.raises(DuplicateEntryError):
            SparseRatingMatrix.from_triples([0, 0], [1, 1], [1.0, 2.0], MOVIELENS)

    def test_take_compact_dense(self):
        R = SparseRatingMatrix(3, 3, [0, 2, 2], [0, 1, 2], [1.0, 2.0, 3.0], MOVIELENS)
        C = R.take([1, 2]).compact()
        assert C.shape == (1, 2)
        np.testing.assert_array_equal(C.user_labels, [2])
        np.testing.assert_array_equal(C.item_labels, [1, 2])
        np.testing.assert_array_equal(C.to_dense(), [[2.0, 3.0]])
        assert R.global_mean() == 2.0

    def test_empty_mean_is_midpoint(self):
        assert SparseRatingMatrix(1, 1, [], [], [], MOVIELENS).global_mean() == 2.75


class TestLoaders:
    def test_movielens_counts(self, movielens):
        assert (len(movielens), movielens.num_users, movielens.num_items) == (100000, 943, 1682)
        assert movielens.ratings.min() == 1.0 and movielens.ratings.max() == 5.0

    def test_movielens_small(self, tmp_path):
        p = tmp_path / "u.data"
        p.write_text("10\t7\t4\t88\n3\t7\t2\t89\n10\t8\t5\t90\n")
        R = load_movielens(p)
        assert R.shape == (2, 2)
        np.testing.assert_array_equal(R.user_labels, [3, 10])
        np.testing.assert_array_equal(R.to_dense(), [[2.0, np.nan], [4.0, 5.0]])

    def test_empty_file(self, tmp_path):
        p = tmp_path / "u.data"
        p.write_text("")
        with pytest.raises(EmptyDatasetError):
            load_movielens(p)

    def test_parse_error_line_number(self, tmp_path):
        p = tmp_path / "u.data"
        p.write_text("".join(f"{i}\t1\t3\t0\n" for i in range(1, 7)) + "7\tx\t3\t0\n")
        with pytest.raises(DataFormatError) as info:
            load_movielens(p)
        assert info.value.line == 7

    def test_out_of_range(self, tmp_path):
        p = tmp_path / "u.data"
        p.write_text("1\t1\t6\t0\n")
        with pytest.raises(DomainError):
            load_movielens(p)

    def test_jester_sentinel(self, tmp_path):
        p = tmp_path / "jester.csv"
        p.write_text("2,99,4.5,-3\n3,1.0,99,10\n")
        R = load_jester(p)
        assert len(R) == 4
        np.testing.assert_array_equal(R.to_dense(), [[np.nan, 4.5, -3.0], [1.0, np.nan, 10.0]])

    def test_libimseti_errors(self, tmp_path):
        p = tmp_path / "ratings.dat"
        p.write_text("1,2,5\n1,2,6\n")
        with pytest.raises(DuplicateEntryError):
            load_libimseti(p)
        p.write_text("1,2,0\n")
        with pytest.raises(DomainError):
            load_libimseti(p)

    def test_load_dataset(self, tmp_path):
        with pytest.raises(ValueError):
            load_dataset("netflix", tmp_path)
        with pytest.raises(FileNotFoundError):
            load_dataset("movielens", tmp_path)
        (tmp_path / "u.data").write_text("1\t1\t3\t0\n")
        assert len(load_dataset("movielens", tmp_path)) == 1


class TestSubsample:
    def test_exact_count(self, movielens):
        S = subsample(movielens, 0.2, seed=0)
        assert len(S) == 20000
        S.check_unique()

    def test_max_entries_and_determinism(self):
        R = SparseRatingMatrix(5, 5, np.repeat(np.arange(5), 5), np.tile(np.arange(5), 5),
                               np.ones(25), MOVIELENS)
        a, b = subsample(R, max_entries=7, seed=1), subsample(R, max_entries=7, seed=1)
        assert len(a) == 7
        np.testing.assert_array_equal(a.user_labels[a.users], b.user_labels[b.users])
        with pytest.raises(ValueError):
            subsample(R, 1.5)
        with pytest.raises(ValueError):
            subsample(R)


class TestCanonical:
    def test_round_trip(self, tmp_path):
        R = SparseRatingMatrix(3, 4, [0, 2, 1], [3, 0, 1], [0.1 + 0.2, 2.5, 1.0 / 3.0],
                               RatingDomain(0.0, 5.0))
        save_canonical(R, tmp_path / "c.csv")
        back = load_canonical(tmp_path / "c.csv")
        assert back.shape == R.shape and back.domain == R.domain
        np.testing.assert_array_equal(back.ratings, R.ratings)
        np.testing.assert_array_equal(back.users, R.users)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("a,b\n")
        with pytest.raises(DataFormatError):
            load_canonical(p)

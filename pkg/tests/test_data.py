import numpy as np
import pytest

from expomf.data import (
    CovariateMatrix,
    InteractionMatrix,
    cluster_locations,
    filter_and_binarize,
    load_covariates,
    load_interactions,
    load_locations,
    read_dataset,
    split_interactions,
    write_dataset,
)
from expomf.errors import ConfigurationError, DataError

from conftest import make_matrix


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# raw triple parsing


def test_load_keeps_duplicate_rows(tmp_path):
    path = write(tmp_path, "raw.tsv", "u1\ti1\t3\nu1\ti1\t2\n")
    raw = load_interactions(path)
    assert len(raw) == 2
    assert raw.records[0] == ("u1", "i1", 3)
    assert raw.records[1] == ("u1", "i1", 2)


def test_load_rejects_non_numeric_count(tmp_path):
    path = write(tmp_path, "raw.tsv", "u1\ti1\tabc\n")
    with pytest.raises(DataError, match="line 1"):
        load_interactions(path)


def test_load_empty_file(tmp_path):
    raw = load_interactions(write(tmp_path, "raw.tsv", ""))
    assert len(raw) == 0


def test_load_skips_header_row(tmp_path):
    path = write(tmp_path, "raw.tsv", "user\titem\tcount\nu1\ti1\t3\n")
    raw = load_interactions(path)
    assert raw.records == [("u1", "i1", 3)]


def test_load_csv_format(tmp_path):
    path = write(tmp_path, "raw.csv", "u1,i1,3\nu2,i2,1\n")
    raw = load_interactions(path, fmt="csv")
    assert len(raw) == 2


def test_load_rejects_negative_count(tmp_path):
    path = write(tmp_path, "raw.tsv", "u1\ti1\t-2\n")
    with pytest.raises(DataError, match="line 1"):
        load_interactions(path)


def test_load_missing_file():
    with pytest.raises((DataError, OSError)):
        load_interactions("/nonexistent/raw.tsv")


def test_load_two_column_rows_count_as_one(tmp_path):
    raw = load_interactions(write(tmp_path, "raw.tsv", "u1\ti1\nu1\ti2\n"))
    assert [r[2] for r in raw.records] == [1, 1]


# ---------------------------------------------------------------------------
# filtering and binarization


def triples_of(m: InteractionMatrix):
    return {(m.user_ids[u], m.item_ids[i]) for u, i, _ in m.triples()}


def test_filter_single_user(tmp_path):
    path = write(tmp_path, "raw.tsv", "u1\ti1\t3\nu1\ti2\t1\nu1\ti3\t9\n")
    matrix = filter_and_binarize(load_interactions(path), 1, 1)
    assert (matrix.n_users, matrix.n_items) == (1, 3)
    assert sorted(matrix.csr.data.tolist()) == [1.0, 1.0, 1.0]


def test_filter_aggregates_duplicates(tmp_path):
    path = write(tmp_path, "raw.tsv", "u1\ti1\t3\nu1\ti1\t2\nu1\ti2\t1\n")
    matrix = filter_and_binarize(load_interactions(path), 1, 1)
    assert matrix.nnz == 2


def test_filter_cascade_removes_user_on_second_pass():
    # u1 holds 5 items, but 4 of them are held only by u1 and fall below an
    # item floor of 2; after those items drop, u1 has 1 item left and falls
    # below a user floor of 2. u2/u3 share enough to survive.
    records = [
        ("u1", "iA", 1),
        ("u1", "iB", 1),
        ("u1", "iC", 1),
        ("u1", "iD", 1),
        ("u1", "iS", 1),
        ("u2", "iS", 1),
        ("u2", "iT", 1),
        ("u3", "iS", 1),
        ("u3", "iT", 1),
    ]
    from expomf.data import RawInteractions

    matrix = filter_and_binarize(
        RawInteractions(records=records), min_user_items=2, min_item_users=2
    )
    assert triples_of(matrix) == {
        ("u2", "iS"),
        ("u2", "iT"),
        ("u3", "iS"),
        ("u3", "iT"),
    }


def test_filter_empty_result_is_an_error():
    from expomf.data import RawInteractions

    with pytest.raises(DataError, match="empty"):
        filter_and_binarize(
            RawInteractions(records=[("u1", "i1", 1)]), min_user_items=5, min_item_users=5
        )


def test_filter_drops_zero_counts():
    from expomf.data import RawInteractions

    matrix = filter_and_binarize(
        RawInteractions(records=[("u1", "i1", 0), ("u1", "i2", 2)]), 1, 1
    )
    assert triples_of(matrix) == {("u1", "i2")}


def test_filter_first_seen_index_order():
    from expomf.data import RawInteractions

    records = [("b", "y", 1), ("a", "x", 1), ("b", "x", 1), ("a", "y", 1)]
    matrix = filter_and_binarize(RawInteractions(records=records), 1, 1)
    assert matrix.user_ids == ["b", "a"]
    assert matrix.item_ids == ["y", "x"]


# ---------------------------------------------------------------------------
# splitting


def test_split_sizes_within_binomial_bound():
    matrix = make_matrix(50, 40, 0.5, seed=1)
    n = matrix.nnz
    split = split_interactions(matrix, (0.7, 0.2, 0.1), seed=3)
    for part, p in ((split.train, 0.7), (split.test, 0.2), (split.validation, 0.1)):
        sigma = np.sqrt(n * p * (1 - p))
        assert abs(part.nnz - n * p) <= 3 * sigma
    assert split.train.nnz + split.test.nnz + split.validation.nnz == n


def test_split_deterministic():
    matrix = make_matrix(20, 15, 0.4, seed=2)
    a = split_interactions(matrix, seed=9)
    b = split_interactions(matrix, seed=9)
    assert (a.train.csr != b.train.csr).nnz == 0
    assert (a.test.csr != b.test.csr).nnz == 0
    assert (a.validation.csr != b.validation.csr).nnz == 0


def test_split_rejects_degenerate_proportions():
    matrix = make_matrix(5, 5, 0.5, seed=0)
    with pytest.raises(ConfigurationError):
        split_interactions(matrix, (1.0, 0.0, 0.0))
    with pytest.raises(ConfigurationError):
        split_interactions(matrix, (0.5, 0.3, 0.1))


def test_split_shares_id_maps():
    matrix = make_matrix(10, 8, 0.5, seed=4)
    split = split_interactions(matrix, seed=0)
    assert split.train.user_ids == matrix.user_ids
    assert split.test.item_ids == matrix.item_ids


# ---------------------------------------------------------------------------
# covariates and locations


def test_covariates_basic(tmp_path):
    path = write(tmp_path, "cov.txt", "paper1 0.2 0.8\npaper2 0.5 0.5\n")
    cov = load_covariates(path, ["paper1", "paper2"])
    np.testing.assert_allclose(cov.values[0], [0.2, 0.8])


def test_covariates_renormalized(tmp_path):
    path = write(tmp_path, "cov.txt", "paper1 2 2\n")
    cov = load_covariates(path, ["paper1"])
    np.testing.assert_allclose(cov.values[0], [0.5, 0.5])


def test_covariates_negative_rejected(tmp_path):
    path = write(tmp_path, "cov.txt", "paper1 -1 2\n")
    with pytest.raises(DataError):
        load_covariates(path, ["paper1"])


def test_covariates_missing_items_listed(tmp_path):
    path = write(tmp_path, "cov.txt", "a 1 0\n")
    with pytest.raises(DataError, match="b"):
        load_covariates(path, ["a", "b"])


def test_covariates_extra_items_ignored(tmp_path):
    path = write(tmp_path, "cov.txt", "a 1 0\nzzz 0 1\n")
    cov = load_covariates(path, ["a"])
    assert cov.values.shape == (1, 2)


def test_covariates_ragged_rows_rejected(tmp_path):
    path = write(tmp_path, "cov.txt", "a 1 0\nb 1 0 0\n")
    with pytest.raises(DataError, match="line 2"):
        load_covariates(path, ["a", "b"])


def test_covariate_hash_tracks_content():
    a = CovariateMatrix(np.array([[0.5, 0.5]]), ["x"])
    b = CovariateMatrix(np.array([[0.5, 0.5]]), ["x"])
    c = CovariateMatrix(np.array([[0.4, 0.6]]), ["x"])
    assert a.content_hash() == b.content_hash()
    assert a.content_hash() != c.content_hash()


def test_cluster_two_tight_clusters():
    rng = np.random.default_rng(0)
    left = rng.normal(0.0, 0.01, size=(20, 2))
    right = rng.normal(0.0, 0.01, size=(20, 2)) + np.array([100.0, 0.0])
    coords = np.vstack([left, right])
    x = cluster_locations(coords, 2, seed=0)
    np.testing.assert_allclose(x.sum(axis=1), 1.0)
    assert np.all(x.max(axis=1) > 0.99)


def test_cluster_single_cluster_is_uniform():
    coords = np.random.default_rng(1).normal(size=(12, 3))
    x = cluster_locations(coords, 1, seed=0)
    np.testing.assert_allclose(x, 1.0)


def test_cluster_rejects_too_few_points():
    with pytest.raises((ConfigurationError, DataError)):
        cluster_locations(np.zeros((2, 2)), 5, seed=0)


def test_load_locations(tmp_path):
    path = write(tmp_path, "loc.txt", "a 1.5 -2.0\nb 0 0\n")
    coords = load_locations(path, ["b", "a"])
    np.testing.assert_allclose(coords, [[0.0, 0.0], [1.5, -2.0]])


# ---------------------------------------------------------------------------
# dataset directory round trip


def test_dataset_round_trip(tmp_path):
    matrix = make_matrix(15, 12, 0.4, seed=5)
    split = split_interactions(matrix, seed=1)
    write_dataset(tmp_path / "ds", split)
    loaded = read_dataset(tmp_path / "ds")
    assert loaded.train.user_ids == split.train.user_ids
    assert loaded.train.item_ids == split.train.item_ids
    for part in ("train", "validation", "test"):
        a, b = getattr(split, part), getattr(loaded, part)
        assert (a.csr != b.csr).nnz == 0


def test_dataset_round_trip_preserves_float_values(tmp_path):
    vals = np.random.default_rng(3).normal(size=1000)
    matrix = make_matrix(40, 30, 0.9, seed=3, values=vals[: 40 * 30])
    # keep only actual nonzero draws
    split = split_interactions(matrix, seed=2)
    write_dataset(tmp_path / "ds", split)
    loaded = read_dataset(tmp_path / "ds")
    np.testing.assert_array_equal(loaded.train.csr.data, split.train.csr.data)


def test_read_dataset_reports_bad_line(tmp_path):
    matrix = make_matrix(6, 5, 0.5, seed=6)
    split = split_interactions(matrix, seed=0)
    write_dataset(tmp_path / "ds", split)
    train = tmp_path / "ds" / "train.tsv"
    train.write_text(train.read_text() + "u0\tnot_an_item\t1\n")
    with pytest.raises(DataError, match="train.tsv"):
        read_dataset(tmp_path / "ds")


def test_from_triples_rejects_out_of_range():
    with pytest.raises((ConfigurationError, DataError)):
        InteractionMatrix.from_triples([(5, 0, 1.0)], 2, 2, ["a", "b"], ["c", "d"])


def test_from_triples_rejects_duplicates():
    with pytest.raises((ConfigurationError, DataError)):
        InteractionMatrix.from_triples(
            [(0, 0, 1.0), (0, 0, 1.0)], 1, 1, ["a"], ["b"]
        )

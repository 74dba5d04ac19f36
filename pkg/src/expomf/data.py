"""Interaction containers and dataset ingestion.

The on-disk world is raw triple files (user, item, optional count). The
in-memory world is :class:`InteractionMatrix`, a sparse users-by-items matrix
with stable external-id maps, and :class:`SplitDataset`, three such matrices
(train/validation/test) sharing one pair of id maps.

Ingestion runs load -> filter_and_binarize -> split. Filtering alternates
between dropping light users and light items until both constraints hold
simultaneously, then dense indices are assigned in first-seen order over the
surviving triples.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DataError
from .validation import check_count, check_seed


@dataclass
class RawInteractions:
    """Interaction triples as read from disk, order preserved.

    records holds (user_id, item_id, count) with external string ids and
    nonnegative integer counts (stored as float for uniformity).
    """

    records: list[tuple[str, str, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)


class InteractionMatrix:
    """Sparse users-by-items interaction matrix with external-id maps.

    Nonzero entries are interactions. After ingestion all values are 1.0;
    synthetic gaussian-mode data may carry real observation values instead.
    Row access (items per user) is CSR-backed, column access (users per item)
    CSC-backed, and the two views are consistent by construction.

    Args:
        matrix: scipy sparse matrix, shape (n_users, n_items), float64 values.
        user_ids: external id per row index.
        item_ids: external id per column index.
    """

    def __init__(self, matrix, user_ids: list[str], item_ids: list[str]):
        csr = sp.csr_matrix(matrix, dtype=np.float64, copy=False)
        csr.sort_indices()
        if csr.shape != (len(user_ids), len(item_ids)):
            raise DataError(
                f"id maps ({len(user_ids)} users, {len(item_ids)} items) do not match "
                f"matrix shape {csr.shape}"
            )
        self.csr = csr
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids)
        self.user_index = {u: k for k, u in enumerate(self.user_ids)}
        self.item_index = {i: k for k, i in enumerate(self.item_ids)}
        if len(self.user_index) != len(self.user_ids):
            raise DataError("duplicate user ids in id map")
        if len(self.item_index) != len(self.item_ids):
            raise DataError("duplicate item ids in id map")
        self._csc = None

    @property
    def n_users(self) -> int:
        return self.csr.shape[0]

    @property
    def n_items(self) -> int:
        return self.csr.shape[1]

    @property
    def nnz(self) -> int:
        return int(self.csr.nnz)

    @property
    def csc(self):
        if self._csc is None:
            self._csc = self.csr.tocsc()
            self._csc.sort_indices()
        return self._csc

    def row_items(self, u: int) -> np.ndarray:
        """Item indices the user interacted with, ascending."""
        return self.csr.indices[self.csr.indptr[u] : self.csr.indptr[u + 1]]

    def row_values(self, u: int) -> np.ndarray:
        return self.csr.data[self.csr.indptr[u] : self.csr.indptr[u + 1]]

    def col_users(self, i: int) -> np.ndarray:
        """User indices that interacted with the item, ascending."""
        csc = self.csc
        return csc.indices[csc.indptr[i] : csc.indptr[i + 1]]

    def col_values(self, i: int) -> np.ndarray:
        csc = self.csc
        return csc.data[csc.indptr[i] : csc.indptr[i + 1]]

    def triples(self):
        """Yield (user_idx, item_idx, value) in row-major order."""
        coo = self.csr.tocoo()
        for u, i, v in zip(coo.row, coo.col, coo.data):
            yield int(u), int(i), float(v)

    @classmethod
    def from_triples(cls, triples, n_users: int, n_items: int, user_ids, item_ids):
        """Build from (user_idx, item_idx, value) triples; duplicates rejected."""
        triples = list(triples)
        if triples:
            rows = np.fromiter((t[0] for t in triples), dtype=np.int64, count=len(triples))
            cols = np.fromiter((t[1] for t in triples), dtype=np.int64, count=len(triples))
            vals = np.fromiter((t[2] for t in triples), dtype=np.float64, count=len(triples))
            if rows.min() < 0 or rows.max() >= n_users or cols.min() < 0 or cols.max() >= n_items:
                raise DataError("triple index out of range for declared shape")
            keys = rows * n_items + cols
            if len(np.unique(keys)) != len(keys):
                raise DataError("duplicate (user, item) pair in triples")
            mat = sp.csr_matrix((vals, (rows, cols)), shape=(n_users, n_items))
        else:
            mat = sp.csr_matrix((n_users, n_items), dtype=np.float64)
        return cls(mat, user_ids, item_ids)


@dataclass
class SplitDataset:
    """Train/validation/test interaction matrices sharing one pair of id maps."""

    train: InteractionMatrix
    validation: InteractionMatrix
    test: InteractionMatrix
    seed: int = 0
    proportions: tuple[float, float, float] = (0.7, 0.2, 0.1)

    @property
    def n_users(self) -> int:
        return self.train.n_users

    @property
    def n_items(self) -> int:
        return self.train.n_items


@dataclass
class CovariateMatrix:
    """Per-item covariate rows, each normalized to sum to one."""

    values: np.ndarray
    item_ids: list[str]

    @property
    def n_items(self) -> int:
        return self.values.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.values.shape[1]

    def content_hash(self) -> bytes:
        """SHA-256 over shape and row-major float64 payload.

        Stored in checkpoints so a covariate-prior model can refuse to resume
        against different covariates.
        """
        import hashlib

        h = hashlib.sha256()
        h.update(np.asarray(self.values.shape, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.values, dtype=np.float64).tobytes())
        return h.digest()


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _parse_count(text: str, line_no: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"line {line_no}: count {text!r} is not a number") from None
    if not np.isfinite(value) or value < 0:
        raise DataError(f"line {line_no}: count must be a nonnegative integer, got {text!r}")
    if value != int(value):
        raise DataError(f"line {line_no}: count must be a nonnegative integer, got {text!r}")
    return value


def load_interactions(path, fmt: str = "tsv") -> RawInteractions:
    """Read raw interaction triples from a delimited text file.

    Each row is ``user_id, item_id[, count]`` with a tab (tsv) or comma (csv)
    delimiter. A missing count defaults to 1. An optional single header row is
    recognized when its third column is non-numeric while some later row parses
    as data; otherwise a non-numeric count is a parse error citing its line
    number. Blank lines are skipped. Counts must be nonnegative integers.

    Returns:
        RawInteractions preserving file order (which later fixes the dense
        index assignment).

    Raises:
        DataError: malformed row, reported with its 1-based line number.
        ConfigurationError: unknown format name.
    """
    if fmt not in ("tsv", "csv"):
        raise ConfigurationError(f"format must be 'tsv' or 'csv', got {fmt!r}")
    delimiter = "\t" if fmt == "tsv" else ","
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return _parse_interactions(fh, delimiter)


def _parse_interactions(fh, delimiter: str) -> RawInteractions:
    rows: list[tuple[int, list[str]]] = []
    for line_no, fields in enumerate(csv.reader(fh, delimiter=delimiter), start=1):
        fields = [f.strip() for f in fields]
        if not fields or all(f == "" for f in fields):
            continue
        rows.append((line_no, fields))
    if not rows:
        return RawInteractions([])

    def parses_as_data(fields: list[str]) -> bool:
        if len(fields) == 2:
            return True
        return len(fields) == 3 and _is_number(fields[2])

    start = 0
    first = rows[0][1]
    if len(first) >= 3 and not _is_number(first[2]):
        if any(parses_as_data(f) for _, f in rows[1:]):
            start = 1

    records: list[tuple[str, str, float]] = []
    for line_no, fields in rows[start:]:
        if len(fields) < 2 or len(fields) > 3:
            raise DataError(
                f"line {line_no}: expected 2 or 3 columns, got {len(fields)}"
            )
        user, item = fields[0], fields[1]
        if user == "" or item == "":
            raise DataError(f"line {line_no}: empty user or item id")
        count = _parse_count(fields[2], line_no) if len(fields) == 3 else 1.0
        records.append((user, item, count))
    return RawInteractions(records)


def filter_and_binarize(
    raw: RawInteractions, min_user_items: int = 20, min_item_users: int = 50
) -> InteractionMatrix:
    """Binarize counts and drop light users/items until both floors hold.

    Duplicate (user, item) rows collapse to a single interaction; zero counts
    are dropped before binarizing. Filtering alternates between removing users
    with fewer than min_user_items distinct items and items with fewer than
    min_item_users distinct users, iterating to a fixed point (removals on one
    side can push the other side below its floor).

    Raises:
        DataError: nothing survives filtering.
        ConfigurationError: a floor below 1.
    """
    check_count("min_user_items", min_user_items)
    check_count("min_item_users", min_item_users)

    pairs: dict[tuple[str, str], None] = {}
    for user, item, count in raw.records:
        if count > 0:
            pairs.setdefault((user, item), None)

    user_items: dict[str, set[str]] = {}
    item_users: dict[str, set[str]] = {}
    for user, item in pairs:
        user_items.setdefault(user, set()).add(item)
        item_users.setdefault(item, set()).add(user)

    while True:
        bad_users = [u for u, its in user_items.items() if len(its) < min_user_items]
        for u in bad_users:
            for i in user_items.pop(u):
                item_users[i].discard(u)
        bad_items = [i for i, us in item_users.items() if len(us) < min_item_users]
        for i in bad_items:
            for u in item_users.pop(i):
                user_items[u].discard(i)
        if not bad_users and not bad_items:
            break

    if not user_items or not item_users:
        raise DataError(
            "empty dataset after filtering "
            f"(min_user_items={min_user_items}, min_item_users={min_item_users})"
        )

    user_ids: list[str] = []
    item_ids: list[str] = []
    uidx: dict[str, int] = {}
    iidx: dict[str, int] = {}
    triples: list[tuple[int, int, float]] = []
    seen: set[tuple[str, str]] = set()
    for user, item, count in raw.records:
        if count <= 0 or (user, item) in seen:
            continue
        if user not in user_items or item not in user_items[user]:
            continue
        seen.add((user, item))
        if user not in uidx:
            uidx[user] = len(user_ids)
            user_ids.append(user)
        if item not in iidx:
            iidx[item] = len(item_ids)
            item_ids.append(item)
        triples.append((uidx[user], iidx[item], 1.0))

    return InteractionMatrix.from_triples(
        triples, len(user_ids), len(item_ids), user_ids, item_ids
    )


def split_interactions(
    data: InteractionMatrix,
    proportions: tuple[float, float, float] = (0.7, 0.2, 0.1),
    seed: int = 0,
) -> SplitDataset:
    """Assign each nonzero entry to train/test/validation by one seeded draw.

    proportions is (train, test, validation) and must be positive and sum to
    one. Every entry lands in exactly one part; the three matrices share the
    input's id maps. Per-entry assignment means counts are binomial around
    the exact proportions rather than exact.
    """
    check_seed("seed", seed)
    props = tuple(float(p) for p in proportions)
    if len(props) != 3 or any(p <= 0 for p in props):
        raise ConfigurationError(f"proportions must be three positive numbers, got {proportions!r}")
    if abs(sum(props) - 1.0) > 1e-9:
        raise ConfigurationError(f"proportions must sum to 1, got sum {sum(props)!r}")
    p_train, p_test, _ = props

    coo = data.csr.tocoo()
    order = np.lexsort((coo.col, coo.row))
    rows, cols, vals = coo.row[order], coo.col[order], coo.data[order]
    draws = np.random.default_rng(seed).random(len(rows))
    in_train = draws < p_train
    in_test = (~in_train) & (draws < p_train + p_test)
    in_val = ~(in_train | in_test)

    def part(mask) -> InteractionMatrix:
        mat = sp.csr_matrix(
            (vals[mask], (rows[mask], cols[mask])), shape=data.csr.shape
        )
        return InteractionMatrix(mat, data.user_ids, data.item_ids)

    return SplitDataset(
        train=part(in_train),
        validation=part(in_val),
        test=part(in_test),
        seed=seed,
        proportions=props,
    )


def _read_id_vector_rows(path, item_ids: list[str], what: str):
    """Parse 'item_id v1 v2 ...' rows; returns rows aligned to item_ids."""
    by_id: dict[str, np.ndarray] = {}
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            item = fields[0]
            try:
                vec = np.array([float(x) for x in fields[1:]], dtype=np.float64)
            except ValueError:
                raise DataError(f"line {line_no}: non-numeric value in {what} row") from None
            if vec.size == 0:
                raise DataError(f"line {line_no}: {what} row has no values")
            if width is None:
                width = vec.size
            elif vec.size != width:
                raise DataError(
                    f"line {line_no}: {what} row has {vec.size} values, expected {width}"
                )
            by_id[item] = vec
    missing = [i for i in item_ids if i not in by_id]
    if missing:
        shown = ", ".join(missing[:10])
        raise DataError(
            f"{len(missing)} items missing from {what} file (first 10: {shown})"
        )
    return np.vstack([by_id[i] for i in item_ids])


def load_covariates(path, item_ids: list[str]) -> CovariateMatrix:
    """Read per-item covariate rows and renormalize each to sum to one.

    File rows are ``item_id v1 ... vL`` (whitespace separated). Values must be
    nonnegative and each row must have positive mass. Items present in the
    file but absent from item_ids are ignored; items missing from the file are
    an error listing the first 10 missing ids.
    """
    values = _read_id_vector_rows(path, item_ids, "covariate")
    if np.any(values < 0):
        raise DataError("covariate values must be nonnegative")
    sums = values.sum(axis=1)
    zero = np.flatnonzero(sums == 0)
    if zero.size:
        raise DataError(f"covariate row for item {item_ids[int(zero[0])]!r} sums to zero")
    return CovariateMatrix(values / sums[:, None], list(item_ids))


def load_locations(path, item_ids: list[str]) -> np.ndarray:
    """Read per-item coordinate rows (``item_id x1 ... xD``), aligned to item_ids."""
    return _read_id_vector_rows(path, item_ids, "location")


def cluster_locations(coords: np.ndarray, n_clusters: int, seed: int = 0) -> np.ndarray:
    """Turn item coordinates into soft cluster-membership covariates.

    Runs seeded k-means (at most 100 iterations), then assigns each item a
    membership weight per cluster proportional to exp(-d^2 / (2 sigma^2)),
    where d is the distance to the cluster centroid and sigma is the mean
    distance of items to their assigned centroid. Rows are normalized to sum
    to one. If every item sits exactly on its centroid, assignments collapse
    to one-hot rows.

    Raises:
        ConfigurationError: n_clusters < 1 or more clusters than distinct points.
    """
    from sklearn.cluster import KMeans

    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2:
        raise ConfigurationError("coords must be a 2-d array of item coordinates")
    check_count("n_clusters", n_clusters)
    check_seed("seed", seed)
    distinct = np.unique(coords, axis=0).shape[0]
    if distinct < n_clusters:
        raise ConfigurationError(
            f"n_clusters={n_clusters} exceeds the {distinct} distinct coordinate points"
        )

    km = KMeans(n_clusters=n_clusters, random_state=seed, max_iter=100, n_init=4)
    labels = km.fit_predict(coords)
    centers = km.cluster_centers_

    dists = np.linalg.norm(coords[:, None, :] - centers[None, :, :], axis=2)
    own = dists[np.arange(len(coords)), labels]
    sigma = float(own.mean())
    if sigma == 0.0:
        out = np.zeros((len(coords), n_clusters))
        out[np.arange(len(coords)), labels] = 1.0
        return out
    weights = np.exp(-(dists**2) / (2.0 * sigma**2))
    return weights / weights.sum(axis=1, keepdims=True)


def _format_value(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return float(v).hex()


def _parse_value(text: str, line_no: int) -> float:
    try:
        return float.fromhex(text) if ("0x" in text or "0X" in text) else float(text)
    except ValueError:
        raise DataError(f"line {line_no}: bad interaction value {text!r}") from None


def write_dataset(dirpath, split: SplitDataset) -> None:
    """Write a dataset directory: three part files plus id maps.

    Layout: train.tsv / validation.tsv / test.tsv with external-id triples,
    users.txt / items.txt with one id per line in dense-index order. Non-unit
    values (synthetic gaussian observations) are written as C99 hex floats so
    the round trip is bit exact.
    """
    import os

    os.makedirs(dirpath, exist_ok=True)
    for name, mat in (
        ("train.tsv", split.train),
        ("validation.tsv", split.validation),
        ("test.tsv", split.test),
    ):
        with open(os.path.join(dirpath, name), "w", encoding="utf-8") as fh:
            for u, i, v in mat.triples():
                fh.write(f"{mat.user_ids[u]}\t{mat.item_ids[i]}\t{_format_value(v)}\n")
    with open(os.path.join(dirpath, "users.txt"), "w", encoding="utf-8") as fh:
        fh.writelines(f"{u}\n" for u in split.train.user_ids)
    with open(os.path.join(dirpath, "items.txt"), "w", encoding="utf-8") as fh:
        fh.writelines(f"{i}\n" for i in split.train.item_ids)


def read_dataset(dirpath) -> SplitDataset:
    """Read a dataset directory written by :func:`write_dataset`.

    The id maps come from users.txt/items.txt so all three matrices share
    them; part files may reference only mapped ids.
    """
    import os

    def read_ids(name):
        p = os.path.join(dirpath, name)
        if not os.path.exists(p):
            raise DataError(f"dataset directory is missing {name}")
        with open(p, "r", encoding="utf-8") as fh:
            return [line.rstrip("\n") for line in fh if line.strip() != ""]

    user_ids = read_ids("users.txt")
    item_ids = read_ids("items.txt")
    uidx = {u: k for k, u in enumerate(user_ids)}
    iidx = {i: k for k, i in enumerate(item_ids)}

    def read_part(name) -> InteractionMatrix:
        p = os.path.join(dirpath, name)
        if not os.path.exists(p):
            raise DataError(f"dataset directory is missing {name}")
        triples = []
        with open(p, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if line.strip() == "":
                    continue
                fields = line.rstrip("\n").split("\t")
                if len(fields) != 3:
                    raise DataError(f"{name} line {line_no}: expected 3 columns")
                user, item, text = fields
                if user not in uidx:
                    raise DataError(f"{name} line {line_no}: unknown user id {user!r}")
                if item not in iidx:
                    raise DataError(f"{name} line {line_no}: unknown item id {item!r}")
                triples.append((uidx[user], iidx[item], _parse_value(text, line_no)))
        return InteractionMatrix.from_triples(
            triples, len(user_ids), len(item_ids), user_ids, item_ids
        )

    return SplitDataset(
        train=read_part("train.tsv"),
        validation=read_part("validation.tsv"),
        test=read_part("test.tsv"),
    )

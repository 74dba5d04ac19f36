"""Ranking construction and ranking metrics.

Rankings exclude each user's train and validation items, break score ties by
ascending item index, and are scored against the held-out test items with
truncated recall, average precision, normalized discounted cumulative gain,
and mean percentile rank.

Average precision ships in two modes. The conventional definition only
credits positions holding a relevant item; the literal mode instead sums
Precision@n over every cutoff n, divided by min(n, |test|), which can exceed
1. Both are always computed; the literal mode is the report's headline MAP.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import SplitDataset
from .errors import ConfigurationError, DataError
from .state import ModelState, score_items

MAP_MODES = ("paper_literal", "standard")


@dataclass
class RankedList:
    """One user's candidate items sorted by descending predicted score."""

    user: int
    items: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.items)


def rank_from_scores(u: int, scores: np.ndarray, exclude=()) -> RankedList:
    """Rank all items by score, dropping excluded ones entirely.

    Ties break toward the smaller item index (stable sort over an ascending
    candidate list), so rankings are deterministic.
    """
    scores = np.asarray(scores)
    keep = np.ones(scores.shape[0], dtype=bool)
    exclude = np.asarray(list(exclude), dtype=np.intp)
    if exclude.size:
        keep[exclude] = False
    candidates = np.flatnonzero(keep)
    order = np.argsort(-scores[candidates], kind="stable")
    items = candidates[order]
    return RankedList(user=u, items=items, scores=scores[items])


def rank_items(state: ModelState, u: int, exclude=(), rule: str | None = None) -> RankedList:
    """Rank every non-excluded item for a user by predicted score."""
    return rank_from_scores(u, score_items(state, u, rule), exclude)


def _rank_positions(ranked: RankedList, test_items) -> np.ndarray:
    """1-based rank of every test item within the list; missing is an error."""
    test = np.asarray(list(test_items), dtype=np.intp)
    pos = {int(item): r for r, item in enumerate(ranked.items, start=1)}
    try:
        return np.array([pos[int(i)] for i in test], dtype=np.int64)
    except KeyError as err:
        raise DataError(f"test item {err.args[0]} is not in the ranked list") from None


def _check_test_items(test_items) -> list:
    test = list(test_items)
    if not test:
        raise DataError("test item set is empty; the user should be skipped instead")
    return test


def recall_at_k(ranked: RankedList, test_items, k: int) -> float:
    """Fraction of test items in the top k, normalized by min(k, |test|).

    The min in the denominator lets a user with more test items than k still
    reach a perfect score.
    """
    test = _check_test_items(test_items)
    ranks = _rank_positions(ranked, test)
    return float((ranks <= k).sum() / min(k, len(test)))


def map_at_k(ranked: RankedList, test_items, k: int, mode: str = "paper_literal") -> float:
    """Truncated average precision in either literal or standard mode."""
    if mode not in MAP_MODES:
        raise ConfigurationError(f"map mode must be one of {MAP_MODES}, got {mode!r}")
    test = set(_check_test_items(test_items))
    hits = 0
    total = 0.0
    for n, item in enumerate(ranked.items[:k], start=1):
        relevant = int(item) in test
        if relevant:
            hits += 1
        precision_at_n = hits / n
        if mode == "paper_literal":
            total += precision_at_n / min(n, len(test))
        elif relevant:
            total += precision_at_n
    if mode == "standard":
        total /= min(k, len(test))
    return float(total)


def ndcg_at_k(ranked: RankedList, test_items, k: int) -> float:
    """Binary-relevance NDCG truncated at k.

    DCG discounts position n by 1/log2(n+1); the ideal DCG packs
    min(k, |test|) relevant items at the top.
    """
    test = set(_check_test_items(test_items))
    dcg = 0.0
    for n, item in enumerate(ranked.items[:k], start=1):
        if int(item) in test:
            dcg += 1.0 / np.log2(n + 1)
    ideal = sum(1.0 / np.log2(n + 1) for n in range(1, min(k, len(test)) + 1))
    return float(dcg / ideal)


def _percentiles(ranked: RankedList, test_items) -> np.ndarray:
    """Percentile position of each test item: 0 at rank 1, 100 at the bottom."""
    ranks = _rank_positions(ranked, _check_test_items(test_items))
    length = len(ranked)
    if length == 1:
        return np.zeros(len(ranks))
    return (ranks - 1) / (length - 1) * 100.0


def mpr(ranked_lists, test_sets) -> float:
    """Mean percentile rank over all test interactions, in percent.

    Pools every (user, test item) pair across users, so heavy users weigh
    more, matching the sum-over-interactions definition. Lower is better;
    50 is what random ranking gives.
    """
    total = 0.0
    count = 0
    for ranked, test in zip(ranked_lists, test_sets):
        percs = _percentiles(ranked, test)
        total += float(percs.sum())
        count += len(percs)
    if count == 0:
        raise DataError("mpr needs at least one test interaction")
    return total / count


@dataclass
class EvalReport:
    """Mean and per-user ranking metrics over users with test items.

    recalls maps each cutoff to mean recall; map_at_k is the literal mode,
    map_at_k_standard the conventional one; mpr pools test interactions
    across users. per_user holds one aligned array per metric key for the
    users in evaluated_users.
    """

    n_evaluated: int
    n_skipped: int
    rank_k: int
    recalls: dict[int, float]
    ndcg_at_k: float
    map_at_k: float
    map_at_k_standard: float
    mpr: float
    evaluated_users: np.ndarray = field(repr=False)
    per_user: dict[str, np.ndarray] = field(repr=False)

    def summary(self) -> str:
        """Table-style grid of the mean metrics."""
        rows = [(f"Recall@{k}", v) for k, v in sorted(self.recalls.items())]
        rows += [
            (f"NDCG@{self.rank_k}", self.ndcg_at_k),
            (f"MAP@{self.rank_k}", self.map_at_k),
            (f"MAP@{self.rank_k} (standard)", self.map_at_k_standard),
            ("MPR (%)", self.mpr),
        ]
        width = max(len(name) for name, _ in rows)
        lines = [f"{name:<{width}}  {value:10.5f}" for name, value in rows]
        lines.append(f"{'users evaluated':<{width}}  {self.n_evaluated:10d}")
        lines.append(f"{'users skipped':<{width}}  {self.n_skipped:10d}")
        return "\n".join(lines)

    def to_key_values(self) -> list[tuple[str, str]]:
        pairs = [(f"recall_at_{k}", f"{v:.10g}") for k, v in sorted(self.recalls.items())]
        pairs += [
            (f"ndcg_at_{self.rank_k}", f"{self.ndcg_at_k:.10g}"),
            (f"map_at_{self.rank_k}", f"{self.map_at_k:.10g}"),
            (f"map_at_{self.rank_k}_standard", f"{self.map_at_k_standard:.10g}"),
            ("mpr_percent", f"{self.mpr:.10g}"),
            ("n_evaluated", str(self.n_evaluated)),
            ("n_skipped", str(self.n_skipped)),
        ]
        return pairs

    def to_table(self, user_ids: list[str] | None = None) -> str:
        """Per-user TSV with one metric per column."""
        keys = sorted(self.per_user)
        lines = ["user\t" + "\t".join(keys)]
        for row, u in enumerate(self.evaluated_users):
            label = user_ids[u] if user_ids is not None else str(int(u))
            cells = "\t".join(f"{self.per_user[k][row]:.10g}" for k in keys)
            lines.append(f"{label}\t{cells}")
        return "\n".join(lines) + "\n"


def evaluate(
    state: ModelState,
    data: SplitDataset,
    recall_ks: tuple[int, ...] = (20, 50),
    rank_k: int = 100,
    rule: str | None = None,
) -> EvalReport:
    """Score the test split: rank per user, excluding train and validation.

    Users with no test items are skipped and counted; an instance where
    nobody is evaluable is an error. Deterministic given the state.
    """
    if state.n_users != data.n_users or state.n_items != data.n_items:
        raise ConfigurationError(
            f"state is {state.n_users}x{state.n_items}, data is {data.n_users}x{data.n_items}"
        )
    evaluated: list[int] = []
    per_user: dict[str, list[float]] = {f"recall_at_{k}": [] for k in recall_ks}
    per_user.update(
        {
            f"ndcg_at_{rank_k}": [],
            f"map_at_{rank_k}": [],
            f"map_at_{rank_k}_standard": [],
            "mpr_percent": [],
        }
    )
    perc_total = 0.0
    perc_count = 0
    skipped = 0
    for u in range(state.n_users):
        test = data.test.row_items(u)
        if test.size == 0:
            skipped += 1
            continue
        exclude = np.concatenate([data.train.row_items(u), data.validation.row_items(u)])
        ranked = rank_from_scores(u, score_items(state, u, rule), exclude)
        for k in recall_ks:
            per_user[f"recall_at_{k}"].append(recall_at_k(ranked, test, k))
        per_user[f"ndcg_at_{rank_k}"].append(ndcg_at_k(ranked, test, rank_k))
        per_user[f"map_at_{rank_k}"].append(map_at_k(ranked, test, rank_k, "paper_literal"))
        per_user[f"map_at_{rank_k}_standard"].append(map_at_k(ranked, test, rank_k, "standard"))
        percs = _percentiles(ranked, test)
        per_user["mpr_percent"].append(float(percs.mean()))
        perc_total += float(percs.sum())
        perc_count += len(percs)
        evaluated.append(u)
    if not evaluated:
        raise DataError("no users have test items; nothing to evaluate")
    arrays = {k: np.asarray(v) for k, v in per_user.items()}
    return EvalReport(
        n_evaluated=len(evaluated),
        n_skipped=skipped,
        rank_k=rank_k,
        recalls={k: float(arrays[f"recall_at_{k}"].mean()) for k in recall_ks},
        ndcg_at_k=float(arrays[f"ndcg_at_{rank_k}"].mean()),
        map_at_k=float(arrays[f"map_at_{rank_k}"].mean()),
        map_at_k_standard=float(arrays[f"map_at_{rank_k}_standard"].mean()),
        mpr=perc_total / perc_count,
        evaluated_users=np.asarray(evaluated, dtype=np.intp),
        per_user=arrays,
    )

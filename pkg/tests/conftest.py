import numpy as np
import pytest

from expomf.data import InteractionMatrix, SplitDataset


def make_matrix(n_users, n_items, density, seed, values=None):
    """Random binary InteractionMatrix with roughly the given density."""
    rng = np.random.default_rng(seed)
    mask = rng.random((n_users, n_items)) < density
    rows, cols = np.nonzero(mask)
    vals = values if values is not None else np.ones(rows.size)
    triples = list(zip(rows.tolist(), cols.tolist(), np.asarray(vals).tolist()))
    return InteractionMatrix.from_triples(
        triples,
        n_users,
        n_items,
        [f"u{j}" for j in range(n_users)],
        [f"i{j}" for j in range(n_items)],
    )


def empty_matrix(like: InteractionMatrix) -> InteractionMatrix:
    return InteractionMatrix.from_triples(
        [], like.n_users, like.n_items, list(like.user_ids), list(like.item_ids)
    )


def make_split(n_users, n_items, density=0.1, seed=0) -> SplitDataset:
    """Train/validation/test from three disjoint random masks."""
    rng = np.random.default_rng(seed)
    draw = rng.random((n_users, n_items))
    parts = []
    for lo, hi in ((0.0, 0.7), (0.7, 0.85), (0.85, 1.0)):
        mask = (draw >= lo * density) & (draw < hi * density)
        rows, cols = np.nonzero(mask)
        triples = list(zip(rows.tolist(), cols.tolist(), [1.0] * rows.size))
        parts.append(
            InteractionMatrix.from_triples(
                triples,
                n_users,
                n_items,
                [f"u{j}" for j in range(n_users)],
                [f"i{j}" for j in range(n_items)],
            )
        )
    return SplitDataset(train=parts[0], validation=parts[1], test=parts[2])


@pytest.fixture
def small_split():
    return make_split(30, 24, density=0.25, seed=11)

"""Independent reference implementations and tree generators used by the tests.

Nothing here calls into the package's kernels: the TA oracle expands the
recursive definition into explicit per-descendant weights and sums them.
"""

from __future__ import annotations

import math

import numpy as np

from convtox.model import ConversationNode

SHAPES = ("recursive", "chain", "star", "bushy", "deep")


def random_parents(rng: np.random.Generator, n: int, shape: str) -> np.ndarray:
    """Parent index array with ``parent[0] == -1`` and ``parent[i] < i``."""
    parent = np.full(n, -1, dtype=np.int64)
    if n == 1:
        return parent
    i = np.arange(1, n)
    if shape == "recursive":
        parent[1:] = np.floor(rng.random(n - 1) * i).astype(np.int64)
    elif shape == "chain":
        parent[1:] = i - 1
    elif shape == "star":
        parent[1:] = 0
    elif shape == "bushy":
        b = int(rng.integers(2, 9))
        parent[1:] = (i - 1) // b
    elif shape == "deep":
        back = rng.geometric(0.6, n - 1)
        parent[1:] = np.maximum(i - back, 0)
    else:
        raise ValueError(shape)
    return parent


def random_tree_spec(rng: np.random.Generator, max_nodes: int = 10_000,
                     deep_cap: int = 2_000) -> tuple[np.ndarray, np.ndarray, str]:
    """Random (parent, toxicity, shape); sizes are log-uniform in [1, max_nodes]."""
    shape = SHAPES[int(rng.integers(0, len(SHAPES)))]
    n = int(math.exp(rng.uniform(0.0, math.log(max_nodes))))
    if shape in ("chain", "deep"):
        n = min(n, deep_cap)
    n = max(n, 1)
    return random_parents(rng, n, shape), rng.random(n), shape


def records_from_parents(parent: np.ndarray, toxicity: np.ndarray | None = None,
                         prefix: str = "n", community: str = "test",
                         shuffle_rng: np.random.Generator | None = None) -> list[ConversationNode]:
    n = parent.shape[0]
    ids = [f"{prefix}{i}" for i in range(n)]
    recs = [
        ConversationNode(
            id=ids[i],
            parent=None if parent[i] < 0 else ids[parent[i]],
            author="a",
            created_utc=1_000 + i,
            vote_score=0,
            body="text",
            community=community,
            toxicity=None if toxicity is None else float(toxicity[i]),
        )
        for i in range(n)
    ]
    if shuffle_rng is not None:
        order = shuffle_rng.permutation(n)
        recs = [recs[j] for j in order]
    return recs


def ta_oracle(parent: np.ndarray, toxicity: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """TA of every node by weight expansion, plus the per-node weight sums.

    Each node ``x`` contributes ``w(a, x) * toxicity(x)`` to every ancestor
    ``a`` (and to itself), where ``w(a, x)`` multiplies ``1 / (children + 1)``
    over the path from ``a`` down to ``x``. The walk goes upward one level at
    a time for all nodes at once.
    """
    parent = np.asarray(parent, dtype=np.int64)
    n = parent.shape[0]
    kids = np.bincount(parent[parent >= 0], minlength=n)
    inv = 1.0 / (kids + 1.0)

    ta = np.zeros(n)
    wsum = np.zeros(n)
    # weight of x in its own TA is 1/(k_x + 1)
    src = np.arange(n)
    at = src.copy()
    w = inv.copy()
    while at.size:
        np.add.at(ta, at, w * toxicity[src])
        np.add.at(wsum, at, w)
        up = parent[at]
        alive = up >= 0
        src, at, w = src[alive], up[alive], w[alive] * inv[up[alive]]
    return ta, wsum

"""Hot array kernels over flattened forests.

Every kernel has a numba implementation and a pure-numpy fallback. The
fallback is used when numba is missing or when the environment variable
``CONVTOX_NO_NUMBA`` is set to a non-empty value other than ``0``.

Layout contract: nodes are indexed so that every child has a larger index
than its parent (pre-order satisfies this), ``parent[root] == -1`` and
children are listed in CSR form (``child_ptr``/``child_idx``) in ascending
index order. Both backends accumulate sibling sums in the same order, so
their results are bit-identical.

TA is evaluated in the offset form ``t + sum(TA(c) - t) / (k + 1)``, which is
algebraically the same average but returns ``t`` exactly when every child
already equals it (leaves and uniform subtrees).
"""

from __future__ import annotations

import os

import numpy as np

_disabled = os.environ.get("CONVTOX_NO_NUMBA", "").strip() not in ("", "0")

try:
    if _disabled:
        raise ImportError("disabled via CONVTOX_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def _resolve(backend: str | None) -> str:
    backend = backend or BACKEND
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is unavailable")
    return backend


# ---------------------------------------------------------------------------
# numpy implementations


def _depths_numpy(parent, child_ptr, child_idx):
    n = parent.shape[0]
    depth = np.zeros(n, dtype=np.int64)
    frontier = np.flatnonzero(parent < 0)
    d = 0
    while frontier.size:
        depth[frontier] = d
        counts = child_ptr[frontier + 1] - child_ptr[frontier]
        total = int(counts.sum())
        if total == 0:
            break
        offsets = np.repeat(child_ptr[frontier] - (np.cumsum(counts) - counts), counts)
        frontier = child_idx[np.arange(total) + offsets]
        d += 1
    return depth


def _subtree_metrics_numpy(parent, child_ptr, depth, tox):
    n = tox.shape[0]
    ta = np.empty(n, dtype=np.float64)
    sub = np.zeros(n, dtype=np.float64)
    eng = np.zeros(n, dtype=np.int64)
    if n == 0:
        return ta, eng
    nch = np.diff(child_ptr)
    order = np.argsort(depth, kind="stable")
    bounds = np.searchsorted(depth[order], np.arange(int(depth.max()) + 2))
    for d in range(len(bounds) - 2, -1, -1):
        idx = order[bounds[d]:bounds[d + 1]]
        ta[idx] = tox[idx] + sub[idx] / (nch[idx] + 1)
        if d > 0:
            par = parent[idx]
            np.add.at(sub, par, ta[idx] - tox[par])
            np.maximum.at(eng, par, eng[idx] + 1)
    return ta, eng


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @njit(cache=True)
    def _depths_numba(parent):
        n = parent.shape[0]
        depth = np.zeros(n, dtype=np.int64)
        for i in range(n):
            p = parent[i]
            if p >= 0:
                depth[i] = depth[p] + 1
        return depth

    @njit(cache=True)
    def _subtree_metrics_numba(child_ptr, child_idx, tox):
        n = tox.shape[0]
        ta = np.empty(n, dtype=np.float64)
        eng = np.zeros(n, dtype=np.int64)
        for i in range(n - 1, -1, -1):
            s = 0.0
            e = 0
            lo = child_ptr[i]
            hi = child_ptr[i + 1]
            for j in range(lo, hi):
                c = child_idx[j]
                s += ta[c] - tox[i]
                if eng[c] + 1 > e:
                    e = eng[c] + 1
            ta[i] = tox[i] + s / (hi - lo + 1)
            eng[i] = e
        return ta, eng


# ---------------------------------------------------------------------------
# dispatch


def child_csr(parent: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """CSR child lists from a parent-index array (siblings in index order)."""
    n = parent.shape[0]
    nonroot = np.flatnonzero(parent >= 0)
    child_idx = nonroot[np.argsort(parent[nonroot], kind="stable")]
    counts = np.bincount(parent[nonroot], minlength=n)
    child_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=child_ptr[1:])
    return child_ptr, child_idx.astype(np.int64)


def node_depths(parent, child_ptr, child_idx, backend: str | None = None) -> np.ndarray:
    """Edge distance of every node from its root."""
    if _resolve(backend) == "numba":
        return _depths_numba(parent)
    return _depths_numpy(parent, child_ptr, child_idx)


def subtree_metrics(parent, child_ptr, child_idx, depth, tox,
                    backend: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Toxic accumulation and engagement (longest downward path) per node."""
    tox = np.ascontiguousarray(tox, dtype=np.float64)
    if _resolve(backend) == "numba":
        return _subtree_metrics_numba(child_ptr, child_idx, tox)
    return _subtree_metrics_numpy(parent, child_ptr, depth, tox)

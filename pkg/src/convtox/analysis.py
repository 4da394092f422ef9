"""Research-question pipelines over a scored forest.

Every pipeline accepts a :class:`~convtox.model.ConversationForest` or an
already flattened :class:`~convtox.metrics.ForestArrays`. Missing-text nodes
are structural only: they never enter a statistical sample.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import ComparisonError, SingularDesignError, UndefinedCorrelationError
from .metrics import ForestArrays
from .model import ConversationForest
from .stats import ols, pearson

log = logging.getLogger(__name__)

ForestLike = Union[ConversationForest, ForestArrays]

OVERALL = "overall"
FILTER_ALL = "all"
FILTER_TOXIC_ROOT = "toxic_root_gt_threshold"


def _arrays(forest: ForestLike) -> ForestArrays:
    return forest if isinstance(forest, ForestArrays) else forest.arrays


def _notify(notices: list[str] | None, msg: str) -> None:
    log.info(msg)
    if notices is not None:
        notices.append(msg)


@dataclass(frozen=True)
class AnalysisConfig:
    exclude_leaves: bool = True
    toxic_threshold: float = 0.5
    max_depth: int = 10
    max_level: int = 5
    bins: int = 10
    drop_first_bin: bool = True
    include_roots: bool = False
    standardize_betas: bool = False

    def __post_init__(self):
        if not 0.0 < self.toxic_threshold < 1.0:
            raise ValueError("toxic_threshold must lie in (0, 1)")
        for name in ("max_depth", "max_level", "bins"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")


@dataclass(frozen=True)
class CorrelationResult:
    group: str
    r: float
    p_value: float
    n: int
    leaves_excluded: bool


@dataclass(frozen=True)
class RegressionResult:
    level_model: int
    betas: tuple[float, ...]  # intercept, then parent, grandparent, ...
    n: int
    r_squared: float
    standardized_betas: tuple[float, ...] | None = None


@dataclass(frozen=True)
class DepthTrend:
    depth: int
    mean_toxicity: float | None
    mean_ta: float | None
    n_responses: int
    branch_terminating: int
    branch_reaching: int
    filter: str

    @property
    def branch_count(self) -> int:
        return self.branch_reaching


@dataclass(frozen=True)
class DepthSummary:
    filter: str
    total_branches: int
    branches_beyond_max_depth: int
    max_depth: int


@dataclass(frozen=True)
class HistogramBin:
    low: float
    high: float
    opinion_sum: int
    response_count: int
    dropped: bool


@dataclass(frozen=True)
class ParticipationHistogram:
    bins: tuple[HistogramBin, ...]
    first_bin_dropped: bool
    mid_range: tuple[float, float] = (0.3, 0.8)
    responses_in_mid_range: int = 0
    responses_outside_mid_range: int = 0

    def kept(self) -> tuple[HistogramBin, ...]:
        return tuple(b for b in self.bins if not b.dropped)


@dataclass(frozen=True)
class ParentChildStats:
    toxic_parent_n: int
    toxic_parent_pairs: int
    toxic_parent_child_toxic_rate: float | None
    nontoxic_parent_n: int
    nontoxic_parent_pairs: int
    nontoxic_parent_child_toxic_rate: float | None


@dataclass
class RQReport:
    """Results of RQ1-RQ4 for one forest."""

    rq1: list[CorrelationResult]
    rq2: list[RegressionResult]
    rq3: list[DepthTrend]
    rq3_summary: list[DepthSummary]
    rq4_histogram: ParticipationHistogram
    rq4_parent_child: ParentChildStats
    notices: list[str] = field(default_factory=list)


@dataclass
class GroupComparison:
    consensual_report: RQReport
    nonconsensual_report: RQReport
    deltas: dict[str, tuple[float, float, float]]  # metric -> (consensual, nonconsensual, delta)


# ---------------------------------------------------------------------------
# RQ1


def rq1_samples(forest: ForestLike, exclude_leaves: bool = True,
                include_roots: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Boolean sample mask plus the toxicity and TA columns."""
    a = _arrays(forest)
    m = a.metrics
    mask = ~a.text_missing
    if not include_roots:
        mask &= ~a.is_root
    if exclude_leaves:
        mask &= ~m.is_leaf
    return mask, m.toxicity, m.ta


def rq1_correlation(forest: ForestLike, exclude_leaves: bool = True, per_group: bool = True,
                    include_roots: bool = False,
                    notices: list[str] | None = None) -> list[CorrelationResult]:
    """Pearson r between toxicity and TA, pooled overall and per community."""
    a = _arrays(forest)
    mask, tox, ta = rq1_samples(a, exclude_leaves, include_roots)
    groups: list[tuple[str, np.ndarray]] = [(OVERALL, mask)]
    if per_group:
        comm = a.node_community
        for name in sorted({lab.community for lab in a.labels}):
            groups.append((name, mask & (comm == name)))
    out = []
    for name, gmask in groups:
        n = int(gmask.sum())
        if n < 3:
            _notify(notices, f"rq1: group {name!r} skipped ({n} samples < 3)")
            continue
        try:
            r, p = pearson(tox[gmask], ta[gmask])
        except UndefinedCorrelationError:
            _notify(notices, f"rq1: group {name!r} skipped (zero variance)")
            continue
        out.append(CorrelationResult(name, r, p, n, exclude_leaves))
    return out


# ---------------------------------------------------------------------------
# RQ2


def ancestor_matrix(forest: ForestLike, k: int) -> np.ndarray:
    """``(k, n)`` indices of the 1st..k-th ancestor of every node (-1 if none)."""
    a = _arrays(forest)
    n = len(a)
    out = np.full((k, n), -1, dtype=np.int64)
    cur = a.parent.copy()
    for level in range(k):
        out[level] = cur
        has = cur >= 0
        nxt = np.full(n, -1, dtype=np.int64)
        nxt[has] = a.parent[cur[has]]
        cur = nxt
    return out


def rq2_context_regression(forest: ForestLike, max_level: int = 5, min_level: int = 2,
                           standardize: bool = False,
                           notices: list[str] | None = None) -> list[RegressionResult]:
    """OLS of a response's toxicity on its ``L`` nearest ancestors, ``L = 2..max_level``.

    Responses with fewer than ``L`` ancestors, or with a missing-text node
    among target and ancestors, are left out of the level-``L`` sample.
    """
    a = _arrays(forest)
    m = a.metrics
    out: list[RegressionResult] = []
    if max_level < min_level:
        return out
    anc = ancestor_matrix(a, max_level)
    missing = a.text_missing
    tox = m.toxicity
    for level in range(min_level, max_level + 1):
        mask = (m.depth >= level) & ~missing
        for k in range(level):
            idx = np.where(anc[k] >= 0, anc[k], 0)
            mask &= ~missing[idx]
        n = int(mask.sum())
        if n <= level + 1:
            _notify(notices, f"rq2: level {level} model skipped ({n} samples)")
            continue
        cols = [np.ones(n)] + [tox[anc[k][mask]] for k in range(level)]
        design = np.column_stack(cols)
        target = tox[mask]
        try:
            fit = ols(design, target)
        except SingularDesignError:
            _notify(notices, f"rq2: level {level} model skipped (singular design)")
            continue
        std = None
        if standardize:
            sy = float(target.std())
            std = (0.0,) + tuple(float(fit.betas[j] * design[:, j].std() / sy) if sy > 0 else 0.0
                                 for j in range(1, level + 1))
        out.append(RegressionResult(level, tuple(float(b) for b in fit.betas), n,
                                    float(fit.r_squared), std))
    return out


# ---------------------------------------------------------------------------
# RQ3


def _depth_rows(a: ForestArrays, tree_keep: np.ndarray, max_depth: int,
                label: str) -> tuple[list[DepthTrend], DepthSummary]:
    m = a.metrics
    in_scope = tree_keep[a.tree_of]
    depth = m.depth
    size = max_depth + 1
    resp = in_scope & ~a.text_missing & (depth >= 1) & (depth <= max_depth)
    d_resp = depth[resp]
    counts = np.bincount(d_resp, minlength=size)
    tox_sum = np.bincount(d_resp, weights=m.toxicity[resp], minlength=size)
    ta_sum = np.bincount(d_resp, weights=m.ta[resp], minlength=size)

    leaf_depth = depth[in_scope & m.is_leaf]
    total_branches = int(leaf_depth.size)
    terminating = np.bincount(np.minimum(leaf_depth, size), minlength=size + 1)
    # reaching[d] = leaves with depth >= d
    reaching = np.cumsum(terminating[::-1])[::-1]

    rows = []
    for d in range(1, max_depth + 1):
        c = int(counts[d])
        rows.append(DepthTrend(
            depth=d,
            mean_toxicity=float(tox_sum[d] / c) if c else None,
            mean_ta=float(ta_sum[d] / c) if c else None,
            n_responses=c,
            branch_terminating=int(terminating[d]),
            branch_reaching=int(reaching[d]),
            filter=label,
        ))
    beyond = int(terminating[size])
    return rows, DepthSummary(label, total_branches, beyond, max_depth)


def rq3_depth_trends_detailed(forest: ForestLike, max_depth: int = 10,
                              toxic_threshold: float = 0.5
                              ) -> tuple[list[DepthTrend], list[DepthSummary]]:
    a = _arrays(forest)
    m = a.metrics
    all_trees = np.ones(a.n_trees, dtype=bool)
    roots = a.root_index
    toxic_root = (~a.text_missing[roots]) & (m.toxicity[roots] > toxic_threshold)
    rows_all, sum_all = _depth_rows(a, all_trees, max_depth, FILTER_ALL)
    rows_tox, sum_tox = _depth_rows(a, toxic_root, max_depth, FILTER_TOXIC_ROOT)
    return rows_all + rows_tox, [sum_all, sum_tox]


def rq3_depth_trends(forest: ForestLike, max_depth: int = 10,
                     toxic_threshold: float = 0.5) -> list[DepthTrend]:
    """Per-depth mean toxicity/TA and branch counts, for all trees and for
    trees whose root is toxic."""
    return rq3_depth_trends_detailed(forest, max_depth, toxic_threshold)[0]


# ---------------------------------------------------------------------------
# RQ4


def bin_index(scores: np.ndarray, bins: int = 10) -> np.ndarray:
    """Half-open bins ``[k/bins, (k+1)/bins)``, the top bin closed at 1.0."""
    edges = np.arange(bins + 1) / bins
    idx = np.searchsorted(edges, scores, side="right") - 1
    return np.clip(idx, 0, bins - 1)


def rq4_participation(forest: ForestLike, bins: int = 10, drop_first_bin: bool = True,
                      toxic_threshold: float = 0.5, include_roots: bool = False,
                      mid_range: tuple[float, float] = (0.3, 0.8)
                      ) -> tuple[ParticipationHistogram, ParentChildStats]:
    a = _arrays(forest)
    m = a.metrics
    valid = ~a.text_missing
    sample = valid if include_roots else valid & ~a.is_root
    scores = m.toxicity[sample]
    b = bin_index(scores, bins)
    opinion_sum = np.bincount(b, weights=m.opinions[sample], minlength=bins)
    response_count = np.bincount(b, minlength=bins)
    hist_bins = tuple(
        HistogramBin(k / bins, (k + 1) / bins, int(round(opinion_sum[k])), int(response_count[k]),
                     drop_first_bin and k == 0)
        for k in range(bins)
    )
    lo, hi = mid_range
    in_mid = int(((scores >= lo) & (scores <= hi)).sum())
    hist = ParticipationHistogram(hist_bins, drop_first_bin, mid_range, in_mid,
                                  int(scores.size) - in_mid)

    resp = valid & ~a.is_root
    toxic = m.toxicity > toxic_threshold
    child = np.flatnonzero(resp & (a.parent >= 0))
    par = a.parent[child]
    keep = resp[par]
    child, par = child[keep], par[keep]
    par_toxic = toxic[par]
    child_toxic = toxic[child]

    def rate(sel: np.ndarray) -> float | None:
        n = int(sel.sum())
        return int(child_toxic[sel].sum()) / n if n else None

    pcs = ParentChildStats(
        toxic_parent_n=int((resp & toxic).sum()),
        toxic_parent_pairs=int(par_toxic.sum()),
        toxic_parent_child_toxic_rate=rate(par_toxic),
        nontoxic_parent_n=int((resp & ~toxic).sum()),
        nontoxic_parent_pairs=int((~par_toxic).sum()),
        nontoxic_parent_child_toxic_rate=rate(~par_toxic),
    )
    return hist, pcs


# ---------------------------------------------------------------------------
# RQ5 and bundles


def run_rq1_to_rq4(forest: ForestLike, config: AnalysisConfig | None = None) -> RQReport:
    cfg = config or AnalysisConfig()
    a = _arrays(forest)
    notices: list[str] = []
    rq1 = rq1_correlation(a, cfg.exclude_leaves, True, cfg.include_roots, notices)
    rq2 = rq2_context_regression(a, cfg.max_level, standardize=cfg.standardize_betas,
                                 notices=notices)
    rq3, rq3_summary = rq3_depth_trends_detailed(a, cfg.max_depth, cfg.toxic_threshold)
    hist, pcs = rq4_participation(a, cfg.bins, cfg.drop_first_bin, cfg.toxic_threshold,
                                  cfg.include_roots)
    return RQReport(rq1, rq2, rq3, rq3_summary, hist, pcs, notices)


def report_scalars(report: RQReport) -> dict[str, float]:
    """Flat ``metric -> value`` view used for group deltas."""
    out: dict[str, float] = {}
    group_rs = []
    for c in report.rq1:
        out[f"rq1.{c.group}.r"] = c.r
        if c.group != OVERALL:
            group_rs.append(c.r)
    if group_rs:
        out["rq1.mean_group_r"] = math.fsum(group_rs) / len(group_rs)
    for reg in report.rq2:
        for i, b in enumerate(reg.betas):
            out[f"rq2.level{reg.level_model}.beta{i}"] = b
    for row in report.rq3:
        if row.mean_toxicity is not None:
            out[f"rq3.{row.filter}.depth{row.depth}.mean_toxicity"] = row.mean_toxicity
            out[f"rq3.{row.filter}.depth{row.depth}.mean_ta"] = row.mean_ta
        out[f"rq3.{row.filter}.depth{row.depth}.branch_reaching"] = float(row.branch_reaching)
    for k, b in enumerate(report.rq4_histogram.bins):
        out[f"rq4.bin{k}.opinion_sum"] = float(b.opinion_sum)
        out[f"rq4.bin{k}.response_count"] = float(b.response_count)
    h = report.rq4_histogram
    out["rq4.responses_in_mid_range"] = float(h.responses_in_mid_range)
    out["rq4.responses_outside_mid_range"] = float(h.responses_outside_mid_range)
    pcs = report.rq4_parent_child
    if pcs.toxic_parent_child_toxic_rate is not None:
        out["rq4.toxic_parent_child_toxic_rate"] = pcs.toxic_parent_child_toxic_rate
    if pcs.nontoxic_parent_child_toxic_rate is not None:
        out["rq4.nontoxic_parent_child_toxic_rate"] = pcs.nontoxic_parent_child_toxic_rate
    return out


def rq5_compare(forest: ForestLike, config: AnalysisConfig | None = None) -> GroupComparison:
    """Run RQ1-RQ4 separately on consensual and non-consensual trees."""
    a = _arrays(forest)
    flags = np.array([lab.consensual for lab in a.labels], dtype=bool)
    if not flags.any() or flags.all():
        missing = "consensual" if not flags.any() else "non-consensual"
        raise ComparisonError(f"forest has no {missing} trees to compare against")
    cons = run_rq1_to_rq4(a.select_trees(flags), config)
    noncons = run_rq1_to_rq4(a.select_trees(~flags), config)
    sc, sn = report_scalars(cons), report_scalars(noncons)
    deltas = {k: (sc[k], sn[k], sc[k] - sn[k]) for k in sorted(sc.keys() & sn.keys())}
    return GroupComparison(cons, noncons, deltas)

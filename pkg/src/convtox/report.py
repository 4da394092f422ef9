"""Analysis report assembly and CSV/JSON emission.

CSVs are always rendered from the JSON-ready report dict, so ``report.json``
alone is enough to regenerate every table.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from . import __version__
from .analysis import (
    FILTER_ALL,
    FILTER_TOXIC_ROOT,
    AnalysisConfig,
    GroupComparison,
    RQReport,
    rq5_compare,
    run_rq1_to_rq4,
)
from .errors import ComparisonError
from .model import ConversationForest, IngestStats

SIG_DIGITS = 12

CSV_COLUMNS = {
    "rq1.csv": ("group", "r", "p_value", "n", "leaves_excluded"),
    "rq2.csv": ("level_model", "coefficient_index", "coefficient", "n"),
    "rq3.csv": ("depth", "mean_toxicity", "mean_ta", "branch_terminating", "branch_reaching",
                "filter"),
    "rq4.csv": ("bin_low", "bin_high", "opinion_sum", "response_count", "dropped"),
    "rq5.csv": ("metric", "consensual", "nonconsensual", "delta"),
    "plot_depth_trends.csv": ("depth", "toxicity_all", "ta_all", "toxicity_toxic_root",
                              "ta_toxic_root", "branches_reaching_all"),
    "plot_toxicity_bins.csv": ("bin_low", "bin_high", "opinion_sum", "response_count"),
}


def _clean(value: Any) -> Any:
    """Round floats to a fixed number of significant digits, NaN -> None."""
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v) or math.isinf(v):
            return None
        return float(f"{v:.{SIG_DIGITS}g}")
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def file_sha256(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def corpus_summary(forest: ConversationForest, stats: IngestStats | None = None) -> dict:
    a = forest.arrays
    roots = a.is_root
    has_text = ~a.text_missing
    communities: dict[str, dict[str, int]] = {}
    tree_sizes = np.bincount(a.tree_of, minlength=a.n_trees) if len(a) else np.zeros(0, int)
    for lab, size in zip(a.labels, tree_sizes.tolist()):
        c = communities.setdefault(lab.community, {"trees": 0, "nodes": 0, "consensual_trees": 0})
        c["trees"] += 1
        c["nodes"] += size
        c["consensual_trees"] += int(lab.consensual)

    def median(mask):
        return float(np.median(a.word_counts[mask])) if mask.any() else None

    out = {
        "trees": a.n_trees,
        "nodes": len(a),
        "responses": int((~roots).sum()),
        "text_missing": int(a.text_missing.sum()),
        "communities": dict(sorted(communities.items())),
        "median_post_words": median(roots & has_text),
        "median_response_words": median(~roots & has_text),
    }
    if stats is not None:
        out["ingest"] = asdict(stats)
    return out


@dataclass
class AnalysisReport:
    corpus: dict
    results: RQReport
    comparison: GroupComparison | None
    comparison_note: str | None
    config: AnalysisConfig
    scorer: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    seed: int | None = None
    version: str = __version__

    def to_dict(self) -> dict:
        def rq_block(rep: RQReport) -> dict:
            return {
                "rq1": [asdict(c) for c in rep.rq1],
                "rq2": [asdict(r) for r in rep.rq2],
                "rq3": {"rows": [asdict(r) for r in rep.rq3],
                        "summary": [asdict(s) for s in rep.rq3_summary]},
                "rq4": {"histogram": asdict(rep.rq4_histogram),
                        "parent_child": asdict(rep.rq4_parent_child)},
                "notices": list(rep.notices),
            }

        rq5: dict[str, Any] = {"available": self.comparison is not None,
                               "note": self.comparison_note}
        if self.comparison is not None:
            rq5["consensual"] = rq_block(self.comparison.consensual_report)
            rq5["nonconsensual"] = rq_block(self.comparison.nonconsensual_report)
            rq5["deltas"] = [{"metric": k, "consensual": c, "nonconsensual": n, "delta": d}
                             for k, (c, n, d) in self.comparison.deltas.items()]
        config = asdict(self.config)
        config["seed"] = self.seed
        return _clean({
            "tool": {"name": "convtox", "version": self.version},
            "config": config,
            "scorer": self.scorer,
            "inputs": self.inputs,
            "corpus": self.corpus,
            **rq_block(self.results),
            "rq5": rq5,
        })


def build_report(forest: ConversationForest, config: AnalysisConfig | None = None,
                 stats: IngestStats | None = None, scorer: dict | None = None,
                 inputs: dict | None = None, seed: int | None = None) -> AnalysisReport:
    """Run every analysis over a scored forest."""
    cfg = config or AnalysisConfig()
    results = run_rq1_to_rq4(forest, cfg)
    try:
        comparison, note = rq5_compare(forest, cfg), None
    except ComparisonError as exc:
        comparison, note = None, str(exc)
    return AnalysisReport(corpus_summary(forest, stats), results, comparison, note, cfg,
                          scorer or {}, inputs or {}, seed)


# ---------------------------------------------------------------------------
# rendering


def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _csv_text(name: str, rows: list[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS[name])
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def render_csvs(report: dict) -> dict[str, str]:
    """File name -> CSV text for a report dict (as produced by ``to_dict``)."""
    out: dict[str, str] = {}
    out["rq1.csv"] = _csv_text("rq1.csv", [
        (c["group"], c["r"], c["p_value"], c["n"], c["leaves_excluded"]) for c in report["rq1"]])
    out["rq2.csv"] = _csv_text("rq2.csv", [
        (r["level_model"], i, b, r["n"]) for r in report["rq2"] for i, b in enumerate(r["betas"])])
    rows = report["rq3"]["rows"]
    out["rq3.csv"] = _csv_text("rq3.csv", [
        (r["depth"], r["mean_toxicity"], r["mean_ta"], r["branch_terminating"],
         r["branch_reaching"], r["filter"]) for r in rows])
    bins = report["rq4"]["histogram"]["bins"]
    out["rq4.csv"] = _csv_text("rq4.csv", [
        (b["low"], b["high"], b["opinion_sum"], b["response_count"], b["dropped"]) for b in bins])
    out["rq5.csv"] = _csv_text("rq5.csv", [
        (d["metric"], d["consensual"], d["nonconsensual"], d["delta"])
        for d in report["rq5"].get("deltas", [])])

    by_filter = {(r["filter"], r["depth"]): r for r in rows}
    depths = sorted({r["depth"] for r in rows})
    plot_rows = []
    for d in depths:
        a = by_filter.get((FILTER_ALL, d), {})
        t = by_filter.get((FILTER_TOXIC_ROOT, d), {})
        plot_rows.append((d, a.get("mean_toxicity"), a.get("mean_ta"), t.get("mean_toxicity"),
                          t.get("mean_ta"), a.get("branch_reaching")))
    out["plot_depth_trends.csv"] = _csv_text("plot_depth_trends.csv", plot_rows)
    out["plot_toxicity_bins.csv"] = _csv_text("plot_toxicity_bins.csv", [
        (b["low"], b["high"], b["opinion_sum"], b["response_count"])
        for b in bins if not b["dropped"]])
    return out


def report_json_text(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_report_files(report: dict, output_dir: str | os.PathLike,
                       include_json: bool = True) -> list[str]:
    os.makedirs(output_dir, exist_ok=True)
    files = render_csvs(report)
    if include_json:
        files = {"report.json": report_json_text(report), **files}
    written = []
    for name, text in files.items():
        path = os.path.join(output_dir, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written.append(path)
    return written

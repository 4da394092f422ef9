"""Command-line entry point.

Exit codes: 0 success, 1 usage or parameter error, 2 input/parse/structural
error, 3 external scorer failure.

Config files hold one ``key = value`` pair per line (``#`` starts a comment).
Keys are the analysis flag names with underscores, e.g.::

    toxic_threshold = 0.5
    max_depth = 10
    exclude_leaves = true

Values from the config file override defaults and are overridden by flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import __version__
from .analysis import AnalysisConfig
from .errors import (
    ConvToxError,
    FormatError,
    ParameterError,
    ParseError,
    ProtocolError,
    ScorerUnavailableError,
    StructuralError,
)
from .ingest import (
    CorpusManifest,
    emit_canonical,
    load_corpus_detailed,
    read_forest_cache,
    write_forest_cache,
)
from .report import build_report, file_sha256, write_report_files
from .scoring import (
    ScorerConfig,
    attach_scores,
    read_score_cache,
    scorable_nodes,
    score_nodes,
    write_score_cache,
)
from .synth import SynthParams, synth_forest

log = logging.getLogger("convtox")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_SCORER = 0, 1, 2, 3

FOREST_CACHE = "forest.jsonl"
SCORE_CACHE = "scores.jsonl"


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    forest_path: str
    scores_path: str
    output_dir: str
    analysis: AnalysisConfig
    seed: int | None = None


# ---------------------------------------------------------------------------
# config file handling

_BOOL = {"true": True, "yes": True, "1": True, "on": True,
         "false": False, "no": False, "0": False, "off": False}


def parse_config_text(text: str) -> dict[str, object]:
    types = {f.name: f.type for f in fields(AnalysisConfig)}
    out: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "levels":
            key = "max_level"
        if key == "seed":
            out[key] = int(value)
            continue
        if key not in types:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
        kind = str(types[key])
        try:
            if kind == "bool":
                out[key] = _BOOL[value.lower()]
            elif kind == "int":
                out[key] = int(value)
            else:
                out[key] = float(value)
        except (KeyError, ValueError):
            raise UsageError(f"config line {lineno}: bad value {value!r} for {key}") from None
    return out


def _analysis_config(args: argparse.Namespace) -> tuple[AnalysisConfig, int | None]:
    values: dict[str, object] = {}
    if args.config:
        values.update(parse_config_text(Path(args.config).read_text(encoding="utf-8")))
    for f in fields(AnalysisConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    if args.seed is not None:
        values["seed"] = args.seed
    seed = values.pop("seed", None)
    try:
        return AnalysisConfig(**values), seed
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args: argparse.Namespace) -> int:
    try:
        manifest = CorpusManifest.load(args.manifest)
    except FileNotFoundError:
        print(f"error: manifest not found: {args.manifest}", file=sys.stderr)
        return EXIT_INPUT
    except json.JSONDecodeError as exc:
        print(f"error: {args.manifest}:{exc.lineno}: invalid manifest JSON", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        raise UsageError(f"{args.manifest}: {exc}") from None
    result = load_corpus_detailed(manifest)
    os.makedirs(args.output, exist_ok=True)
    out = os.path.join(args.output, FOREST_CACHE)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        write_forest_cache(result.forest, result.stats, fh, extra={"stubs_skipped": result.stubs_skipped})
    s = result.stats
    print(f"accepted={s.accepted} orphans={s.orphans_dropped} duplicates={s.duplicates_rejected} "
          f"deleted={s.deleted_retained} stubs={result.stubs_skipped} trees={len(result.forest)}")
    print(f"wrote {out}")
    return EXIT_OK


def _scorer_config(args: argparse.Namespace) -> ScorerConfig:
    try:
        return ScorerConfig(
            backend=args.backend, endpoint_url=args.endpoint, batch_size=args.batch_size,
            max_in_flight=args.max_in_flight, retry_limit=args.retry_limit,
            lexicon_path=args.lexicon, source_path=args.source,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_score(args: argparse.Namespace) -> int:
    config = _scorer_config(args)
    forest, _, _ = read_forest_cache(args.forest)
    scores_path = args.scores or os.path.join(os.path.dirname(args.forest) or ".", SCORE_CACHE)
    existing = read_score_cache(scores_path) if os.path.exists(scores_path) else []
    todo = scorable_nodes(forest, skip_ids=(r.id for r in existing))
    records = score_nodes(todo, config) if todo else []
    with open(scores_path, "a", encoding="utf-8", newline="\n") as fh:
        write_score_cache(records, fh)
    remaining = len(todo) - len(records)
    print(f"{len(records)} newly scored ({len(existing)} cached"
          + (f", {remaining} without a score" if remaining else "") + ")")
    print(f"wrote {scores_path}")
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    analysis, seed = _analysis_config(args)
    forest, stats, _ = read_forest_cache(args.forest)
    records = read_score_cache(args.scores)
    forest, coverage = attach_scores(forest, records)
    if coverage.unknown_ids:
        print(f"error: score cache does not match forest: {len(coverage.unknown_ids)} unknown ids "
              f"(first {coverage.unknown_ids[0]!r})", file=sys.stderr)
        return EXIT_INPUT
    if coverage.scored < coverage.total:
        print(f"error: score cache covers {coverage} scorable nodes; run `convtox score` first",
              file=sys.stderr)
        return EXIT_INPUT
    scorers = sorted({(r.scorer_name, r.model_version) for r in records})
    report = build_report(
        forest, analysis, stats,
        scorer={"scorers": [{"name": n, "model_version": v} for n, v in scorers],
                "coverage": str(coverage)},
        inputs={"forest_sha256": file_sha256(args.forest),
                "scores_sha256": file_sha256(args.scores)},
        seed=seed,
    )
    written = write_report_files(report.to_dict(), args.output)
    for notice in report.results.notices:
        log.info(notice)
    print(f"wrote {len(written)} files to {args.output}")
    return EXIT_OK


def _floats(text: str | None) -> tuple[float, ...] | None:
    if not text:
        return None
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text: str | None, default: tuple[str, ...]) -> tuple[str, ...]:
    return tuple(x for x in text.split(",") if x) if text else default


def cmd_synth(args: argparse.Namespace) -> int:
    try:
        params = SynthParams(
            trees=args.trees, mean_children=args.mean_children, depth_decay=args.depth_decay,
            base_toxic_rate=args.base_rate, contagion_rate=args.contagion_rate,
            regression_betas=_floats(args.betas), noise=args.noise,
            max_children=args.max_children, max_depth=args.max_tree_depth,
            communities=_names(args.communities, ("synthetic",)),
            consensual_communities=_names(args.consensual, ()),
            with_text=not args.no_text,
        )
        forest = synth_forest(params, args.seed)
    except ParameterError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.output)
    posts = out / "posts"
    posts.mkdir(parents=True, exist_ok=True)
    entries = []
    for tree, label in zip(forest.trees, forest.group_labels):
        rel = f"posts/{tree.root}.jsonl"
        with open(out / rel, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(emit_canonical(tree.nodes))
        entries.append({"path": rel, "community": label.community, "consensual": label.consensual})
    with open(out / SCORE_CACHE, "w", encoding="utf-8", newline="\n") as fh:
        write_score_cache(
            (_synthetic_record(n) for n in forest.nodes() if n.toxicity is not None), fh)
    manifest = {"entries": entries, "scores_path": None}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    (out / "synth_params.json").write_text(
        json.dumps({"seed": args.seed, "params": params.to_dict()}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    print(f"trees={len(forest)} nodes={forest.n_nodes} wrote {out}")
    return EXIT_OK


def _synthetic_record(node):
    from .scoring import ScoreRecord

    return ScoreRecord(node.id, node.toxicity, "synthetic", __version__)


def cmd_report(args: argparse.Namespace) -> int:
    with open(args.report, encoding="utf-8") as fh:
        report = json.load(fh)
    written = write_report_files(report, args.output, include_json=args.with_json)
    print(f"wrote {len(written)} files to {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="convtox", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"convtox {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="parse a corpus manifest into a forest cache")
    s.add_argument("manifest")
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("score", help="score unscored nodes of a forest cache")
    s.add_argument("forest", help="forest cache written by `ingest`")
    s.add_argument("--scores", help=f"score cache to append to (default: {SCORE_CACHE} beside the forest)")
    s.add_argument("--backend", choices=("lexicon", "remote", "precomputed"), default="lexicon")
    s.add_argument("--lexicon", help="lexicon file (default: bundled lexicon)")
    s.add_argument("--endpoint", help="remote scorer base URL")
    s.add_argument("--source", help="score file for the precomputed backend")
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--max-in-flight", type=int, default=4)
    s.add_argument("--retry-limit", type=int, default=3)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("analyze", help="run all analyses and write the report")
    s.add_argument("forest")
    s.add_argument("scores")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--config", help="key = value config file")
    s.add_argument("--exclude-leaves", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--toxic-threshold", type=float)
    s.add_argument("--max-depth", type=int)
    s.add_argument("--levels", dest="max_level", type=int, help="highest context level model")
    s.add_argument("--bins", type=int)
    s.add_argument("--drop-first-bin", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--include-roots", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--standardize-betas", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--seed", type=int, help="recorded in the config echo")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("synth", help="generate a seeded synthetic corpus")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trees", type=int, default=100)
    s.add_argument("--mean-children", type=float, default=3.0)
    s.add_argument("--depth-decay", type=float, default=0.7)
    s.add_argument("--base-rate", type=float, default=0.19)
    s.add_argument("--contagion-rate", type=float, default=0.28)
    s.add_argument("--betas", help="linear context model b0,b1,...; replaces the contagion model")
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--max-children", type=int, default=200)
    s.add_argument("--max-tree-depth", type=int, default=60)
    s.add_argument("--communities", help="comma-separated community names")
    s.add_argument("--consensual", help="comma-separated consensual communities")
    s.add_argument("--no-text", action="store_true", help="leave bodies empty")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("report", help="re-render CSVs from a report.json")
    s.add_argument("report")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--with-json", action="store_true", help="also copy report.json")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScorerUnavailableError, ProtocolError) as exc:
        print(f"scorer error: {exc}", file=sys.stderr)
        return EXIT_SCORER
    except (ParseError, FormatError, StructuralError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        name = exc.filename if exc.filename else ""
        print(f"input error: {exc.strerror or exc}: {name}", file=sys.stderr)
        return EXIT_INPUT
    except ConvToxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

"""Corpus parsing: canonical line-delimited records, Reddit thread listings,
manifests and the forest cache used between CLI stages."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any

from .errors import FormatError, ParseError, StructuralError
from .model import (
    DELETION_PLACEHOLDERS,
    ConversationForest,
    ConversationNode,
    GroupLabel,
    IngestStats,
    build_forest,
)

log = logging.getLogger(__name__)

# A raw record is a node that has not been scored yet.
RawRecord = ConversationNode

SALT_ENV = "CONVTOX_AUTHOR_SALT"
DEFAULT_SALT = "convtox"
FOREST_CACHE_VERSION = 1

_STR_FIELDS = ("id", "author", "body", "community")
_INT_FIELDS = ("created_utc", "score")


def pseudonymize(author: str, salt: str | None = None) -> str:
    """Salted hash of an upstream author id."""
    if salt is None:
        salt = os.environ.get(SALT_ENV, DEFAULT_SALT)
    return hashlib.sha256(f"{salt}\x00{author}".encode()).hexdigest()[:16]


def _decode(line: str | bytes) -> tuple[str, bool]:
    if isinstance(line, str):
        return line, False
    try:
        return line.decode("utf-8"), False
    except UnicodeDecodeError:
        return line.decode("utf-8", errors="replace"), True


def _record_from_obj(obj: Any, lineno: int | None, repaired: bool = False) -> RawRecord:
    try:
        id_, parent, author = obj["id"], obj["parent_id"], obj["author"]
        created, score = obj["created_utc"], obj["score"]
        body, community = obj["body"], obj["community"]
    except (KeyError, TypeError):
        _raise_schema_error(obj, lineno)
    if not (type(id_) is str and id_ and type(author) is str and type(body) is str
            and type(community) is str and community
            and type(created) is int and created >= 0 and type(score) is int
            and (parent is None or (type(parent) is str and parent))):
        _raise_schema_error(obj, lineno)
    return ConversationNode(id_, parent, author, created, score, body, community, None,
                            body in DELETION_PLACEHOLDERS, repaired)


def _raise_schema_error(obj: Any, lineno: int | None):
    """Raise a ParseError naming the first offending field."""
    if not isinstance(obj, dict):
        raise ParseError("record is not a JSON object", line=lineno)
    for name in _STR_FIELDS + _INT_FIELDS + ("parent_id",):
        if name not in obj:
            raise ParseError(f"missing field {name!r}", line=lineno, field=name)
    for name in _STR_FIELDS:
        if not isinstance(obj[name], str):
            raise ParseError(f"field {name!r} must be a string", line=lineno, field=name)
    for name in _INT_FIELDS:
        v = obj[name]
        if isinstance(v, bool) or not isinstance(v, int):
            raise ParseError(f"field {name!r} must be an integer", line=lineno, field=name)
    parent = obj["parent_id"]
    if parent is not None and (not isinstance(parent, str) or not parent):
        raise ParseError("field 'parent_id' must be a non-empty string or null",
                         line=lineno, field="parent_id")
    for name in ("id", "community"):
        if not obj[name]:
            raise ParseError(f"field {name!r} must be non-empty", line=lineno, field=name)
    if obj["created_utc"] < 0:
        raise ParseError("field 'created_utc' must be >= 0", line=lineno, field="created_utc")
    raise ParseError("invalid record", line=lineno)


def _bulk_decode(lines: list[str]) -> list | None:
    """Decode all lines in one call; None if any line is not valid JSON."""
    try:
        objs = json.loads("[" + ",".join(lines) + "]")
    except json.JSONDecodeError:
        return None
    return objs if len(objs) == len(lines) else None


def parse_canonical(stream: Iterable[str | bytes], path: str | None = None,
                    start: int = 1) -> list[RawRecord]:
    """Decode one canonical record per line; blank lines are ignored.

    Raises:
        ParseError: carrying the 1-based line number and offending field.
    """
    numbered: list[tuple[int, str, bool]] = []
    for lineno, raw in enumerate(stream, start):
        line, repaired = _decode(raw)
        if line.strip():
            numbered.append((lineno, line, repaired))
    objs = _bulk_decode([line for _, line, _ in numbered])
    out = []
    for pos, (lineno, line, repaired) in enumerate(numbered):
        if objs is not None:
            obj = objs[pos]
        else:
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno, path=path) from None
        try:
            out.append(_record_from_obj(obj, lineno, repaired))
        except ParseError as exc:
            if path is None:
                raise
            raise ParseError(exc.detail, line=lineno, field=exc.field, path=path) from None
    return out


def record_to_canonical(rec: ConversationNode) -> dict:
    return {
        "id": rec.id,
        "parent_id": rec.parent,
        "author": rec.author,
        "created_utc": rec.created_utc,
        "score": rec.vote_score,
        "body": rec.body,
        "community": rec.community,
    }


def emit_canonical(records: Iterable[ConversationNode]) -> Iterator[str]:
    """Canonical lines (newline-terminated) for ``records``."""
    dumps = json.JSONEncoder(ensure_ascii=False).encode
    for rec in records:
        yield dumps(record_to_canonical(rec)) + "\n"


# ---------------------------------------------------------------------------
# Reddit listing adapter


def _strip_fullname(name: str) -> str:
    if len(name) > 3 and name[0] == "t" and name[1].isdigit() and name[2] == "_":
        return name[3:]
    return name


def _is_listing(obj: Any) -> bool:
    return (isinstance(obj, dict) and obj.get("kind") == "Listing"
            and isinstance(obj.get("data"), dict)
            and isinstance(obj["data"].get("children"), list))


def _int(value: Any, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise FormatError(f"{what} must be numeric, got {value!r}")
    return int(value)


def parse_reddit_listing_with_stats(document: str | bytes | list,
                                    salt: str | None = None) -> tuple[list[RawRecord], int]:
    """Flatten a Reddit thread export; returns ``(records, more_stubs_skipped)``.

    ``document`` is the two-element ``[post listing, comment listing]`` array
    returned by Reddit's comments endpoint (raw text or already decoded).
    Authors are pseudonymised with :func:`pseudonymize`.
    """
    if isinstance(document, bytes):
        document = document.decode("utf-8", errors="replace")
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise FormatError(f"listing is not valid JSON: {exc.msg}") from None
    if not (isinstance(document, list) and len(document) == 2
            and _is_listing(document[0]) and _is_listing(document[1])):
        raise FormatError("expected a [post listing, comment listing] array")

    posts = [c for c in document[0]["data"]["children"] if c.get("kind") == "t3"]
    if len(posts) != 1:
        raise FormatError(f"expected exactly one post (t3) object, found {len(posts)}")
    post = posts[0]["data"]
    try:
        post_id = str(post["id"])
        community = str(post.get("subreddit") or "unknown")
        title = post.get("title") or ""
        selftext = post.get("selftext") or ""
        if selftext in DELETION_PLACEHOLDERS:
            selftext = ""
        body = f"{title}\n\n{selftext}" if selftext else title
        records = [ConversationNode(
            id=post_id, parent=None, author=pseudonymize(str(post.get("author", "")), salt),
            created_utc=_int(post["created_utc"], "created_utc"),
            vote_score=_int(post.get("score", 0), "score"), body=body, community=community,
            text_missing=title in DELETION_PLACEHOLDERS,
        )]
    except KeyError as exc:
        raise FormatError(f"post object lacks field {exc}") from None

    stubs = 0
    stack: list[tuple[dict, str]] = [(c, post_id) for c in reversed(document[1]["data"]["children"])]
    while stack:
        thing, nest_parent = stack.pop()
        kind = thing.get("kind") if isinstance(thing, dict) else None
        if kind == "more":
            stubs += 1
            continue
        if kind != "t1":
            raise FormatError(f"unexpected object kind {kind!r} in comment forest")
        data = thing["data"]
        try:
            cid = str(data["id"])
            parent = _strip_fullname(str(data.get("parent_id") or nest_parent))
            comment_body = data.get("body") or ""
            records.append(ConversationNode(
                id=cid, parent=parent, author=pseudonymize(str(data.get("author", "")), salt),
                created_utc=_int(data["created_utc"], "created_utc"),
                vote_score=_int(data.get("score", 0), "score"), body=comment_body,
                community=str(data.get("subreddit") or community),
                text_missing=comment_body in DELETION_PLACEHOLDERS,
            ))
        except KeyError as exc:
            raise FormatError(f"comment object lacks field {exc}") from None
        replies = data.get("replies")
        if _is_listing(replies):
            stack.extend((c, cid) for c in reversed(replies["data"]["children"]))
    return records, stubs


def parse_reddit_listing(document: str | bytes | list, salt: str | None = None) -> list[RawRecord]:
    return parse_reddit_listing_with_stats(document, salt)[0]


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    community: str
    consensual: bool = False
    format: str | None = None  # "canonical" | "listing"; default from extension

    def resolved_format(self) -> str:
        if self.format:
            if self.format not in ("canonical", "listing"):
                raise ValueError(f"unknown format {self.format!r} for {self.path}")
            return self.format
        suffix = Path(self.path).suffix.lower()
        if suffix == ".jsonl":
            return "canonical"
        if suffix == ".json":
            return "listing"
        raise ValueError(f"cannot infer format of {self.path} (use .jsonl/.json or 'format')")


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[ManifestEntry, ...]
    scores_path: str | None = None

    def __post_init__(self):
        if not self.entries:
            raise ValueError("manifest has no entries")
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be distinct")

    @classmethod
    def from_dict(cls, obj: dict, base_dir: str | os.PathLike | None = None) -> CorpusManifest:
        def resolve(p: str) -> str:
            if base_dir is None or os.path.isabs(p):
                return p
            return os.path.join(base_dir, p)

        try:
            entries = tuple(
                ManifestEntry(resolve(e["path"]), e["community"], bool(e.get("consensual", False)),
                              e.get("format"))
                for e in obj.get("entries", [])
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"bad manifest entry: {exc}") from None
        scores = obj.get("scores_path")
        return cls(entries, resolve(scores) if scores else None)

    @classmethod
    def load(cls, path: str | os.PathLike) -> CorpusManifest:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls.from_dict(obj, base_dir=os.path.dirname(os.path.abspath(path)))

    def to_dict(self) -> dict:
        return {
            "entries": [{"path": e.path, "community": e.community, "consensual": e.consensual}
                        | ({"format": e.format} if e.format else {}) for e in self.entries],
            "scores_path": self.scores_path,
        }


def read_records(entry: ManifestEntry) -> tuple[list[RawRecord], int]:
    fmt = entry.resolved_format()
    if fmt == "canonical":
        with open(entry.path, "rb") as fh:
            return parse_canonical(fh, path=entry.path), 0
    with open(entry.path, "rb") as fh:
        data = fh.read()
    try:
        return parse_reddit_listing_with_stats(data)
    except FormatError as exc:
        raise FormatError(str(exc), path=entry.path) from None


@dataclass
class CorpusLoad:
    forest: ConversationForest
    stats: IngestStats
    stubs_skipped: int = 0
    per_file: list[tuple[str, IngestStats]] = field(default_factory=list)


def load_corpus_detailed(manifest: CorpusManifest) -> CorpusLoad:
    forests = []
    total = IngestStats()
    stubs = 0
    per_file = []
    for entry in manifest.entries:
        records, n_stubs = read_records(entry)
        try:
            forest, stats = build_forest(records)
        except StructuralError as exc:
            raise type(exc)(f"{entry.path}: {exc}", exc.node_id) from None
        label = GroupLabel(entry.community, entry.consensual)
        forests.append(forest.relabel([label] * len(forest)))
        total = total + stats
        stubs += n_stubs
        per_file.append((entry.path, stats))
    try:
        forest = ConversationForest.merge(forests)
    except StructuralError as exc:
        raise StructuralError(f"corpus: {exc}", exc.node_id) from None
    if manifest.scores_path:
        from .scoring import attach_scores, read_score_cache

        forest, coverage = attach_scores(forest, read_score_cache(manifest.scores_path))
        log.info("attached scores to %s scorable nodes", coverage)
    return CorpusLoad(forest, total, stubs, per_file)


def load_corpus(manifest: CorpusManifest) -> tuple[ConversationForest, IngestStats]:
    """Parse every manifest entry, build and label its trees, merge them."""
    result = load_corpus_detailed(manifest)
    return result.forest, result.stats


# ---------------------------------------------------------------------------
# forest cache


def write_forest_cache(forest: ConversationForest, stats: IngestStats, fh: IO[str],
                       extra: dict | None = None) -> None:
    header = {
        "convtox_forest": FOREST_CACHE_VERSION,
        "stats": {"accepted": stats.accepted, "orphans_dropped": stats.orphans_dropped,
                  "duplicates_rejected": stats.duplicates_rejected,
                  "deleted_retained": stats.deleted_retained},
        "trees": [{"root": t.root, "community": lab.community, "consensual": lab.consensual}
                  for t, lab in zip(forest.trees, forest.group_labels)],
    }
    if extra:
        header["extra"] = extra
    fh.write(json.dumps(header, ensure_ascii=False, sort_keys=True) + "\n")
    fh.writelines(emit_canonical(forest.nodes()))


def read_forest_cache(path: str | os.PathLike) -> tuple[ConversationForest, IngestStats, dict]:
    with open(path, "rb") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except ValueError:
            header = None
        if not isinstance(header, dict) or header.get("convtox_forest") != FOREST_CACHE_VERSION:
            raise FormatError("not a convtox forest cache", path=str(path), line=1)
        records = parse_canonical(fh, path=str(path), start=2)
    forest, _ = build_forest(records)
    labels = {t["root"]: GroupLabel(t["community"], bool(t["consensual"])) for t in header["trees"]}
    try:
        forest = forest.relabel([labels[t.root] for t in forest.trees])
    except KeyError as exc:
        raise FormatError(f"cache header lacks label for tree {exc}", path=str(path)) from None
    stats = IngestStats(**header["stats"])
    return forest, stats, header.get("extra", {})

"""Toxicity scoring backends, score cache, binarisation and Cohen's kappa."""

from __future__ import annotations

import json
import logging
import os
import re
import time
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import IO, NamedTuple

import requests

from .errors import ParseError, ProtocolError, ScorerUnavailableError
from .model import ConversationForest, ConversationNode, ConversationTree

log = logging.getLogger(__name__)

API_KEY_ENV = "TOXSCORE_API_KEY"
BACKENDS = ("precomputed", "lexicon", "remote")
_TOKEN_RE = re.compile(r"[a-z0-9']+")
_RETRY_STATUS = frozenset({429, 500, 502, 503, 504})


class ScoreRecord(NamedTuple):
    id: str
    toxicity: float
    scorer_name: str
    model_version: str


def checked_score(node_id: str, toxicity: float, scorer: str, version: str) -> ScoreRecord:
    toxicity = float(toxicity)
    if not 0.0 <= toxicity <= 1.0:
        raise ValueError(f"toxicity {toxicity!r} for {node_id} outside [0, 1]")
    return ScoreRecord(node_id, toxicity, scorer, version)


@dataclass(frozen=True)
class ScorerConfig:
    backend: str = "lexicon"
    endpoint_url: str | None = None
    batch_size: int = 64
    max_in_flight: int = 4
    retry_limit: int = 3
    backoff_base: float = 0.5
    timeout: float = 30.0
    lexicon_path: str | None = None
    source_path: str | None = None  # score file for the precomputed backend

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown scorer backend {self.backend!r}")
        if (self.backend == "remote") != (self.endpoint_url is not None):
            raise ValueError("endpoint_url is required for, and only for, the remote backend")
        if self.backend == "precomputed" and self.source_path is None:
            raise ValueError("precomputed backend needs source_path")
        if self.batch_size < 1 or self.max_in_flight < 1 or self.retry_limit < 0:
            raise ValueError("batch_size and max_in_flight must be positive, retry_limit >= 0")


@dataclass(frozen=True)
class AgreementResult:
    kappa: float
    observed_agreement: float
    expected_agreement: float
    n: int
    degenerate: bool = False


@dataclass(frozen=True)
class ScoreCoverage:
    scored: int
    total: int
    unknown_ids: tuple[str, ...] = ()

    @property
    def fraction(self) -> float:
        return self.scored / self.total if self.total else 1.0

    def __str__(self) -> str:
        return f"{self.scored}/{self.total}"


# ---------------------------------------------------------------------------
# lexicon backend


@dataclass(frozen=True)
class Lexicon:
    weights: dict[str, float]
    version: str
    cap: float = 1.0

    @classmethod
    def parse(cls, text: str) -> Lexicon:
        weights: dict[str, float] = {}
        version = "unversioned"
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                m = re.match(r"#\s*version\s*:\s*(\S+)", line)
                if m:
                    version = m.group(1)
                continue
            parts = line.split()
            weights[parts[0].lower()] = float(parts[1]) if len(parts) > 1 else 1.0
        return cls(weights, version)

    @classmethod
    def load(cls, path: str | os.PathLike | None = None) -> Lexicon:
        if path is None:
            return default_lexicon()
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def score(self, body: str | None) -> float:
        if not body:
            return 0.0
        tokens = _TOKEN_RE.findall(body.lower())
        if not tokens:
            return 0.0
        hits = sum(self.weights.get(t, 0.0) for t in tokens)
        return min(self.cap, hits / len(tokens))


@lru_cache(maxsize=1)
def default_lexicon() -> Lexicon:
    text = resources.files("convtox").joinpath("data/lexicon.txt").read_text(encoding="utf-8")
    return Lexicon.parse(text)


def lexicon_score(body: str | None, lexicon: Lexicon | None = None) -> float:
    """Weighted share of lexicon hits among word tokens, capped at 1.0."""
    return (lexicon or default_lexicon()).score(body)


# ---------------------------------------------------------------------------
# remote backend


def _post_batch(session: requests.Session, url: str, texts: list[str],
                config: ScorerConfig, headers: dict[str, str]) -> list[float]:
    last_error = "no attempt made"
    for attempt in range(config.retry_limit + 1):
        if attempt:
            time.sleep(config.backoff_base * 2 ** (attempt - 1))
        try:
            resp = session.post(url, json={"texts": texts}, headers=headers,
                                timeout=config.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            last_error = str(exc)
            continue
        if resp.status_code in _RETRY_STATUS:
            last_error = f"HTTP {resp.status_code}"
            continue
        if resp.status_code != 200:
            raise ScorerUnavailableError(f"scorer rejected request: HTTP {resp.status_code}")
        try:
            scores = resp.json()["scores"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed scorer response: {exc}") from exc
        if not isinstance(scores, list) or len(scores) != len(texts):
            raise ProtocolError(f"scorer returned {len(scores) if isinstance(scores, list) else 'no'} "
                                f"scores for {len(texts)} texts")
        out = []
        for s in scores:
            if isinstance(s, bool) or not isinstance(s, (int, float)) or not 0.0 <= s <= 1.0:
                raise ProtocolError(f"score {s!r} is not a number in [0, 1]")
            out.append(float(s))
        return out
    raise ScorerUnavailableError(
        f"scorer unavailable after {config.retry_limit + 1} attempts: {last_error}")


def remote_score_batch(bodies: Sequence[str], config: ScorerConfig,
                       session: requests.Session | None = None) -> list[float]:
    """Score texts through the remote service, preserving input order.

    Texts are split into ``batch_size`` chunks and at most ``max_in_flight``
    chunks are outstanding at once. Any chunk failing fails the whole call.
    """
    if not bodies:
        return []
    if config.endpoint_url is None:
        raise ValueError("remote scoring needs endpoint_url")
    url = config.endpoint_url.rstrip("/") + "/score"
    headers = {}
    token = os.environ.get(API_KEY_ENV)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    chunks = [list(bodies[i:i + config.batch_size])
              for i in range(0, len(bodies), config.batch_size)]
    own_session = session is None
    session = session or requests.Session()
    try:
        with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
            results = list(pool.map(lambda c: _post_batch(session, url, c, config, headers),
                                    chunks))
    finally:
        if own_session:
            session.close()
    return [s for chunk in results for s in chunk]


# ---------------------------------------------------------------------------
# scoring orchestration


def scorable_nodes(forest: ConversationForest, skip_ids: Iterable[str] = ()) -> list[ConversationNode]:
    """Nodes with text that are not in ``skip_ids``."""
    skip = set(skip_ids)
    return [n for n in forest.nodes() if not n.text_missing and n.id not in skip]


def score_nodes(nodes: Sequence[ConversationNode], config: ScorerConfig,
                session: requests.Session | None = None) -> list[ScoreRecord]:
    if config.backend == "lexicon":
        lex = Lexicon.load(config.lexicon_path)
        return [ScoreRecord(n.id, lex.score(n.body), "lexicon", lex.version) for n in nodes]
    if config.backend == "remote":
        scores = remote_score_batch([n.body for n in nodes], config, session=session)
        return [checked_score(n.id, s, "remote", config.endpoint_url or "")
                for n, s in zip(nodes, scores)]
    source = {r.id: r for r in read_score_cache(config.source_path)}
    return [source[n.id] for n in nodes if n.id in source]


def attach_scores(forest: ConversationForest,
                  records: Iterable[ScoreRecord]) -> tuple[ConversationForest, ScoreCoverage]:
    """Copy of ``forest`` with toxicity set on matched nodes.

    Ids unknown to the forest are reported (logged and returned in the
    coverage), not fatal. Missing-text nodes never receive a score.
    """
    scores: dict[str, float] = {}
    unknown: list[str] = []
    for rec in records:
        if rec.id in forest:
            scores[rec.id] = rec.toxicity
        else:
            unknown.append(rec.id)
    if unknown:
        log.warning("%d score records refer to ids not in the forest (first: %s)",
                    len(unknown), unknown[0])

    trees = []
    total = scored = 0
    for tree in forest.trees:
        nodes = []
        changed = False
        for n in tree.nodes:
            if n.text_missing:
                nodes.append(n)
                continue
            total += 1
            s = scores.get(n.id)
            if s is None:
                nodes.append(n)
                if n.toxicity is not None:
                    scored += 1
                continue
            scored += 1
            if n.toxicity != s:
                n = n.with_toxicity(s)
                changed = True
            nodes.append(n)
        trees.append(ConversationTree(tree.root, tuple(nodes), tree.child_index) if changed else tree)
    out = ConversationForest(tuple(trees), forest.group_labels)
    return out, ScoreCoverage(scored, total, tuple(unknown))


# ---------------------------------------------------------------------------
# score cache


def _record_to_json(rec: ScoreRecord) -> str:
    return json.dumps({"id": rec.id, "toxicity": rec.toxicity, "scorer": rec.scorer_name,
                       "model_version": rec.model_version}, ensure_ascii=False)


def write_score_cache(records: Iterable[ScoreRecord], fh: IO[str]) -> int:
    n = 0
    for rec in records:
        fh.write(_record_to_json(rec) + "\n")
        n += 1
    return n


def parse_score_cache(lines: Iterable[str], path: str | None = None) -> list[ScoreRecord]:
    numbered = [(i, line) for i, line in enumerate(lines, 1) if line.strip()]
    try:
        objs = json.loads("[" + ",".join(line for _, line in numbered) + "]")
    except json.JSONDecodeError:
        objs = None
    out = []
    for pos, (lineno, line) in enumerate(numbered):
        try:
            obj = objs[pos] if objs is not None else json.loads(line)
            out.append(checked_score(str(obj["id"]), obj["toxicity"],
                                     str(obj.get("scorer", "")), str(obj.get("model_version", ""))))
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"bad score record: {exc}", line=lineno, path=path) from None
    return out


def read_score_cache(path: str | os.PathLike | None) -> list[ScoreRecord]:
    if path is None:
        return []
    with open(path, encoding="utf-8") as fh:
        return parse_score_cache(fh, path=str(path))


# ---------------------------------------------------------------------------
# agreement


def binarize(score: float, threshold: float = 0.5) -> bool:
    """Toxic iff the score is strictly above ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return score > threshold


def cohens_kappa(labels_a: Sequence[bool], labels_b: Sequence[bool]) -> AgreementResult:
    """Two-rater, two-category Cohen's kappa.

    When chance agreement is 1 (both raters constant and equal) kappa is
    reported as 1.0 and the result is flagged ``degenerate``.
    """
    if len(labels_a) != len(labels_b):
        raise ValueError("label lists differ in length")
    n = len(labels_a)
    if n == 0:
        raise ValueError("need at least one labelled item")
    both = sum(1 for a, b in zip(labels_a, labels_b) if a and b)
    neither = sum(1 for a, b in zip(labels_a, labels_b) if not a and not b)
    pa = sum(1 for a in labels_a if a) / n
    pb = sum(1 for b in labels_b if b) / n
    p_o = (both + neither) / n
    p_e = pa * pb + (1.0 - pa) * (1.0 - pb)
    if p_e >= 1.0:
        return AgreementResult(1.0, p_o, p_e, n, degenerate=True)
    return AgreementResult((p_o - p_e) / (1.0 - p_e), p_o, p_e, n)

"""Seeded synthetic conversation forests with planted toxicity dynamics.

Two toxicity models are available:

* contagion (default): a root is toxic with probability ``base_toxic_rate``;
  a reply is toxic with probability ``contagion_rate`` under a toxic parent
  and ``base_toxic_rate`` otherwise. Toxic scores are uniform on (0.5, 1],
  non-toxic scores uniform on [0, 0.5).
* linear: when ``regression_betas = (b0, b1, ..., bL)`` is given, a node with
  at least ``L`` ancestors gets ``b0 + sum(b_i * T(ancestor_i)) + noise``
  (noise uniform on ``[-noise, noise]``, result clipped to [0, 1]); nodes
  closer to the root draw uniformly from [0, 1].

Reply counts follow a geometric law on {0, 1, ...} whose mean at depth ``d``
is ``mean_children * depth_decay**d``, capped at ``max_children``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ParameterError
from .model import ConversationForest, ConversationNode, build_forest

BASE_TIME = 1_665_532_800  # 2022-10-12T00:00:00Z

_NEUTRAL_WORDS = (
    "the a this that post thread reply point source read think agree disagree maybe "
    "really people just like know said good fair actually right wrong time thing "
    "question answer article comment about because still though well sure"
).split()
_TOXIC_WORDS = ("idiot", "moron", "stupid", "shit", "fuck", "bitch", "scum", "dumbass",
                "asshole", "bullshit")


@dataclass(frozen=True)
class SynthParams:
    trees: int = 100
    mean_children: float = 3.0
    depth_decay: float = 0.7
    base_toxic_rate: float = 0.19
    contagion_rate: float = 0.28
    regression_betas: tuple[float, ...] | None = None
    noise: float = 0.05
    max_children: int = 200
    max_depth: int = 60
    communities: tuple[str, ...] = ("synthetic",)
    consensual_communities: tuple[str, ...] = ()
    with_text: bool = True
    toxic_threshold: float = 0.5

    def validate(self) -> None:
        if self.trees < 1:
            raise ParameterError("trees must be >= 1")
        for name in ("base_toxic_rate", "contagion_rate", "depth_decay", "toxic_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name}={v} outside [0, 1]")
        if self.mean_children < 0:
            raise ParameterError("mean_children must be non-negative")
        if self.max_children < 0 or self.max_depth < 0:
            raise ParameterError("max_children and max_depth must be non-negative")
        if self.noise < 0:
            raise ParameterError("noise must be non-negative")
        if self.regression_betas is not None and len(self.regression_betas) < 2:
            raise ParameterError("regression_betas needs an intercept and at least one slope")
        if not self.communities:
            raise ParameterError("at least one community is required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["communities"] = list(self.communities)
        d["consensual_communities"] = list(self.consensual_communities)
        if self.regression_betas is not None:
            d["regression_betas"] = list(self.regression_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SynthParams:
        d = dict(d)
        for key in ("communities", "consensual_communities"):
            if key in d:
                d[key] = tuple(d[key])
        if d.get("regression_betas") is not None:
            d["regression_betas"] = tuple(float(b) for b in d["regression_betas"])
        return cls(**d)


@dataclass
class SynthArrays:
    """Generated forest in generation (breadth-first) order."""

    parent: np.ndarray
    tree: np.ndarray
    depth: np.ndarray
    toxicity: np.ndarray
    created_utc: np.ndarray
    author: np.ndarray
    params: SynthParams
    bodies: list[str] | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.parent.shape[0]


def _draw_scores(rng: np.random.Generator, toxic: np.ndarray) -> np.ndarray:
    u = rng.random(toxic.shape[0])
    return np.where(toxic, 1.0 - 0.5 * u, 0.5 * u)


def synth_arrays(params: SynthParams, seed: int) -> SynthArrays:
    params.validate()
    rng = np.random.default_rng(seed)
    n_roots = params.trees
    betas = None if params.regression_betas is None else np.asarray(params.regression_betas)
    lags = 0 if betas is None else betas.shape[0] - 1

    parents = [np.full(n_roots, -1, dtype=np.int64)]
    trees = [np.arange(n_roots, dtype=np.int64)]
    depths = [np.zeros(n_roots, dtype=np.int64)]
    times = [BASE_TIME + rng.integers(0, 86_400 * 30, n_roots)]
    if betas is None:
        tox0 = _draw_scores(rng, rng.random(n_roots) < params.base_toxic_rate)
    else:
        tox0 = rng.random(n_roots)
    toxs = [tox0]

    all_parent = parents[0]
    all_tox = tox0
    frontier = np.arange(n_roots, dtype=np.int64)
    offset = n_roots
    d = 0
    while frontier.size and d < params.max_depth:
        mean = params.mean_children * params.depth_decay ** d
        if mean <= 0:
            break
        counts = rng.geometric(1.0 / (1.0 + mean), frontier.size) - 1
        np.minimum(counts, params.max_children, out=counts)
        m = int(counts.sum())
        if m == 0:
            break
        par = np.repeat(frontier, counts)
        d += 1
        if betas is None:
            p = np.where(all_tox[par] > params.toxic_threshold,
                         params.contagion_rate, params.base_toxic_rate)
            tox = _draw_scores(rng, rng.random(m) < p)
        elif d < lags:
            tox = rng.random(m)
        else:
            tox = np.full(m, betas[0])
            anc = par
            for b in betas[1:]:
                tox += b * all_tox[anc]
                anc = all_parent[anc]
            tox += rng.uniform(-params.noise, params.noise, m)
            np.clip(tox, 0.0, 1.0, out=tox)
        all_times = np.concatenate(times)
        times.append(all_times[par] + rng.integers(1, 3_600, m))
        parents.append(par)
        trees.append(np.concatenate(trees)[par])
        depths.append(np.full(m, d, dtype=np.int64))
        toxs.append(tox)
        all_parent = np.concatenate(parents)
        all_tox = np.concatenate(toxs)
        frontier = np.arange(offset, offset + m, dtype=np.int64)
        offset += m

    n = offset
    out = SynthArrays(
        parent=all_parent, tree=np.concatenate(trees), depth=np.concatenate(depths),
        toxicity=all_tox, created_utc=np.concatenate(times),
        author=rng.integers(0, max(1, n // 8), n), params=params,
    )
    if params.with_text:
        out.bodies = _synth_bodies(rng, all_tox)
    return out


def _synth_bodies(rng: np.random.Generator, tox: np.ndarray) -> list[str]:
    n = tox.shape[0]
    n_words = rng.integers(4, 25, n)
    n_toxic = np.rint(tox * n_words).astype(np.int64)
    starts = np.concatenate(([0], np.cumsum(n_words)))
    total = int(starts[-1])
    neutral = np.array(_NEUTRAL_WORDS, dtype=object)[rng.integers(0, len(_NEUTRAL_WORDS), total)]
    toxic = np.array(_TOXIC_WORDS, dtype=object)[rng.integers(0, len(_TOXIC_WORDS), total)]
    pos = np.arange(total) - np.repeat(starts[:-1], n_words)
    words = np.where(pos < np.repeat(n_toxic, n_words), toxic, neutral).tolist()
    return [" ".join(words[starts[i]:starts[i + 1]]) for i in range(n)]


def to_records(arrays: SynthArrays, id_prefix: str = "n",
               scored: bool = True) -> list[ConversationNode]:
    params = arrays.params
    ids = [f"{id_prefix}{i}" for i in range(len(arrays))]
    communities = params.communities
    bodies = arrays.bodies
    parent = arrays.parent.tolist()
    tree = arrays.tree.tolist()
    times = arrays.created_utc.tolist()
    authors = arrays.author.tolist()
    tox = arrays.toxicity.tolist()
    return [
        ConversationNode(
            id=ids[i],
            parent=None if parent[i] < 0 else ids[parent[i]],
            author=f"user{authors[i]}",
            created_utc=times[i],
            vote_score=1,
            body="" if bodies is None else bodies[i],
            community=communities[tree[i] % len(communities)],
            toxicity=tox[i] if scored else None,
        )
        for i in range(len(arrays))
    ]


def synth_forest(params: SynthParams, seed: int, id_prefix: str = "n") -> ConversationForest:
    """Pre-scored synthetic forest; identical output for identical seeds."""
    arrays = synth_arrays(params, seed)
    forest, _ = build_forest(to_records(arrays, id_prefix))
    consensual = set(params.consensual_communities)
    from .model import GroupLabel

    return forest.relabel([GroupLabel(t.root_node.community, t.root_node.community in consensual)
                           for t in forest.trees])

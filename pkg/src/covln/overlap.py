"""Spatial overlap detection between two agents' memories.

Three interchangeable matchers decide whether a node of one memory denotes the
same physical location as a node of another: identifier equality, coordinate
proximity, and embedding similarity. Embedding matches carry a confidence
``c`` in [0, 1] that converts to an estimated inter-node distance
``d = (1 - c) * alpha`` used to weight the bridge edge created at fusion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import InputError
from .memory import MemoryGraph

MODES = ("id", "coord", "embed")

Scorer = Callable[[Sequence[float], Sequence[float]], float]


def score_cosine(e_a: Sequence[float], e_b: Sequence[float]) -> float:
    """Reference pair scorer: cosine similarity mapped affinely onto [0, 1]."""
    if len(e_a) != len(e_b):
        raise InputError(f"embedding dimensions differ: {len(e_a)} vs {len(e_b)}")
    va = np.asarray(e_a, dtype=float)
    vb = np.asarray(e_b, dtype=float)
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise InputError("cannot score a zero embedding vector")
    cos = float(np.dot(va, vb)) / (na * nb)
    cos = max(-1.0, min(1.0, cos))
    return (cos + 1.0) / 2.0


def est_distance(confidence: float, alpha: float) -> float:
    """Estimated inter-node distance for a match of the given confidence."""
    if not 0.0 <= confidence <= 1.0:
        raise InputError(f"confidence {confidence!r} outside [0, 1]")
    if alpha <= 0:
        raise InputError(f"distance scale alpha must be positive, got {alpha!r}")
    return (1.0 - confidence) * alpha


@dataclass(frozen=True)
class MatchCandidate:
    """An anchor correspondence between nodes of two memories."""

    node_a: str
    node_b: str
    confidence: float
    est_distance: float
    mode: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise InputError(f"unknown match mode '{self.mode}'")
        if not 0.0 <= self.confidence <= 1.0:
            raise InputError(f"confidence {self.confidence!r} outside [0, 1]")
        if self.est_distance < 0:
            raise InputError("estimated distance must be non-negative")
        if self.mode in ("id", "coord") and self.est_distance != 0.0:
            raise InputError(f"{self.mode} matches carry zero distance")

    def swapped(self) -> "MatchCandidate":
        return MatchCandidate(
            self.node_b, self.node_a, self.confidence, self.est_distance, self.mode
        )


MatchSet = list


@dataclass
class MatcherConfig:
    """Matcher selection plus thresholds; see the CLI syntax in parse()."""

    mode: str = "id"
    tau: float = 0.9
    alpha: float = 2.0
    eps: float = 0.5
    scorer: Scorer = field(default=score_cosine, repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise InputError(f"unknown matcher mode '{self.mode}'")
        if not 0.0 < self.tau <= 1.0:
            raise InputError(f"tau must lie in (0, 1], got {self.tau!r}")
        if self.alpha <= 0:
            raise InputError(f"alpha must be positive, got {self.alpha!r}")
        if self.eps <= 0:
            raise InputError(f"eps must be positive, got {self.eps!r}")

    @classmethod
    def parse(cls, text: str) -> "MatcherConfig":
        """Parse the CLI form: ``id`` | ``coord:EPS`` | ``embed:TAU,ALPHA``."""
        head, _, rest = text.partition(":")
        try:
            if head == "id":
                if rest:
                    raise InputError("id matcher takes no parameters")
                return cls(mode="id")
            if head == "coord":
                return cls(mode="coord", eps=float(rest)) if rest else cls(mode="coord")
            if head == "embed":
                if rest:
                    tau_s, _, alpha_s = rest.partition(",")
                    tau = float(tau_s)
                    alpha = float(alpha_s) if alpha_s else 2.0
                    return cls(mode="embed", tau=tau, alpha=alpha)
                return cls(mode="embed")
        except ValueError as exc:
            raise InputError(f"malformed matcher spec '{text}': {exc}") from None
        raise InputError(f"unknown matcher '{text}' (expected id | coord:EPS | embed:TAU,ALPHA)")

    def format(self) -> str:
        if self.mode == "id":
            return "id"
        if self.mode == "coord":
            return f"coord:{self.eps:g}"
        return f"embed:{self.tau:g},{self.alpha:g}"


def _candidates(m: MemoryGraph) -> list[str]:
    # Peer-provenance nodes are excluded: re-matching already-fused content
    # would only echo knowledge back and forth.
    return m.self_node_ids()


def detect(
    m_i: MemoryGraph,
    m_j: MemoryGraph,
    cfg: MatcherConfig,
    positions: Mapping[str, Sequence[float]] | None = None,
) -> MatchSet:
    """Find anchor correspondences between two memories.

    ``positions`` maps viewpoint id to a true position and is required for
    coordinate matching (the simulator's stand-in for a GPS fix). Matching is
    one-to-one with deterministic, swap-symmetric tie-breaking; results come
    back ordered by decreasing confidence.
    """
    if m_i.agent_id == m_j.agent_id:
        raise InputError("overlap detection requires memories from distinct agents")
    cand_i = _candidates(m_i)
    cand_j = _candidates(m_j)
    if cfg.mode == "id":
        common = sorted(set(cand_i) & set(cand_j))
        return [MatchCandidate(v, v, 1.0, 0.0, "id") for v in common]
    if cfg.mode == "coord":
        if positions is None:
            raise InputError("coordinate matching requires a position table")
        for v in cand_i + cand_j:
            if v not in positions:
                raise InputError(f"no position known for node '{v}'")
        scored = []
        for a in cand_i:
            pa = positions[a]
            for b in cand_j:
                d = math.dist(pa, positions[b])
                if d < cfg.eps:
                    scored.append((d, min(a, b), max(a, b), a, b))
        picked = _greedy_one_to_one(sorted(scored))
        return [MatchCandidate(a, b, 1.0, 0.0, "coord") for a, b in picked]
    # embed
    for v, m in [(v, m_i) for v in cand_i] + [(v, m_j) for v in cand_j]:
        if m.nodes[v].embedding is None:
            raise InputError(f"node '{v}' has no embedding for embedding-based matching")
    conf = _pair_confidences(m_i, m_j, cand_i, cand_j, cfg.scorer)
    scored = []
    for (a, b), c in conf.items():
        if c >= cfg.tau:
            scored.append((-c, min(a, b), max(a, b), a, b))
    picked = _greedy_one_to_one(sorted(scored))
    return [
        MatchCandidate(a, b, conf[(a, b)], est_distance(conf[(a, b)], cfg.alpha), "embed")
        for a, b in picked
    ]


def _pair_confidences(
    m_i: MemoryGraph,
    m_j: MemoryGraph,
    cand_i: list[str],
    cand_j: list[str],
    scorer: Scorer,
) -> dict[tuple[str, str], float]:
    if not cand_i or not cand_j:
        return {}
    if scorer is score_cosine:
        # Vectorized fast path for the reference scorer.
        A = np.asarray([m_i.nodes[v].embedding for v in cand_i], dtype=float)
        B = np.asarray([m_j.nodes[v].embedding for v in cand_j], dtype=float)
        if A.shape[1] != B.shape[1]:
            raise InputError(f"embedding dimensions differ: {A.shape[1]} vs {B.shape[1]}")
        norm_a = np.linalg.norm(A, axis=1)
        norm_b = np.linalg.norm(B, axis=1)
        if (norm_a == 0).any() or (norm_b == 0).any():
            raise InputError("cannot score a zero embedding vector")
        cos = (A @ B.T) / np.outer(norm_a, norm_b)
        C = (np.clip(cos, -1.0, 1.0) + 1.0) / 2.0
        return {
            (a, b): float(C[ia, ib])
            for ia, a in enumerate(cand_i)
            for ib, b in enumerate(cand_j)
        }
    out = {}
    for a in cand_i:
        for b in cand_j:
            c = scorer(m_i.nodes[a].embedding, m_j.nodes[b].embedding)
            if not 0.0 <= c <= 1.0:
                raise InputError(f"scorer returned {c!r} outside [0, 1]")
            out[(a, b)] = c
    return out


def _greedy_one_to_one(ranked: list[tuple]) -> list[tuple[str, str]]:
    used_a: set[str] = set()
    used_b: set[str] = set()
    picked = []
    for entry in ranked:
        a, b = entry[-2], entry[-1]
        if a in used_a or b in used_b:
            continue
        used_a.add(a)
        used_b.add(b)
        picked.append((a, b))
    return picked

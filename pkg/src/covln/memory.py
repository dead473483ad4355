"""Per-agent topological memory.

Each agent incrementally builds a private graph of the viewpoints it has
visited or observed. Nodes carry a status (visited vs. merely observed), the
id of the agent the knowledge originally came from, the step it was first
seen, and an optional embedding. Regular edges mirror environment adjacency;
bridge edges are cross-agent links created by fusion and carry their own
traversal semantics (see :mod:`covln.policy`).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Iterator, Sequence

from .errors import InputError

Embedding = tuple[float, ...]


class NodeStatus(Enum):
    VISITED = "visited"
    OBSERVED = "observed"


@dataclass
class NodePayload:
    viewpoint_id: str
    status: NodeStatus
    origin_agent: int
    first_seen_step: int
    embedding: Embedding | None = None


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


class MemoryGraph:
    """One agent's private topological memory.

    Node and edge sets only ever grow (bridges are the one exception: a bridge
    proven wrong on traversal is pruned). Owned by exactly one agent during a
    tick; fusion reads peers through :meth:`copy` snapshots.
    """

    def __init__(self, agent_id: int):
        self.agent_id = agent_id
        self.nodes: dict[str, NodePayload] = {}
        self._adj: dict[str, dict[str, float]] = {}
        self._bridge_adj: dict[str, dict[str, float]] = {}

    # -- construction -------------------------------------------------------

    def copy(self) -> "MemoryGraph":
        m = MemoryGraph(self.agent_id)
        m.nodes = {vid: replace(p) for vid, p in self.nodes.items()}
        m._adj = {vid: dict(nbrs) for vid, nbrs in self._adj.items()}
        m._bridge_adj = {vid: dict(nbrs) for vid, nbrs in self._bridge_adj.items()}
        return m

    def _ensure_node(
        self,
        viewpoint_id: str,
        status: NodeStatus,
        origin_agent: int,
        step: int,
        embedding: Embedding | None,
    ) -> NodePayload:
        node = self.nodes.get(viewpoint_id)
        if node is None:
            node = NodePayload(viewpoint_id, status, origin_agent, step, embedding)
            self.nodes[viewpoint_id] = node
            self._adj.setdefault(viewpoint_id, {})
            self._bridge_adj.setdefault(viewpoint_id, {})
            return node
        if status is NodeStatus.VISITED:
            node.status = NodeStatus.VISITED
        node.first_seen_step = min(node.first_seen_step, step)
        if node.embedding is None and embedding is not None:
            node.embedding = embedding
        return node

    def add_imported_node(self, payload: NodePayload) -> None:
        """Insert a node received from a peer; existing nodes are kept as-is."""
        if payload.viewpoint_id in self.nodes:
            return
        self.nodes[payload.viewpoint_id] = payload
        self._adj.setdefault(payload.viewpoint_id, {})
        self._bridge_adj.setdefault(payload.viewpoint_id, {})

    def add_edge(self, a: str, b: str, weight: float) -> None:
        if a not in self.nodes or b not in self.nodes:
            raise InputError(f"edge ({a!r}, {b!r}) references a node absent from memory")
        if a == b:
            return
        if b in self._adj[a]:
            return  # first observation wins
        self._adj[a][b] = weight
        self._adj[b][a] = weight
        # A confirmed traversable edge supersedes an estimated bridge.
        self._bridge_adj[a].pop(b, None)
        self._bridge_adj[b].pop(a, None)

    def add_bridge(self, a: str, b: str, weight: float) -> None:
        if a not in self.nodes or b not in self.nodes:
            raise InputError(f"bridge ({a!r}, {b!r}) references a node absent from memory")
        if a == b:
            return
        if b in self._adj[a] or b in self._bridge_adj[a]:
            return
        self._bridge_adj[a][b] = weight
        self._bridge_adj[b][a] = weight

    def remove_bridge(self, a: str, b: str) -> None:
        self._bridge_adj.get(a, {}).pop(b, None)
        self._bridge_adj.get(b, {}).pop(a, None)

    # -- recording observations ----------------------------------------------

    def record_visit(
        self,
        viewpoint_id: str,
        observed: Iterable[tuple] = (),
        step: int = 0,
        embedding: Embedding | None = None,
    ) -> "MemoryGraph":
        """Record physically occupying ``viewpoint_id`` at ``step``.

        ``observed`` holds (neighbor_id, distance[, embedding]) tuples for the
        adjacent viewpoints revealed from here. The node is promoted to
        visited; neighbors enter as observed. Repeated identical calls are
        no-ops apart from keeping the earliest first_seen_step.
        """
        observed = list(observed)
        for obs in observed:
            if obs[1] <= 0:
                raise InputError(
                    f"observed neighbor {obs[0]!r} at non-positive distance {obs[1]!r}"
                )
        self._ensure_node(viewpoint_id, NodeStatus.VISITED, self.agent_id, step, embedding)
        for obs in observed:
            nbr, dist = obs[0], float(obs[1])
            nbr_embedding = obs[2] if len(obs) > 2 else None
            self._ensure_node(nbr, NodeStatus.OBSERVED, self.agent_id, step, nbr_embedding)
            self.add_edge(viewpoint_id, nbr, dist)
        return self

    def merge_alias(self, remove_id: str, keep_id: str) -> None:
        """Collapse two ids confirmed to denote the same physical spot.

        Edges and bridges of ``remove_id`` are re-targeted onto ``keep_id``
        (existing entries win); the connecting pair edge disappears.
        """
        if remove_id not in self.nodes or keep_id not in self.nodes:
            raise InputError("alias merge references a node absent from memory")
        if remove_id == keep_id:
            return
        removed = self.nodes.pop(remove_id)
        kept = self.nodes[keep_id]
        if removed.status is NodeStatus.VISITED:
            kept.status = NodeStatus.VISITED
        kept.first_seen_step = min(kept.first_seen_step, removed.first_seen_step)
        if kept.embedding is None:
            kept.embedding = removed.embedding
        for nbr, w in list(self._adj.pop(remove_id, {}).items()):
            del self._adj[nbr][remove_id]
            if nbr != keep_id:
                self.add_edge(keep_id, nbr, w)
        for nbr, w in list(self._bridge_adj.pop(remove_id, {}).items()):
            del self._bridge_adj[nbr][remove_id]
            if nbr != keep_id:
                self.add_bridge(keep_id, nbr, w)

    # -- queries ---------------------------------------------------------------

    def frontiers(self) -> list[str]:
        """Observed-but-unvisited node ids, sorted."""
        return sorted(
            vid for vid, p in self.nodes.items() if p.status is NodeStatus.OBSERVED
        )

    def is_self_node(self, viewpoint_id: str) -> bool:
        return self.nodes[viewpoint_id].origin_agent == self.agent_id

    def self_node_ids(self) -> list[str]:
        return sorted(
            vid for vid, p in self.nodes.items() if p.origin_agent == self.agent_id
        )

    def edge_weight(self, a: str, b: str) -> float | None:
        return self._adj.get(a, {}).get(b)

    def bridge_weight(self, a: str, b: str) -> float | None:
        return self._bridge_adj.get(a, {}).get(b)

    def edges(self) -> Iterator[tuple[str, str, float]]:
        for a in sorted(self._adj):
            for b, w in sorted(self._adj[a].items()):
                if a < b:
                    yield a, b, w

    def bridges(self) -> Iterator[tuple[str, str, float]]:
        for a in sorted(self._bridge_adj):
            for b, w in sorted(self._bridge_adj[a].items()):
                if a < b:
                    yield a, b, w

    def combined_neighbors(self, viewpoint_id: str) -> list[tuple[str, float, bool]]:
        """(neighbor, weight, is_bridge) over regular and bridge edges, by id."""
        merged: dict[str, tuple[float, bool]] = {
            nbr: (w, False) for nbr, w in self._adj.get(viewpoint_id, {}).items()
        }
        for nbr, w in self._bridge_adj.get(viewpoint_id, {}).items():
            merged.setdefault(nbr, (w, True))
        return [(nbr, w, bridge) for nbr, (w, bridge) in sorted(merged.items())]

    def num_edges(self) -> int:
        return sum(len(nbrs) for nbrs in self._adj.values()) // 2

    def __contains__(self, viewpoint_id: str) -> bool:
        return viewpoint_id in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MemoryGraph):
            return NotImplemented
        return (
            self.agent_id == other.agent_id
            and self.nodes == other.nodes
            and self._adj == other._adj
            and self._bridge_adj == other._bridge_adj
        )

    def __repr__(self) -> str:
        return (
            f"MemoryGraph(agent={self.agent_id}, {len(self.nodes)} nodes, "
            f"{self.num_edges()} edges, {sum(1 for _ in self.bridges())} bridges)"
        )

    def to_debug_dict(self) -> dict:
        """JSON-ready dump used by the harness's --dump-memories flag."""
        return {
            "agent_id": self.agent_id,
            "nodes": [
                {
                    "id": vid,
                    "status": p.status.value,
                    "provenance": "self" if p.origin_agent == self.agent_id else f"peer:{p.origin_agent}",
                    "first_seen_step": p.first_seen_step,
                }
                for vid, p in sorted(self.nodes.items())
            ],
            "edges": [{"a": a, "b": b, "w": w} for a, b, w in self.edges()],
            "bridge_edges": [{"a": a, "b": b, "w": w} for a, b, w in self.bridges()],
        }


def new_memory(
    agent_id: int, start: str, start_embedding: Sequence[float] | None = None
) -> MemoryGraph:
    """Fresh memory containing only the start viewpoint, already visited."""
    m = MemoryGraph(agent_id)
    emb = tuple(float(x) for x in start_embedding) if start_embedding is not None else None
    m._ensure_node(start, NodeStatus.VISITED, agent_id, 0, emb)
    return m

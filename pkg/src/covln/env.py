"""Ground-truth environment graphs.

An :class:`EnvGraph` is an immutable, undirected, positively-weighted graph of
viewpoints with 3D positions. It is the simulator's world: agents move along
its edges, observations reveal its adjacency, and all metric ground truth
(distances, areas) is computed from it. Graphs come from the synthetic
generators or from the environment JSON format (see :func:`load_env`).
"""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from enum import Enum
from heapq import heappop, heappush
from pathlib import Path
from typing import Iterable, Iterator

from .errors import InputError

Position = tuple[float, float, float]


@dataclass(frozen=True)
class Viewpoint:
    """A discrete navigable location with a position in meters."""

    id: str
    position: Position


class AreaBucket(Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"

    @classmethod
    def from_area(cls, area_m2: float) -> "AreaBucket":
        # 250 and 450 both land in the medium band (inclusive bounds).
        if area_m2 < 250.0:
            return cls.SMALL
        if area_m2 <= 450.0:
            return cls.MEDIUM
        return cls.LARGE


class EnvGraph:
    """Immutable undirected environment graph.

    Edge weights are meters and must be positive. When an edge is supplied
    without a weight, the weight is recomputed as the Euclidean distance
    between the endpoint positions. Instances are safe to share read-only
    across threads; shortest-path tables are cached per source.
    """

    __slots__ = ("scan_id", "_nodes", "_adj", "_num_edges", "_sssp_cache")

    def __init__(
        self,
        scan_id: str,
        viewpoints: Iterable[Viewpoint],
        edges: Iterable[tuple[str, str, float | None]] = (),
    ):
        self.scan_id = scan_id
        self._nodes: dict[str, Viewpoint] = {}
        for vp in viewpoints:
            if vp.id in self._nodes:
                raise InputError(f"duplicate viewpoint id '{vp.id}'")
            if len(vp.position) != 3 or not all(math.isfinite(c) for c in vp.position):
                raise InputError(f"viewpoint '{vp.id}' has a non-finite or malformed position")
            self._nodes[vp.id] = vp
        self._adj: dict[str, dict[str, float]] = {vid: {} for vid in self._nodes}
        self._num_edges = 0
        for a, b, w in edges:
            if a not in self._nodes:
                raise InputError(f"edge ({a!r}, {b!r}) references unknown viewpoint '{a}'")
            if b not in self._nodes:
                raise InputError(f"edge ({a!r}, {b!r}) references unknown viewpoint '{b}'")
            if a == b:
                raise InputError(f"edge ({a!r}, {b!r}) is a self-loop")
            if w is None:
                w = math.dist(self._nodes[a].position, self._nodes[b].position)
            if not (isinstance(w, (int, float)) and math.isfinite(w)) or w <= 0:
                raise InputError(f"edge ({a!r}, {b!r}) has non-positive weight {w!r}")
            if b not in self._adj[a]:
                self._num_edges += 1
            self._adj[a][b] = float(w)
            self._adj[b][a] = float(w)
        self._sssp_cache: dict[str, dict[str, tuple[float, tuple[str, ...]]]] = {}

    # -- read access ------------------------------------------------------

    def __contains__(self, viewpoint_id: str) -> bool:
        return viewpoint_id in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def num_edges(self) -> int:
        return self._num_edges

    def node_ids(self) -> list[str]:
        return sorted(self._nodes)

    def viewpoint(self, viewpoint_id: str) -> Viewpoint:
        try:
            return self._nodes[viewpoint_id]
        except KeyError:
            raise InputError(f"unknown viewpoint '{viewpoint_id}'") from None

    def position(self, viewpoint_id: str) -> Position:
        return self.viewpoint(viewpoint_id).position

    def neighbors(self, viewpoint_id: str) -> list[tuple[str, float]]:
        """Adjacent (neighbor id, weight) pairs, sorted by id."""
        if viewpoint_id not in self._adj:
            raise InputError(f"unknown viewpoint '{viewpoint_id}'")
        return sorted(self._adj[viewpoint_id].items())

    def edge_weight(self, a: str, b: str) -> float | None:
        return self._adj.get(a, {}).get(b)

    def edges(self) -> Iterator[tuple[str, str, float]]:
        """All edges as (a, b, weight) with a < b, in sorted order."""
        for a in sorted(self._adj):
            for b, w in sorted(self._adj[a].items()):
                if a < b:
                    yield a, b, w

    def positions(self) -> dict[str, Position]:
        return {vid: vp.position for vid, vp in self._nodes.items()}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EnvGraph):
            return NotImplemented
        return (
            self.scan_id == other.scan_id
            and self._nodes == other._nodes
            and self._adj == other._adj
        )

    def __repr__(self) -> str:
        return f"EnvGraph({self.scan_id!r}, {len(self)} nodes, {self.num_edges} edges)"

    # -- shortest paths ----------------------------------------------------

    def single_source(self, src: str) -> dict[str, tuple[float, tuple[str, ...]]]:
        """Shortest paths from ``src`` to every reachable node.

        Returns {target: (length, path)} where each path is the minimal-weight
        path whose id sequence is lexicographically smallest among ties. The
        table is cached on the graph (instances are immutable).
        """
        if src not in self._nodes:
            raise InputError(f"unknown viewpoint '{src}'")
        cached = self._sssp_cache.get(src)
        if cached is not None:
            return cached
        best: dict[str, tuple[float, tuple[str, ...]]] = {}
        heap: list[tuple[float, tuple[str, ...]]] = [(0.0, (src,))]
        while heap:
            dist, path = heappop(heap)
            node = path[-1]
            if node in best:
                continue
            best[node] = (dist, path)
            for nbr, w in self._adj[node].items():
                if nbr not in best:
                    heappush(heap, (dist + w, path + (nbr,)))
        self._sssp_cache[src] = best
        return best


def shortest_path(g: EnvGraph, a: str, b: str) -> tuple[list[str] | None, float]:
    """Minimal-weight path from ``a`` to ``b``.

    Ties are broken by the lexicographically smallest id sequence. Returns
    (None, inf) when ``b`` is unreachable; unknown ids are rejected.
    """
    if b not in g:
        raise InputError(f"unknown viewpoint '{b}'")
    table = g.single_source(a)
    entry = table.get(b)
    if entry is None:
        return None, math.inf
    dist, path = entry
    return list(path), dist


def scene_area(g: EnvGraph) -> tuple[float, AreaBucket]:
    """Horizontal bounding-box area of the viewpoint positions, in m².

    The area estimator is the axis-aligned bounding box of the positions
    projected to the x-y plane; buckets follow :class:`AreaBucket`.
    """
    if len(g) == 0:
        raise InputError("scene_area of an empty graph")
    xs = [vp.position[0] for vp in g._nodes.values()]
    ys = [vp.position[1] for vp in g._nodes.values()]
    area = (max(xs) - min(xs)) * (max(ys) - min(ys))
    return area, AreaBucket.from_area(area)


# -- synthetic generation ---------------------------------------------------


def generate_synthetic(
    kind: str,
    *,
    rows: int = 0,
    cols: int = 0,
    spacing: float = 1.0,
    n: int = 0,
    radius: float = 1.0,
    extent: tuple[float, float] = (10.0, 10.0),
    seed: int = 0,
) -> EnvGraph:
    """Generate a synthetic environment, deterministically in all parameters.

    ``grid`` lays out rows x cols nodes with 4-adjacency at the given spacing.
    ``random-geometric`` samples n points uniformly in the extent and connects
    pairs within the radius; if the result is disconnected only the largest
    connected component is kept. Zero-size parameters yield an empty graph.
    """
    if kind == "grid":
        return _grid(rows, cols, spacing)
    if kind == "random-geometric":
        return _random_geometric(n, radius, extent, seed)
    raise InputError(f"unknown environment kind '{kind}'")


def _id_width(count: int) -> int:
    return max(1, len(str(max(count - 1, 0))))


def _grid(rows: int, cols: int, spacing: float) -> EnvGraph:
    if rows < 0 or cols < 0:
        raise InputError("grid size must be non-negative")
    if spacing <= 0:
        raise InputError("grid spacing must be positive")
    width = _id_width(rows * cols)
    vps = []
    edges: list[tuple[str, str, float | None]] = []

    def vid(r: int, c: int) -> str:
        return f"v{r * cols + c:0{width}d}"

    for r in range(rows):
        for c in range(cols):
            vps.append(Viewpoint(vid(r, c), (c * spacing, r * spacing, 0.0)))
            if c + 1 < cols:
                edges.append((vid(r, c), vid(r, c + 1), None))
            if r + 1 < rows:
                edges.append((vid(r, c), vid(r + 1, c), None))
    return EnvGraph(f"grid-{rows}x{cols}", vps, edges)


def _random_geometric(
    n: int, radius: float, extent: tuple[float, float], seed: int
) -> EnvGraph:
    if n < 0:
        raise InputError("node count must be non-negative")
    if radius <= 0:
        raise InputError("connection radius must be positive")
    w, h = extent
    if w < 0 or h < 0:
        raise InputError("extent must be non-negative")
    rng = random.Random(seed)
    width = _id_width(n)
    vps = [
        Viewpoint(f"v{i:0{width}d}", (rng.uniform(0.0, w), rng.uniform(0.0, h), 0.0))
        for i in range(n)
    ]
    edges: list[tuple[str, str, float | None]] = []
    for i in range(n):
        for j in range(i + 1, n):
            if math.dist(vps[i].position, vps[j].position) <= radius:
                edges.append((vps[i].id, vps[j].id, None))
    scan_id = f"rgg-n{n}-seed{seed}"
    g = EnvGraph(scan_id, vps, edges)
    if len(g) == 0:
        return g
    component = _largest_component(g)
    if len(component) == len(g):
        return g
    kept = [vp for vp in vps if vp.id in component]
    kept_edges = [(a, b, None) for a, b, _ in g.edges() if a in component and b in component]
    return EnvGraph(scan_id, kept, kept_edges)


def _largest_component(g: EnvGraph) -> set[str]:
    seen: set[str] = set()
    best: set[str] = set()
    for start in g.node_ids():
        if start in seen:
            continue
        comp = {start}
        stack = [start]
        while stack:
            node = stack.pop()
            for nbr, _ in g.neighbors(node):
                if nbr not in comp:
                    comp.add(nbr)
                    stack.append(nbr)
        seen |= comp
        # Ties go to the component holding the smallest id (scan order).
        if len(comp) > len(best):
            best = comp
    return best


# -- JSON format -------------------------------------------------------------


def env_to_dict(g: EnvGraph) -> dict:
    return {
        "scan_id": g.scan_id,
        "viewpoints": [
            {"id": vid, "pos": list(g.position(vid))} for vid in g.node_ids()
        ],
        "edges": [{"a": a, "b": b, "w": w} for a, b, w in g.edges()],
    }


def save_env(g: EnvGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(env_to_dict(g), indent=2, sort_keys=True) + "\n")


def env_from_dict(data: dict) -> EnvGraph:
    if not isinstance(data, dict):
        raise InputError("environment JSON must be an object")
    scan_id = data.get("scan_id")
    if not isinstance(scan_id, str):
        raise InputError("environment JSON is missing a string 'scan_id'")
    raw_vps = data.get("viewpoints")
    if not isinstance(raw_vps, list):
        raise InputError("environment JSON is missing a 'viewpoints' list")
    vps = []
    for rec in raw_vps:
        if not isinstance(rec, dict) or "id" not in rec or "pos" not in rec:
            raise InputError(f"malformed viewpoint record {rec!r}")
        pos = rec["pos"]
        if not (isinstance(pos, list) and len(pos) == 3):
            raise InputError(f"viewpoint '{rec.get('id')}' has malformed position {pos!r}")
        vps.append(Viewpoint(str(rec["id"]), (float(pos[0]), float(pos[1]), float(pos[2]))))
    raw_edges = data.get("edges", [])
    if not isinstance(raw_edges, list):
        raise InputError("'edges' must be a list")
    edges = []
    for rec in raw_edges:
        if not isinstance(rec, dict) or "a" not in rec or "b" not in rec:
            raise InputError(f"malformed edge record {rec!r}")
        w = rec.get("w")
        edges.append((str(rec["a"]), str(rec["b"]), None if w is None else float(w)))
    return EnvGraph(scan_id, vps, edges)


def load_env(path: str | Path) -> EnvGraph:
    """Load an environment JSON file; round-trips with :func:`save_env`."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"environment file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed JSON in {path}: {exc}") from None
    return env_from_dict(data)

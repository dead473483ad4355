"""Collaborative knowledge fusion.

Once overlap anchors exist between two memories, the receiving memory absorbs
the peer's nodes and edges it does not already hold. Identifier and coordinate
anchors merge onto the receiver's node at zero distance; embedding anchors
keep both nodes and join them with a bridge edge weighted by the estimated
inter-node distance. A :class:`FusionPolicy` controls when fusion fires, in
which direction knowledge flows, and whether it keeps flowing after the first
exchange.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, MutableSet

from .errors import InputError
from .memory import MemoryGraph, NodeStatus
from .overlap import MatchCandidate, MatchSet

TRIGGERS = ("detect", "covisit")
DIRECTIONS = ("bi", "later")


@dataclass(frozen=True)
class FusionPolicy:
    """Trigger / direction / persistence switches for knowledge exchange."""

    trigger: str = "detect"
    direction: str = "bi"
    persistent: bool = True

    def __post_init__(self):
        if self.trigger not in TRIGGERS:
            raise InputError(f"unknown fusion trigger '{self.trigger}'")
        if self.direction not in DIRECTIONS:
            raise InputError(f"unknown fusion direction '{self.direction}'")

    @classmethod
    def parse(cls, text: str) -> "FusionPolicy":
        """Parse the CLI form ``trigger=detect|covisit,dir=bi|later,persist=on|off``."""
        trigger, direction, persistent = "detect", "bi", True
        if text:
            for part in text.split(","):
                key, _, value = part.partition("=")
                if not value:
                    raise InputError(f"malformed fusion option '{part}'")
                if key == "trigger":
                    trigger = value
                elif key == "dir":
                    direction = value
                elif key == "persist":
                    if value not in ("on", "off"):
                        raise InputError(f"persist must be on or off, got '{value}'")
                    persistent = value == "on"
                else:
                    raise InputError(f"unknown fusion option '{key}'")
        return cls(trigger=trigger, direction=direction, persistent=persistent)

    def format(self) -> str:
        return (
            f"trigger={self.trigger},dir={self.direction},"
            f"persist={'on' if self.persistent else 'off'}"
        )


@dataclass(frozen=True)
class FusionEvent:
    """One applied exchange between a pair of agents at a given step."""

    step: int
    agents: tuple[int, int]
    matches: tuple[MatchCandidate, ...]
    applied_to: frozenset[int]


def fuse(m_i: MemoryGraph, m_j_snapshot: MemoryGraph, matches: MatchSet) -> MemoryGraph:
    """Absorb a peer snapshot into ``m_i`` through the given anchors.

    ``m_i`` is enriched in place and returned; the snapshot is never modified.
    With no anchors there is nothing registering the two maps against each
    other, so the call is a no-op. Re-fusing the same snapshot is idempotent:
    only content the receiver lacks is imported.
    """
    if not matches:
        return m_i
    for mt in matches:
        if mt.node_a not in m_i.nodes:
            raise InputError(f"match references node '{mt.node_a}' absent from the receiving memory")
        if mt.node_b not in m_j_snapshot.nodes:
            raise InputError(f"match references node '{mt.node_b}' absent from the peer memory")

    # Id and coord anchors denote the same physical spot: the peer's node
    # folds onto the receiver's. Embed anchors map to themselves and get a
    # bridge edge instead.
    remap: dict[str, str] = {}
    for mt in matches:
        if mt.mode in ("id", "coord"):
            remap[mt.node_b] = mt.node_a

    for vid, payload in list(m_j_snapshot.nodes.items()):
        target = remap.get(vid, vid)
        if target not in m_i.nodes:
            imported = replace(payload, viewpoint_id=target, origin_agent=m_j_snapshot.agent_id)
            m_i.add_imported_node(imported)

    for a, b, w in list(m_j_snapshot.edges()):
        ta, tb = remap.get(a, a), remap.get(b, b)
        if ta != tb:
            m_i.add_edge(ta, tb, w)
    for a, b, w in list(m_j_snapshot.bridges()):
        ta, tb = remap.get(a, a), remap.get(b, b)
        if ta != tb:
            m_i.add_bridge(ta, tb, w)

    for mt in matches:
        if mt.mode == "embed" and mt.node_a != mt.node_b:
            m_i.add_bridge(mt.node_a, mt.node_b, mt.est_distance)
    return m_i


def _covisited(m_i: MemoryGraph, m_j: MemoryGraph, matches: MatchSet) -> bool:
    return any(
        m_i.nodes[mt.node_a].status is NodeStatus.VISITED
        and m_j.nodes[mt.node_b].status is NodeStatus.VISITED
        for mt in matches
    )


def _later_agent(i: int, j: int, m_i: MemoryGraph, m_j: MemoryGraph, matches: MatchSet) -> int:
    # The later-arriving agent is the one whose earliest anchor arrival is
    # later; ties go to the larger agent id.
    t_i = min(m_i.nodes[mt.node_a].first_seen_step for mt in matches)
    t_j = min(m_j.nodes[mt.node_b].first_seen_step for mt in matches)
    if t_i > t_j:
        return i
    if t_j > t_i:
        return j
    return max(i, j)


def maybe_fuse(
    memories: Mapping[int, MemoryGraph],
    policy: FusionPolicy,
    matches_per_pair: Mapping[tuple[int, int], MatchSet],
    step: int,
    fired_pairs: MutableSet[tuple[int, int]],
) -> list[FusionEvent]:
    """Apply the fusion policy to one tick's fresh match results.

    Pairs are processed in ascending order; each fusion reads the peer as a
    snapshot frozen at the tick boundary, so N-agent knowledge propagates
    pairwise across ticks rather than as an N-way merge. ``fired_pairs``
    records pairs that already exchanged once (used when persistence is off)
    and is updated in place.
    """
    events: list[FusionEvent] = []
    # Snapshots are taken before any fusion so every exchange this tick reads
    # tick-boundary state, independent of pair processing order.
    involved = {a for pair, ms in matches_per_pair.items() if ms for a in pair}
    snapshots = {a: memories[a].copy() for a in involved}
    for pair in sorted(matches_per_pair):
        i, j = pair
        matches = matches_per_pair[pair]
        if not matches:
            continue
        if not policy.persistent and pair in fired_pairs:
            continue
        m_i, m_j = memories[i], memories[j]
        if policy.trigger == "covisit" and not _covisited(m_i, m_j, matches):
            continue
        if policy.direction == "bi":
            applied = {i, j}
        else:
            applied = {_later_agent(i, j, m_i, m_j, matches)}
        if i in applied:
            fuse(m_i, snapshots[j], matches)
        if j in applied:
            fuse(m_j, snapshots[i], [mt.swapped() for mt in matches])
        fired_pairs.add(pair)
        events.append(FusionEvent(step, pair, tuple(matches), frozenset(applied)))
    return events

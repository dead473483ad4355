"""Experiment harness: group runner, synthetic corpora, sweeps, CSV emission.

A run is a pure function of its :class:`ExperimentConfig` (seed included);
groups are independent units of work and may execute on a thread pool without
changing a byte of output. Per-group randomness is derived by hashing the run
seed with the group id, and result rows are sorted before emission.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .env import EnvGraph, scene_area
from .errors import InputError
from .fusion import FusionPolicy
from .metrics import (
    DEFAULT_SUCCESS_THRESH,
    RESULT_COLUMNS,
    EpisodeResult,
    aggregate,
    evaluate,
)
from .overlap import MatcherConfig
from .pairing import (
    Episode,
    EpisodeGroup,
    assign_peers,
    groups_from_pairs,
    pair_prior,
    pair_random,
)
from .policy import gt_path_length, simulate_group

SWEEP_KEYS = ("agents", "pairing", "fusion")


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary labeled parts (order-sensitive)."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass
class ExperimentConfig:
    """Everything a run depends on; fixing the seed fixes the output."""

    env: EnvGraph
    episodes: list[Episode]
    n_agents: int = 2
    pairing: str = "prior"  # prior | random
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    fusion: FusionPolicy = field(default_factory=FusionPolicy)
    sharing: bool = True
    grouping: str = "auto"  # auto | pairs | peers
    budget_factor: float = 2.0
    budget_extra: int = 10
    thresh: float = DEFAULT_SUCCESS_THRESH
    alias_eps: float = 0.5
    seed: int = 0
    embed_dim: int = 64
    noise_sigma: float = 0.0
    share_topology: str = "all"
    jobs: int = 1

    def __post_init__(self):
        if self.n_agents < 1:
            raise InputError("agent count must be at least 1")
        if not self.episodes:
            raise InputError("an experiment needs at least one episode")
        if self.pairing not in ("prior", "random"):
            raise InputError(f"unknown pairing strategy '{self.pairing}'")
        if self.grouping not in ("auto", "pairs", "peers"):
            raise InputError(f"unknown grouping mode '{self.grouping}'")
        if self.jobs < 1:
            raise InputError("jobs must be at least 1")

    def budget_for(self, episode: Episode) -> int:
        return int(self.budget_factor * len(episode.gt_path)) + self.budget_extra


@dataclass
class RunRecord:
    """Scored rows for one group plus group-level fusion metadata."""

    group_id: str
    scan_id: str
    overlap_detected: bool
    first_fusion_step: int | None
    results: list[EpisodeResult]
    memory_dumps: list[dict] | None = None


def build_groups(cfg: ExperimentConfig) -> list[EpisodeGroup]:
    """Arrange the episode corpus into concurrent groups.

    Pairs mode applies the pairing strategy (N=2); peers mode keeps every
    episode as a primary task and attaches the N-1 most path-overlapping
    helpers, whose own results are not scored.
    """
    mode = cfg.grouping
    if mode == "auto":
        mode = "pairs" if cfg.n_agents <= 2 else "peers"
    if cfg.n_agents == 1:
        return [
            EpisodeGroup(f"g{k:04d}", (ep,))
            for k, ep in enumerate(sorted(cfg.episodes, key=lambda e: e.episode_id))
        ]
    if mode == "pairs":
        if cfg.n_agents != 2:
            raise InputError("pairing-based grouping is defined for 2 agents")
        pair_fn = pair_prior if cfg.pairing == "prior" else pair_random
        l1, l2 = pair_fn(cfg.episodes, cfg.seed)
        return groups_from_pairs(l1, l2)
    groups = []
    by_scan: dict[str, list[Episode]] = {}
    for ep in cfg.episodes:
        by_scan.setdefault(ep.scan_id, []).append(ep)
    for k, ep in enumerate(sorted(cfg.episodes, key=lambda e: e.episode_id)):
        pool = [e for e in by_scan[ep.scan_id] if e.episode_id != ep.episode_id]
        peers = assign_peers(ep, pool, cfg.n_agents - 1)
        groups.append(EpisodeGroup(f"g{k:04d}", (ep, *peers)))
    return groups


def run_group(
    env: EnvGraph,
    group: EpisodeGroup,
    cfg: ExperimentConfig,
    dump_memories: bool = False,
) -> RunRecord:
    """Simulate one group and score its members.

    In peers grouping only the primary (first member) is scored. Self-paired
    members run with sharing disabled; a no-overlap group is therefore
    indistinguishable from solo runs.
    """
    if group.scan_id != env.scan_id:
        raise InputError(
            f"group '{group.group_id}' is for scan '{group.scan_id}', not '{env.scan_id}'"
        )
    mode = cfg.grouping
    if mode == "auto":
        mode = "pairs" if cfg.n_agents <= 2 else "peers"
    sharing = cfg.sharing and len(group.members) > 1 and not any(group.self_paired)
    embeddings = None
    if cfg.matcher.mode == "embed":
        embeddings = make_embeddings(
            env,
            cfg.embed_dim,
            cfg.noise_sigma,
            derive_seed(cfg.seed, "embeddings", group.group_id),
            n_agents=len(group.members),
        )
    outcome = simulate_group(
        env,
        group.members,
        sharing=sharing,
        matcher=cfg.matcher,
        fusion_policy=cfg.fusion,
        budgets=[cfg.budget_for(ep) for ep in group.members],
        alias_eps=cfg.alias_eps,
        embeddings=embeddings,
        share_topology=cfg.share_topology,
    )
    scored = outcome.agents if mode == "pairs" else outcome.agents[:1]
    results = [
        evaluate(
            agent.episode.episode_id,
            agent.trajectory,
            agent.traveled,
            agent.episode.instruction_goal,
            max(gt_path_length(agent.episode, env), 1e-9),
            env,
            thresh=cfg.thresh,
            steps=agent.steps,
            sharing_events=agent.sharing_events,
        )
        for agent in scored
    ]
    dumps = None
    if dump_memories:
        dumps = [
            {"episode_id": a.episode.episode_id, **a.memory.to_debug_dict()}
            for a in outcome.agents
        ]
    return RunRecord(
        group_id=group.group_id,
        scan_id=group.scan_id,
        overlap_detected=outcome.overlap_detected,
        first_fusion_step=outcome.first_fusion_step,
        results=results,
        memory_dumps=dumps,
    )


def result_rows(
    records: Iterable[RunRecord], cfg: ExperimentConfig
) -> list[dict]:
    """Flatten run records into CSV-schema dicts, sorted by episode id."""
    rows = []
    for rec in records:
        for res in rec.results:
            rows.append(
                {
                    "episode_id": res.episode_id,
                    "scan_id": rec.scan_id,
                    "agents": cfg.n_agents,
                    "pairing": cfg.pairing,
                    "fusion": cfg.fusion.format(),
                    "matcher": cfg.matcher.format(),
                    "tl": res.tl,
                    "ne": res.ne,
                    "osr": res.osr,
                    "sr": res.sr,
                    "spl": res.spl,
                    "steps": res.steps,
                    "sharing_events": res.sharing_events,
                    "seed": cfg.seed,
                }
            )
    rows.sort(key=lambda r: r["episode_id"])
    return rows


def run_experiment(
    cfg: ExperimentConfig, dump_memories_dir: str | Path | None = None
) -> tuple[list[dict], list[dict]]:
    """Run all groups of one configuration.

    Returns (per-episode rows, summary rows). Group execution parallelizes
    across ``cfg.jobs`` threads without affecting output.
    """
    groups = build_groups(cfg)
    dump = dump_memories_dir is not None

    def _one(group: EpisodeGroup) -> RunRecord:
        return run_group(cfg.env, group, cfg, dump_memories=dump)

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            records = list(pool.map(_one, groups))
    else:
        records = [_one(g) for g in groups]
    if dump:
        out_dir = Path(dump_memories_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for rec in records:
            (out_dir / f"{rec.group_id}.json").write_text(
                json.dumps(rec.memory_dumps, indent=2, sort_keys=True) + "\n"
            )
    rows = result_rows(records, cfg)
    summary = summarize(rows, cfg)
    return rows, [summary]


def summarize(rows: Sequence[dict], cfg: ExperimentConfig) -> dict:
    results = [
        EpisodeResult(
            episode_id=r["episode_id"],
            tl=r["tl"],
            ne=r["ne"],
            osr=bool(r["osr"]),
            sr=bool(r["sr"]),
            spl=r["spl"],
            steps=r["steps"],
            sharing_events=r["sharing_events"],
        )
        for r in rows
    ]
    agg = aggregate(results)
    area, bucket = scene_area(cfg.env)
    return {
        "agents": cfg.n_agents,
        "pairing": cfg.pairing,
        "fusion": cfg.fusion.format(),
        "matcher": cfg.matcher.format(),
        "sharing": int(cfg.sharing),
        "seed": cfg.seed,
        "episodes": agg.count,
        "tl": agg.tl,
        "ne": agg.ne,
        "osr": agg.osr,
        "sr": agg.sr,
        "spl": agg.spl,
        "area_m2": area,
        "area_bucket": bucket.value,
    }


def sweep_configs(cfg: ExperimentConfig, spec: str) -> list[ExperimentConfig]:
    """Expand a sweep spec into configurations sharing the base seed.

    Supported: ``agents=LO..HI`` (peer-scaling), ``pairing=prior,random``,
    ``fusion=grid`` (all eight trigger/direction/persistence combinations).
    """
    key, _, value = spec.partition("=")
    if key == "agents":
        lo_s, _, hi_s = value.partition("..")
        try:
            lo, hi = int(lo_s), int(hi_s if hi_s else lo_s)
        except ValueError:
            raise InputError(f"malformed agents sweep '{value}'") from None
        if lo < 1 or hi < lo:
            raise InputError(f"bad agents range {lo}..{hi}")
        return [
            replace(cfg, n_agents=n, grouping="peers", sharing=cfg.sharing and n > 1)
            for n in range(lo, hi + 1)
        ]
    if key == "pairing":
        strategies = [s for s in value.split(",") if s]
        if not strategies:
            raise InputError("empty pairing sweep")
        return [replace(cfg, pairing=s, n_agents=2, grouping="pairs") for s in strategies]
    if key == "fusion":
        if value != "grid":
            raise InputError(f"fusion sweep supports only 'grid', got '{value}'")
        configs = []
        for trigger in ("detect", "covisit"):
            for direction in ("bi", "later"):
                for persistent in (True, False):
                    configs.append(
                        replace(
                            cfg,
                            fusion=FusionPolicy(trigger, direction, persistent),
                        )
                    )
        return configs
    raise InputError(f"unknown sweep key '{key}' (expected agents, pairing, or fusion)")


def run_sweep(cfg: ExperimentConfig, spec: str) -> tuple[list[dict], list[dict]]:
    """Run every configuration of a sweep; one summary row per config point."""
    all_rows: list[dict] = []
    summaries: list[dict] = []
    for point in sweep_configs(cfg, spec):
        rows, summary = run_experiment(point)
        all_rows.extend(rows)
        summaries.extend(summary)
    return all_rows, summaries


# -- CSV / JSON emission -------------------------------------------------------


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    if columns is None:
        columns = RESULT_COLUMNS if rows and "episode_id" in rows[0] else list(rows[0])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format_cell(row[c]) for c in columns])
    return buf.getvalue()


def write_rows(rows: Sequence[dict], path: str | Path, fmt: str = "csv") -> None:
    path = Path(path)
    if fmt == "csv":
        path.write_text(rows_to_csv(rows))
    elif fmt == "json":
        path.write_text(json.dumps(list(rows), indent=2, sort_keys=True) + "\n")
    else:
        raise InputError(f"unknown output format '{fmt}'")


# -- synthetic corpora -----------------------------------------------------------


def generate_episodes(
    env: EnvGraph,
    count: int,
    len_range: tuple[int, int],
    seed: int,
    id_prefix: str = "ep",
) -> list[Episode]:
    """Sample episodes whose shortest-path ground truth has a hop count in range.

    Starts are drawn uniformly; the goal is drawn uniformly among nodes whose
    shortest path from the start has between len_range[0] and len_range[1]
    edges. Deterministic in the seed.
    """
    if count < 1:
        raise InputError("episode count must be at least 1")
    lo, hi = len_range
    if lo < 1 or hi < lo:
        raise InputError(f"bad path-length range {len_range!r}")
    node_ids = env.node_ids()
    if not node_ids:
        raise InputError("cannot generate episodes on an empty environment")
    table0 = env.single_source(node_ids[0])
    if len(table0) != len(node_ids):
        raise InputError("episode generation requires a connected environment")
    rng = random.Random(seed)
    episodes = []
    for k in range(count):
        episode = None
        for _ in range(200):
            start = rng.choice(node_ids)
            table = env.single_source(start)
            eligible = sorted(
                vid for vid, (_, path) in table.items() if lo <= len(path) - 1 <= hi
            )
            if not eligible:
                continue
            goal = rng.choice(eligible)
            episode = Episode(
                episode_id=f"{id_prefix}{k:04d}",
                scan_id=env.scan_id,
                gt_path=table[goal][1],
            )
            break
        if episode is None:
            max_hops = max(
                max(len(p) - 1 for _, p in env.single_source(vid).values())
                for vid in node_ids
            )
            raise InputError(
                f"no path with hop count in [{lo}, {hi}] exists; "
                f"the maximum feasible hop count is {max_hops}"
            )
        episodes.append(episode)
    return episodes


def make_embeddings(
    env: EnvGraph,
    dim: int,
    noise_sigma: float,
    seed: int,
    n_agents: int = 2,
) -> list[dict[str, tuple[float, ...]]]:
    """Synthetic per-(agent, viewpoint) embeddings.

    The first three coordinates are the true position; the rest are a
    per-viewpoint random signature scaled to carry about three times the
    position energy, which keeps distinct viewpoints well below the match
    threshold while identical viewpoints agree exactly at zero noise.
    Per-agent Gaussian noise of scale ``noise_sigma`` is added on top.
    """
    if dim < 3:
        raise InputError("embedding dimension must be at least 3")
    if noise_sigma < 0:
        raise InputError("noise sigma must be non-negative")
    node_ids = env.node_ids()
    norms = [math.hypot(*env.position(v)) for v in node_ids]
    rms = (sum(x * x for x in norms) / len(norms)) ** 0.5 if norms else 1.0
    rms = max(rms, 1.0)
    extra = dim - 3
    scale = rms * (3.0 / extra) ** 0.5 if extra else 0.0
    base: dict[str, np.ndarray] = {}
    for vid in node_ids:
        rng = np.random.default_rng(derive_seed(seed, "viewpoint", vid))
        signature = rng.normal(0.0, scale, extra) if extra else np.zeros(0)
        base[vid] = np.concatenate([np.asarray(env.position(vid), dtype=float), signature])
    tables: list[dict[str, tuple[float, ...]]] = []
    for agent in range(n_agents):
        table = {}
        for vid in node_ids:
            vec = base[vid]
            if noise_sigma > 0:
                rng = np.random.default_rng(derive_seed(seed, "noise", agent, vid))
                vec = vec + rng.normal(0.0, noise_sigma, dim)
            table[vid] = tuple(float(x) for x in vec)
        tables.append(table)
    return tables

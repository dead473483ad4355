"""Task construction: grouping episodes into concurrent navigation tasks.

Episodes are grouped per scan and paired either by ground-truth path overlap
(greedy, maximizing shared viewpoints) or at random. An episode that cannot
be paired is duplicated as a self-pair, which runs exactly like the solo
baseline. For scaling studies, :func:`assign_peers` picks the N-1 most
overlapping helpers for a primary episode instead.

Pairings are emitted as two aligned lists (L1, L2): L1 holds every input
episode exactly once, and L2[k] is the peer of L1[k] (the episode itself for
self-pairs). Each formed cross pair therefore contributes two mirrored rows,
so downstream evaluation scores all K episodes.
"""
from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import InputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Episode:
    """One navigation task: reach the last viewpoint of its ground-truth path."""

    episode_id: str
    scan_id: str
    gt_path: tuple[str, ...]
    instruction_text: str | None = None

    def __post_init__(self):
        if not self.gt_path:
            raise InputError(f"episode '{self.episode_id}' has an empty ground-truth path")
        object.__setattr__(self, "gt_path", tuple(self.gt_path))

    @property
    def start(self) -> str:
        return self.gt_path[0]

    @property
    def instruction_goal(self) -> str:
        return self.gt_path[-1]


@dataclass(frozen=True)
class EpisodeGroup:
    """N episodes of one scan to be navigated concurrently."""

    group_id: str
    members: tuple[Episode, ...]
    self_paired: tuple[bool, ...] = field(default=())

    def __post_init__(self):
        if not self.members:
            raise InputError("episode group needs at least one member")
        scans = {ep.scan_id for ep in self.members}
        if len(scans) != 1:
            raise InputError(f"group '{self.group_id}' mixes scans {sorted(scans)}")
        if not self.self_paired:
            object.__setattr__(self, "self_paired", tuple(False for _ in self.members))
        elif len(self.self_paired) != len(self.members):
            raise InputError("self_paired flags must align with members")

    @property
    def scan_id(self) -> str:
        return self.members[0].scan_id


def overlap_count(p: Sequence[str], q: Sequence[str]) -> int:
    """Number of distinct viewpoints the two paths share."""
    return len(set(p) & set(q))


def _eligible(a: Episode, b: Episode) -> bool:
    return a.gt_path != b.gt_path and a.start != b.start


def _scan_groups(episodes: Iterable[Episode]) -> list[list[Episode]]:
    by_scan: dict[str, list[Episode]] = {}
    for ep in episodes:
        by_scan.setdefault(ep.scan_id, []).append(ep)
    # Canonical order: scans sorted, members pre-sorted by id before any
    # shuffle, so results do not depend on input ordering.
    return [sorted(by_scan[s], key=lambda e: e.episode_id) for s in sorted(by_scan)]


def _pair_with(
    episodes: Iterable[Episode], seed: int, choose_prior: bool
) -> tuple[list[Episode], list[Episode]]:
    l1: list[Episode] = []
    l2: list[Episode] = []
    for group in _scan_groups(episodes):
        random.Random(seed).shuffle(group)
        while group:
            d_a = group.pop(0)
            if not group:
                l1.append(d_a)
                l2.append(d_a)
                break
            cands = [d for d in group if _eligible(d_a, d)]
            if cands:
                if choose_prior:
                    partner = min(
                        cands,
                        key=lambda d: (-overlap_count(d_a.gt_path, d.gt_path), d.episode_id),
                    )
                else:
                    partner = cands[0]
                group.remove(partner)
                l1.extend([d_a, partner])
                l2.extend([partner, d_a])
            else:
                l1.append(d_a)
                l2.append(d_a)
    return l1, l2


def pair_prior(episodes: Iterable[Episode], seed: int) -> tuple[list[Episode], list[Episode]]:
    """Pair episodes greedily by maximal ground-truth path overlap.

    Within each scan the episodes are shuffled with the seed, then repeatedly
    the first episode is popped and paired with the candidate sharing the most
    path viewpoints (candidates must differ in both path and start; overlap
    ties go to the lexicographically smallest episode id). Episodes without a
    valid candidate become self-pairs.
    """
    return _pair_with(episodes, seed, choose_prior=True)


def pair_random(episodes: Iterable[Episode], seed: int) -> tuple[list[Episode], list[Episode]]:
    """Pair episodes arbitrarily: same protocol, but the partner is simply the
    first valid candidate in shuffled order."""
    return _pair_with(episodes, seed, choose_prior=False)


def assign_peers(primary: Episode, pool: Iterable[Episode], n_peers: int) -> list[Episode]:
    """The ``n_peers`` pool episodes overlapping ``primary``'s path the most.

    Episodes sharing the primary's exact path or start are ineligible. If the
    eligible pool is smaller than requested, all of it is returned and the
    shortfall logged.
    """
    if n_peers < 0:
        raise InputError("n_peers must be non-negative")
    pool = list(pool)
    for ep in pool:
        if ep.scan_id != primary.scan_id:
            raise InputError(
                f"peer pool episode '{ep.episode_id}' is from scan '{ep.scan_id}', "
                f"not '{primary.scan_id}'"
            )
    eligible = [ep for ep in pool if _eligible(primary, ep)]
    eligible.sort(key=lambda e: (-overlap_count(primary.gt_path, e.gt_path), e.episode_id))
    if len(eligible) < n_peers:
        logger.warning(
            "episode %s: requested %d peers but only %d eligible",
            primary.episode_id,
            n_peers,
            len(eligible),
        )
    return eligible[:n_peers]


def pairing_stats(pairs: Sequence[tuple[Episode, Episode]]) -> tuple[float, int]:
    """(mean path overlap over cross pairs, number of self-pair rows).

    With no cross pairs the mean is reported as 0.0 so summaries compose.
    """
    pairs = list(pairs)
    if not pairs:
        raise InputError("pairing_stats of an empty pairing")
    overlaps = []
    self_count = 0
    for a, b in pairs:
        if a.episode_id == b.episode_id:
            self_count += 1
        else:
            overlaps.append(overlap_count(a.gt_path, b.gt_path))
    mean = sum(overlaps) / len(overlaps) if overlaps else 0.0
    return mean, self_count


def groups_from_pairs(
    l1: Sequence[Episode], l2: Sequence[Episode]
) -> list[EpisodeGroup]:
    """Collapse mirrored pairing rows into concurrent groups.

    Cross pairs become two-member groups (in formation order); self-pairs
    become single-member groups flagged self_paired.
    """
    groups: list[EpisodeGroup] = []
    seen: set[frozenset[str]] = set()
    for a, b in zip(l1, l2):
        if a.episode_id == b.episode_id:
            groups.append(
                EpisodeGroup(f"g{len(groups):04d}", (a,), self_paired=(True,))
            )
            continue
        key = frozenset((a.episode_id, b.episode_id))
        if key in seen:
            continue
        seen.add(key)
        groups.append(EpisodeGroup(f"g{len(groups):04d}", (a, b)))
    return groups


# -- episode JSON-lines format ------------------------------------------------


def episode_to_dict(ep: Episode) -> dict:
    rec = {"episode_id": ep.episode_id, "scan_id": ep.scan_id, "path": list(ep.gt_path)}
    if ep.instruction_text is not None:
        rec["instruction"] = ep.instruction_text
    return rec


def save_episodes(episodes: Iterable[Episode], path: str | Path) -> None:
    lines = [json.dumps(episode_to_dict(ep), sort_keys=True) for ep in episodes]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_episodes(path: str | Path) -> list[Episode]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"episode file not found: {path}")
    episodes = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}:{lineno}: malformed JSON: {exc}") from None
        for key in ("episode_id", "scan_id", "path"):
            if key not in rec:
                raise InputError(f"{path}:{lineno}: episode record missing '{key}'")
        if not isinstance(rec["path"], list) or not rec["path"]:
            raise InputError(f"{path}:{lineno}: 'path' must be a non-empty list")
        if rec["episode_id"] in seen_ids:
            raise InputError(f"{path}:{lineno}: duplicate episode id '{rec['episode_id']}'")
        seen_ids.add(rec["episode_id"])
        episodes.append(
            Episode(
                episode_id=str(rec["episode_id"]),
                scan_id=str(rec["scan_id"]),
                gt_path=tuple(str(v) for v in rec["path"]),
                instruction_text=rec.get("instruction"),
            )
        )
    return episodes

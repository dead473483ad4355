"""Command-line interface.

Subcommands: gen-env, gen-episodes, pair, run, sweep, stats. Every command is
deterministic under --seed; rejected inputs exit nonzero with a diagnostic on
stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .env import generate_synthetic, load_env, save_env, scene_area
from .errors import InputError
from .fusion import FusionPolicy
from .harness import (
    ExperimentConfig,
    generate_episodes,
    run_experiment,
    run_sweep,
    rows_to_csv,
    write_rows,
)
from .metrics import EpisodeResult, aggregate
from .overlap import MatcherConfig
from .pairing import (
    load_episodes,
    pair_prior,
    pair_random,
    pairing_stats,
    save_episodes,
)


def _parse_extent(text: str) -> tuple[float, float]:
    w, _, h = text.partition("x")
    try:
        return float(w), float(h)
    except ValueError:
        raise InputError(f"malformed extent '{text}' (expected WxH)") from None


def _parse_size(text: str) -> tuple[int, int]:
    r, _, c = text.partition("x")
    try:
        return int(r), int(c if c else r)
    except ValueError:
        raise InputError(f"malformed size '{text}' (expected ROWSxCOLS)") from None


def _parse_len_range(text: str) -> tuple[int, int]:
    lo, sep, hi = text.partition("..")
    try:
        return int(lo), int(hi if sep else lo)
    except ValueError:
        raise InputError(f"malformed length range '{text}' (expected LO..HI)") from None


def _resolve_env(args) -> "EnvGraph":
    if args.env:
        return load_env(args.env)
    if args.env_kind == "grid":
        rows, cols = _parse_size(args.size)
        return generate_synthetic(
            "grid", rows=rows, cols=cols, spacing=args.spacing, seed=args.seed
        )
    if args.env_kind == "random-geometric":
        return generate_synthetic(
            "random-geometric",
            n=args.n,
            radius=args.radius,
            extent=_parse_extent(args.extent),
            seed=args.seed,
        )
    raise InputError("no environment given: pass --env FILE or --env-kind KIND")


def _resolve_episodes(args, env) -> list:
    if args.episodes:
        return load_episodes(args.episodes)
    if args.gen_episodes:
        return generate_episodes(
            env, args.gen_episodes, _parse_len_range(args.len_range), args.seed
        )
    raise InputError("no episodes given: pass --episodes FILE or --gen-episodes K")


def _add_env_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--env", help="environment JSON file")
    p.add_argument(
        "--env-kind", choices=["grid", "random-geometric"], help="generate instead of loading"
    )
    p.add_argument("--size", default="5x5", help="grid size ROWSxCOLS")
    p.add_argument("--spacing", type=float, default=1.0, help="grid spacing in meters")
    p.add_argument("--n", type=int, default=100, help="random-geometric node count")
    p.add_argument("--radius", type=float, default=2.0, help="connection radius in meters")
    p.add_argument("--extent", default="10x10", help="sampling extent WxH in meters")


def _add_run_options(p: argparse.ArgumentParser) -> None:
    _add_env_options(p)
    p.add_argument("--episodes", help="episode JSONL file")
    p.add_argument("--gen-episodes", type=int, metavar="K", help="generate K episodes")
    p.add_argument("--len-range", default="2..6", help="hop range LO..HI for generated episodes")
    p.add_argument("--agents", type=int, default=2, help="concurrent agents per group")
    p.add_argument("--strategy", choices=["prior", "random"], default="prior")
    p.add_argument("--matcher", default="id", help="id | coord:EPS | embed:TAU,ALPHA")
    p.add_argument(
        "--fusion",
        default="trigger=detect,dir=bi,persist=on",
        help="trigger=detect|covisit,dir=bi|later,persist=on|off",
    )
    p.add_argument("--sharing", choices=["on", "off"], default="on")
    p.add_argument("--share-topology", choices=["all", "primary-only"], default="all")
    p.add_argument("--budget-factor", type=float, default=2.0)
    p.add_argument("--budget-extra", type=int, default=10)
    p.add_argument("--thresh", type=float, default=3.0, help="success radius in meters")
    p.add_argument("--alias-eps", type=float, default=0.5)
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--jobs", type=int, default=1, help="parallel groups")
    p.add_argument("--dump-memories", metavar="DIR", help="dump final memories per group")
    p.add_argument("--summary-out", help="write the aggregate summary here")


def _config_from_args(args, env, episodes) -> ExperimentConfig:
    return ExperimentConfig(
        env=env,
        episodes=episodes,
        n_agents=args.agents,
        pairing=args.strategy,
        matcher=MatcherConfig.parse(args.matcher),
        fusion=FusionPolicy.parse(args.fusion),
        sharing=args.sharing == "on",
        budget_factor=args.budget_factor,
        budget_extra=args.budget_extra,
        thresh=args.thresh,
        alias_eps=args.alias_eps,
        seed=args.seed,
        embed_dim=args.embed_dim,
        noise_sigma=args.noise_sigma,
        share_topology=args.share_topology,
        jobs=args.jobs,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covln",
        description="Deterministic multi-agent graph-navigation simulator "
        "with peer memory sharing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=["csv", "json"], default="csv")

    p = sub.add_parser("gen-env", parents=[common], help="generate a synthetic environment")
    p.add_argument("--kind", choices=["grid", "random-geometric"], required=True)
    p.add_argument("--size", default="5x5")
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--extent", default="10x10")

    p = sub.add_parser("gen-episodes", parents=[common], help="sample synthetic episodes")
    p.add_argument("--env", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--len-range", default="2..6")

    p = sub.add_parser("pair", parents=[common], help="pair episodes for concurrent runs")
    p.add_argument("--episodes", required=True)
    p.add_argument("--strategy", choices=["prior", "random"], default="prior")

    p = sub.add_parser("run", parents=[common], help="run one experiment configuration")
    _add_run_options(p)

    p = sub.add_parser("sweep", parents=[common], help="run a study over one dimension")
    _add_run_options(p)
    p.add_argument(
        "--sweep",
        required=True,
        metavar="KEY=SPEC",
        help="agents=LO..HI | pairing=prior,random | fusion=grid",
    )
    p.add_argument("--rows-out", help="also write all per-episode rows here")

    p = sub.add_parser("stats", parents=[common], help="aggregate a results CSV")
    p.add_argument("--results", required=True)
    p.add_argument("--per-scan", action="store_true", help="also aggregate per scan")

    return parser


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_gen_env(args) -> None:
    if args.kind == "grid":
        rows, cols = _parse_size(args.size)
        g = generate_synthetic("grid", rows=rows, cols=cols, spacing=args.spacing, seed=args.seed)
    else:
        g = generate_synthetic(
            "random-geometric",
            n=args.n,
            radius=args.radius,
            extent=_parse_extent(args.extent),
            seed=args.seed,
        )
    area, bucket = scene_area(g) if len(g) else (0.0, None)
    if args.out:
        save_env(g, args.out)
        print(
            f"wrote {g.scan_id}: {len(g)} nodes, {g.num_edges} edges, "
            f"{area:.1f} m^2 ({bucket.value if bucket else 'empty'}) -> {args.out}"
        )
    else:
        from .env import env_to_dict

        sys.stdout.write(json.dumps(env_to_dict(g), indent=2, sort_keys=True) + "\n")


def _cmd_gen_episodes(args) -> None:
    env = load_env(args.env)
    episodes = generate_episodes(env, args.count, _parse_len_range(args.len_range), args.seed)
    if args.out:
        save_episodes(episodes, args.out)
        print(f"wrote {len(episodes)} episodes -> {args.out}")
    else:
        from .pairing import episode_to_dict

        for ep in episodes:
            sys.stdout.write(json.dumps(episode_to_dict(ep), sort_keys=True) + "\n")


def _cmd_pair(args) -> None:
    episodes = load_episodes(args.episodes)
    pair_fn = pair_prior if args.strategy == "prior" else pair_random
    l1, l2 = pair_fn(episodes, args.seed)
    mean_overlap, self_pairs = pairing_stats(list(zip(l1, l2)))
    payload = {
        "strategy": args.strategy,
        "seed": args.seed,
        "pairs": [
            {"primary": a.episode_id, "peer": b.episode_id} for a, b in zip(l1, l2)
        ],
        "stats": {"mean_overlap": mean_overlap, "self_pairs": self_pairs},
    }
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    _emit(text, args.out)
    if args.out:
        print(
            f"paired {len(l1)} rows ({self_pairs} self-pairs, "
            f"mean overlap {mean_overlap:.2f}) -> {args.out}"
        )


def _cmd_run(args) -> None:
    env = _resolve_env(args)
    episodes = _resolve_episodes(args, env)
    cfg = _config_from_args(args, env, episodes)
    rows, summaries = run_experiment(cfg, dump_memories_dir=args.dump_memories)
    if args.format == "csv":
        _emit(rows_to_csv(rows), args.out)
    else:
        _emit(json.dumps(rows, indent=2, sort_keys=True) + "\n", args.out)
    if args.summary_out:
        write_rows(summaries, args.summary_out, args.format)
    if args.out:
        s = summaries[0]
        print(
            f"{s['episodes']} episodes: SR {s['sr']:.1f}% OSR {s['osr']:.1f}% "
            f"SPL {s['spl']:.1f}% NE {s['ne']:.2f}m -> {args.out}"
        )


def _cmd_sweep(args) -> None:
    env = _resolve_env(args)
    episodes = _resolve_episodes(args, env)
    cfg = _config_from_args(args, env, episodes)
    rows, summaries = run_sweep(cfg, args.sweep)
    columns = list(summaries[0].keys())
    if args.format == "csv":
        _emit(rows_to_csv(summaries, columns), args.out)
    else:
        _emit(json.dumps(summaries, indent=2, sort_keys=True) + "\n", args.out)
    if args.rows_out:
        write_rows(rows, args.rows_out, args.format)
    if args.out:
        print(f"{len(summaries)} configuration points -> {args.out}")


def _cmd_stats(args) -> None:
    import csv as _csv

    path = Path(args.results)
    if not path.exists():
        raise InputError(f"results file not found: {path}")
    with path.open() as fh:
        rows = list(_csv.DictReader(fh))
    if not rows:
        raise InputError(f"results file {path} has no rows")

    def to_result(row: dict) -> EpisodeResult:
        try:
            return EpisodeResult(
                episode_id=row["episode_id"],
                tl=float(row["tl"]),
                ne=float(row["ne"]),
                osr=row["osr"] == "1",
                sr=row["sr"] == "1",
                spl=float(row["spl"]),
                steps=int(row["steps"]),
                sharing_events=int(row["sharing_events"]),
            )
        except KeyError as exc:
            raise InputError(f"results file {path} is missing column {exc}") from None

    def summary_row(label: str, results) -> dict:
        agg = aggregate(results)
        return {
            "scope": label,
            "episodes": agg.count,
            "tl": agg.tl,
            "ne": agg.ne,
            "osr": agg.osr,
            "sr": agg.sr,
            "spl": agg.spl,
        }

    out_rows = [summary_row("overall", [to_result(r) for r in rows])]
    if args.per_scan:
        by_scan: dict[str, list] = {}
        for row in rows:
            by_scan.setdefault(row.get("scan_id", "?"), []).append(to_result(row))
        for scan in sorted(by_scan):
            out_rows.append(summary_row(scan, by_scan[scan]))
    columns = list(out_rows[0].keys())
    if args.format == "csv":
        _emit(rows_to_csv(out_rows, columns), args.out)
    else:
        _emit(json.dumps(out_rows, indent=2, sort_keys=True) + "\n", args.out)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen-env": _cmd_gen_env,
        "gen-episodes": _cmd_gen_episodes,
        "pair": _cmd_pair,
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "stats": _cmd_stats,
    }
    try:
        handlers[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

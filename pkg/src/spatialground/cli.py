"""``spatialground`` command line.

Exit codes: 0 success, 1 grounding or benchmark failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .agent import run_agent
from .chat import API_KEY_ENV, ChatClient, ResponseCache
from .config import DEFAULT_CACHE_DIR, RunConfig, load_config
from .errors import BenchmarkFormatError, ConfigError, GenerationError, GroundingError
from .evaluation.benchmark import AGENT, BenchmarkConfig, build_report, run_benchmark, write_report
from .evaluation.dataset import SceneStore, load_benchmark
from .evaluation.synth import synth_generate, write_suite
from .geometry import load_ply
from .resolver import FAILED, raw_ground, resolve

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

logger = logging.getLogger("spatialground")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run configuration; flags override its values")
    p.add_argument("--strategy", choices=["raw", "resolver", "agent"],
                   help="grounding strategy (default: resolver for ground, config strategies for bench)")
    p.add_argument("--out", help="output directory (default: runs/latest)")
    p.add_argument("--workers", type=int, help="parallel query workers (default: 1)")
    p.add_argument("--seed", type=int, help="seed recorded in outputs and used for synthetic suites (default: 0)")
    p.add_argument("--cache-dir", help=f"chat response cache (default: {DEFAULT_CACHE_DIR})")
    p.add_argument("--endpoint", help="chat-completions base URL; omit to replay from cache only")
    p.add_argument("--model", help="chat model name (default: gpt-4)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spatialground",
        description=f"Zero-shot 3D visual grounding. The API key is read from ${API_KEY_ENV}.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("ground", help="ground one query in one scene")
    g.add_argument("--scene", help="scene point cloud (.ply)")
    g.add_argument("--query", help="referring expression")
    _common(g)

    b = sub.add_parser("bench", help="run a benchmark and write report tables")
    _common(b)

    s = sub.add_parser("synth", help="generate a synthetic benchmark suite")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-n", "--n", type=int, default=200, dest="n", help="number of scenes")
    s.add_argument("-k", "--k", type=int, nargs="+", default=[3], dest="k",
                   help="distractors per scene; several values are cycled over scenes")
    s.add_argument("--relations", nargs="+", help="relations to sample (default: all generated ones)")
    s.add_argument("--out", required=True, help="output directory")

    c = sub.add_parser("cache", help="inspect or manage the chat response cache")
    c.add_argument("action", choices=["stats", "clear", "export", "import"])
    c.add_argument("bundle", nargs="?", help="bundle path for export/import")
    c.add_argument("--cache-dir", default=DEFAULT_CACHE_DIR)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    keys = ("scene", "query", "strategy", "out", "workers", "seed", "cache_dir", "endpoint", "model")
    return {k: getattr(args, k, None) for k in keys}


def _client(cfg: RunConfig) -> ChatClient:
    return ChatClient(cfg.chat.endpoint, cfg.chat.model, ResponseCache(cfg.chat.cache_dir),
                      min_interval=cfg.chat.min_interval, timeout=cfg.budget.timeout,
                      temperature=cfg.budget.temperature)


def cmd_ground(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, _overrides(args))
    if not cfg.scene or not cfg.query:
        raise ConfigError("ground needs --scene and --query")
    if not Path(cfg.scene).exists():
        raise ConfigError(f"scene file not found: {cfg.scene}")
    strategy = args.strategy or "resolver"
    try:
        scene = load_ply(cfg.scene)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load scene {cfg.scene}: {exc}") from None
    backend = cfg.make_backend()

    record: dict = {"query": cfg.query, "scene": cfg.scene, "strategy": strategy,
                    "config_digest": cfg.digest, "seed": cfg.seed}
    if strategy == AGENT:
        res, tr = run_agent(cfg.query, scene, _client(cfg), cfg.grounder, cfg.budget, backend, cfg.volume_filter)
        record["transcript"] = tr.to_dict()
    elif strategy == "raw":
        res = raw_ground(cfg.query, scene, cfg.grounder, backend)
    else:
        res = resolve(cfg.query, scene, cfg.grounder, cfg.volume_filter, backend)
    record["outcome"] = res.outcome
    record["reason"] = res.reason
    record["box"] = res.box.to_dict() if res.box is not None else None
    if res.parsed is not None:
        record["parsed"] = res.parsed.to_dict()

    out = Path(cfg.out) / "transcripts"
    out.mkdir(parents=True, exist_ok=True)
    name = hashlib.sha256(f"{cfg.scene}\n{cfg.query}\n{strategy}".encode()).hexdigest()[:16]
    path = out / f"{name}.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")

    print(f"outcome: {res.outcome}")
    if res.box is not None:
        c, e = res.box.centroid, res.box.extents
        print(f"centroid: {c[0]:.3f} {c[1]:.3f} {c[2]:.3f}")
        print(f"extents: {e[0]:.3f} {e[1]:.3f} {e[2]:.3f}")
    if res.reason:
        print(f"reason: {res.reason}")
    print(f"transcript: {path}")
    return EXIT_FAILURE if res.outcome == FAILED else EXIT_OK


def _format_summary(rows) -> str:
    lines = [f"{'strategy':<10} {'acc@0.25':>9} {'acc@0.5':>9} {'n':>6}"]
    for r in rows:
        lines.append(f"{r.strategy:<10} {r.acc25:>9.4f} {r.acc50:>9.4f} {r.n:>6}")
    return "\n".join(lines)


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, _overrides(args))
    cfg.validate_bench()
    if cfg.synth is not None:
        suite = synth_generate(cfg.seed, cfg.synth.n, cfg.synth.k, cfg.synth.relations)
        queries, gt, scenes = suite.queries, suite.ground_truth, SceneStore(scenes=suite.clouds)
    else:
        bench = load_benchmark(cfg.annotations, cfg.ground_truth)
        for rej in bench.rejected:
            logger.warning("rejected %s: %s", rej.locus, rej.reason)
        queries, gt, scenes = bench.queries, bench.ground_truth, SceneStore(cfg.scenes)
        missing = sorted({q.scene_id for q in queries} - set(scenes))
        if missing:
            raise ConfigError(f"scenes: no point cloud for {', '.join(missing[:5])}")
    if not queries:
        raise ConfigError("no queries to evaluate")

    out = Path(cfg.out)
    client = _client(cfg) if AGENT in cfg.strategies else None
    bcfg = BenchmarkConfig(cfg.grounder, cfg.volume_filter, cfg.budget, cfg.make_backend(), client,
                           cfg.workers, out / "transcripts")
    runs = []
    for strategy in cfg.strategies:
        run = run_benchmark(queries, scenes, gt, strategy, bcfg)
        runs.append(run)
        if run.interrupted:
            break
    report = build_report(runs, gt)
    meta = {"config_digest": cfg.digest, "seed": cfg.seed}
    if any(r.interrupted for r in runs):
        meta["partial"] = True
    write_report(report, out, meta)
    print(f"# config_digest={cfg.digest} seed={cfg.seed}")
    print(_format_summary(report.overall))
    print(f"reports: {out}")
    if any(r.interrupted for r in runs):
        print("interrupted: partial report written", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    if args.n < 0 or any(k < 0 for k in args.k):
        raise ConfigError("--n and --k must be non-negative")
    try:
        suite = synth_generate(args.seed, args.n, args.k if len(args.k) > 1 else args.k[0], args.relations)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    digest = hashlib.sha256(json.dumps({"seed": args.seed, "n": args.n, "k": args.k,
                                        "relations": args.relations}, sort_keys=True).encode()).hexdigest()[:12]
    paths = write_suite(suite, args.out, {"config_digest": digest})
    print(f"wrote {len(suite.scenes)} scenes, {len(suite.queries)} queries to {args.out} ({len(paths)} files)")
    return EXIT_OK


def cmd_cache(args: argparse.Namespace) -> int:
    cache = ResponseCache(args.cache_dir)
    if args.action == "stats":
        s = cache.stats()
        print(f"entries: {s['entries']}\nhits: {s['hits']}\nmisses: {s['misses']}")
    elif args.action == "clear":
        print(f"removed {cache.clear()} entries")
    else:
        if not args.bundle:
            raise ConfigError(f"cache {args.action} needs a bundle path")
        if args.action == "export":
            print(f"exported {cache.export(args.bundle)} entries to {args.bundle}")
        else:
            if not Path(args.bundle).exists():
                raise ConfigError(f"bundle not found: {args.bundle}")
            print(f"imported {cache.import_bundle(args.bundle)} entries")
    return EXIT_OK


COMMANDS = {"ground": cmd_ground, "bench": cmd_bench, "synth": cmd_synth, "cache": cmd_cache}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, BenchmarkFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GenerationError, GroundingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

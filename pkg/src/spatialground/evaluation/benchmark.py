"""Run a grounding strategy over a query set and build report tables.

Three tables come out of a set of runs: overall accuracy per strategy,
the visual-difficulty split (two rows per strategy), and noun-count
complexity buckets. Non-baseline strategies carry delta columns against
the raw bag-of-words baseline when it was run too.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from ..agent import Budget, run_agent
from ..chat import ChatClient
from ..errors import ConfigError
from ..geometry import PointCloud
from ..grounder import GrounderParams, RelevanceBackend
from ..query import count_nouns
from ..resolver import raw_ground, resolve
from ..spatial import VolumeFilterConfig
from .dataset import BenchmarkQuery, GroundTruth
from .metrics import HIGH, LOW, QueryResult, ReportRow, difficulty_split, summarize

logger = logging.getLogger(__name__)

RAW = "raw"
RESOLVER = "resolver"
AGENT = "agent"
STRATEGIES = (RAW, RESOLVER, AGENT)
_ALIASES = {"raw-grounder": RAW, "raw_grounder": RAW, "baseline": RAW}


def canonical_strategy(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in STRATEGIES:
        raise ConfigError(f"unknown strategy {name!r}; expected one of {', '.join(STRATEGIES)}")
    return name


@dataclass
class BenchmarkConfig:
    params: GrounderParams = field(default_factory=GrounderParams)
    volume: VolumeFilterConfig = field(default_factory=VolumeFilterConfig)
    budget: Budget = field(default_factory=Budget)
    backend: RelevanceBackend | None = None
    client: ChatClient | None = None
    workers: int = 1
    transcript_dir: Path | None = None

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")


@dataclass
class BenchmarkRun:
    strategy: str
    results: list[QueryResult]
    interrupted: bool = False


def _safe_name(key: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", key).strip("_") or "query"


def _evaluate(q: BenchmarkQuery, scenes: Mapping[str, PointCloud], gt: GroundTruth, strategy: str,
              cfg: BenchmarkConfig) -> QueryResult:
    gt_box = gt[q.scene_id][q.object_id].box
    try:
        scene = scenes[q.scene_id]
        transcript = None
        if strategy == RAW:
            res = raw_ground(q.description, scene, cfg.params, cfg.backend)
        elif strategy == RESOLVER:
            res = resolve(q.description, scene, cfg.params, cfg.volume, cfg.backend)
        else:
            res, tr = run_agent(q.description, scene, cfg.client, cfg.params, cfg.budget, cfg.backend, cfg.volume)
            if cfg.transcript_dir is not None:
                transcript = str(tr.save(cfg.transcript_dir, _safe_name(q.key)))
        return QueryResult.scored(q, res.box, gt_box, strategy, transcript=transcript,
                                  error="" if res.ok else res.reason)
    except Exception as exc:  # a single bad query must not sink the run
        logger.warning("query %s failed under %s: %s", q.key, strategy, exc)
        return QueryResult(q, None, 0.0, strategy, error=f"{type(exc).__name__}: {exc}")


def run_benchmark(
    queries: Sequence[BenchmarkQuery],
    scenes: Mapping[str, PointCloud],
    ground_truth: GroundTruth,
    strategy: str,
    config: BenchmarkConfig | None = None,
) -> BenchmarkRun:
    """Evaluate every query with ``strategy``.

    Per-query failures score IoU 0. Configuration problems raise
    :class:`ConfigError` before any query runs. On interrupt, queries not yet
    evaluated are recorded as failed so the result count still matches.
    """
    cfg = config or BenchmarkConfig()
    strategy = canonical_strategy(strategy)
    if strategy == AGENT and cfg.client is None:
        raise ConfigError("agent strategy needs a chat client (endpoint or cache)")
    for q in queries:
        if q.scene_id not in ground_truth or q.object_id not in ground_truth[q.scene_id]:
            raise ConfigError(f"query {q.key} has no ground-truth box")
    transcript_dir = cfg.transcript_dir / strategy if cfg.transcript_dir is not None else None
    cfg = BenchmarkConfig(cfg.params, cfg.volume, cfg.budget, cfg.backend, cfg.client, cfg.workers, transcript_dir)

    results: list[QueryResult | None] = [None] * len(queries)
    interrupted = False
    if cfg.workers == 1:
        try:
            for i, q in enumerate(queries):
                results[i] = _evaluate(q, scenes, ground_truth, strategy, cfg)
        except KeyboardInterrupt:
            interrupted = True
    else:
        pool = ThreadPoolExecutor(max_workers=cfg.workers)
        futures = [pool.submit(_evaluate, q, scenes, ground_truth, strategy, cfg) for q in queries]
        try:
            for i, fut in enumerate(futures):
                results[i] = fut.result()
        except KeyboardInterrupt:
            interrupted = True
            pool.shutdown(wait=True, cancel_futures=True)
            for i, fut in enumerate(futures):
                if results[i] is None and fut.done() and not fut.cancelled():
                    results[i] = fut.result()
        finally:
            pool.shutdown(wait=True)

    if interrupted:
        logger.warning("benchmark interrupted; unfinished queries scored as failures")
    final = [r if r is not None else QueryResult(q, None, 0.0, strategy, error="interrupted")
             for q, r in zip(queries, results)]
    return BenchmarkRun(strategy, final, interrupted)


@dataclass
class Report:
    overall: list[ReportRow]
    difficulty: list[ReportRow]
    complexity: list[ReportRow]

    def to_dict(self) -> dict:
        return {"overall": [r.to_dict() for r in self.overall],
                "difficulty": [r.to_dict() for r in self.difficulty],
                "complexity": [r.to_dict() for r in self.complexity]}


def _with_delta(row: ReportRow, base: ReportRow | None) -> ReportRow:
    if base is None or base.n == 0 or row.n == 0:
        return row
    return ReportRow(row.strategy, row.split, row.acc25, row.acc50, row.n,
                     row.acc25 - base.acc25, row.acc50 - base.acc50)


def build_report(runs: Sequence[BenchmarkRun], ground_truth: GroundTruth, baseline: str = RAW) -> Report:
    """Overall, difficulty-split and complexity-bucket rows for ``runs``."""
    if not runs:
        return Report([], [], [])
    queries = [r.query for r in runs[0].results]
    levels = difficulty_split(queries, ground_truth)
    nouns = {q.key: count_nouns(q.description) for q in queries}
    buckets = sorted(set(nouns.values()))

    def rows_for(run: BenchmarkRun):
        overall = summarize(run.strategy, "overall", run.results)
        diff = [summarize(run.strategy, lvl, [r for r in run.results if levels[r.query.key] == lvl])
                for lvl in (LOW, HIGH)]
        comp = [summarize(run.strategy, f"nouns={b}", [r for r in run.results if nouns[r.query.key] == b])
                for b in buckets]
        return overall, diff, comp

    base = next((run for run in runs if run.strategy == baseline), None)
    base_rows = rows_for(base) if base is not None else None
    report = Report([], [], [])
    for run in runs:
        overall, diff, comp = rows_for(run)
        if base_rows is not None and run.strategy != baseline:
            overall = _with_delta(overall, base_rows[0])
            diff = [_with_delta(r, b) for r, b in zip(diff, base_rows[1])]
            comp = [_with_delta(r, b) for r, b in zip(comp, base_rows[2])]
        report.overall.append(overall)
        report.difficulty.extend(diff)
        report.complexity.extend(comp)
    return report


_COLUMNS = ("strategy", "split", "acc@0.25", "acc@0.5", "n", "delta@0.25", "delta@0.5")


def rows_to_csv(rows: Sequence[ReportRow], header: str = "") -> str:
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_COLUMNS)
    for r in rows:
        d = r.to_dict()
        w.writerow(["" if d[c] is None else (f"{d[c]:.4f}" if isinstance(d[c], float) else d[c]) for c in _COLUMNS])
    return buf.getvalue()


def write_report(report: Report, out_dir: str | Path, meta: Mapping[str, object] | None = None) -> list[Path]:
    """Write one CSV per table plus ``summary.json``; ``meta`` goes into every header."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = dict(meta or {})
    header = " ".join(f"{k}={v}" for k, v in meta.items())
    paths = []
    for name, rows in (("overall", report.overall), ("difficulty", report.difficulty),
                       ("complexity", report.complexity)):
        p = out / f"{name}.csv"
        p.write_text(rows_to_csv(rows, header))
        paths.append(p)
    p = out / "summary.json"
    p.write_text(json.dumps({"meta": meta, **report.to_dict()}, indent=2, sort_keys=True) + "\n")
    paths.append(p)
    return paths

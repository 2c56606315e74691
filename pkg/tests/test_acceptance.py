"""Acceptance criteria, one test each.

Every test prints a single ``criterion N: PASS|FAIL`` line before asserting,
and the lines are repeated together in the terminal summary. Run just this
file with ``pytest tests/test_acceptance.py -v``.
"""

from __future__ import annotations

import socket
import time

import numpy as np
import pytest

from spatialground.chat import ChatClient, ResponseCache, ScriptedTransport
from spatialground.evaluation import (
    BenchmarkQuery,
    LOW,
    HIGH,
    accuracy_at,
    build_report,
    complexity_buckets,
    run_benchmark,
    synth_generate,
)
from spatialground.agent import run_agent
from spatialground.geometry import Aabb, aabb_iou
from spatialground.grounder import dbscan
from spatialground.query import parse_query_rules
from spatialground.resolver import resolve

from .agent_scenarios import QUERY, SCENARIOS
from .oracles import brute_dbscan, canonical_partition, voxel_iou
from .stub_server import StubChatServer

SEED = 2024
RESULTS: dict[int, str] = {}


def report(capsys, n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    with capsys.disabled():
        print(f"\n{line}")


class _NoNetwork:
    """Refuse outbound connections for the duration of a block."""

    def __enter__(self):
        self._orig = socket.socket.connect

        def refuse(sock, addr):
            raise OSError(f"network disabled in acceptance run: {addr}")

        socket.socket.connect = refuse
        return self

    def __exit__(self, *exc):
        socket.socket.connect = self._orig


def test_1_geometry_oracle(capsys):
    rng = np.random.default_rng(SEED)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        boxes = []
        for _ in range(2):
            lo = rng.integers(-100, 100, 3)
            hi = lo + rng.integers(1, 120, 3)
            boxes.append(Aabb.from_corners(lo / 100.0, hi / 100.0))
        a, b = boxes
        got = aabb_iou(a, b)
        want = voxel_iou(a.centroid, a.extents, b.centroid, b.extents)
        worst = max(worst, abs(got - want))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-3 and elapsed < 30
    report(capsys, 1, ok, f"1000 pairs, max |diff| = {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_2_dbscan_oracle(capsys):
    rng = np.random.default_rng(SEED)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(50):
        n = int(rng.integers(10, 501))
        k = int(rng.integers(1, 6))
        centres = rng.uniform(0, 5, (k, 3))
        pts = centres[rng.integers(0, k, n)] + rng.normal(0, 0.3, (n, 3))
        eps, min_pts = float(rng.uniform(0.15, 0.5)), int(rng.integers(2, 8))
        if canonical_partition(dbscan(pts, eps, min_pts)) != canonical_partition(brute_dbscan(pts, eps, min_pts)):
            mismatches += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 30
    report(capsys, 2, ok, f"50 point sets, {mismatches} mismatches, {elapsed:.1f}s")
    assert ok


def test_3_parser_fixture(capsys, parser_cases):
    mismatches = []
    for case in parser_cases:
        p = parse_query_rules(case["text"])
        got = (p.target, list(p.attributes), [[lm.phrase, lm.relation.value] for lm in p.landmarks])
        if got != (case["target"], case["attributes"], case["landmarks"]):
            mismatches.append(case["text"])
    texts = {c["text"] for c in parser_cases}
    anchors = {"a chair between the dining table and window", "a red apple", "the sink in the kitchen"}
    ok = not mismatches and len(parser_cases) == 30 and anchors <= texts
    report(capsys, 3, ok, f"{len(parser_cases)} cases, {len(mismatches)} mismatches {mismatches[:3]}")
    assert ok


@pytest.fixture(scope="module")
def k3_runs():
    start = time.perf_counter()
    with _NoNetwork():
        suite = synth_generate(SEED, 200, 3)
        runs = [run_benchmark(suite.queries, suite.clouds, suite.ground_truth, s) for s in ("raw", "resolver")]
    return suite, runs, time.perf_counter() - start


@pytest.fixture(scope="module")
def mixed_runs():
    suite = synth_generate(SEED + 1, 200, [0, 3])
    runs = [run_benchmark(suite.queries, suite.clouds, suite.ground_truth, s) for s in ("raw", "resolver")]
    return suite, runs


def test_4_bag_of_words_correction(capsys, k3_runs):
    suite, (raw, res), elapsed = k3_runs
    relations = {s.relation for s in suite.scenes}
    acc_res, acc_raw = accuracy_at(res.results, 0.25), accuracy_at(raw.results, 0.25)
    ok = (acc_res >= 0.95 and acc_raw <= 0.40 and elapsed < 120 and len(relations) > 1
          and all(s.k == 3 for s in suite.scenes))
    report(capsys, 4, ok, f"resolver {acc_res:.3f} (>= 0.95), raw {acc_raw:.3f} (<= 0.40), "
                          f"{len(relations)} relations, offline, {elapsed:.1f}s")
    assert ok


def test_5_difficulty_split(capsys, mixed_runs):
    suite, runs = mixed_runs
    rep = build_report(runs, suite.ground_truth)
    shape = [(r.strategy, r.split) for r in rep.difficulty]
    deltas = {r.split: r.delta25 for r in rep.difficulty if r.strategy == "resolver"}
    ok = (shape == [("raw", LOW), ("raw", HIGH), ("resolver", LOW), ("resolver", HIGH)]
          and all(d is not None and d > 0 for d in deltas.values()))
    report(capsys, 5, ok, f"delta@0.25 LOW {deltas[LOW]:+.3f}, HIGH {deltas[HIGH]:+.3f}, rows {len(shape)}")
    assert ok


def test_6_complexity_buckets(capsys, parser_cases, k3_runs):
    qs = [BenchmarkQuery("s", str(i), c["target"], c["text"]) for i, c in enumerate(parser_cases)]
    buckets = complexity_buckets(qs)
    labelled = all(c["nouns"] == n for n, group in buckets.items() for c in (parser_cases[int(q.object_id)]
                                                                           for q in group))
    partition = sum(len(g) for g in buckets.values()) == len(qs)

    suite, runs, _ = k3_runs
    rep = build_report(runs, suite.ground_truth)
    res_rows = [r for r in rep.complexity if r.strategy == "resolver"]
    has_cols = bool(res_rows) and all(r.delta25 is not None and r.delta50 is not None for r in res_rows)
    big = [r for r in res_rows if r.n >= 20]
    nonneg = bool(big) and all(r.delta25 >= 0 for r in big)
    ok = labelled and partition and has_cols and nonneg
    detail = ", ".join(f"{r.split} n={r.n} delta={r.delta25:+.3f}" for r in res_rows)
    report(capsys, 6, ok, f"fixture buckets {sorted((k, len(v)) for k, v in buckets.items())}; {detail}")
    assert ok


def test_7_metric_correctness(capsys, k3_runs, mixed_runs):
    fixture = [0.3, 0.6, 0.1, 0.26]
    exact = accuracy_at(fixture, 0.25) == 0.75 and accuracy_at(fixture, 0.5) == 0.25
    rows = []
    for suite, runs in ((k3_runs[0], k3_runs[1]), mixed_runs):
        rep = build_report(runs, suite.ground_truth)
        rows += [r for r in rep.overall + rep.difficulty + rep.complexity if r.n]
    monotone = all(r.acc50 <= r.acc25 for r in rows)
    ok = exact and monotone
    report(capsys, 7, ok, f"fixture 0.75/0.25 {'exact' if exact else 'WRONG'}; "
                          f"Acc@0.5 <= Acc@0.25 on {len(rows)} rows")
    assert ok


def test_8_agent_replay(capsys, room_scene, tmp_path):
    scene, _ = room_scene
    identical, fallbacks = [], []
    with _NoNetwork():
        for s in SCENARIOS:
            cache = ResponseCache(tmp_path / s.name)
            run_agent(QUERY, scene, ChatClient(model="scripted", cache=cache,
                                               transport=ScriptedTransport(s.replies)), budget=s.budget)
            outs = [run_agent(QUERY, scene, ChatClient(model="scripted", cache=cache), budget=s.budget)
                    for _ in range(2)]
            (r1, t1), (r2, t2) = outs
            identical.append(t1.to_json() == t2.to_json() and r1.box == r2.box and r1.outcome == s.outcome)
            if "budget" in s.name:
                fallbacks.append(r1.outcome == "fallback" and r1.box == resolve(QUERY, scene).box)
    ok = len(identical) == 5 and all(identical) and len(fallbacks) >= 1 and all(fallbacks)
    report(capsys, 8, ok, f"{sum(identical)}/5 byte-identical replays, "
                          f"{sum(fallbacks)}/{len(fallbacks)} budget fallbacks equal the resolver")
    assert ok


def test_9_cache_contract(capsys, tmp_path):
    msgs = [{"role": "user", "content": "hello"}]
    with StubChatServer() as stub:
        client = ChatClient(stub.url, "m", tmp_path / "cache")
        a, b = client.chat(msgs), client.chat(msgs)
    ok = len(stub.calls) == 1 and a == b
    report(capsys, 9, ok, f"2 identical requests, {len(stub.calls)} upstream call(s)")
    assert ok

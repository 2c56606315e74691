from __future__ import annotations

import json

import numpy as np
import pytest

from spatialground.errors import BenchmarkFormatError, ConfigError, EmptyEvaluation, GenerationError
from spatialground.evaluation import (
    HIGH,
    LOW,
    BenchmarkConfig,
    BenchmarkQuery,
    BenchmarkRun,
    GroundTruthObject,
    QueryResult,
    SceneStore,
    accuracy_at,
    build_report,
    complexity_buckets,
    difficulty_split,
    load_annotations,
    load_benchmark,
    load_ground_truth,
    run_benchmark,
    save_ground_truth,
    summarize,
    synth_generate,
    write_report,
    write_suite,
)
from spatialground.evaluation import synth as synth_mod
from spatialground.geometry import Aabb, aabb_iou
from spatialground.grounder import find_candidates
from spatialground.query import SpatialRelation
from spatialground.resolver import raw_ground, resolve
from spatialground.spatial import relation_scores

from .oracles import exhaustive_select


def _box(x=0.0, y=0.0):
    return Aabb((x, y, 0.5), (1.0, 1.0, 1.0))


def _gt_json(tmp_path, scenes):
    data = {sid: {oid: {"object_name": name, "centroid": [float(i), 0.0, 0.5], "extents": [1.0, 1.0, 1.0]}
                  for i, (oid, name) in enumerate(objs.items())}
            for sid, objs in scenes.items()}
    p = tmp_path / "gt.json"
    p.write_text(json.dumps(data))
    return p


def _records(n=3):
    return [{"scene_id": "s0", "object_id": str(i), "object_name": "chair",
             "description": f"the chair number {i}", "ann_id": "0"} for i in range(n)]


# --- loading -----------------------------------------------------------------

def test_three_valid_records_load(tmp_path):
    ann = tmp_path / "ann.json"
    ann.write_text(json.dumps(_records()))
    gt = _gt_json(tmp_path, {"s0": {"0": "chair", "1": "chair", "2": "chair"}})
    bench = load_benchmark(ann, gt)
    assert len(bench.queries) == 3
    assert bench.rejected == []
    assert bench.gt_box(bench.queries[1]).centroid == (1.0, 0.0, 0.5)


def test_unknown_object_is_rejected_with_diagnostic(tmp_path):
    recs = _records()
    recs[2]["object_id"] = "99"
    ann = tmp_path / "ann.json"
    ann.write_text(json.dumps(recs))
    gt = _gt_json(tmp_path, {"s0": {"0": "chair", "1": "chair"}})
    bench = load_benchmark(ann, gt)
    assert len(bench.queries) == 2
    assert len(bench.rejected) == 1
    assert bench.rejected[0].locus == "record 2"
    assert "99" in bench.rejected[0].reason


def test_jsonl_annotations(tmp_path):
    p = tmp_path / "ann.jsonl"
    p.write_text("\n".join(json.dumps(r) for r in _records(4)) + "\n\n")
    assert len(load_annotations(p)) == 4


@pytest.mark.parametrize("mutate, locus", [
    (lambda recs: recs[1].pop("description"), "record 1"),
    (lambda recs: recs.__setitem__(2, "not a record"), "record 2"),
    (lambda recs: recs[0].__setitem__("description", "   "), "record 0"),
])
def test_malformed_record_names_locus(tmp_path, mutate, locus):
    recs = _records()
    mutate(recs)
    p = tmp_path / "ann.json"
    p.write_text(json.dumps(recs))
    with pytest.raises(BenchmarkFormatError) as info:
        load_annotations(p)
    assert info.value.locus == locus


def test_bad_jsonl_line_names_line(tmp_path):
    p = tmp_path / "ann.jsonl"
    p.write_text(json.dumps(_records(1)[0]) + "\n{broken\n")
    with pytest.raises(BenchmarkFormatError) as info:
        load_annotations(p)
    assert info.value.locus == "line 2"


def test_record_count_matches_file(fixtures):
    raw = json.loads((fixtures / "bench10" / "annotations.json").read_text())
    assert len(load_annotations(fixtures / "bench10" / "annotations.json")) == len(raw)


def test_ground_truth_meta_round_trip(tmp_path):
    gt = {"s0": {"0": GroundTruthObject("chair", _box())}}
    p = tmp_path / "gt.json"
    save_ground_truth(gt, p, {"seed": 3})
    assert json.loads(p.read_text())["_meta"] == {"seed": 3}
    assert load_ground_truth(p) == gt


# --- metrics -----------------------------------------------------------------

def test_accuracy_four_value_fixture():
    ious = [0.3, 0.6, 0.1, 0.26]
    assert accuracy_at(ious, 0.25) == 0.75
    assert accuracy_at(ious, 0.5) == 0.25


def test_accuracy_all_none_predictions():
    q = BenchmarkQuery("s", "0", "chair", "the chair")
    results = [QueryResult.scored(q, None, _box(), "raw") for _ in range(5)]
    assert accuracy_at(results, 0.25) == 0.0


def test_accuracy_matches_counting_oracle():
    rng = np.random.default_rng(11)
    ious = rng.random(1000)
    ordered = np.sort(ious)
    for t in (0.1, 0.25, 0.5, 0.75):
        # count of values >= t, via the sorted array
        oracle = (len(ordered) - np.searchsorted(ordered, t, side="left")) / len(ordered)
        assert accuracy_at(list(ious), t) == oracle


def test_accuracy_empty_and_bad_threshold():
    with pytest.raises(EmptyEvaluation):
        accuracy_at([], 0.25)
    with pytest.raises(ValueError):
        accuracy_at([0.5], 1.0)


def test_sink_query_is_low():
    gt = {"k": {"0": GroundTruthObject("sink", _box()), "1": GroundTruthObject("cabinet", _box(2))}}
    q = BenchmarkQuery("k", "0", "sink", "the sink in the kitchen")
    assert difficulty_split([q], gt) == {q.key: LOW}


def test_three_chairs_is_high():
    gt = {"r": {str(i): GroundTruthObject("chair", _box(i)) for i in range(3)}}
    q = BenchmarkQuery("r", "1", "chair", "the chair by the wall")
    assert difficulty_split([q], gt) == {q.key: HIGH}


def test_difficulty_proportions_reproduce():
    # 232 single-instance targets, 766 targets sharing a class with 1 or more others
    gt, queries = {}, []
    for i in range(232):
        sid = f"low{i}"
        gt[sid] = {"0": GroundTruthObject("sink", _box()), "1": GroundTruthObject("table", _box(2))}
        queries.append(BenchmarkQuery(sid, "0", "sink", "the sink"))
    for i in range(766):
        sid = f"high{i}"
        n = 2 + i % 4
        gt[sid] = {str(j): GroundTruthObject("chair", _box(j)) for j in range(n)}
        queries.append(BenchmarkQuery(sid, "0", "chair", "the chair"))
    labels = difficulty_split(queries, gt)
    assert len(labels) == 998
    assert sum(v == LOW for v in labels.values()) == 232
    assert sum(v == HIGH for v in labels.values()) == 766


def test_complexity_buckets_example():
    texts = ["the chair", "the chair near the table", "a lamp on the desk", "the box between the bed and the door"]
    qs = [BenchmarkQuery("s", str(i), "x", t) for i, t in enumerate(texts)]
    assert complexity_buckets(qs) == {1: [qs[0]], 2: [qs[1], qs[2]], 3: [qs[3]]}
    assert complexity_buckets([]) == {}


def test_complexity_buckets_match_hand_labels(parser_cases):
    qs = [BenchmarkQuery("s", str(i), c["target"], c["text"]) for i, c in enumerate(parser_cases)]
    buckets = complexity_buckets(qs)
    expected: dict[int, int] = {}
    for c in parser_cases:
        expected[c["nouns"]] = expected.get(c["nouns"], 0) + 1
    assert {k: len(v) for k, v in buckets.items()} == expected
    assert sum(len(v) for v in buckets.values()) == len(qs)


# --- synthetic generator -----------------------------------------------------

def test_synth_is_deterministic():
    a, b = synth_generate(5, 6, 3), synth_generate(5, 6, 3)
    for sa, sb in zip(a.scenes, b.scenes):
        assert sa.query == sb.query
        assert np.array_equal(sa.cloud.points, sb.cloud.points)
        assert [o.box for o in sa.objects] == [o.box for o in sb.objects]


def test_synth_write_is_byte_identical(tmp_path):
    suite = synth_generate(2, 3, [0, 3])
    write_suite(suite, tmp_path / "a")
    write_suite(synth_generate(2, 3, [0, 3]), tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 3 + 3
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seed7_k0_sole_object_found():
    suite = synth_generate(7, 5, 0)
    for scene in suite.scenes:
        target = scene.objects[0].box
        assert sum(o.role == "target" for o in scene.objects) == 1
        assert all(o.role != "distractor" for o in scene.objects)
        res = resolve(scene.query.description, scene.cloud)
        assert res.ok and aabb_iou(res.box, target) >= 0.5
        # the raw grounder keeps the sole target among its candidates; its
        # largest-cluster pick is a landmark (see the raw-baseline note in the README)
        raw = find_candidates(scene.cloud, scene.query.description)
        assert any(aabb_iou(c.box, target) >= 0.5 for c in raw)
        assert raw_ground(scene.query.description, scene.cloud).ok


def test_seed7_between_has_exactly_one_satisfier():
    suite = synth_generate(7, 5, 3, ["between"])
    for scene in suite.scenes:
        assert scene.relation is SpatialRelation.BETWEEN
        cands = [o for o in scene.objects if o.role != "landmark"]
        landmarks = [o.box for o in scene.objects if o.role == "landmark"]
        assert len(cands) == 4
        assert synth_mod.margin_ok(SpatialRelation.BETWEEN, cands[0].box, [c.box for c in cands[1:]], landmarks)
        # exhaustive oracle over the ground-truth boxes picks the target
        pick = exhaustive_select([(c.box.centroid, 1.0) for c in cands], "between",
                                 [b.centroid for b in landmarks])
        assert pick == 0
        scores = relation_scores(synth_mod._as_candidates([c.box for c in cands]), SpatialRelation.BETWEEN,
                                 landmarks)
        assert not scores[0].violated
        assert all(s.violated or s.score >= 1.2 * scores[0].score for s in scores[1:])


def test_synth_objects_have_enough_points():
    suite = synth_generate(3, 10, 3)
    for scene in suite.scenes:
        for o in scene.objects:
            inside = np.all(np.abs(scene.cloud.points - np.array(o.box.centroid)) <= np.array(o.box.extents) / 2
                            + 1e-9, axis=1)
            assert inside.sum() >= 30


def test_synth_contract_errors(monkeypatch):
    with pytest.raises(ValueError):
        synth_generate(0, 1, -1)
    monkeypatch.setattr(synth_mod, "MAX_RETRIES", 0)
    with pytest.raises(GenerationError, match="seed 42"):
        synth_generate(42, 1, 3)


# --- running benchmarks ------------------------------------------------------

@pytest.fixture(scope="module")
def small_suite():
    return synth_generate(1, 24, [0, 3])


def test_failures_score_zero_and_count_matches(small_suite):
    queries = list(small_suite.queries)
    queries.append(BenchmarkQuery(queries[0].scene_id, "0", "chair", "the piano"))
    scenes = dict(small_suite.clouds)
    broken = BenchmarkQuery("ghost", "0", "chair", "the chair near the bed")
    queries.append(broken)
    gt = dict(small_suite.ground_truth)
    gt["ghost"] = {"0": GroundTruthObject("chair", _box())}
    run = run_benchmark(queries, SceneStore(scenes=scenes), gt, "resolver")
    assert len(run.results) == len(queries)
    assert run.results[-1].iou == 0.0 and "KeyError" in run.results[-1].error
    assert run.results[-2].iou == 0.0 and run.results[-2].error


def test_config_errors_abort_before_running(small_suite, monkeypatch):
    calls = []
    monkeypatch.setattr("spatialground.evaluation.benchmark.resolve", lambda *a, **k: calls.append(1))
    q = small_suite.queries
    with pytest.raises(ConfigError):
        run_benchmark(q, small_suite.clouds, small_suite.ground_truth, "magic")
    with pytest.raises(ConfigError):
        run_benchmark(q, small_suite.clouds, small_suite.ground_truth, "agent")
    with pytest.raises(ConfigError):
        run_benchmark(q + [BenchmarkQuery("nowhere", "0", "chair", "the chair")], small_suite.clouds,
                      small_suite.ground_truth, "resolver")
    with pytest.raises(ConfigError):
        BenchmarkConfig(workers=0)
    assert calls == []


def test_workers_do_not_change_results(small_suite):
    a = run_benchmark(small_suite.queries, small_suite.clouds, small_suite.ground_truth, "resolver")
    b = run_benchmark(small_suite.queries, small_suite.clouds, small_suite.ground_truth, "resolver",
                      BenchmarkConfig(workers=4))
    assert [r.iou for r in a.results] == [r.iou for r in b.results]


def test_report_deltas_recompute_from_results(small_suite, tmp_path):
    gt = small_suite.ground_truth
    runs = [run_benchmark(small_suite.queries, small_suite.clouds, gt, s) for s in ("raw", "resolver")]
    report = build_report(runs, gt)
    assert [(r.strategy, r.split) for r in report.difficulty] == [
        ("raw", LOW), ("raw", HIGH), ("resolver", LOW), ("resolver", HIGH)]
    labels = difficulty_split(small_suite.queries, gt)
    raw, res = runs
    for row in report.difficulty[2:]:
        pick = lambda run: [r for r in run.results if labels[r.query.key] == row.split]
        assert row.delta25 == pytest.approx(accuracy_at(pick(res), 0.25) - accuracy_at(pick(raw), 0.25))
        assert row.delta50 == pytest.approx(accuracy_at(pick(res), 0.5) - accuracy_at(pick(raw), 0.5))
    for row in report.overall + report.difficulty + report.complexity:
        assert row.acc50 <= row.acc25
    assert all(r.delta25 is None for r in report.complexity if r.strategy == "raw")
    assert all(r.delta25 is not None for r in report.complexity if r.strategy == "resolver")

    paths = write_report(report, tmp_path, {"seed": 1})
    assert {p.name for p in paths} == {"overall.csv", "difficulty.csv", "complexity.csv", "summary.json"}
    lines = (tmp_path / "difficulty.csv").read_text().splitlines()
    assert lines[0] == "# seed=1"
    assert lines[1] == "strategy,split,acc@0.25,acc@0.5,n,delta@0.25,delta@0.5"
    assert len(lines) == 2 + 4
    assert json.loads((tmp_path / "summary.json").read_text())["meta"] == {"seed": 1}


def test_precomputed_four_query_row():
    qs = [BenchmarkQuery("s", str(i), "chair", "the chair") for i in range(4)]
    results = [QueryResult(q, None, iou, "resolver") for q, iou in zip(qs, [0.3, 0.6, 0.1, 0.26])]
    row = summarize("resolver", "overall", results)
    assert (row.acc25, row.acc50, row.n) == (accuracy_at(results, 0.25), accuracy_at(results, 0.5), 4)
    gt = {"s": {str(i): GroundTruthObject("chair", _box(i)) for i in range(4)}}
    report = build_report([BenchmarkRun("resolver", results)], gt)
    assert report.overall[0] == row
    assert [r.split for r in report.difficulty] == [LOW, HIGH]
    assert report.difficulty[0].n == 0 and report.difficulty[1].n == 4


def test_bench10_fixture_accuracies(fixtures):
    root = fixtures / "bench10"
    expected = json.loads((root / "expected.json").read_text())
    bench = load_benchmark(root / "annotations.json", root / "ground_truth.json")
    for strategy in ("raw", "resolver"):
        run = run_benchmark(bench.queries, SceneStore(root / "scenes"), bench.ground_truth, strategy)
        assert [r.iou >= 0.25 for r in run.results] == expected["per_query_correct"][strategy]
        acc = expected["accuracy"][strategy]
        assert accuracy_at(run.results, 0.25) == acc["acc@0.25"]
        assert accuracy_at(run.results, 0.5) == acc["acc@0.5"]

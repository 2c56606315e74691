"""ScanRefer-style annotations, per-scene ground truth, and scene storage.

Annotations are a JSON list (or JSON-lines file) of records carrying the
ScanRefer field names ``scene_id``, ``object_id``, ``object_name`` and
``description``. Ground truth is one JSON object::

    {"<scene_id>": {"<object_id>": {"object_name": "chair",
                                     "centroid": [x, y, z],
                                     "extents": [dx, dy, dz]}}}
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from ..errors import BenchmarkFormatError
from ..geometry import Aabb, PointCloud, load_ply

META_KEY = "_meta"
REQUIRED_FIELDS = ("scene_id", "object_id", "object_name", "description")


@dataclass(frozen=True)
class BenchmarkQuery:
    scene_id: str
    object_id: str
    object_name: str
    description: str
    ann_id: str = ""

    def __post_init__(self) -> None:
        if not self.scene_id or not self.object_id:
            raise ValueError("scene_id and object_id must be non-empty")
        if not self.description.strip():
            raise ValueError("description must be non-empty")

    @property
    def key(self) -> str:
        return f"{self.scene_id}/{self.object_id}/{self.ann_id}"

    def to_dict(self) -> dict:
        d = {"scene_id": self.scene_id, "object_id": self.object_id, "object_name": self.object_name,
             "description": self.description}
        if self.ann_id:
            d["ann_id"] = self.ann_id
        return d


@dataclass(frozen=True)
class GroundTruthObject:
    object_name: str
    box: Aabb


GroundTruth = dict[str, dict[str, GroundTruthObject]]


@dataclass(frozen=True)
class Rejected:
    locus: str
    reason: str
    record: dict = field(default_factory=dict, compare=False)


@dataclass
class Benchmark:
    queries: list[BenchmarkQuery]
    ground_truth: GroundTruth
    rejected: list[Rejected] = field(default_factory=list)

    def gt_box(self, q: BenchmarkQuery) -> Aabb:
        return self.ground_truth[q.scene_id][q.object_id].box


def _iter_records(path: Path) -> Iterator[tuple[str, object]]:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".jsonl":
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                yield f"line {lineno}", json.loads(line)
            except ValueError as exc:
                raise BenchmarkFormatError(f"invalid JSON: {exc}", str(path), f"line {lineno}") from None
        return
    try:
        data = json.loads(text)
    except ValueError as exc:
        raise BenchmarkFormatError(f"invalid JSON: {exc}", str(path), f"line {exc.lineno}") from None
    if not isinstance(data, list):
        raise BenchmarkFormatError("annotations must be a JSON list of records", str(path), "top level")
    for i, rec in enumerate(data):
        yield f"record {i}", rec


def load_annotations(path: str | Path) -> list[BenchmarkQuery]:
    """Parse annotation records; any malformed record aborts with its locus."""
    path = Path(path)
    out = []
    for locus, rec in _iter_records(path):
        if not isinstance(rec, dict):
            raise BenchmarkFormatError("record is not an object", str(path), locus)
        missing = [f for f in REQUIRED_FIELDS if f not in rec]
        if missing:
            raise BenchmarkFormatError(f"missing field(s) {', '.join(missing)}", str(path), locus)
        try:
            out.append(BenchmarkQuery(str(rec["scene_id"]), str(rec["object_id"]), str(rec["object_name"]),
                                      str(rec["description"]), str(rec.get("ann_id", ""))))
        except ValueError as exc:
            raise BenchmarkFormatError(str(exc), str(path), locus) from None
    return out


def load_ground_truth(path: str | Path) -> GroundTruth:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise BenchmarkFormatError(f"invalid JSON: {exc}", str(path), f"line {exc.lineno}") from None
    if not isinstance(data, dict):
        raise BenchmarkFormatError("ground truth must map scene_id to objects", str(path), "top level")
    gt: GroundTruth = {}
    for scene_id, objects in data.items():
        if scene_id == META_KEY:
            continue
        if not isinstance(objects, dict):
            raise BenchmarkFormatError("scene entry must map object_id to objects", str(path), scene_id)
        gt[scene_id] = {}
        for object_id, obj in objects.items():
            try:
                gt[scene_id][str(object_id)] = GroundTruthObject(
                    str(obj["object_name"]), Aabb(tuple(obj["centroid"]), tuple(obj["extents"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise BenchmarkFormatError(f"bad object: {exc}", str(path), f"{scene_id}/{object_id}") from None
    return gt


def resolve_queries(queries: Iterable[BenchmarkQuery], gt: Mapping[str, Mapping[str, GroundTruthObject]]):
    kept, rejected = [], []
    for i, q in enumerate(queries):
        if q.scene_id not in gt:
            rejected.append(Rejected(f"record {i}", f"unknown scene_id {q.scene_id!r}", q.to_dict()))
        elif q.object_id not in gt[q.scene_id]:
            rejected.append(Rejected(f"record {i}", f"unknown object_id {q.object_id!r} in {q.scene_id}",
                                     q.to_dict()))
        else:
            kept.append(q)
    return kept, rejected


def load_benchmark(annotations: str | Path, ground_truth: str | Path) -> Benchmark:
    """Load queries and ground truth; queries that do not resolve are reported in ``rejected``."""
    gt = load_ground_truth(ground_truth)
    queries, rejected = resolve_queries(load_annotations(annotations), gt)
    return Benchmark(queries, gt, rejected)


def save_annotations(queries: Iterable[BenchmarkQuery], path: str | Path) -> None:
    Path(path).write_text(json.dumps([q.to_dict() for q in queries], indent=2) + "\n")


def save_ground_truth(gt: GroundTruth, path: str | Path, meta: dict | None = None) -> None:
    """Write ground truth; ``meta`` is stored under the reserved ``_meta`` key."""
    data = {
        sid: {oid: {"object_name": o.object_name, "centroid": list(o.box.centroid), "extents": list(o.box.extents)}
              for oid, o in objs.items()}
        for sid, objs in gt.items()
    }
    if meta:
        data = {META_KEY: dict(meta), **data}
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


class SceneStore(Mapping[str, PointCloud]):
    """Scenes keyed by id, read lazily from ``<directory>/<scene_id>.ply``."""

    def __init__(self, directory: str | Path | None = None, scenes: Mapping[str, PointCloud] | None = None):
        self.directory = Path(directory) if directory is not None else None
        self._scenes: dict[str, PointCloud] = dict(scenes or {})
        self._lock = threading.Lock()

    def __getitem__(self, scene_id: str) -> PointCloud:
        with self._lock:
            if scene_id not in self._scenes:
                if self.directory is None:
                    raise KeyError(scene_id)
                path = self.directory / f"{scene_id}.ply"
                if not path.exists():
                    raise KeyError(scene_id)
                self._scenes[scene_id] = load_ply(path)
            return self._scenes[scene_id]

    def __iter__(self):
        ids = set(self._scenes)
        if self.directory is not None:
            ids |= {p.stem for p in self.directory.glob("*.ply")}
        return iter(sorted(ids))

    def __len__(self) -> int:
        return sum(1 for _ in self)

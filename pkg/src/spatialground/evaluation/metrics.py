from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from ..errors import EmptyEvaluation
from ..geometry import Aabb, aabb_iou
from ..query import count_nouns
from .dataset import BenchmarkQuery, GroundTruthObject

LOW = "LOW"
HIGH = "HIGH"
THRESHOLDS = (0.25, 0.5)


@dataclass
class QueryResult:
    query: BenchmarkQuery
    predicted: Aabb | None
    iou: float
    strategy: str
    transcript: str | None = None
    error: str = ""

    @classmethod
    def scored(cls, query: BenchmarkQuery, predicted: Aabb | None, gt: Aabb, strategy: str, **kw) -> "QueryResult":
        iou = aabb_iou(predicted, gt) if predicted is not None else 0.0
        return cls(query, predicted, iou, strategy, **kw)


@dataclass(frozen=True)
class ReportRow:
    strategy: str
    split: str
    acc25: float
    acc50: float
    n: int
    delta25: float | None = None
    delta50: float | None = None

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "split": self.split, "acc@0.25": self.acc25, "acc@0.5": self.acc50,
                "n": self.n, "delta@0.25": self.delta25, "delta@0.5": self.delta50}


def accuracy_at(results: Sequence[QueryResult] | Sequence[float], threshold: float) -> float:
    """Fraction of results whose IoU reaches ``threshold``.

    Accepts ``QueryResult`` objects or bare IoU values.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    if len(results) == 0:
        raise EmptyEvaluation("cannot compute accuracy over zero results")
    ious = [r.iou if isinstance(r, QueryResult) else float(r) for r in results]
    return sum(iou >= threshold for iou in ious) / len(ious)


def distractor_count(query: BenchmarkQuery, gt: Mapping[str, Mapping[str, GroundTruthObject]]) -> int:
    scene = gt[query.scene_id]
    return sum(o.object_name == query.object_name for o in scene.values()) - 1


def difficulty_split(
    queries: Iterable[BenchmarkQuery], gt: Mapping[str, Mapping[str, GroundTruthObject]],
) -> dict[str, str]:
    """LOW when the target is the only object of its class in the scene, else HIGH.

    Returns a map from query key to label.
    """
    counts = {sid: Counter(o.object_name for o in objs.values()) for sid, objs in gt.items()}
    return {q.key: LOW if counts[q.scene_id][q.object_name] <= 1 else HIGH for q in queries}


def complexity_buckets(queries: Iterable[BenchmarkQuery]) -> dict[int, list[BenchmarkQuery]]:
    buckets: dict[int, list[BenchmarkQuery]] = defaultdict(list)
    for q in queries:
        buckets[count_nouns(q.description)].append(q)
    return dict(sorted(buckets.items()))


def summarize(strategy: str, split: str, results: Sequence[QueryResult]) -> ReportRow:
    if not results:
        return ReportRow(strategy, split, 0.0, 0.0, 0)
    return ReportRow(strategy, split, accuracy_at(results, 0.25), accuracy_at(results, 0.5), len(results))

"""Target finder and landmark finder.

A phrase is turned into a per-point relevance field, the high-relevance
points are clustered with DBSCAN, and every cluster becomes a candidate box.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Protocol, Sequence

import httpx
import numpy as np
from scipy.spatial import cKDTree

from .errors import BackendMismatch, UpstreamError
from .geometry import Aabb, PointCloud, aabb_from_points, aabb_volume, centroid_distance
from .text import content_tokens

logger = logging.getLogger(__name__)

NOISE = -1

TARGET_FINDER = "target_finder"
LANDMARK_FINDER = "landmark_finder"


@dataclass(frozen=True)
class GrounderParams:
    quantile: float = 0.98
    eps: float = 0.15
    min_pts: int = 10
    max_candidates: int = 8

    def __post_init__(self) -> None:
        if not 0.0 < self.quantile < 1.0:
            raise ValueError(f"quantile must be in (0, 1), got {self.quantile}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.min_pts < 1:
            raise ValueError(f"min_pts must be >= 1, got {self.min_pts}")
        if self.max_candidates < 1:
            raise ValueError(f"max_candidates must be >= 1, got {self.max_candidates}")


@dataclass(frozen=True)
class RelevanceField:
    scores: np.ndarray
    phrase: str


@dataclass(frozen=True)
class Threshold:
    indices: np.ndarray
    cutoff: float
    degenerate: bool = False


@dataclass(frozen=True)
class Candidate:
    box: Aabb
    grounder_score: float
    volume: float
    candidate_id: int
    n_points: int = 0
    phrase: str = ""
    landmark_distances: dict[str, float] = field(default_factory=dict)
    members: tuple[int, ...] = field(default=(), repr=False, compare=False)

    def to_dict(self) -> dict:
        cx, cy, cz = self.box.centroid
        dx, dy, dz = self.box.extents
        d = {"id": self.candidate_id, "centroid": [cx, cy, cz], "extents": [dx, dy, dz],
             "volume": self.volume, "score": self.grounder_score, "n_points": self.n_points}
        if self.landmark_distances:
            d["landmark_distances"] = dict(sorted(self.landmark_distances.items()))
        return d


# ---------------------------------------------------------------------------
# Relevance backends


class RelevanceBackend(Protocol):
    def score(self, cloud: PointCloud, phrase: str) -> np.ndarray: ...


class LabelBackend:
    """Mock grounder over per-point labels.

    A point scores 1.0 when any content token of the phrase matches a token of
    its label. Whole sentences therefore light up every object they mention,
    the same bag-of-words failure real CLIP-style grounders show.
    """

    def score(self, cloud: PointCloud, phrase: str) -> np.ndarray:
        if not cloud.has_labels:
            raise BackendMismatch("label backend needs a point cloud with labels")
        wanted = content_tokens(phrase)
        hit = np.array([bool(wanted & content_tokens(name)) for name in cloud.label_names], dtype=bool)
        if hit.size == 0:
            return np.zeros(len(cloud))
        return hit[cloud.label_ids].astype(np.float64)


class FeatureBackend:
    """Cosine similarity between point features and a phrase embedding, mapped to [0, 1]."""

    def __init__(self, embed: Callable[[str], Sequence[float]]):
        self._embed = embed

    def score(self, cloud: PointCloud, phrase: str) -> np.ndarray:
        if not cloud.has_features:
            raise BackendMismatch("feature backend needs a point cloud with features")
        try:
            vec = np.asarray(self._embed(phrase), dtype=np.float64)
        except UpstreamError:
            raise
        except Exception as exc:
            raise UpstreamError(f"embedding failed for phrase {phrase!r}: {exc}") from exc
        if vec.shape != (cloud.features.shape[1],):
            raise BackendMismatch(
                f"embedding for {phrase!r} has shape {vec.shape}, cloud features have dim {cloud.features.shape[1]}")
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise UpstreamError(f"zero embedding returned for phrase {phrase!r}")
        cos = cloud.features @ (vec / norm)
        return np.clip((1.0 + cos) / 2.0, 0.0, 1.0)


class HttpEmbedder:
    """Client for a text-embedding endpoint.

    Request body ``{"text": phrase}``; response ``{"embedding": [...]}``.
    Embeddings are memoised per phrase.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0, client: httpx.Client | None = None):
        self.endpoint = endpoint
        self.timeout = timeout
        self._client = client or httpx.Client(timeout=timeout)
        self._embed_cached = lru_cache(maxsize=4096)(self._fetch)

    def _fetch(self, phrase: str) -> tuple[float, ...]:
        try:
            resp = self._client.post(self.endpoint, json={"text": phrase}, timeout=self.timeout)
            resp.raise_for_status()
            vec = resp.json()["embedding"]
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise UpstreamError(f"embedding service failed for phrase {phrase!r}: {exc}") from exc
        return tuple(float(v) for v in vec)

    def __call__(self, phrase: str) -> tuple[float, ...]:
        return self._embed_cached(phrase)


def relevance_field(cloud: PointCloud, phrase: str, backend: RelevanceBackend | None = None) -> RelevanceField:
    if not phrase or not phrase.strip():
        raise ValueError("phrase must be non-empty")
    backend = backend or LabelBackend()
    scores = np.asarray(backend.score(cloud, phrase), dtype=np.float64)
    if scores.shape != (len(cloud),):
        raise BackendMismatch(f"backend returned {scores.shape} scores for {len(cloud)} points")
    if not np.all(np.isfinite(scores)) or scores.min(initial=0.0) < 0.0 or scores.max(initial=0.0) > 1.0:
        raise ValueError("relevance scores must be finite and in [0, 1]")
    scores.setflags(write=False)
    return RelevanceField(scores, phrase)


def threshold_points(field: RelevanceField, quantile: float) -> Threshold:
    """Indices of points scoring at or above the empirical ``quantile``.

    When every score is equal there is nothing to separate: all indices are
    returned and the result is flagged ``degenerate``.
    """
    if not 0.0 < quantile < 1.0:
        raise ValueError(f"quantile must be in (0, 1), got {quantile}")
    scores = field.scores
    if scores.size == 0:
        return Threshold(np.zeros(0, dtype=np.int64), math.nan, degenerate=True)
    if scores.min() == scores.max():
        return Threshold(np.arange(scores.size), float(scores[0]), degenerate=True)
    cutoff = float(np.quantile(scores, quantile))
    return Threshold(np.flatnonzero(scores >= cutoff), cutoff)


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Density-based clustering; returns one label per point, ``NOISE`` = -1.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Points are visited in index order and clusters numbered in
    discovery order, so a border point reachable from two clusters goes to the
    one discovered first.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels

    neighbours = cKDTree(pts).query_ball_point(pts, r=eps, return_sorted=True)
    is_core = np.fromiter((len(nb) >= min_pts for nb in neighbours), dtype=bool, count=n)

    cluster = 0
    for i in range(n):
        if labels[i] != NOISE or not is_core[i]:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            j = queue.popleft()
            for k in neighbours[j]:
                if labels[k] == NOISE:
                    labels[k] = cluster
                    if is_core[k]:
                        queue.append(k)
        cluster += 1
    return labels


def find_candidates(
    cloud: PointCloud,
    phrase: str,
    params: GrounderParams | None = None,
    backend: RelevanceBackend | None = None,
) -> list[Candidate]:
    """Relevance field -> threshold -> DBSCAN -> one box per cluster.

    Candidates are ordered by mean member relevance (descending, ties to the
    lower cluster id) and truncated to ``params.max_candidates``. Points with
    zero relevance never take part, so a phrase that matches nothing yields no
    candidates even though its field is degenerate.
    """
    params = params or GrounderParams()
    rel = relevance_field(cloud, phrase, backend)
    kept = threshold_points(rel, params.quantile).indices
    kept = kept[rel.scores[kept] > 0.0]
    if kept.size == 0:
        return []

    labels = dbscan(cloud.points[kept], params.eps, params.min_pts)
    n_clusters = int(labels.max()) + 1 if labels.size else 0
    clusters = []
    for cid in range(n_clusters):
        members = kept[labels == cid]
        score = float(np.mean(rel.scores[members]))
        clusters.append((cid, members, min(1.0, max(0.0, score))))
    clusters.sort(key=lambda c: (-c[2], c[0]))

    out = []
    for rank, (_, members, score) in enumerate(clusters[: params.max_candidates]):
        box = aabb_from_points(cloud.points[members])
        out.append(Candidate(box=box, grounder_score=score, volume=aabb_volume(box), candidate_id=rank,
                             n_points=int(members.size), phrase=phrase, members=tuple(int(m) for m in members)))
    return out


# ---------------------------------------------------------------------------
# Tool responses


@dataclass
class ToolResponse:
    tool: str
    phrase: str
    candidates: list[Candidate] = field(default_factory=list)
    landmark: Candidate | None = None
    relation: str | None = None
    note: str = ""

    @property
    def distances(self) -> dict[int, float]:
        if self.tool != LANDMARK_FINDER or self.landmark is None:
            return {}
        return {c.candidate_id: c.landmark_distances[self.phrase] for c in self.candidates}

    def to_dict(self) -> dict:
        d: dict = {"tool": self.tool, "phrase": self.phrase}
        if self.relation:
            d["relation"] = self.relation
        if self.tool == TARGET_FINDER:
            d["candidates"] = [c.to_dict() for c in self.candidates]
        else:
            d["landmark"] = self.landmark.to_dict() if self.landmark else None
            d["distances"] = {str(k): v for k, v in self.distances.items()}
        if self.note:
            d["note"] = self.note
        return d

    def to_text(self) -> str:
        """Rendering fed back to the agent."""
        head = f'{self.tool}("{self.phrase}")'
        if self.tool == TARGET_FINDER:
            if not self.candidates:
                return f"{head} -> no candidates. {self.note}".rstrip()
            lines = [f"{head} -> {len(self.candidates)} candidate(s) as (Cx, Cy, Cz, dX, dY, dZ):"]
            for c in self.candidates:
                lines.append(f"  candidate {c.candidate_id}: {_fmt_box(c.box)} volume={c.volume:.4f} m^3")
            return "\n".join(lines)
        if self.landmark is None:
            return f"{head} -> landmark not found. {self.note}".rstrip()
        lines = [f"{head} -> landmark at {_fmt_box(self.landmark.box)}"]
        for cid, dist in self.distances.items():
            lines.append(f"  distance from target candidate {cid} to landmark centroid: {dist:.3f} m")
        if self.note:
            lines.append(f"  note: {self.note}")
        return "\n".join(lines)


def _fmt_box(box: Aabb) -> str:
    return "(" + ", ".join(f"{v:.3f}" for v in box.to_list()) + ")"


def target_finder(
    scene: PointCloud, phrase: str, params: GrounderParams | None = None, backend: RelevanceBackend | None = None,
) -> ToolResponse:
    cands = find_candidates(scene, phrase, params, backend)
    note = "" if cands else "no candidates found for this phrase"
    return ToolResponse(TARGET_FINDER, phrase, candidates=cands, note=note)


def landmark_finder(
    scene: PointCloud,
    phrase: str,
    params: GrounderParams | None = None,
    targets: Sequence[Candidate] = (),
    backend: RelevanceBackend | None = None,
    relation: str | None = None,
) -> ToolResponse:
    """Best landmark box for ``phrase`` plus its distance to every target candidate."""
    cands = find_candidates(scene, phrase, params, backend)
    if not cands:
        return ToolResponse(LANDMARK_FINDER, phrase, candidates=list(targets), relation=relation,
                            note="landmark not found")
    landmark = cands[0]
    annotated = [
        replace(t, landmark_distances={**t.landmark_distances, phrase: centroid_distance(t.box, landmark.box)})
        for t in targets
    ]
    note = "" if targets else "no target candidates given; distances omitted"
    return ToolResponse(LANDMARK_FINDER, phrase, candidates=annotated, landmark=landmark, relation=relation,
                        note=note)

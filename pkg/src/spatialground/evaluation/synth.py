"""Synthetic indoor scenes for offline benchmarking.

Each scene holds one target object placed to satisfy a sampled relation
with respect to one or two landmarks, plus ``k`` same-class distractors
that comply clearly worse (relation score at least 20 % worse, or the
relation outright violated). Objects are surface-sampled labelled point
blobs; ground-truth boxes are the AABBs of those blobs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import GenerationError
from ..geometry import Aabb, PointCloud, aabb_from_points, centroid_distance, save_ply
from ..grounder import Candidate
from ..query import SpatialRelation
from ..spatial import relation_scores
from .dataset import BenchmarkQuery, GroundTruth, GroundTruthObject, save_annotations, save_ground_truth

R = SpatialRelation

DEFAULT_RELATIONS = (R.BETWEEN, R.NEAR, R.ON, R.ABOVE, R.BELOW, R.CLOSEST, R.FARTHEST)

ROOM = (9.0, 9.0)
POINT_DENSITY = 200.0  # points per m^2 of box surface
MIN_POINTS = 30
MARGIN = 0.2
MAX_RETRIES = 200

# (dx range, dy range, dz range, base height range)
_SIZE = tuple[tuple[float, float], tuple[float, float], tuple[float, float], tuple[float, float]]

TARGETS: dict[str, _SIZE] = {
    "chair": ((0.45, 0.6), (0.45, 0.6), (0.8, 1.0), (0.0, 0.0)),
    "trash can": ((0.3, 0.4), (0.3, 0.4), (0.4, 0.6), (0.0, 0.0)),
    "box": ((0.3, 0.5), (0.3, 0.5), (0.25, 0.4), (0.0, 0.0)),
    "stool": ((0.35, 0.45), (0.35, 0.45), (0.45, 0.65), (0.0, 0.0)),
    "backpack": ((0.3, 0.35), (0.2, 0.25), (0.4, 0.5), (0.0, 0.0)),
    "lamp": ((0.25, 0.35), (0.25, 0.35), (0.4, 0.6), (0.0, 0.0)),
    "picture": ((0.6, 1.0), (0.08, 0.1), (0.4, 0.7), (1.2, 1.6)),
}
LANDMARKS: dict[str, _SIZE] = {
    "table": ((1.2, 1.8), (0.8, 1.0), (0.7, 0.8), (0.0, 0.0)),
    "desk": ((1.2, 1.6), (0.6, 0.8), (0.72, 0.78), (0.0, 0.0)),
    "bed": ((1.4, 1.8), (2.0, 2.2), (0.5, 0.6), (0.0, 0.0)),
    "sofa": ((1.8, 2.2), (0.8, 1.0), (0.8, 0.9), (0.0, 0.0)),
    "cabinet": ((0.8, 1.2), (0.45, 0.6), (0.8, 1.0), (0.0, 0.0)),
    "dresser": ((1.0, 1.4), (0.45, 0.55), (0.8, 1.0), (0.0, 0.0)),
    "window": ((1.0, 1.5), (0.1, 0.15), (1.0, 1.4), (0.8, 1.0)),
    "door": ((0.85, 1.0), (0.1, 0.15), (2.0, 2.1), (0.0, 0.0)),
    "bookshelf": ((0.8, 1.2), (0.3, 0.4), (1.5, 1.9), (0.0, 0.0)),
}
# landmarks with a usable top surface / open space beneath
_SURFACES = ("table", "desk", "bed", "cabinet", "dresser")
_UNDER = ("table", "desk")
_SMALL = ("box", "lamp", "backpack")
_SHORT = ("box", "trash can", "backpack")

TEMPLATES: dict[SpatialRelation, tuple[str, ...]] = {
    R.BETWEEN: ("the {t} between the {l1} and the {l2}",),
    R.NEAR: ("the {t} next to the {l1}", "the {t} near the {l1}", "the {t} beside the {l1}"),
    R.ON: ("the {t} on the {l1}",),
    R.ABOVE: ("the {t} above the {l1}",),
    R.BELOW: ("the {t} under the {l1}",),
    R.CLOSEST: ("the {t} closest to the {l1}",),
    R.FARTHEST: ("the {t} farthest from the {l1}",),
}


@dataclass
class SynthObject:
    object_id: str
    name: str
    box: Aabb
    role: str  # target | distractor | landmark


@dataclass
class SynthScene:
    scene_id: str
    relation: SpatialRelation
    k: int
    objects: list[SynthObject]
    cloud: PointCloud
    query: BenchmarkQuery


@dataclass
class SynthSuite:
    seed: int
    scenes: list[SynthScene] = field(default_factory=list)

    @property
    def clouds(self) -> dict[str, PointCloud]:
        return {s.scene_id: s.cloud for s in self.scenes}

    @property
    def queries(self) -> list[BenchmarkQuery]:
        return [s.query for s in self.scenes]

    @property
    def ground_truth(self) -> GroundTruth:
        return {s.scene_id: {o.object_id: GroundTruthObject(o.name, o.box) for o in s.objects} for s in self.scenes}


def _sample_size(rng: np.random.Generator, spec: _SIZE) -> tuple[np.ndarray, float]:
    ext = np.array([rng.uniform(*spec[0]), rng.uniform(*spec[1]), rng.uniform(*spec[2])])
    return ext, rng.uniform(*spec[3])


def _box_at(xy: Sequence[float], base: float, ext: np.ndarray) -> Aabb:
    return Aabb((float(xy[0]), float(xy[1]), base + ext[2] / 2), tuple(ext))


def _overlaps(a: Aabb, b: Aabb, gap: float) -> bool:
    return bool(np.all(a.min_corner - gap < b.max_corner) and np.all(b.min_corner - gap < a.max_corner))


def _inside_room(box: Aabb) -> bool:
    lo, hi = box.min_corner, box.max_corner
    return lo[0] >= 0 and lo[1] >= 0 and hi[0] <= ROOM[0] and hi[1] <= ROOM[1]


def _random_xy(rng: np.random.Generator, ext: np.ndarray) -> np.ndarray:
    return np.array([rng.uniform(ext[0] / 2 + 0.1, ROOM[0] - ext[0] / 2 - 0.1),
                     rng.uniform(ext[1] / 2 + 0.1, ROOM[1] - ext[1] / 2 - 0.1)])


def sample_surface(rng: np.random.Generator, box: Aabb, density: float = POINT_DENSITY) -> np.ndarray:
    """Points uniformly on the six faces of ``box``, corners included so the AABB is exact."""
    dx, dy, dz = box.extents
    faces = np.array([dy * dz, dy * dz, dx * dz, dx * dz, dx * dy, dx * dy])
    n = max(MIN_POINTS, int(round(density * faces.sum())))
    which = rng.choice(6, size=n, p=faces / faces.sum())
    uv = rng.random((n, 3))
    axis = which // 2
    uv[np.arange(n), axis] = (which % 2).astype(float)
    lo = box.min_corner
    pts = lo + uv * np.asarray(box.extents)
    corners = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=float)
    return np.vstack([pts, lo + corners * np.asarray(box.extents)])


def _as_candidates(boxes: Sequence[Aabb]) -> list[Candidate]:
    return [Candidate(box=b, grounder_score=1.0, volume=b.volume, candidate_id=i) for i, b in enumerate(boxes)]


def margin_ok(relation: SpatialRelation, target: Aabb, distractors: Sequence[Aabb], landmarks: Sequence[Aabb],
              margin: float = MARGIN) -> bool:
    """True when the target complies with ``relation`` and beats every distractor by ``margin``."""
    scores = relation_scores(_as_candidates([target, *distractors]), relation, landmarks)
    t = scores[0]
    if t.violated:
        return False
    for i, s in enumerate(scores[1:], 1):
        if s.violated:
            continue
        if relation is R.FARTHEST:
            d_t = centroid_distance(target, landmarks[0])
            d_s = centroid_distance(distractors[i - 1], landmarks[0])
            if d_t < (1 + margin) * d_s:
                return False
        elif s.score < (1 + margin) * t.score:
            return False
    return True


def _place_landmarks(rng, relation, names) -> list[Aabb] | None:
    boxes: list[Aabb] = []
    for name in names:
        for _ in range(50):
            ext, base = _sample_size(rng, LANDMARKS[name])
            box = _box_at(_random_xy(rng, ext), base, ext)
            if any(_overlaps(box, b, 0.6) for b in boxes):
                continue
            if relation is R.BETWEEN and boxes:
                d = math.dist(box.centroid[:2], boxes[0].centroid[:2])
                if not 2.5 <= d <= 5.5:
                    continue
            boxes.append(box)
            break
        else:
            return None
    return boxes


def _place_target(rng, relation, name, landmarks: list[Aabb]) -> Aabb | None:
    ext, base = _sample_size(rng, TARGETS[name])
    lm = landmarks[0]
    lc = np.asarray(lm.centroid)
    if relation is R.BETWEEN:
        mid = (np.asarray(landmarks[0].centroid[:2]) + np.asarray(landmarks[1].centroid[:2])) / 2
        return _box_at(mid + rng.normal(0, 0.1, 2), base, ext)
    if relation in (R.NEAR, R.CLOSEST):
        side = rng.integers(4)
        gap = rng.uniform(0.2, 0.4)
        off = np.zeros(2)
        axis = side % 2
        sign = 1 if side < 2 else -1
        off[axis] = sign * (lm.extents[axis] / 2 + ext[axis] / 2 + gap)
        off[1 - axis] = rng.uniform(-0.3, 0.3) * lm.extents[1 - axis]
        return _box_at(lc[:2] + off, base, ext)
    if relation is R.ON:
        top = lm.max_corner[2]
        free = np.maximum(np.asarray(lm.extents[:2]) - ext[:2], 0) / 2
        return _box_at(lc[:2] + rng.uniform(-free, free), top, ext)
    if relation is R.ABOVE:
        top = lm.max_corner[2]
        return _box_at(lc[:2] + rng.normal(0, 0.1, 2), top + rng.uniform(0.3, 0.6), ext)
    if relation is R.BELOW:
        ext[2] = min(ext[2], lm.min_corner[2] + lm.extents[2] - 0.15)
        free = np.maximum(np.asarray(lm.extents[:2]) - ext[:2] - 0.1, 0) / 2
        return _box_at(lc[:2] + rng.uniform(-free, free), 0.0, ext)
    if relation is R.FARTHEST:
        return _box_at(_random_xy(rng, ext), base, ext)
    raise GenerationError(f"relation {relation.value} is not generated")


def _target_classes(relation: SpatialRelation) -> tuple[str, ...]:
    if relation is R.ON:
        return _SMALL
    if relation is R.BELOW:
        return _SHORT
    if relation is R.ABOVE:
        return ("picture", "lamp")
    return tuple(n for n in TARGETS if n != "picture")


def _landmark_classes(relation: SpatialRelation) -> tuple[str, ...]:
    if relation in (R.ON, R.ABOVE):
        return _SURFACES
    if relation is R.BELOW:
        return _UNDER
    return tuple(LANDMARKS)


def _generate_scene(rng, scene_id, relation, k):
    t_name = str(rng.choice(_target_classes(relation)))
    n_lm = relation.arity
    lm_names = [str(n) for n in rng.choice(_landmark_classes(relation), size=n_lm, replace=False)]

    for _ in range(MAX_RETRIES):
        landmarks = _place_landmarks(rng, relation, lm_names)
        if landmarks is None:
            continue
        target = _place_target(rng, relation, t_name, landmarks)
        if not _inside_room(target):
            continue
        # ON / BELOW deliberately touch their landmark
        touching = relation in (R.ON, R.BELOW)
        if not touching and any(_overlaps(target, b, 0.2) for b in landmarks):
            continue
        if touching and any(_overlaps(target, b, 0.2) for b in landmarks[1:]):
            continue

        distractors: list[Aabb] = []
        placed = [*landmarks, target]
        for _ in range(k):
            for _ in range(100):
                ext, base = _sample_size(rng, TARGETS[t_name])
                if relation is R.ABOVE:
                    base = float(rng.uniform(0.0, 1.6))
                box = _box_at(_random_xy(rng, ext), base, ext)
                if any(_overlaps(box, b, 0.4) for b in placed):
                    continue
                if not margin_ok(relation, target, [*distractors, box], landmarks):
                    continue
                distractors.append(box)
                placed.append(box)
                break
            else:
                break
        if len(distractors) < k or not margin_ok(relation, target, distractors, landmarks):
            continue

        objects = [SynthObject("0", t_name, target, "target")]
        objects += [SynthObject(str(i + 1), t_name, b, "distractor") for i, b in enumerate(distractors)]
        objects += [SynthObject(str(k + 1 + i), n, b, "landmark") for i, (n, b) in enumerate(zip(lm_names, landmarks))]

        pts, ids, names = [], [], sorted({o.name for o in objects})
        for o in objects:
            p = sample_surface(rng, o.box)
            o.box = aabb_from_points(p)
            pts.append(p)
            ids.append(np.full(len(p), names.index(o.name)))
        cloud = PointCloud(np.vstack(pts), label_ids=np.concatenate(ids), label_names=names)

        template = TEMPLATES[relation][int(rng.integers(len(TEMPLATES[relation])))]
        text = template.format(t=t_name, l1=lm_names[0], l2=lm_names[-1])
        query = BenchmarkQuery(scene_id, "0", t_name, text, ann_id="0")
        return SynthScene(scene_id, relation, k, objects, cloud, query)
    return None


def synth_generate(
    seed: int,
    n_scenes: int,
    k_distractors: int | Sequence[int] = 3,
    relations: Sequence[SpatialRelation | str] | None = None,
) -> SynthSuite:
    """Generate ``n_scenes`` scenes deterministically from ``seed``.

    ``k_distractors`` may be a sequence, cycled over scenes, to mix
    difficulty levels. Relations are drawn uniformly from ``relations``.

    Raises:
        GenerationError: if a scene cannot be placed within the retry budget.
    """
    ks = [k_distractors] if isinstance(k_distractors, int) else list(k_distractors)
    if not ks or any(k < 0 for k in ks):
        raise ValueError("distractor counts must be >= 0")
    rels = [SpatialRelation(r) for r in (relations or DEFAULT_RELATIONS)]
    for r in rels:
        if r not in TEMPLATES:
            raise ValueError(f"relation {r.value} cannot be generated")

    suite = SynthSuite(seed)
    for i in range(n_scenes):
        rng = np.random.default_rng([seed, i])
        relation = rels[int(rng.integers(len(rels)))]
        k = ks[i % len(ks)]
        scene = _generate_scene(rng, f"synth{seed}_{i:04d}", relation, k)
        if scene is None:
            raise GenerationError(f"seed {seed}: could not place scene {i} ({relation.value}, k={k})")
        suite.scenes.append(scene)
    return suite


def write_suite(suite: SynthSuite, out_dir: str | Path, meta: dict | None = None) -> list[Path]:
    """Write ``scenes/<id>.ply``, ``annotations.json``, ``ground_truth.json`` and ``manifest.json``.

    Annotations stay a bare record list for drop-in compatibility, so the
    provenance in ``meta`` goes into the PLY headers, the ground-truth
    ``_meta`` entry and the manifest.
    """
    out = Path(out_dir)
    scenes_dir = out / "scenes"
    scenes_dir.mkdir(parents=True, exist_ok=True)
    meta = {"seed": suite.seed, **(meta or {})}
    comments = [f"{k}={v}" for k, v in meta.items()]
    paths = []
    for scene in suite.scenes:
        p = scenes_dir / f"{scene.scene_id}.ply"
        save_ply(scene.cloud, p, comments)
        paths.append(p)
    ann, gt = out / "annotations.json", out / "ground_truth.json"
    save_annotations(suite.queries, ann)
    save_ground_truth(suite.ground_truth, gt, meta)
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({**meta, "scenes": len(suite.scenes),
                                    "relations": {s.scene_id: s.relation.value for s in suite.scenes},
                                    "distractors": {s.scene_id: s.k for s in suite.scenes}},
                                   indent=2, sort_keys=True) + "\n")
    return paths + [ann, gt, manifest]

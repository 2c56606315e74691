"""Commonsense and spatial checks over grounded candidates.

Used as the verifier behind the agent and, on its own, as an LLM-free
resolver. Relation scores are distances in meters: lower means the
candidate complies better.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .errors import NoCandidates, RelationArity
from .geometry import Aabb, centroid_distance
from .grounder import Candidate
from .query import ParsedQuery, SpatialRelation
from .text import singular, tokenize

_DISTANCE_LIKE = {SpatialRelation.NEAR, SpatialRelation.IN, SpatialRelation.ON, SpatialRelation.CLOSEST,
                  SpatialRelation.UNSUPPORTED}


@dataclass(frozen=True)
class RelationScore:
    candidate_id: int
    relation: SpatialRelation
    score: float
    violated: bool = False
    low_confidence: bool = False
    contained: bool = False
    # |d1 + d2 - d(L1, L2)| for BETWEEN, None otherwise
    collinearity: float | None = None


@dataclass
class VolumeFilterConfig:
    min_volume: float = 0.01
    max_volume: float | None = None
    per_class: dict[str, tuple[float, float | None]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        _check_range(self.min_volume, self.max_volume, "default")
        self.per_class = {k.lower(): (float(lo), None if hi is None else float(hi))
                          for k, (lo, hi) in self.per_class.items()}
        for name, (lo, hi) in self.per_class.items():
            _check_range(lo, hi, name)

    def bounds_for(self, class_name: str | None) -> tuple[float, float | None]:
        if class_name:
            key = class_name.lower().strip()
            if key in self.per_class:
                return self.per_class[key]
            words = tokenize(key)
            if words and singular(words[-1]) in self.per_class:
                return self.per_class[singular(words[-1])]
        return self.min_volume, self.max_volume

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "VolumeFilterConfig":
        d = dict(d or {})
        per_class = {}
        for name, bounds in (d.get("per_class") or d.get("classes") or {}).items():
            if isinstance(bounds, Mapping):
                per_class[name] = (bounds.get("min", 0.0), bounds.get("max"))
            else:
                lo, hi = list(bounds) + [None] * (2 - len(bounds))
                per_class[name] = (lo, hi)
        return cls(min_volume=float(d.get("min_volume", 0.01)),
                   max_volume=None if d.get("max_volume") is None else float(d["max_volume"]),
                   per_class=per_class)


def _check_range(lo: float, hi: float | None, name: str) -> None:
    if lo < 0:
        raise ValueError(f"{name}: min volume must be >= 0")
    if hi is not None and not hi > lo:
        raise ValueError(f"{name}: max volume must exceed min volume")


@dataclass(frozen=True)
class Rejection:
    candidate_id: int
    volume: float
    reason: str


@dataclass
class FilterResult:
    kept: list[Candidate]
    rejections: list[Rejection]
    skipped: bool = False
    note: str = ""


def filter_by_volume(
    candidates: Sequence[Candidate], config: VolumeFilterConfig | None = None, class_name: str | None = None,
) -> FilterResult:
    """Drop candidates whose volume is implausible for their class.

    If every candidate would be dropped the filter is not applied: a wrong
    box still earns partial overlap, an empty answer earns nothing.
    """
    config = config or VolumeFilterConfig()
    kept, rejected = [], []
    for c in candidates:
        lo, hi = config.bounds_for(class_name or c.phrase)
        if c.volume < lo:
            rejected.append(Rejection(c.candidate_id, c.volume, f"volume {c.volume:.4g} m^3 below minimum {lo:g}"))
        elif hi is not None and c.volume > hi:
            rejected.append(Rejection(c.candidate_id, c.volume, f"volume {c.volume:.4g} m^3 above maximum {hi:g}"))
        else:
            kept.append(c)
    if candidates and not kept:
        return FilterResult(list(candidates), rejected, skipped=True,
                            note=f"all {len(candidates)} candidates out of range; filter skipped")
    return FilterResult(kept, rejected)


def relation_scores(
    candidates: Sequence[Candidate], relation: SpatialRelation, landmarks: Sequence[Aabb],
) -> list[RelationScore]:
    """Score a batch of candidates against one relation.

    ABOVE/BELOW violators and FARTHEST need the batch: violators get the
    largest finite score plus one, FARTHEST is ``max(d) - d``.
    """
    if len(landmarks) != relation.arity:
        raise RelationArity(f"{relation.value} takes {relation.arity} landmark(s), got {len(landmarks)}")
    if not candidates:
        return []

    if relation is SpatialRelation.BETWEEN:
        l1, l2 = landmarks
        base = centroid_distance(l1, l2)
        out = []
        for c in candidates:
            s = centroid_distance(c.box, l1) + centroid_distance(c.box, l2)
            out.append(RelationScore(c.candidate_id, relation, s, collinearity=abs(s - base)))
        return out

    (lm,) = landmarks
    dists = [centroid_distance(c.box, lm) for c in candidates]

    if relation in _DISTANCE_LIKE:
        return [
            RelationScore(c.candidate_id, relation, d,
                          low_confidence=relation is SpatialRelation.UNSUPPORTED,
                          contained=relation is SpatialRelation.IN and lm.contains(c.box.centroid))
            for c, d in zip(candidates, dists)
        ]

    if relation is SpatialRelation.FARTHEST:
        top = max(dists)
        return [RelationScore(c.candidate_id, relation, top - d) for c, d in zip(candidates, dists)]

    # ABOVE / BELOW
    lz = lm.centroid[2]
    above = relation is SpatialRelation.ABOVE
    ok = [(c.box.centroid[2] > lz) if above else (c.box.centroid[2] < lz) for c in candidates]
    finite = [d for d, good in zip(dists, ok) if good]
    sentinel = (max(finite) if finite else max(dists)) + 1.0
    return [
        RelationScore(c.candidate_id, relation, d if good else sentinel, violated=not good)
        for c, d, good in zip(candidates, dists, ok)
    ]


def relation_score(candidate: Candidate, relation: SpatialRelation, landmarks: Sequence[Aabb]) -> RelationScore:
    return relation_scores([candidate], relation, landmarks)[0]


@dataclass(frozen=True)
class RankedCandidate:
    candidate: Candidate
    total: float
    violations: int
    parts: tuple[RelationScore, ...] = ()


@dataclass
class Selection:
    chosen: Candidate
    ranked: list[RankedCandidate]
    volume_log: FilterResult
    notes: list[str] = field(default_factory=list)


def relation_groups(
    parsed: ParsedQuery, landmarks: Mapping[str, Aabb],
) -> tuple[list[tuple[SpatialRelation, list[Aabb], bool]], list[str]]:
    """Turn the query's landmarks into scoreable (relation, boxes, low_confidence) groups.

    Landmarks without a resolved box are skipped; a BETWEEN pair with one
    missing member degrades to NEAR on the other.
    """
    groups: list[tuple[SpatialRelation, list[Aabb], bool]] = []
    notes: list[str] = []
    between = [lm for lm in parsed.landmarks if lm.relation is SpatialRelation.BETWEEN]
    if between:
        found = [landmarks[lm.phrase] for lm in between if lm.phrase in landmarks]
        if len(found) == 2:
            groups.append((SpatialRelation.BETWEEN, found, False))
        elif len(found) == 1:
            groups.append((SpatialRelation.NEAR, found, True))
            notes.append("one 'between' landmark missing; scored as near the other")
        else:
            notes.append("both 'between' landmarks missing")
    for lm in parsed.landmarks:
        if lm.relation is SpatialRelation.BETWEEN:
            continue
        if lm.phrase not in landmarks:
            notes.append(f"landmark {lm.phrase!r} not found; relation ignored")
            continue
        groups.append((lm.relation, [landmarks[lm.phrase]], lm.relation is SpatialRelation.UNSUPPORTED))
    return groups, notes


def select_candidate(
    parsed: ParsedQuery,
    targets: Sequence[Candidate],
    landmarks: Mapping[str, Aabb],
    config: VolumeFilterConfig | None = None,
) -> Selection:
    """Pick the target candidate that best satisfies every relation of the query.

    Ranking key: number of violated relations, then summed relation score,
    then containment hits for IN, then higher grounder score, then lower id.
    Without usable landmarks candidates rank by grounder score alone.

    Raises:
        NoCandidates: if ``targets`` is empty.
    """
    if not targets:
        raise NoCandidates(f"no target candidates for {parsed.target!r}")
    vol = filter_by_volume(targets, config, class_name=parsed.target)
    pool = vol.kept
    groups, notes = relation_groups(parsed, landmarks)
    if vol.skipped:
        notes.append(vol.note)

    per_group = [relation_scores(pool, rel, boxes) for rel, boxes, _ in groups]
    ranked = []
    for i, c in enumerate(pool):
        parts = tuple(
            replace(g[i], low_confidence=g[i].low_confidence or low)
            for g, (_, _, low) in zip(per_group, groups)
        )
        ranked.append(RankedCandidate(c, float(sum(p.score for p in parts)), sum(p.violated for p in parts), parts))

    if groups:
        ranked.sort(key=lambda r: (r.violations, r.total, -sum(p.contained for p in r.parts),
                                   -r.candidate.grounder_score, r.candidate.candidate_id))
    else:
        ranked.sort(key=lambda r: (-r.candidate.grounder_score, r.candidate.candidate_id))
    assert all(math.isfinite(r.total) for r in ranked)
    return Selection(ranked[0].candidate, ranked, vol, notes)

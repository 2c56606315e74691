"""End-to-end grounding strategies that need no language model.

``resolve`` is the deterministic pipeline (rule parse, ground each noun
phrase separately, spatial selection). ``raw_ground`` is the bag-of-words
baseline: the whole sentence goes to the grounder and the largest cluster
wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ParseFailure
from .geometry import Aabb, PointCloud
from .grounder import Candidate, GrounderParams, RelevanceBackend, find_candidates
from .query import ParsedQuery, parse_query_rules
from .spatial import Selection, VolumeFilterConfig, select_candidate

RESOLVED = "resolved"
FINAL_ANSWER = "final_answer"
FALLBACK = "fallback"
FAILED = "failed"


@dataclass
class GroundingResult:
    outcome: str
    box: Aabb | None = None
    candidate: Candidate | None = None
    reason: str = ""
    parsed: ParsedQuery | None = None
    selection: Selection | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.box is not None


def ground_landmarks(
    scene: PointCloud, parsed: ParsedQuery, params: GrounderParams, backend: RelevanceBackend | None = None,
) -> dict[str, Aabb]:
    boxes = {}
    for lm in parsed.landmarks:
        if lm.phrase in boxes:
            continue
        found = find_candidates(scene, lm.phrase, params, backend)
        if found:
            boxes[lm.phrase] = found[0].box
    return boxes


def resolve(
    query: str,
    scene: PointCloud,
    params: GrounderParams | None = None,
    volume_config: VolumeFilterConfig | None = None,
    backend: RelevanceBackend | None = None,
    parsed: ParsedQuery | None = None,
) -> GroundingResult:
    params = params or GrounderParams()
    if parsed is None:
        try:
            parsed = parse_query_rules(query)
        except ParseFailure as exc:
            return GroundingResult(FAILED, reason=f"parse failure: {exc}")

    targets = find_candidates(scene, parsed.grounding_phrase, params, backend)
    if not targets and parsed.attributes:
        targets = find_candidates(scene, parsed.target, params, backend)
    if not targets:
        return GroundingResult(FAILED, reason=f"no candidates for {parsed.target!r}", parsed=parsed)

    landmarks = ground_landmarks(scene, parsed, params, backend)
    sel = select_candidate(parsed, targets, landmarks, volume_config)
    return GroundingResult(RESOLVED, sel.chosen.box, sel.chosen, "; ".join(sel.notes), parsed, sel)


def raw_ground(
    query: str, scene: PointCloud, params: GrounderParams | None = None, backend: RelevanceBackend | None = None,
) -> GroundingResult:
    cands = find_candidates(scene, query, params, backend)
    if not cands:
        return GroundingResult(FAILED, reason="no candidates for the full query")
    best = max(cands, key=lambda c: (c.n_points, -c.candidate_id))
    return GroundingResult(RESOLVED, best.box, best)

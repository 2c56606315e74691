"""Zero-shot 3D visual grounding with query decomposition and spatial reasoning."""

from .agent import Budget, Transcript, run_agent
from .chat import ChatClient, ResponseCache, ScriptedTransport
from .errors import (
    BackendMismatch,
    BenchmarkFormatError,
    ConfigError,
    EmptyCluster,
    EmptyEvaluation,
    GenerationError,
    GroundingError,
    NoCandidates,
    ParseFailure,
    RelationArity,
    ReplyFormatError,
    UpstreamError,
)
from .geometry import Aabb, PointCloud, aabb_from_points, aabb_iou, aabb_volume, centroid_distance, load_ply, save_ply
from .grounder import (
    Candidate,
    FeatureBackend,
    GrounderParams,
    LabelBackend,
    dbscan,
    find_candidates,
    landmark_finder,
    target_finder,
)
from .query import Landmark, ParsedQuery, SpatialRelation, count_nouns, parse_query_llm, parse_query_rules
from .resolver import GroundingResult, raw_ground, resolve
from .spatial import VolumeFilterConfig, filter_by_volume, relation_score, select_candidate

__version__ = "0.1.0"

__all__ = [
    "Aabb", "BackendMismatch", "BenchmarkFormatError", "Budget", "Candidate", "ChatClient", "ConfigError",
    "EmptyCluster", "EmptyEvaluation", "FeatureBackend", "GenerationError", "GrounderParams", "GroundingError",
    "GroundingResult", "LabelBackend", "Landmark", "NoCandidates", "ParseFailure", "ParsedQuery", "PointCloud",
    "RelationArity", "ReplyFormatError", "ResponseCache", "ScriptedTransport", "SpatialRelation", "Transcript",
    "UpstreamError", "VolumeFilterConfig", "aabb_from_points", "aabb_iou", "aabb_volume", "centroid_distance",
    "count_nouns", "dbscan", "filter_by_volume", "find_candidates", "landmark_finder", "load_ply",
    "parse_query_llm", "parse_query_rules", "raw_ground", "relation_score", "resolve", "run_agent", "save_ply",
    "select_candidate", "target_finder",
]

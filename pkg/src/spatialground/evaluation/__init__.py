from .benchmark import (
    AGENT,
    RAW,
    RESOLVER,
    STRATEGIES,
    BenchmarkConfig,
    BenchmarkRun,
    Report,
    build_report,
    canonical_strategy,
    run_benchmark,
    write_report,
)
from .dataset import (
    Benchmark,
    BenchmarkQuery,
    GroundTruth,
    GroundTruthObject,
    SceneStore,
    load_annotations,
    load_benchmark,
    load_ground_truth,
    save_annotations,
    save_ground_truth,
)
from .metrics import HIGH, LOW, QueryResult, ReportRow, accuracy_at, complexity_buckets, difficulty_split, summarize
from .synth import SynthScene, SynthSuite, synth_generate, write_suite

__all__ = [
    "AGENT", "RAW", "RESOLVER", "STRATEGIES", "HIGH", "LOW",
    "Benchmark", "BenchmarkConfig", "BenchmarkQuery", "BenchmarkRun", "GroundTruth", "GroundTruthObject",
    "QueryResult", "Report", "ReportRow", "SceneStore", "SynthScene", "SynthSuite",
    "accuracy_at", "build_report", "canonical_strategy", "complexity_buckets", "difficulty_split",
    "load_annotations", "load_benchmark", "load_ground_truth", "run_benchmark", "save_annotations",
    "save_ground_truth", "summarize", "synth_generate", "write_report", "write_suite",
]

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from spatialground.geometry import Aabb, PointCloud

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture
def parser_cases() -> list[dict]:
    return json.loads((FIXTURES / "parser_queries.json").read_text())


def blob(rng: np.random.Generator, centre, extents, n: int = 60) -> np.ndarray:
    """``n`` points filling a box, with two opposite corners pinned so the AABB is exact."""
    c, e = np.asarray(centre, float), np.asarray(extents, float)
    pts = c - e / 2 + rng.random((n, 3)) * e
    pts[0], pts[1] = c - e / 2, c + e / 2
    return pts


def make_scene(objects, seed: int = 0, n: int = 60, density: float = 3000.0) -> tuple[PointCloud, dict[str, Aabb]]:
    """Build a labelled cloud from ``[(name, centre, extents), ...]``.

    Each object gets at least ``n`` points, more for large objects so the
    default clustering parameters see a dense blob. Returns the cloud and each
    object's exact box keyed by ``name#i``.
    """
    rng = np.random.default_rng(seed)
    names = sorted({o[0] for o in objects})
    pts, ids, boxes = [], [], {}
    for i, (name, centre, ext) in enumerate(objects):
        p = blob(rng, centre, ext, max(n, int(density * float(np.prod(ext)))))
        pts.append(p)
        ids.append(np.full(len(p), names.index(name)))
        boxes[f"{name}#{i}"] = Aabb(tuple(centre), tuple(ext))
    return PointCloud(np.vstack(pts), label_ids=np.concatenate(ids), label_names=names), boxes


ROOM_OBJECTS = [
    ("chair", (0.0, 0.0, 0.45), (0.5, 0.5, 0.9)),        # between the landmarks
    ("chair", (4.0, 3.5, 0.45), (0.5, 0.5, 0.9)),
    ("chair", (-3.5, 3.0, 0.45), (0.5, 0.5, 0.9)),
    ("table", (-2.0, 0.0, 0.38), (1.6, 0.9, 0.76)),
    ("window", (2.2, 0.0, 1.3), (1.2, 0.12, 1.2)),
]


@pytest.fixture
def room_scene():
    return make_scene(ROOM_OBJECTS)


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])

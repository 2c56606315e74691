"""3D primitives: point clouds, axis-aligned boxes, volume, IoU and distances.

Boxes are stored as centroid + extents, the same layout the grounding tools
report back to the agent: ``(cx, cy, cz, dx, dy, dz)``. Corner form is
derived on demand.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyCluster

Point3 = tuple[float, float, float]

FEATURE_NORM_TOL = 1e-4


def _as_point3(values: Iterable[float], name: str) -> Point3:
    vals = tuple(float(v) for v in values)
    if len(vals) != 3:
        raise ValueError(f"{name} must have 3 components, got {len(vals)}")
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"{name} must be finite, got {vals}")
    return vals  # type: ignore[return-value]


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box given by its center and full side lengths."""

    centroid: Point3
    extents: Point3

    def __post_init__(self) -> None:
        object.__setattr__(self, "centroid", _as_point3(self.centroid, "centroid"))
        object.__setattr__(self, "extents", _as_point3(self.extents, "extents"))
        if any(e < 0 for e in self.extents):
            raise ValueError(f"extents must be non-negative, got {self.extents}")

    @classmethod
    def from_corners(cls, lo: Sequence[float], hi: Sequence[float]) -> "Aabb":
        lo_a = np.asarray(lo, dtype=np.float64)
        hi_a = np.asarray(hi, dtype=np.float64)
        return cls(tuple((lo_a + hi_a) / 2.0), tuple(hi_a - lo_a))

    @property
    def min_corner(self) -> np.ndarray:
        return np.asarray(self.centroid) - np.asarray(self.extents) / 2.0

    @property
    def max_corner(self) -> np.ndarray:
        return np.asarray(self.centroid) + np.asarray(self.extents) / 2.0

    @property
    def volume(self) -> float:
        return aabb_volume(self)

    def contains(self, point: Sequence[float], tol: float = 1e-9) -> bool:
        p = np.asarray(point, dtype=np.float64)
        return bool(np.all(p >= self.min_corner - tol) and np.all(p <= self.max_corner + tol))

    def scaled(self, factor: float) -> "Aabb":
        """Box with every coordinate multiplied by ``factor`` (about the origin)."""
        return Aabb(tuple(c * factor for c in self.centroid), tuple(e * factor for e in self.extents))

    def translated(self, offset: Sequence[float]) -> "Aabb":
        return Aabb(tuple(c + float(o) for c, o in zip(self.centroid, offset)), self.extents)

    def to_list(self) -> list[float]:
        return [*self.centroid, *self.extents]

    def to_dict(self) -> dict:
        return {"centroid": list(self.centroid), "extents": list(self.extents)}

    @classmethod
    def from_dict(cls, d: dict) -> "Aabb":
        return cls(tuple(d["centroid"]), tuple(d["extents"]))


def aabb_from_points(points: np.ndarray | Sequence[Sequence[float]]) -> Aabb:
    """Smallest axis-aligned box containing every point.

    Raises:
        EmptyCluster: if ``points`` is empty.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise EmptyCluster("cannot build a box from zero points")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return Aabb.from_corners(pts.min(axis=0), pts.max(axis=0))


def aabb_volume(box: Aabb) -> float:
    dx, dy, dz = box.extents
    return dx * dy * dz


def aabb_iou(a: Aabb, b: Aabb) -> float:
    """Intersection-over-union of two boxes.

    Identical boxes give 1.0 even when both are degenerate (zero volume);
    any other pairing with an empty union gives 0.0.
    """
    if a == b:
        return 1.0
    lo = np.maximum(a.min_corner, b.min_corner)
    hi = np.minimum(a.max_corner, b.max_corner)
    inter = float(np.prod(np.clip(hi - lo, 0.0, None)))
    union = aabb_volume(a) + aabb_volume(b) - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def centroid_distance(a: Aabb, b: Aabb) -> float:
    return math.dist(a.centroid, b.centroid)


class PointCloud:
    """Immutable scene geometry.

    Labels are held as an integer index per point into ``label_names`` so
    that per-phrase matching runs once per distinct label rather than once per
    point. ``features`` rows are unit-norm vectors of a fixed dimension.
    """

    def __init__(
        self,
        points: np.ndarray | Sequence[Sequence[float]],
        labels: Sequence[str] | None = None,
        features: np.ndarray | None = None,
        *,
        label_ids: np.ndarray | None = None,
        label_names: Sequence[str] | None = None,
    ):
        pts = np.array(points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        n = pts.shape[0]

        if labels is not None and label_ids is not None:
            raise ValueError("pass either labels or label_ids, not both")
        if labels is not None:
            if len(labels) != n:
                raise ValueError(f"got {len(labels)} labels for {n} points")
            names, inverse = np.unique(np.asarray(labels, dtype=object).astype(str), return_inverse=True)
            label_names = tuple(str(s) for s in names)
            label_ids = inverse.astype(np.int64)
        elif label_ids is not None:
            if label_names is None:
                raise ValueError("label_ids requires label_names")
            label_ids = np.array(label_ids, dtype=np.int64).reshape(-1)
            if label_ids.shape[0] != n:
                raise ValueError(f"got {label_ids.shape[0]} label ids for {n} points")
            if n and (label_ids.min() < 0 or label_ids.max() >= len(label_names)):
                raise ValueError("label id out of range")
            label_names = tuple(label_names)

        if features is not None:
            feats = np.array(features, dtype=np.float64)
            if feats.ndim != 2 or feats.shape[0] != n:
                raise ValueError(f"features must have shape ({n}, D), got {feats.shape}")
            norms = np.linalg.norm(feats, axis=1)
            if n and np.max(np.abs(norms - 1.0)) > FEATURE_NORM_TOL:
                raise ValueError("feature vectors must be unit-norm")
            feats.setflags(write=False)
        else:
            feats = None

        pts.setflags(write=False)
        if label_ids is not None:
            label_ids.setflags(write=False)
        self._points = pts
        self._label_ids = label_ids
        self._label_names = tuple(label_names) if label_names is not None else None
        self._features = feats

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def features(self) -> np.ndarray | None:
        return self._features

    @property
    def label_ids(self) -> np.ndarray | None:
        return self._label_ids

    @property
    def label_names(self) -> tuple[str, ...] | None:
        return self._label_names

    @property
    def labels(self) -> list[str] | None:
        if self._label_ids is None:
            return None
        return [self._label_names[i] for i in self._label_ids]

    @property
    def has_labels(self) -> bool:
        return self._label_ids is not None

    @property
    def has_features(self) -> bool:
        return self._features is not None

    def __len__(self) -> int:
        return self._points.shape[0]

    def __repr__(self) -> str:
        extra = []
        if self.has_labels:
            extra.append(f"{len(self._label_names)} labels")
        if self.has_features:
            extra.append(f"D={self._features.shape[1]}")
        return f"PointCloud(n={len(self)}{', ' if extra else ''}{', '.join(extra)})"

    def with_features(self, features: np.ndarray) -> "PointCloud":
        return PointCloud(self._points, features=features, label_ids=self._label_ids, label_names=self._label_names)


# ---------------------------------------------------------------------------
# File formats


def save_ply(cloud: PointCloud, path: str | Path, comments: Sequence[str] = ()) -> None:
    """Write an ASCII PLY with x, y, z and an optional ``label`` index.

    Label names travel as ``comment label <index> <name>`` header lines;
    ``comments`` adds free-form header comments (provenance and the like).
    """
    path = Path(path)
    lines = ["ply", "format ascii 1.0"] + [f"comment {c}" for c in comments]
    if cloud.has_labels:
        for i, name in enumerate(cloud.label_names):
            lines.append(f"comment label {i} {name}")
    lines.append(f"element vertex {len(cloud)}")
    lines += ["property float x", "property float y", "property float z"]
    if cloud.has_labels:
        lines.append("property int label")
    lines.append("end_header")
    body = []
    ids = cloud.label_ids
    for i, (x, y, z) in enumerate(cloud.points):
        row = f"{x:.6f} {y:.6f} {z:.6f}"
        if ids is not None:
            row += f" {ids[i]}"
        body.append(row)
    path.write_text("\n".join(lines + body) + "\n")


def load_ply(path: str | Path, features_meta: str | Path | None = None) -> PointCloud:
    """Read the ASCII PLY subset written by :func:`save_ply`.

    If ``features_meta`` is given (or a ``<stem>.features.json`` file sits next
    to the PLY) per-point features are loaded from the sidecar matrix.
    """
    path = Path(path)
    with path.open() as fh:
        if fh.readline().strip() != "ply":
            raise ValueError(f"{path}: not a PLY file")
        fmt = fh.readline().split()
        if fmt[:2] != ["format", "ascii"]:
            raise ValueError(f"{path}: only ASCII PLY is supported")
        n_vertex = None
        props: list[str] = []
        names: dict[int, str] = {}
        in_vertex = False
        for raw in fh:
            tok = raw.split()
            if not tok:
                continue
            if tok[0] == "end_header":
                break
            if tok[0] == "comment" and len(tok) >= 4 and tok[1] == "label":
                names[int(tok[2])] = " ".join(tok[3:])
            elif tok[0] == "element":
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    n_vertex = int(tok[2])
            elif tok[0] == "property" and in_vertex:
                props.append(tok[-1])
        if n_vertex is None:
            raise ValueError(f"{path}: missing vertex element")
        for axis in ("x", "y", "z"):
            if axis not in props:
                raise ValueError(f"{path}: missing property {axis}")
        data = np.loadtxt(fh, dtype=np.float64, ndmin=2, max_rows=n_vertex) if n_vertex else np.zeros((0, len(props)))
    if data.shape[0] != n_vertex:
        raise ValueError(f"{path}: header declares {n_vertex} vertices, found {data.shape[0]}")
    cols = {p: i for i, p in enumerate(props)}
    pts = data[:, [cols["x"], cols["y"], cols["z"]]]
    label_ids = label_names = None
    if "label" in cols:
        label_ids = data[:, cols["label"]].astype(np.int64)
        top = max(names) + 1 if names else (int(label_ids.max()) + 1 if len(label_ids) else 0)
        label_names = [names.get(i, str(i)) for i in range(top)]

    features = None
    if features_meta is None:
        candidate = path.with_name(path.stem + ".features.json")
        if candidate.exists():
            features_meta = candidate
    if features_meta is not None:
        features = load_features(features_meta)
    return PointCloud(pts, features=features, label_ids=label_ids, label_names=label_names)


def save_features(features: np.ndarray, meta_path: str | Path) -> None:
    """Write row-major little-endian float32 features plus a JSON descriptor."""
    meta_path = Path(meta_path)
    feats = np.ascontiguousarray(features, dtype="<f4")
    bin_path = meta_path.with_suffix(".bin")
    bin_path.write_bytes(feats.tobytes(order="C"))
    meta = {"count": int(feats.shape[0]), "dim": int(feats.shape[1]), "dtype": "float32",
            "endianness": "little", "data": bin_path.name}
    meta_path.write_text(json.dumps(meta, indent=2) + "\n")


def load_features(meta_path: str | Path) -> np.ndarray:
    meta_path = Path(meta_path)
    meta = json.loads(meta_path.read_text())
    if meta.get("endianness", "little") != "little":
        raise ValueError(f"{meta_path}: only little-endian feature files are supported")
    count, dim = int(meta["count"]), int(meta["dim"])
    raw = np.fromfile(meta_path.parent / meta["data"], dtype="<f4")
    if raw.size != count * dim:
        raise ValueError(f"{meta_path}: expected {count}x{dim} floats, found {raw.size}")
    feats = raw.reshape(count, dim).astype(np.float64)
    # float32 storage loses a little norm precision; renormalise
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return feats / norms

"""Chamfer distance between point sets and corpus-level aggregation.

The value is the symmetric sum of mean squared nearest-neighbor distances,
with no square root, so units are meters squared. The production path runs
on the kd-tree; ``chamfer_bruteforce`` is the independent full-scan oracle
used by the tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AlignmentError
from .pointcloud import PointCloudFrame, atomic_write_text
from .spatial import KdTree


def _as_xyz(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] not in (2, 3):
        raise ValueError(f"expected (N, 2) or (N, 3) points, got shape {pts.shape}")
    if pts.shape[1] == 2:
        pts = np.column_stack([pts, np.zeros(len(pts))])
    return pts


def chamfer(p, q) -> float:
    """mean_p min_q |p-q|^2 + mean_q min_p |q-p|^2, both sets non-empty."""
    p = _as_xyz(p)
    q = _as_xyz(q)
    if len(p) == 0 or len(q) == 0:
        raise ValueError("chamfer distance is undefined for empty point sets")
    tree_q = KdTree(q)
    tree_p = KdTree(p)
    term_p = sum(tree_q.nearest_sqdist(pt)[1] for pt in p) / len(p)
    term_q = sum(tree_p.nearest_sqdist(pt)[1] for pt in q) / len(q)
    return term_p + term_q


def chamfer_bruteforce(p, q) -> float:
    """Oracle: same value via the full pairwise squared-distance matrix."""
    p = _as_xyz(p)
    q = _as_xyz(q)
    if len(p) == 0 or len(q) == 0:
        raise ValueError("chamfer distance is undefined for empty point sets")
    d2 = ((p[:, None, :] - q[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


@dataclass(frozen=True)
class ChamferReport:
    per_frame: list[tuple[str, float]]
    mean: float
    count: int

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean": self.mean,
            "per_frame": [{"frame_id": fid, "value": val} for fid, val in self.per_frame],
        }

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        doc = dict(extra or {})
        doc.update(self.to_dict())
        atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def mean_chamfer(frames_a: Sequence[PointCloudFrame],
                 frames_b: Sequence[PointCloudFrame]) -> ChamferReport:
    """Pair frames by frame_id and average their Chamfer distances.

    Ids present on only one side abort with an AlignmentError listing them.
    """
    by_id_b = {f.frame_id: f for f in frames_b}
    ids_a = {f.frame_id for f in frames_a}
    orphans = sorted(ids_a.symmetric_difference(by_id_b))
    if orphans:
        raise AlignmentError(f"unpaired frame ids: {', '.join(orphans)}", orphans=orphans)
    per_frame = []
    for fa in frames_a:
        fb = by_id_b[fa.frame_id]
        try:
            value = chamfer(fa.xyz, fb.xyz)
        except ValueError as exc:
            raise ValueError(f"frame {fa.frame_id!r}: {exc}") from exc
        per_frame.append((fa.frame_id, value))
    mean = float(np.mean([v for _, v in per_frame])) if per_frame else 0.0
    return ChamferReport(per_frame=per_frame, mean=mean, count=len(per_frame))

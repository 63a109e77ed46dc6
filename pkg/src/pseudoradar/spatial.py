"""Static 3-D kd-tree with exact, index-tie-broken nearest neighbors.

Queries agree with the brute-force oracle bit for bit: leaf scans use the
same vectorized squared-distance expression the oracle uses, ties on equal
distance resolve to the lower point index, and subtree pruning is strict so
boundary ties are never lost.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np


@dataclass
class _Node:
    axis: int
    split: float
    left: "_Node | _Leaf"
    right: "_Node | _Leaf"


@dataclass
class _Leaf:
    indices: np.ndarray


class KdTree:
    """Immutable balanced kd-tree over an (N, 3) coordinate array."""

    def __init__(self, points: np.ndarray, leaf_size: int = 32):
        pts = np.asarray(points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"expected (N, 3) points, got shape {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("kd-tree input contains non-finite coordinates")
        self.points = pts
        self.leaf_size = int(leaf_size)
        self._root = self._build(np.arange(len(pts), dtype=np.intp)) if len(pts) else None

    def __len__(self) -> int:
        return len(self.points)

    def _build(self, idx: np.ndarray):
        if len(idx) <= self.leaf_size:
            return _Leaf(idx)
        sub = self.points[idx]
        axis = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
        order = np.argsort(sub[:, axis], kind="stable")
        mid = len(idx) // 2
        idx = idx[order]
        split = float(self.points[idx[mid], axis])
        return _Node(axis, split, self._build(idx[:mid]), self._build(idx[mid:]))

    def k_nearest(
        self, query, k: int, exclude_self: bool = False
    ) -> list[tuple[int, float]]:
        """The min(k, available) nearest points, ascending by (distance, index).

        ``exclude_self`` drops every stored point at distance exactly 0, so a
        query placed on an indexed member skips itself (and any duplicates).
        """
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if self._root is None:
            return []
        q = np.asarray(query, dtype=np.float64).reshape(3)
        qx, qy, qz = float(q[0]), float(q[1]), float(q[2])
        push, replace = heapq.heappush, heapq.heapreplace
        # max-heap of the best candidates, keyed so heap[0] is the worst kept
        heap: list[tuple[float, int]] = []
        # stack entries carry a lower bound on squared distance to the subtree;
        # pruning is strict so an equal-distance, lower-index point is never lost
        stack: list[tuple] = [(self._root, 0.0)]
        while stack:
            node, bound = stack.pop()
            if len(heap) == k and bound > -heap[0][0]:
                continue
            if isinstance(node, _Leaf):
                pts = self.points[node.indices]
                d2s = ((pts - q) ** 2).sum(axis=1).tolist()
                for j, dist2 in zip(node.indices.tolist(), d2s):
                    if exclude_self and dist2 == 0.0:
                        continue
                    if len(heap) < k:
                        push(heap, (-dist2, -j))
                    else:
                        wd2, wj = heap[0]
                        if dist2 < -wd2 or (dist2 == -wd2 and j < -wj):
                            replace(heap, (-dist2, -j))
                continue
            axis = node.axis
            plane = (qx if axis == 0 else qy if axis == 1 else qz) - node.split
            near, far = (node.left, node.right) if plane < 0 else (node.right, node.left)
            fb = plane * plane
            stack.append((far, fb if fb > bound else bound))
            stack.append((near, bound))
        out = sorted((-d2, -j) for d2, j in heap)
        return [(j, float(np.sqrt(d2))) for d2, j in out]

    def nearest_sqdist(self, query) -> tuple[int, float]:
        """Index and squared distance of the single nearest point."""
        if self._root is None:
            raise ValueError("query on an empty tree")
        q = np.asarray(query, dtype=np.float64).reshape(3)
        qx, qy, qz = float(q[0]), float(q[1]), float(q[2])
        best_d2 = np.inf
        best_j = -1
        stack: list[tuple] = [(self._root, 0.0)]
        while stack:
            node, bound = stack.pop()
            if bound > best_d2:
                continue
            if isinstance(node, _Leaf):
                pts = self.points[node.indices]
                d2 = ((pts - q) ** 2).sum(axis=1)
                lo = float(d2.min())
                # leaf order is not index order, so resolve distance ties explicitly
                j = int(node.indices[d2 == lo].min())
                if lo < best_d2 or (lo == best_d2 and j < best_j):
                    best_d2 = lo
                    best_j = j
                continue
            axis = node.axis
            plane = (qx if axis == 0 else qy if axis == 1 else qz) - node.split
            near, far = (node.left, node.right) if plane < 0 else (node.right, node.left)
            fb = plane * plane
            stack.append((far, fb if fb > bound else bound))
            stack.append((near, bound))
        return best_j, best_d2


def brute_force_k_nearest(
    points: np.ndarray, query, k: int, exclude_self: bool = False
) -> list[tuple[int, float]]:
    """Oracle for KdTree.k_nearest: full scan, lexicographic (distance, index)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return []
    q = np.asarray(query, dtype=np.float64).reshape(3)
    d2 = ((pts - q) ** 2).sum(axis=1)
    idx = np.arange(len(pts))
    if exclude_self:
        keep = d2 != 0.0
        d2, idx = d2[keep], idx[keep]
    order = np.lexsort((idx, d2))[:k]
    return [(int(idx[i]), float(np.sqrt(d2[i]))) for i in order]


def thin_redundant(points: np.ndarray, d_threshold: float) -> np.ndarray:
    """Greedy keep-first thinning: scan points in index order, keep a point
    iff it is at least ``d_threshold`` away from every point kept so far.

    Guarantees all pairwise distances among kept points are >= d_threshold
    and is idempotent. Uses a uniform cell grid of pitch d_threshold, so any
    conflicting kept point lies in the 27-cell neighborhood.
    """
    pts = np.asarray(points, dtype=np.float64)
    if d_threshold < 0:
        raise ValueError(f"d_threshold must be >= 0, got {d_threshold}")
    n = len(pts)
    if n == 0 or d_threshold == 0.0:
        return np.arange(n, dtype=np.intp)
    if not np.isfinite(pts).all():
        raise ValueError("thin_redundant input contains non-finite coordinates")
    thr2 = d_threshold * d_threshold
    cells = np.floor(pts / d_threshold).astype(np.int64).tolist()
    coords = pts.tolist()
    # buckets hold kept point coordinates directly; candidates only need them
    grid: dict[tuple[int, int, int], list[list[float]]] = {}
    get = grid.get
    kept: list[int] = []
    neighborhood = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1)
                    for dz in (-1, 0, 1)]
    for i in range(n):
        cx, cy, cz = cells[i]
        x, y, z = coords[i]
        ok = True
        for dx, dy, dz in neighborhood:
            bucket = get((cx + dx, cy + dy, cz + dz))
            if bucket is None:
                continue
            for qx, qy, qz in bucket:
                if (x - qx) ** 2 + (y - qy) ** 2 + (z - qz) ** 2 < thr2:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            kept.append(i)
            grid.setdefault((cx, cy, cz), []).append(coords[i])
    return np.asarray(kept, dtype=np.intp)

"""First-neighbor clustering.

Each point links to its nearest neighbor; connected components of the
resulting relation (i->j when j is i's first neighbor, i is j's, or both
share one) form the finest partition. Re-running on cluster means merges
partitions into a hierarchy until everything collapses to one cluster.
The cluster count at every level is discovered, never prescribed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class FinchResult:
    assignments: np.ndarray  # [n] cluster id per point at the exported level
    centers: np.ndarray  # [K, d] arithmetic mean of each cluster's members
    sizes: np.ndarray  # [K] member counts
    hierarchy: list[np.ndarray]  # per-level assignments, finest first


def first_neighbors(points: np.ndarray) -> np.ndarray:
    """Index of the nearest other point, per point (self for a singleton).

    Ties resolve to the smallest index. Exact O(n^2) search; the point sets
    this runs on are small.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if n == 1:
        return np.array([0])
    diff = pts[:, None, :] - pts[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(sq, np.inf)
    return sq.argmin(axis=1)


def finch_partition(points: np.ndarray, level: int = 0) -> FinchResult:
    """Cluster points and export centers/sizes at one hierarchy level.

    level 0 is the finest partition; levels beyond the hierarchy depth clamp
    to the coarsest (single-cluster) one.
    """
    pts = _as_points(points)
    if level < 0:
        raise ValueError("level must be nonnegative")
    labels = _merge_once(pts)
    hierarchy = [labels]
    while labels.max() + 1 > 1:
        centers, _ = _group_stats(pts, labels)
        merge = _merge_once(centers)
        labels = _canonical(merge[labels])
        hierarchy.append(labels)
    chosen = hierarchy[min(level, len(hierarchy) - 1)]
    centers, sizes = _group_stats(pts, chosen)
    return FinchResult(chosen, centers, sizes, hierarchy)


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a nonempty [n, d] array")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain non-finite entries")
    return pts


def _merge_once(pts: np.ndarray) -> np.ndarray:
    """Connected components of the first-neighbor relation, one merge step."""
    neighbors = first_neighbors(pts)
    parent = np.arange(pts.shape[0])

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in enumerate(neighbors):
        ri, rj = find(i), find(int(j))
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(pts.shape[0])])
    return _canonical(roots)


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Relabel cluster ids to 0..K-1 in order of first occurrence."""
    _, canon = np.unique(labels, return_inverse=True)
    seen: dict[int, int] = {}
    out = np.empty_like(canon)
    for i, c in enumerate(canon):
        if c not in seen:
            seen[c] = len(seen)
        out[i] = seen[c]
    return out


def _group_stats(pts: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = int(labels.max()) + 1
    d = pts.shape[1]
    centers = np.zeros((k, d))
    sizes = np.zeros(k, dtype=np.int64)
    np.add.at(centers, labels, pts)
    np.add.at(sizes, labels, 1)
    centers /= sizes[:, None]
    return centers, sizes

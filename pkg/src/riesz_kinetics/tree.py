"""Array-based octree over particle positions for tree-accelerated sums."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Octree", "build_octree"]


@dataclass(frozen=True)
class Octree:
    """Flat octree: per-node geometry, mass moments, and particle ranges.

    Particles are stored in traversal-sorted order (``xs``, ``ws``);
    ``perm`` maps sorted slots back to original indices.  ``children``
    holds eight child node ids per node, -1 where absent; a node with no
    children is a leaf owning the range ``starts[n]:ends[n]``.
    """

    centers: np.ndarray
    halfs: np.ndarray
    children: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    masses: np.ndarray
    dipoles: np.ndarray
    offsets: np.ndarray
    xs: np.ndarray
    ws: np.ndarray
    perm: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.halfs)


def build_octree(x: np.ndarray, w: np.ndarray, leaf_size: int = 32) -> Octree:
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot build a tree over zero particles")
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    center0 = 0.5 * (lo + hi)
    half0 = 0.5 * float(np.max(hi - lo)) * (1.0 + 1e-9) + 1e-300
    min_half = half0 * 1e-12  # duplicate-position guard

    idx = np.arange(n)
    centers = [center0]
    halfs = [half0]
    ranges = [(0, n)]
    children = [[-1] * 8]
    # iterative split; stack holds node ids pending subdivision
    stack = [0]
    while stack:
        node = stack.pop()
        s, e = ranges[node]
        if e - s <= leaf_size or halfs[node] <= min_half:
            continue
        cx, cy, cz = centers[node]
        sub = idx[s:e]
        pts = x[sub]
        octant = ((pts[:, 0] > cx).astype(np.int64) * 4
                  + (pts[:, 1] > cy).astype(np.int64) * 2
                  + (pts[:, 2] > cz).astype(np.int64))
        order = np.argsort(octant, kind="stable")
        idx[s:e] = sub[order]
        counts = np.bincount(octant, minlength=8)
        h = 0.5 * halfs[node]
        off = s
        for c in range(8):
            if counts[c] == 0:
                continue
            sign = np.array([1.0 if c & 4 else -1.0,
                             1.0 if c & 2 else -1.0,
                             1.0 if c & 1 else -1.0])
            child_id = len(centers)
            centers.append(centers[node] + sign * h)
            halfs.append(h)
            ranges.append((off, off + counts[c]))
            children.append([-1] * 8)
            children[node][c] = child_id
            stack.append(child_id)
            off += counts[c]

    xs = np.ascontiguousarray(x[idx])
    ws = np.ascontiguousarray(w[idx])
    pref_w = np.concatenate([[0.0], np.cumsum(ws)])
    pref_wx = np.concatenate([np.zeros((1, 3)), np.cumsum(ws[:, None] * xs, axis=0)])
    starts = np.array([r[0] for r in ranges], dtype=np.int64)
    ends = np.array([r[1] for r in ranges], dtype=np.int64)
    masses = pref_w[ends] - pref_w[starts]
    first_moment = pref_wx[ends] - pref_wx[starts]
    centers_arr = np.ascontiguousarray(np.array(centers))
    dipoles = np.ascontiguousarray(first_moment - masses[:, None] * centers_arr)
    with np.errstate(invalid="ignore"):
        offsets = np.where(masses > 0.0,
                           np.linalg.norm(dipoles, axis=1) / np.maximum(masses, 1e-300),
                           0.0)
    return Octree(
        centers=centers_arr,
        halfs=np.ascontiguousarray(np.array(halfs)),
        children=np.ascontiguousarray(np.array(children, dtype=np.int64)),
        starts=starts,
        ends=ends,
        masses=np.ascontiguousarray(masses),
        dipoles=dipoles,
        offsets=np.ascontiguousarray(offsets),
        xs=xs,
        ws=ws,
        perm=idx,
    )

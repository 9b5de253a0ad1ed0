"""Cutoff pair lists and angular triplet lists for finite clusters.

Pairs are stored directed (both ``(i, j)`` and ``(j, i)``) and sorted by
center then neighbor, so every per-center sum reads a contiguous slice
``offsets[i]:offsets[i + 1]``.  Displacements point from center to
neighbor: ``vectors = r_j - r_i``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .system import AtomicSystem


@dataclass(frozen=True, eq=False)
class PairList:
    cutoff: float
    n_atoms: int
    i: np.ndarray
    j: np.ndarray
    distances: np.ndarray
    vectors: np.ndarray
    offsets: np.ndarray

    def __len__(self):
        return int(self.i.shape[0])

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def same_pairs(self, other: "PairList") -> bool:
        return (np.array_equal(self.i, other.i) and np.array_equal(self.j, other.j)
                and np.array_equal(self.distances, other.distances)
                and np.array_equal(self.vectors, other.vectors))

    def within(self, cutoff: float) -> np.ndarray:
        return self.distances <= cutoff


@dataclass(frozen=True, eq=False)
class TripletList:
    cutoff: float
    center: np.ndarray
    j: np.ndarray
    k: np.ndarray
    pair_ij: np.ndarray  # index into the parent PairList
    pair_ik: np.ndarray
    theta: np.ndarray

    def __len__(self):
        return int(self.center.shape[0])


def _finish(positions, n, cutoff, i, j) -> PairList:
    order = np.lexsort((j, i))
    i, j = i[order], j[order]
    vec = positions[j] - positions[i]
    dist = np.sqrt(np.einsum("pk,pk->p", vec, vec))
    keep = dist <= cutoff
    i, j, vec, dist = i[keep], j[keep], vec[keep], dist[keep]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(i, minlength=n), out=offsets[1:])
    return PairList(float(cutoff), n, i, j, dist, vec, offsets)


def _positions(system) -> np.ndarray:
    return system.positions if isinstance(system, AtomicSystem) else np.asarray(system, dtype=float)


def build_pairs_bruteforce(system, cutoff: float, chunk: int = 2048) -> PairList:
    """Exact all-pairs scan, O(N^2)."""
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    pos = _positions(system)
    n = len(pos)
    ii, jj = [], []
    for start in range(0, n, chunk):
        block = pos[start:start + chunk]
        diff = pos[None, :, :] - block[:, None, :]
        d = np.sqrt(np.einsum("abk,abk->ab", diff, diff))
        a, b = np.nonzero(d <= cutoff * (1 + 1e-12))
        a = a + start
        keep = a != b
        ii.append(a[keep])
        jj.append(b[keep])
    i = np.concatenate(ii) if ii else np.zeros(0, dtype=np.int64)
    j = np.concatenate(jj) if jj else np.zeros(0, dtype=np.int64)
    return _finish(pos, n, cutoff, i.astype(np.int64), j.astype(np.int64))


_STENCIL = np.array([(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)])


def build_pairs_celllist(system, cutoff: float) -> PairList:
    """Spatial binning with cell edge equal to the cutoff; O(N) at bounded density."""
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    pos = _positions(system)
    n = len(pos)
    if n < 2:
        return _finish(pos, n, cutoff, np.zeros(0, np.int64), np.zeros(0, np.int64))
    lo = pos.min(axis=0)
    cell = np.floor((pos - lo) / cutoff).astype(np.int64)
    dims = cell.max(axis=0) + 1
    key = (cell[:, 0] * dims[1] + cell[:, 1]) * dims[2] + cell[:, 2]
    order = np.argsort(key, kind="stable")
    sorted_keys = key[order]
    ukeys, starts, counts = np.unique(sorted_keys, return_index=True, return_counts=True)

    ii, jj = [], []
    for off in _STENCIL:
        nc = cell + off
        valid = np.all((nc >= 0) & (nc < dims), axis=1)
        nkey = (nc[:, 0] * dims[1] + nc[:, 1]) * dims[2] + nc[:, 2]
        slot = np.searchsorted(ukeys, nkey)
        slot = np.minimum(slot, len(ukeys) - 1)
        valid &= ukeys[slot] == nkey
        src = np.flatnonzero(valid)
        cnt = counts[slot[src]]
        first = starts[slot[src]]
        rep_i = np.repeat(src, cnt)
        within = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        rep_j = order[np.repeat(first, cnt) + within]
        keep = rep_i != rep_j
        ii.append(rep_i[keep])
        jj.append(rep_j[keep])
    i = np.concatenate(ii)
    j = np.concatenate(jj)
    # cheap squared-distance prefilter before the canonical geometry pass
    diff = pos[j] - pos[i]
    close = np.einsum("pk,pk->p", diff, diff) <= cutoff * cutoff * (1 + 1e-12)
    return _finish(pos, n, cutoff, i[close], j[close])


def build_pairs(system, cutoff: float, method: str = "cell") -> PairList:
    if method == "cell":
        return build_pairs_celllist(system, cutoff)
    if method == "brute":
        return build_pairs_bruteforce(system, cutoff)
    raise ValueError(f"unknown neighbor method {method!r}")


def restrict(pairs: PairList, cutoff: float) -> tuple[PairList, np.ndarray]:
    """Sub-list of pairs within a smaller cutoff, plus indices into the parent list."""
    idx = np.flatnonzero(pairs.distances <= cutoff)
    i = pairs.i[idx]
    offsets = np.zeros(pairs.n_atoms + 1, dtype=np.int64)
    np.cumsum(np.bincount(i, minlength=pairs.n_atoms), out=offsets[1:])
    sub = PairList(float(cutoff), pairs.n_atoms, i, pairs.j[idx], pairs.distances[idx],
                   pairs.vectors[idx], offsets)
    return sub, idx


def triplet_angles(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    cross = np.cross(u, w)
    return np.arctan2(np.sqrt(np.einsum("tk,tk->t", cross, cross)), np.einsum("tk,tk->t", u, w))


def build_triplets(pairs: PairList, angular_cutoff: float | None = None) -> TripletList:
    """All unordered neighbor pairs {j, k} (j < k) of each center within the angular cutoff."""
    if angular_cutoff is None:
        angular_cutoff = pairs.cutoff
    if angular_cutoff > pairs.cutoff:
        raise ValueError("angular cutoff exceeds the pair-list cutoff")
    sub = np.flatnonzero(pairs.distances <= angular_cutoff)
    centers = pairs.i[sub]
    m = np.bincount(centers, minlength=pairs.n_atoms)
    starts = np.cumsum(m) - m
    pa, pb = [], []
    for size in np.unique(m[m >= 2]):
        cs = np.flatnonzero(m == size)
        a, b = np.triu_indices(size, 1)
        pa.append((starts[cs][:, None] + a).ravel())
        pb.append((starts[cs][:, None] + b).ravel())
    if pa:
        pa = sub[np.concatenate(pa)]
        pb = sub[np.concatenate(pb)]
        order = np.lexsort((pairs.j[pb], pairs.j[pa], pairs.i[pa]))
        pa, pb = pa[order], pb[order]
    else:
        pa = pb = np.zeros(0, dtype=np.int64)
    theta = triplet_angles(pairs.vectors[pa], pairs.vectors[pb])
    return TripletList(float(angular_cutoff), pairs.i[pa], pairs.j[pa], pairs.j[pb], pa, pb, theta)


@dataclass(frozen=True)
class NeighborStats:
    mean: float
    max: int
    histogram: np.ndarray


def neighbor_stats(pairs: PairList) -> NeighborStats:
    counts = pairs.counts
    if pairs.n_atoms == 0:
        return NeighborStats(0.0, 0, np.zeros(1, dtype=np.int64))
    return NeighborStats(len(pairs) / pairs.n_atoms, int(counts.max()), np.bincount(counts))


def ordered_scatter_add(target: np.ndarray, values: np.ndarray, size: int,
                        deterministic: bool = False) -> np.ndarray:
    """Sum rows of ``values`` into ``size`` bins given by ``target``.

    With ``deterministic`` the contributions to each bin are sorted by value
    before a sequential reduction, so the result depends only on the
    multiset of contributions: relabelling atoms cannot change a bit.
    """
    values = np.asarray(values, dtype=np.float64)
    tail = values.shape[1:]
    width = int(np.prod(tail, dtype=np.int64))
    flat = values.reshape(len(values), width)
    out = np.zeros((size, width))
    if len(values) == 0:
        return out.reshape((size,) + tail)
    if not deterministic:
        bins = (target[:, None] * width + np.arange(width)).ravel()
        out = np.bincount(bins, weights=flat.ravel(), minlength=size * width)
        return out.reshape((size,) + tail)
    bins = (target[:, None] * width + np.arange(width)).ravel()
    v = flat.ravel()
    order = np.lexsort((v, bins))
    b = bins[order]
    starts = np.flatnonzero(np.r_[True, b[1:] != b[:-1]])
    out.ravel()[b[starts]] = np.add.reduceat(v[order], starts)
    return out.reshape((size,) + tail)

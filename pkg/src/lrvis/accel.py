"""Element look-up structures: linear scan, grid table, octree, k-d tree
and k-d forest with bit-packed nodes.

Packed node layout (32-bit word + 32-bit float split):
  bit 31     leaf flag
  bits 29-30 split axis (0=x, 1=y, 2=z), internal nodes only
  bits 0-28  element index (leaf) or left-child node index (internal)
The right child of an internal node is the next slot in the node array;
traversal goes left when p[axis] < split (strict).
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass

import numpy as np

from .lr_core import LRSplineVolume

LEAF_BIT = np.uint32(1 << 31)
AXIS_SHIFT = 29
INDEX_MASK = np.uint32((1 << 29) - 1)
MAX_INDEX = (1 << 29) - 1
FOREST_MAGIC = b"LRKF"
FOREST_VERSION = 1


class LookupError_(Exception):
    """Query point outside the domain or malformed structure."""


class InapplicableError(Exception):
    """Structure cannot represent this dataset (non-dyadic / unaligned)."""


class MalformedPartitionError(Exception):
    """Element set admits no terminating split (not a box partition)."""


# ---------------------------------------------------------------------------
# Linear scan (the oracle)
# ---------------------------------------------------------------------------

class LinearScan:
    """O(N) containment scan; half-open boxes, closed at the domain max."""

    def __init__(self, vol: LRSplineVolume):
        self.lo = vol.element_lo
        self.hi = vol.element_hi
        self.domain = vol.domain

    def lookup(self, p) -> int:
        p = np.asarray(p, dtype=np.float64)
        upper = (p < self.hi) | ((p == self.hi)
                                 & (self.hi == self.domain[:, 1]))
        mask = np.all((self.lo <= p) & upper, axis=1)
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            raise LookupError_(f"point {p} in no element")
        return int(idx[0])

    def lookup_many(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        out = np.full(len(points), -1, dtype=np.int64)
        chunk = max(1, int(2e7 // max(1, len(self.lo))))
        dmax = self.domain[:, 1]
        for s in range(0, len(points), chunk):
            p = points[s:s + chunk, None, :]
            upper = (p < self.hi[None]) | ((p == self.hi[None])
                                           & (self.hi[None] == dmax))
            m = np.all((self.lo[None] <= p) & upper, axis=2)
            hit = np.argmax(m, axis=1)
            hit[~m.any(axis=1)] = -1
            out[s:s + chunk] = hit
        return out


# ---------------------------------------------------------------------------
# Grid table
# ---------------------------------------------------------------------------

class GridTable:
    """Dense cell -> element table; valid only when every element boundary
    lies on the grid (each cell then sits inside exactly one element)."""

    def __init__(self, resolution, domain, table: np.ndarray):
        self.resolution = tuple(int(r) for r in resolution)
        self.domain = domain
        self.table = table        # flat, x-fastest
        # scalar fast path: the point query is one multiply-add per axis
        self._lo = tuple(float(v) for v in domain[:, 0])
        self._scale = tuple(
            r / float(domain[a, 1] - domain[a, 0])
            for a, r in enumerate(self.resolution))

    def lookup(self, p) -> int:
        rx, ry, rz = self.resolution
        sx = (float(p[0]) - self._lo[0]) * self._scale[0]
        sy = (float(p[1]) - self._lo[1]) * self._scale[1]
        sz = (float(p[2]) - self._lo[2]) * self._scale[2]
        if not (0.0 <= sx <= rx and 0.0 <= sy <= ry and 0.0 <= sz <= rz):
            raise LookupError_(f"point {p} outside domain")
        i = min(int(sx), rx - 1)
        j = min(int(sy), ry - 1)
        k = min(int(sz), rz - 1)
        return int(self.table[(k * ry + j) * rx + i])

    def lookup_many(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        res = np.array(self.resolution)
        rel = ((points - self.domain[:, 0])
               / (self.domain[:, 1] - self.domain[:, 0]))
        ijk = np.minimum((rel * res).astype(np.int64), res - 1)
        rx, ry, _ = self.resolution
        flat = (ijk[:, 2] * ry + ijk[:, 1]) * rx + ijk[:, 0]
        return self.table[flat].astype(np.int64)


def finest_grid_resolution(vol: LRSplineVolume,
                           max_cells: int = 4096) -> np.ndarray:
    """Smallest per-axis cell count whose uniform grid contains every
    element boundary; raises InapplicableError when none exists up to
    max_cells (irrational or too fine boundary ratios)."""
    domain = vol.domain
    size = domain[:, 1] - domain[:, 0]
    lo, hi = vol.element_lo, vol.element_hi
    res = np.empty(3, dtype=np.int64)
    for a in range(3):
        bounds = np.unique(np.concatenate([lo[:, a], hi[:, a]]))
        rel = (bounds - domain[a, 0]) / size[a]
        for n in range(1, max_cells + 1):
            s = rel * n
            if np.max(np.abs(s - np.round(s))) <= 1e-9 * n:
                res[a] = n
                break
        else:
            raise InapplicableError(
                f"axis {a}: no uniform grid up to {max_cells} cells hits"
                " every element boundary")
    if int(res.prod()) > 1 << 24:
        raise InapplicableError(
            f"required grid {tuple(res)} exceeds the table budget")
    return res


def build_grid_table(vol: LRSplineVolume, resolution) -> GridTable:
    resolution = (np.full(3, resolution, dtype=np.int64)
                  if np.isscalar(resolution)
                  else np.asarray(resolution, dtype=np.int64))
    domain = vol.domain
    size = domain[:, 1] - domain[:, 0]
    lo, hi = vol.element_lo, vol.element_hi
    for a in range(3):
        bounds = np.unique(np.concatenate([lo[:, a], hi[:, a]]))
        rel = (bounds - domain[a, 0]) / size[a] * resolution[a]
        if np.max(np.abs(rel - np.round(rel))) > 1e-9:
            raise InapplicableError(
                f"axis {a}: element boundary off the {resolution[a]}-cell grid"
                " (a cell would straddle two elements)")
    axes = [domain[a, 0] + (np.arange(resolution[a]) + 0.5)
            / resolution[a] * size[a] for a in range(3)]
    gz, gy, gx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    centers = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    tree = KdForest.build(vol, 1, 1, 1)
    table = tree.lookup_many(centers).astype(np.uint32)
    return GridTable(resolution, domain, table)


# ---------------------------------------------------------------------------
# Octree
# ---------------------------------------------------------------------------

MAX_DYADIC_DEPTH = 32


def _dyadic_ok(values: np.ndarray) -> bool:
    for v in values:
        ok = False
        for i in range(MAX_DYADIC_DEPTH + 1):
            s = v * (1 << i)
            if abs(s - round(s)) <= 1e-12 * (1 << i) + 1e-12:
                ok = True
                break
        if not ok:
            return False
    return True


class Octree:
    """8-way subdivision of the (normalized-dyadic) domain; flat array of
    8-word child groups with the shared leaf-bit convention."""

    def __init__(self, vol: LRSplineVolume):
        self.domain = vol.domain
        self.lo = vol.element_lo
        self.hi = vol.element_hi
        self.children: list[np.ndarray] = []   # each entry: 8 uint32 words
        self.root_word = np.uint32(0)
        self.depth = 0
        self._build(vol)
        self.children = (np.array(self.children, dtype=np.uint32)
                         if self.children
                         else np.zeros((0, 8), dtype=np.uint32))

    def _build(self, vol):
        size = self.domain[:, 1] - self.domain[:, 0]
        for a in range(3):
            rel = np.unique(np.concatenate(
                [self.lo[:, a], self.hi[:, a]]))
            rel = (rel - self.domain[a, 0]) / size[a]
            if not _dyadic_ok(rel):
                raise InapplicableError(
                    f"axis {a}: knot value not a multiple of 1/2^i")
        ids = np.arange(len(self.lo))
        self.root_word = self._node(self.domain[:, 0], self.domain[:, 1],
                                    ids, 0)

    def _node(self, lo, hi, ids, depth) -> np.uint32:
        if depth > MAX_DYADIC_DEPTH:
            raise InapplicableError("octree depth limit exceeded")
        if len(ids) > MAX_INDEX:
            raise InapplicableError("element count exceeds 29-bit payload")
        if len(ids) == 1:
            self.depth = max(self.depth, depth)
            return np.uint32(ids[0]) | LEAF_BIT
        mid = 0.5 * (np.asarray(lo) + np.asarray(hi))
        group_idx = len(self.children)
        self.children.append(np.zeros(8, dtype=np.uint32))
        for oct_i in range(8):
            clo = np.where([oct_i & 1, oct_i & 2, oct_i & 4],
                           mid, lo)
            chi = np.where([oct_i & 1, oct_i & 2, oct_i & 4],
                           hi, mid)
            sub = ids[np.all((self.lo[ids] < chi - 0.0)
                             & (self.hi[ids] > clo + 0.0), axis=1)]
            if len(sub) == 0:
                # region outside all elements (cannot happen for a partition)
                word = np.uint32(0) | LEAF_BIT
            else:
                word = self._node(clo, chi, sub, depth + 1)
            self.children[group_idx][oct_i] = word
        return np.uint32(group_idx)

    def lookup(self, p) -> int:
        p = np.asarray(p, dtype=np.float64)
        if np.any(p < self.domain[:, 0]) or np.any(p > self.domain[:, 1]):
            raise LookupError_(f"point {p} outside domain")
        word = self.root_word
        lo = self.domain[:, 0].copy()
        hi = self.domain[:, 1].copy()
        for _ in range(MAX_DYADIC_DEPTH + 2):
            if word & LEAF_BIT:
                return int(word & INDEX_MASK)
            mid = 0.5 * (lo + hi)
            upper = p >= mid
            oct_i = int(upper[0]) | (int(upper[1]) << 1) | (int(upper[2]) << 2)
            lo = np.where(upper, mid, lo)
            hi = np.where(upper, hi, mid)
            word = self.children[int(word)][oct_i]
        raise LookupError_("octree traversal limit exceeded")

    def lookup_many(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        n = len(points)
        out = np.full(n, -1, dtype=np.int64)
        word = np.full(n, self.root_word, dtype=np.uint32)
        lo = np.broadcast_to(self.domain[:, 0], (n, 3)).copy()
        hi = np.broadcast_to(self.domain[:, 1], (n, 3)).copy()
        active = np.arange(n)
        for _ in range(MAX_DYADIC_DEPTH + 2):
            leaf = (word[active] & LEAF_BIT) != 0
            done = active[leaf]
            out[done] = word[done] & INDEX_MASK
            active = active[~leaf]
            if active.size == 0:
                break
            mid = 0.5 * (lo[active] + hi[active])
            upper = points[active] >= mid
            oct_i = (upper[:, 0].astype(np.int64)
                     | (upper[:, 1].astype(np.int64) << 1)
                     | (upper[:, 2].astype(np.int64) << 2))
            lo[active] = np.where(upper, mid, lo[active])
            hi[active] = np.where(upper, hi[active], mid)
            word[active] = self.children[word[active].astype(np.int64), oct_i]
        return out


def build_octree(vol: LRSplineVolume) -> Octree:
    return Octree(vol)


# ---------------------------------------------------------------------------
# K-d tree / forest
# ---------------------------------------------------------------------------

MAX_KD_DEPTH = 64


class _KdBuilder:
    """Emits depth-balanced k-d trees into shared flat word/split arrays.

    Layout per Alg.-style packing: internal node at slot m has its right
    subtree starting at m+1 and its left-child index in the payload, so
    emission order is parent, right subtree, then left subtree with the
    left pointer patched afterwards.
    """

    def __init__(self, lo: np.ndarray, hi: np.ndarray):
        self.lo = lo
        self.hi = hi
        self.words: list[int] = []
        self.splits: list[float] = []
        self.max_depth_seen = 0

    def build(self, region_lo, region_hi, ids: np.ndarray, depth=0) -> int:
        """Returns the slot index of the subtree root."""
        if depth > MAX_KD_DEPTH:
            raise MalformedPartitionError("k-d recursion depth exceeded")
        if len(self.words) > MAX_INDEX:
            raise MalformedPartitionError("node count exceeds 29-bit payload")
        self.max_depth_seen = max(self.max_depth_seen, depth)
        slot = len(self.words)
        if len(ids) == 1:
            if ids[0] > MAX_INDEX:
                raise MalformedPartitionError(
                    "element index exceeds 29-bit payload")
            self.words.append(int(LEAF_BIT | np.uint32(ids[0])))
            self.splits.append(0.0)
            return slot
        axis, split = self._choose_split(region_lo, region_hi, ids)
        left_ids = ids[self.lo[ids, axis] < split]
        right_ids = ids[self.hi[ids, axis] > split]
        self.words.append(0)        # patched below
        self.splits.append(split)
        rlo = np.array(region_lo, dtype=np.float64)
        rhi = np.array(region_hi, dtype=np.float64)
        lhi, rlo2 = rhi.copy(), rlo.copy()
        lhi[axis] = split
        rlo2[axis] = split
        right_slot = self.build(rlo2, rhi, right_ids, depth + 1)
        assert right_slot == slot + 1
        left_slot = self.build(rlo, lhi, left_ids, depth + 1)
        self.words[slot] = int((np.uint32(axis) << AXIS_SHIFT)
                               | np.uint32(left_slot))
        return slot

    def _choose_split(self, region_lo, region_hi, ids):
        best = None
        for axis in range(3):
            bounds = np.unique(np.concatenate(
                [self.lo[ids, axis], self.hi[ids, axis]]))
            bounds = bounds[(bounds > region_lo[axis])
                            & (bounds < region_hi[axis])]
            if bounds.size == 0:
                continue
            split = float(bounds.mean())
            n_left = int(np.count_nonzero(self.lo[ids, axis] < split))
            n_right = int(np.count_nonzero(self.hi[ids, axis] > split))
            extent = region_hi[axis] - region_lo[axis]
            key = (abs(n_left - n_right), -extent)
            if best is None or key < best[0]:
                best = (key, axis, split)
        if best is None:
            raise MalformedPartitionError(
                "no interior element boundary on any axis with >1 element")
        return best[1], best[2]


@dataclass
class DepthStats:
    min_depth: float
    max_depth: float
    mean_depth: float
    var_depth: float


class KdForest:
    """Regular I x J x K block grid; single-element blocks store the element
    index directly (leaf bit set), others point into a shared node array."""

    def __init__(self, grid_dims, domain, roots: np.ndarray,
                 words: np.ndarray, splits: np.ndarray):
        self.grid_dims = tuple(int(g) for g in grid_dims)
        self.domain = domain
        self.roots = roots          # (I*J*K,) uint32, x-fastest
        self.words = words          # (M,) uint32
        self.splits = splits        # (M,) float32

    @classmethod
    def build(cls, vol: LRSplineVolume, I: int, J: int, K: int) -> "KdForest":
        if min(I, J, K) < 1:
            raise ValueError("forest grid dims must be >= 1")
        lo, hi = vol.element_lo, vol.element_hi
        if len(lo) > MAX_INDEX:
            raise MalformedPartitionError(
                "element count exceeds 29-bit payload")
        domain = vol.domain
        size = domain[:, 1] - domain[:, 0]
        dims = np.array([I, J, K])
        builder = _KdBuilder(lo, hi)
        roots = np.zeros(I * J * K, dtype=np.uint32)
        # per-axis block interval -> intersecting element mask, to avoid a
        # full O(blocks * elements) pass per block
        axis_masks = []
        for a, n in enumerate((I, J, K)):
            edges = domain[a, 0] + np.arange(n + 1) / n * size[a]
            m = (lo[None, :, a] < edges[1:, None]) \
                & (hi[None, :, a] > edges[:-1, None])
            axis_masks.append(m)
        for k in range(K):
            for j in range(J):
                mjk = axis_masks[1][j] & axis_masks[2][k]
                for i in range(I):
                    ids = np.nonzero(axis_masks[0][i] & mjk)[0]
                    flat = (k * J + j) * I + i
                    if ids.size == 0:
                        roots[flat] = LEAF_BIT  # empty block, element 0
                    elif ids.size == 1:
                        roots[flat] = LEAF_BIT | np.uint32(ids[0])
                    else:
                        blo = domain[:, 0] + np.array([i, j, k]) / dims * size
                        bhi = domain[:, 0] + (np.array([i, j, k]) + 1) \
                            / dims * size
                        roots[flat] = np.uint32(
                            builder.build(blo, bhi, ids))
        # Splits are kept in float64 so traversal compares against the
        # exact element boundaries; boundaries such as 1/3 have no float32
        # representation and rounding them would misclassify points that
        # sit exactly on a face.  Serialization narrows to float32.
        return cls((I, J, K), domain,
                   roots,
                   np.array(builder.words, dtype=np.uint32),
                   np.array(builder.splits, dtype=np.float64))

    # -- traversal ------------------------------------------------------

    def _block(self, p):
        dims = np.array(self.grid_dims)
        rel = ((p - self.domain[:, 0])
               / (self.domain[:, 1] - self.domain[:, 0]))
        if np.any(rel < 0) or np.any(rel > 1):
            raise LookupError_(f"point {p} outside domain")
        return np.minimum((rel * dims).astype(np.int64), dims - 1)

    def lookup(self, p) -> int:
        """Packed traversal: fetch the root word of the block containing p;
        while not a leaf, go left when p[axis] < split else advance one
        slot; the payload is the left-child (or element) index."""
        p = np.asarray(p, dtype=np.float64)
        i, j, k = self._block(p)
        I, J, _ = self.grid_dims
        word = self.roots[(k * J + j) * I + i]
        if word & LEAF_BIT:
            return int(word & INDEX_MASK)
        idx = int(word & INDEX_MASK)
        for _ in range(len(self.words) + 1):
            word = self.words[idx]
            if word & LEAF_BIT:
                return int(word & INDEX_MASK)
            axis = int((word >> AXIS_SHIFT) & 0x3)
            if p[axis] < self.splits[idx]:
                idx = int(word & INDEX_MASK)
            else:
                idx += 1
        raise LookupError_("forest traversal limit exceeded")

    def lookup_many(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        n = len(points)
        dims = np.array(self.grid_dims)
        rel = ((points - self.domain[:, 0])
               / (self.domain[:, 1] - self.domain[:, 0]))
        ijk = np.minimum((rel * dims).astype(np.int64), dims - 1)
        I, J, _ = self.grid_dims
        word = self.roots[(ijk[:, 2] * J + ijk[:, 1]) * I + ijk[:, 0]]
        out = np.full(n, -1, dtype=np.int64)
        leaf = (word & LEAF_BIT) != 0
        out[leaf] = word[leaf] & INDEX_MASK
        active = np.nonzero(~leaf)[0]
        idx = (word & INDEX_MASK).astype(np.int64)
        guard = len(self.words) + 1
        for _ in range(guard):
            if active.size == 0:
                break
            w = self.words[idx[active]]
            is_leaf = (w & LEAF_BIT) != 0
            done = active[is_leaf]
            out[done] = w[is_leaf] & INDEX_MASK
            active = active[~is_leaf]
            if active.size == 0:
                break
            w = w[~is_leaf]
            axis = ((w >> AXIS_SHIFT) & 0x3).astype(np.int64)
            splits = self.splits[idx[active]]
            go_left = points[active, axis] < splits
            idx[active] = np.where(go_left,
                                   (w & INDEX_MASK).astype(np.int64),
                                   idx[active] + 1)
        return out

    # -- statistics -----------------------------------------------------

    def block_depths(self) -> np.ndarray:
        """Tree depth per block; direct-index roots count 0."""
        depths = np.zeros(len(self.roots))
        for b, word in enumerate(self.roots):
            if word & LEAF_BIT:
                continue
            depths[b] = self._subtree_depth(int(word & INDEX_MASK), 0)
        return depths

    def _subtree_depth(self, idx: int, depth: int) -> int:
        word = self.words[idx]
        if word & LEAF_BIT:
            return depth
        left = int(word & INDEX_MASK)
        return max(self._subtree_depth(idx + 1, depth + 1),
                   self._subtree_depth(left, depth + 1))

    # -- serialization --------------------------------------------------

    def to_bytes(self) -> bytes:
        I, J, K = self.grid_dims
        head = FOREST_MAGIC + struct.pack("<IIIII", FOREST_VERSION,
                                          I, J, K, len(self.words))
        roots = self.roots.astype("<u4").tobytes()
        nodes = np.empty(len(self.words), dtype=[("r", "<u4"), ("g", "<f4")])
        nodes["r"] = self.words
        nodes["g"] = self.splits
        return head + roots + nodes.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, domain=None) -> "KdForest":
        if data[:4] != FOREST_MAGIC:
            raise ValueError("bad forest magic")
        version, I, J, K, m = struct.unpack("<IIIII", data[4:24])
        if version != FOREST_VERSION:
            raise ValueError(f"unsupported forest version {version}")
        off = 24
        roots = np.frombuffer(data, dtype="<u4", count=I * J * K,
                              offset=off).copy()
        off += 4 * I * J * K
        nodes = np.frombuffer(data, dtype=[("r", "<u4"), ("g", "<f4")],
                              count=m, offset=off)
        if domain is None:
            domain = np.array([[0.0, 1.0]] * 3)
        return cls((I, J, K), domain, roots,
                   nodes["r"].copy(), nodes["g"].astype(np.float64))


def build_kdtree(vol: LRSplineVolume) -> KdForest:
    """Single k-d tree = 1x1x1 forest."""
    return KdForest.build(vol, 1, 1, 1)


def build_kdforest(vol: LRSplineVolume, I=None, J=None, K=None) -> KdForest:
    if I is None:
        n = max(1, len(vol.elements))
        g = int(np.clip(round(n ** (1 / 3)), 1, 512))
        I = J = K = g
    J = I if J is None else J
    K = I if K is None else K
    return KdForest.build(vol, I, J, K)


def depth_stats(forest: KdForest) -> DepthStats:
    d = forest.block_depths()
    return DepthStats(float(d.min()), float(d.max()),
                      float(d.mean()), float(d.var()))


# ---------------------------------------------------------------------------
# Micro-benchmark
# ---------------------------------------------------------------------------

def bench_lookups(vol: LRSplineVolume, structures: dict,
                  sample_count: int = 2000, repetitions: int = 3,
                  seed: int = 12345) -> list[dict]:
    """Median single-query throughput per structure over one fixed
    pseudo-random point sequence; one warm-up pass excluded."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(vol.domain[:, 0], vol.domain[:, 1],
                      size=(sample_count, 3))
    rows = []
    for name, s in structures.items():
        for p in pts[:min(64, sample_count)]:
            s.lookup(p)
        times = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            for p in pts:
                s.lookup(p)
            times.append(time.perf_counter() - t0)
        med = float(np.median(times))
        rows.append({"structure": name,
                     "samples": sample_count,
                     "median_seconds": med,
                     "lookups_per_second": sample_count / med})
    return rows

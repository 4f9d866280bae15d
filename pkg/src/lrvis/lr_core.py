"""Trivariate LR-spline representation, validation and fast evaluation.

A field f: box -> R^n is stored as a list of locally defined B-splines,
each with three local knot vectors of length p_k+2, a coefficient vector
and a positive scaling factor.  For evaluation each element of the box
partition is converted (exact change of basis) to a dense Bernstein
coefficient grid, which is evaluated with De Casteljau's algorithm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

MAX_DEGREE = 10
PARTITION_OF_UNITY_TOL = 1e-9
EXTRACTION_RESIDUAL_TOL = 1e-7


class LRSplineError(Exception):
    """Raised for malformed LR-spline data or failed extraction."""


@dataclass(frozen=True)
class TriDegree:
    p1: int
    p2: int
    p3: int

    def __post_init__(self):
        for p in (self.p1, self.p2, self.p3):
            if not (0 <= p <= MAX_DEGREE):
                raise LRSplineError(f"degree {p} outside [0, {MAX_DEGREE}]")

    def __iter__(self):
        return iter((self.p1, self.p2, self.p3))

    @property
    def max(self) -> int:
        return max(self.p1, self.p2, self.p3)


@dataclass
class LRBSpline:
    """One locally defined B-spline: three local knot vectors, coefficient
    vector in R^n and scaling factor gamma."""

    knots_u: np.ndarray
    knots_v: np.ndarray
    knots_w: np.ndarray
    coef: np.ndarray
    gamma: float = 1.0

    def __post_init__(self):
        self.knots_u = np.asarray(self.knots_u, dtype=np.float64)
        self.knots_v = np.asarray(self.knots_v, dtype=np.float64)
        self.knots_w = np.asarray(self.knots_w, dtype=np.float64)
        self.coef = np.atleast_1d(np.asarray(self.coef, dtype=np.float64))

    def check(self, degrees: TriDegree, index: int | None = None) -> list[str]:
        issues = []
        tag = f"bspline {index}" if index is not None else "bspline"
        for axis, (knots, p) in enumerate(
            zip((self.knots_u, self.knots_v, self.knots_w), degrees)
        ):
            if len(knots) != p + 2:
                issues.append(f"{tag}: axis {axis} knot vector length "
                              f"{len(knots)} != degree+2 = {p + 2}")
                continue
            if np.any(np.diff(knots) < 0):
                issues.append(f"{tag}: axis {axis} knots decreasing")
            if not knots[0] < knots[-1]:
                issues.append(f"{tag}: axis {axis} support has zero width")
        if not self.gamma > 0:
            issues.append(f"{tag}: gamma {self.gamma} not positive")
        return issues

    @property
    def support_lo(self) -> np.ndarray:
        return np.array([self.knots_u[0], self.knots_v[0], self.knots_w[0]])

    @property
    def support_hi(self) -> np.ndarray:
        return np.array([self.knots_u[-1], self.knots_v[-1], self.knots_w[-1]])


@dataclass
class Element:
    """Axis-aligned box of the partition plus the indices of the B-splines
    whose support contains it."""

    lo: np.ndarray
    hi: np.ndarray
    supports: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))


@dataclass
class ValidationReport:
    issues: list[str] = field(default_factory=list)
    worst_unity_residual: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.issues

    def __str__(self):
        if self.ok:
            return "OK"
        return "\n".join(self.issues)


class LRSplineVolume:
    """LR-spline field over an axis-aligned box domain."""

    def __init__(self, degrees: TriDegree, domain, range_dim: int,
                 bsplines: Sequence[LRBSpline],
                 elements: Optional[Sequence[Element]] = None):
        self.degrees = degrees
        self.domain = np.asarray(domain, dtype=np.float64).reshape(3, 2)
        self.range_dim = int(range_dim)
        self.bsplines = list(bsplines)
        self.elements = list(elements) if elements is not None else []
        self._packs: dict[int, _SupportPack] = {}

    # -- cached per-element support data -------------------------------

    def _pack(self, element_id: int) -> "_SupportPack":
        pack = self._packs.get(element_id)
        if pack is None:
            pack = _SupportPack(self, element_id)
            self._packs[element_id] = pack
        return pack

    @property
    def element_lo(self) -> np.ndarray:
        return np.array([e.lo for e in self.elements])

    @property
    def element_hi(self) -> np.ndarray:
        return np.array([e.hi for e in self.elements])

    def min_element_side(self) -> float:
        sides = self.element_hi - self.element_lo
        return float(sides.min())

    def domain_diagonal(self) -> float:
        return float(np.linalg.norm(self.domain[:, 1] - self.domain[:, 0]))


class _SupportPack:
    """Stacked knot/coef arrays for all B-splines supported on one element."""

    def __init__(self, vol: LRSplineVolume, element_id: int):
        el = vol.elements[element_id]
        if not el.supports:
            raise LRSplineError(f"element {element_id} has no supports bound")
        funcs = [vol.bsplines[i] for i in el.supports]
        self.ku = np.array([f.knots_u for f in funcs])
        self.kv = np.array([f.knots_v for f in funcs])
        self.kw = np.array([f.knots_w for f in funcs])
        self.coef = np.array([f.coef for f in funcs])
        self.gamma = np.array([f.gamma for f in funcs])


# ---------------------------------------------------------------------------
# 1D basis evaluation (Cox-de Boor on a local knot vector)
# ---------------------------------------------------------------------------

def _basis_many(knots: np.ndarray, p: int, x: np.ndarray,
                right_closed_at: Optional[float] = None) -> np.ndarray:
    """Cox-de Boor recursion, vectorized over m knot vectors and q points.

    knots: (m, p+2) array, each row one local knot vector.
    x: (q,) points.
    Returns (m, q) basis values.  Supports are half-open [t0, t_last) except
    when ``right_closed_at`` is given: intervals ending exactly there are
    treated as closed (global domain maximum).
    """
    knots = np.asarray(knots, dtype=np.float64)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    m, q = knots.shape[0], x.shape[0]
    t = knots[:, :, None]                      # (m, p+2, 1)
    xx = x[None, None, :]                      # (1, 1, q)
    # degree-0 indicators per knot interval
    N = ((t[:, :-1] <= xx) & (xx < t[:, 1:])).astype(np.float64)  # (m, p+1, q)
    if right_closed_at is not None:
        # at the closing coordinate take the limit from the left: x belongs
        # to (t_lo, t_hi] instead of [t_lo, t_hi)
        from_left = ((t[:, :-1] < xx) & (xx <= t[:, 1:])).astype(np.float64)
        N = np.where(xx == right_closed_at, from_left, N)
    for k in range(1, p + 1):
        denom1 = t[:, k:p + 1] - t[:, 0:p + 1 - k]
        denom2 = t[:, k + 1:p + 2] - t[:, 1:p + 2 - k]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(denom1 > 0, (xx - t[:, 0:p + 1 - k]) / denom1, 0.0)
            b = np.where(denom2 > 0, (t[:, k + 1:p + 2] - xx) / denom2, 0.0)
        N = a * N[:, :p + 1 - k] + b * N[:, 1:p + 2 - k]
    return N[:, 0, :]                          # (m, q)


def eval_bspline_1d(knots, p: int, x: float,
                    right_closed_at: Optional[float] = None) -> float:
    """Value of the single B-spline defined by a local knot vector of
    length p+2 at x.  Zero outside [knots[0], knots[-1])."""
    knots = np.asarray(knots, dtype=np.float64)
    if len(knots) != p + 2:
        raise LRSplineError(f"knot vector length {len(knots)} != p+2")
    return float(_basis_many(knots[None, :], p, np.array([x]),
                             right_closed_at)[0, 0])


# ---------------------------------------------------------------------------
# Element derivation, support binding, validation
# ---------------------------------------------------------------------------

def derive_elements(vol: LRSplineVolume) -> list[Element]:
    """Fallback box partition: full tensor grid of all distinct knot values.

    This is a refinement of the true LR box partition, so evaluation on it
    is still exact.
    """
    if not vol.bsplines:
        raise LRSplineError("cannot derive elements without B-splines")
    axes = []
    for a, attr in enumerate(("knots_u", "knots_v", "knots_w")):
        vals = np.unique(np.concatenate(
            [getattr(f, attr) for f in vol.bsplines]))
        vals = vals[(vals >= vol.domain[a, 0] - 1e-14)
                    & (vals <= vol.domain[a, 1] + 1e-14)]
        axes.append(vals)
    elements = []
    for i in range(len(axes[0]) - 1):
        for j in range(len(axes[1]) - 1):
            for k in range(len(axes[2]) - 1):
                lo = np.array([axes[0][i], axes[1][j], axes[2][k]])
                hi = np.array([axes[0][i + 1], axes[1][j + 1], axes[2][k + 1]])
                elements.append(Element(lo, hi))
    return elements


def bind_supports(vol: LRSplineVolume) -> LRSplineVolume:
    """Fill each element's support list with exactly the B-splines whose
    support box contains the element box (closed containment)."""
    if not vol.elements:
        vol.elements = derive_elements(vol)
    sup_lo = np.array([f.support_lo for f in vol.bsplines])   # (F, 3)
    sup_hi = np.array([f.support_hi for f in vol.bsplines])
    tol = 1e-12 * max(1.0, float(np.abs(vol.domain).max()))
    elo = vol.element_lo
    ehi = vol.element_hi
    chunk = max(1, int(2e7 // max(1, len(vol.bsplines))))
    for start in range(0, len(vol.elements), chunk):
        lo = elo[start:start + chunk, None, :]
        hi = ehi[start:start + chunk, None, :]
        inside = np.all((sup_lo[None] <= lo + tol)
                        & (sup_hi[None] >= hi - tol), axis=2)
        for row, el in enumerate(vol.elements[start:start + chunk]):
            idx = np.nonzero(inside[row])[0]
            if idx.size == 0:
                raise LRSplineError(
                    f"element {start + row} not contained in any support")
            el.supports = idx.tolist()
    vol._packs.clear()
    return vol


def validate(vol: LRSplineVolume) -> ValidationReport:
    """Structured invariant check; reports all violations, never raises."""
    report = ValidationReport()
    for i, f in enumerate(vol.bsplines):
        report.issues.extend(f.check(vol.degrees, i))
        if f.coef.shape[0] != vol.range_dim:
            report.issues.append(
                f"bspline {i}: coef length {f.coef.shape[0]} != range_dim")
    if not vol.elements:
        report.issues.append("no elements")
        return report

    elo, ehi = vol.element_lo, vol.element_hi
    degenerate = np.nonzero(np.any(ehi - elo <= 0, axis=1))[0]
    for i in degenerate:
        report.issues.append(f"element {i}: degenerate (zero extent)")
    if degenerate.size:
        return report

    dlo, dhi = vol.domain[:, 0], vol.domain[:, 1]
    outside = np.nonzero(np.any((elo < dlo - 1e-12) | (ehi > dhi + 1e-12),
                                axis=1))[0]
    for i in outside:
        report.issues.append(f"element {i}: outside domain")

    # box partition: pairwise-disjoint interiors + volume coverage
    n = len(vol.elements)
    chunk = max(1, int(2e7 // max(1, n)))
    for start in range(0, n, chunk):
        lo_i = elo[start:start + chunk, None, :]
        hi_i = ehi[start:start + chunk, None, :]
        inter = np.all((np.maximum(lo_i, elo[None]) <
                        np.minimum(hi_i, ehi[None]) - 0.0), axis=2)
        rows, cols = np.nonzero(inter)
        for r, c in zip(rows, cols):
            if start + r < c:
                report.issues.append(
                    f"elements {start + r} and {c}: overlapping interiors")
    total = float(np.prod(ehi - elo, axis=1).sum())
    dom_vol = float(np.prod(dhi - dlo))
    if abs(total - dom_vol) > 1e-9 * dom_vol:
        report.issues.append(
            f"coverage gap: element volume sum {total} != domain {dom_vol}")

    # partition of unity at element centers
    for i, el in enumerate(vol.elements):
        if not el.supports:
            report.issues.append(f"element {i}: empty support list")
            continue
        pack = vol._pack(i)
        c = el.center
        bu = _basis_many(pack.ku, vol.degrees.p1, c[:1])[:, 0]
        bv = _basis_many(pack.kv, vol.degrees.p2, c[1:2])[:, 0]
        bw = _basis_many(pack.kw, vol.degrees.p3, c[2:3])[:, 0]
        s = float(np.sum(pack.gamma * bu * bv * bw))
        resid = abs(s - 1.0)
        report.worst_unity_residual = max(report.worst_unity_residual, resid)
        if resid > PARTITION_OF_UNITY_TOL:
            report.issues.append(
                f"element {i}: partition of unity residual {resid:.3e}")
    return report


# ---------------------------------------------------------------------------
# LR evaluation
# ---------------------------------------------------------------------------

def eval_lr_batch(vol: LRSplineVolume, element_id: int,
                  points: np.ndarray) -> np.ndarray:
    """Evaluate the field at (q, 3) points inside one element -> (q, n)."""
    if not 0 <= element_id < len(vol.elements):
        raise LRSplineError(f"element id {element_id} out of range")
    pack = vol._pack(element_id)
    el = vol.elements[element_id]
    points = np.atleast_2d(points)
    p1, p2, p3 = vol.degrees
    # close each axis at the element's own upper face so evaluation takes
    # the limit from inside the element (C^-1 bases would otherwise read 0)
    bu = _basis_many(pack.ku, p1, points[:, 0], el.hi[0])
    bv = _basis_many(pack.kv, p2, points[:, 1], el.hi[1])
    bw = _basis_many(pack.kw, p3, points[:, 2], el.hi[2])
    weights = pack.gamma[:, None] * bu * bv * bw          # (m, q)
    return weights.T @ pack.coef                          # (q, n)


def eval_lr(vol: LRSplineVolume, element_id: int, p) -> np.ndarray:
    """Field value at one point inside the given element."""
    return eval_lr_batch(vol, element_id, np.asarray(p, dtype=np.float64))[0]


# ---------------------------------------------------------------------------
# Bezier extraction and evaluation
# ---------------------------------------------------------------------------

@dataclass
class BezierBlock:
    lo: np.ndarray
    hi: np.ndarray
    coef: np.ndarray        # (p1+1, p2+1, p3+1, n), u-fastest when flattened

    def local(self, p) -> np.ndarray:
        return np.clip((np.asarray(p, dtype=np.float64) - self.lo)
                       / (self.hi - self.lo), 0.0, 1.0)


def _bernstein_matrix(p: int) -> np.ndarray:
    """Bernstein-Vandermonde matrix at uniform nodes i/p (0.5 when p=0)."""
    if p == 0:
        return np.array([[1.0]])
    t = np.arange(p + 1) / p
    from math import comb
    j = np.arange(p + 1)
    return (np.array([comb(p, int(k)) for k in j])[None, :]
            * t[:, None] ** j[None, :] * (1 - t[:, None]) ** (p - j[None, :]))


def to_bezier(vol: LRSplineVolume, element_id: int) -> BezierBlock:
    """Exact change of basis of one element's polynomial to the tensor
    Bernstein basis, via interpolation at uniform per-axis nodes."""
    el = vol.elements[element_id]
    p1, p2, p3 = vol.degrees
    nodes = []
    for p, a in zip((p1, p2, p3), range(3)):
        t = np.array([0.5]) if p == 0 else np.arange(p + 1) / p
        nodes.append(el.lo[a] + t * (el.hi[a] - el.lo[a]))
    grid = np.stack(np.meshgrid(*nodes, indexing="ij"), axis=-1)
    pts = grid.reshape(-1, 3)
    vals = eval_lr_batch(vol, element_id, pts)
    n = vol.range_dim
    f = vals.reshape(p1 + 1, p2 + 1, p3 + 1, n)
    # tensor-structured interpolation solve, one axis at a time
    c = f
    for axis, p in enumerate((p1, p2, p3)):
        B = _bernstein_matrix(p)
        c = np.moveaxis(c, axis, 0)
        shape = c.shape
        c = np.linalg.solve(B, c.reshape(shape[0], -1)).reshape(shape)
        c = np.moveaxis(c, 0, axis)
    block = BezierBlock(el.lo.copy(), el.hi.copy(), np.ascontiguousarray(c))
    # residual guard at the interpolation nodes
    back = eval_bezier_batch(block, pts)
    scale = float(np.abs(vals).max() - np.abs(vals).min()) + 1.0
    resid = float(np.abs(back - vals).max())
    if resid > EXTRACTION_RESIDUAL_TOL * scale:
        raise LRSplineError(
            f"extraction residual {resid:.3e} on element {element_id}")
    return block


def _decasteljau_axis(c: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Reduce leading control axis of c (d+1, ..., q, n) at params t (q,)."""
    while c.shape[0] > 1:
        c = (1.0 - t) * c[:-1] + t * c[1:]
    return c[0]


def eval_bezier_batch(block: BezierBlock, points: np.ndarray) -> np.ndarray:
    """De Casteljau evaluation at (q, 3) points -> (q, n)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    t = np.clip((points - block.lo) / (block.hi - block.lo), 0.0, 1.0)
    q = points.shape[0]
    # broadcast a point axis into the coef grid: (p1+1, p2+1, p3+1, q, n)
    c = np.broadcast_to(block.coef[:, :, :, None, :],
                        block.coef.shape[:3] + (q, block.coef.shape[3]))
    c = _decasteljau_axis(c, t[:, 0].reshape(1, 1, q, 1))   # over u
    c = _decasteljau_axis(c, t[:, 1].reshape(1, q, 1))      # over v
    c = _decasteljau_axis(c, t[:, 2].reshape(q, 1))         # over w
    return c


def eval_bezier(block: BezierBlock, p) -> np.ndarray:
    return eval_bezier_batch(block, np.asarray(p, dtype=np.float64))[0]


def eval_bezier_gradient(block: BezierBlock, p):
    """Value and exact gradient (n, 3) via Bernstein coefficient
    differencing, chain-ruled by the box-to-local scaling."""
    pt = np.asarray(p, dtype=np.float64)
    t = block.local(pt)
    c = block.coef
    value = _eval_local(c, t)
    grads = []
    for axis in range(3):
        d = c.shape[axis] - 1
        if d == 0:
            grads.append(np.zeros(c.shape[3]))
            continue
        cm = np.moveaxis(c, axis, 0)
        dc = d * (cm[1:] - cm[:-1])
        dc = np.moveaxis(dc, 0, axis)
        g = _eval_local(dc, t) / (block.hi[axis] - block.lo[axis])
        grads.append(g)
    return value, np.stack(grads, axis=-1)


def _eval_local(c: np.ndarray, t: np.ndarray) -> np.ndarray:
    """De Casteljau at one local point t in [0,1]^3; c is a coef grid."""
    for axis in range(3):
        cm = c
        while cm.shape[0] > 1:
            cm = (1.0 - t[axis]) * cm[:-1] + t[axis] * cm[1:]
        c = cm[0]
    return c


# ---------------------------------------------------------------------------
# Whole-volume Bezier representation
# ---------------------------------------------------------------------------

class BezierVolume:
    """All elements extracted to Bernstein form, with a single dense
    coefficient array (and a 32-bit copy for the low-precision path)."""

    def __init__(self, degrees: TriDegree, domain, range_dim: int,
                 blocks: Sequence[BezierBlock]):
        self.degrees = degrees
        self.domain = np.asarray(domain, dtype=np.float64).reshape(3, 2)
        self.range_dim = range_dim
        self.blocks = list(blocks)
        self.lo = np.array([b.lo for b in blocks])
        self.hi = np.array([b.hi for b in blocks])
        self.coef = np.array([b.coef for b in blocks])
        self.coef32 = self.coef.astype(np.float32)
        self.lo32 = self.lo.astype(np.float32)
        self.hi32 = self.hi.astype(np.float32)

    @classmethod
    def from_lr(cls, vol: LRSplineVolume) -> "BezierVolume":
        blocks = [to_bezier(vol, i) for i in range(len(vol.elements))]
        return cls(vol.degrees, vol.domain, vol.range_dim, blocks)

    def eval(self, element_id: int, p) -> np.ndarray:
        b = self.blocks[element_id]
        return _eval_local(b.coef, b.local(p))

    def eval32(self, element_id: int, p) -> np.ndarray:
        """Single-precision path: 32-bit coefficients, coordinates and
        De Casteljau arithmetic."""
        pt = np.asarray(p, dtype=np.float32)
        lo = self.lo32[element_id]
        hi = self.hi32[element_id]
        t = np.clip((pt - lo) / (hi - lo), np.float32(0), np.float32(1))
        c = self.coef32[element_id]
        one = np.float32(1.0)
        for axis in range(3):
            ta = np.float32(t[axis])
            cm = c
            while cm.shape[0] > 1:
                cm = (one - ta) * cm[:-1] + ta * cm[1:]
            c = cm[0]
        return c

    def gradient(self, element_id: int, p):
        return eval_bezier_gradient(self.blocks[element_id], p)

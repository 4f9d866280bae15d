"""CPU ray caster for LR scalar fields: front-to-back emission/absorption
compositing with opacity correction, transfer-function supersampling,
element-size adaptive stepping, triangle-mesh trimming and diffuse
illumination."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .accel import KdForest
from .lr_core import BezierVolume, TriDegree


# ---------------------------------------------------------------------------
# Transfer function
# ---------------------------------------------------------------------------

class TransferFunction:
    """Piecewise-linear map from scalar value to (r, g, b, alpha); clamps
    outside [keys[0], keys[-1]]."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 5 or pts.shape[0] < 2:
            raise ValueError("need >= 2 control points of (value, r, g, b, a)")
        if np.any(np.diff(pts[:, 0]) <= 0):
            raise ValueError("control point keys must be strictly increasing")
        if np.any(pts[:, 1:] < 0) or np.any(pts[:, 1:] > 1):
            raise ValueError("color/alpha components must lie in [0, 1]")
        self.keys = pts[:, 0]
        self.rgba = pts[:, 1:]

    def __call__(self, values):
        values = np.atleast_1d(np.asarray(values, dtype=np.float64))
        out = np.empty((len(values), 4))
        for c in range(4):
            out[:, c] = np.interp(values, self.keys, self.rgba[:, c])
        return out

    @property
    def range(self):
        return float(self.keys[0]), float(self.keys[-1])


# ---------------------------------------------------------------------------
# Camera
# ---------------------------------------------------------------------------

@dataclass
class Camera:
    eye: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov: float                  # vertical, radians
    width: int
    height: int

    def __post_init__(self):
        self.eye = np.asarray(self.eye, dtype=np.float64)
        self.look_at = np.asarray(self.look_at, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)
        if not 0 < self.fov < np.pi:
            raise ValueError("fov must lie in (0, pi)")
        fwd = self.look_at - self.eye
        n = np.linalg.norm(fwd)
        if n == 0:
            raise ValueError("eye and look_at coincide")
        self._fwd = fwd / n
        right = np.cross(self._fwd, self.up)
        rn = np.linalg.norm(right)
        if rn < 1e-12:
            raise ValueError("up parallel to view direction")
        self._right = right / rn
        self._up = np.cross(self._right, self._fwd)

    def ray(self, px: int, py: int):
        """Primary ray through pixel center; origin, unit direction."""
        tan = np.tan(0.5 * self.fov)
        aspect = self.width / self.height
        x = (2 * (px + 0.5) / self.width - 1) * tan * aspect
        y = (1 - 2 * (py + 0.5) / self.height) * tan
        d = self._fwd + x * self._right + y * self._up
        return self.eye, d / np.linalg.norm(d)


@dataclass
class RenderSettings:
    xi: Optional[float] = None          # standard length; default diag/256
    supersamples: int = 4
    termination_threshold: float = 0.995
    base_step_scale: float = 1.0
    sampling_mode: str = "adaptive"     # "adaptive" | "uniform"
    uniform_step: Optional[float] = None
    lighting: bool = False
    light_dir: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    background: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, 0.0]))
    single_trim_interval: bool = False
    workers: int = 1

    def __post_init__(self):
        self.light_dir = np.asarray(self.light_dir, dtype=np.float64)
        n = np.linalg.norm(self.light_dir)
        if n > 0:
            self.light_dir = self.light_dir / n
        self.background = np.asarray(self.background, dtype=np.float64)
        if self.supersamples < 1:
            raise ValueError("supersamples must be >= 1")
        if not 0 < self.termination_threshold <= 1:
            raise ValueError("termination threshold must lie in (0, 1]")
        if self.xi is not None and self.xi <= 0:
            raise ValueError("xi must be positive")


# ---------------------------------------------------------------------------
# Compositing
# ---------------------------------------------------------------------------

@dataclass
class RaySegmentState:
    C_dst: np.ndarray = field(default_factory=lambda: np.zeros(3))
    alpha_dst: float = 0.0
    t: float = 0.0


def composite_step(state: RaySegmentState, C_src, alpha_src: float,
                   ds: float, xi: float) -> RaySegmentState:
    """One front-to-back step: T = (1-a)^(ds/xi), accumulate color and
    opacity weighted by (1-T)(1-alpha_dst)."""
    if alpha_src >= 1.0:
        T = 0.0
    else:
        T = (1.0 - alpha_src) ** (ds / xi)
    w = (1.0 - T) * (1.0 - state.alpha_dst)
    state.C_dst = state.C_dst + w * np.asarray(C_src, dtype=np.float64)
    state.alpha_dst = state.alpha_dst + w
    return state


def adaptive_step(element_lo, element_hi, degrees: TriDegree,
                  base_step_scale: float = 1.0) -> float:
    """Local sampling distance: smallest box side over 2^d, d the maximal
    per-axis degree, times the configured base scale."""
    d = degrees.max
    side = float(np.min(np.asarray(element_hi) - np.asarray(element_lo)))
    return side / (2 ** d) * base_step_scale


def shade_diffuse(gradient, light_dir) -> float:
    """max(0.4, |l . n|) with n the normalized gradient (0.4 floor when the
    gradient vanishes)."""
    g = np.asarray(gradient, dtype=np.float64).ravel()[:3]
    norm = np.linalg.norm(g)
    if norm < 1e-12:
        return 0.4
    return max(0.4, float(abs(np.dot(light_dir, g / norm))))


# ---------------------------------------------------------------------------
# Trimming
# ---------------------------------------------------------------------------

class TrimMesh:
    """Triangle soup with a binary AABB hierarchy for ray queries."""

    LEAF_SIZE = 8

    def __init__(self, triangles: np.ndarray):
        self.triangles = np.asarray(triangles, dtype=np.float64)
        if not np.all(np.isfinite(self.triangles)):
            raise ValueError("non-finite trim mesh vertices")
        m = len(self.triangles)
        self._nodes = []            # (lo, hi, left, right, start, count)
        self._order = np.arange(m)
        if m:
            lo = self.triangles.min(axis=1)
            hi = self.triangles.max(axis=1)
            cen = 0.5 * (lo + hi)
            self._tri_lo, self._tri_hi, self._cen = lo, hi, cen
            self._build(0, m)

    def _build(self, start, end) -> int:
        idx = self._order[start:end]
        lo = self._tri_lo[idx].min(axis=0)
        hi = self._tri_hi[idx].max(axis=0)
        node = len(self._nodes)
        self._nodes.append([lo, hi, -1, -1, start, end - start])
        if end - start > self.LEAF_SIZE:
            axis = int(np.argmax(hi - lo))
            order = np.argsort(self._cen[idx, axis], kind="stable")
            self._order[start:end] = idx[order]
            mid = (start + end) // 2
            left = self._build(start, mid)
            right = self._build(mid, end)
            self._nodes[node][2] = left
            self._nodes[node][3] = right
            self._nodes[node][5] = 0
        return node

    def candidate_triangles(self, origin, direction) -> np.ndarray:
        """Indices of triangles whose AABB node boxes the ray crosses."""
        if not self._nodes:
            return np.empty(0, dtype=np.int64)
        inv = np.where(direction != 0, 1.0 / np.where(direction == 0, 1.0,
                                                      direction), np.inf)
        out = []
        stack = [0]
        while stack:
            lo, hi, left, right, start, count = self._nodes[stack.pop()]
            t1 = (lo - origin) * inv
            t2 = (hi - origin) * inv
            tmin = np.minimum(t1, t2).max()
            tmax = np.maximum(t1, t2).min()
            if tmax < max(tmin, 0.0):
                continue
            if left < 0:
                out.append(self._order[start:start + count])
            else:
                stack.append(left)
                stack.append(right)
        if not out:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(out)


def _ray_triangles(origin, direction, tris):
    """Moller-Trumbore over (m,3,3) triangles -> (t, sign of dir.normal)."""
    v0, v1, v2 = tris[:, 0], tris[:, 1], tris[:, 2]
    e1 = v1 - v0
    e2 = v2 - v0
    h = np.cross(direction[None, :], e2)
    a = np.einsum("ij,ij->i", e1, h)
    mask = np.abs(a) > 1e-14
    f = np.where(mask, 1.0 / np.where(mask, a, 1.0), 0.0)
    s = origin[None, :] - v0
    u = f * np.einsum("ij,ij->i", s, h)
    q = np.cross(s, e1)
    v = f * np.einsum("ij,ij->i", q, np.broadcast_to(direction, e1.shape))
    t = f * np.einsum("ij,ij->i", e2, q)
    eps = 1e-12
    hit = mask & (u >= -eps) & (v >= -eps) & (u + v <= 1 + eps) & (t > 1e-9)
    n = np.cross(e1, e2)
    facing = np.einsum("ij,j->i", n, direction)
    return t[hit], facing[hit]


def trim_intervals(origin, direction, mesh: TrimMesh,
                   single_interval: bool = False):
    """Ray/mesh in-out intervals: sorted hits paired nearest front-facing
    with the next back-facing hit.  Returns (intervals, odd_warning)."""
    cand = mesh.candidate_triangles(origin, direction)
    if cand.size == 0:
        return [], False
    t, facing = _ray_triangles(origin, direction, mesh.triangles[cand])
    if t.size == 0:
        return [], False
    order = np.argsort(t, kind="stable")
    t = t[order]
    entering = facing[order] < 0      # front-facing: normal opposes the ray
    # collapse coincident hits with the same orientation: rays through a
    # shared triangle edge (e.g. the diagonal of a quad face) report the
    # crossing once per triangle
    if len(t) > 1:
        eps = 1e-9 * max(1.0, float(np.abs(t).max()))
        keep = np.ones(len(t), dtype=bool)
        keep[1:] = (np.diff(t) > eps) | (entering[1:] != entering[:-1])
        t = t[keep]
        entering = entering[keep]
    intervals = []
    warn = False
    i = 0
    while i < len(t):
        if not entering[i]:
            i += 1                    # stray back-face before any entry
            warn = True
            continue
        t_enter = t[i]
        j = i + 1
        while j < len(t) and entering[j]:
            j += 1
        if j == len(t):
            warn = True               # unpaired front hit: drop it
            break
        intervals.append((float(t_enter), float(t[j])))
        i = j + 1
        if single_interval:
            break
    return intervals, warn


def _box_interval(origin, direction, domain):
    inv = np.where(direction != 0,
                   1.0 / np.where(direction == 0, 1.0, direction), np.inf)
    t1 = (domain[:, 0] - origin) * inv
    t2 = (domain[:, 1] - origin) * inv
    tmin = float(np.minimum(t1, t2).max())
    tmax = float(np.maximum(t1, t2).min())
    return max(tmin, 0.0), tmax


# ---------------------------------------------------------------------------
# Ray marching
# ---------------------------------------------------------------------------

class ScalarField:
    """Scalar LR field in Bezier form plus its element-lookup forest."""

    def __init__(self, bezier: BezierVolume, forest: KdForest):
        if bezier.range_dim != 1:
            raise ValueError("volume rendering needs a scalar field")
        self.bezier = bezier
        self.forest = forest
        self.eval_count = 0
        self.lookup_misses = 0

    def element_at(self, p) -> int:
        try:
            return self.forest.lookup(p)
        except Exception:
            return -1

    def sample(self, p, with_gradient: bool = False):
        eid = self.element_at(p)
        if eid < 0:
            self.lookup_misses += 1
            return None
        self.eval_count += 1
        if with_gradient:
            v, g = self.bezier.gradient(eid, p)
            return eid, float(v[0]), g[0]
        return eid, float(self.bezier.eval(eid, p)[0]), None


def march_ray(origin, direction, field_: ScalarField, tf: TransferFunction,
              settings: RenderSettings,
              trim: Optional[TrimMesh] = None) -> np.ndarray:
    """Composite one primary ray front to back; returns RGB in [0,1]."""
    domain = field_.bezier.domain
    xi = settings.xi
    if xi is None:
        xi = float(np.linalg.norm(domain[:, 1] - domain[:, 0])) / 256.0
    t0, t1 = _box_interval(origin, direction, domain)
    if t1 <= t0:
        return settings.background.copy()
    if trim is not None:
        raw, _ = trim_intervals(origin, direction, trim,
                                settings.single_trim_interval)
        intervals = [(max(a, t0), min(b, t1)) for a, b in raw
                     if min(b, t1) > max(a, t0)]
    else:
        intervals = [(t0, t1)]
    state = RaySegmentState()
    K = settings.supersamples
    degrees = field_.bezier.degrees
    threshold = settings.termination_threshold
    eps_t = 1e-9 * max(1.0, t1)
    for (ta, tb) in intervals:
        if state.alpha_dst >= threshold:
            break
        t = ta
        prev = None
        while t < tb - eps_t and state.alpha_dst < threshold:
            p = origin + t * direction
            s = prev if prev is not None else field_.sample(
                p, settings.lighting)
            if s is None:
                t += xi * 0.01 if settings.uniform_step is None \
                    else settings.uniform_step
                prev = None
                continue
            eid, rho0, grad0 = s
            if settings.sampling_mode == "uniform":
                step = settings.uniform_step
                if step is None:
                    step = xi * settings.base_step_scale
            else:
                step = adaptive_step(field_.bezier.lo[eid],
                                     field_.bezier.hi[eid], degrees,
                                     settings.base_step_scale)
            ds = min(step, tb - t)
            pe = origin + (t + ds) * direction
            s_end = field_.sample(pe, settings.lighting)
            if s_end is None:
                rho1, grad1 = rho0, grad0
            else:
                _, rho1, grad1 = s_end
            for k in range(K):
                frac = (k + 0.5) / K
                rho = rho0 + frac * (rho1 - rho0)
                rgba = tf(rho)[0]
                C_src = rgba[:3]
                if settings.lighting:
                    if grad1 is not None and grad0 is not None:
                        g = grad0 + frac * (grad1 - grad0)
                    else:
                        g = grad0 if grad0 is not None else np.zeros(3)
                    C_src = C_src * shade_diffuse(g, settings.light_dir)
                composite_step(state, C_src, float(rgba[3]), ds / K, xi)
                if state.alpha_dst >= threshold:
                    break
            t += ds
            prev = s_end
    state.C_dst = state.C_dst \
        + (1.0 - state.alpha_dst) * settings.background
    state.t = t1
    return np.clip(state.C_dst, 0.0, 1.0)


def render(camera: Camera, field_: ScalarField, tf: TransferFunction,
           settings: RenderSettings,
           trim: Optional[TrimMesh] = None) -> np.ndarray:
    """Deterministic per-pixel march -> (h, w, 3) float image in [0,1]."""
    img = np.empty((camera.height, camera.width, 3))

    def do_row(py: int):
        for px in range(camera.width):
            o, d = camera.ray(px, py)
            img[py, px] = march_ray(o, d, field_, tf, settings, trim)

    if settings.workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            list(pool.map(do_row, range(camera.height)))
    else:
        for py in range(camera.height):
            do_row(py)
    return img

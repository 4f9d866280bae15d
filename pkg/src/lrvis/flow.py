"""Streamline integration over LR vector fields.

Fixed-step, embedded-adaptive and element-size-heuristic Runge-Kutta
methods, single/mixed precision, the global error metric, a work-vs-error
experiment driver and a capsule-based streamline image renderer.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .accel import KdForest
from .lr_core import BezierVolume
from .volren import Camera, adaptive_step

STEP_UNDERFLOW_FACTOR = 1e-14


class IntegrationError(Exception):
    pass


# ---------------------------------------------------------------------------
# Butcher tableaus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ButcherTableau:
    name: str
    a: np.ndarray               # (s, s) strictly lower triangular
    b: np.ndarray               # (s,)
    c: np.ndarray               # (s,)
    order: int
    b_hat: Optional[np.ndarray] = None
    embedded_order: Optional[int] = None

    @property
    def stages(self) -> int:
        return len(self.b)

    @property
    def is_embedded(self) -> bool:
        return self.b_hat is not None


def _tab(name, a, b, c, order, b_hat=None, embedded_order=None):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if abs(b.sum() - 1.0) > 1e-12:
        raise ValueError(f"{name}: weights do not sum to 1")
    if np.any(np.triu(a) != 0):
        raise ValueError(f"{name}: tableau not explicit")
    if b_hat is not None:
        b_hat = np.asarray(b_hat, dtype=np.float64)
        if abs(b_hat.sum() - 1.0) > 1e-12:
            raise ValueError(f"{name}: embedded weights do not sum to 1")
    return ButcherTableau(name, a, b, c, order, b_hat, embedded_order)


_FEHLBERG_A = [
    [0, 0, 0, 0, 0, 0],
    [1 / 4, 0, 0, 0, 0, 0],
    [3 / 32, 9 / 32, 0, 0, 0, 0],
    [1932 / 2197, -7200 / 2197, 7296 / 2197, 0, 0, 0],
    [439 / 216, -8, 3680 / 513, -845 / 4104, 0, 0],
    [-8 / 27, 2, -3544 / 2565, 1859 / 4104, -11 / 40, 0],
]
_FEHLBERG_C = [0, 1 / 4, 3 / 8, 12 / 13, 1, 1 / 2]
_FEHLBERG_B5 = [16 / 135, 0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55]
_FEHLBERG_B4 = [25 / 216, 0, 1408 / 2565, 2197 / 4104, -1 / 5, 0]

_TABLEAUS: dict[str, ButcherTableau] = {}


def _register():
    _TABLEAUS["RK1"] = _tab("RK1", [[0]], [1], [0], 1)
    _TABLEAUS["RK2"] = _tab("RK2", [[0, 0], [1 / 2, 0]], [0, 1],
                            [0, 1 / 2], 2)
    _TABLEAUS["RK3"] = _tab("RK3", [[0, 0, 0], [1 / 2, 0, 0], [-1, 2, 0]],
                            [1 / 6, 2 / 3, 1 / 6], [0, 1 / 2, 1], 3)
    _TABLEAUS["RK4"] = _tab(
        "RK4",
        [[0, 0, 0, 0], [1 / 2, 0, 0, 0], [0, 1 / 2, 0, 0], [0, 0, 1, 0]],
        [1 / 6, 1 / 3, 1 / 3, 1 / 6], [0, 1 / 2, 1 / 2, 1], 4)
    _TABLEAUS["RK4_38"] = _tab(
        "RK4_38",
        [[0, 0, 0, 0], [1 / 3, 0, 0, 0], [-1 / 3, 1, 0, 0], [1, -1, 1, 0]],
        [1 / 8, 3 / 8, 3 / 8, 1 / 8], [0, 1 / 3, 2 / 3, 1], 4)
    _TABLEAUS["RKF5"] = _tab("RKF5", _FEHLBERG_A, _FEHLBERG_B5,
                             _FEHLBERG_C, 5)
    _TABLEAUS["HE"] = _tab("HE", [[0, 0], [1, 0]], [1 / 2, 1 / 2], [0, 1],
                           2, b_hat=[1, 0], embedded_order=1)
    _TABLEAUS["BS"] = _tab(
        "BS",
        [[0, 0, 0, 0], [1 / 2, 0, 0, 0], [0, 3 / 4, 0, 0],
         [2 / 9, 1 / 3, 4 / 9, 0]],
        [2 / 9, 1 / 3, 4 / 9, 0], [0, 1 / 2, 3 / 4, 1], 3,
        b_hat=[7 / 24, 1 / 4, 1 / 3, 1 / 8], embedded_order=2)
    # 5th-order row propagated; the 4th-order row provides the estimate
    _TABLEAUS["RKF45"] = _tab("RKF45", _FEHLBERG_A, _FEHLBERG_B5,
                              _FEHLBERG_C, 5, b_hat=_FEHLBERG_B4,
                              embedded_order=4)


_register()


def tableau(name: str) -> ButcherTableau:
    try:
        return _TABLEAUS[name]
    except KeyError:
        raise KeyError(f"unknown RK method {name!r}; known: "
                       f"{sorted(_TABLEAUS)}") from None


# ---------------------------------------------------------------------------
# Vector field wrapper
# ---------------------------------------------------------------------------

class VectorField:
    """Vector LR field in Bezier form.  Out-of-domain queries clamp to the
    box and set the exit flag; evaluation can run on the 64- or 32-bit
    path."""

    def __init__(self, bezier: BezierVolume, forest: KdForest):
        if bezier.range_dim != 3:
            raise ValueError("streamline tracing needs a 3-vector field")
        self.bezier = bezier
        self.forest = forest
        self.domain = bezier.domain
        self.eval_count = 0
        self.exited = False

    def _clamp(self, p):
        lo, hi = self.domain[:, 0], self.domain[:, 1]
        if np.any(p < lo) or np.any(p > hi):
            self.exited = True
            return np.clip(p, lo, hi)
        return p

    def __call__(self, p, low_precision: bool = False) -> np.ndarray:
        p = self._clamp(np.asarray(p, dtype=np.float64))
        eid = self.forest.lookup(p)
        self.eval_count += 1
        if low_precision:
            return self.bezier.eval32(eid, p).astype(np.float64)
        return self.bezier.eval(eid, p)

    def inside(self, p) -> bool:
        return bool(np.all(p >= self.domain[:, 0])
                    and np.all(p <= self.domain[:, 1]))

    def element_at(self, p) -> int:
        return self.forest.lookup(np.clip(p, self.domain[:, 0],
                                          self.domain[:, 1]))


class AnalyticField:
    """Adapter so integrators also run on closed-form fields in tests."""

    def __init__(self, fn: Callable, domain):
        self.fn = fn
        self.domain = np.asarray(domain, dtype=np.float64).reshape(3, 2)
        self.eval_count = 0
        self.exited = False

    def __call__(self, p, low_precision: bool = False) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        lo, hi = self.domain[:, 0], self.domain[:, 1]
        if np.any(p < lo) or np.any(p > hi):
            self.exited = True
            p = np.clip(p, lo, hi)
        self.eval_count += 1
        if low_precision:
            p32 = p.astype(np.float32)
            return np.asarray(self.fn(p32[None])[0], dtype=np.float32) \
                .astype(np.float64)
        return np.asarray(self.fn(p[None])[0], dtype=np.float64)

    def inside(self, p) -> bool:
        return bool(np.all(p >= self.domain[:, 0])
                    and np.all(p <= self.domain[:, 1]))


# ---------------------------------------------------------------------------
# RK stepping
# ---------------------------------------------------------------------------

def rk_step(field_fn, tab: ButcherTableau, x, h: float,
            precision: str = "mixed"):
    """One explicit RK step.  Returns (x_next, x_embedded_or_None).

    mixed: 64-bit state arithmetic, field evaluations on the 32-bit path.
    single: all arithmetic in 32-bit.
    double: everything 64-bit (used by oracles/tests).
    """
    s = tab.stages
    if precision == "single":
        xw = np.asarray(x, dtype=np.float32)
        hw = np.float32(h)
        k = np.zeros((s, 3), dtype=np.float32)
        a = tab.a.astype(np.float32)
        b = tab.b.astype(np.float32)
        for i in range(s):
            xi = xw.copy()
            for j in range(i):
                if a[i, j] != 0:
                    xi = xi + hw * a[i, j] * k[j]
            val = field_fn(xi, low_precision=True)
            k[i] = np.asarray(val, dtype=np.float32)
        x_next = xw.copy()
        for i in range(s):
            if b[i] != 0:
                x_next = x_next + hw * b[i] * k[i]
        x_emb = None
        if tab.b_hat is not None:
            bh = tab.b_hat.astype(np.float32)
            x_emb = xw.copy()
            for i in range(s):
                if bh[i] != 0:
                    x_emb = x_emb + hw * bh[i] * k[i]
            x_emb = x_emb.astype(np.float64)
        return x_next.astype(np.float64), x_emb

    low = precision == "mixed"
    xw = np.asarray(x, dtype=np.float64)
    k = np.zeros((s, 3), dtype=np.float64)
    for i in range(s):
        xi = xw + h * (tab.a[i, :i] @ k[:i]) if i else xw
        val = field_fn(xi, low_precision=low)
        if not np.all(np.isfinite(val)):
            raise IntegrationError(f"non-finite field value at {xi}")
        k[i] = val
    x_next = xw + h * (tab.b @ k)
    x_emb = xw + h * (tab.b_hat @ k) if tab.b_hat is not None else None
    return x_next, x_emb


# ---------------------------------------------------------------------------
# Streamlines
# ---------------------------------------------------------------------------

@dataclass
class Streamline:
    seed: np.ndarray
    times: np.ndarray
    points: np.ndarray          # (m, 3)
    termination: str            # exited-domain | time-reached | max-samples
                                # | step-underflow

    def sample_at(self, t_query: np.ndarray) -> np.ndarray:
        """Dense output by linear interpolation between accepted steps."""
        t_query = np.atleast_1d(t_query)
        out = np.empty((len(t_query), 3))
        for a in range(3):
            out[:, a] = np.interp(t_query, self.times, self.points[:, a])
        return out


@dataclass
class IntegratorConfig:
    method: str = "RK4"
    mode: str = "fixed"             # fixed | embedded | heuristic
    h0: float = 0.01
    tol: float = 1e-4
    t_max: float = 1.0
    max_samples: int = 10000
    precision: str = "mixed"        # single | mixed | double

    def __post_init__(self):
        if self.mode not in ("fixed", "embedded", "heuristic"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "embedded":
            if self.tol <= 0:
                raise ValueError("tol must be positive")
        elif self.h0 <= 0:
            raise ValueError("h0 must be positive")
        if self.max_samples < 2:
            raise ValueError("max_samples must be >= 2")


def _exit_clip(x_prev, x_next, domain):
    """Linear back-interpolation of the exit point onto the domain box."""
    d = x_next - x_prev
    s = 1.0
    for a in range(3):
        for bound in (domain[a, 0], domain[a, 1]):
            if d[a] != 0:
                si = (bound - x_prev[a]) / d[a]
                if 0.0 <= si < s:
                    cand = x_prev + si * d
                    lo = domain[:, 0] - 1e-12
                    hi = domain[:, 1] + 1e-12
                    if np.all(cand >= lo) and np.all(cand <= hi):
                        s = si
    return x_prev + s * d, s


def integrate(field_, seed, config: IntegratorConfig) -> Streamline:
    """Trace one streamline; terminates on domain exit, time reached,
    sample budget, or step underflow."""
    seed = np.asarray(seed, dtype=np.float64)
    domain = field_.domain
    if not field_.inside(seed):
        raise IntegrationError(f"seed {seed} outside domain")
    tab = tableau(config.method)
    if config.mode == "embedded" and not tab.is_embedded:
        raise IntegrationError(
            f"{config.method} has no embedded error estimate")
    diag = float(np.linalg.norm(domain[:, 1] - domain[:, 0]))
    h_min = STEP_UNDERFLOW_FACTOR * diag
    times = [0.0]
    points = [seed.copy()]
    x = seed.copy()
    t = 0.0
    h = config.h0 if config.mode != "embedded" else min(
        config.h0, config.t_max)
    termination = "max-samples"
    ctrl_p = min(tab.order, tab.embedded_order or tab.order)
    while len(times) < config.max_samples:
        if t >= config.t_max - 1e-15 * config.t_max:
            termination = "time-reached"
            break
        if config.mode == "heuristic":
            eid = field_.element_at(x) if hasattr(field_, "element_at") \
                else None
            if eid is None:
                raise IntegrationError(
                    "heuristic mode needs an element-backed field")
            h = adaptive_step(field_.bezier.lo[eid], field_.bezier.hi[eid],
                              field_.bezier.degrees, config.h0)
        h_step = min(h, config.t_max - t)
        if h_step < h_min:
            # a vanishing remainder right at t_max is normal completion
            termination = "time-reached" \
                if config.t_max - t < h_min else "step-underflow"
            break
        field_.exited = False
        x_next, x_emb = rk_step(field_, tab, x, h_step, config.precision)
        if config.mode == "embedded":
            err = float(np.linalg.norm(x_next - x_emb))
            if err > config.tol:
                h = h_step * float(np.clip(
                    0.9 * (config.tol / err) ** (1.0 / ctrl_p), 0.2, 5.0))
                continue
            # accepted: grow the step for the next attempt
            safety = 0.9 * (config.tol / max(err, 1e-300)) ** (1.0 / ctrl_p)
            h = h_step * float(np.clip(safety, 0.2, 5.0))
        if not field_.inside(x_next):
            x_exit, frac = _exit_clip(x, x_next, domain)
            if frac > 0.0:     # keep times strictly increasing
                times.append(t + frac * h_step)
                points.append(x_exit)
            termination = "exited-domain"
            break
        t += h_step
        x = x_next
        times.append(t)
        points.append(x.copy())
    else:
        termination = "max-samples"
    return Streamline(seed, np.array(times), np.array(points), termination)


def integrate_all(field_, seeds, config: IntegratorConfig) -> list[Streamline]:
    return [integrate(field_, s, config) for s in np.atleast_2d(seeds)]


# ---------------------------------------------------------------------------
# Error metric and reference solution
# ---------------------------------------------------------------------------

def error_metric(approx: Sequence[Streamline],
                 reference: Sequence[Streamline]) -> float:
    """max over streamlines of sum_i dt_i * ||x(t_i) - y(t_i)||, evaluated
    on each approximate streamline's own time grid with the reference
    resampled by linear interpolation."""
    if len(approx) != len(reference):
        raise ValueError("streamline sets differ in size")
    worst = 0.0
    for sl_a, sl_r in zip(approx, reference):
        if not np.allclose(sl_a.seed, sl_r.seed):
            raise ValueError("mismatched seeds between sets")
        t = sl_a.times
        if len(t) < 2:
            continue
        ref = sl_r.sample_at(t)
        dev = np.linalg.norm(sl_a.points - ref, axis=1)
        dt = np.diff(t, prepend=0.0)
        worst = max(worst, float(np.sum(dt * dev)))
    return worst


def reference_solution(field_, seeds, t_max: float,
                       h_ref: Optional[float] = None,
                       min_element_side: Optional[float] = None
                       ) -> list[Streamline]:
    """Fixed-step RKF5 at 1/64 of the smallest element side, mixed
    precision."""
    if h_ref is None:
        if min_element_side is None:
            sides = field_.bezier.hi - field_.bezier.lo
            min_element_side = float(sides.min())
        h_ref = min_element_side / 64.0
    cfg = IntegratorConfig(method="RKF5", mode="fixed", h0=h_ref,
                           t_max=t_max,
                           max_samples=int(np.ceil(t_max / h_ref)) + 8,
                           precision="mixed")
    return integrate_all(field_, seeds, cfg)


def efficiency_experiment(field_, seeds, methods: Sequence[dict],
                          reference: Sequence[Streamline],
                          t_max: float) -> list[dict]:
    """Sweeps tolerance (embedded) or base step (fixed/heuristic) per
    method spec {name, mode, values, precision?}; records work (field
    evaluations) and the global error metric."""
    rows = []
    for spec in methods:
        for value in spec["values"]:
            cfg = IntegratorConfig(
                method=spec["name"], mode=spec["mode"],
                h0=value if spec["mode"] != "embedded" else 0.1 * t_max,
                tol=value if spec["mode"] == "embedded" else 1e-4,
                t_max=t_max,
                max_samples=int(spec.get("max_samples", 200000)),
                precision=spec.get("precision", "mixed"))
            before = field_.eval_count
            lines = integrate_all(field_, seeds, cfg)
            work = field_.eval_count - before
            rows.append({"method": spec["name"], "mode": spec["mode"],
                         "param": value, "field_evals": work,
                         "error": error_metric(lines, reference)})
    return rows


def experiment_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["method", "mode", "param",
                                        "field_evals", "error"])
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Streamline export
# ---------------------------------------------------------------------------

def streamlines_to_json(lines: Sequence[Streamline]) -> list[dict]:
    return [{"seed": sl.seed.tolist(),
             "termination": sl.termination,
             "samples": [{"t": float(t), "x": float(p[0]),
                          "y": float(p[1]), "z": float(p[2])}
                         for t, p in zip(sl.times, sl.points)]}
            for sl in lines]


# ---------------------------------------------------------------------------
# Capsule rendering
# ---------------------------------------------------------------------------

def _speed_colormap(t: np.ndarray) -> np.ndarray:
    """Blue (slow) to red (fast) through white."""
    t = np.clip(t, 0.0, 1.0)
    r = np.clip(2 * t, 0, 1)
    b = np.clip(2 * (1 - t), 0, 1)
    g = np.clip(1 - np.abs(2 * t - 1), 0, 1) * 0.6
    return np.stack([r, g, b], axis=-1)


def _ray_capsules(origin, direction, p0, p1, radius):
    """Nearest-hit t and segment index against (m,3)+(m,3) capsules."""
    d = direction
    seg = p1 - p0                               # (m,3)
    seg_len2 = np.einsum("ij,ij->i", seg, seg)
    seg_len2 = np.where(seg_len2 > 0, seg_len2, 1.0)
    best_t = np.inf
    best = -1
    best_n = None
    m = len(p0)
    # cylinder part: solve per segment (small m, vectorized quadratic)
    oc = origin[None, :] - p0                   # (m,3)
    dd = np.broadcast_to(d, (m, 3))
    d_par = np.einsum("ij,ij->i", dd, seg)[:, None] * seg / seg_len2[:, None]
    d_perp = dd - d_par
    oc_par = np.einsum("ij,ij->i", oc, seg)[:, None] * seg / seg_len2[:, None]
    oc_perp = oc - oc_par
    A = np.einsum("ij,ij->i", d_perp, d_perp)
    B = 2 * np.einsum("ij,ij->i", d_perp, oc_perp)
    C = np.einsum("ij,ij->i", oc_perp, oc_perp) - radius * radius
    disc = B * B - 4 * A * C
    ok = (disc >= 0) & (A > 1e-14)
    t_cyl = np.where(ok, (-B - np.sqrt(np.abs(disc))) / (2 * np.where(
        A > 1e-14, A, 1.0)), np.inf)
    # restrict to the finite cylinder span
    t_fin = np.where(np.isfinite(t_cyl), t_cyl, 0.0)
    hitp = origin[None, :] + t_fin[:, None] * dd
    u = np.einsum("ij,ij->i", hitp - p0, seg) / seg_len2
    valid = ok & (t_cyl > 1e-9) & (u >= 0) & (u <= 1)
    if np.any(valid):
        i = int(np.argmin(np.where(valid, t_cyl, np.inf)))
        best_t = float(t_cyl[i])
        best = i
        axis_pt = p0[i] + u[i] * seg[i]
        best_n = (hitp[i] - axis_pt) / radius
    # sphere caps at both endpoints
    for centers in (p0, p1):
        oc2 = origin[None, :] - centers
        b2 = np.einsum("ij,j->i", oc2, d)
        c2 = np.einsum("ij,ij->i", oc2, oc2) - radius * radius
        disc2 = b2 * b2 - c2
        ok2 = disc2 >= 0
        t_s = np.where(ok2, -b2 - np.sqrt(np.abs(disc2)), np.inf)
        valid2 = ok2 & (t_s > 1e-9)
        if np.any(valid2):
            i = int(np.argmin(np.where(valid2, t_s, np.inf)))
            if t_s[i] < best_t:
                best_t = float(t_s[i])
                best = i
                hp = origin + best_t * d
                best_n = (hp - centers[i]) / radius
    return best_t, best, best_n


def render_streamlines(lines: Sequence[Streamline], field_,
                       camera: Camera, tube_radius: float,
                       background=(1.0, 1.0, 1.0),
                       light_dir=(0.3, 0.4, 1.0)) -> np.ndarray:
    """Ray-cast each polyline segment as a capsule; color by local speed
    ||f(x)|| over the observed speed range, simple diffuse shading."""
    img = np.empty((camera.height, camera.width, 3))
    img[:] = np.asarray(background, dtype=np.float64)
    if not lines:
        return img
    p0 = np.concatenate([sl.points[:-1] for sl in lines
                         if len(sl.points) > 1])
    p1 = np.concatenate([sl.points[1:] for sl in lines
                         if len(sl.points) > 1])
    if len(p0) == 0:
        return img
    speeds = np.linalg.norm(
        np.array([field_(0.5 * (a + b)) for a, b in zip(p0, p1)]), axis=1)
    smin, smax = float(speeds.min()), float(speeds.max())
    srange = smax - smin if smax > smin else 1.0
    colors = _speed_colormap((speeds - smin) / srange)
    ldir = np.asarray(light_dir, dtype=np.float64)
    ldir = ldir / np.linalg.norm(ldir)
    for py in range(camera.height):
        for px in range(camera.width):
            o, d = camera.ray(px, py)
            t, seg, n = _ray_capsules(o, d, p0, p1, tube_radius)
            if seg >= 0 and np.isfinite(t):
                shade = 0.3 + 0.7 * abs(float(np.dot(n, ldir)))
                img[py, px] = np.clip(colors[seg] * shade, 0, 1)
    return img

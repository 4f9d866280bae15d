"""Readers/writers (dataset JSON, STL, PPM/PNG) and synthetic dataset
generation with analytic ground truth."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .lr_core import (Element, LRBSpline, LRSplineError, LRSplineVolume,
                      TriDegree, bind_supports, derive_elements, validate)


# ---------------------------------------------------------------------------
# Analytic fields (ground truth for generated datasets)
# ---------------------------------------------------------------------------

def field_linear_ramp(axis: int = 0, scale: float = 1.0) -> Callable:
    def f(p):
        p = np.atleast_2d(p)
        return (scale * p[:, axis])[:, None]
    return f


def field_rotational(center=(0.0, 0.0, 0.0), omega: float = 1.0) -> Callable:
    """f = omega * (-(y-cy), x-cx, 0): circular flow about a vertical axis."""
    c = np.asarray(center, dtype=np.float64)
    def f(p):
        p = np.atleast_2d(p)
        out = np.zeros_like(p)
        out[:, 0] = -omega * (p[:, 1] - c[1])
        out[:, 1] = omega * (p[:, 0] - c[0])
        return out
    return f


def field_gaussian_bump(center=(0.5, 0.5, 0.5), width: float = 0.15,
                        amplitude: float = 1.0) -> Callable:
    c = np.asarray(center, dtype=np.float64)
    def f(p):
        p = np.atleast_2d(p)
        r2 = np.sum((p - c) ** 2, axis=1)
        return (amplitude * np.exp(-r2 / (2 * width * width)))[:, None]
    return f


ANALYTIC_FIELDS = {
    "linear_ramp": field_linear_ramp,
    "rotational": field_rotational,
    "gaussian_bump": field_gaussian_bump,
}


@dataclass
class SyntheticSpec:
    kind: str                       # uniform | dyadic-multiscale | non-dyadic
    levels: int = 0
    degrees: TriDegree = field(default_factory=lambda: TriDegree(2, 2, 2))
    range_dim: int = 1
    domain: np.ndarray = field(
        default_factory=lambda: np.array([[0.0, 1.0]] * 3))
    segments: int = 2               # uniform grid segments per axis
    field_name: str = "gaussian_bump"
    field_args: dict = field(default_factory=dict)
    hot_corner: tuple = (0.0, 0.0, 0.0)   # refinement attractor

    def analytic(self) -> Callable:
        return ANALYTIC_FIELDS[self.field_name](**self.field_args)


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

def _clamped_knots(a: float, b: float, nseg: int, p: int,
                   breaks: Optional[np.ndarray] = None) -> np.ndarray:
    if breaks is None:
        breaks = np.linspace(a, b, nseg + 1)
    return np.concatenate([[breaks[0]] * p, breaks, [breaks[-1]] * p])


def _greville(knots: np.ndarray, p: int) -> np.ndarray:
    n = len(knots) - p - 1
    if p == 0:
        return 0.5 * (knots[:-1] + knots[1:])
    return np.array([knots[i + 1:i + p + 1].mean() for i in range(n)])


def generate_uniform(spec: SyntheticSpec,
                     breaks_per_axis=None) -> LRSplineVolume:
    """Tensor-product patch re-expressed as LR B-splines (local knot
    windows of a clamped global vector, gamma = 1).  Coefficients sample
    the analytic field at Greville points, so degree <= p polynomial
    fields are reproduced exactly."""
    p1, p2, p3 = spec.degrees
    dom = spec.domain
    knots = []
    for a, p in enumerate((p1, p2, p3)):
        br = None if breaks_per_axis is None else breaks_per_axis[a]
        knots.append(_clamped_knots(dom[a, 0], dom[a, 1], spec.segments,
                                    p, br))
    counts = [len(k) - p - 1 for k, p in zip(knots, (p1, p2, p3))]
    grev = [_greville(k, p) for k, p in zip(knots, (p1, p2, p3))]
    f = spec.analytic()
    bsplines = []
    for k in range(counts[2]):
        for j in range(counts[1]):
            for i in range(counts[0]):
                pt = np.array([[grev[0][i], grev[1][j], grev[2][k]]])
                coef = f(pt)[0]
                if coef.shape[0] != spec.range_dim:
                    coef = np.resize(coef, spec.range_dim)
                bsplines.append(LRBSpline(
                    knots[0][i:i + p1 + 2],
                    knots[1][j:j + p2 + 2],
                    knots[2][k:k + p3 + 2],
                    coef, 1.0))
    vol = LRSplineVolume(spec.degrees, dom, spec.range_dim, bsplines)
    bind_supports(vol)
    return vol


def _bernstein_bsplines_for_box(lo, hi, degrees: TriDegree,
                                coefs: np.ndarray) -> list[LRBSpline]:
    """Per-element Bernstein basis written as LR B-splines: local knot
    vectors with full end multiplicity already reproduce the binomial
    weights, so gamma = 1 preserves partition of unity."""
    p1, p2, p3 = degrees
    out = []
    def knot(a, b, p, i):
        return np.array([a] * (p + 1 - i) + [b] * (i + 1), dtype=np.float64)
    for k in range(p3 + 1):
        for j in range(p2 + 1):
            for i in range(p1 + 1):
                out.append(LRBSpline(
                    knot(lo[0], hi[0], p1, i),
                    knot(lo[1], hi[1], p2, j),
                    knot(lo[2], hi[2], p3, k),
                    coefs[i, j, k], 1.0))
    return out


def _interpolate_bernstein(lo, hi, degrees: TriDegree, f,
                           range_dim: int) -> np.ndarray:
    """Bernstein coefficients of the polynomial interpolating f at uniform
    nodes on the box -> (p1+1, p2+1, p3+1, n)."""
    from .lr_core import _bernstein_matrix
    p1, p2, p3 = degrees
    nodes = []
    for a, p in enumerate((p1, p2, p3)):
        t = np.array([0.5]) if p == 0 else np.arange(p + 1) / p
        nodes.append(lo[a] + t * (hi[a] - lo[a]))
    grid = np.stack(np.meshgrid(*nodes, indexing="ij"), axis=-1)
    vals = f(grid.reshape(-1, 3))
    if vals.shape[1] != range_dim:
        vals = np.broadcast_to(vals, (vals.shape[0], range_dim))
    c = vals.reshape(p1 + 1, p2 + 1, p3 + 1, range_dim).astype(np.float64)
    for axis, p in enumerate((p1, p2, p3)):
        B = _bernstein_matrix(p)
        c = np.moveaxis(c, axis, 0)
        shape = c.shape
        c = np.linalg.solve(B, c.reshape(shape[0], -1)).reshape(shape)
        c = np.moveaxis(c, 0, axis)
    return c


def generate_dyadic_multiscale(spec: SyntheticSpec) -> LRSplineVolume:
    """Adaptive dyadic refinement toward ``hot_corner``: an initial 2x2x2
    split, then ``levels`` successive 8-way splits of the element nearest
    the attractor.  Elements carry their own Bernstein-form B-splines with
    coefficients interpolating the analytic field, so ground truth is
    known (and exact for polynomial fields)."""
    dom = spec.domain
    size = dom[:, 1] - dom[:, 0]
    boxes = []
    for oct_i in range(8):
        off = np.array([oct_i & 1, (oct_i >> 1) & 1, (oct_i >> 2) & 1])
        lo = dom[:, 0] + off * size / 2
        boxes.append((lo, lo + size / 2))
    target = dom[:, 0] + np.asarray(spec.hot_corner) * size
    for _ in range(spec.levels):
        centers = np.array([0.5 * (lo + hi) for lo, hi in boxes])
        idx = int(np.argmin(np.sum((centers - target) ** 2, axis=1)))
        lo, hi = boxes.pop(idx)
        mid = 0.5 * (lo + hi)
        for oct_i in range(8):
            off = np.array([oct_i & 1, (oct_i >> 1) & 1, (oct_i >> 2) & 1])
            clo = np.where(off, mid, lo)
            chi = np.where(off, hi, mid)
            boxes.append((clo, chi))
    f = spec.analytic()
    bsplines = []
    elements = []
    for lo, hi in boxes:
        coefs = _interpolate_bernstein(lo, hi, spec.degrees, f,
                                       spec.range_dim)
        first = len(bsplines)
        bsplines.extend(_bernstein_bsplines_for_box(lo, hi, spec.degrees,
                                                    coefs))
        elements.append(Element(lo, hi,
                                list(range(first, len(bsplines)))))
    return LRSplineVolume(spec.degrees, dom, spec.range_dim,
                          bsplines, elements)


def generate_non_dyadic(spec: SyntheticSpec) -> LRSplineVolume:
    """Uniform-style patch with knot lines at multiples of 1/3 and 1/7 to
    exercise the grid-table and octree applicability gates."""
    dom = spec.domain
    breaks = []
    for a in range(3):
        rel = np.array([0.0, 1 / 3, 1 / 3 + 1 / 7, 2 / 3, 1.0])
        breaks.append(dom[a, 0] + rel * (dom[a, 1] - dom[a, 0]))
    sub = SyntheticSpec(kind="uniform", degrees=spec.degrees,
                        range_dim=spec.range_dim, domain=spec.domain,
                        segments=4, field_name=spec.field_name,
                        field_args=spec.field_args)
    return generate_uniform(sub, breaks_per_axis=breaks)


def generate_synthetic(spec: SyntheticSpec) -> LRSplineVolume:
    if spec.kind == "uniform":
        return generate_uniform(spec)
    if spec.kind == "dyadic-multiscale":
        return generate_dyadic_multiscale(spec)
    if spec.kind == "non-dyadic":
        return generate_non_dyadic(spec)
    raise ValueError(f"unknown synthetic kind {spec.kind!r}")


def spec_from_json(doc: dict) -> SyntheticSpec:
    deg = doc.get("degrees", [2, 2, 2])
    kw = dict(kind=doc["kind"],
              levels=int(doc.get("levels", 0)),
              degrees=TriDegree(*deg),
              range_dim=int(doc.get("range_dim", 1)),
              segments=int(doc.get("segments", 2)),
              field_name=doc.get("field_name",
                                 doc.get("field", "gaussian_bump")),
              field_args=doc.get("field_args", {}))
    if "domain" in doc:
        kw["domain"] = np.asarray(doc["domain"], dtype=np.float64)
    if "hot_corner" in doc:
        kw["hot_corner"] = tuple(doc["hot_corner"])
    return SyntheticSpec(**kw)


# ---------------------------------------------------------------------------
# Dataset JSON
# ---------------------------------------------------------------------------

def volume_to_json(vol: LRSplineVolume) -> dict:
    return {
        "degrees": list(vol.degrees),
        "domain": vol.domain.tolist(),
        "range_dim": vol.range_dim,
        "bsplines": [
            {"knots_u": f.knots_u.tolist(),
             "knots_v": f.knots_v.tolist(),
             "knots_w": f.knots_w.tolist(),
             "coef": f.coef.tolist(),
             "gamma": f.gamma}
            for f in vol.bsplines],
        "elements": [
            {"lo": e.lo.tolist(), "hi": e.hi.tolist()}
            for e in vol.elements],
    }


def volume_from_json(doc: dict) -> LRSplineVolume:
    degrees = TriDegree(*doc["degrees"])
    bsplines = []
    for i, b in enumerate(doc["bsplines"]):
        try:
            bsplines.append(LRBSpline(b["knots_u"], b["knots_v"],
                                      b["knots_w"], b["coef"],
                                      float(b.get("gamma", 1.0))))
        except (KeyError, ValueError) as exc:
            raise LRSplineError(f"bspline {i}: {exc}") from exc
    elements = None
    if "elements" in doc and doc["elements"]:
        elements = [Element(e["lo"], e["hi"]) for e in doc["elements"]]
    vol = LRSplineVolume(degrees, doc["domain"], int(doc["range_dim"]),
                         bsplines, elements)
    return vol


def save_dataset(vol: LRSplineVolume, path) -> None:
    with open(path, "w") as fh:
        json.dump(volume_to_json(vol), fh)


def load_dataset(path, validate_data: bool = True) -> LRSplineVolume:
    with open(path) as fh:
        doc = json.load(fh)
    vol = volume_from_json(doc)
    bind_supports(vol)
    if validate_data:
        report = validate(vol)
        if not report.ok:
            raise LRSplineError("invalid dataset:\n" + str(report))
    return vol


# ---------------------------------------------------------------------------
# STL
# ---------------------------------------------------------------------------

@dataclass
class StlMesh:
    triangles: np.ndarray       # (m, 3, 3)
    dropped_degenerate: int = 0

    @property
    def bounds(self):
        v = self.triangles.reshape(-1, 3)
        return v.min(axis=0), v.max(axis=0)


def _drop_degenerate(tris: np.ndarray) -> tuple[np.ndarray, int]:
    if len(tris) == 0:
        return tris, 0
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    area2 = np.linalg.norm(n, axis=1)
    keep = area2 > 0
    return tris[keep], int(np.count_nonzero(~keep))


def load_stl(path) -> StlMesh:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5].lower() == b"solid" and b"facet" in data[:4096]:
        try:
            return _parse_ascii_stl(data.decode("ascii", errors="strict"))
        except UnicodeDecodeError:
            pass
    return _parse_binary_stl(data)


def _parse_binary_stl(data: bytes) -> StlMesh:
    if len(data) < 84:
        raise ValueError("truncated STL file")
    (count,) = struct.unpack_from("<I", data, 80)
    need = 84 + 50 * count
    if len(data) < need:
        raise ValueError(f"STL record count {count} exceeds file size")
    rec = np.frombuffer(data, dtype=np.uint8, count=50 * count, offset=84)
    rec = rec.reshape(count, 50)[:, :48].copy()
    floats = rec.view("<f4").reshape(count, 12)
    tris = floats[:, 3:12].reshape(count, 3, 3).astype(np.float64)
    tris, dropped = _drop_degenerate(tris)
    return StlMesh(tris, dropped)


def _parse_ascii_stl(text: str) -> StlMesh:
    verts = []
    for line in text.splitlines():
        parts = line.split()
        if len(parts) == 4 and parts[0] == "vertex":
            verts.append([float(x) for x in parts[1:]])
    if len(verts) % 3 != 0:
        raise ValueError("ASCII STL vertex count not a multiple of 3")
    tris = np.array(verts, dtype=np.float64).reshape(-1, 3, 3)
    tris, dropped = _drop_degenerate(tris)
    return StlMesh(tris, dropped)


def save_stl_binary(mesh_or_tris, path) -> None:
    tris = (mesh_or_tris.triangles
            if isinstance(mesh_or_tris, StlMesh) else
            np.asarray(mesh_or_tris, dtype=np.float64))
    count = len(tris)
    buf = bytearray(b"\0" * 80 + struct.pack("<I", count))
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.where(norm > 0, n / np.maximum(norm, 1e-300), 0.0)
    for i in range(count):
        buf += np.concatenate([n[i], tris[i].ravel()]) \
            .astype("<f4").tobytes()
        buf += b"\0\0"
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def unit_cube_stl(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)) -> np.ndarray:
    """12 outward-wound triangles of an axis-aligned box."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    v = np.array([[lo[0], lo[1], lo[2]], [hi[0], lo[1], lo[2]],
                  [hi[0], hi[1], lo[2]], [lo[0], hi[1], lo[2]],
                  [lo[0], lo[1], hi[2]], [hi[0], lo[1], hi[2]],
                  [hi[0], hi[1], hi[2]], [lo[0], hi[1], hi[2]]])
    quads = [(0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4),
             (2, 3, 7, 6), (1, 2, 6, 5), (3, 0, 4, 7)]
    tris = []
    for a, b, c, d in quads:
        tris.append([v[a], v[b], v[c]])
        tris.append([v[a], v[c], v[d]])
    return np.array(tris)


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------

def write_image(image: np.ndarray, path, fmt: Optional[str] = None) -> None:
    """image: (h, w, 3) float in [0,1] or uint8.  P6 PPM always available;
    PNG via Pillow when requested or implied by the extension."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] == 0 or image.shape[1] == 0:
        raise ValueError(f"empty or malformed image shape {image.shape}")
    if image.dtype != np.uint8:
        image = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    path = str(path)
    if fmt is None:
        fmt = "png" if path.lower().endswith(".png") else "ppm"
    if fmt == "ppm":
        h, w = image.shape[:2]
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(image[:, :, :3].tobytes())
    elif fmt == "png":
        from PIL import Image
        Image.fromarray(image[:, :, :3], mode="RGB").save(path, "PNG")
    else:
        raise ValueError(f"unknown image format {fmt!r}")


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError("not a P6 PPM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only maxval 255 supported")
    pix = np.frombuffer(parts[4], dtype=np.uint8, count=w * h * 3)
    return pix.reshape(h, w, 3).copy()


def png_bytes(image: np.ndarray) -> bytes:
    import io as _io
    from PIL import Image
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    buf = _io.BytesIO()
    Image.fromarray(image[:, :, :3], mode="RGB").save(buf, "PNG")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Scene configuration
# ---------------------------------------------------------------------------

class SceneError(ValueError):
    """Raised for malformed or inconsistent scene documents."""


@dataclass
class SceneConfig:
    """Everything one render or trace needs, minus the dataset itself.

    The same JSON schema is shared by the CLI, the HTTP service and any
    client that talks to either.  `dataset` and `trim_mesh` are file
    paths and are only meaningful for the CLI; the service carries a
    fixed dataset and rejects scenes that try to name one.
    """
    camera: "object" = None           # volren.Camera
    tf: "object" = None               # volren.TransferFunction
    settings: "object" = None         # volren.RenderSettings
    dataset: Optional[str] = None
    trim_mesh: Optional[str] = None
    seeds: Optional[np.ndarray] = None          # (m, 3)
    integrator: Optional["object"] = None       # flow.IntegratorConfig
    tube_radius: Optional[float] = None


def _expand_seeds(doc) -> np.ndarray:
    if isinstance(doc, dict) and "grid" in doc:
        g = doc["grid"]
        counts = [int(c) for c in g["counts"]]
        box = np.asarray(g["box"], dtype=np.float64).reshape(3, 2)
        if any(c < 1 for c in counts):
            raise SceneError("seed grid counts must be >= 1")
        axes = [np.linspace(box[a, 0], box[a, 1], counts[a])
                if counts[a] > 1 else np.array([0.5 * (box[a, 0] + box[a, 1])])
                for a in range(3)]
        xx, yy, zz = np.meshgrid(*axes, indexing="ij")
        return np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)
    pts = doc["points"] if isinstance(doc, dict) else doc
    arr = np.asarray(pts, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise SceneError("seed points must be an (m, 3) array")
    return arr


def scene_from_json(doc: dict, allow_paths: bool = True) -> SceneConfig:
    """Builds the typed scene objects from a parsed scene document.
    Raises SceneError with a readable message on any schema problem."""
    from .flow import IntegratorConfig
    from .volren import Camera, RenderSettings, TransferFunction

    if not isinstance(doc, dict):
        raise SceneError("scene document must be a JSON object")
    sc = SceneConfig()
    try:
        if "camera" in doc:
            c = doc["camera"]
            sc.camera = Camera(
                eye=np.asarray(c["eye"], dtype=np.float64),
                look_at=np.asarray(c["look_at"], dtype=np.float64),
                up=np.asarray(c.get("up", [0.0, 0.0, 1.0]),
                              dtype=np.float64),
                fov=np.deg2rad(float(c.get("fov_deg", 45.0))),
                width=int(c["width"]), height=int(c["height"]))
        if "transfer_function" in doc:
            sc.tf = TransferFunction(doc["transfer_function"])
        s = dict(doc.get("settings", {}))
        unknown = set(s) - {"xi", "supersamples", "termination_threshold",
                            "base_step_scale", "sampling_mode",
                            "uniform_step", "lighting", "light_dir",
                            "background", "single_trim_interval", "workers"}
        if unknown:
            raise SceneError(f"unknown settings keys {sorted(unknown)}")
        sc.settings = RenderSettings(**s)
        if "seeds" in doc:
            sc.seeds = _expand_seeds(doc["seeds"])
        if "integrator" in doc:
            known = {"method", "mode", "h0", "tol", "t_max",
                     "max_samples", "precision"}
            idoc = dict(doc["integrator"])
            bad = set(idoc) - known
            if bad:
                raise SceneError(f"unknown integrator keys {sorted(bad)}")
            sc.integrator = IntegratorConfig(**idoc)
        if "tube_radius" in doc:
            sc.tube_radius = float(doc["tube_radius"])
            if sc.tube_radius <= 0:
                raise SceneError("tube_radius must be positive")
    except SceneError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneError(str(exc)) from exc
    for key in ("dataset", "trim_mesh"):
        if key in doc:
            if not allow_paths:
                raise SceneError(
                    f"{key!r} is not accepted here; the dataset is fixed")
            setattr(sc, key, str(doc[key]))
    return sc


def load_scene(path) -> SceneConfig:
    with open(path) as fh:
        return scene_from_json(json.load(fh))

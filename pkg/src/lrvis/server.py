"""Minimal HTTP render service.

One dataset per process, loaded at startup together with its lookup
forest and Bezier form.  Every request carries the full scene, so
responses are deterministic functions of (dataset, request body).  A
semaphore bounds concurrent renders; all shared state is read-only.
"""

from __future__ import annotations

import os
import threading

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from . import accel, flow, io_formats, lr_core, volren

MAX_WIDTH = 1920
MAX_HEIGHT = 1080


class _Session:
    """Read-only per-process state: dataset, Bezier form, forest."""

    def __init__(self, dataset_path, forest_grid=None):
        self.dataset_path = str(dataset_path)
        self.volume = io_formats.load_dataset(dataset_path)
        self.bezier = lr_core.BezierVolume.from_lr(self.volume)
        if forest_grid is None:
            self.forest = accel.build_kdforest(self.volume)
        else:
            g = int(forest_grid)
            self.forest = accel.KdForest.build(self.volume, g, g, g)
        self.workers = max(1, int(os.environ.get("LRVIS_THREADS", "1")))

    def meta(self) -> dict:
        vol = self.volume
        doc = {
            "dataset": os.path.basename(self.dataset_path),
            "domain": vol.domain.tolist(),
            "degrees": list(vol.degrees),
            "range_dim": vol.range_dim,
            "element_count": len(vol.elements),
            "bspline_count": len(vol.bsplines),
            "scalar_range": None,
            "speed_range": None,
        }
        coef = self.bezier.coef          # (n_elem, ..., range_dim)
        flat = coef.reshape(-1, vol.range_dim)
        if vol.range_dim == 1:
            # Bernstein coefficients bound the true value range
            doc["scalar_range"] = [float(flat.min()), float(flat.max())]
        elif vol.range_dim == 3:
            norms = np.linalg.norm(flat, axis=1)
            doc["speed_range"] = [0.0, float(norms.max())]
        return doc


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": {"code": code,
                                           "message": message}})


def _bad_scene(message: str) -> JSONResponse:
    return _error(400, "bad-scene", message)


def create_app(dataset_path, forest_grid=None,
               max_concurrent_renders: int = 2) -> FastAPI:
    session = _Session(dataset_path, forest_grid)
    gate = threading.Semaphore(max_concurrent_renders)
    app = FastAPI(title="lrvis render service")
    app.state.session = session

    def parse_scene(doc):
        scene = io_formats.scene_from_json(doc, allow_paths=False)
        if scene.camera is not None:
            cam = scene.camera
            if cam.width > MAX_WIDTH or cam.height > MAX_HEIGHT:
                raise _TooLarge(cam.width, cam.height)
            if cam.width < 1 or cam.height < 1:
                raise io_formats.SceneError("image dimensions must be >= 1")
        return scene

    class _TooLarge(Exception):
        def __init__(self, w, h):
            self.w, self.h = w, h

    @app.get("/meta")
    def meta():
        return session.meta()

    @app.post("/render")
    async def render(request: Request):
        try:
            doc = await request.json()
        except Exception:
            return _bad_scene("request body is not valid JSON")
        try:
            scene = parse_scene(doc)
        except _TooLarge as exc:
            return _error(413, "image-too-large",
                          f"{exc.w}x{exc.h} exceeds "
                          f"{MAX_WIDTH}x{MAX_HEIGHT}")
        except io_formats.SceneError as exc:
            return _bad_scene(str(exc))
        if scene.camera is None or scene.tf is None:
            return _bad_scene("scene needs 'camera' and 'transfer_function'")
        if session.volume.range_dim != 1:
            return _bad_scene("loaded dataset is not a scalar field")
        scene.settings.workers = session.workers
        with gate:
            field_ = volren.ScalarField(session.bezier, session.forest)
            img = volren.render(scene.camera, field_, scene.tf,
                                scene.settings)
        return Response(content=io_formats.png_bytes(img),
                        media_type="image/png")

    def traced_lines(scene):
        field_ = flow.VectorField(session.bezier, session.forest)
        for i, s in enumerate(scene.seeds):
            if not field_.inside(s):
                raise io_formats.SceneError(
                    f"seed {i} lies outside the domain")
        cfg = scene.integrator or flow.IntegratorConfig()
        return field_, flow.integrate_all(field_, scene.seeds, cfg)

    @app.post("/streamlines")
    async def streamlines(request: Request):
        try:
            doc = await request.json()
        except Exception:
            return _bad_scene("request body is not valid JSON")
        try:
            scene = parse_scene(doc)
            if scene.seeds is None:
                return _bad_scene("scene needs 'seeds'")
            if session.volume.range_dim != 3:
                return _bad_scene("loaded dataset is not a vector field")
            _, lines = traced_lines(scene)
        except _TooLarge as exc:
            return _error(413, "image-too-large",
                          f"{exc.w}x{exc.h} exceeds "
                          f"{MAX_WIDTH}x{MAX_HEIGHT}")
        except io_formats.SceneError as exc:
            return _bad_scene(str(exc))
        return {"streamlines": flow.streamlines_to_json(lines)}

    @app.post("/streamline_image")
    async def streamline_image(request: Request):
        try:
            doc = await request.json()
        except Exception:
            return _bad_scene("request body is not valid JSON")
        try:
            scene = parse_scene(doc)
            if scene.seeds is None or scene.camera is None:
                return _bad_scene("scene needs 'seeds' and 'camera'")
            if session.volume.range_dim != 3:
                return _bad_scene("loaded dataset is not a vector field")
            with gate:
                field_, lines = traced_lines(scene)
                radius = scene.tube_radius
                if radius is None:
                    radius = 0.008 * float(np.linalg.norm(
                        session.volume.domain[:, 1]
                        - session.volume.domain[:, 0]))
                img = flow.render_streamlines(lines, field_, scene.camera,
                                              radius)
        except _TooLarge as exc:
            return _error(413, "image-too-large",
                          f"{exc.w}x{exc.h} exceeds "
                          f"{MAX_WIDTH}x{MAX_HEIGHT}")
        except io_formats.SceneError as exc:
            return _bad_scene(str(exc))
        return Response(content=io_formats.png_bytes(img),
                        media_type="image/png")

    return app

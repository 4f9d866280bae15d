import io
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from lrvis.server import create_app

RENDER_BODY = {
    "camera": {"eye": [0.5, 0.5, 3.0], "look_at": [0.5, 0.5, 0.5],
               "up": [0, 1, 0], "fov_deg": 35.0, "width": 6, "height": 4},
    "transfer_function": [[0, 1, 0, 0, 0], [1, 1, 0, 0, 0.8]],
    "settings": {"supersamples": 2, "background": [0, 0, 0]},
}

TRACE_BODY = {
    "seeds": {"points": [[1.0, 0.0, 0.0]]},
    "integrator": {"method": "RK4", "mode": "fixed", "h0": 0.05,
                   "t_max": 0.5},
}


@pytest.fixture(scope="module")
def scalar_client(scalar_dataset_path):
    return TestClient(create_app(scalar_dataset_path))


@pytest.fixture(scope="module")
def vector_client(vector_dataset_path):
    return TestClient(create_app(vector_dataset_path))


def png_pixels(data: bytes) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(data)).convert("RGB"))


class TestMeta:
    def test_scalar_counts(self, scalar_client, uniform_scalar):
        doc = scalar_client.get("/meta").json()
        assert doc["element_count"] == len(uniform_scalar.elements)
        assert doc["bspline_count"] == len(uniform_scalar.bsplines)
        assert doc["range_dim"] == 1
        lo, hi = doc["scalar_range"]
        assert lo <= hi
        assert doc["speed_range"] is None

    def test_vector_speed_range(self, vector_client):
        doc = vector_client.get("/meta").json()
        assert doc["range_dim"] == 3
        assert doc["scalar_range"] is None
        assert doc["speed_range"][0] == 0.0
        assert doc["speed_range"][1] > 0.0

    def test_domain_shape(self, scalar_client):
        doc = scalar_client.get("/meta").json()
        assert np.asarray(doc["domain"]).shape == (3, 2)


class TestRender:
    def test_transparent_tf_is_background(self, scalar_client):
        body = json.loads(json.dumps(RENDER_BODY))
        body["transfer_function"] = [[0, 1, 1, 1, 0], [1, 1, 1, 1, 0]]
        body["settings"]["background"] = [1.0, 0.0, 0.0]
        resp = scalar_client.post("/render", json=body)
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        px = png_pixels(resp.content)
        assert np.all(px == [255, 0, 0])

    def test_deterministic_bytes(self, scalar_client):
        a = scalar_client.post("/render", json=RENDER_BODY)
        b = scalar_client.post("/render", json=RENDER_BODY)
        assert a.status_code == b.status_code == 200
        assert a.content == b.content

    def test_invalid_json_body(self, scalar_client):
        resp = scalar_client.post(
            "/render", content=b"not json",
            headers={"content-type": "application/json"})
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "bad-scene"

    def test_missing_camera(self, scalar_client):
        body = {"transfer_function": RENDER_BODY["transfer_function"]}
        resp = scalar_client.post("/render", json=body)
        assert resp.status_code == 400
        assert "camera" in resp.json()["error"]["message"]

    def test_oversize_image_413(self, scalar_client):
        body = json.loads(json.dumps(RENDER_BODY))
        body["camera"]["width"] = 4000
        resp = scalar_client.post("/render", json=body)
        assert resp.status_code == 413
        assert resp.json()["error"]["code"] == "image-too-large"

    def test_unknown_settings_key(self, scalar_client):
        body = json.loads(json.dumps(RENDER_BODY))
        body["settings"]["bloom"] = True
        resp = scalar_client.post("/render", json=body)
        assert resp.status_code == 400
        assert "bloom" in resp.json()["error"]["message"]

    def test_dataset_path_rejected(self, scalar_client):
        body = dict(RENDER_BODY, dataset="sneaky.json")
        resp = scalar_client.post("/render", json=body)
        assert resp.status_code == 400
        assert "dataset" in resp.json()["error"]["message"]

    def test_vector_dataset_rejected(self, vector_client):
        resp = vector_client.post("/render", json=RENDER_BODY)
        assert resp.status_code == 400
        assert "scalar" in resp.json()["error"]["message"]


class TestStreamlines:
    def test_trace_ok(self, vector_client):
        resp = vector_client.post("/streamlines", json=TRACE_BODY)
        assert resp.status_code == 200
        lines = resp.json()["streamlines"]
        assert len(lines) == 1
        assert lines[0]["seed"] == [1.0, 0.0, 0.0]
        assert len(lines[0]["samples"]) > 1

    def test_seed_outside_names_index(self, vector_client):
        body = json.loads(json.dumps(TRACE_BODY))
        body["seeds"] = {"points": [[0.0, 0.0, 0.0], [7.0, 0.0, 0.0]]}
        resp = vector_client.post("/streamlines", json=body)
        assert resp.status_code == 400
        assert "seed 1" in resp.json()["error"]["message"]

    def test_missing_seeds(self, vector_client):
        resp = vector_client.post("/streamlines", json={})
        assert resp.status_code == 400
        assert "seeds" in resp.json()["error"]["message"]

    def test_scalar_dataset_rejected(self, scalar_client):
        resp = scalar_client.post("/streamlines", json=TRACE_BODY)
        assert resp.status_code == 400
        assert "vector" in resp.json()["error"]["message"]

    def test_deterministic(self, vector_client):
        a = vector_client.post("/streamlines", json=TRACE_BODY)
        b = vector_client.post("/streamlines", json=TRACE_BODY)
        assert a.json() == b.json()


class TestStreamlineImage:
    def body(self):
        doc = json.loads(json.dumps(TRACE_BODY))
        doc["camera"] = {"eye": [0, 0, 5.0], "look_at": [0, 0, 0],
                         "up": [0, 1, 0], "fov_deg": 40.0,
                         "width": 16, "height": 12}
        doc["tube_radius"] = 0.05
        return doc

    def test_returns_png(self, vector_client):
        resp = vector_client.post("/streamline_image", json=self.body())
        assert resp.status_code == 200
        assert resp.content[:8] == b"\x89PNG\r\n\x1a\n"
        assert png_pixels(resp.content).shape == (12, 16, 3)

    def test_deterministic_bytes(self, vector_client):
        a = vector_client.post("/streamline_image", json=self.body())
        b = vector_client.post("/streamline_image", json=self.body())
        assert a.content == b.content

    def test_needs_camera(self, vector_client):
        resp = vector_client.post("/streamline_image", json=TRACE_BODY)
        assert resp.status_code == 400

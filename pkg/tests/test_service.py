import io as _io
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from gridfield import io as gio
from gridfield.core import Aabb
from gridfield.grid import init_network_grid
from gridfield.occupancy import OccupancyGrid
from gridfield.render import Camera, RenderConfig, look_at_pose, render_image
from gridfield.service import _default_intrinsics, create_app


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    aabb = Aabb((-1, -1, -1), (1, 1, 1))
    grid = init_network_grid(aabb, (4, 4, 4), seed=21)
    occ = OccupancyGrid.solid(aabb, (8, 8, 8))
    path = tmp_path_factory.mktemp("svc") / "model.ckpt"
    gio.save_checkpoint(path, grid, occ)
    return path, grid, occ


@pytest.fixture(scope="module")
def client(checkpoint):
    path, _, _ = checkpoint
    app = create_app(str(path), seed=5, render_cfg=RenderConfig(k=32))
    return TestClient(app)


def orbit_pose(radius=3.5):
    return look_at_pose(np.array([radius, 0.0, 0.0]), np.zeros(3)).ravel().tolist()


class TestMeta:
    def test_unloaded_service_returns_503(self):
        app = create_app(None)
        with TestClient(app) as c:
            assert c.get("/meta").status_code == 503
            r = c.post("/render", json={"pose": orbit_pose(), "width": 8, "height": 8})
            assert r.status_code == 503

    def test_meta_echoes_checkpoint(self, client, checkpoint):
        _, grid, _ = checkpoint
        meta = client.get("/meta").json()
        assert meta["grid_resolution"] == [4, 4, 4]
        assert meta["aabb"]["b_min"] == list(grid.aabb.b_min)
        assert meta["aabb"]["b_max"] == list(grid.aabb.b_max)
        assert meta["suggested_radius"] > 0
        assert meta["default_intrinsics"]["width"] == 512


class TestRender:
    def test_png_with_timing_headers(self, client):
        r = client.post("/render", json={"pose": orbit_pose(), "width": 24, "height": 16})
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        assert float(r.headers["X-Render-Millis"]) > 0
        assert int(r.headers["X-Queries"]) >= 0
        img = Image.open(_io.BytesIO(r.content))
        assert img.size == (24, 16)

    def test_matches_offline_render_bit_exactly(self, client, checkpoint):
        _, grid, occ = checkpoint
        w = h = 20
        r = client.post("/render", json={"pose": orbit_pose(), "width": w, "height": h})
        served = np.asarray(Image.open(_io.BytesIO(r.content)).convert("RGB"))
        intr = _default_intrinsics(grid.aabb, w, h)
        cam = Camera(width=w, height=h, fx=intr["fx"], fy=intr["fy"], cx=intr["cx"], cy=intr["cy"],
                     c2w=np.array(orbit_pose()).reshape(4, 4))
        img, _ = render_image(grid, occ, cam, RenderConfig(k=32), seed=5)
        offline = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
        assert np.array_equal(served, offline)

    def test_pixel_cap_enforced(self, checkpoint):
        path, _, _ = checkpoint
        app = create_app(str(path), pixel_cap=64 * 64)
        with TestClient(app) as c:
            r = c.post("/render", json={"pose": orbit_pose(), "width": 65, "height": 65})
            assert r.status_code == 400
            assert "cap" in r.json()["error"]

    def test_invalid_pose_rejected(self, client):
        bad = np.eye(4)
        bad[0, 0] = 2.0
        r = client.post("/render", json={"pose": bad.ravel().tolist(), "width": 8, "height": 8})
        assert r.status_code == 400
        assert "orthonormal" in r.json()["error"]

    def test_malformed_body_rejected(self, client):
        r = client.post("/render", json={"pose": [1, 2, 3], "width": 8, "height": 8})
        assert r.status_code == 422  # schema validation

    def test_quality_overrides(self, client):
        r = client.post(
            "/render",
            json={"pose": orbit_pose(), "width": 12, "height": 12,
                  "quality": {"k": 8, "epsilon": 0.05}},
        )
        assert r.status_code == 200

    def test_concurrent_identical_requests_identical_bytes(self, client):
        body = {"pose": orbit_pose(), "width": 16, "height": 16}

        def call(_):
            r = client.post("/render", json=body)
            return r.content

        with ThreadPoolExecutor(max_workers=8) as pool:
            blobs = list(pool.map(call, range(8)))
        assert all(b == blobs[0] for b in blobs)

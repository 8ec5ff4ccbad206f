"""Camera rays, stratified sampling, skip/terminate marching, compositing.

The marcher walks every ray in distance-ordered chunks: each chunk's
sample points are filtered against the occupancy grid (empty-space
skipping), surviving points are evaluated through the field in one
grouped batch, alpha-composited front to back, and rays whose
transmittance drops below the termination threshold stop marching.
Rays are processed in fixed-size blocks so images are bit-identical for
any worker count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .batched import parallel_map
from .core import Aabb, clip_into, density_to_alpha

RAY_BLOCK = 4096  # rays per work unit; fixed so results never depend on worker count


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: intrinsics in pixels, camera-to-world rigid pose.

    Convention: +x right, +y down, +z forward (looking direction), so a
    pixel (u, v) maps to camera-frame direction ((u-cx)/fx, (v-cy)/fy, 1).
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    c2w: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        c2w = np.asarray(self.c2w, dtype=np.float64).reshape(4, 4)
        r = c2w[:3, :3]
        err = np.linalg.norm(r.T @ r - np.eye(3))
        if err > 1e-5:
            raise ValueError(f"pose rotation block not orthonormal (|R^T R - I| = {err:.2e})")
        object.__setattr__(self, "c2w", c2w)

    @property
    def center(self) -> np.ndarray:
        return self.c2w[:3, 3]

    @property
    def rotation(self) -> np.ndarray:
        return self.c2w[:3, :3]

    def scaled(self, focal_scale: float = 1.0, width: int | None = None, height: int | None = None) -> "Camera":
        """Same pose, optionally different sensor resolution / focal scale.

        Resizing keeps the field of view: intrinsics rescale with the
        pixel pitch, then ``focal_scale`` zooms on top.
        """
        w = width or self.width
        h = height or self.height
        sx, sy = w / self.width, h / self.height
        return Camera(
            width=w,
            height=h,
            fx=self.fx * sx * focal_scale,
            fy=self.fy * sy * focal_scale,
            cx=self.cx * sx,
            cy=self.cy * sy,
            c2w=self.c2w,
        )


def look_at_pose(eye: np.ndarray, target: np.ndarray, up: np.ndarray = (0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world matrix looking from ``eye`` toward ``target``.

    Right-handed with the camera's +z pointing at the target and +y as
    world-down (image rows grow downward). Falls back to a different up
    vector when the view direction is (anti)parallel to ``up``.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise ValueError("eye and target coincide")
    z = forward / norm
    up = np.asarray(up, dtype=np.float64)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-8:
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    c2w = np.eye(4)
    c2w[:3, 0], c2w[:3, 1], c2w[:3, 2], c2w[:3, 3] = x, y, z, eye
    return c2w


@dataclass(frozen=True)
class Ray:
    """World ray; ``t_near``/``t_far`` hold the box-intersection interval
    when constructed via ``Ray.clipped`` (``t_far <= t_near`` means miss)."""

    origin: np.ndarray
    direction: np.ndarray
    t_near: float | None = None
    t_far: float | None = None

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-6:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", d)

    @classmethod
    def clipped(cls, origin, direction, aabb: Aabb) -> "Ray":
        t0, t1 = intersect_aabb(np.asarray(origin)[None], np.asarray(direction)[None], aabb)
        return cls(origin, direction, t_near=float(t0[0]), t_far=float(t1[0]))


def generate_ray(cam: Camera, px: tuple[float, float]) -> Ray:
    """World ray through continuous pixel coordinates (u, v).

    The direction is the normalized vector from the camera center through
    the point; callers rendering full images pass pixel centers
    (x + 0.5, y + 0.5).
    """
    u, v = float(px[0]), float(px[1])
    d_cam = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
    d = cam.rotation @ d_cam
    return Ray(cam.center, d / np.linalg.norm(d))


def generate_rays(cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Origins and unit directions for every pixel center, row-major."""
    u = (np.arange(cam.width) + 0.5 - cam.cx) / cam.fx
    v = (np.arange(cam.height) + 0.5 - cam.cy) / cam.fy
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack([uu, vv, np.ones_like(uu)], axis=-1).reshape(-1, 3)
    d = d_cam @ cam.rotation.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(cam.center, d.shape)
    return o.astype(np.float32), d.astype(np.float32)


def intersect_aabb(origins: np.ndarray, directions: np.ndarray, aabb: Aabb):
    """Slab-method ray/box intersection.

    Returns entry and exit distances ``(t0, t1)`` with ``t0 >= 0``; a miss
    is encoded as ``t1 <= t0``. Rays parallel to a slab are handled by the
    inside/outside test instead of the division.
    """
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(directions, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = (aabb.b_min - o) / d
        t_hi = (aabb.b_max - o) / d
    near = np.minimum(t_lo, t_hi)
    far = np.maximum(t_lo, t_hi)
    parallel = d == 0
    inside = (o >= aabb.b_min) & (o <= aabb.b_max)
    near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
    far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
    t0 = np.maximum(near.max(axis=-1), 0.0)
    t1 = far.min(axis=-1)
    return t0, t1


@dataclass
class RenderConfig:
    """Marching parameters.

    ``k`` nominal equidistant samples per ray (the cap on field queries
    per ray); ``epsilon`` is the transmittance floor for early
    termination, 0 disables it; ``ert_chunk`` is how many nominal samples
    march between termination checks.
    """

    k: int = 384
    epsilon: float = 0.01
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    ert_chunk: int = 32
    stratified: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not (0.0 <= self.epsilon < 1.0):
            raise ValueError("epsilon must lie in [0, 1)")
        if self.ert_chunk < 1:
            raise ValueError("ert_chunk must be >= 1")

    def replace(self, **kw) -> "RenderConfig":
        merged = dict(
            k=self.k,
            epsilon=self.epsilon,
            background=self.background,
            ert_chunk=self.ert_chunk,
            stratified=self.stratified,
        )
        merged.update(kw)
        return RenderConfig(**merged)


@dataclass
class RenderStats:
    wall_ms: float = 0.0
    total_queries: int = 0
    ess_skipped: int = 0
    ert_terminated_rays: int = 0
    n_rays: int = 0

    def merge(self, other: "RenderStats"):
        self.total_queries += other.total_queries
        self.ess_skipped += other.ess_skipped
        self.ert_terminated_rays += other.ert_terminated_rays
        self.n_rays += other.n_rays

    def to_dict(self) -> dict:
        return {
            "wall_ms": self.wall_ms,
            "total_queries": self.total_queries,
            "ess_skipped": self.ess_skipped,
            "ert_terminated_rays": self.ert_terminated_rays,
            "n_rays": self.n_rays,
        }


def sample_ray(
    ray: Ray,
    aabb: Aabb,
    occ=None,
    cfg: RenderConfig | None = None,
    rng: np.random.Generator | None = None,
):
    """Sample points along one ray: up to ``k`` jittered equidistant points
    over the box interval, minus those in unoccupied cells.

    Returns ``(positions, deltas)`` sorted by distance. Every retained
    sample keeps the nominal segment length as its delta: skipped space is
    empty by the occupancy contract, so its transmittance factor is one.
    """
    cfg = cfg or RenderConfig()
    t0, t1 = intersect_aabb(ray.origin[None], ray.direction[None], aabb)
    t0, t1 = float(t0[0]), float(t1[0])
    if t1 <= t0:
        return np.zeros((0, 3), dtype=np.float32), np.zeros(0, dtype=np.float32)
    seg = (t1 - t0) / cfg.k
    if cfg.stratified:
        rng = rng or np.random.default_rng()
        jitter = rng.random(cfg.k)
    else:
        jitter = np.full(cfg.k, 0.5)
    ts = t0 + (np.arange(cfg.k) + jitter) * seg
    pts = (ray.origin[None, :] + ts[:, None] * ray.direction[None, :]).astype(np.float32)
    pts = clip_into(pts, aabb)
    if occ is not None:
        keep = occ.occupied_at(pts)
        pts = pts[keep]
    deltas = np.full(len(pts), seg, dtype=np.float32)
    return pts, deltas


def composite(colors: np.ndarray, alphas: np.ndarray):
    """Front-to-back alpha blending.

    ``c_out = sum_i T_i * alpha_i * c_i`` with ``T_i = prod_{j<i}(1 - alpha_j)``;
    also returns the final transmittance so the caller can blend the
    background explicitly. Accepts leading batch dimensions.
    """
    colors = np.asarray(colors)
    alphas = np.asarray(alphas)
    if colors.shape[-2] == 0:
        rgb = np.zeros((*alphas.shape[:-1], 3), dtype=colors.dtype)
        return rgb, np.ones(alphas.shape[:-1], dtype=colors.dtype)
    trans = np.cumprod(1.0 - alphas, axis=-1)
    t_before = np.concatenate([np.ones_like(trans[..., :1]), trans[..., :-1]], axis=-1)
    rgb = (t_before[..., None] * alphas[..., None] * colors).sum(axis=-2)
    return rgb, trans[..., -1]


def _march_block(field, occ, origins, dirs, cfg, rng, dtype=np.float32):
    """Render one block of rays; returns (colors, final T, stats)."""
    n = len(origins)
    stats = RenderStats(n_rays=n)
    aabb = field.aabb
    t0, t1 = intersect_aabb(origins, dirs, aabb)
    hit = t1 > t0
    seg = np.where(hit, (t1 - t0) / cfg.k, 0.0).astype(dtype)
    if cfg.stratified:
        jitter = rng.random((n, cfg.k), dtype=np.float32)
    else:
        jitter = np.full((n, cfg.k), 0.5, dtype=np.float32)

    acc = np.zeros((n, 3), dtype=dtype)
    trans = np.ones(n, dtype=dtype)
    alive = hit.copy()
    terminated = np.zeros(n, dtype=bool)
    o32 = origins.astype(dtype)
    d32 = dirs.astype(dtype)
    t0_32 = t0.astype(dtype)

    for start in range(0, cfg.k, cfg.ert_chunk):
        if not alive.any():
            break
        idx = np.flatnonzero(alive)
        span = np.arange(start, min(start + cfg.ert_chunk, cfg.k))
        ts = t0_32[idx, None] + (span[None, :] + jitter[idx][:, span]) * seg[idx, None]
        pts = (o32[idx, None, :] + ts[..., None] * d32[idx, None, :]).astype(dtype)
        pts = clip_into(pts, aabb)
        flat_pts = pts.reshape(-1, 3)
        if occ is not None:
            keep = occ.occupied_at(flat_pts)
        else:
            keep = np.ones(len(flat_pts), dtype=bool)
        sigma = np.zeros(len(flat_pts), dtype=dtype)
        color = np.zeros((len(flat_pts), 3), dtype=dtype)
        n_query = int(keep.sum())
        stats.ess_skipped += len(flat_pts) - n_query
        if n_query:
            q_dirs = np.repeat(d32[idx], len(span), axis=0)[keep]
            c, s = field.query_points(flat_pts[keep], q_dirs)
            color[keep] = c
            sigma[keep] = s
            stats.total_queries += n_query
        sigma = sigma.reshape(len(idx), len(span))
        color = color.reshape(len(idx), len(span), 3)
        alpha = density_to_alpha(sigma, seg[idx, None])
        t_run = np.cumprod(1.0 - alpha, axis=1)
        t_before = np.concatenate([np.ones_like(t_run[:, :1]), t_run[:, :-1]], axis=1)
        acc[idx] += trans[idx, None] * (t_before[..., None] * alpha[..., None] * color).sum(axis=1)
        trans[idx] = trans[idx] * t_run[:, -1]
        if cfg.epsilon > 0.0:
            dead = trans[idx] < cfg.epsilon
            newly = idx[dead]
            if start + len(span) < cfg.k:
                terminated[newly] = True
            alive[newly] = False

    stats.ert_terminated_rays = int(terminated.sum())
    bg = np.asarray(cfg.background, dtype=dtype)
    out = acc + trans[:, None] * bg[None, :]
    return np.clip(out, 0.0, 1.0), trans, stats


def render_rays(
    field,
    occupancy,
    origins: np.ndarray,
    directions: np.ndarray,
    cfg: RenderConfig,
    seed: int = 0,
    workers: int = 1,
):
    """Render arbitrary rays against a field; returns (colors, stats).

    ``field`` is anything exposing ``aabb`` and
    ``query_points(positions, directions) -> (colors, sigmas)`` — a
    network lattice or an analytic scene. Rays march in fixed blocks so
    output is bit-identical across worker counts; the stratified jitter
    stream is a pure function of (seed, block index).
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    n = len(origins)
    blocks = [(i, slice(i, min(i + RAY_BLOCK, n))) for i in range(0, n, RAY_BLOCK)]

    def run(block):
        block_start, sl = block
        rng = np.random.default_rng(np.random.SeedSequence([seed, block_start]))
        return _march_block(field, occupancy, origins[sl], directions[sl], cfg, rng)

    results = parallel_map(run, blocks, workers=workers)
    colors = np.zeros((n, 3), dtype=np.float32)
    stats = RenderStats()
    for (_, sl), (c, _, s) in zip(blocks, results):
        colors[sl] = c
        stats.merge(s)
    return colors, stats


def render_image(
    field,
    occupancy,
    cam: Camera,
    cfg: RenderConfig,
    seed: int = 0,
    workers: int = 1,
):
    """Render a full camera image; returns (H, W, 3) float32 and stats."""
    t_start = time.perf_counter()
    origins, dirs = generate_rays(cam)
    colors, stats = render_rays(field, occupancy, origins, dirs, cfg, seed=seed, workers=workers)
    stats.wall_ms = (time.perf_counter() - t_start) * 1000.0
    return colors.reshape(cam.height, cam.width, 3), stats


def compute_psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images; identical
    inputs report +inf."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)

"""Benchmark harness: render-time breakdown and grouped-execution throughput.

The render comparison reproduces the speedup mechanism at desk scale:
the monolithic teacher sampled densely, the same teacher with empty-space
skipping and early termination, and the tiny-network lattice with both.
Timing is the median of several runs after a warm-up, whole-image wall
time. Reports are JSON lines so downstream tooling can diff runs.
"""

from __future__ import annotations

import os
import platform
import statistics
import time

import numpy as np

from . import __version__
from .batched import QueryBatch, group_by_network, grouped_forward
from .grid import NetworkGrid
from .mlp import forward
from .render import Camera, RenderConfig, render_image


def machine_specs() -> dict:
    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "gridfield": __version__,
    }


def _timed(fn, runs: int, warmup: int) -> tuple[float, object]:
    result = None
    for _ in range(warmup):
        result = fn()
    samples = []
    for _ in range(runs):
        t0 = time.perf_counter()
        result = fn()
        samples.append((time.perf_counter() - t0) * 1000.0)
    return statistics.median(samples), result


def render_breakdown(
    teacher: NetworkGrid,
    student: NetworkGrid,
    occ,
    cam: Camera,
    cfg: RenderConfig,
    runs: int = 5,
    warmup: int = 1,
    seed: int = 0,
    workers: int = 1,
) -> list[dict]:
    """Three-row render-time comparison on one camera.

    Rows: dense monolithic network (no skipping, no termination), the same
    network with ESS + ERT, then the tiny-network lattice with ESS + ERT.
    """
    dense_cfg = cfg.replace(epsilon=0.0)
    scenarios = [
        ("dense-big-mlp", teacher, None, dense_cfg),
        ("big-mlp+ess+ert", teacher, occ, cfg),
        ("tiny-grid+ess+ert", student, occ, cfg),
    ]
    rows = []
    base_ms = None
    for name, model, occupancy, run_cfg in scenarios:
        ms, (_, stats) = _timed(
            lambda m=model, o=occupancy, c=run_cfg: render_image(m, o, cam, c, seed=seed, workers=workers),
            runs,
            warmup,
        )
        base_ms = base_ms or ms
        rows.append(
            {
                "scenario": name,
                "wall_ms": ms,
                "speedup_vs_dense": base_ms / ms,
                "query_count": stats.total_queries,
                "queries_per_sec": stats.total_queries / (ms / 1000.0) if ms > 0 else 0.0,
                "width": cam.width,
                "height": cam.height,
                "k": run_cfg.k,
                "epsilon": run_cfg.epsilon,
            }
        )
    return rows


def dispatch_throughput(
    grid: NetworkGrid,
    n_queries: int = 100_000,
    seed: int = 0,
    runs: int = 3,
    warmup: int = 1,
) -> list[dict]:
    """Grouped evaluation versus one-query-at-a-time network dispatch.

    Quantifies why inputs are sorted by network: the per-query loop pays
    the full dispatch cost for every sample.
    """
    rng = np.random.default_rng(seed)
    span = (grid.aabb.b_max - grid.aabb.b_min).astype(np.float32)
    positions = grid.aabb.b_min.astype(np.float32) + rng.random((n_queries, 3), dtype=np.float32) * span
    dirs = rng.normal(size=(n_queries, 3)).astype(np.float32)
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    net_idx = grid.cell_index(positions)
    batch = QueryBatch(positions, dirs, net_idx)

    def grouped():
        layout = group_by_network(batch, grid.n_cells)
        return grouped_forward(grid, layout)

    grouped_ms, _ = _timed(grouped, runs, warmup)

    # Per-query dispatch; timed on a slice and scaled, it is that slow.
    probe = min(n_queries, 2000)

    def per_query():
        out_c = np.empty((probe, 3), dtype=np.float32)
        out_s = np.empty(probe, dtype=np.float32)
        for i in range(probe):
            x_enc = grid.encoding.encode_position(positions[i])
            d_enc = grid.encoding.encode_direction(dirs[i])
            out_c[i], out_s[i] = forward(grid.params.at(int(net_idx[i])), x_enc, d_enc)
        return out_c, out_s

    per_query_ms, _ = _timed(per_query, max(1, runs - 1), warmup)
    per_query_ms_scaled = per_query_ms * (n_queries / probe)
    return [
        {
            "scenario": "grouped-eval",
            "query_count": n_queries,
            "wall_ms": grouped_ms,
            "queries_per_sec": n_queries / (grouped_ms / 1000.0),
        },
        {
            "scenario": "per-query-dispatch",
            "query_count": n_queries,
            "wall_ms": per_query_ms_scaled,
            "queries_per_sec": n_queries / (per_query_ms_scaled / 1000.0),
            "measured_queries": probe,
        },
        {
            "scenario": "grouped-vs-dispatch",
            "query_count": n_queries,
            "speedup": per_query_ms_scaled / grouped_ms,
        },
    ]

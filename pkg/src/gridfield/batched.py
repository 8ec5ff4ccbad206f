"""Grouped evaluation of many networks with per-network batch sizes.

Thousands of cell networks each receive a different (possibly zero)
number of queries per render chunk, so a single fixed-shape batched
matmul cannot serve them. Queries are instead stably sorted by network
index into contiguous segments, and segments of equal length are stacked
and pushed through the layers as one batched matrix product per layer.
Each network's queries still form a single row-block, which keeps results
within reassociation tolerance of a per-query loop.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import mlp


@dataclass
class QueryBatch:
    """Flat bundle of field queries, each tagged with its network index."""

    positions: np.ndarray  # (N, 3) world points, or pre-encoded features
    directions: np.ndarray  # (N, 3) unit vectors, or pre-encoded features
    network_index: np.ndarray  # (N,) flattened cell index per query

    def __post_init__(self):
        n = len(self.network_index)
        if len(self.positions) != n or len(self.directions) != n:
            raise ValueError("positions/directions/network_index lengths differ")


@dataclass
class GroupedLayout:
    """Queries reordered into contiguous per-network segments.

    ``order`` maps sorted slot -> original query index; ``inverse`` undoes
    it. ``offsets[i]:offsets[i+1]`` is network i's segment in the sorted
    arrays; empty segments are valid for unqueried networks.
    """

    positions: np.ndarray
    directions: np.ndarray
    order: np.ndarray
    inverse: np.ndarray
    offsets: np.ndarray
    n_networks: int

    @property
    def n_queries(self) -> int:
        return len(self.order)

    def segment_lengths(self) -> np.ndarray:
        return np.diff(self.offsets)


def group_by_network(batch: QueryBatch, n_networks: int) -> GroupedLayout:
    """Stable sort of a query batch by network index.

    The key domain is bounded by the cell count, so numpy's stable integer
    sort runs in linear time; ties keep arrival order, which downstream
    results cannot observe anyway.
    """
    idx = np.asarray(batch.network_index)
    if len(idx) and (idx.min() < 0 or idx.max() >= n_networks):
        raise ValueError(
            f"network index out of range [0, {n_networks}): "
            f"min={idx.min() if len(idx) else None} max={idx.max() if len(idx) else None}"
        )
    order = np.argsort(idx, kind="stable")
    inverse = np.empty_like(order)
    inverse[order] = np.arange(len(order))
    counts = np.bincount(idx, minlength=n_networks)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return GroupedLayout(
        positions=np.ascontiguousarray(batch.positions[order]),
        directions=np.ascontiguousarray(batch.directions[order]),
        order=order,
        inverse=inverse,
        offsets=offsets,
        n_networks=n_networks,
    )


def _length_buckets(layout: GroupedLayout):
    """Group segments into padded equal-width stacks.

    Segments whose lengths share a power-of-two class stack together,
    shorter ones zero-padded to the class maximum; a class with a single
    distinct length carries no padding at all (so the degenerate
    one-network case stays bit-identical to a plain forward). Each
    network's queries remain one contiguous row-block of one batched
    matmul operand, at most doubling the row count.

    Returns (cells, rows, valid) tuples; ``valid`` is None when unpadded.
    """
    lengths = layout.segment_lengths()
    nonzero = np.flatnonzero(lengths)
    if len(nonzero) == 0:
        return []
    classes = np.ceil(np.log2(np.maximum(lengths[nonzero], 1))).astype(int)
    classes[lengths[nonzero] == 1] = 0
    buckets = []
    for cls in np.unique(classes):
        cells = nonzero[classes == cls]
        cls_lengths = lengths[cells]
        width = int(cls_lengths.max())
        rows = layout.offsets[cells][:, None] + np.arange(width)[None, :]
        if cls_lengths.min() == width:
            buckets.append((cells, rows, None))
        else:
            valid = np.arange(width)[None, :] < cls_lengths[:, None]
            buckets.append((cells, np.where(valid, rows, 0), valid))
    return buckets


def grouped_forward(grid, layout: GroupedLayout, caches: list | None = None):
    """Evaluate every query against its own network; original order out.

    ``grid`` is a NetworkGrid (stacked parameters plus encoders). Results
    for query q match a plain single-network forward of q's cell to within
    summation reassociation. Pass a list as ``caches`` to capture per-bucket
    activations for ``grouped_backward``.
    """
    n = layout.n_queries
    dtype = grid.params.dtype
    colors = np.zeros((n, 3), dtype=dtype)
    sigmas = np.zeros(n, dtype=dtype)
    for cells, rows, valid in _length_buckets(layout):
        pos = layout.positions[rows].astype(dtype)
        dirs = layout.directions[rows].astype(dtype)
        if valid is not None:
            pos[~valid] = 0.0  # padded rows: outputs discarded, grads zeroed
            dirs[~valid] = 0.0
        x_enc = grid.encoding.encode_position(pos)
        d_enc = grid.encoding.encode_direction(dirs)
        params = grid.params.at(cells)
        cache = {} if caches is not None else None
        c, s = mlp.forward(params, x_enc, d_enc, cache=cache)
        if valid is None:
            colors[rows.ravel()] = c.reshape(-1, 3)
            sigmas[rows.ravel()] = s.reshape(-1)
        else:
            colors[rows[valid]] = c[valid]
            sigmas[rows[valid]] = s[valid]
        if caches is not None:
            caches.append((cells, rows, valid, cache))
    return colors[layout.inverse], sigmas[layout.inverse]


def grouped_backward(
    grid,
    layout: GroupedLayout,
    caches: list,
    d_color: np.ndarray,
    d_sigma: np.ndarray,
) -> mlp.MlpParams:
    """Parameter gradients for a grouped forward pass.

    Upstream gradients arrive in original query order; returns gradients
    stacked over all cells (zeros for unqueried networks). Each cell owns
    exactly one segment, so per-bucket results write disjoint slots.
    """
    d_color_sorted = d_color[layout.order]
    d_sigma_sorted = d_sigma[layout.order]
    grads = mlp.zero_params(grid.arch, n_networks=grid.n_cells, dtype=grid.params.dtype)
    for cells, rows, valid, cache in caches:
        d_c = d_color_sorted[rows]
        d_s = d_sigma_sorted[rows]
        if valid is not None:
            d_c[~valid] = 0.0  # padded rows contribute nothing
            d_s[~valid] = 0.0
        bucket = mlp.backward(
            grid.params.at(cells),
            cache["x_enc"],
            cache["d_enc"],
            d_c,
            d_s,
            cache=cache,
        )
        for key in grads.weights:
            grads.weights[key][cells] = bucket.weights[key]
            grads.biases[key][cells] = bucket.biases[key]
    return grads


def parallel_map(fn, items, workers: int = 1) -> list:
    """Map ``fn`` over independent items, optionally on a thread pool.

    Results are returned in input order and are identical for any worker
    count; the heavy lifting inside ``fn`` is numpy, which releases the
    GIL. A worker exception propagates to the caller.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))

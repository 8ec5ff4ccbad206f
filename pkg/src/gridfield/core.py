"""Spatial primitives shared by training and rendering.

Axis-aligned bounds, grid binning, sinusoidal input encoding and the
density-to-opacity conversion. Everything here is a pure function of its
inputs and preserves the floating dtype it is given, so the production
float32 path and the float64 gradient-check path run the same code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned bounding box with strictly positive extent per axis."""

    b_min: np.ndarray
    b_max: np.ndarray

    def __post_init__(self):
        b_min = np.asarray(self.b_min, dtype=np.float64).reshape(3)
        b_max = np.asarray(self.b_max, dtype=np.float64).reshape(3)
        if not np.all(b_min < b_max):
            raise ValueError(f"degenerate bounds: b_min={b_min} must be < b_max={b_max}")
        object.__setattr__(self, "b_min", b_min)
        object.__setattr__(self, "b_max", b_max)

    @property
    def extent(self) -> np.ndarray:
        return self.b_max - self.b_min

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.b_min + self.b_max)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Componentwise ``b_min <= x <= b_max``, reduced over the last axis."""
        x = np.asarray(x)
        return np.all((x >= self.b_min) & (x <= self.b_max), axis=-1)

    def cell_size(self, resolution: np.ndarray) -> np.ndarray:
        return self.extent / np.asarray(resolution, dtype=np.float64)


def clip_into(x: np.ndarray, aabb: Aabb) -> np.ndarray:
    """Clamp points into the closed box, safe against cast rounding.

    Clipping against the float64 bounds and casting down to float32 can
    land half an ulp outside the box; one nextafter step pulls such
    points back in so downstream binning never sees an out-of-bounds
    coordinate.
    """
    x = np.asarray(x)
    out = np.clip(x, aabb.b_min, aabb.b_max).astype(x.dtype)
    high = out > aabb.b_max
    if high.any():
        out[high] = np.nextafter(out[high], x.dtype.type(-np.inf))
    low = out < aabb.b_min
    if low.any():
        out[low] = np.nextafter(out[low], x.dtype.type(np.inf))
    return out


def validate_resolution(resolution) -> np.ndarray:
    """Check a 3-vector of positive integer cell counts and return it as int64."""
    r = np.asarray(resolution, dtype=np.int64).reshape(3)
    if np.any(r < 1):
        raise ValueError(f"grid resolution must be >= 1 per axis, got {r}")
    return r


def bin_point(x: np.ndarray, aabb: Aabb, resolution) -> np.ndarray:
    """Map world points to integer cell indices by uniform spatial binning.

    ``floor((x - b_min) / cell_size)`` elementwise; points exactly on the
    upper boundary fall into the last cell so the closed box is fully covered.
    Accepts a single 3-vector or an ``(..., 3)`` array.

    Raises:
        ValueError: if any point lies outside the box (reports the first
            offending point and component).
    """
    r = validate_resolution(resolution)
    x = np.asarray(x)
    below = x < aabb.b_min
    above = x > aabb.b_max
    if np.any(below) or np.any(above):
        bad = np.argwhere(below | above)[0]
        axis = int(bad[-1])
        value = x[tuple(bad)]
        bound = aabb.b_min[axis] if value < aabb.b_min[axis] else aabb.b_max[axis]
        raise ValueError(
            f"point outside bounds: component {axis} is {value!r}, bound {bound!r}"
        )
    cell = aabb.cell_size(r)
    idx = np.floor((x - aabb.b_min) / cell).astype(np.int64)
    return np.minimum(idx, r - 1)


def flatten_cell_index(idx: np.ndarray, resolution) -> np.ndarray:
    """Flatten 3D cell indices x-major (i_x fastest). Layout is part of the
    checkpoint contract and must not change."""
    r = validate_resolution(resolution)
    idx = np.asarray(idx)
    return idx[..., 0] + r[0] * (idx[..., 1] + r[1] * idx[..., 2])


def unflatten_cell_index(flat: np.ndarray, resolution) -> np.ndarray:
    r = validate_resolution(resolution)
    flat = np.asarray(flat)
    ix = flat % r[0]
    iy = (flat // r[0]) % r[1]
    iz = flat // (r[0] * r[1])
    return np.stack([ix, iy, iz], axis=-1)


def cell_bounds(idx: np.ndarray, aabb: Aabb, resolution) -> tuple[np.ndarray, np.ndarray]:
    """Lower/upper corners of the cells with the given 3D indices."""
    r = validate_resolution(resolution)
    cell = aabb.cell_size(r)
    lo = aabb.b_min + np.asarray(idx) * cell
    return lo, lo + cell


def positional_encode(v: np.ndarray, num_freqs: int, include_raw: bool = True) -> np.ndarray:
    """Sinusoidal feature expansion of coordinates.

    Layout per input vector: optional raw passthrough, then for each
    frequency k = 0..L-1 the blocks sin(2^k pi v) and cos(2^k pi v), each
    spanning all input components. Output width is D * (raw + 2L) for
    D-dimensional input.
    """
    v = np.asarray(v)
    dim = v.shape[-1]
    out_parts = []
    if include_raw:
        out_parts.append(v)
    if num_freqs > 0:
        freqs = (2.0 ** np.arange(num_freqs)) * np.pi
        ang = v[..., None, :] * freqs[:, None].astype(v.dtype)  # (..., L, D)
        sin = np.sin(ang)
        cos = np.cos(ang)
        inter = np.stack([sin, cos], axis=-2)  # (..., L, 2, D)
        out_parts.append(inter.reshape(*v.shape[:-1], num_freqs * 2 * dim))
    return np.concatenate(out_parts, axis=-1).astype(v.dtype)


@dataclass(frozen=True)
class PositionalEncoding:
    """Encoding configuration for positions and view directions.

    ``num_freqs_position=10`` / ``num_freqs_direction=4`` with the raw input
    concatenated gives 63- and 27-wide features, matching the teacher
    architecture's input widths.
    """

    num_freqs_position: int = 10
    num_freqs_direction: int = 4
    include_raw_input: bool = True

    def __post_init__(self):
        if self.num_freqs_position < 0 or self.num_freqs_direction < 0:
            raise ValueError("frequency counts must be non-negative")

    @property
    def position_dim(self) -> int:
        return 3 * (int(self.include_raw_input) + 2 * self.num_freqs_position)

    @property
    def direction_dim(self) -> int:
        return 3 * (int(self.include_raw_input) + 2 * self.num_freqs_direction)

    def encode_position(self, x: np.ndarray) -> np.ndarray:
        return positional_encode(x, self.num_freqs_position, self.include_raw_input)

    def encode_direction(self, d: np.ndarray) -> np.ndarray:
        return positional_encode(d, self.num_freqs_direction, self.include_raw_input)


def density_to_alpha(sigma, delta):
    """Per-segment opacity ``1 - exp(-sigma * delta)``.

    The negated exponent is the standard volumetric form; the positive
    variant would leave the unit interval for any positive density.
    Computed via expm1 so tiny optical depths keep full precision.
    """
    return -np.expm1(-np.asarray(sigma) * np.asarray(delta))

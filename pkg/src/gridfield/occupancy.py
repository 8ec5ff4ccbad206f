"""Binary occupancy grid driving empty-space skipping.

A fine grid (network resolution times a factor, capped at 256 per axis)
stores one bit per cell: whether any of a 3x3x3 probe lattice spanning
the cell, corners included, reads density above the threshold. Probing
the corners shares points with neighbor cells and errs toward marking
borderline cells occupied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .batched import parallel_map
from .core import Aabb, bin_point, clip_into, flatten_cell_index, validate_resolution

DEFAULT_TAU = 10.0
OCCUPANCY_FACTOR = 16
MAX_OCCUPANCY_RES = 256

# 3x3x3 unit-cell lattice offsets, corners included.
_PROBE_OFFSETS = np.stack(
    np.meshgrid(*([np.array([0.0, 0.5, 1.0])] * 3), indexing="ij"), axis=-1
).reshape(-1, 3)


@dataclass
class OccupancyGrid:
    """Packed bitmap over a fine uniform grid inside an AABB."""

    aabb: Aabb
    resolution: np.ndarray
    bits: np.ndarray  # packed uint8, flat cell index x-major, little bit order

    def __post_init__(self):
        self.resolution = validate_resolution(self.resolution)
        if np.any(self.resolution > MAX_OCCUPANCY_RES):
            raise ValueError(f"occupancy resolution capped at {MAX_OCCUPANCY_RES} per axis")
        expected = (self.n_cells + 7) // 8
        if self.bits.dtype != np.uint8 or self.bits.shape != (expected,):
            raise ValueError(f"bitmap must be {expected} packed bytes, got {self.bits.shape}")

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.resolution))

    @classmethod
    def from_bool_array(cls, aabb: Aabb, resolution, occupied_flat: np.ndarray) -> "OccupancyGrid":
        resolution = validate_resolution(resolution)
        n = int(np.prod(resolution))
        occupied_flat = np.asarray(occupied_flat, dtype=bool).reshape(n)
        return cls(aabb, resolution, np.packbits(occupied_flat, bitorder="little"))

    @classmethod
    def solid(cls, aabb: Aabb, resolution, value: bool = True) -> "OccupancyGrid":
        resolution = validate_resolution(resolution)
        n = int(np.prod(resolution))
        return cls.from_bool_array(aabb, resolution, np.full(n, value))

    def to_bool_array(self) -> np.ndarray:
        return np.unpackbits(self.bits, count=self.n_cells, bitorder="little").astype(bool)

    def get_bit(self, flat_index) -> np.ndarray:
        flat_index = np.asarray(flat_index)
        return ((self.bits[flat_index >> 3] >> (flat_index & 7)) & 1).astype(bool)

    def set_bit(self, flat_index: int, value: bool):
        byte, pos = flat_index >> 3, flat_index & 7
        if value:
            self.bits[byte] |= np.uint8(1 << pos)
        else:
            self.bits[byte] &= np.uint8(~(1 << pos) & 0xFF)

    def occupied_at(self, x: np.ndarray) -> np.ndarray:
        """Bit lookup for world points; raises on out-of-bounds input."""
        idx = bin_point(x, self.aabb, self.resolution)
        return self.get_bit(flatten_cell_index(idx, self.resolution))

    def occupied_fraction(self) -> float:
        return float(self.to_bool_array().mean())


def is_occupied(grid: OccupancyGrid, x: np.ndarray) -> bool:
    return bool(grid.occupied_at(np.asarray(x)))


def occupancy_resolution(network_resolution, factor: int = OCCUPANCY_FACTOR) -> np.ndarray:
    r = validate_resolution(network_resolution) * factor
    return np.minimum(r, MAX_OCCUPANCY_RES)


def extract_occupancy(
    field,
    aabb: Aabb,
    resolution,
    tau: float = DEFAULT_TAU,
    workers: int = 1,
    chunk_cells: int = 16384,
) -> OccupancyGrid:
    """Probe a density field on every cell's 3x3x3 lattice and threshold.

    ``field(positions) -> densities`` is typically a trained teacher
    queried at a canonical view direction (density is view-independent).
    A cell is occupied iff any of its 27 probes exceeds ``tau``. Chunks of
    cells evaluate independently, so extraction parallelizes cleanly.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    resolution = validate_resolution(resolution)
    n = int(np.prod(resolution))
    cell = aabb.cell_size(resolution)
    flat = np.arange(n)
    ix = flat % resolution[0]
    iy = (flat // resolution[0]) % resolution[1]
    iz = flat // (resolution[0] * resolution[1])
    lows = aabb.b_min + np.stack([ix, iy, iz], axis=-1) * cell

    def probe_chunk(start: int) -> np.ndarray:
        lo = lows[start : start + chunk_cells]
        pts = (lo[:, None, :] + _PROBE_OFFSETS[None, :, :] * cell).astype(np.float32)
        sigma = np.asarray(field(clip_into(pts.reshape(-1, 3), aabb)))
        return (sigma.reshape(len(lo), 27) > tau).any(axis=1)

    chunks = parallel_map(probe_chunk, range(0, n, chunk_cells), workers=workers)
    occupied = np.concatenate(chunks) if chunks else np.zeros(0, dtype=bool)
    return OccupancyGrid.from_bool_array(aabb, resolution, occupied)

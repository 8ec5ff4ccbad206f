"""The scene representation: a uniform lattice of independent tiny MLPs.

Every grid cell owns a full parameter set; querying a point encodes it,
bins it to a cell and runs that cell's network. Parameters are stored
stacked over cells (dense, x-major flattening) so training and grouped
inference vectorize over the whole lattice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import batched, mlp
from .core import Aabb, PositionalEncoding, bin_point, flatten_cell_index, validate_resolution


@dataclass
class NetworkGrid:
    """A lattice of per-cell networks sharing one architecture and encoding."""

    aabb: Aabb
    resolution: np.ndarray
    arch: mlp.MlpArchitecture
    encoding: PositionalEncoding
    params: mlp.MlpParams  # stacked, lead shape (n_cells,)

    def __post_init__(self):
        self.resolution = validate_resolution(self.resolution)
        if self.params.lead_shape != (self.n_cells,):
            raise ValueError(
                f"parameter stack {self.params.lead_shape} != cell count ({self.n_cells},)"
            )
        if self.encoding.position_dim != self.arch.position_input_dim:
            raise ValueError("position encoding width does not match architecture input")
        if self.encoding.direction_dim != self.arch.direction_input_dim:
            raise ValueError("direction encoding width does not match architecture input")

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.resolution))

    def cell_index(self, x: np.ndarray) -> np.ndarray:
        return flatten_cell_index(bin_point(x, self.aabb, self.resolution), self.resolution)

    def params_at(self, flat_index: int) -> mlp.MlpParams:
        return self.params.at(flat_index)

    def query_points(self, positions: np.ndarray, directions: np.ndarray):
        """Batch field query: bin, group by cell, evaluate, restore order."""
        layout = batched.group_by_network(
            batched.QueryBatch(positions, directions, self.cell_index(positions)),
            self.n_cells,
        )
        return batched.grouped_forward(self, layout)


def query_field(grid: NetworkGrid, x: np.ndarray, d: np.ndarray):
    """Evaluate the field at a single point: dispatch to the owning cell."""
    x = np.asarray(x, dtype=np.float64)
    idx = int(grid.cell_index(x))
    dtype = grid.params.dtype
    x_enc = grid.encoding.encode_position(x.astype(dtype))
    d_enc = grid.encoding.encode_direction(np.asarray(d, dtype=dtype))
    return mlp.forward(grid.params.at(idx), x_enc, d_enc)


def grid_resolution_rule(aabb: Aabb, max_dim: int = 16) -> np.ndarray:
    """Cell counts per axis: the largest extent gets ``max_dim`` cells and
    the others round to keep cells cubic, never below one cell."""
    if max_dim < 1:
        raise ValueError("max_dim must be positive")
    extent = aabb.extent
    cell = extent.max() / max_dim
    r = np.maximum(1, np.rint(extent / cell).astype(np.int64))
    return validate_resolution(r)


def init_network_grid(
    aabb: Aabb,
    resolution,
    seed: int,
    arch: mlp.MlpArchitecture | None = None,
    encoding: PositionalEncoding | None = None,
    dtype=np.float32,
) -> NetworkGrid:
    """Freshly initialized lattice; ``resolution=(1,1,1)`` with a teacher
    architecture yields the monolithic reference model."""
    encoding = encoding or PositionalEncoding()
    if arch is None:
        arch = mlp.MlpArchitecture(
            position_input_dim=encoding.position_dim,
            direction_input_dim=encoding.direction_dim,
        )
    resolution = validate_resolution(resolution)
    n_cells = int(np.prod(resolution))
    params = mlp.init_params(arch, seed=seed, n_networks=n_cells, dtype=dtype)
    return NetworkGrid(aabb=aabb, resolution=resolution, arch=arch, encoding=encoding, params=params)

"""Radiance fields on a lattice of tiny networks.

A bounded scene is represented by thousands of small per-cell MLPs
trained by teacher distillation plus photometric fine-tuning, and
rendered with empty-space skipping and early ray termination.
"""

__version__ = "0.1.0"

from .core import Aabb, PositionalEncoding, bin_point, density_to_alpha, positional_encode
from .grid import NetworkGrid, grid_resolution_rule, init_network_grid, query_field
from .mlp import MlpArchitecture, MlpParams, count_flops, init_params, teacher_architecture
from .occupancy import OccupancyGrid, extract_occupancy, is_occupied
from .render import Camera, RenderConfig, composite, compute_psnr, render_image
from .scene import AnalyticScene, SceneDataset, generate_toy_dataset, standard_toy_scene
from .train import TrainConfig, run_pipeline

__all__ = [
    "Aabb",
    "AnalyticScene",
    "Camera",
    "MlpArchitecture",
    "MlpParams",
    "NetworkGrid",
    "OccupancyGrid",
    "PositionalEncoding",
    "RenderConfig",
    "SceneDataset",
    "TrainConfig",
    "bin_point",
    "composite",
    "compute_psnr",
    "count_flops",
    "density_to_alpha",
    "extract_occupancy",
    "generate_toy_dataset",
    "grid_resolution_rule",
    "init_network_grid",
    "init_params",
    "is_occupied",
    "positional_encode",
    "query_field",
    "render_image",
    "run_pipeline",
    "standard_toy_scene",
    "teacher_architecture",
]

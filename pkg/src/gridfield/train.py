"""Three-stage training: teacher fitting, distillation, fine-tuning.

The teacher is a single large network (a 1x1x1 lattice) trained with the
photometric loss. Its density field seeds the occupancy grid, then each
cell network of the student lattice regresses the teacher's opacity and
color on points sampled inside its own cell - no rendering, no images.
Fine-tuning returns to the photometric loss with empty-space skipping and
L2 regularization of the two view-dependent layers.

Gradients are computed analytically end to end (through compositing and
the opacity conversion); the float64 path exists for finite-difference
verification only.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass

import numpy as np

from . import mlp
from .batched import QueryBatch, group_by_network, grouped_backward, grouped_forward
from .core import Aabb, PositionalEncoding, clip_into, density_to_alpha
from .grid import NetworkGrid, grid_resolution_rule, init_network_grid
from .occupancy import OccupancyGrid, extract_occupancy, occupancy_resolution
from .render import RenderConfig, compute_psnr, generate_rays, intersect_aabb, render_image

log = logging.getLogger("gridfield.train")

REGULARIZED_LAYERS = ("direction", "color")  # the view-dependent tail of the net


@dataclass
class TrainConfig:
    """Hyperparameters for all three stages.

    Defaults are the full-scale settings (batch of 8192 pixels, learning
    rate 5e-4, regularization weight 1e-6, 600k/150k/1000k steps);
    ``desk_preset`` scales the iteration counts and model sizes down to
    something a desktop CPU finishes in well under the acceptance budget.
    """

    batch_size_pixels: int = 8192
    learning_rate: float = 5e-4
    lr_final_fraction: float = 0.1
    l2_reg_weight: float = 1e-6
    teacher_steps: int = 600_000
    distill_steps: int = 150_000
    finetune_steps: int = 1_000_000
    distill_points_per_cell: int = 32
    distill_alpha_weight: float = 1.0
    distill_delta: float | None = None  # None: scene diagonal / render sample count
    k_train: int = 384
    density_noise_std: float = 0.0  # teacher-stage density perturbation

    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grid_max_dim: int = 16
    occupancy_factor: int = 16
    occupancy_tau: float = 10.0
    teacher_hidden_layers: int = 10
    teacher_hidden_width: int = 256
    teacher_direction_width: int = 128
    teacher_skip_layer: int | None = 5
    student_hidden_layers: int = 4
    student_hidden_width: int = 32
    background: tuple = (1.0, 1.0, 1.0)
    log_every: int = 100

    @classmethod
    def desk_preset(cls, seed: int = 0) -> "TrainConfig":
        """Scaled-down schedule for 128x128 toy scenes on a CPU."""
        return cls(
            batch_size_pixels=640,
            teacher_steps=3200,
            distill_steps=1200,
            finetune_steps=2600,
            distill_points_per_cell=24,
            k_train=128,
            occupancy_factor=4,
            teacher_hidden_layers=6,
            teacher_hidden_width=96,
            teacher_direction_width=64,
            teacher_skip_layer=2,
            seed=seed,
        )

    def teacher_architecture(self, encoding) -> mlp.MlpArchitecture:
        return mlp.teacher_architecture(
            hidden_layers=self.teacher_hidden_layers,
            hidden_width=self.teacher_hidden_width,
            direction_layer_width=self.teacher_direction_width,
            skip_layer=self.teacher_skip_layer,
            position_input_dim=encoding.position_dim,
            direction_input_dim=encoding.direction_dim,
        )

    def student_architecture(self, encoding) -> mlp.MlpArchitecture:
        return mlp.MlpArchitecture(
            hidden_layers=self.student_hidden_layers,
            hidden_width=self.student_hidden_width,
            position_input_dim=encoding.position_dim,
            direction_input_dim=encoding.direction_dim,
        )


def lr_schedule(step: int, base_lr: float, horizon: int, final_fraction: float = 0.1) -> float:
    """Exponential decay reaching ``base_lr * final_fraction`` at ``horizon``."""
    if horizon <= 0:
        return base_lr
    return float(base_lr * final_fraction ** (step / horizon))


@dataclass
class AdamState:
    m: mlp.MlpParams
    v: mlp.MlpParams
    step: int = 0

    @classmethod
    def for_params(cls, params: mlp.MlpParams) -> "AdamState":
        return cls(m=mlp.map_params(np.zeros_like, params), v=mlp.map_params(np.zeros_like, params))


def adam_update(params: mlp.MlpParams, grads: mlp.MlpParams, state: AdamState, lr: float, cfg: TrainConfig):
    """One Adam step, in place."""
    state.step += 1
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for (key, p), (_, g), (_, m), (_, v) in zip(
        params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()
    ):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def regularization_term(params: mlp.MlpParams, weight: float):
    """L2 penalty on the last two affine layers (the view-dependent part).

    Returns the scalar and a gradient container that is zero everywhere
    except those layers, so the density path never feels it.
    """
    grads = mlp.map_params(np.zeros_like, params)
    value = 0.0
    for name in REGULARIZED_LAYERS:
        w, b = params.weights[name], params.biases[name]
        value += float((w.astype(np.float64) ** 2).sum() + (b.astype(np.float64) ** 2).sum())
        grads.weights[name][...] = 2.0 * weight * w
        grads.biases[name][...] = 2.0 * weight * b
    return weight * value, grads


@dataclass
class RaySamples:
    """Retained quadrature points of a ray batch, in dense-ray coordinates."""

    positions: np.ndarray  # (Q, 3)
    directions: np.ndarray  # (Q, 3)
    ray_index: np.ndarray  # (Q,)
    slot: np.ndarray  # (Q,) nominal sample slot within the ray
    deltas: np.ndarray  # (B,) per-ray nominal segment length
    n_rays: int
    k: int


def prepare_ray_samples(
    origins: np.ndarray,
    directions: np.ndarray,
    aabb: Aabb,
    k: int,
    stratified: bool,
    rng: np.random.Generator | None,
    occ: OccupancyGrid | None = None,
) -> RaySamples:
    """Stratified equidistant samples for a ray batch, ESS-filtered.

    Sampling is separated from the loss so gradient checks can replay the
    exact same points.
    """
    n = len(origins)
    t0, t1 = intersect_aabb(origins, directions, aabb)
    hit = t1 > t0
    seg = np.where(hit, (t1 - t0) / k, 0.0).astype(np.float32)
    jitter = rng.random((n, k), dtype=np.float32) if stratified else np.full((n, k), 0.5, np.float32)
    ts = t0[:, None].astype(np.float32) + (np.arange(k)[None, :] + jitter) * seg[:, None]
    pts = origins[:, None, :].astype(np.float32) + ts[..., None] * directions[:, None, :].astype(np.float32)
    pts = clip_into(pts, aabb)
    keep = np.repeat(hit[:, None], k, axis=1)
    if occ is not None:
        keep &= occ.occupied_at(pts.reshape(-1, 3)).reshape(n, k)
    ray_index, slot = np.nonzero(keep)
    return RaySamples(
        positions=pts[ray_index, slot],
        directions=np.asarray(directions, dtype=np.float32)[ray_index],
        ray_index=ray_index,
        slot=slot,
        deltas=seg,
        n_rays=n,
        k=k,
    )


def photometric_loss_and_grads(
    model: NetworkGrid,
    samples: RaySamples,
    gt: np.ndarray,
    background,
    reg_weight: float = 0.0,
    want_grads: bool = True,
    sigma_noise: np.ndarray | None = None,
):
    """Mean squared pixel error of the composited batch, plus gradients.

    Forward: grouped network evaluation, dense per-ray compositing with
    the white/background term, ``loss = mean_b ||c_b - gt_b||^2`` (plus the
    optional view-layer L2 term). The alpha gradient uses the
    rest-of-ray recurrence, so no division by (1 - alpha) ever happens.

    ``sigma_noise``, if given, perturbs each query's density before the
    opacity conversion (rectified again afterwards): the reference
    training recipe's regularizer that pushes the fitted density field
    toward a decisive occupied/empty split instead of translucent fog.
    """
    dtype = model.params.dtype
    b, k = samples.n_rays, samples.k
    layout = group_by_network(
        QueryBatch(samples.positions, samples.directions, model.cell_index(samples.positions)),
        model.n_cells,
    )
    caches: list | None = [] if want_grads else None
    colors, sigmas = grouped_forward(model, layout, caches=caches)
    noise_mask = None
    if sigma_noise is not None:
        shifted = sigmas + sigma_noise.astype(dtype)
        noise_mask = shifted > 0
        sigmas = np.maximum(shifted, 0.0)

    deltas = samples.deltas.astype(dtype)
    alpha_q = density_to_alpha(sigmas, deltas[samples.ray_index])
    alpha = np.zeros((b, k), dtype=dtype)
    color = np.zeros((b, k, 3), dtype=dtype)
    alpha[samples.ray_index, samples.slot] = alpha_q
    color[samples.ray_index, samples.slot] = colors

    trans = np.cumprod(1.0 - alpha, axis=1)
    t_before = np.concatenate([np.ones_like(trans[:, :1]), trans[:, :-1]], axis=1)
    weights = t_before * alpha
    bg = np.asarray(background, dtype=dtype)
    pred = (weights[..., None] * color).sum(axis=1) + trans[:, -1:] * bg[None, :]
    resid = pred - gt.astype(dtype)
    loss = float((resid.astype(np.float64) ** 2).sum(axis=-1).mean())

    reg_value = 0.0
    reg_grads = None
    if reg_weight > 0.0:
        reg_value, reg_grads = regularization_term(model.params, reg_weight)
        loss += reg_value
    if not want_grads:
        return loss, None

    dpred = (2.0 / b) * resid  # (B, 3)
    # rest[i] = color composited from samples after i, background included
    rest = np.empty_like(color)
    rest[:, -1] = bg
    for i in range(k - 2, -1, -1):
        a = alpha[:, i + 1 : i + 2]
        rest[:, i] = a * color[:, i + 1] + (1.0 - a) * rest[:, i + 1]
    d_alpha = (dpred[:, None, :] * t_before[..., None] * (color - rest)).sum(axis=-1)
    d_color_dense = weights[..., None] * dpred[:, None, :]
    d_sigma_dense = d_alpha * deltas[:, None] * (1.0 - alpha)

    d_color_q = d_color_dense[samples.ray_index, samples.slot]
    d_sigma_q = d_sigma_dense[samples.ray_index, samples.slot]
    if noise_mask is not None:
        d_sigma_q = d_sigma_q * noise_mask
    grads = grouped_backward(model, layout, caches, d_color_q, d_sigma_q)
    if reg_grads is not None:
        grads = mlp.map_params(lambda g, r: g + r, grads, reg_grads)
    return loss, grads


def photometric_step(
    model: NetworkGrid,
    dataset,
    cfg: TrainConfig,
    state: AdamState,
    rng: np.random.Generator,
    occ: OccupancyGrid | None = None,
    apply_reg: bool = False,
    lr: float | None = None,
    train_indices: list | None = None,
    noise_std: float = 0.0,
) -> float:
    """Sample one training image and a pixel batch, render, update once.

    Early termination stays off during training so gradients reach every
    retained sample; empty-space skipping is the caller's choice (on for
    fine-tuning, off for the teacher that occupancy is extracted from).
    """
    idx = train_indices if train_indices is not None else dataset.indices("train")
    view = int(rng.choice(np.asarray(idx)))
    cam = dataset.cameras[view]
    n_px = cam.width * cam.height
    bsz = min(cfg.batch_size_pixels, n_px)
    pixels = rng.choice(n_px, size=bsz, replace=bsz > n_px)
    origins, dirs = generate_rays(cam)
    gt = dataset.images[view].reshape(-1, 3)[pixels]
    samples = prepare_ray_samples(
        origins[pixels], dirs[pixels], dataset.aabb, cfg.k_train, True, rng, occ=occ
    )
    noise = None
    if noise_std > 0.0:
        noise = rng.normal(0.0, noise_std, size=len(samples.positions)).astype(np.float32)
    loss, grads = photometric_loss_and_grads(
        model,
        samples,
        gt,
        cfg.background,
        reg_weight=cfg.l2_reg_weight if apply_reg else 0.0,
        sigma_noise=noise,
    )
    adam_update(model.params, grads, state, cfg.learning_rate if lr is None else lr, cfg)
    return loss


def _unit_sphere(rng: np.random.Generator, shape) -> np.ndarray:
    v = rng.normal(size=(*shape, 3)).astype(np.float32)
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    return v


def distill_step(
    student: NetworkGrid,
    teacher: NetworkGrid,
    cfg: TrainConfig,
    state: AdamState,
    rng: np.random.Generator,
    delta_ref: float,
) -> float:
    """Regress every cell network onto the teacher at random in-cell points.

    Densities on both sides convert to opacities at the reference segment
    length before the L2 comparison (big densities saturate, so their
    differences stop dominating); colors compare directly. Touches no
    training images and performs no rendering.
    """
    n, p = student.n_cells, cfg.distill_points_per_cell
    res = student.resolution
    cell = student.aabb.cell_size(res).astype(np.float32)
    flat = np.arange(n)
    idx3 = np.stack([flat % res[0], (flat // res[0]) % res[1], flat // (res[0] * res[1])], axis=-1)
    lows = (student.aabb.b_min + idx3 * student.aabb.cell_size(res)).astype(np.float32)
    # keep a hair away from cell faces so float32 sums never land on a
    # boundary and leak the sample into the neighbor cell
    u = rng.random((n, p, 3), dtype=np.float32) * np.float32(1.0 - 2e-5) + np.float32(1e-5)
    positions = clip_into(lows[:, None, :] + u * cell[None, None, :], student.aabb)
    directions = _unit_sphere(rng, (n, p))

    t_color, t_sigma = teacher.query_points(positions.reshape(-1, 3), directions.reshape(-1, 3))
    t_alpha = density_to_alpha(t_sigma, np.float32(delta_ref)).reshape(n, p)
    t_color = t_color.reshape(n, p, 3)

    x_enc = student.encoding.encode_position(positions)
    d_enc = student.encoding.encode_direction(directions)
    cache: dict = {}
    s_color, s_sigma = mlp.forward(student.params, x_enc, d_enc, cache=cache)
    s_alpha = density_to_alpha(s_sigma, np.float32(delta_ref))

    d_alpha = s_alpha - t_alpha
    d_col = s_color - t_color
    m = n * p
    w_a = cfg.distill_alpha_weight
    loss = float(
        w_a * (d_alpha.astype(np.float64) ** 2).sum() + (d_col.astype(np.float64) ** 2).sum()
    ) / m
    d_sigma_up = (2.0 * w_a / m) * d_alpha * np.float32(delta_ref) * (1.0 - s_alpha)
    d_color_up = (2.0 / m) * d_col
    grads = mlp.backward(student.params, x_enc, d_enc, d_color_up, d_sigma_up, cache=cache)
    lr = lr_schedule(state.step, cfg.learning_rate, cfg.distill_steps, cfg.lr_final_fraction)
    adam_update(student.params, grads, state, lr, cfg)
    return loss


def evaluate_psnr(
    model: NetworkGrid,
    dataset,
    render_cfg: RenderConfig,
    occ: OccupancyGrid | None = None,
    split: str = "test",
    seed: int = 0,
    workers: int = 1,
) -> float:
    """Mean PSNR over a dataset split, rendered with production settings."""
    psnrs = []
    for i in dataset.indices(split):
        img, _ = render_image(model, occ, dataset.cameras[i], render_cfg, seed=seed, workers=workers)
        psnrs.append(compute_psnr(img, dataset.images[i]))
    return float(np.mean(psnrs))


@dataclass
class PipelineResult:
    teacher: NetworkGrid
    student: NetworkGrid
    occupancy: OccupancyGrid
    report: dict


def train_photometric_loop(
    model: NetworkGrid,
    dataset,
    cfg: TrainConfig,
    steps: int,
    rng: np.random.Generator,
    occ: OccupancyGrid | None,
    apply_reg: bool,
    stage: str,
    curve: list | None = None,
    noise_std: float = 0.0,
) -> None:
    """Run ``steps`` photometric updates with a fresh optimizer."""
    state = AdamState.for_params(model.params)
    t_start = time.perf_counter()
    for step in range(steps):
        lr = lr_schedule(step, cfg.learning_rate, steps, cfg.lr_final_fraction)
        loss = photometric_step(
            model, dataset, cfg, state, rng, occ=occ, apply_reg=apply_reg, lr=lr, noise_std=noise_std
        )
        if curve is not None and (step % cfg.log_every == 0 or step == steps - 1):
            curve.append({"stage": stage, "step": step, "loss": loss})
        if step % max(1, cfg.log_every * 5) == 0:
            log.info("%s step %d/%d loss %.5f (%.1fs)", stage, step, steps, loss, time.perf_counter() - t_start)


def run_distill_loop(
    student: NetworkGrid,
    teacher: NetworkGrid,
    cfg: TrainConfig,
    delta_ref: float,
    rng: np.random.Generator,
    curve: list | None = None,
) -> tuple[float, float]:
    """Run the distillation stage; returns (first, last) loss values."""
    state = AdamState.for_params(student.params)
    first = last = float("nan")
    for step in range(cfg.distill_steps):
        last = distill_step(student, teacher, cfg, state, rng, delta_ref)
        if step == 0:
            first = last
        if curve is not None and (step % cfg.log_every == 0 or step == cfg.distill_steps - 1):
            curve.append({"stage": "distill", "step": step, "loss": last})
        if step % max(1, cfg.log_every * 5) == 0:
            log.info("distill step %d/%d loss %.6f", step, cfg.distill_steps, last)
    return first, last


def run_pipeline(
    dataset,
    cfg: TrainConfig,
    render_cfg: RenderConfig | None = None,
    workers: int = 1,
    curve_sink=None,
) -> PipelineResult:
    """Teacher training, occupancy extraction, distillation, fine-tuning.

    Deterministic in ``cfg.seed``: every stage draws from its own child
    stream. ``curve_sink(record)`` receives loss-curve and stage-report
    entries if given.
    """
    render_cfg = render_cfg or RenderConfig()
    root = np.random.SeedSequence(cfg.seed)
    keys = root.spawn(5)
    curve: list = []
    report: dict = {"seed": cfg.seed, "config": dataclasses.asdict(cfg)}

    def emit(record):
        if curve_sink is not None:
            curve_sink(record)

    # Stage 1: teacher.
    enc = PositionalEncoding()
    teacher = init_network_grid(
        dataset.aabb,
        (1, 1, 1),
        seed=int(keys[0].generate_state(1)[0]),
        arch=cfg.teacher_architecture(enc),
        encoding=enc,
    )
    t0 = time.perf_counter()
    train_photometric_loop(
        teacher, dataset, cfg, cfg.teacher_steps, np.random.default_rng(keys[1]), None, False, "teacher",
        curve, noise_std=cfg.density_noise_std,
    )
    report["teacher_seconds"] = time.perf_counter() - t0
    log.info("teacher trained in %.1fs", report["teacher_seconds"])

    # Stage 2: occupancy from the teacher, then distillation.
    resolution = grid_resolution_rule(dataset.aabb, cfg.grid_max_dim)
    occ_res = occupancy_resolution(resolution, cfg.occupancy_factor)
    occ = extract_occupancy(
        density_probe(teacher), dataset.aabb, occ_res, tau=cfg.occupancy_tau, workers=workers
    )
    report["occupancy_fraction"] = occ.occupied_fraction()

    student = init_network_grid(
        dataset.aabb,
        resolution,
        seed=int(keys[2].generate_state(1)[0]),
        arch=cfg.student_architecture(teacher.encoding),
        encoding=teacher.encoding,
    )
    delta_ref = cfg.distill_delta or dataset.aabb.diagonal / render_cfg.k
    report["distill_delta"] = delta_ref
    t0 = time.perf_counter()
    first_loss, last_loss = run_distill_loop(
        student, teacher, cfg, delta_ref, np.random.default_rng(keys[3]), curve
    )
    report["distill_seconds"] = time.perf_counter() - t0
    report["distill_loss_first"] = first_loss
    report["distill_loss_last"] = last_loss

    report["psnr_distilled"] = evaluate_psnr(
        student, dataset, render_cfg, occ=occ, seed=cfg.seed, workers=workers
    )
    log.info("distill-only held-out PSNR %.2f dB", report["psnr_distilled"])

    # Stage 3: photometric fine-tuning with ESS and view-layer regularization.
    t0 = time.perf_counter()
    train_photometric_loop(
        student, dataset, cfg, cfg.finetune_steps, np.random.default_rng(keys[4]), occ, True, "finetune", curve
    )
    report["finetune_seconds"] = time.perf_counter() - t0
    report["psnr_finetuned"] = evaluate_psnr(
        student, dataset, render_cfg, occ=occ, seed=cfg.seed, workers=workers
    )
    log.info("fine-tuned held-out PSNR %.2f dB", report["psnr_finetuned"])

    for record in curve:
        emit(record)
    report["curve"] = curve
    return PipelineResult(teacher=teacher, student=student, occupancy=occ, report=report)


def train_from_scratch(
    dataset,
    cfg: TrainConfig,
    steps: int,
    render_cfg: RenderConfig | None = None,
) -> NetworkGrid:
    """Photometric-only baseline: the student lattice trained directly on
    images with no teacher, no occupancy and the same regularizer."""
    root = np.random.SeedSequence([cfg.seed, 0xA5])
    enc = PositionalEncoding()
    resolution = grid_resolution_rule(dataset.aabb, cfg.grid_max_dim)
    student = init_network_grid(
        dataset.aabb,
        resolution,
        seed=int(root.generate_state(1)[0]),
        arch=cfg.student_architecture(enc),
        encoding=enc,
    )
    train_photometric_loop(
        student, dataset, cfg, steps, np.random.default_rng(root.spawn(1)[0]), None, True, "scratch"
    )
    return student


def density_probe(model: NetworkGrid, direction=(0.0, 0.0, 1.0)):
    """Density field of a model at a fixed canonical view direction."""
    d = np.asarray(direction, dtype=np.float32)

    def field(points: np.ndarray) -> np.ndarray:
        dirs = np.broadcast_to(d, (len(points), 3))
        _, sigma = model.query_points(points.astype(np.float32), dirs)
        return sigma

    return field


def mean_free_space_density(model: NetworkGrid, empty_cell_flat: np.ndarray) -> float:
    """Mean predicted density over a fixed probe lattice of known-empty cells."""
    if len(empty_cell_flat) == 0:
        return 0.0
    res = model.resolution
    cell = model.aabb.cell_size(res)
    flat = np.asarray(empty_cell_flat)
    idx3 = np.stack([flat % res[0], (flat // res[0]) % res[1], flat // (res[0] * res[1])], axis=-1)
    lows = model.aabb.b_min + idx3 * cell
    offsets = np.stack(np.meshgrid(*([np.array([0.25, 0.5, 0.75])] * 3), indexing="ij"), axis=-1).reshape(-1, 3)
    pts = (lows[:, None, :] + offsets[None, :, :] * cell).reshape(-1, 3).astype(np.float32)
    sigma = density_probe(model)(pts)
    return float(sigma.mean())

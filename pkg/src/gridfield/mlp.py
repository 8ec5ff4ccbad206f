"""One radiance MLP: parameters, forward pass, analytic gradients, FLOPs.

The network follows the classic radiance-field layout. A trunk of ReLU
affine layers processes the encoded position; the density head branches
off the trunk before the view direction enters, so density is
view-independent by construction. An unactivated feature affine feeds the
final hidden layer together with the encoded direction, and a sigmoid
output layer produces color.

The same code runs the tiny per-cell network (4 hidden layers, 32 units)
and the large teacher (10 hidden layers, 256 units, 128-unit direction
layer, skip connection). All array ops broadcast over leading dimensions,
so a stack of N parameter sets evaluates N batches in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LayerSpec:
    name: str
    in_dim: int
    out_dim: int


@dataclass(frozen=True)
class MlpArchitecture:
    """Shape manifest for one radiance MLP.

    ``hidden_layers`` counts every hidden affine: the ReLU trunk, the
    unactivated feature layer and the direction-injected last layer.
    ``skip_layer``, if set, re-concatenates the encoded position onto the
    input of that trunk layer (teacher only; the tiny net needs none).
    """

    hidden_layers: int = 4
    hidden_width: int = 32
    position_input_dim: int = 63
    direction_input_dim: int = 27
    color_dim: int = 3
    density_dim: int = 1
    direction_injection_layer: int | None = None
    direction_layer_width: int | None = None
    skip_layer: int | None = None

    def __post_init__(self):
        if self.hidden_layers < 3:
            raise ValueError("need at least trunk + feature + direction layers")
        if self.hidden_width < 1 or self.position_input_dim < 1 or self.direction_input_dim < 0:
            raise ValueError("invalid layer widths")
        if self.color_dim != 3 or self.density_dim != 1:
            raise ValueError("outputs are fixed to rgb + scalar density")
        inject = self.direction_injection_layer
        if inject is None:
            object.__setattr__(self, "direction_injection_layer", self.hidden_layers - 1)
        elif inject != self.hidden_layers - 1:
            raise ValueError("direction is injected at the last hidden layer only")
        if self.skip_layer is not None and not (1 <= self.skip_layer < self.trunk_layers):
            raise ValueError(f"skip layer {self.skip_layer} outside trunk range")

    @property
    def trunk_layers(self) -> int:
        return self.hidden_layers - 2

    @property
    def view_width(self) -> int:
        return self.direction_layer_width or self.hidden_width

    def layers(self) -> list[LayerSpec]:
        """Ordered affine-layer manifest; also the parameter layout on disk."""
        u, v = self.hidden_width, self.view_width
        specs = [LayerSpec("trunk0", self.position_input_dim, u)]
        for k in range(1, self.trunk_layers):
            in_dim = u + self.position_input_dim if k == self.skip_layer else u
            specs.append(LayerSpec(f"trunk{k}", in_dim, u))
        specs.append(LayerSpec("density", u, self.density_dim))
        specs.append(LayerSpec("feature", u, u))
        specs.append(LayerSpec("direction", u + self.direction_input_dim, v))
        specs.append(LayerSpec("color", v, self.color_dim))
        return specs

    def parameter_count(self) -> int:
        return sum(s.in_dim * s.out_dim + s.out_dim for s in self.layers())


def teacher_architecture(
    hidden_layers: int = 10,
    hidden_width: int = 256,
    direction_layer_width: int | None = 128,
    skip_layer: int | None = 5,
    position_input_dim: int = 63,
    direction_input_dim: int = 27,
) -> MlpArchitecture:
    """Reference (teacher) architecture; defaults give the full-size model,
    pass smaller widths/depths for desk-scale runs."""
    if skip_layer is not None and skip_layer >= hidden_layers - 2:
        skip_layer = max(1, (hidden_layers - 2) // 2)
    return MlpArchitecture(
        hidden_layers=hidden_layers,
        hidden_width=hidden_width,
        position_input_dim=position_input_dim,
        direction_input_dim=direction_input_dim,
        direction_layer_width=direction_layer_width,
        skip_layer=skip_layer,
    )


@dataclass
class MlpParams:
    """Weights and biases for one network, or a stack of networks.

    ``weights[name]`` has shape ``(*lead, out, in)`` and ``biases[name]``
    ``(*lead, out)``. ``lead = ()`` for a single network; a network grid
    stores ``lead = (n_cells,)`` so per-cell math vectorizes.
    """

    arch: MlpArchitecture
    weights: dict = field(default_factory=dict)
    biases: dict = field(default_factory=dict)

    @property
    def lead_shape(self) -> tuple:
        w = self.weights["trunk0"]
        return w.shape[:-2]

    @property
    def dtype(self):
        return self.weights["trunk0"].dtype

    def astype(self, dtype) -> "MlpParams":
        return MlpParams(
            self.arch,
            {k: v.astype(dtype) for k, v in self.weights.items()},
            {k: v.astype(dtype) for k, v in self.biases.items()},
        )

    def copy(self) -> "MlpParams":
        return MlpParams(
            self.arch,
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.biases.items()},
        )

    def at(self, index) -> "MlpParams":
        """View of one network out of a stacked parameter set (no copy)."""
        return MlpParams(
            self.arch,
            {k: v[index] for k, v in self.weights.items()},
            {k: v[index] for k, v in self.biases.items()},
        )

    def arrays(self):
        """Deterministic iteration over (key, array) in manifest order."""
        for spec in self.arch.layers():
            yield ("w", spec.name), self.weights[spec.name]
            yield ("b", spec.name), self.biases[spec.name]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.arrays()])

    def validate(self):
        lead = self.lead_shape
        for spec in self.arch.layers():
            w, b = self.weights[spec.name], self.biases[spec.name]
            if w.shape != (*lead, spec.out_dim, spec.in_dim):
                raise ValueError(f"{spec.name}: weight shape {w.shape} != manifest")
            if b.shape != (*lead, spec.out_dim):
                raise ValueError(f"{spec.name}: bias shape {b.shape} != manifest")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"{spec.name}: non-finite parameters")


def map_params(fn, *params: MlpParams) -> MlpParams:
    """Apply ``fn`` across matching arrays of one or more parameter sets."""
    first = params[0]
    return MlpParams(
        first.arch,
        {k: fn(*(p.weights[k] for p in params)) for k in first.weights},
        {k: fn(*(p.biases[k] for p in params)) for k in first.biases},
    )


def zeros_like_params(params: MlpParams) -> MlpParams:
    return map_params(np.zeros_like, params)


def zero_params(arch: MlpArchitecture, n_networks: int | None = None, dtype=np.float32) -> MlpParams:
    lead = () if n_networks is None else (n_networks,)
    weights = {s.name: np.zeros((*lead, s.out_dim, s.in_dim), dtype) for s in arch.layers()}
    biases = {s.name: np.zeros((*lead, s.out_dim), dtype) for s in arch.layers()}
    return MlpParams(arch, weights, biases)


def init_params(
    arch: MlpArchitecture,
    seed: int,
    n_networks: int | None = None,
    dtype=np.float32,
) -> MlpParams:
    """Fan-in-scaled uniform weights, zero biases, deterministic in the seed.

    Weight entries are drawn U(-1/sqrt(fan_in), 1/sqrt(fan_in)) layer by
    layer in manifest order, so the same (arch, seed, n_networks) always
    reproduces the same parameters.
    """
    rng = np.random.default_rng(seed)
    lead = () if n_networks is None else (n_networks,)
    weights, biases = {}, {}
    for spec in arch.layers():
        bound = 1.0 / np.sqrt(spec.in_dim)
        weights[spec.name] = rng.uniform(
            -bound, bound, size=(*lead, spec.out_dim, spec.in_dim)
        ).astype(dtype)
        biases[spec.name] = np.zeros((*lead, spec.out_dim), dtype=dtype)
    return MlpParams(arch, weights, biases)


def _affine(params: MlpParams, name: str, x: np.ndarray) -> np.ndarray:
    w = params.weights[name]
    b = params.biases[name]
    return np.matmul(x, np.swapaxes(w, -1, -2)) + b[..., None, :]


def _sigmoid(z):
    # Split by sign to stay overflow-free in float32.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(params: MlpParams, x_enc: np.ndarray, d_enc: np.ndarray, cache: dict | None = None):
    """Evaluate the network: ``(color in [0,1]^3, density >= 0)``.

    ``x_enc``/``d_enc`` have shape ``(*lead, B, dim)`` matching the
    parameter stack (plain ``(B, dim)`` or ``(dim,)`` for one network).
    Density never sees ``d_enc``. Pass a dict as ``cache`` to capture the
    activations ``backward`` needs.
    """
    arch = params.arch
    squeeze = x_enc.ndim == 1
    if squeeze:
        x_enc = x_enc[None, :]
        d_enc = d_enc[None, :]
    hs = []
    h = np.maximum(_affine(params, "trunk0", x_enc), 0.0)
    hs.append(h)
    for k in range(1, arch.trunk_layers):
        inp = np.concatenate([x_enc, h], axis=-1) if k == arch.skip_layer else h
        h = np.maximum(_affine(params, f"trunk{k}", inp), 0.0)
        hs.append(h)
    sigma = np.maximum(_affine(params, "density", h)[..., 0], 0.0)
    feat = _affine(params, "feature", h)  # intentionally unactivated
    g = np.maximum(_affine(params, "direction", np.concatenate([feat, d_enc], axis=-1)), 0.0)
    color = _sigmoid(_affine(params, "color", g))
    if cache is not None:
        cache.update(x_enc=x_enc, d_enc=d_enc, hs=hs, sigma=sigma, feat=feat, g=g, color=color)
    if squeeze:
        return color[0], sigma[0]
    return color, sigma


def backward(
    params: MlpParams,
    x_enc: np.ndarray,
    d_enc: np.ndarray,
    d_color: np.ndarray,
    d_sigma: np.ndarray,
    cache: dict | None = None,
) -> MlpParams:
    """Exact parameter gradients of ``sum(d_color * color + d_sigma * sigma)``.

    Recomputes the forward pass unless given the ``cache`` captured by
    ``forward``. Returns gradients in an ``MlpParams`` container with the
    same stacking as ``params``; batch contributions are summed per network.
    """
    arch = params.arch
    if x_enc.ndim == 1:
        x_enc, d_enc = x_enc[None, :], d_enc[None, :]
        d_color, d_sigma = d_color[None, :], np.asarray(d_sigma)[None]
    if cache is None:
        cache = {}
        forward(params, x_enc, d_enc, cache=cache)
    hs, sigma, feat, g, color = cache["hs"], cache["sigma"], cache["feat"], cache["g"], cache["color"]

    gw, gb = {}, {}

    def grad_affine(name, dz, x):
        gw[name] = np.matmul(np.swapaxes(dz, -1, -2), x)
        gb[name] = dz.sum(axis=-2)
        return np.matmul(dz, params.weights[name])

    dz_color = d_color * color * (1.0 - color)
    dg = grad_affine("color", dz_color, g)
    dz_dir = dg * (g > 0)
    d_dir_in = grad_affine("direction", dz_dir, np.concatenate([feat, d_enc], axis=-1))
    dfeat = d_dir_in[..., : arch.hidden_width]
    dh = grad_affine("feature", dfeat, hs[-1])
    dz_density = (np.asarray(d_sigma) * (sigma > 0))[..., None]
    dh = dh + grad_affine("density", dz_density, hs[-1])
    for k in range(arch.trunk_layers - 1, 0, -1):
        dz = dh * (hs[k] > 0)
        if k == arch.skip_layer:
            inp = np.concatenate([x_enc, hs[k - 1]], axis=-1)
            dh = grad_affine(f"trunk{k}", dz, inp)[..., arch.position_input_dim :]
        else:
            dh = grad_affine(f"trunk{k}", dz, hs[k - 1])
    dz = dh * (hs[0] > 0)
    grad_affine("trunk0", dz, x_enc)
    return MlpParams(arch, gw, gb)


def count_flops(arch: MlpArchitecture) -> int:
    """FLOPs of one forward pass.

    Convention (fixed so ratios between architectures are well-defined):
    an affine layer costs 2*in*out for the multiply-accumulates plus out
    for the bias adds; every activation costs 1 FLOP per element (ReLU and
    sigmoid alike). The unactivated feature layer contributes no
    activation term.
    """
    total = 0
    for spec in arch.layers():
        total += 2 * spec.in_dim * spec.out_dim + spec.out_dim
    total += arch.trunk_layers * arch.hidden_width  # trunk ReLUs
    total += arch.density_dim  # density ReLU
    total += arch.view_width  # direction-layer ReLU
    total += arch.color_dim  # output sigmoid
    return total

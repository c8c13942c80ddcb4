"""Operator building blocks: pointwise affine/MLP layers, lifting and
projection maps, the Fourier-mixing block, and DeepONet branch/trunk nets.

All blocks are pure functions of their parameter tensors; parameters are
created by the ``init`` classmethods from a caller-supplied generator so a
fixed seed reproduces a model bit-for-bit.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .spectral import get_plan, init_spectral_weights, mode_count, spectral_conv

__all__ = [
    "Affine",
    "Mlp",
    "LiftProject",
    "FnoBlock",
    "DeepONetNets",
    "lift",
    "project",
    "fno_block",
    "deeponet_forward",
    "make_coords",
]


def _init_affine_arrays(rng: np.random.Generator, fan_in: int, fan_out: int, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
    b = rng.uniform(-bound, bound, size=(fan_out,)).astype(dtype)
    return w, b


class Affine:
    """Pointwise affine map over the trailing channel axis: y = x @ W + b."""

    def __init__(self, weight: Tensor, bias: Tensor | None = None):
        self.weight = weight
        self.bias = bias

    @classmethod
    def init(cls, rng, fan_in: int, fan_out: int, dtype=np.float64, bias: bool = True) -> "Affine":
        w, b = _init_affine_arrays(rng, fan_in, fan_out, dtype)
        return cls(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True) if bias else None)

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        flat = ad.reshape(x, (-1, x.shape[-1])) if x.data.ndim != 2 else x
        out = ad.matmul(flat, self.weight)
        if self.bias is not None:
            out = ad.bias_add(out, self.bias)
        if x.data.ndim != 2:
            out = ad.reshape(out, lead + (self.fan_out,))
        return out

    def named_parameters(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias


class Mlp:
    """Stack of affine layers with an activation between consecutive layers
    (never after the last). ``activation`` is 'gelu' or 'identity'; identity
    exists for constructed-weight equivalence tests."""

    def __init__(self, layers: list, activation: str = "gelu"):
        if activation not in ("gelu", "identity"):
            raise ValueError(f"unknown activation '{activation}'")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.fan_out != nxt.fan_in:
                raise ValueError(
                    f"mlp widths do not chain: {prev.fan_out} -> {nxt.fan_in}"
                )
        self.layers = layers
        self.activation = activation

    @classmethod
    def init(cls, rng, widths: list, dtype=np.float64, activation: str = "gelu") -> "Mlp":
        layers = [Affine.init(rng, fi, fo, dtype) for fi, fo in zip(widths[:-1], widths[1:])]
        return cls(layers, activation)

    def __call__(self, x: Tensor) -> Tensor:
        out = x
        for i, layer in enumerate(self.layers):
            out = layer(out)
            if i + 1 < len(self.layers) and self.activation == "gelu":
                out = ad.gelu(out)
        return out

    def named_parameters(self, prefix: str):
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}.{i}")


class LiftProject:
    """Lifting map into the working width and two-layer projection back out.

    ``lift_map`` takes the channel-concatenated (field, coordinates) vector
    to width d_v; ``project_map`` is d_v -> 128 -> d_u with GeLU between.
    """

    def __init__(self, lift_map: Affine, project_map: Mlp):
        if lift_map.fan_out != project_map.layers[0].fan_in:
            raise ValueError(
                f"lift output width {lift_map.fan_out} does not match projection input "
                f"{project_map.layers[0].fan_in}"
            )
        self.lift_map = lift_map
        self.project_map = project_map

    @classmethod
    def init(cls, rng, d_a: int, d_coord: int, d_v: int, d_u: int,
             hidden: int = 128, dtype=np.float64) -> "LiftProject":
        return cls(
            Affine.init(rng, d_a + d_coord, d_v, dtype),
            Mlp.init(rng, [d_v, hidden, d_u], dtype),
        )

    def named_parameters(self, prefix: str):
        yield from self.lift_map.named_parameters(f"{prefix}.lift")
        yield from self.project_map.named_parameters(f"{prefix}.project")


def make_coords(spatial: tuple, endpoint: bool = False, dtype=np.float64) -> np.ndarray:
    """Coordinate grid [*spatial, len(spatial)].

    Periodic grids use j/n (no repeated endpoint); ``endpoint=True`` gives
    the boundary-inclusive uniform grid for Dirichlet problems.
    """
    axes = []
    for n in spatial:
        if endpoint:
            axes.append(np.linspace(0.0, 1.0, n, dtype=dtype))
        else:
            axes.append(np.arange(n, dtype=dtype) / n)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1)


def lift(a: Tensor, coords: np.ndarray, params: LiftProject) -> Tensor:
    """Concatenate coordinate channels onto ``a`` and apply the lifting map.

    ``a`` is [batch, *spatial, d_a]; ``coords`` is [*spatial, d]. The field
    channels come first, coordinates after.
    """
    sp = a.shape[1:-1]
    if tuple(coords.shape[:-1]) != tuple(sp):
        raise ValueError(f"coordinate grid {coords.shape} does not match field {a.shape}")
    tiled = np.broadcast_to(coords, (a.shape[0],) + coords.shape)
    coords_t = Tensor(np.ascontiguousarray(tiled, dtype=a.data.dtype))
    return params.lift_map(ad.concat_channels([a, coords_t]))


def project(x: Tensor, params: LiftProject) -> Tensor:
    """Pointwise two-layer projection from the working width to d_u."""
    return params.project_map(x)


class FnoBlock:
    """One Fourier-operator iteration: act(W x + b + spectral_conv(x)).

    The plan (grid size) is supplied at call time so the same parameters run
    on any sufficiently large power-of-two grid; only the per-axis retained
    mode counts are fixed at init.
    """

    def __init__(self, mode_weights: Tensor, pointwise: Affine, modes: tuple,
                 activation: bool = True):
        self.mode_weights = mode_weights
        self.pointwise = pointwise
        self.modes = tuple(int(m) for m in modes)
        self.activation = activation

    @classmethod
    def init(cls, rng, d_in: int, d_out: int, modes: tuple, dtype=np.float64,
             activation: bool = True) -> "FnoBlock":
        weights = init_spectral_weights(rng, mode_count(modes), d_in, d_out, dtype)
        return cls(weights, Affine.init(rng, d_in, d_out, dtype), modes, activation)

    @property
    def d_in(self) -> int:
        return self.pointwise.fan_in

    @property
    def d_out(self) -> int:
        return self.pointwise.fan_out

    def plan_for(self, spatial: tuple):
        for n, k in zip(spatial, self.modes):
            if n < 2 * k:
                raise ValueError(
                    f"grid {spatial} too small for mode counts {self.modes} (need >= 2*k per axis)"
                )
        return get_plan(tuple(spatial), self.modes)

    def __call__(self, x: Tensor) -> Tensor:
        plan = self.plan_for(x.shape[1:-1])
        out = ad.add(self.pointwise(x), spectral_conv(x, self.mode_weights, plan))
        return ad.gelu(out) if self.activation else out

    def named_parameters(self, prefix: str):
        yield f"{prefix}.mode_weights", self.mode_weights
        yield from self.pointwise.named_parameters(f"{prefix}.pointwise")


def fno_block(x: Tensor, block: FnoBlock) -> Tensor:
    return block(x)


class DeepONetNets:
    """Branch/trunk pair: branch reads sensor values, trunk reads query
    coordinates, both emit the shared basis count p."""

    def __init__(self, branch: Mlp, trunk: Mlp, combine_bias: Tensor | None = None):
        if branch.layers[-1].fan_out != trunk.layers[-1].fan_out:
            raise ValueError(
                f"branch/trunk basis counts differ: {branch.layers[-1].fan_out} vs "
                f"{trunk.layers[-1].fan_out}"
            )
        self.branch = branch
        self.trunk = trunk
        self.combine_bias = combine_bias

    @classmethod
    def init(cls, rng, n_sensors: int, query_dim: int, basis: int = 128,
             hidden: int = 128, depth: int = 4, dtype=np.float64,
             combine_bias: bool = False) -> "DeepONetNets":
        widths_b = [n_sensors] + [hidden] * (depth - 1) + [basis]
        widths_t = [query_dim] + [hidden] * (depth - 1) + [basis]
        bias = Tensor(np.zeros(1, dtype=dtype), requires_grad=True) if combine_bias else None
        return cls(Mlp.init(rng, widths_b, dtype), Mlp.init(rng, widths_t, dtype), bias)

    @property
    def basis(self) -> int:
        return self.branch.layers[-1].fan_out

    def named_parameters(self, prefix: str):
        yield from self.branch.named_parameters(f"{prefix}.branch")
        yield from self.trunk.named_parameters(f"{prefix}.trunk")
        if self.combine_bias is not None:
            yield f"{prefix}.combine_bias", self.combine_bias


def combine_basis(coeffs: Tensor, basis_vals: Tensor, bias: Tensor | None = None) -> Tensor:
    """out[b, j] = sum_k coeffs[b, k] * basis_vals[j, k] (+ optional scalar bias)."""
    if coeffs.shape[-1] != basis_vals.shape[-1]:
        raise ValueError(
            f"basis counts differ: coefficients {coeffs.shape} vs basis {basis_vals.shape}"
        )
    out = ad.matmul(coeffs, ad.transpose(basis_vals))
    if bias is not None:
        flat = ad.reshape(out, (out.shape[0] * out.shape[1], 1))
        out = ad.reshape(ad.bias_add(flat, bias), (coeffs.shape[0], basis_vals.shape[0]))
    return out


def sensor_batch(a_sensors: Tensor, n_sensors: int) -> Tensor:
    if a_sensors.data.ndim != 2:
        raise ValueError(f"sensor batch must be [batch, m], got {a_sensors.shape}")
    if a_sensors.shape[1] != n_sensors:
        raise ValueError(
            f"sensor count {a_sensors.shape[1]} does not match branch input {n_sensors}"
        )
    return a_sensors


def deeponet_forward(a_sensors: Tensor, queries: np.ndarray, nets: DeepONetNets) -> Tensor:
    """Branch/trunk dot-product combination; no outer bias unless the nets
    were built with one."""
    a_sensors = sensor_batch(a_sensors, nets.branch.layers[0].fan_in)
    q = Tensor(np.asarray(queries, dtype=a_sensors.data.dtype))
    if q.data.ndim != 2:
        raise ValueError(f"queries must be [q, d], got {q.shape}")
    return combine_basis(nets.branch(a_sensors), nets.trunk(q), nets.combine_bias)

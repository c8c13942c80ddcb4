"""Full operator architectures assembled from the block library.

Four models, all pure functions of their parameter tensors:

  * ``StackedFnoModel``    -- lift, four Fourier blocks in sequence
    (activation on all but the last), project.
  * ``DualPathFnoModel``   -- lift, residual + dense paths of Fourier
    blocks merged by a pointwise network, project.
  * ``DeepONetModel``      -- branch/trunk MLPs combined by a dot product.
  * ``DualPathDeepONetModel`` -- branch unchanged; the trunk embeds the
    query, runs residual + dense paths of MLP blocks, and merges to the
    basis values.

Every model exposes ``named_parameters()``, an ``arch_config()`` dict that
``build_from_config`` can rebuild it from, and ``load_state`` for
checkpoint restore. Construction draws from a caller-supplied generator in
a fixed order, so a seed pins the whole parameter set.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .blocks import (
    Affine,
    DeepONetNets,
    FnoBlock,
    LiftProject,
    Mlp,
    combine_basis,
    deeponet_forward,
    lift,
    project,
    sensor_batch,
)
from .dualpath import DualPathCore

__all__ = [
    "StackedFnoModel",
    "DualPathFnoModel",
    "DeepONetModel",
    "DualPathDeepONetModel",
    "build_from_config",
]

_DTYPE_NAMES = {"f32": np.float32, "f64": np.float64}


def _dtype_of(name: str):
    try:
        return _DTYPE_NAMES[name]
    except KeyError:
        raise ValueError(f"unknown precision '{name}' (expected f32 or f64)") from None


class _ModelBase:
    def parameters(self) -> list:
        return [t for _, t in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def state_arrays(self) -> dict:
        return {name: t.data for name, t in self.named_parameters()}

    def load_state(self, arrays: dict) -> None:
        named = dict(self.named_parameters())
        missing = set(named) - set(arrays)
        extra = set(arrays) - set(named)
        if missing or extra:
            raise ValueError(
                f"checkpoint does not match model: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for name, tensor in named.items():
            arr = np.asarray(arrays[name], dtype=tensor.data.dtype)
            if arr.shape != tensor.data.shape:
                raise ValueError(
                    f"parameter '{name}' shape {arr.shape} != expected {tensor.data.shape}"
                )
            tensor.data = arr.copy()


class StackedFnoModel(_ModelBase):
    def __init__(self, lift_project: LiftProject, blocks: list, modes: tuple, precision: str):
        self.lift_project = lift_project
        self.blocks = blocks
        self.modes = tuple(modes)
        self.precision = precision

    @classmethod
    def build(cls, rng, d_a: int, d_u: int, ndim: int, width: int = 32,
              modes=None, depth: int = 4, precision: str = "f64") -> "StackedFnoModel":
        dtype = _dtype_of(precision)
        modes = tuple(modes) if modes is not None else (16,) * ndim
        lp = LiftProject.init(rng, d_a, ndim, width, d_u, dtype=dtype)
        blocks = [
            FnoBlock.init(rng, width, width, modes, dtype, activation=(i + 1 < depth))
            for i in range(depth)
        ]
        return cls(lp, blocks, modes, precision)

    def forward(self, a: Tensor, coords: np.ndarray) -> Tensor:
        x = lift(a, coords, self.lift_project)
        for block in self.blocks:
            x = block(x)
        return project(x, self.lift_project)

    __call__ = forward

    def named_parameters(self):
        yield from self.lift_project.named_parameters("lp")
        for i, b in enumerate(self.blocks):
            yield from b.named_parameters(f"block.{i}")

    def arch_config(self) -> dict:
        return {
            "model": "fno",
            "d_a": self.lift_project.lift_map.fan_in - len(self.modes),
            "d_u": self.lift_project.project_map.layers[-1].fan_out,
            "ndim": len(self.modes),
            "width": self.lift_project.lift_map.fan_out,
            "modes": list(self.modes),
            "depth": len(self.blocks),
            "precision": self.precision,
        }


class DualPathFnoModel(_ModelBase):
    def __init__(self, lift_project: LiftProject, core: DualPathCore, modes: tuple,
                 precision: str):
        self.lift_project = lift_project
        self.core = core
        self.modes = tuple(modes)
        self.precision = precision

    @classmethod
    def build(cls, rng, d_a: int, d_u: int, ndim: int, width: int = 32, modes=None,
              res_blocks: int = 4, dense_blocks: int = 3, merge_hidden: int = 128,
              merge_mode: str = "full", precision: str = "f64") -> "DualPathFnoModel":
        dtype = _dtype_of(precision)
        modes = tuple(modes) if modes is not None else (16,) * ndim
        lp = LiftProject.init(rng, d_a, ndim, width, d_u, dtype=dtype)
        res = [FnoBlock.init(rng, width, width, modes, dtype) for _ in range(res_blocks)]
        dense = [
            FnoBlock.init(rng, (k + 1) * width, width, modes, dtype)
            for k in range(dense_blocks)
        ]
        merge_in = DualPathCore.merge_input_width(width, dense_blocks, merge_mode)
        merge = Mlp.init(rng, [merge_in, merge_hidden, width], dtype)
        return cls(lp, DualPathCore(res, dense, merge, merge_mode), modes, precision)

    def forward(self, a: Tensor, coords: np.ndarray) -> Tensor:
        a0 = lift(a, coords, self.lift_project)
        return project(self.core(a0), self.lift_project)

    __call__ = forward

    def named_parameters(self):
        yield from self.lift_project.named_parameters("lp")
        yield from self.core.named_parameters("core")

    def arch_config(self) -> dict:
        width = self.lift_project.lift_map.fan_out
        return {
            "model": "dp-fno",
            "d_a": self.lift_project.lift_map.fan_in - len(self.modes),
            "d_u": self.lift_project.project_map.layers[-1].fan_out,
            "ndim": len(self.modes),
            "width": width,
            "modes": list(self.modes),
            "res_blocks": len(self.core.res_blocks),
            "dense_blocks": len(self.core.dense_blocks),
            "merge_hidden": self.core.merge.layers[0].fan_out,
            "merge_mode": self.core.merge_mode,
            "precision": self.precision,
        }


class DeepONetModel(_ModelBase):
    def __init__(self, nets: DeepONetNets, precision: str):
        self.nets = nets
        self.precision = precision

    @classmethod
    def build(cls, rng, n_sensors: int, query_dim: int, basis: int = 128,
              hidden: int = 128, depth: int = 4, combine_bias: bool = False,
              precision: str = "f64") -> "DeepONetModel":
        dtype = _dtype_of(precision)
        nets = DeepONetNets.init(rng, n_sensors, query_dim, basis, hidden, depth,
                                 dtype, combine_bias)
        return cls(nets, precision)

    def forward(self, a_sensors: Tensor, queries: np.ndarray) -> Tensor:
        return deeponet_forward(a_sensors, queries, self.nets)

    __call__ = forward

    def named_parameters(self):
        yield from self.nets.named_parameters("nets")

    def arch_config(self) -> dict:
        return {
            "model": "deeponet",
            "n_sensors": self.nets.branch.layers[0].fan_in,
            "query_dim": self.nets.trunk.layers[0].fan_in,
            "basis": self.nets.basis,
            "hidden": self.nets.branch.layers[0].fan_out,
            "depth": len(self.nets.branch.layers),
            "combine_bias": self.nets.combine_bias is not None,
            "precision": self.precision,
        }


class DualPathDeepONetModel(_ModelBase):
    """Dual-path trunk: affine embed to the block width, residual + dense
    paths of MLP blocks, merge to the basis count. Branch is a plain MLP."""

    def __init__(self, branch: Mlp, embed: Affine, core: DualPathCore, precision: str):
        self.branch = branch
        self.embed = embed
        self.core = core
        self.precision = precision

    @classmethod
    def build(cls, rng, n_sensors: int, query_dim: int, basis: int = 128,
              hidden: int = 128, depth: int = 4, res_blocks: int = 4,
              dense_blocks: int = 3, merge_hidden: int = 128, merge_mode: str = "full",
              precision: str = "f64") -> "DualPathDeepONetModel":
        dtype = _dtype_of(precision)
        widths_b = [n_sensors] + [hidden] * (depth - 1) + [basis]
        branch = Mlp.init(rng, widths_b, dtype)
        embed = Affine.init(rng, query_dim, hidden, dtype)
        res = [Mlp.init(rng, [hidden] * (depth + 1), dtype) for _ in range(res_blocks)]
        dense = [
            Mlp.init(rng, [(k + 1) * hidden] + [hidden] * depth, dtype)
            for k in range(dense_blocks)
        ]
        merge_in = DualPathCore.merge_input_width(hidden, dense_blocks, merge_mode)
        merge = Mlp.init(rng, [merge_in, merge_hidden, basis], dtype)
        return cls(branch, embed, DualPathCore(res, dense, merge, merge_mode), precision)

    @property
    def basis(self) -> int:
        return self.core.merge.layers[-1].fan_out

    def trunk_forward(self, q: Tensor) -> Tensor:
        return self.core(self.embed(q))

    def forward(self, a_sensors: Tensor, queries: np.ndarray) -> Tensor:
        a_sensors = sensor_batch(a_sensors, self.branch.layers[0].fan_in)
        q = Tensor(np.asarray(queries, dtype=a_sensors.data.dtype))
        return combine_basis(self.branch(a_sensors), self.trunk_forward(q))

    __call__ = forward

    def named_parameters(self):
        yield from self.branch.named_parameters("branch")
        yield from self.embed.named_parameters("embed")
        yield from self.core.named_parameters("trunk")

    def arch_config(self) -> dict:
        hidden = self.embed.fan_out
        return {
            "model": "dp-deeponet",
            "n_sensors": self.branch.layers[0].fan_in,
            "query_dim": self.embed.fan_in,
            "basis": self.basis,
            "hidden": hidden,
            "depth": len(self.core.res_blocks[0].layers) if self.core.res_blocks else 4,
            "res_blocks": len(self.core.res_blocks),
            "dense_blocks": len(self.core.dense_blocks),
            "merge_hidden": self.core.merge.layers[0].fan_out,
            "merge_mode": self.core.merge_mode,
            "precision": self.precision,
        }


_BUILDERS = {
    "fno": (StackedFnoModel, ("d_a", "d_u", "ndim", "width", "modes", "depth", "precision")),
    "dp-fno": (DualPathFnoModel, ("d_a", "d_u", "ndim", "width", "modes", "res_blocks",
                                  "dense_blocks", "merge_hidden", "merge_mode", "precision")),
    "deeponet": (DeepONetModel, ("n_sensors", "query_dim", "basis", "hidden", "depth",
                                 "combine_bias", "precision")),
    "dp-deeponet": (DualPathDeepONetModel, ("n_sensors", "query_dim", "basis", "hidden",
                                            "depth", "res_blocks", "dense_blocks",
                                            "merge_hidden", "merge_mode", "precision")),
}


def build_from_config(config: dict, rng=None):
    """Rebuild an architecture from its ``arch_config`` dict (fresh params)."""
    kind = config.get("model")
    if kind not in _BUILDERS:
        raise ValueError(f"unknown model kind '{kind}'")
    cls, keys = _BUILDERS[kind]
    kwargs = {k: config[k] for k in keys if k in config}
    if rng is None:
        rng = np.random.default_rng(0)
    return cls.build(rng, **kwargs)

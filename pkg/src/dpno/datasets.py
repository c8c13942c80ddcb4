"""Dataset generation and on-disk bundles.

A bundle directory holds four tensor containers plus UTF-8 ``key=value``
metadata:

    a_train.dpno  u_train.dpno  a_test.dpno  u_test.dpno  metadata.txt

Sample ``i`` (train samples first, then test) is drawn and solved with its
own generator seeded ``base_seed + i``, so any subset, ordering, or batching
of the generation reproduces identical bytes.

Per-problem pipelines (solve grid -> stride-downsample to the output grid):

  burgers  a: initial condition, u: solution at t=1        [N, m]
  darcy    a: thresholded coefficient, u: pressure          [N, m, m]
  ns       a: vorticity at t=1..10, u: at t=11..20          [N, 10, m, m]

The sampled NS vorticity has its mean projected out before solving (the
streamfunction inversion needs zero mean).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grf import (
    burgers_initial_spec,
    darcy_coefficient_spec,
    grf_sample,
    ns_vorticity_spec,
    psi_threshold,
)
from .solvers import (
    burgers_default_dt,
    downsample,
    ns_default_forcing,
    ns_steps_per_unit,
    solve_burgers,
    solve_darcy,
    solve_ns_vorticity,
)
from .spectral import require_power_of_two
from .tensor_io import load_tensor, save_tensor

__all__ = ["PdeProblemSpec", "DatasetBundle", "build_dataset", "default_problem_spec"]

PROBLEMS = ("burgers", "darcy", "ns")

_DESK_SOLVE = {"burgers": 1024, "darcy": 128, "ns": 64}
_DESK_OUTPUT = {"burgers": 128, "darcy": 64, "ns": 64}
_DEFAULT_NU = {"burgers": 0.01, "ns": 1e-3}

_BUNDLE_FILES = ("a_train.dpno", "u_train.dpno", "a_test.dpno", "u_test.dpno")
_NS_SNAPSHOTS = 20  # t = 1..10 in, 11..20 out


@dataclass(frozen=True)
class PdeProblemSpec:
    problem: str
    n_train: int
    n_test: int
    resolution: int
    solve_resolution: int
    base_seed: int = 0
    viscosity: float | None = None
    final_time: float | None = None
    dt: float | None = None

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"problem must be one of {PROBLEMS}, got '{self.problem}'")
        if self.n_train < 1 or self.n_test < 0:
            raise ValueError(f"need n_train >= 1, n_test >= 0, got ({self.n_train}, {self.n_test})")
        require_power_of_two(self.resolution, "output resolution")
        require_power_of_two(self.solve_resolution, "solve resolution")
        if self.solve_resolution % self.resolution != 0:
            raise ValueError(
                f"output resolution {self.resolution} must divide solve resolution "
                f"{self.solve_resolution}"
            )
        nu = self.viscosity
        if nu is None and self.problem in _DEFAULT_NU:
            nu = _DEFAULT_NU[self.problem]
        if self.problem in _DEFAULT_NU and nu <= 0:
            raise ValueError(f"viscosity must be positive, got {nu}")
        object.__setattr__(self, "viscosity", nu)
        t_final = self.final_time
        if t_final is None:
            t_final = 1.0 if self.problem == "burgers" else float(_NS_SNAPSHOTS)
        object.__setattr__(self, "final_time", float(t_final))

    @property
    def factor(self) -> int:
        return self.solve_resolution // self.resolution

    @property
    def n_total(self) -> int:
        return self.n_train + self.n_test

    def sample_shapes(self) -> tuple:
        m = self.resolution
        if self.problem == "burgers":
            return (m,), (m,)
        if self.problem == "darcy":
            return (m, m), (m, m)
        return (_NS_SNAPSHOTS // 2, m, m), (_NS_SNAPSHOTS // 2, m, m)


def default_problem_spec(problem: str, n_train: int, n_test: int,
                         resolution: int | None = None,
                         solve_resolution: int | None = None,
                         base_seed: int = 0, viscosity: float | None = None,
                         dt: float | None = None) -> PdeProblemSpec:
    if problem not in PROBLEMS:
        raise ValueError(f"problem must be one of {PROBLEMS}, got '{problem}'")
    resolution = resolution if resolution is not None else _DESK_OUTPUT[problem]
    if solve_resolution is None:
        solve_resolution = max(_DESK_SOLVE[problem], resolution)
    return PdeProblemSpec(problem, n_train, n_test, resolution, solve_resolution,
                          base_seed, viscosity, dt=dt)


# ------------------------------------------------------------- generation


def _gen_burgers(spec: PdeProblemSpec, seeds) -> tuple:
    n = spec.solve_resolution
    gspec = burgers_initial_spec(n)
    u0 = np.stack([grf_sample(gspec, s) for s in seeds])
    dt = spec.dt if spec.dt is not None else burgers_default_dt(n)
    u1 = solve_burgers(u0, nu=spec.viscosity, T=spec.final_time, dt=dt)
    r = spec.factor
    return downsample(u0, r, 1), downsample(u1, r, 1)


def _gen_darcy(spec: PdeProblemSpec, seeds) -> tuple:
    n = spec.solve_resolution
    gspec = darcy_coefficient_spec(n)
    a_list, u_list = [], []
    for s in seeds:
        a = psi_threshold(grf_sample(gspec, s))
        u = solve_darcy(a)
        a_list.append(a)
        u_list.append(u)
    r = spec.factor
    return downsample(np.stack(a_list), r, 2), downsample(np.stack(u_list), r, 2)


def _gen_ns(spec: PdeProblemSpec, seeds) -> tuple:
    n = spec.solve_resolution
    gspec = ns_vorticity_spec(n)
    w0 = np.stack([grf_sample(gspec, s) for s in seeds])
    w0 -= w0.mean(axis=(-2, -1), keepdims=True)
    snaps = solve_ns_vorticity(
        w0, nu=spec.viscosity, forcing=ns_default_forcing(n), T=spec.final_time,
        dt=spec.dt, snapshot_times=tuple(range(1, _NS_SNAPSHOTS + 1)),
    )
    half = _NS_SNAPSHOTS // 2
    r = spec.factor
    return downsample(snaps[:, :half], r, 2), downsample(snaps[:, half:], r, 2)


_GENERATORS = {"burgers": _gen_burgers, "darcy": _gen_darcy, "ns": _gen_ns}
_GEN_CHUNK = 64  # bounds solver working memory; bytes are chunking-invariant


def _generate(spec: PdeProblemSpec, index_lo: int, index_hi: int) -> tuple:
    gen = _GENERATORS[spec.problem]
    a_parts, u_parts = [], []
    for lo in range(index_lo, index_hi, _GEN_CHUNK):
        seeds = [spec.base_seed + i for i in range(lo, min(lo + _GEN_CHUNK, index_hi))]
        a, u = gen(spec, seeds)
        a_parts.append(a)
        u_parts.append(u)
    return np.concatenate(a_parts), np.concatenate(u_parts)


def _metadata_lines(spec: PdeProblemSpec) -> list:
    lines = [
        "format=dpno-bundle-v1",
        f"problem={spec.problem}",
        f"n_train={spec.n_train}",
        f"n_test={spec.n_test}",
        f"resolution={spec.resolution}",
        f"solve_resolution={spec.solve_resolution}",
        f"base_seed={spec.base_seed}",
        f"final_time={spec.final_time}",
    ]
    if spec.viscosity is not None:
        lines.append(f"viscosity={spec.viscosity}")
    if spec.problem == "ns":
        lines.append(f"snapshots={_NS_SNAPSHOTS}")
        dt = spec.dt if spec.dt is not None else 1.0 / ns_steps_per_unit(spec.solve_resolution)
        lines.append(f"dt={dt}")
    elif spec.problem == "burgers":
        dt = spec.dt if spec.dt is not None else burgers_default_dt(spec.solve_resolution)
        lines.append(f"dt={dt}")
    lines.append(f"grid={'endpoint' if spec.problem == 'darcy' else 'periodic'}")
    return lines


def build_dataset(spec: PdeProblemSpec, out_dir, force: bool = False) -> "DatasetBundle":
    """Generate every sample and write the bundle; deterministic bytes."""
    out = Path(out_dir)
    meta_path = out / "metadata.txt"
    if meta_path.exists() and not force:
        raise FileExistsError(f"bundle already exists at {out} (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    try:
        a_train, u_train = _generate(spec, 0, spec.n_train)
        a_test, u_test = _generate(spec, spec.n_train, spec.n_total) if spec.n_test else (
            np.zeros((0,) + spec.sample_shapes()[0]), np.zeros((0,) + spec.sample_shapes()[1]))
    except Exception as exc:
        raise RuntimeError(f"dataset generation failed: {exc}") from exc
    save_tensor(out / "a_train.dpno", a_train)
    save_tensor(out / "u_train.dpno", u_train)
    save_tensor(out / "a_test.dpno", a_test)
    save_tensor(out / "u_test.dpno", u_test)
    meta_path.write_text("\n".join(_metadata_lines(spec)) + "\n", encoding="utf-8")
    return DatasetBundle.load(out)


@dataclass
class DatasetBundle:
    directory: Path
    a_train: np.ndarray
    u_train: np.ndarray
    a_test: np.ndarray
    u_test: np.ndarray
    metadata: dict = field(default_factory=dict)

    @classmethod
    def load(cls, directory) -> "DatasetBundle":
        d = Path(directory)
        meta_path = d / "metadata.txt"
        if not meta_path.exists():
            raise FileNotFoundError(f"no bundle metadata at {meta_path}")
        metadata = {}
        for line in meta_path.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line and "=" in line:
                key, _, val = line.partition("=")
                metadata[key] = val
        arrays = {name: load_tensor(d / name) for name in _BUNDLE_FILES}
        bundle = cls(d, arrays["a_train.dpno"], arrays["u_train.dpno"],
                     arrays["a_test.dpno"], arrays["u_test.dpno"], metadata)
        bundle.validate()
        return bundle

    def validate(self) -> None:
        n_train = int(self.metadata.get("n_train", -1))
        n_test = int(self.metadata.get("n_test", -1))
        if self.a_train.shape[0] != n_train or self.u_train.shape[0] != n_train:
            raise ValueError(
                f"train split has {self.a_train.shape[0]} samples, metadata says {n_train}"
            )
        if self.a_test.shape[0] != n_test or self.u_test.shape[0] != n_test:
            raise ValueError(
                f"test split has {self.a_test.shape[0]} samples, metadata says {n_test}"
            )
        if self.a_train.shape[1:] != self.u_train.shape[1:]:
            raise ValueError(
                f"input/target shapes differ: {self.a_train.shape} vs {self.u_train.shape}"
            )

    @property
    def problem(self) -> str:
        return self.metadata.get("problem", "unknown")

    @property
    def grid_mode(self) -> str:
        return self.metadata.get("grid", "periodic")

"""Gaussian random field sampling on the torus and under Neumann walls.

Periodic fields are synthesized spectrally,

    field(x) = sum_k sqrt(lam_k) xi_k exp(2*pi*i <k, x>),
    lam_k = amplitude * (4*pi^2*|k|^2 + shift)^(-exponent),

with xi a Hermitian-symmetric complex standard normal array (self-conjugate
modes real N(0,1), every other mode split 1/2-1/2 between real and
imaginary parts), realized with a single unnormalized inverse FFT on the
j/n grid.

Neumann fields use the L2-orthonormal cosine basis on the endpoint grid,

    field = sum_k sqrt(lam_k) xi_k phi_k,
    lam_k = amplitude * (pi^2*|k|^2 + shift)^(-exponent),

with phi_k a product of cos(pi*k*x) factors carrying sqrt(2) per nonzero
index, xi i.i.d. N(0,1), truncated at ``resolution`` modes per axis.

Draw order is fixed (one standard_normal call per array, documented below),
so a seed pins each sample independently of batching.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import idft_unnorm, require_power_of_two

__all__ = [
    "GrfSpec",
    "grf_sample",
    "psi_threshold",
    "burgers_initial_spec",
    "darcy_coefficient_spec",
    "ns_vorticity_spec",
]

_BOUNDARIES = ("periodic", "neumann-cosine")


@dataclass(frozen=True)
class GrfSpec:
    """Covariance-operator parameters for one field family."""

    dimension: int
    amplitude: float   # sigma^2
    shift: float       # tau^2
    exponent: float    # alpha
    boundary: str
    resolution: int

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        if self.amplitude <= 0 or self.exponent <= 0 or self.shift < 0:
            raise ValueError(
                f"need amplitude > 0, exponent > 0, shift >= 0; got "
                f"({self.amplitude}, {self.exponent}, {self.shift})"
            )
        if self.boundary not in _BOUNDARIES:
            raise ValueError(f"boundary must be one of {_BOUNDARIES}, got '{self.boundary}'")
        require_power_of_two(self.resolution, "resolution")

    def mode_variance(self, *k) -> float:
        """lam_k for a signed integer wavenumber tuple."""
        k2 = float(sum(ki * ki for ki in k))
        if self.boundary == "periodic":
            return self.amplitude * (4.0 * np.pi**2 * k2 + self.shift) ** (-self.exponent)
        return self.amplitude * (np.pi**2 * k2 + self.shift) ** (-self.exponent)


def burgers_initial_spec(n: int) -> GrfSpec:
    return GrfSpec(1, 625.0, 25.0, 2.0, "periodic", n)


def darcy_coefficient_spec(n: int) -> GrfSpec:
    return GrfSpec(2, 1.0, 9.0, 2.0, "neumann-cosine", n)


def ns_vorticity_spec(n: int) -> GrfSpec:
    return GrfSpec(2, 7.0**1.5, 49.0, 2.5, "periodic", n)


def _signed_wavenumbers(n: int) -> np.ndarray:
    k = np.arange(n)
    k[n // 2 :] -= n
    return k.astype(np.float64)


def _hermitian_standard_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """xi with xi[-k] == conj(xi[k]), unit complex variance.

    Draw order: one standard_normal for the real parts, one for the
    imaginary parts. Hermitianizing (W + conj(W at -k)) / sqrt(2) leaves
    self-conjugate modes real N(0,1) and splits the variance of every other
    mode half/half between components.
    """
    a = rng.standard_normal(shape)
    b = rng.standard_normal(shape)
    w = (a + 1j * b) / np.sqrt(2.0)
    mirror = w
    for ax, n in enumerate(shape):
        idx = (-np.arange(n)) % n
        mirror = np.take(mirror, idx, axis=ax)
    return (w + np.conj(mirror)) / np.sqrt(2.0)


def _periodic_sample(spec: GrfSpec, rng: np.random.Generator) -> np.ndarray:
    n = spec.resolution
    k = _signed_wavenumbers(n)
    if spec.dimension == 1:
        k2 = k * k
        shape = (n,)
    else:
        k2 = k[:, None] ** 2 + k[None, :] ** 2
        shape = (n, n)
    lam = spec.amplitude * (4.0 * np.pi**2 * k2 + spec.shift) ** (-spec.exponent)
    xi = _hermitian_standard_normal(rng, shape)
    coeff = np.sqrt(lam) * xi
    out = coeff
    for ax in range(spec.dimension):
        out = idft_unnorm(out, axis=ax)
    return np.ascontiguousarray(out.real)


def _cosine_basis(n: int) -> np.ndarray:
    """[modes, points]: row k is the orthonormal cos(pi*k*x) on linspace(0,1,n)."""
    x = np.linspace(0.0, 1.0, n)
    k = np.arange(n)
    mat = np.cos(np.pi * np.outer(k, x))
    mat[1:] *= np.sqrt(2.0)
    return mat


def _neumann_sample(spec: GrfSpec, rng: np.random.Generator) -> np.ndarray:
    n = spec.resolution
    k = np.arange(n, dtype=np.float64)
    basis = _cosine_basis(n)
    if spec.dimension == 1:
        lam = spec.amplitude * (np.pi**2 * k * k + spec.shift) ** (-spec.exponent)
        xi = rng.standard_normal(n)
        return (np.sqrt(lam) * xi) @ basis
    k2 = k[:, None] ** 2 + k[None, :] ** 2
    lam = spec.amplitude * (np.pi**2 * k2 + spec.shift) ** (-spec.exponent)
    xi = rng.standard_normal((n, n))
    return basis.T @ (np.sqrt(lam) * xi) @ basis


def grf_sample(spec: GrfSpec, seed: int) -> np.ndarray:
    """Draw one field on the grid (periodic: j/n; neumann: endpoint grid)."""
    rng = np.random.default_rng(int(seed))
    if spec.boundary == "periodic":
        return _periodic_sample(spec, rng)
    return _neumann_sample(spec, rng)


def psi_threshold(g: np.ndarray) -> np.ndarray:
    """Entrywise 12 where g >= 0, 3 where g < 0."""
    return np.where(np.asarray(g) >= 0.0, 12.0, 3.0)

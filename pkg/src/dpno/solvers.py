"""Numerical solvers behind the three benchmark datasets.

* Burgers on the unit torus: pseudo-spectral, conservative form, 2/3-rule
  dealiasing of the quadratic term, exact integrating factor for the
  diffusion, RK4 in the transformed variable.
* Darcy flow on the unit square with zero Dirichlet walls: second-order
  finite differences on the node grid (boundary included), arithmetic-mean
  face coefficients, matrix-free conjugate gradient with Jacobi
  preconditioning.
* 2-d Navier-Stokes in vorticity form on the torus: streamfunction
  inversion in Fourier space, 2/3-rule dealiased advection, Crank-Nicolson
  diffusion with second-order Adams-Bashforth advection (Heun first step).

Solvers take and return plain float64 numpy arrays; the spectral ones accept
a leading batch axis and stay sample-wise bit-identical under batching
(every operation is elementwise or a per-row transform).
"""
from __future__ import annotations

import numpy as np

from .spectral import idft_unnorm, irfft_1d, irfft_2d, require_power_of_two, rfft_1d, rfft_2d

__all__ = [
    "SolverBlowupError",
    "solve_burgers",
    "solve_darcy",
    "solve_ns_vorticity",
    "downsample",
    "burgers_default_dt",
    "ns_steps_per_unit",
    "ns_default_forcing",
]


class SolverBlowupError(RuntimeError):
    pass


def _check_finite(arr: np.ndarray, what: str, step: int, t: float) -> None:
    if not np.all(np.isfinite(arr)):
        raise SolverBlowupError(f"{what} blew up at step {step} (t={t:.6g})")


# ---------------------------------------------------------------- Burgers


def burgers_default_dt(n: int) -> float:
    """Reference step 1e-4 at n=2048, scaled like 1/n (advective CFL)."""
    return 1e-4 * 2048.0 / n


def solve_burgers(u0: np.ndarray, nu: float, T: float = 1.0, dt: float | None = None) -> np.ndarray:
    """March du/dt + d(u^2/2)/dx = nu * d2u/dx2 to t=T; returns u(., T).

    ``u0`` is [n] or [batch, n] on the j/n grid, n a power of two. Stability
    needs dt <~ 0.5*dx/max|u| on top of the (exactly integrated) diffusion;
    the default obeys it for O(1) data.
    """
    u0 = np.asarray(u0, dtype=np.float64)
    n = require_power_of_two(u0.shape[-1], "grid size")
    if nu <= 0:
        raise ValueError(f"viscosity must be positive, got {nu}")
    if dt is None:
        dt = burgers_default_dt(n)
    steps = max(1, int(round(T / dt)))
    dt = T / steps

    k = np.arange(n // 2 + 1, dtype=np.float64)
    ktil = 2.0 * np.pi * k
    keep = k < (n / 3.0)  # 2/3-rule mask for the quadratic term
    e_half = np.exp(-nu * ktil**2 * (dt / 2.0))
    e_full = e_half * e_half

    def nonlinear(u_hat):
        u = irfft_1d(u_hat, n, axis=-1)
        q_hat = rfft_1d(0.5 * u * u, axis=-1)
        return (-1j * ktil) * np.where(keep, q_hat, 0.0)

    u_hat = rfft_1d(u0, axis=-1)
    for step in range(steps):
        k1 = nonlinear(u_hat)
        k2 = nonlinear(e_half * (u_hat + (dt / 2.0) * k1))
        k3 = nonlinear(e_half * u_hat + (dt / 2.0) * k2)
        k4 = nonlinear(e_full * u_hat + dt * e_half * k3)
        u_hat = e_full * u_hat + (dt / 6.0) * (e_full * k1 + 2.0 * e_half * (k2 + k3) + k4)
        _check_finite(u_hat, "burgers solution", step, (step + 1) * dt)
    return irfft_1d(u_hat, n, axis=-1)


# ------------------------------------------------------------------ Darcy


def solve_darcy(a: np.ndarray, f: np.ndarray | None = None, tol: float = 1e-8,
                max_iter: int | None = None) -> np.ndarray:
    """Solve -div(a grad u) = f on the unit square, u = 0 on the boundary.

    ``a`` is [n, n] on the boundary-inclusive node grid; ``f`` defaults to 1.
    Conjugate gradient with Jacobi preconditioning runs to relative residual
    ``tol``; the arithmetic mean of adjacent node values supplies each face
    coefficient, keeping the 5-point system symmetric positive definite.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"coefficient field must be square [n, n], got {a.shape}")
    if np.any(a <= 0.0):
        raise ValueError("coefficient field must be positive everywhere")
    n = a.shape[0]
    if f is None:
        f = np.ones((n, n))
    f = np.asarray(f, dtype=np.float64)
    if f.shape != a.shape:
        raise ValueError(f"forcing shape {f.shape} does not match grid {a.shape}")
    if max_iter is None:
        max_iter = max(1000, 20 * n)

    h2 = (1.0 / (n - 1)) ** 2
    c = a[1:-1, 1:-1]
    a_e = 0.5 * (a[2:, 1:-1] + c)
    a_w = 0.5 * (a[:-2, 1:-1] + c)
    a_n = 0.5 * (a[1:-1, 2:] + c)
    a_s = 0.5 * (a[1:-1, :-2] + c)
    diag = (a_e + a_w + a_n + a_s) / h2

    full = np.zeros((n, n))

    def apply_op(u_int):
        full[1:-1, 1:-1] = u_int
        return (
            diag * u_int
            - (a_e * full[2:, 1:-1] + a_w * full[:-2, 1:-1]
               + a_n * full[1:-1, 2:] + a_s * full[1:-1, :-2]) / h2
        )

    b = f[1:-1, 1:-1]
    b_norm = np.sqrt(np.sum(b * b))
    u = np.zeros_like(b)
    if b_norm == 0.0:
        return np.zeros((n, n))
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = np.sum(r * z)
    for _ in range(max_iter):
        ap = apply_op(p)
        alpha = rz / np.sum(p * ap)
        u += alpha * p
        r -= alpha * ap
        if np.sqrt(np.sum(r * r)) <= tol * b_norm:
            out = np.zeros((n, n))
            out[1:-1, 1:-1] = u
            return out
        z = r / diag
        rz_new = np.sum(r * z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise RuntimeError(
        f"conjugate gradient did not reach relative residual {tol} in {max_iter} iterations"
    )


# ---------------------------------------------------------- Navier-Stokes


def ns_steps_per_unit(n: int) -> int:
    """200 steps/unit at n=64 and 1000 at n=256, scaled linearly elsewhere."""
    if n <= 128:
        return max(1, round(200 * n / 64))
    return max(1, round(1000 * n / 256))


def ns_default_forcing(n: int) -> np.ndarray:
    """0.1*(sin(2*pi*(x+y)) + cos(2*pi*(x+y))) on the j/n grid."""
    x = np.arange(n) / n
    s = x[:, None] + x[None, :]
    return 0.1 * (np.sin(2.0 * np.pi * s) + np.cos(2.0 * np.pi * s))


def solve_ns_vorticity(w0: np.ndarray, nu: float = 1e-3, forcing: np.ndarray | None = None,
                       T: float = 20.0, dt: float | None = None,
                       snapshot_times: tuple | None = None) -> np.ndarray:
    """Integrate vorticity transport dw/dt + u.grad(w) = nu*Lap(w) + f.

    ``w0`` is [n, n] or [batch, n, n], zero-mean (the streamfunction
    inversion requires it; non-zero means are rejected). Velocity comes from
    the spectral streamfunction, advection is dealiased with the 2/3 rule,
    diffusion is Crank-Nicolson, advection+forcing second-order
    Adams-Bashforth with a Heun first step. Returns the vorticity at the
    requested snapshot times (default 1, 2, ..., T) stacked on a new axis
    before the spatial ones.
    """
    w0 = np.asarray(w0, dtype=np.float64)
    n = require_power_of_two(w0.shape[-1], "grid size")
    if w0.shape[-2] != n:
        raise ValueError(f"vorticity grid must be square, got {w0.shape}")
    mean0 = np.abs(w0.mean(axis=(-2, -1)))
    if np.any(mean0 > 1e-10):
        raise ValueError(f"initial vorticity must have zero mean (max |mean| {mean0.max():.3g})")
    if dt is None:
        dt = 1.0 / ns_steps_per_unit(n)
    steps = max(1, int(round(T / dt)))
    dt = T / steps
    if snapshot_times is None:
        snapshot_times = tuple(range(1, int(round(T)) + 1))
    snap_steps = {}
    for t_req in snapshot_times:
        s = int(round(t_req / dt))
        if not 0 < s <= steps or abs(s * dt - t_req) > 1e-9:
            raise ValueError(f"snapshot time {t_req} is not a multiple of dt={dt}")
        snap_steps[s] = t_req

    ky = np.arange(n, dtype=np.float64)
    ky[n // 2 :] -= n
    kx = np.arange(n // 2 + 1, dtype=np.float64)
    kty = (2.0 * np.pi * ky)[:, None]
    ktx = (2.0 * np.pi * kx)[None, :]
    ksq = kty**2 + ktx**2
    inv_ksq = np.where(ksq > 0.0, 1.0 / np.where(ksq > 0.0, ksq, 1.0), 0.0)
    keep = (np.abs(ky)[:, None] < n / 3.0) & (kx[None, :] < n / 3.0)
    c = 0.5 * dt * nu * ksq
    denom = 1.0 + c
    decay = 1.0 - c

    f_hat = 0.0 if forcing is None else rfft_2d(np.asarray(forcing, dtype=np.float64))

    def rhs(w_hat):
        psi_hat = w_hat * inv_ksq
        u = irfft_2d(1j * kty * psi_hat, n, n)
        v = irfft_2d(-1j * ktx * psi_hat, n, n)
        wx = irfft_2d(1j * ktx * w_hat, n, n)
        wy = irfft_2d(1j * kty * w_hat, n, n)
        # velocity (u, v) = (psi_y, -psi_x); advection u*w_x + v*w_y
        adv_hat = np.where(keep, rfft_2d(u * wx + v * wy), 0.0)
        return -adv_hat + f_hat

    snaps = []
    w_hat = rfft_2d(w0)
    n_prev = rhs(w_hat)
    # Heun start: predict with explicit advection, correct with the average
    w_pred = (decay * w_hat + dt * n_prev) / denom
    n_pred = rhs(w_pred)
    w_hat = (decay * w_hat + 0.5 * dt * (n_prev + n_pred)) / denom
    _check_finite(w_hat, "vorticity", 1, dt)
    if 1 in snap_steps:
        snaps.append(irfft_2d(w_hat, n, n))
    n_curr = rhs(w_hat)
    for step in range(2, steps + 1):
        w_hat = (decay * w_hat + dt * (1.5 * n_curr - 0.5 * n_prev)) / denom
        _check_finite(w_hat, "vorticity", step, step * dt)
        if step in snap_steps:
            snaps.append(irfft_2d(w_hat, n, n))
        if step < steps:
            n_prev, n_curr = n_curr, rhs(w_hat)
    return np.stack(snaps, axis=-3)


# ------------------------------------------------------------- Downsample


def downsample(field: np.ndarray, factor: int, spatial_ndim: int) -> np.ndarray:
    """Stride-``factor`` point subsampling of the trailing spatial axes."""
    field = np.asarray(field)
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"downsample factor must be >= 1, got {factor}")
    for ax in range(-spatial_ndim, 0):
        if field.shape[ax] % factor != 0:
            raise ValueError(
                f"factor {factor} does not divide spatial size {field.shape[ax]}"
            )
    sl = [slice(None)] * field.ndim
    for ax in range(-spatial_ndim, 0):
        sl[ax] = slice(None, None, factor)
    return np.ascontiguousarray(field[tuple(sl)])

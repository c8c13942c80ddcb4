"""Radix-2 real-input FFTs, mode truncation, and the learnable spectral mixer.

Conventions (pinned by the Parseval and round-trip tests):
  * forward transform is unnormalized:  F_k = sum_j f_j * exp(-2i*pi*j*k/n);
  * inverse carries the full 1/prod(n) factor, so irfft(rfft(x)) == x;
  * real fields store the half spectrum k = 0..n/2 on the last transformed
    axis (Hermitian symmetry implied); 2-d transforms keep the full spectrum
    on the leading spatial axis.

Only power-of-two sizes are accepted; anything else raises immediately
rather than falling back to a slow general-length algorithm. Transforms are
vectorized over every non-transformed axis, so batches of fields cost one
pass; precision follows the input (float32/complex64 stays single, all else
runs in complex128).

The learnable piece is ``spectral_conv``: transform, multiply the retained
low-frequency modes by per-mode complex matrices, zero the rest, transform
back. Its backward pass uses the transform adjoints (the adjoint of the
unnormalized forward DFT is the unnormalized inverse DFT) and the standard
complex-linear product rules; both are exercised against finite differences
in the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .autodiff import Tensor, _active_tape, _make_output

__all__ = [
    "ComplexTensor",
    "RfftPlan",
    "rfft",
    "irfft",
    "spectral_conv",
    "init_spectral_weights",
    "truncate_modes",
    "dft",
    "idft_unnorm",
    "rfft_1d",
    "irfft_1d",
    "rfft_2d",
    "irfft_2d",
    "rfft_adjoint",
]


def require_power_of_two(n: int, what: str = "size") -> int:
    n = int(n)
    if n < 2 or (n & (n - 1)) != 0:
        raise ValueError(f"{what} must be a power of two >= 2, got {n}")
    return n


@lru_cache(maxsize=None)
def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    rev.setflags(write=False)
    return rev


@lru_cache(maxsize=None)
def _stage_twiddles(n: int, sign: int, single: bool) -> tuple:
    tws = []
    m = 2
    while m <= n:
        tw = np.exp(sign * 2j * np.pi * np.arange(m // 2) / m)
        if single:
            tw = tw.astype(np.complex64)
        tw.setflags(write=False)
        tws.append(tw)
        m *= 2
    return tuple(tws)


def _complex_dtype(dtype) -> np.dtype:
    if dtype in (np.dtype(np.float32), np.dtype(np.complex64)):
        return np.dtype(np.complex64)
    return np.dtype(np.complex128)


def _fft_last(x: np.ndarray, sign: int) -> np.ndarray:
    """Iterative Cooley-Tukey along the last axis; sign=-1 forward, +1 inverse (unnormalized)."""
    n = require_power_of_two(x.shape[-1], "transform length")
    cdt = _complex_dtype(np.asarray(x).dtype)
    y = np.ascontiguousarray(x, dtype=cdt)[..., _bit_reverse_indices(n)]
    lead = y.shape[:-1]
    for tw in _stage_twiddles(n, sign, cdt == np.dtype(np.complex64)):
        half = tw.shape[0]
        m = 2 * half
        z = y.reshape(*lead, n // m, m)
        u = z[..., :half]
        t = z[..., half:] * tw
        z[..., half:] = u - t
        z[..., :half] = u + t
    return y


def _transform(x: np.ndarray, axis: int, sign: int) -> np.ndarray:
    xm = np.moveaxis(np.asarray(x), axis, -1)
    return np.moveaxis(_fft_last(xm, sign), -1, axis)


def dft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unnormalized forward DFT along ``axis`` (complex output)."""
    return _transform(x, axis, -1)


def idft_unnorm(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unnormalized inverse DFT along ``axis`` (no 1/n factor)."""
    return _transform(x, axis, +1)


def rfft_1d(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Real-input forward transform; keeps modes 0..n/2 on ``axis``."""
    xm = np.moveaxis(np.asarray(x), axis, -1)
    n = xm.shape[-1]
    half = _fft_last(xm, -1)[..., : n // 2 + 1]
    return np.moveaxis(half, -1, axis)


def irfft_1d(c: np.ndarray, n: int, axis: int = -1) -> np.ndarray:
    """Inverse of ``rfft_1d``: Hermitian-extend, transform, scale by 1/n.

    The imaginary residue of the inverse (zero for Hermitian input up to
    rounding) is discarded.
    """
    n = require_power_of_two(n, "output length")
    c = np.asarray(c)
    cm = np.moveaxis(c.astype(_complex_dtype(c.dtype), copy=False), axis, -1)
    k = n // 2 + 1
    if cm.shape[-1] != k:
        raise ValueError(f"irfft: expected {k} coefficients for n={n}, got {cm.shape[-1]}")
    full = np.empty(cm.shape[:-1] + (n,), dtype=cm.dtype)
    full[..., :k] = cm
    full[..., k:] = np.conj(cm[..., n // 2 - 1 : 0 : -1])
    y = _fft_last(full, +1).real / n
    return np.moveaxis(y, -1, axis)


def rfft_2d(x: np.ndarray, axes: tuple = (-2, -1)) -> np.ndarray:
    """2-d real-input transform; half spectrum on ``axes[1]``, full on ``axes[0]``."""
    return dft(rfft_1d(x, axes[1]), axes[0])


def irfft_2d(c: np.ndarray, n0: int, n1: int, axes: tuple = (-2, -1)) -> np.ndarray:
    y = idft_unnorm(np.asarray(c), axes[0])
    return irfft_1d(y, n1, axes[1]) / n0


def rfft_adjoint(y: np.ndarray, n: int, axis: int = -1) -> np.ndarray:
    """Adjoint of ``rfft_1d`` as a real-linear map.

    With the real inner product <A, B> = sum(Re A * Re B + Im A * Im B) on
    half spectra, <rfft(x), y> == <x, rfft_adjoint(y, n)> for all real x.
    """
    ym = np.moveaxis(np.asarray(y, dtype=np.complex128), axis, -1)
    k = n // 2 + 1
    if ym.shape[-1] != k:
        raise ValueError(f"rfft_adjoint: expected {k} coefficients for n={n}, got {ym.shape[-1]}")
    full = np.zeros(ym.shape[:-1] + (n,), dtype=np.complex128)
    full[..., :k] = ym
    out = _fft_last(full, +1).real
    return np.moveaxis(out, -1, axis)


def hermitian_weights(n: int, dtype=np.float64) -> np.ndarray:
    """Multiplicity of each stored half-spectrum coefficient: 1 at DC and
    Nyquist, 2 elsewhere (the implied conjugate mode)."""
    w = np.full(n // 2 + 1, 2.0, dtype=dtype)
    w[0] = 1.0
    w[-1] = 1.0
    return w


@dataclass
class ComplexTensor:
    """Complex coefficient array (in memory: interleaved re/im pairs, row-major)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if not np.iscomplexobj(self.data):
            raise ValueError("ComplexTensor requires a complex array")

    @property
    def shape(self):
        return self.data.shape

    def interleaved(self) -> np.ndarray:
        """Flat float view [(re, im), ...] in row-major order."""
        return np.ascontiguousarray(self.data).view(np.float64).reshape(self.data.shape + (2,))


def _full_axis_modes(n: int, k: int) -> np.ndarray:
    """Retained indices on a full-spectrum axis: signed modes 0..k-1, -(k-1)..-1."""
    if not 1 <= k <= n:
        raise ValueError(f"mode count must be in [1, {n}], got {k}")
    head = list(range(min(k, n // 2 + 1)))
    tail = [r for r in range(n - k + 1, n) if r > n // 2]
    return np.array(head + tail, dtype=np.intp)


@dataclass(frozen=True)
class RfftPlan:
    """Transform geometry: spatial sizes plus per-axis retained mode counts.

    1-d plans keep the first ``modes[0]`` entries of the half spectrum;
    2-d plans additionally keep the |k| < modes[0] band (both signs) on the
    leading full-spectrum axis.
    """

    spatial: tuple
    modes: tuple

    def __post_init__(self):
        spatial = tuple(int(n) for n in self.spatial)
        modes = tuple(int(m) for m in self.modes)
        object.__setattr__(self, "spatial", spatial)
        object.__setattr__(self, "modes", modes)
        if len(spatial) not in (1, 2) or len(modes) != len(spatial):
            raise ValueError(f"plan supports 1-d/2-d, got spatial={spatial} modes={modes}")
        for n in spatial:
            require_power_of_two(n, "spatial size")
        kh = modes[-1]
        half = spatial[-1] // 2 + 1
        if not 1 <= kh <= half:
            raise ValueError(
                f"half-spectrum mode count must be in [1, {half}] for n={spatial[-1]}, got {kh}"
            )
        if len(spatial) == 2:
            _full_axis_modes(spatial[0], modes[0])  # bounds check

    @property
    def ndim(self) -> int:
        return len(self.spatial)

    @property
    def coeff_shape(self) -> tuple:
        if self.ndim == 1:
            return (self.spatial[0] // 2 + 1,)
        return (self.spatial[0], self.spatial[1] // 2 + 1)

    @cached_property
    def full_rows(self) -> np.ndarray:
        if self.ndim == 1:
            raise AttributeError("1-d plan has no full-spectrum axis")
        return _full_axis_modes(self.spatial[0], self.modes[0])

    @property
    def n_modes(self) -> int:
        if self.ndim == 1:
            return self.modes[0]
        return len(self.full_rows) * self.modes[1]

    # --- gather/scatter between the coefficient grid and the retained-mode list

    def gather(self, c: np.ndarray) -> np.ndarray:
        """[batch, *coeff_shape, ch] -> [batch, n_modes, ch] in canonical order."""
        if self.ndim == 1:
            return c[:, : self.modes[0], :]
        sub = c[:, self.full_rows[:, None], np.arange(self.modes[1])[None, :], :]
        return sub.reshape(c.shape[0], self.n_modes, c.shape[-1])

    def scatter(self, y: np.ndarray) -> np.ndarray:
        """Inverse of ``gather``; non-retained modes are zero."""
        nb, _, ch = y.shape
        out = np.zeros((nb,) + self.coeff_shape + (ch,), dtype=y.dtype)
        if self.ndim == 1:
            out[:, : self.modes[0], :] = y
        else:
            rows = self.full_rows
            out[:, rows[:, None], np.arange(self.modes[1])[None, :], :] = y.reshape(
                nb, len(rows), self.modes[1], ch
            )
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Real field [batch, *spatial, ch] -> coefficient grid (unnormalized)."""
        if x.shape[1 : 1 + self.ndim] != self.spatial:
            raise ValueError(
                f"field spatial shape {x.shape[1:1 + self.ndim]} does not match plan {self.spatial}"
            )
        if self.ndim == 1:
            return rfft_1d(x, axis=1)
        return rfft_2d(x, axes=(1, 2))

    def inverse(self, c: np.ndarray) -> np.ndarray:
        """Coefficient grid -> real field, with the 1/prod(spatial) factor."""
        if self.ndim == 1:
            return irfft_1d(c, self.spatial[0], axis=1)
        return irfft_2d(c, self.spatial[0], self.spatial[1], axes=(1, 2))

    def adjoint_weights(self) -> np.ndarray:
        """Hermitian multiplicities broadcast over the coefficient grid."""
        w = hermitian_weights(self.spatial[-1])
        if self.ndim == 1:
            return w[:, None]
        return w[None, :, None]


@lru_cache(maxsize=None)
def get_plan(spatial: tuple, modes: tuple) -> RfftPlan:
    """Memoized plan lookup; plans are immutable after construction."""
    return RfftPlan(spatial, modes)


def truncate_modes(c: np.ndarray, plan: RfftPlan) -> np.ndarray:
    """Zero every non-retained coefficient (idempotent)."""
    return plan.scatter(plan.gather(c))


def rfft(field, plan: RfftPlan) -> ComplexTensor:
    """Spec-facing forward transform of a real field batch.

    ``field`` is [batch, n1(, n2), channels] as Tensor or ndarray; spatial
    sizes must match the plan.
    """
    x = field.data if isinstance(field, Tensor) else np.asarray(field)
    return ComplexTensor(plan.forward(x))


def irfft(coeffs, plan: RfftPlan) -> Tensor:
    """Spec-facing inverse transform back to a real field batch."""
    c = coeffs.data if isinstance(coeffs, ComplexTensor) else np.asarray(coeffs)
    expected = (c.shape[0],) + plan.coeff_shape + (c.shape[-1],)
    if c.shape != expected:
        raise ValueError(f"irfft: coefficient layout {c.shape} does not match plan {expected}")
    return Tensor(plan.inverse(c))


def mode_count(modes: tuple) -> int:
    """Retained-mode count for a grid large enough that the +/- bands on the
    full axis do not overlap (grid >= 2*k per axis)."""
    modes = tuple(int(m) for m in modes)
    if len(modes) == 1:
        return modes[0]
    return (2 * modes[0] - 1) * modes[1]


def init_spectral_weights(rng: np.random.Generator, n_modes: int, d_in: int, d_out: int,
                          dtype=np.float64) -> Tensor:
    """Per-mode complex matrices stored as [n_modes, d_in, d_out, 2] (re, im).

    Real and imaginary parts are i.i.d. uniform on (-1/d_in, 1/d_in), which
    keeps block output variance near input variance at init.
    """
    s = 1.0 / d_in
    w = rng.uniform(-s, s, size=(n_modes, d_in, d_out, 2)).astype(dtype)
    return Tensor(w, requires_grad=True)


def _as_complex_weights(w: np.ndarray) -> np.ndarray:
    cdt = _complex_dtype(w.dtype)
    out = np.empty(w.shape[:-1], dtype=cdt)
    out.real = w[..., 0]
    out.imag = w[..., 1]
    return out


def spectral_conv_raw(x: np.ndarray, w_complex: np.ndarray, plan: RfftPlan) -> np.ndarray:
    """Non-differentiating forward pass (shared by the autodiff op and tests)."""
    c = plan.forward(x)
    mixed = np.einsum("bmi,mio->bmo", plan.gather(c), w_complex)
    return plan.inverse(plan.scatter(mixed))


def spectral_conv(x: Tensor, weights: Tensor, plan: RfftPlan) -> Tensor:
    """Differentiable Fourier-space mixing of a real field batch.

    Forward: transform ``x`` [batch, *spatial, d_in], multiply each retained
    mode's coefficient vector by that mode's d_in x d_out complex matrix,
    zero every other mode, transform back. ``weights`` is the real view
    [n_modes, d_in, d_out, 2] of the complex matrices.
    """
    xd = x.data
    if xd.ndim != plan.ndim + 2:
        raise ValueError(f"spectral_conv: field must be [batch, *spatial, ch], got {xd.shape}")
    d_in = xd.shape[-1]
    if weights.data.shape[:2] != (plan.n_modes, d_in) or weights.data.shape[-1] != 2:
        raise ValueError(
            f"spectral_conv: weights {weights.data.shape} do not match "
            f"(n_modes={plan.n_modes}, d_in={d_in}, d_out, 2)"
        )
    w_c = _as_complex_weights(weights.data)
    coeff = plan.forward(xd)
    modes_in = plan.gather(coeff)
    mixed = np.einsum("bmi,mio->bmo", modes_in, w_c)
    y = plan.inverse(plan.scatter(mixed)).astype(xd.dtype)
    out, tape = _make_output(y, (x, weights), "spectral_conv")
    if tape is not None:
        n_total = float(np.prod(plan.spatial))
        def _bw():
            g = out.grad
            if g is None:
                return
            # adjoint of the inverse transform: scaled, Hermitian-weighted forward
            g_coeff = plan.forward(np.asarray(g))
            g_coeff *= plan.adjoint_weights() / n_total
            g_modes = plan.gather(g_coeff)
            if weights.requires_grad:
                gw = np.einsum("bmi,bmo->mio", np.conj(modes_in), g_modes)
                weights.accumulate_grad(np.stack([gw.real, gw.imag], axis=-1))
            if x.requires_grad:
                g_in = np.einsum("bmo,mio->bmi", g_modes, np.conj(w_c))
                padded = plan.scatter(g_in)
                # adjoint of the forward transform: unnormalized inverse on the
                # stored coefficients, zeros on the implied mirror half
                if plan.ndim == 1:
                    n = plan.spatial[0]
                    full = np.zeros(padded.shape[:1] + (n,) + padded.shape[2:], dtype=padded.dtype)
                    full[:, : n // 2 + 1] = padded
                    gx = idft_unnorm(full, axis=1).real
                else:
                    n0, n1 = plan.spatial
                    full = np.zeros(padded.shape[:2] + (n1,) + padded.shape[3:], dtype=padded.dtype)
                    full[:, :, : n1 // 2 + 1] = padded
                    gx = idft_unnorm(idft_unnorm(full, axis=2), axis=1).real
                x.accumulate_grad(gx)
        tape.record(_bw)
    return out

"""Periodic Fourier representation of vector fields on the 3-torus [0, 2pi)^3.

Coefficient arrays are true Fourier coefficients in full FFT index order,
shape ``(..., c, n, n, n)`` where ``c`` is the number of components and any
leading axes are batch axes.  Every array produced here is truncated to the
2/3-rule cutoff, so quadratic products are alias-free on retained modes.

Physical transforms go through real FFTs on the half spectrum; the full
array is rebuilt from Hermitian symmetry on the way back.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
import scipy.fft as sfft

VOLUME = (2.0 * np.pi) ** 3
AXES = (-3, -2, -1)


def fft_workers() -> int:
    """Worker count for scipy.fft, capped by ``TMHD_THREADS`` (0 = auto)."""
    raw = os.environ.get("TMHD_THREADS", "0").strip() or "0"
    n = int(raw)
    return -1 if n <= 0 else n


class SpectralError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Uniform n^3 grid on the 2pi-periodic torus.

    ``cutoff`` is the largest retained ``|k_j|`` per axis; it defaults to
    ``n // 3`` which keeps quadratic products exact.
    """

    n: int = 16
    cutoff: int | None = None

    def __post_init__(self):
        n = self.n
        if not isinstance(n, (int, np.integer)) or n < 8 or n & (n - 1):
            raise SpectralError(f"n_per_axis must be a power of two >= 8, got {n!r}")
        if self.cutoff is None:
            object.__setattr__(self, "cutoff", n // 3)
        if not 0 <= self.cutoff <= n // 3:
            raise SpectralError(f"dealias cutoff {self.cutoff} outside [0, {n // 3}]")

    @property
    def padded(self) -> int:
        """Physical size of the 3/2-padded grid."""
        return 3 * self.n // 2

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)


@lru_cache(maxsize=32)
def wavenumbers(grid: GridSpec) -> np.ndarray:
    """Integer wavenumbers as a float array of shape (3, n, n, n)."""
    k1 = np.fft.fftfreq(grid.n, d=1.0 / grid.n)
    kk = np.stack(np.meshgrid(k1, k1, k1, indexing="ij"))
    kk.setflags(write=False)
    return kk


@lru_cache(maxsize=32)
def ksquared(grid: GridSpec) -> np.ndarray:
    k2 = np.sum(wavenumbers(grid) ** 2, axis=0)
    k2.setflags(write=False)
    return k2


@lru_cache(maxsize=64)
def cube_mask(grid: GridSpec, n_keep: int) -> np.ndarray:
    """Boolean mask of modes with max_j |k_j| <= n_keep."""
    mask = np.max(np.abs(wavenumbers(grid)), axis=0) <= n_keep
    mask.setflags(write=False)
    return mask


def dealias_mask(grid: GridSpec) -> np.ndarray:
    return cube_mask(grid, grid.cutoff)


def _band_slices(n: int, K: int, m: int):
    """Pairs of (n-grid slice, m-grid slice) covering modes 0..K and -K..-1."""
    pairs = [(slice(0, K + 1), slice(0, K + 1))]
    if K > 0:
        pairs.append((slice(n - K, n), slice(m - K, m)))
    return pairs


def to_physical(coeffs: np.ndarray, grid: GridSpec, m: int | None = None) -> np.ndarray:
    """Sample a band-limited field on an m^3 grid (default: the native grid).

    ``coeffs`` must vanish outside the dealias band.
    """
    m = grid.n if m is None else m
    K = grid.cutoff
    lead = coeffs.shape[:-3]
    half = np.zeros(lead + (m, m, m // 2 + 1), dtype=complex)
    for sx, dx in _band_slices(grid.n, K, m):
        for sy, dy in _band_slices(grid.n, K, m):
            half[..., dx, dy, : K + 1] = coeffs[..., sx, sy, : K + 1]
    return sfft.irfftn(half, s=(m, m, m), axes=AXES, norm="forward", workers=fft_workers())


def to_spectral(phys: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Fourier coefficients of samples on an m^3 grid, truncated to the band.

    The result lives on the native n-grid regardless of m.
    """
    m = phys.shape[-1]
    K = grid.cutoff
    n = grid.n
    half = sfft.rfftn(phys, axes=AXES, norm="forward", workers=fft_workers())
    out = np.zeros(phys.shape[:-3] + (n, n, n), dtype=complex)
    for sx, dx in _band_slices(n, K, m):
        for sy, dy in _band_slices(n, K, m):
            out[..., sx, sy, : K + 1] = half[..., dx, dy, : K + 1]
    if K > 0:
        # c(-k) = conj(c(k)) for the kz < 0 half
        pos = out[..., :, :, 1 : K + 1]
        neg = np.roll(np.flip(pos, axis=(-3, -2, -1)), 1, axis=(-3, -2))
        out[..., :, :, n - K :] = np.conj(neg)
    return out


class SpectralField:
    """Truncated Fourier coefficients of a real vector field.

    ``coeffs`` has shape ``(..., c, n, n, n)``; ``c`` is 3 for a vector
    field, 1 for a scalar.
    """

    __slots__ = ("coeffs", "grid")

    def __init__(self, coeffs: np.ndarray, grid: GridSpec):
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.ndim < 4 or coeffs.shape[-3:] != grid.shape:
            raise SpectralError(f"coefficient shape {coeffs.shape} does not match grid {grid.shape}")
        self.coeffs = coeffs
        self.grid = grid

    def _like(self, coeffs):
        return type(self)(coeffs, self.grid)

    @property
    def ncomp(self) -> int:
        return self.coeffs.shape[-4]

    def divergence_residual(self) -> float:
        """max |k . u(k)| over modes and 3-blocks, relative to max |u|."""
        return divergence_residual(self.coeffs, self.grid)

    def __add__(self, other):
        _check_same_grid(self, other)
        return self._like(self.coeffs + other.coeffs)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return self._like(self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return self._like(self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return self._like(-self.coeffs)

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.coeffs.shape}, grid={self.grid})"


class StatePair(SpectralField):
    """Velocity/magnetic pair y = (v, B), stored as six components."""

    __slots__ = ()

    def __init__(self, coeffs, grid):
        super().__init__(coeffs, grid)
        if self.ncomp != 6:
            raise SpectralError(f"StatePair needs 6 components, got {self.ncomp}")

    @classmethod
    def from_fields(cls, v: SpectralField, B: SpectralField) -> "StatePair":
        _check_same_grid(v, B)
        return cls(np.concatenate([v.coeffs, B.coeffs], axis=-4), v.grid)

    @classmethod
    def zeros(cls, grid: GridSpec, batch: tuple[int, ...] = ()) -> "StatePair":
        return cls(np.zeros(batch + (6,) + grid.shape, dtype=complex), grid)

    @property
    def v(self) -> SpectralField:
        return SpectralField(self.coeffs[..., :3, :, :, :], self.grid)

    @property
    def B(self) -> SpectralField:
        return SpectralField(self.coeffs[..., 3:, :, :, :], self.grid)


Field = Union[SpectralField, StatePair]


def _check_same_grid(a: SpectralField, b: SpectralField):
    if a.grid != b.grid:
        raise SpectralError(f"grid mismatch: {a.grid} vs {b.grid}")


def divergence_residual(coeffs: np.ndarray, grid: GridSpec) -> float:
    c = coeffs.shape[-4]
    if c % 3:
        raise SpectralError("divergence needs a multiple of three components")
    kk = wavenumbers(grid)
    blocks = coeffs.reshape(coeffs.shape[:-4] + (c // 3, 3) + grid.shape)
    div = np.abs(np.sum(kk * blocks, axis=-4))
    scale = np.max(np.abs(coeffs)) if coeffs.size else 0.0
    if scale == 0.0:
        return 0.0
    return float(np.max(div) / scale)


def hermitian_defect(coeffs: np.ndarray) -> float:
    """max |c(-k) - conj(c(k))| relative to max |c|."""
    flipped = np.roll(np.flip(coeffs, axis=AXES), 1, axis=AXES)
    scale = np.max(np.abs(coeffs)) if coeffs.size else 0.0
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(flipped - np.conj(coeffs))) / scale)


# --------------------------------------------------------------------------
# transforms

def forward_transform(p: np.ndarray, grid: GridSpec) -> SpectralField:
    """Real samples of shape (..., c, n, n, n) to truncated coefficients."""
    p = np.asarray(p)
    if p.ndim < 4 or p.shape[-3:] != grid.shape:
        raise SpectralError(f"physical field shape {p.shape} does not match grid {grid.shape}")
    if np.iscomplexobj(p):
        raise SpectralError("physical field must be real-valued")
    return SpectralField(to_spectral(p, grid) * dealias_mask(grid), grid)


def inverse_transform(s: SpectralField, tol: float = 1e-12) -> np.ndarray:
    """Sample a field on its native grid.

    Raises SpectralError when the coefficients are not Hermitian to ``tol``
    (relative) or carry energy outside the dealias band.
    """
    if hermitian_defect(s.coeffs) > tol:
        raise SpectralError("coefficients violate Hermitian symmetry; field would not be real")
    outside = np.abs(s.coeffs[..., ~dealias_mask(s.grid)])
    if outside.size and np.max(outside) > tol * max(np.max(np.abs(s.coeffs)), 1e-300):
        raise SpectralError("coefficients outside the dealias band")
    return to_physical(s.coeffs, s.grid)


def spectral_derivative(s: SpectralField, axis: int) -> SpectralField:
    """Partial derivative along ``axis`` (0, 1, 2 for x1, x2, x3)."""
    if axis not in (0, 1, 2):
        raise SpectralError(f"axis must be 0, 1 or 2, got {axis}")
    return s._like(1j * wavenumbers(s.grid)[axis] * s.coeffs)


def laplacian(s: SpectralField) -> SpectralField:
    return s._like(-ksquared(s.grid) * s.coeffs)


@lru_cache(maxsize=32)
def _projector(grid: GridSpec) -> np.ndarray:
    kk = wavenumbers(grid)
    k2 = ksquared(grid).copy()
    k2[0, 0, 0] = 1.0
    eye = np.eye(3)[:, :, None, None, None]
    proj = eye - kk[:, None] * kk[None, :] / k2
    proj.setflags(write=False)
    return proj


def leray_coeffs(coeffs: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Apply I - k k^T / |k|^2 to every 3-block of the component axis."""
    c = coeffs.shape[-4]
    if c % 3:
        raise SpectralError("Leray projection needs a multiple of three components")
    kk = wavenumbers(grid)
    k2 = ksquared(grid).copy()
    k2[0, 0, 0] = 1.0
    blocks = coeffs.reshape(coeffs.shape[:-4] + (c // 3, 3) + grid.shape)
    kdotu = np.sum(kk * blocks, axis=-4, keepdims=True)
    out = blocks - kk * (kdotu / k2)
    return out.reshape(coeffs.shape)


def leray_project(s: SpectralField) -> SpectralField:
    return s._like(leray_coeffs(s.coeffs, s.grid))


def truncate_modes(s: SpectralField, n_keep: int) -> SpectralField:
    """Galerkin projection onto modes with max_j |k_j| <= n_keep."""
    if n_keep > s.grid.cutoff:
        raise SpectralError(f"n_keep={n_keep} exceeds dealias cutoff {s.grid.cutoff}")
    return s._like(s.coeffs * cube_mask(s.grid, n_keep))


# --------------------------------------------------------------------------
# inner products

def _mode_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.real(np.sum(a * np.conj(b), axis=-4))


def sobolev_inner(a: SpectralField, b: SpectralField, order: float = 0.0) -> np.ndarray | float:
    """Bessel-potential inner product sum_k (1+|k|^2)^s <a(k), b(k)> (2pi)^3.

    Returns a float for unbatched inputs, otherwise an array over the batch.
    """
    _check_same_grid(a, b)
    if order < 0:
        raise SpectralError("Sobolev order must be nonnegative")
    w = (1.0 + ksquared(a.grid)) ** order
    val = VOLUME * np.sum(w * _mode_dot(a.coeffs, b.coeffs), axis=AXES)
    return float(val) if np.ndim(val) == 0 else val


def sobolev_norm_sq(a: SpectralField, order: float = 0.0):
    return sobolev_inner(a, a, order)


def gradient_norm_sq(a: SpectralField):
    """||grad a||^2_{L^2} = sum_k |k|^2 |a(k)|^2 (2pi)^3."""
    val = VOLUME * np.sum(ksquared(a.grid) * _mode_dot(a.coeffs, a.coeffs), axis=AXES)
    return float(val) if np.ndim(val) == 0 else val


def homogeneous_w22_sq(a: SpectralField):
    """sum_{i,j} ||d_i d_j a||^2, evaluated mode by mode."""
    kk = wavenumbers(a.grid)
    total = 0.0
    for i in range(3):
        for j in range(3):
            w = (kk[i] * kk[j]) ** 2
            total = total + VOLUME * np.sum(w * _mode_dot(a.coeffs, a.coeffs), axis=AXES)
    return float(total) if np.ndim(total) == 0 else total


# --------------------------------------------------------------------------
# products

def dealiased_product(a: SpectralField, b: SpectralField) -> SpectralField:
    """Pointwise product a*b evaluated on the grid and truncated to the band.

    Component axes broadcast, so a scalar times a vector works.  Exact on
    retained modes because the inputs are 2/3-truncated.
    """
    _check_same_grid(a, b)
    pa = to_physical(a.coeffs, a.grid)
    pb = to_physical(b.coeffs, b.grid)
    out = to_spectral(pa * pb, a.grid) * dealias_mask(a.grid)
    cls = type(a) if out.shape[-4] == a.ncomp else SpectralField
    return cls(out, a.grid)


def resample(s: SpectralField, grid: GridSpec) -> SpectralField:
    """Move a field to another grid, zero-padding or truncating the spectrum."""
    src_k = s.grid.cutoff
    dst_k = grid.cutoff
    K = min(src_k, dst_k)
    ks = np.concatenate([np.arange(K + 1), np.arange(-K, 0)])
    si = ks % s.grid.n
    di = ks % grid.n
    out = np.zeros(s.coeffs.shape[:-3] + grid.shape, dtype=complex)
    out[..., di[:, None, None], di[None, :, None], di[None, None, :]] = s.coeffs[
        ..., si[:, None, None], si[None, :, None], si[None, None, :]
    ]
    return type(s)(out, grid)


# --------------------------------------------------------------------------
# divergence-free Fourier basis

def polarization_vectors(k) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal pair perpendicular to k.

    The first vector is e3 projected onto k-perp and normalised (e1 when k is
    parallel to e3); the second is k_hat x first.
    """
    k = np.asarray(k, dtype=float)
    nk = np.linalg.norm(k)
    if nk == 0:
        raise SpectralError("no polarization for the zero mode")
    khat = k / nk
    for base in (np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0])):
        p = base - np.dot(base, khat) * khat
        if np.linalg.norm(p) > 1e-12:
            break
    p1 = p / np.linalg.norm(p)
    p2 = np.cross(khat, p1)
    return p1, p2


def single_mode(grid: GridSpec, k, polarization: int = 1, amplitude: float = 1.0) -> SpectralField:
    """Divergence-free vector field amplitude * p * cos(k . x)."""
    k = tuple(int(c) for c in k)
    if max(abs(c) for c in k) > grid.cutoff:
        raise SpectralError(f"mode {k} outside the dealias band")
    p = polarization_vectors(k)[polarization - 1]
    coeffs = np.zeros((3,) + grid.shape, dtype=complex)
    n = grid.n
    idx = tuple(c % n for c in k)
    nidx = tuple((-c) % n for c in k)
    coeffs[(slice(None),) + idx] += 0.5 * amplitude * p
    coeffs[(slice(None),) + nidx] += 0.5 * amplitude * p
    return SpectralField(coeffs, grid)


def random_solenoidal(
    grid: GridSpec,
    rng: np.random.Generator,
    amplitude: float = 1.0,
    slope: float = 2.0,
    batch: tuple[int, ...] = (),
    ncomp: int = 6,
    band: int | None = None,
) -> np.ndarray:
    """Random divergence-free coefficients with spectrum ~ (1+|k|^2)^(-slope/2).

    Normalised so that the grid-average of |y|^2 equals amplitude^2 per
    sample.  ``band`` limits the modes to max_j |k_j| <= band.
    """
    white = rng.standard_normal(batch + (ncomp,) + grid.shape)
    c = to_spectral(white, grid)
    c *= (1.0 + ksquared(grid)) ** (-slope / 2.0)
    c *= cube_mask(grid, grid.cutoff if band is None else band)
    c[..., 0, 0, 0] = 0.0
    c = leray_coeffs(c, grid)
    energy = np.sum(np.abs(c) ** 2, axis=(-4,) + AXES, keepdims=True)
    energy = np.where(energy > 0, energy, 1.0)
    return c * (amplitude / np.sqrt(energy))

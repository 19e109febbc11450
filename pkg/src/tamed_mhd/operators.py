"""Drift operator A (Laplacian, MHD coupling, taming) and diffusion family B_k."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .noise import CoefficientFamily, grid_points
from .spectral import (
    AXES,
    VOLUME,
    GridSpec,
    SpectralError,
    SpectralField,
    StatePair,
    _check_same_grid,
    dealias_mask,
    dealiased_product,
    gradient_norm_sq,
    ksquared,
    leray_coeffs,
    sobolev_norm_sq,
    spectral_derivative,
    to_physical,
    to_spectral,
    wavenumbers,
)


@dataclass(frozen=True)
class TamingSpec:
    """Taming function g_N: zero on [0, N], slope C_taming beyond N + 1.

    On (N, N+1) the blend is the quintic Hermite interpolant matching value,
    first and second derivative at both ends.  With these boundary data the
    quintic coefficient vanishes and the blend is C t^3 - C t^4 / 2, t = r - N,
    whose derivative C t^2 (3 - 2t) rises monotonically from 0 to C.
    """

    N: float = 100.0
    C_taming: float = 2.0
    C1: float = 2.0
    blend: str = "quintic_hermite"

    def __post_init__(self):
        if not self.N > 0:
            raise ValueError(f"taming threshold N must be positive, got {self.N}")
        if not self.C_taming > 0 or not self.C1 > 0:
            raise ValueError("C_taming and C1 must be positive")
        if self.blend != "quintic_hermite":
            raise ValueError(f"unknown blend {self.blend!r}")
        if self.C_taming > self.C1:
            raise ValueError(f"C_taming={self.C_taming} exceeds the derivative bound C1={self.C1}")


def eval_taming(r, spec: TamingSpec):
    """g_N(r); scalar in, float out, arrays elementwise."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0) or np.any(np.isnan(r_arr)):
        raise ValueError("taming argument must be nonnegative")
    C = spec.C_taming
    t = np.clip(r_arr - spec.N, 0.0, 1.0)
    blend = C * t**3 - 0.5 * C * t**4
    out = np.where(r_arr >= spec.N + 1.0, C * (r_arr - spec.N - 0.5), blend)
    return float(out) if np.ndim(out) == 0 else out


def eval_taming_derivative(r, spec: TamingSpec):
    r_arr = np.asarray(r, dtype=float)
    C = spec.C_taming
    t = np.clip(r_arr - spec.N, 0.0, 1.0)
    out = np.where(r_arr >= spec.N + 1.0, C, C * t**2 * (3.0 - 2.0 * t))
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# bilinear terms

def convect(a: SpectralField, b: SpectralField) -> SpectralField:
    """(a . grad) b, dealiased and not projected."""
    _check_same_grid(a, b)
    if a.ncomp != 3 or b.ncomp != 3:
        raise SpectralError("convect needs two 3-component fields")
    out = 0
    for j in range(3):
        aj = SpectralField(a.coeffs[..., j : j + 1, :, :, :], a.grid)
        out = out + dealiased_product(aj, spectral_derivative(b, j)).coeffs
    return SpectralField(out, a.grid)


# symmetric pairs (j, c) for v_j v_c - B_j B_c and antisymmetric pairs for v_j B_c - B_j v_c
_SYM = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
_ANTI = ((0, 1), (0, 2), (1, 2))


def bilinear_block_phys(phys: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Unprojected ((v.grad)v - (B.grad)B, (v.grad)B - (B.grad)v) in divergence form.

    ``phys`` holds y sampled on the native grid, shape (..., 6, n, n, n).
    For divergence-free fields (a.grad)b = div(a (x) b), so the block needs
    nine dealiased products instead of eighteen.
    """
    v = phys[..., :3, :, :, :]
    B = phys[..., 3:, :, :, :]
    lead = phys.shape[:-4]
    prods = np.empty(lead + (9,) + grid.shape)
    for i, (j, c) in enumerate(_SYM):
        prods[..., i, :, :, :] = v[..., j, :, :, :] * v[..., c, :, :, :] - B[..., j, :, :, :] * B[..., c, :, :, :]
    for i, (j, c) in enumerate(_ANTI):
        prods[..., 6 + i, :, :, :] = v[..., j, :, :, :] * B[..., c, :, :, :] - B[..., j, :, :, :] * v[..., c, :, :, :]
    hat = to_spectral(prods, grid) * dealias_mask(grid)
    ik = 1j * wavenumbers(grid)
    sym = {}
    for i, (j, c) in enumerate(_SYM):
        sym[(j, c)] = sym[(c, j)] = hat[..., i, :, :, :]
    anti = {}
    for i, (j, c) in enumerate(_ANTI):
        anti[(j, c)] = hat[..., 6 + i, :, :, :]
        anti[(c, j)] = -hat[..., 6 + i, :, :, :]
    out = np.zeros(lead + (6,) + grid.shape, dtype=complex)
    for c in range(3):
        for j in range(3):
            out[..., c, :, :, :] += ik[j] * sym[(j, c)]
            if j != c:
                out[..., 3 + c, :, :, :] += ik[j] * anti[(j, c)]
    return out


def bilinear_block(y: StatePair) -> StatePair:
    """Unprojected MHD bilinear block, gradient form via :func:`convect`."""
    v, B = y.v, y.B
    top = convect(v, v).coeffs - convect(B, B).coeffs
    bot = convect(v, B).coeffs - convect(B, v).coeffs
    return StatePair(np.concatenate([top, bot], axis=-4), y.grid)


# --------------------------------------------------------------------------
# taming

def taming_coeffs(coeffs: np.ndarray, grid: GridSpec, spec: TamingSpec, m: int | None = None) -> np.ndarray | None:
    """Truncated coefficients of g_N(|y|^2) y, computed on the padded grid.

    Returns None when |y|^2 <= N at every padded grid point, in which case
    the term vanishes identically.  For batched input only lanes where the
    threshold is crossed are transformed back.
    """
    m = grid.padded if m is None else m
    phys = to_physical(coeffs, grid, m)
    r = np.sum(phys**2, axis=-4, keepdims=True)
    if coeffs.ndim == 4:
        if not np.max(r) > spec.N:
            return None
        return to_spectral(eval_taming(r, spec) * phys, grid) * dealias_mask(grid)
    lanes = np.max(r.reshape(r.shape[0], -1), axis=1) > spec.N
    if not np.any(lanes):
        return None
    out = np.zeros(coeffs.shape, dtype=complex)
    idx = np.flatnonzero(lanes)
    out[idx] = to_spectral(eval_taming(r[idx], spec) * phys[idx], grid) * dealias_mask(grid)
    return out


def taming_quadrature(y: StatePair, spec: TamingSpec, m: int) -> np.ndarray | float:
    """Integral of g_N(|y|^2) |y|^2 by the m^3 trapezoidal rule."""
    phys = to_physical(y.coeffs, y.grid, m)
    r = np.sum(phys**2, axis=-4)
    val = VOLUME * np.mean(eval_taming(r, spec) * r, axis=AXES)
    return float(val) if np.ndim(val) == 0 else val


# --------------------------------------------------------------------------
# drift

def operator_A(y: StatePair, spec: TamingSpec) -> StatePair:
    """P Delta y - P(bilinear block) - P(g_N(|y|^2) y), each block projected."""
    grid = y.grid
    lap = leray_coeffs(-ksquared(grid) * y.coeffs, grid)
    bil = leray_coeffs(bilinear_block_phys(to_physical(y.coeffs, grid), grid), grid)
    out = lap - bil
    tame = taming_coeffs(y.coeffs, grid, spec)
    if tame is not None:
        out = out - leray_coeffs(tame, grid)
    return StatePair(out, grid)


def operator_A2(y: StatePair) -> StatePair:
    """Projected bilinear part, A_2(y) = -P(bilinear block)."""
    grid = y.grid
    return StatePair(-leray_coeffs(bilinear_block_phys(to_physical(y.coeffs, grid), grid), grid), grid)


@dataclass(frozen=True)
class EnergyPairing:
    """Terms of <A(y), y> = -||grad y||^2 - ||sqrt(g)|y|||^2.

    ``taming_term`` uses a reference quadrature on a grid twice as fine as
    the padded one; ``operator_pairing`` is <A(y), y> with A evaluated as in
    the time stepper.
    """

    bilinear_pairing: float
    gradient_term: float
    taming_term: float
    operator_pairing: float

    @property
    def residual(self) -> float:
        return self.operator_pairing + self.gradient_term + self.taming_term

    @property
    def relative_residual(self) -> float:
        scale = self.gradient_term + self.taming_term
        return abs(self.residual) / scale if scale > 0 else abs(self.residual)


def _pair(a: np.ndarray, b: np.ndarray) -> float:
    return float(VOLUME * np.sum(np.real(a * np.conj(b))))


def energy_pairing(y: StatePair, spec: TamingSpec) -> EnergyPairing:
    if y.coeffs.ndim != 4:
        raise SpectralError("energy_pairing takes a single (unbatched) state")
    a2 = operator_A2(y).coeffs
    A = operator_A(y, spec).coeffs
    return EnergyPairing(
        bilinear_pairing=_pair(a2, y.coeffs),
        gradient_term=float(gradient_norm_sq(y)),
        taming_term=taming_quadrature(y, spec, 2 * y.grid.padded),
        operator_pairing=_pair(A, y.coeffs),
    )


# --------------------------------------------------------------------------
# diffusion family

def _constant_sigma_vectors(family: CoefficientFamily):
    s, sb = family.sigma(np.zeros((3, 1)))
    return np.asarray(s).reshape(-1, 3), np.asarray(sb).reshape(-1, 3)


def transport_coeffs(coeffs: np.ndarray, grid: GridSpec, family: CoefficientFamily, weights, weights_bar) -> np.ndarray:
    """Unprojected sum_k w_k (sigma_k.grad) v and sum_k wbar_k (sigmabar_k.grad) B.

    ``weights`` has shape (..., K) matching the batch axes of ``coeffs``.
    For x-independent sigma this is the exact per-mode multiplier i(s.k).
    """
    weights = np.asarray(weights, dtype=float)
    weights_bar = np.asarray(weights_bar, dtype=float)
    kk = wavenumbers(grid)
    out = np.empty_like(coeffs)
    if family.sigma_constant:
        s, sb = _constant_sigma_vectors(family)
        sv = weights @ s  # (..., 3)
        sbv = weights_bar @ sb
        extra = (1,) * 3
        mult_v = 1j * np.sum(sv.reshape(sv.shape[:-1] + (3,) + extra) * kk, axis=-4)
        mult_b = 1j * np.sum(sbv.reshape(sbv.shape[:-1] + (3,) + extra) * kk, axis=-4)
        out[..., :3, :, :, :] = mult_v[..., None, :, :, :] * coeffs[..., :3, :, :, :]
        out[..., 3:, :, :, :] = mult_b[..., None, :, :, :] * coeffs[..., 3:, :, :, :]
        return out
    x = grid_points(grid)
    s, sb = family.sigma(x)
    s = np.broadcast_to(s, (family.K_noise, 3) + grid.shape)
    sb = np.broadcast_to(sb, (family.K_noise, 3) + grid.shape)
    sx = np.tensordot(weights, s, axes=([-1], [0]))  # (..., 3, n, n, n)
    sbx = np.tensordot(weights_bar, sb, axes=([-1], [0]))
    grads = to_physical(1j * kk[:, None] * coeffs[..., None, :, :, :, :], grid)  # (..., 3j, 6, n, n, n)
    phys = np.empty(coeffs.shape)
    phys[..., :3, :, :, :] = np.sum(sx[..., :, None, :, :, :] * grads[..., :, :3, :, :, :], axis=-5)
    phys[..., 3:, :, :, :] = np.sum(sbx[..., :, None, :, :, :] * grads[..., :, 3:, :, :, :], axis=-5)
    return to_spectral(phys, grid) * dealias_mask(grid)


def state_noise_coeffs(phys: np.ndarray, grid: GridSpec, family: CoefficientFamily, weights, weights_bar) -> np.ndarray:
    """Unprojected sum_k w_k H_k(x, y) from y sampled on the native grid."""
    batched = phys.ndim == 4
    p = phys[None] if batched else phys
    w = np.asarray(weights, dtype=float).reshape(-1, family.K_noise)
    wb = np.asarray(weights_bar, dtype=float).reshape(-1, family.K_noise)
    vals = family.h_contract(grid_points(grid), p, w, wb)
    out = to_spectral(vals, grid) * dealias_mask(grid)
    return out[0] if batched else out


def operator_B(y: StatePair, family: CoefficientFamily, k: int) -> StatePair:
    """P((Sigma_k . grad) y) + P H_k(x, y); v-part driven by (sigma_k, h_k), B-part by (sigmabar_k, hbar_k)."""
    if not 0 <= k < family.K_noise:
        raise IndexError(f"noise index {k} outside [0, {family.K_noise})")
    if y.coeffs.ndim != 4:
        raise SpectralError("operator_B takes a single (unbatched) state")
    e = np.zeros(family.K_noise)
    e[k] = 1.0
    grid = y.grid
    out = transport_coeffs(y.coeffs, grid, family, e, e)
    out = out + state_noise_coeffs(to_physical(y.coeffs, grid), grid, family, e, e)
    return StatePair(leray_coeffs(out, grid), grid)


def operator_B_all(y: StatePair, family: CoefficientFamily) -> np.ndarray:
    """Coefficients of B_k(y) for every k < K_noise, shape (K, 6, n, n, n)."""
    if y.coeffs.ndim != 4:
        raise SpectralError("operator_B_all takes a single (unbatched) state")
    grid = y.grid
    eye = np.eye(family.K_noise)
    c = np.broadcast_to(y.coeffs, (family.K_noise,) + y.coeffs.shape)
    out = transport_coeffs(c, grid, family, eye, eye)
    phys = to_physical(y.coeffs, grid)
    h, hb = family.h(grid_points(grid), phys)
    h = np.broadcast_to(h, (family.K_noise, 3) + grid.shape)
    hb = np.broadcast_to(hb, (family.K_noise, 3) + grid.shape)
    out = out + to_spectral(np.concatenate([h, hb], axis=1), grid) * dealias_mask(grid)
    return leray_coeffs(out, grid)


def hs_norms(y: StatePair, family: CoefficientFamily) -> tuple[float, float]:
    """(order-0, order-1) Hilbert-Schmidt norms from one evaluation of the family."""
    b = operator_B_all(y, family)
    k2 = ksquared(y.grid)
    a = np.abs(b) ** 2
    return float(VOLUME * np.sum(a)), float(VOLUME * np.sum((1.0 + k2) * a))


def hs_norm_B(y: StatePair, family: CoefficientFamily, order: int = 0) -> float:
    """sum_k ||B_k(y)||^2_{H^order} over the truncated family."""
    if order not in (0, 1):
        raise ValueError("order must be 0 or 1")
    return hs_norms(y, family)[order]

"""Per-record diagnostics of a state (norms, taming activity, L^4 quantities)."""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np
import scipy.fft as sfft

from .spectral import (
    AXES,
    VOLUME,
    GridSpec,
    StatePair,
    fft_workers,
    ksquared,
    to_physical,
    wavenumbers,
)

CSV_COLUMNS = (
    "t", "E_kin", "E_mag", "h1_sq", "h2_sq", "l4_fourth",
    "grad_ysq_sq", "taming_fraction", "div_residual", "cross_helicity",
)


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    E_kin: float
    E_mag: float
    h1_norm_sq: float
    h2_norm_sq: float
    l4_fourth: float
    grad_ysq_sq: float
    taming_fraction: float
    div_residual: float
    cross_helicity: float

    def as_row(self) -> tuple:
        return astuple(self)

    @classmethod
    def from_row(cls, row) -> "DiagnosticsRecord":
        return cls(*(float(v) for v in row))


RECORD_FIELDS = tuple(f.name for f in fields(DiagnosticsRecord))


def _weighted_sum(w: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    return VOLUME * np.sum(w * np.abs(coeffs) ** 2, axis=(-4,) + AXES)


def _half_weights(m: int) -> np.ndarray:
    """Multiplicity of each rfft half-spectrum column in a full real spectrum."""
    w = np.full(m // 2 + 1, 2.0)
    w[0] = 1.0
    if m % 2 == 0:
        w[-1] = 1.0
    return w


def diagnostics_arrays(coeffs: np.ndarray, grid: GridSpec, N: float) -> dict:
    """All record fields except t, vectorised over leading batch axes.

    Norms are spectral; l4_fourth, grad_ysq_sq and taming_fraction use the
    3/2-padded grid, where |y|^2 (band 2K) and |y|^4 (band 4K) are exact.
    """
    k2 = ksquared(grid)
    v = coeffs[..., :3, :, :, :]
    B = coeffs[..., 3:, :, :, :]
    E_kin = 0.5 * _weighted_sum(1.0, v)
    E_mag = 0.5 * _weighted_sum(1.0, B)
    h1 = _weighted_sum(1.0 + k2, coeffs)
    h2 = _weighted_sum((1.0 + k2) ** 2, coeffs)
    cross = VOLUME * np.sum(np.real(v * np.conj(B)), axis=(-4,) + AXES)

    kk = wavenumbers(grid)
    blocks = coeffs.reshape(coeffs.shape[:-4] + (2, 3) + grid.shape)
    div = np.max(np.abs(np.sum(kk * blocks, axis=-4)), axis=(-4,) + AXES)
    scale = np.max(np.abs(coeffs), axis=(-4,) + AXES)
    div_rel = np.where(scale > 0, div / np.where(scale > 0, scale, 1.0), 0.0)

    m = grid.padded
    phys = to_physical(coeffs, grid, m)
    r = np.sum(phys**2, axis=-4)
    l4 = VOLUME * np.mean(r**2, axis=AXES)
    frac = np.mean(r > N, axis=AXES)
    rhat = sfft.rfftn(r, axes=AXES, norm="forward", workers=fft_workers())
    km = np.fft.fftfreq(m, d=1.0 / m)
    kz = np.arange(m // 2 + 1)
    ksq = km[:, None, None] ** 2 + km[None, :, None] ** 2 + kz[None, None, :] ** 2
    grad = VOLUME * np.sum(_half_weights(m) * ksq * np.abs(rhat) ** 2, axis=AXES)
    return {
        "E_kin": E_kin, "E_mag": E_mag, "h1_norm_sq": h1, "h2_norm_sq": h2,
        "l4_fourth": l4, "grad_ysq_sq": grad, "taming_fraction": frac,
        "div_residual": div_rel, "cross_helicity": cross,
    }


def diagnostics_record(y: StatePair, t: float, spec) -> DiagnosticsRecord:
    """Diagnostics of a single state; ``spec`` is a TamingSpec (or anything with .N)."""
    if y.coeffs.ndim != 4:
        raise ValueError("diagnostics_record takes a single (unbatched) state")
    d = diagnostics_arrays(y.coeffs, y.grid, spec.N)
    return DiagnosticsRecord(t=float(t), **{k: float(v) for k, v in d.items()})


def records_from_arrays(times, arrays: dict, lane: int | None = None) -> list[DiagnosticsRecord]:
    """Unpack stacked diagnostic arrays (records x lanes) into records for one lane."""
    out = []
    for i, t in enumerate(times):
        vals = {k: float(v[i] if lane is None else v[i][lane]) for k, v in arrays.items()}
        out.append(DiagnosticsRecord(t=float(t), **vals))
    return out

"""Verification of the functional estimates and the Monte Carlo experiments.

Covers the Sobolev/energy inequalities on random fields, a priori moment
monitoring across taming levels, continuous dependence with stopping,
running time averages, and coupled estimates of T_t phi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .diagnostics import DiagnosticsRecord, diagnostics_arrays, diagnostics_record  # noqa: F401
from .integrator import (
    EXIT_BLOWUP,
    EXIT_ERROR,
    InitialCondition,
    SimConfig,
    TrajectoryOutput,
    run_ensemble,
)
from .noise import (
    SIGMA_MASS_LIMIT,
    CoefficientFamily,
    RngStream,
    StreamIncrements,
    grid_points,
    make_family,
)
from .operators import TamingSpec, energy_pairing, hs_norms, operator_A
from .spectral import (
    AXES,
    VOLUME,
    GridSpec,
    StatePair,
    cube_mask,
    gradient_norm_sq,
    homogeneous_w22_sq,
    ksquared,
    random_solenoidal,
    resample,
    single_mode,
    sobolev_inner,
    sobolev_norm_sq,
    to_physical,
    wavenumbers,
)

W22_RATIO_BOUND = 9.0


def random_fields(g: GridSpec, n_samples: int, rng: RngStream, amplitude: float = 1.0, slope: float = 2.0, band: int | None = None) -> np.ndarray:
    """Batch of random divergence-free states, shape (n_samples, 6, n, n, n)."""
    gen = rng.generator(0)
    rng.advance()
    return random_solenoidal(g, gen, amplitude, slope, batch=(n_samples,), band=band)


# --------------------------------------------------------------------------
# functional estimates

@dataclass
class FunctionalReport:
    ratios: dict  # check -> array over samples (observed / allowed)
    worst: dict
    failures: list
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.failures


def verify_functional_estimates(
    g: GridSpec,
    n_samples: int,
    rng: RngStream,
    spec: TamingSpec | None = None,
    family: CoefficientFamily | None = None,
    amplitude: float = 1.0,
    slope: float = 2.0,
    pairing_tol: float = 1e-6,
    refine: bool = False,
) -> FunctionalReport:
    """Check the Sobolev, energy-pairing and Hilbert-Schmidt inequalities on random fields.

    Ratios are observed/allowed, so every check passes when its worst ratio
    is at most 1; the W^{2,2}/H^2 ratio is reported raw and must stay below 9 + 1e-10.
    With ``refine`` the pairing residual is also computed after spectral
    resampling to the doubled grid and must strictly decrease.
    """
    if n_samples < 10:
        raise ValueError("n_samples must be >= 10")
    spec = TamingSpec() if spec is None else spec
    family = make_family("default", grid=g) if family is None else family
    ys = random_fields(g, n_samples, rng, amplitude, slope)
    fine = GridSpec(2 * g.n) if refine else None

    ratio21, bil, pair, pair_fine, hs0, hs1 = [], [], [], [], [], []
    for c in ys:
        y = StatePair(c, g)
        h0 = sobolev_norm_sq(y, 0)
        h1 = sobolev_norm_sq(y, 1)
        h2 = sobolev_norm_sq(y, 2)
        grad = gradient_norm_sq(y)
        ratio21.append(homogeneous_w22_sq(y) / h2)
        ep = energy_pairing(y, spec)
        bil.append(abs(ep.bilinear_pairing) / (1e-10 * math.sqrt(h0 * grad)))
        pair.append(ep.relative_residual)
        if fine is not None:
            pair_fine.append(energy_pairing(resample(y, fine), spec).relative_residual)
        b0, b1 = hs_norms(y, family)
        hs0.append(b0 / (0.5 * h1 + family.hs0_coeff * h0 + 2.0 * family.F_H_L1))
        hs1.append(b1 / (0.5 * h2 + family.hs1_coeff * h1 + family.hs1_F_coeff * family.F_H_L1))

    pts = grid_points(g)
    mass = float(np.max(family.sigma_mass(pts)))
    ratios = {
        "w22_ratio": np.array(ratio21),
        "bilinear": np.array(bil),
        "pairing": np.array(pair) / pairing_tol,
        "hs0": np.nan_to_num(np.array(hs0)),
        "hs1": np.nan_to_num(np.array(hs1)),
        "sigma_mass": np.array([mass / SIGMA_MASS_LIMIT]),
    }
    limits = {"w22_ratio": W22_RATIO_BOUND + 1e-10, "sigma_mass": 1.0 + 1e-12}
    failures = [k for k, r in ratios.items() if not np.max(r) <= limits.get(k, 1.0)]
    details = {"pairing_residual": np.array(pair), "sigma_mass": mass}
    if fine is not None:
        details["pairing_residual_fine"] = np.array(pair_fine)
        if not np.all(np.array(pair_fine) < np.array(pair)):
            failures.append("pairing_refinement")
    worst = {k: float(np.max(r)) for k, r in ratios.items()}
    return FunctionalReport(ratios=ratios, worst=worst, failures=failures, details=details)


def l12_ratio(y: StatePair, m: int | None = None) -> float:
    """||y||^4_{L^12} / (|| |v||grad v| ||^2 + || |B||grad B| ||^2) by quadrature on an m^3 grid."""
    g = y.grid
    m = 2 * g.padded if m is None else m
    phys = to_physical(y.coeffs, g, m)
    kk = wavenumbers(g)
    grads = to_physical(1j * kk[:, None] * y.coeffs[None], g, m)  # (3 dirs, 6, ...)
    ysq = np.sum(phys**2, axis=0)
    l12 = (VOLUME * np.mean(ysq**6)) ** (1.0 / 3.0)
    vsq = np.sum(phys[:3] ** 2, axis=0)
    bsq = np.sum(phys[3:] ** 2, axis=0)
    gv = np.sum(grads[:, :3] ** 2, axis=(0, 1))
    gb = np.sum(grads[:, 3:] ** 2, axis=(0, 1))
    rhs = VOLUME * np.mean(vsq * gv + bsq * gb)
    return float(l12 / rhs)


@dataclass
class ConstantFit:
    constants: dict  # grid n -> fitted constant (max ratio)
    spread: float  # max/min - 1 across grids


def fit_l12_constant(n_samples: int, rng: RngStream, grids=(16, 32), band: int = 5) -> ConstantFit:
    """Fit C in ||y||^4_{L^12} <= C (...) on the same band-limited fields on several grids."""
    base = GridSpec(grids[0])
    band = min(band, base.cutoff)
    ys = random_fields(base, n_samples, rng, band=band)
    consts = {}
    for n in grids:
        gn = GridSpec(n)
        consts[n] = max(l12_ratio(resample(StatePair(c, base), gn), 3 * n // 2) for c in ys)
    vals = np.array(list(consts.values()))
    return ConstantFit(constants=consts, spread=float(vals.max() / vals.min() - 1.0))


@dataclass
class StabilityFit:
    constants: list  # fitted C per separation level
    separations: list
    spread: float


def stability_spot_check(g: GridSpec, spec: TamingSpec, n_pairs: int, rng: RngStream, eps=(1e-2, 5e-3, 2.5e-3), amplitude: float = 3.0) -> StabilityFit:
    """Fitted constant of |<A(y) - A(y'), e>_{H^1}| <= C ||y - y'||_{L^2} (1 + ||y||^2_{H^1} + ||y'||^2_{H^1}).

    The test function is a fixed smooth low mode; y' = y + eps * d with a
    random unit direction d, eps halved between levels.
    """
    e = np.zeros((6,) + g.shape, dtype=complex)
    e[:3] = single_mode(g, (1, 1, 0), 1, 1.0).coeffs
    e[3:] = single_mode(g, (0, 1, 1), 2, 1.0).coeffs
    etest = StatePair(e, g)
    ys = random_fields(g, n_pairs, rng, amplitude=amplitude)
    ds = random_fields(g, n_pairs, rng, amplitude=1.0)
    consts = []
    for ep in eps:
        worst = 0.0
        for c, d in zip(ys, ds):
            y = StatePair(c, g)
            d = StatePair(d / math.sqrt(VOLUME * np.sum(np.abs(d) ** 2)), g)
            y2 = y + ep * d
            diff = operator_A(y, spec) - operator_A(y2, spec)
            lhs = abs(sobolev_inner(diff, etest, 1))
            rhs = ep * (1.0 + sobolev_norm_sq(y, 1) + sobolev_norm_sq(y2, 1))
            worst = max(worst, lhs / rhs)
        consts.append(worst)
    vals = np.array(consts)
    return StabilityFit(constants=consts, separations=list(eps), spread=float(vals.max() / vals.min() - 1.0))


# --------------------------------------------------------------------------
# a priori moments

@dataclass
class AprioriReport:
    N_levels: list
    sup_h1: list  # E[sup_t ||y||^2_{H^1}]
    int_h2: list  # E[int ||y||^2_{H^2}] (trapezoid over records)
    int_h2_step: list  # E[sum dt ||y^{n+1}||^2_{H^2}]
    int_grad_ysq: list
    int_l4: list
    blowups: list
    errors: list
    slope: float

    @property
    def finite(self) -> bool:
        arrs = [self.sup_h1, self.int_h2, self.int_grad_ysq, self.int_l4]
        return all(np.all(np.isfinite(a)) for a in arrs)


def _same_setup(a: SimConfig, b: SimConfig) -> bool:
    return (a.grid == b.grid and a.family is b.family and a.T == b.T and a.dt == b.dt and a.ic == b.ic
            and a.taming.C_taming == b.taming.C_taming)


def a_priori_report(cfgs: list, M: int, record_every: int = 10) -> AprioriReport:
    """Monte Carlo moments over M paths for each taming level.

    Path i uses stream (seed, stream_id + i) at every level, so levels are
    compared on common noise.
    """
    if not cfgs:
        raise ValueError("need at least one config")
    if any(not _same_setup(cfgs[0], c) for c in cfgs[1:]):
        raise ValueError("configs must share grid, family, horizon, dt and IC and differ only in N")
    out = {k: [] for k in ("sup", "h2", "h2s", "grad", "l4", "blow", "err")}
    for cfg in cfgs:
        y0 = np.broadcast_to(cfg.ic.build(cfg.grid).coeffs * cube_mask(cfg.grid, cfg.level), (M, 6) + cfg.grid.shape)
        src = StreamIncrements([RngStream(cfg.seed, cfg.stream_id + i) for i in range(M)])
        res = run_ensemble(y0, cfg, src, record_every=record_every)
        out["sup"].append(float(np.mean(res.sup_h1_sq)))
        out["h2"].append(float(np.mean(res.integrals["h2_norm_sq"])))
        out["h2s"].append(float(np.mean(res.h2_integral_step)))
        out["grad"].append(float(np.mean(res.integrals["grad_ysq_sq"])))
        out["l4"].append(float(np.mean(res.integrals["l4_fourth"])))
        out["blow"].append(sum(s == EXIT_BLOWUP for s in res.exit_status))
        out["err"].append(sum(s == EXIT_ERROR for s in res.exit_status))
    Ns = [c.taming.N for c in cfgs]
    slope = float("nan")
    if len(cfgs) >= 2 and np.all(np.array(out["sup"]) > 0):
        slope = float(np.polyfit(np.log(Ns), np.log(out["sup"]), 1)[0])
    return AprioriReport(Ns, out["sup"], out["h2"], out["h2s"], out["grad"], out["l4"], out["blow"], out["err"], slope)


# --------------------------------------------------------------------------
# continuous dependence

@dataclass
class DependenceTable:
    deltas: list
    ratios: list  # r(delta) = E||z(t ^ tau_R)||^2_{H^1} / ||z(0)||^2_{H^1}
    stderr: list
    stopped_fraction: list
    R: float

    @property
    def spread(self) -> float:
        r = np.array(self.ratios)
        return float(r.max() / r.min())


def perturbation_direction(g: GridSpec, mode=(1, 0, 0)) -> np.ndarray:
    """Unit-H^1 divergence-free direction in a single mode, placed in both v and B."""
    m = single_mode(g, mode, 1, 1.0).coeffs
    e = np.concatenate([m, m])
    return e / math.sqrt(VOLUME * np.sum((1.0 + ksquared(g)) * np.abs(e) ** 2))


def continuous_dependence(cfg: SimConfig, R: float | None, deltas, M: int, mode=(1, 0, 0)) -> DependenceTable:
    """Stopped twin differences for several perturbation sizes on shared noise."""
    deltas = [float(d) for d in deltas]
    if any(d == 0 for d in deltas):
        raise ValueError("delta = 0 gives a degenerate ratio")
    if any(d < 0 for d in deltas) or any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("deltas must be positive and strictly decreasing")
    g = cfg.grid
    y0 = cfg.ic.build(g).coeffs * cube_mask(g, cfg.level)
    R = 10.0 * math.sqrt(sobolev_norm_sq(StatePair(y0, g), 1)) if R is None else float(R)
    e = perturbation_direction(g, mode)
    D = len(deltas)
    lanes, lane_stream, groups, pairs = [], [], [], []
    for i in range(M):
        for j, d in enumerate(deltas):
            base = len(lanes)
            lanes += [y0, y0 + d * e]
            lane_stream += [i, i]
            groups += [i * D + j] * 2
            pairs.append((base, base + 1))
    src = StreamIncrements([RngStream(cfg.seed, cfg.stream_id + i) for i in range(M)], np.array(lane_stream))
    res = run_ensemble(np.stack(lanes), cfg, src, record_every=cfg.n_steps, record_full=False,
                       stop_radius=R, groups=np.array(groups), pairs=pairs)
    final_h1 = res.pair_diffs["h1"][-1].reshape(M, D)
    ratios, errs, stopped = [], [], []
    for j, d in enumerate(deltas):
        z = final_h1[:, j] / d**2  # ||e||_{H^1} = 1
        ratios.append(float(np.mean(z)))
        errs.append(float(np.std(z, ddof=1) / math.sqrt(M)) if M > 1 else 0.0)
        st = [res.exit_status[2 * (i * D + j)] != "completed" for i in range(M)]
        stopped.append(float(np.mean(st)))
    return DependenceTable(deltas, ratios, errs, stopped, R)


# --------------------------------------------------------------------------
# time averages

OBSERVABLES = {
    "h1_sq": "h1_norm_sq",
    "h2_sq": "h2_norm_sq",
    "E_kin": "E_kin",
    "E_mag": "E_mag",
    "l4_fourth": "l4_fourth",
    "cross_helicity": "cross_helicity",
}


@dataclass
class ErgodicReport:
    observable: str
    times: np.ndarray
    running_average: np.ndarray
    tail_fluctuation: float
    doubling_ratio: float  # max over T in the final half of avg(T) / avg(T/2)
    histogram: np.ndarray
    bin_edges: np.ndarray


def running_time_average(traj: TrajectoryOutput, observable: str, bins: int = 64) -> ErgodicReport:
    if observable not in OBSERVABLES:
        raise ValueError(f"unknown observable {observable!r}; choose from {sorted(OBSERVABLES)}")
    if len(traj.diagnostics) < 2:
        raise ValueError("trajectory has fewer than two records")
    t = np.array([r.t for r in traj.diagnostics])
    x = np.array([getattr(r, OBSERVABLES[observable]) for r in traj.diagnostics])
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (x[1:] + x[:-1]) * np.diff(t))])
    avg = np.empty_like(x)
    avg[0] = x[0]
    avg[1:] = cum[1:] / (t[1:] - t[0])
    T_end = t[-1]
    tail = t >= t[0] + 0.5 * (T_end - t[0])
    ref = avg[-1]
    scale = abs(ref) if ref != 0 else 1.0
    fluct = float(np.max(np.abs(avg[tail] - ref)) / scale)
    half_avg = np.interp(t[0] + 0.5 * (t[tail] - t[0]), t, avg)
    with np.errstate(divide="ignore", invalid="ignore"):
        dbl = np.where(half_avg != 0, avg[tail] / half_avg, np.where(avg[tail] == 0, 1.0, np.inf))
    hist, edges = np.histogram(x, bins=bins)
    return ErgodicReport(observable, t, avg, fluct, float(np.max(dbl)), hist, edges)


# --------------------------------------------------------------------------
# semigroup and Feller modulus

@dataclass(frozen=True)
class Observable:
    """Bounded Lipschitz functional phi on states; bound = sup|phi|."""

    name: str
    func: Callable  # (L, 6, n, n, n) coeffs -> (L,)
    bound: float
    lipschitz: float


def make_observable(name: str, g: GridSpec, scale: float = 1.0) -> Observable:
    """Dictionary of bounded-Lipschitz observables.

    ``one``: phi = 1.  ``tanh_h1``: tanh(||y||_{H^1}/s).  ``tanh_h0sq``:
    tanh(||y||^2_{H^0}).  ``sin_proj``: sin(<y, e>/s) for a fixed unit mode e.
    ``inv_energy``: 1/(1 + ||y||^2_{H^0}/s^2).  Anything unbounded (h1_sq,
    h2_sq, energy) is rejected.
    """
    w1 = 1.0 + ksquared(g)

    def h0sq(c):
        return VOLUME * np.sum(np.abs(c) ** 2, axis=(-4,) + AXES)

    if name == "one":
        return Observable(name, lambda c: np.ones(c.shape[0]), 1.0, 0.0)
    if name == "tanh_h1":
        return Observable(name, lambda c: np.tanh(np.sqrt(VOLUME * np.sum(w1 * np.abs(c) ** 2, axis=(-4,) + AXES)) / scale), 1.0, 1.0 / scale)
    if name == "tanh_h0sq":
        # locally Lipschitz; constant reported on the unit H^0 ball scaled by 2
        return Observable(name, lambda c: np.tanh(h0sq(c)), 1.0, 2.0)
    if name == "sin_proj":
        e = perturbation_direction(g, (0, 1, 0))

        def phi(c):
            return np.sin(VOLUME * np.sum(np.real(c * np.conj(e)), axis=(-4,) + AXES) / scale)

        return Observable(name, phi, 1.0, 1.0 / scale)
    if name == "inv_energy":
        return Observable(name, lambda c: 1.0 / (1.0 + h0sq(c) / scale**2), 1.0, 1.0 / scale)
    if name in ("h1_sq", "h2_sq", "energy", "E_kin", "E_mag", "l4_fourth"):
        raise ValueError(f"observable {name!r} is unbounded; T_t phi needs bounded phi")
    raise ValueError(f"unknown observable {name!r}")


@dataclass
class SemigroupRow:
    index: int
    mean: float
    stderr: float


def _check_bounded(phi: Observable):
    if not np.isfinite(phi.bound) or not np.isfinite(phi.lipschitz):
        raise ValueError(f"observable {phi.name} is not bounded-Lipschitz")


def _coupled_finals(cfg: SimConfig, y0_list, t: float, M: int) -> np.ndarray:
    """Final states (len(y0_list), M, 6, ...) with path i sharing noise across ICs."""
    steps = int(round(t / cfg.dt))
    if steps < 1 or abs(steps * cfg.dt - t) > 1e-9 * max(t, 1.0):
        raise ValueError("t must be a positive multiple of dt")
    g = cfg.grid
    P = len(y0_list)
    lanes = np.stack([np.asarray(y, dtype=complex) for y in y0_list for _ in range(M)])
    lane_stream = np.tile(np.arange(M), P)
    src = StreamIncrements([RngStream(cfg.seed, cfg.stream_id + i) for i in range(M)], lane_stream)
    res = run_ensemble(lanes, cfg, src, n_steps=steps, record_every=steps, record_full=False)
    return res.final.reshape((P, M, 6) + g.shape)


def estimate_semigroup(cfg: SimConfig, phi: Observable, y0_list, t: float, M: int) -> list:
    """Monte Carlo T_t phi(y0) for each initial state, shared noise across states."""
    _check_bounded(phi)
    if M < 16:
        raise ValueError("M must be at least 16")
    y0_list = [y.coeffs if isinstance(y, StatePair) else y for y in y0_list]
    finals = _coupled_finals(cfg, y0_list, t, M)
    rows = []
    for i, f in enumerate(finals):
        vals = phi.func(f)
        rows.append(SemigroupRow(i, float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(M))))
    return rows


@dataclass
class FellerTable:
    deltas: list
    names: list
    diffs: np.ndarray  # (n_phi, n_delta) |E[phi(y^delta) - phi(y)]|
    stderr: np.ndarray

    def monotone(self) -> list:
        """Per observable: each smaller delta gives a difference no larger than the previous plus stderr."""
        out = []
        for d, s in zip(self.diffs, self.stderr):
            ok = all(d[j + 1] <= d[j] + s[j] + s[j + 1] for j in range(len(d) - 1))
            out.append(bool(ok))
        return out


def feller_modulus(cfg: SimConfig, phis: list, deltas, t: float, M: int, mode=(1, 0, 0)) -> FellerTable:
    """Coupled differences T_t phi(y0 + delta e) - T_t phi(y0) on shared noise."""
    for phi in phis:
        _check_bounded(phi)
    deltas = [float(d) for d in deltas]
    if any(d <= 0 for d in deltas):
        raise ValueError("deltas must be positive")
    g = cfg.grid
    y0 = cfg.ic.build(g).coeffs * cube_mask(g, cfg.level)
    e = perturbation_direction(g, mode)
    finals = _coupled_finals(cfg, [y0] + [y0 + d * e for d in deltas], t, M)
    diffs = np.zeros((len(phis), len(deltas)))
    errs = np.zeros_like(diffs)
    for a, phi in enumerate(phis):
        base = phi.func(finals[0])
        for j in range(len(deltas)):
            dv = phi.func(finals[j + 1]) - base
            diffs[a, j] = abs(np.mean(dv))
            errs[a, j] = np.std(dv, ddof=1) / math.sqrt(M) if M > 1 else 0.0
    return FellerTable(deltas, [p.name for p in phis], diffs, errs)

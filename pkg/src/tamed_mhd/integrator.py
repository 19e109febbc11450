"""Semi-implicit Euler-Maruyama integration of the Galerkin system.

One step, per Fourier mode:

    y+ = (y + dt * Pi_n P(-bilinear - g_N(|y|^2) y + f) + Pi_n P(sum_k B_k(y) dW_k)) / (1 + dt |k|^2)

The Laplacian is implicit, everything else explicit (Ito).  Trajectories
are advanced in batches ("lanes") so that the FFTs are vectorised across
Monte Carlo paths; each lane draws from its own counter-based stream.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import DiagnosticsRecord, diagnostics_arrays, records_from_arrays
from .noise import (
    RNG_ALGORITHM,
    ArrayIncrements,
    CoefficientFamily,
    NoiseIncrements,
    RngStream,
    StreamIncrements,
    grid_points,
    make_family,
)
from .operators import (
    TamingSpec,
    bilinear_block_phys,
    state_noise_coeffs,
    taming_coeffs,
    transport_coeffs,
)
from .spectral import (
    AXES,
    VOLUME,
    GridSpec,
    SpectralError,
    StatePair,
    cube_mask,
    dealias_mask,
    ksquared,
    leray_coeffs,
    random_solenoidal,
    single_mode,
    to_physical,
    to_spectral,
)

EXIT_COMPLETED = "completed"
EXIT_BLOWUP = "blowup_guard"
EXIT_ERROR = "error"
EXIT_STOPPED = "stopped"


@dataclass(frozen=True)
class InitialCondition:
    """Initial state recipe.

    kind: ``zero``, ``single_mode`` (amplitude * p * cos(k.x) placed in
    ``field`` = v, B or both) or ``random_decay`` (random solenoidal field
    with spectrum ~ (1+|k|^2)^(-slope/2), rms amplitude, seeded).
    """

    kind: str = "random_decay"
    k: tuple = (1, 1, 0)
    polarization: int = 1
    amplitude: float = 1.0
    field: str = "both"
    slope: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("zero", "single_mode", "random_decay"):
            raise ValueError(f"unknown initial condition kind {self.kind!r}")
        if self.field not in ("v", "B", "both"):
            raise ValueError(f"field must be v, B or both, got {self.field!r}")
        if self.polarization not in (1, 2):
            raise ValueError("polarization must be 1 or 2")
        object.__setattr__(self, "k", tuple(int(c) for c in self.k))

    def build(self, grid: GridSpec) -> StatePair:
        if self.kind == "zero":
            return StatePair.zeros(grid)
        if self.kind == "single_mode":
            mode = single_mode(grid, self.k, self.polarization, self.amplitude).coeffs
            c = np.zeros((6,) + grid.shape, dtype=complex)
            if self.field in ("v", "both"):
                c[:3] = mode
            if self.field in ("B", "both"):
                c[3:] = mode
            return StatePair(c, grid)
        rng = np.random.Generator(np.random.Philox(key=np.array([self.seed, 0], dtype=np.uint64)))
        return StatePair(random_solenoidal(grid, rng, self.amplitude, self.slope), grid)


@dataclass(frozen=True)
class SimConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    taming: TamingSpec = field(default_factory=TamingSpec)
    family: CoefficientFamily = field(default_factory=make_family)
    dt: float = 1e-3
    T: float = 1.0
    seed: int = 0
    stream_id: int = 0
    ic: InitialCondition = field(default_factory=InitialCondition)
    galerkin_n: int | None = None
    blowup_guard: float = 1e6
    record_every: int = 1
    snapshot_every: int = 0
    echo: dict | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.T >= self.dt * (1 - 1e-12):
            raise ValueError(f"horizon T={self.T} shorter than dt={self.dt}")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-6 * max(1.0, steps):
            raise ValueError(f"T={self.T} is not an integer multiple of dt={self.dt}")
        if self.galerkin_n is not None and not 0 <= self.galerkin_n <= self.grid.cutoff:
            raise SpectralError(f"Galerkin level {self.galerkin_n} exceeds dealias cutoff {self.grid.cutoff}")
        if self.record_every < 1 or self.snapshot_every < 0:
            raise ValueError("record_every must be >= 1 and snapshot_every >= 0")
        if not self.blowup_guard > 0:
            raise ValueError("blowup_guard must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def level(self) -> int:
        return self.grid.cutoff if self.galerkin_n is None else self.galerkin_n

    @property
    def stability_proxy(self) -> float:
        """dt * max retained |k|^2."""
        return self.dt * 3 * self.level**2

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def stream(self) -> RngStream:
        return RngStream(self.seed, self.stream_id)


@dataclass
class TrajectoryOutput:
    snapshots: list  # (t, StatePair)
    diagnostics: list  # DiagnosticsRecord
    exit_status: str
    metadata: dict = field(default_factory=dict)

    @property
    def final(self) -> StatePair:
        return self.snapshots[-1][1]


# --------------------------------------------------------------------------
# stepping engine

class Stepper:
    """Precomputed pieces of the update for one config and step size."""

    def __init__(self, cfg: SimConfig, dt: float | None = None):
        self.cfg = cfg
        self.grid = cfg.grid
        self.dt = cfg.dt if dt is None else dt
        self.family = cfg.family
        self.spec = cfg.taming
        self.mask = cube_mask(self.grid, cfg.level)
        self.inv_denom = 1.0 / (1.0 + self.dt * ksquared(self.grid))
        fam = self.family
        self.x = grid_points(self.grid)
        self.forcing = None
        if fam.forcing_state_free:
            f = np.asarray(fam.f(self.x, np.zeros((6, 1, 1, 1))), dtype=float)
            f = np.broadcast_to(f, (6,) + self.grid.shape)
            self.forcing = to_spectral(np.ascontiguousarray(f), self.grid) * dealias_mask(self.grid)
        s, sb = fam.sigma(np.zeros((3, 1)))
        self.has_transport = not fam.sigma_constant or bool(np.any(np.asarray(s)) or np.any(np.asarray(sb)))
        self.has_state_noise = fam.h_weights is None or bool(np.any(fam.h_weights))

    def drift(self, c: np.ndarray, phys: np.ndarray) -> np.ndarray:
        """Unprojected explicit drift -bilinear - taming + f, batched (L, 6, ...)."""
        out = -bilinear_block_phys(phys, self.grid)
        tame = taming_coeffs(c, self.grid, self.spec)
        if tame is not None:
            out -= tame
        if self.forcing is not None:
            out += self.forcing
        else:
            fy = self.family.f(self.x, np.moveaxis(phys, 1, 0))
            out += to_spectral(np.moveaxis(fy, 0, 1), self.grid) * dealias_mask(self.grid)
        return out

    def noise(self, c, phys, dW, dWb) -> np.ndarray | None:
        out = None
        if self.has_transport:
            out = transport_coeffs(c, self.grid, self.family, dW, dWb)
        if self.has_state_noise:
            h = state_noise_coeffs(phys, self.grid, self.family, dW, dWb)
            out = h if out is None else out + h
        return out

    def step(self, c: np.ndarray, dW: np.ndarray, dWb: np.ndarray) -> np.ndarray:
        """Advance a batch of coefficient arrays (L, 6, n, n, n) by one step."""
        phys = to_physical(c, self.grid)
        incr = self.dt * self.drift(c, phys)
        nz = self.noise(c, phys, dW, dWb)
        if nz is not None:
            incr += nz
        new = c + leray_coeffs(incr, self.grid)
        new *= self.mask
        new *= self.inv_denom
        return new


def step_semi_implicit(y: StatePair, dt: float, incr: NoiseIncrements, cfg: SimConfig) -> StatePair:
    """One semi-implicit Euler-Maruyama step of a single state."""
    if y.grid != cfg.grid:
        raise SpectralError(f"state grid {y.grid} does not match config grid {cfg.grid}")
    outside = np.abs(y.coeffs[..., ~cube_mask(cfg.grid, cfg.level)])
    if outside.size and np.max(outside) > 0:
        raise SpectralError("state carries modes beyond the Galerkin level")
    stepper = Stepper(cfg, dt)
    new = stepper.step(y.coeffs[None], np.asarray(incr.dW)[None], np.asarray(incr.dW_bar)[None])[0]
    if not np.all(np.isfinite(new)):
        raise FloatingPointError("non-finite state after step")
    return StatePair(new, y.grid)


@dataclass
class EnsembleResult:
    final: np.ndarray  # (L, 6, n, n, n), frozen at the exit step for stopped lanes
    exit_status: list
    exit_step: np.ndarray
    record_times: np.ndarray
    records: dict  # field -> (R, L)
    sup_h1_sq: np.ndarray
    h2_integral_step: np.ndarray  # sum of dt * ||y^{n+1}||^2_{H^2}
    integrals: dict  # trapezoidal integrals of record fields, per lane
    pair_diffs: dict  # "h0"/"h1" -> (R, P) squared norms of lane differences
    snapshots: list  # (step, t, coeffs)


def _h_weights(grid: GridSpec):
    k2 = ksquared(grid)
    return 1.0 + k2, (1.0 + k2) ** 2


def run_ensemble(
    y0: np.ndarray,
    cfg: SimConfig,
    source,
    n_steps: int | None = None,
    dt: float | None = None,
    record_every: int | None = None,
    record_full: bool = True,
    stop_radius: float | None = None,
    groups: np.ndarray | None = None,
    pairs: list | None = None,
    snapshot_every: int = 0,
) -> EnsembleResult:
    """Advance L lanes together.

    ``source.draw(dt, K)`` supplies (L, K) increment arrays each step.
    A lane is frozen when its H^1 norm exceeds the blow-up guard, when its
    state becomes non-finite, or (with ``stop_radius``) when any lane of its
    group exceeds the radius; frozen lanes keep the state of that step.
    """
    dt = cfg.dt if dt is None else dt
    n_steps = cfg.n_steps if n_steps is None else n_steps
    record_every = cfg.record_every if record_every is None else record_every
    grid = cfg.grid
    c = np.array(y0, dtype=complex)
    if c.ndim == 4:
        c = c[None]
    L = c.shape[0]
    groups = np.arange(L) if groups is None else np.asarray(groups)
    stepper = Stepper(cfg, dt)
    K = cfg.family.K_noise
    w1, w2 = _h_weights(grid)
    pairs = list(pairs or [])

    status = [EXIT_COMPLETED] * L
    exit_step = np.full(L, n_steps)
    active = np.ones(L, dtype=bool)
    times, recs = [], []
    diffs = {"h0": [], "h1": []}
    snaps = []
    h1_now = VOLUME * np.sum(w1 * np.abs(c) ** 2, axis=(-4,) + AXES)
    sup_h1 = h1_now.copy()
    h2_step = np.zeros(L)

    def record(step):
        times.append(step * dt)
        if record_full:
            recs.append(diagnostics_arrays(c, grid, cfg.taming.N))
        else:
            recs.append({
                "h1_norm_sq": VOLUME * np.sum(w1 * np.abs(c) ** 2, axis=(-4,) + AXES),
                "h2_norm_sq": VOLUME * np.sum(w2 * np.abs(c) ** 2, axis=(-4,) + AXES),
            })
        for key, w in (("h0", 1.0), ("h1", w1)):
            diffs[key].append(np.array([VOLUME * np.sum(w * np.abs(c[a] - c[b]) ** 2) for a, b in pairs]))

    def check_stop(step):
        nonlocal active
        norms = np.sqrt(h1_now)
        bad = active & ~np.isfinite(norms)
        for i in np.flatnonzero(bad):
            status[i] = EXIT_ERROR
        blow = active & np.isfinite(norms) & (norms > cfg.blowup_guard)
        for i in np.flatnonzero(blow):
            status[i] = EXIT_BLOWUP
        halted = bad | blow
        if stop_radius is not None:
            over = active & (norms > stop_radius)
            hit = np.isin(groups, groups[over])
            for i in np.flatnonzero(active & hit & ~halted):
                status[i] = EXIT_STOPPED
            halted = halted | (active & hit)
        exit_step[halted] = step
        active = active & ~halted

    record(0)
    if snapshot_every:
        snaps.append((0, 0.0, c.copy()))
    check_stop(0)
    for step in range(1, n_steps + 1):
        dW, dWb = source.draw(dt, K)
        idx = np.flatnonzero(active)
        if idx.size:
            with np.errstate(all="ignore"):
                if idx.size == L:
                    c = stepper.step(c, dW, dWb)
                else:
                    c[idx] = stepper.step(c[idx], dW[idx], dWb[idx])
            h1_now = VOLUME * np.sum(w1 * np.abs(c) ** 2, axis=(-4,) + AXES)
            h2_now = VOLUME * np.sum(w2 * np.abs(c) ** 2, axis=(-4,) + AXES)
            with np.errstate(invalid="ignore"):
                sup_h1 = np.where(active, np.fmax(sup_h1, h1_now), sup_h1)
            h2_step = np.where(active, h2_step + dt * h2_now, h2_step)
            check_stop(step)
        if step % record_every == 0 or step == n_steps:
            with np.errstate(all="ignore"):
                record(step)
        if snapshot_every and (step % snapshot_every == 0 or step == n_steps):
            snaps.append((step, step * dt, c.copy()))

    times = np.array(times)
    stacked = {k: np.array([r[k] for r in recs]) for k in recs[0]}
    integrals = {}
    for k, v in stacked.items():
        integrals[k] = np.trapezoid(v, times, axis=0) if len(times) > 1 else np.zeros(L)
    return EnsembleResult(
        final=c, exit_status=status, exit_step=exit_step, record_times=times, records=stacked,
        sup_h1_sq=sup_h1, h2_integral_step=h2_step, integrals=integrals,
        pair_diffs={k: np.array(v) for k, v in diffs.items()}, snapshots=snaps,
    )


def run_metadata(cfg: SimConfig) -> dict:
    fam = cfg.family
    tail = None
    if fam.name in ("default", "custom") and fam.sigma_constant:
        # l2 mass of sigma and sigmabar beyond the truncation
        tail = 2.0 * fam.params.get("amplitude", 0.0) * 2.0 ** (-fam.K_noise)
    return {
        "n_steps": cfg.n_steps,
        "dt": cfg.dt,
        "stability_proxy": cfg.stability_proxy,
        "galerkin_level": cfg.level,
        "sigma_tail_mass": tail,
        "rng": RNG_ALGORITHM,
        "seed": cfg.seed,
        "stream_id": cfg.stream_id,
    }


# --------------------------------------------------------------------------
# drivers

def simulate(cfg: SimConfig, y0: StatePair | None = None, stream: RngStream | None = None) -> TrajectoryOutput:
    """Single trajectory from the configured IC to T."""
    y0 = cfg.ic.build(cfg.grid) if y0 is None else y0
    y0c = y0.coeffs * cube_mask(cfg.grid, cfg.level)
    src = StreamIncrements([cfg.stream() if stream is None else stream])
    every = cfg.snapshot_every or cfg.n_steps
    res = run_ensemble(y0c, cfg, src, snapshot_every=every)
    step = int(res.exit_step[0])
    snaps = [(t, StatePair(cc[0], cfg.grid)) for s, t, cc in res.snapshots if s <= step]
    if res.exit_status[0] != EXIT_COMPLETED and snaps[-1][0] < step * cfg.dt:
        snaps.append((step * cfg.dt, StatePair(res.final[0], cfg.grid)))
    keep = res.record_times <= step * cfg.dt + 0.5 * cfg.dt
    records = records_from_arrays(res.record_times[keep], {k: v[keep] for k, v in res.records.items()}, lane=0)
    meta = run_metadata(cfg)
    meta.update({
        "sup_h1_sq": float(res.sup_h1_sq[0]),
        "h2_integral_step": float(res.h2_integral_step[0]),
        "h2_integral_trapezoid": float(res.integrals["h2_norm_sq"][0]),
        "exit_step": step,
    })
    return TrajectoryOutput(snapshots=snaps, diagnostics=records, exit_status=res.exit_status[0], metadata=meta)


@dataclass
class TwinResult:
    first: TrajectoryOutput
    second: TrajectoryOutput
    times: np.ndarray
    diff_h0_sq: np.ndarray
    diff_h1_sq: np.ndarray


def twin_simulate(cfg: SimConfig, ic2: InitialCondition | StatePair) -> TwinResult:
    """Two trajectories driven by the same increments from the same stream.

    The runs are sequential and each uses a fresh copy of the stream, so
    both see bitwise-identical increments.
    """
    y1 = cfg.ic.build(cfg.grid)
    y2 = ic2 if isinstance(ic2, StatePair) else ic2.build(cfg.grid)
    every = cfg.record_every
    out = []
    for y0 in (y1, y2):
        snap_cfg = cfg.replace(snapshot_every=every)
        out.append(simulate(snap_cfg, y0))
    a, b = out
    m = min(len(a.snapshots), len(b.snapshots))
    times = np.array([a.snapshots[i][0] for i in range(m)])
    d0 = np.array([float(np.real(VOLUME * np.sum(np.abs(a.snapshots[i][1].coeffs - b.snapshots[i][1].coeffs) ** 2))) for i in range(m)])
    w1 = 1.0 + ksquared(cfg.grid)
    d1 = np.array([float(VOLUME * np.sum(w1 * np.abs(a.snapshots[i][1].coeffs - b.snapshots[i][1].coeffs) ** 2)) for i in range(m)])
    return TwinResult(a, b, times, d0, d1)


@dataclass
class StrongOrderResult:
    order: float
    errors: list
    dt_levels: list
    dt_ref: float


def draw_increments(cfg: SimConfig, M: int, n_steps: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Increments of shape (steps, M, K) from streams (seed, stream_id + i)."""
    streams = [RngStream(cfg.seed, cfg.stream_id + i) for i in range(M)]
    src = StreamIncrements(streams)
    K = cfg.family.K_noise
    dW = np.empty((n_steps, M, K))
    dWb = np.empty((n_steps, M, K))
    for s in range(n_steps):
        dW[s], dWb[s] = src.draw(dt, K)
    return dW, dWb


def estimate_strong_order(cfg: SimConfig, dt_levels, M: int, dt_ref: float | None = None) -> StrongOrderResult:
    """Strong order from terminal H^0 errors against a fine reference path.

    Coarse increments are sums of consecutive reference increments, so all
    levels see the same Brownian path.  Returns order NaN when every error
    vanishes.
    """
    dt_levels = [float(d) for d in dt_levels]
    if len(dt_levels) < 2:
        raise ValueError("need at least two dt levels")
    if any(b >= a for a, b in zip(dt_levels, dt_levels[1:])):
        raise ValueError("dt_levels must be strictly decreasing")
    dt_ref = cfg.dt if dt_ref is None else float(dt_ref)
    ratios = [d / dt_ref for d in dt_levels]
    if any(abs(r - round(r)) > 1e-9 * r or round(r) < 2 for r in ratios):
        raise ValueError("each dt level must be an integer multiple (>= 2) of the reference dt")
    n_ref = int(round(cfg.T / dt_ref))
    if abs(n_ref * dt_ref - cfg.T) > 1e-9 * cfg.T:
        raise ValueError("T must be a multiple of the reference dt")
    for d in dt_levels:
        s = cfg.T / d
        if abs(s - round(s)) > 1e-9 * s:
            raise ValueError(f"T={cfg.T} is not a multiple of dt={d}")
    dW, dWb = draw_increments(cfg, M, n_ref, dt_ref)
    y0 = np.broadcast_to(cfg.ic.build(cfg.grid).coeffs * cube_mask(cfg.grid, cfg.level), (M, 6) + cfg.grid.shape)
    ref = run_ensemble(y0, cfg, ArrayIncrements(dW, dWb), n_steps=n_ref, dt=dt_ref,
                       record_every=n_ref, record_full=False).final
    errors = []
    for d, r in zip(dt_levels, ratios):
        r = int(round(r))
        cw = dW.reshape(n_ref // r, r, M, -1).sum(axis=1)
        cwb = dWb.reshape(n_ref // r, r, M, -1).sum(axis=1)
        fin = run_ensemble(y0, cfg, ArrayIncrements(cw, cwb), n_steps=n_ref // r, dt=d,
                           record_every=n_ref // r, record_full=False).final
        err = VOLUME * np.sum(np.abs(fin - ref) ** 2, axis=(1, 2, 3, 4))
        errors.append(float(np.sqrt(np.mean(err))))
    errs = np.array(errors)
    if np.all(errs == 0):
        order = float("nan")
    elif np.any(errs <= 0) or not np.all(np.isfinite(errs)):
        order = float("nan")
    else:
        order = float(np.polyfit(np.log(dt_levels), np.log(errs), 1)[0])
    return StrongOrderResult(order=order, errors=errors, dt_levels=dt_levels, dt_ref=dt_ref)

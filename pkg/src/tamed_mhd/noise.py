"""Noise coefficient families (Sigma, H, f) and reproducible Brownian increments.

Random numbers come from numpy's counter-based Philox-4x64-10 generator.
A stream is keyed by ``(master_seed, stream_id)``; the 256-bit counter is
``(0, step, substream, 0)`` so every step of every trajectory owns a disjoint
block of the Philox sequence.  Substream 0 feeds W^k, substream 1 feeds the
independent sequence Wbar^k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .spectral import GridSpec, VOLUME

SIGMA_MASS_LIMIT = 1.0 / 36.0
RNG_ALGORITHM = "numpy.random.Philox-4x64-10; key=(master_seed, stream_id); counter=(0, step, substream, 0)"

_U64 = (1 << 64) - 1


class AssumptionError(ValueError):
    """Coefficient data violates the structural assumptions on (Sigma, H, f)."""


# --------------------------------------------------------------------------
# RNG

@dataclass
class RngStream:
    """Counter-based stream; single owner, advance with :meth:`advance`."""

    master_seed: int
    stream_id: int = 0
    counter: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id", "counter"):
            val = int(getattr(self, name))
            if not 0 <= val <= _U64:
                raise ValueError(f"{name} must fit in 64 unsigned bits, got {val}")
            setattr(self, name, val)

    def generator(self, substream: int = 0) -> np.random.Generator:
        bitgen = np.random.Philox(
            key=np.array([self.master_seed, self.stream_id], dtype=np.uint64),
            counter=np.array([0, self.counter, substream, 0], dtype=np.uint64),
        )
        return np.random.Generator(bitgen)

    def advance(self, steps: int = 1):
        self.counter = (self.counter + steps) & _U64

    def spawn(self, stream_id: int) -> "RngStream":
        return RngStream(self.master_seed, stream_id, 0)


@dataclass(frozen=True)
class NoiseIncrements:
    dW: np.ndarray
    dW_bar: np.ndarray
    dt: float


def sample_increments(rng: RngStream, dt: float, K_noise: int) -> NoiseIncrements:
    """Draw 2*K_noise independent N(0, dt) variates and advance the counter."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    scale = math.sqrt(dt)
    dW = rng.generator(0).standard_normal(K_noise) * scale
    dW_bar = rng.generator(1).standard_normal(K_noise) * scale
    rng.advance()
    return NoiseIncrements(dW, dW_bar, dt)


class StreamIncrements:
    """Per-lane increments for a batch of trajectories, one stream per lane.

    Lanes that share a stream index receive identical increments, which is
    how twin runs share a Brownian path.
    """

    def __init__(self, streams: list[RngStream], lane_stream: np.ndarray | None = None):
        self.streams = streams
        self.lane_stream = (
            np.arange(len(streams)) if lane_stream is None else np.asarray(lane_stream)
        )

    def draw(self, dt: float, K_noise: int) -> tuple[np.ndarray, np.ndarray]:
        incs = [sample_increments(s, dt, K_noise) for s in self.streams]
        dW = np.stack([i.dW for i in incs])[self.lane_stream]
        dWb = np.stack([i.dW_bar for i in incs])[self.lane_stream]
        return dW, dWb


class ArrayIncrements:
    """Prescribed increments, arrays of shape (steps, lanes, K)."""

    def __init__(self, dW: np.ndarray, dW_bar: np.ndarray):
        self.dW = dW
        self.dW_bar = dW_bar
        self.step = 0

    def draw(self, dt: float, K_noise: int) -> tuple[np.ndarray, np.ndarray]:
        i = self.step
        self.step += 1
        return self.dW[i], self.dW_bar[i]


# --------------------------------------------------------------------------
# coefficient families

def tau(u):
    """Bounded, smooth odd profile u / sqrt(1 + u^2), applied componentwise."""
    return u / np.sqrt(1.0 + u * u)


@dataclass(frozen=True, eq=False)
class CoefficientFamily:
    """Evaluable (Sigma, H, f) with the constants reported for the checks.

    Callables use leading component axes and broadcast over the rest:
    ``sigma(x)`` maps points of shape (3, ...) to two arrays (K, 3, ...);
    ``h(x, y)`` with y of shape (6, ...) returns two arrays (K, 3, ...);
    ``f(x, y)`` returns shape (6, ...).

    ``F_H`` and ``F_f`` are the (constant) densities of the integrable
    majorants, so ``||F_H||_{L^1} = F_H * (2 pi)^3``.
    """

    name: str
    K_noise: int
    sigma: Callable
    h: Callable
    f: Callable
    C_H: float = 0.0
    C_f: float = 0.0
    F_H: float = 0.0
    F_f: float = 0.0
    sigma_grad_sup: float = 0.0
    sigma_constant: bool = True
    forcing_state_free: bool = True
    # h_k = h_weights[k] * h_profile(y_v), hbar_k = h_weights[k] * h_profile(y_B)
    h_weights: np.ndarray | None = None
    h_profile: Callable | None = None
    params: dict = field(default_factory=dict)

    @property
    def F_H_L1(self) -> float:
        return self.F_H * VOLUME

    @property
    def F_f_L1(self) -> float:
        return self.F_f * VOLUME

    @property
    def is_silent(self) -> bool:
        return self.name == "silent"

    def sigma_mass(self, x: np.ndarray) -> np.ndarray:
        """sum_k |sigma_k(x)|^2 + |sigmabar_k(x)|^2 at each point."""
        s, sb = self.sigma(x)
        return np.sum(s**2, axis=(0, 1)) + np.sum(sb**2, axis=(0, 1))

    # bound coefficients for the Hilbert-Schmidt estimates
    @property
    def hs0_coeff(self) -> float:
        return 2.0 * self.C_H

    @property
    def hs1_coeff(self) -> float:
        grad = 2 * SIGMA_MASS_LIMIT + 6 * self.sigma_grad_sup + 36 * self.C_H**2
        return max(0.5, grad, 20.0 * self.C_H)

    hs1_F_coeff = 20.0

    def h_contract(self, x, y, dW, dW_bar):
        """sum_k H_k(x, y) dW_k for a batch.

        ``y`` has shape (L, 6, ...), ``dW`` and ``dW_bar`` shape (L, K);
        the result has shape (L, 6, ...).
        """
        if self.h_weights is not None:
            wv = dW @ self.h_weights
            wb = dW_bar @ self.h_weights
            extra = (1,) * (y.ndim - 2)
            out = np.empty(y.shape)
            out[:, :3] = wv.reshape((-1, 1) + extra) * self.h_profile(y[:, :3])
            out[:, 3:] = wb.reshape((-1, 1) + extra) * self.h_profile(y[:, 3:])
            return out
        ym = np.moveaxis(y, 1, 0)
        h, hb = self.h(x, ym)
        out = np.empty(y.shape)
        out[:, :3] = np.einsum("kcl...,lk->lc...", h, dW)
        out[:, 3:] = np.einsum("kcl...,lk->lc...", hb, dW_bar)
        return out

    def describe(self) -> dict:
        return {"name": self.name, "K_noise": self.K_noise, **self.params}


def _constant_sigma(vecs: np.ndarray, vecs_bar: np.ndarray):
    def sigma(x):
        extra = (1,) * (np.ndim(x) - 1)
        return vecs.reshape(vecs.shape + extra), vecs_bar.reshape(vecs_bar.shape + extra)

    return sigma


def _default_forcing(c: float):
    def f(x, y):
        x = np.asarray(x)
        shape = np.broadcast_shapes(x.shape[1:], np.shape(y)[1:])
        out = np.zeros((6,) + shape)
        out[0] = c * np.sin(x[1])
        out[1] = c * np.sin(x[2])
        out[2] = c * np.sin(x[0])
        return out

    return f


def _zero_h(K):
    def h(x, y):
        shape = np.broadcast_shapes(np.shape(x)[1:], np.shape(y)[1:])
        z = np.zeros((K, 3) + shape)
        return z, z.copy()

    return h


def _weighted_h(weights: np.ndarray):
    def h(x, y):
        extra = (1,) * (np.ndim(y) - 1)
        w = weights.reshape((-1, 1) + extra)
        return w * tau(y[None, :3]), w * tau(y[None, 3:])

    return h


def default_sigma_vectors(K: int, amplitude: float) -> tuple[np.ndarray, np.ndarray]:
    """sigma_k = a 2^{-k/2} e_{k mod 3}, sigmabar_k = a 2^{-k/2} e_{(k+1) mod 3}.

    ``amplitude`` is the l^2-mass of one untruncated sequence, so a^2 = amplitude/2.
    """
    a = math.sqrt(amplitude / 2.0)
    decay = a * 2.0 ** (-np.arange(K) / 2.0)
    eye = np.eye(3)
    s = decay[:, None] * eye[np.arange(K) % 3]
    sb = decay[:, None] * eye[(np.arange(K) + 1) % 3]
    return s, sb


def default_sigma_mass(K: int, amplitude: float) -> float:
    """Closed form of sum_k |sigma_k|^2 + |sigmabar_k|^2 after truncation at K."""
    return 2.0 * amplitude * (1.0 - 2.0 ** (-K))


DEFAULT_PARAMS = {"K": 16, "amplitude": 1.0 / 72.0, "h_amplitude": 0.25, "forcing": 0.5}


def make_family(name: str = "default", params: dict | None = None, grid: GridSpec | None = None) -> CoefficientFamily:
    """Build a coefficient family.

    ``default``: x-independent transport noise with geometric decay, bounded
    Lipschitz state noise, and low-mode forcing.  ``silent``: all zero.
    ``custom``: like default, but any of ``sigma``, ``h``, ``f`` callables
    and the constants may be supplied; Sigma is checked against the 1/36
    mass bound on ``grid``.
    """
    params = dict(params or {})
    if name == "silent":
        K = int(params.pop("K", DEFAULT_PARAMS["K"]))
        if params:
            raise ValueError(f"unexpected parameters for silent family: {sorted(params)}")
        zeros = np.zeros((K, 3))
        return CoefficientFamily(
            name="silent", K_noise=K, sigma=_constant_sigma(zeros, zeros), h=_zero_h(K),
            f=lambda x, y: np.zeros((6,) + np.broadcast_shapes(np.shape(x)[1:], np.shape(y)[1:])),
            h_weights=np.zeros(K), h_profile=tau, params={"K": K},
        )
    if name not in ("default", "custom"):
        raise ValueError(f"unknown family {name!r}")

    known = set(DEFAULT_PARAMS)
    if name == "custom":
        known |= {"sigma", "h", "f", "sigma_mass", "C_H", "C_f", "F_H", "F_f", "sigma_grad_sup"}
    unknown = set(params) - known
    if unknown:
        raise ValueError(f"unknown family parameters: {sorted(unknown)}")
    p = {**DEFAULT_PARAMS, **params}
    K = int(p["K"])
    if K < 1:
        raise ValueError("K must be positive")
    amp = float(p["amplitude"])
    if "sigma_mass" in params:
        # total mass over both sequences, split evenly
        amp = float(params["sigma_mass"]) / 2.0
    b = float(p["h_amplitude"])
    c = float(p["forcing"])
    if amp < 0 or b < 0:
        raise ValueError("amplitudes must be nonnegative")
    if 2.0 * amp > SIGMA_MASS_LIMIT * (1 + 1e-12):
        raise AssumptionError(
            f"Sigma l2-mass {2 * amp:.6g} exceeds the bound 1/36 (per-sequence amplitude must be <= 1/72)"
        )

    s, sb = default_sigma_vectors(K, amp)
    weights = b * 2.0 ** (-np.arange(K) / 2.0)
    fam = dict(
        name=name, K_noise=K,
        sigma=_constant_sigma(s, sb), h=_weighted_h(weights), f=_default_forcing(c),
        C_H=math.sqrt(2.0) * b, C_f=0.0, F_H=0.0, F_f=3.0 * c * c,
        h_weights=weights, h_profile=tau,
        params={"K": K, "amplitude": amp, "h_amplitude": b, "forcing": c},
    )
    if name == "custom":
        if "sigma" in params:
            fam["sigma"] = params["sigma"]
            fam["sigma_constant"] = False
            fam["params"]["sigma"] = "callable"
        if "h" in params:
            fam["h"] = params["h"]
            fam["h_weights"] = None
            fam["h_profile"] = None
            fam["params"]["h"] = "callable"
        if "f" in params:
            fam["f"] = params["f"]
            fam["forcing_state_free"] = False
            fam["params"]["f"] = "callable"
        for key in ("C_H", "C_f", "F_H", "F_f", "sigma_grad_sup"):
            if key in params:
                fam[key] = float(params[key])
                fam["params"][key] = float(params[key])
    family = CoefficientFamily(**fam)
    if name == "custom" and "sigma" in params:
        g = grid if grid is not None else GridSpec(16)
        mass = np.max(family.sigma_mass(grid_points(g)))
        if mass > SIGMA_MASS_LIMIT * (1 + 1e-12):
            raise AssumptionError(f"Sigma l2-mass {mass:.6g} exceeds the bound 1/36")
    return family


def grid_points(grid: GridSpec, m: int | None = None) -> np.ndarray:
    """Physical coordinates of an m^3 grid, shape (3, m, m, m)."""
    m = grid.n if m is None else m
    x1 = 2.0 * np.pi * np.arange(m) / m
    return np.stack(np.meshgrid(x1, x1, x1, indexing="ij"))


@dataclass(frozen=True)
class FamilyValues:
    sigma_k: np.ndarray
    sigma_bar_k: np.ndarray
    h_k: np.ndarray
    h_bar_k: np.ndarray
    f: np.ndarray


def eval_family(fam: CoefficientFamily, k: int, x, y) -> FamilyValues:
    """Pointwise coefficient values at a single point x in R^3, y in R^6."""
    if not 0 <= k < fam.K_noise:
        raise IndexError(f"noise index {k} outside [0, {fam.K_noise})")
    x = np.asarray(x, dtype=float).reshape(3)
    y = np.asarray(y, dtype=float).reshape(6)
    s, sb = fam.sigma(x)
    h, hb = fam.h(x, y)
    return FamilyValues(
        sigma_k=np.asarray(s)[k].reshape(3), sigma_bar_k=np.asarray(sb)[k].reshape(3),
        h_k=np.asarray(h)[k].reshape(3), h_bar_k=np.asarray(hb)[k].reshape(3),
        f=np.asarray(fam.f(x, y)).reshape(6),
    )


# --------------------------------------------------------------------------
# assumption checks

@dataclass
class AssumptionReport:
    ratios: dict
    violations: list
    sigma_mass: float
    sigma_mass_closed_form: float | None

    @property
    def passed(self) -> bool:
        return not self.violations


def _ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(num <= 0, 0.0, num / den)
    r = np.where(np.isnan(r), np.inf, r)
    return float(np.max(r)) if r.size else 0.0


def _ell2(a):
    """l^2 norm over the leading (K, 3) axes."""
    return np.sqrt(np.sum(np.asarray(a) ** 2, axis=(0, 1)))


def validate_assumptions(fam: CoefficientFamily, g: GridSpec, n_samples: int, rng: RngStream, eps: float = 1e-5) -> AssumptionReport:
    """Sampled check of the mass, growth and Lipschitz conditions.

    Ratios are observed/allowed; a ratio above 1 (plus round-off slack) is
    a violation.  Derivatives are central finite differences with step eps.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    gen = rng.generator(0)
    rng.advance()
    pts = grid_points(g).reshape(3, -1)
    x = pts[:, gen.integers(0, pts.shape[1], n_samples)]
    scales = 10.0 ** gen.uniform(-2, 2, n_samples)
    y = gen.standard_normal((6, n_samples)) * scales
    y2 = y + gen.standard_normal((6, n_samples)) * scales * gen.uniform(0, 1, n_samples)

    full_mass = fam.sigma_mass(pts)
    mass = float(np.max(full_mass))
    closed = None
    if fam.name in ("default", "silent") and fam.sigma_constant:
        closed = default_sigma_mass(fam.K_noise, fam.params.get("amplitude", 0.0))
    ratios = {"sigma_mass": mass / SIGMA_MASS_LIMIT}

    def dx(func, j, *args):
        e = np.zeros((3, 1))
        e[j] = eps
        hi = func(x + e, *args)
        lo = func(x - e, *args)
        if isinstance(hi, tuple):
            return tuple((a - b) / (2 * eps) for a, b in zip(hi, lo))
        return (hi - lo) / (2 * eps)

    def dy(func, l, yy):
        e = np.zeros((6, 1))
        e[l] = eps
        hi = func(x, yy + e)
        lo = func(x, yy - e)
        if isinstance(hi, tuple):
            return tuple((a - b) / (2 * eps) for a, b in zip(hi, lo))
        return (hi - lo) / (2 * eps)

    def stacked(pair):
        return np.concatenate(pair, axis=0)

    grad_sigma = max(float(np.max(_ell2(stacked(dx(fam.sigma, j))))) for j in range(3))
    ratios["sigma_grad"] = grad_sigma / fam.sigma_grad_sup if fam.sigma_grad_sup > 0 else (0.0 if grad_sigma < 1e-8 else np.inf)

    H = stacked(fam.h(x, y))
    H2 = stacked(fam.h(x, y2))
    growth = []
    for j in range(3):
        dH = stacked(dx(fam.h, j, y))
        growth.append(_ratio(_ell2(dH) ** 2 + _ell2(H) ** 2, fam.C_H * np.sum(y**2, axis=0) + fam.F_H))
    ratios["H_growth"] = max(growth)
    dist = np.sqrt(np.sum((y - y2) ** 2, axis=0))
    ratios["H_lipschitz"] = _ratio(_ell2(H - H2), fam.C_H * dist)
    dyH = [stacked(dy(fam.h, l, y)) for l in range(6)]
    dyH2 = [stacked(dy(fam.h, l, y2)) for l in range(6)]
    ratios["H_dy_bound"] = max(_ratio(_ell2(d), np.full(n_samples, fam.C_H)) for d in dyH)
    ratios["H_dy_lipschitz"] = max(_ratio(_ell2(a - b), fam.C_H * dist) for a, b in zip(dyH, dyH2))
    dxH_lip = []
    for j in range(3):
        a = stacked(dx(fam.h, j, y))
        b = stacked(dx(fam.h, j, y2))
        dxH_lip.append(_ratio(_ell2(a - b), fam.C_H * dist))
    ratios["H_dx_lipschitz"] = max(dxH_lip)

    F = fam.f(x, y)
    fgrowth = []
    for j in range(3):
        dF = dx(fam.f, j, y)
        fgrowth.append(_ratio(np.sum(dF**2, axis=0) + np.sum(F**2, axis=0), fam.C_f * np.sum(y**2, axis=0) + fam.F_f))
    ratios["f_growth"] = max(fgrowth)
    ratios["f_dy_bound"] = max(_ratio(np.abs(dy(fam.f, l, y)), np.full((6, n_samples), fam.C_f)) for l in range(6))

    # finite differences carry O(eps^2) error; allow a little slack
    slack = {"sigma_mass": 1e-12}
    violations = [k for k, r in ratios.items() if not r <= 1.0 + slack.get(k, 1e-6)]
    if closed is not None and abs(closed - mass) > 1e-12:
        violations.append("sigma_mass_closed_form")
    return AssumptionReport(ratios=ratios, violations=violations, sigma_mass=mass, sigma_mass_closed_form=closed)

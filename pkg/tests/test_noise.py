import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tamed_mhd.noise import (
    SIGMA_MASS_LIMIT,
    ArrayIncrements,
    AssumptionError,
    RngStream,
    StreamIncrements,
    default_sigma_mass,
    default_sigma_vectors,
    eval_family,
    grid_points,
    make_family,
    sample_increments,
    tau,
    validate_assumptions,
)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_increment_statistics(seed):
    rng = RngStream(seed)
    dt = 1e-2
    draws = np.array([sample_increments(rng, dt, 8).dW for _ in range(4000)]).ravel()
    n = draws.size
    mean_se = math.sqrt(dt / n)
    var_se = dt * math.sqrt(2.0 / n)
    assert abs(draws.mean()) < 4 * mean_se
    assert abs(draws.var() - dt) < 4 * var_se


def test_streams_deterministic_and_counter_based():
    a = RngStream(7, 3)
    b = RngStream(7, 3)
    first = [sample_increments(a, 0.1, 4).dW for _ in range(5)]
    again = [sample_increments(b, 0.1, 4).dW for _ in range(5)]
    assert all(np.array_equal(x, y) for x, y in zip(first, again))
    # jumping the counter reproduces step 3 directly
    c = RngStream(7, 3, counter=3)
    assert np.array_equal(sample_increments(c, 0.1, 4).dW, first[3])


def test_streams_and_substreams_independent():
    a = [sample_increments(RngStream(1, 0, i), 1.0, 64) for i in range(50)]
    b = [sample_increments(RngStream(1, 1, i), 1.0, 64) for i in range(50)]
    x = np.concatenate([i.dW for i in a])
    y = np.concatenate([i.dW for i in b])
    xb = np.concatenate([i.dW_bar for i in a])
    for u, v in ((x, y), (x, xb)):
        r = np.corrcoef(u, v)[0, 1]
        assert abs(r) < 4 / math.sqrt(u.size)
    assert not np.array_equal(x, y)


def test_rng_stream_validation():
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(ValueError):
        RngStream(0, 2**64)
    with pytest.raises(ValueError):
        sample_increments(RngStream(0), 0.0, 3)
    assert RngStream(5, 1, 9).spawn(4) == RngStream(5, 4, 0)


def test_stream_increments_share_lanes():
    src = StreamIncrements([RngStream(3, 0), RngStream(3, 1)], lane_stream=np.array([0, 1, 0]))
    dW, dWb = src.draw(0.5, 6)
    assert dW.shape == (3, 6)
    assert np.array_equal(dW[0], dW[2]) and not np.array_equal(dW[0], dW[1])
    assert np.array_equal(dW[0], sample_increments(RngStream(3, 0), 0.5, 6).dW)


def test_array_increments_replay():
    dW = np.arange(12.0).reshape(3, 1, 4)
    src = ArrayIncrements(dW, -dW)
    for i in range(3):
        a, b = src.draw(0.1, 4)
        assert np.array_equal(a, dW[i]) and np.array_equal(b, -dW[i])


@given(st.floats(-1e6, 1e6))
def test_tau_bounded_lipschitz(u):
    assert abs(tau(u)) < 1.0
    assert abs(tau(u) - tau(u + 1e-3)) <= 1e-3 + 1e-15


def test_default_sigma_mass_closed_form():
    for K in (1, 5, 16, 40):
        s, sb = default_sigma_vectors(K, 1.0 / 72.0)
        direct = np.sum(s**2) + np.sum(sb**2)
        assert direct == pytest.approx(default_sigma_mass(K, 1.0 / 72.0), rel=1e-14)
        assert direct <= SIGMA_MASS_LIMIT


def test_default_family_constants(g16):
    fam = make_family("default")
    assert fam.K_noise == 16
    assert fam.C_H == pytest.approx(math.sqrt(2) * 0.25)
    assert fam.F_f == pytest.approx(0.75)
    mass = fam.sigma_mass(grid_points(g16))
    assert np.max(np.abs(mass - default_sigma_mass(16, 1.0 / 72.0))) < 1e-15


def test_sigma_mass_bound_enforced(g8):
    with pytest.raises(AssumptionError):
        make_family("default", {"amplitude": 0.02})
    make_family("default", {"amplitude": 1.0 / 72.0})

    def big_sigma(x):
        extra = np.ones(np.shape(x)[1:])
        v = np.zeros((2, 3) + np.shape(x)[1:])
        v[0, 0] = 0.2 * extra
        return v, v.copy()

    with pytest.raises(AssumptionError):
        make_family("custom", {"K": 2, "sigma": big_sigma}, g8)


def test_family_parameter_validation():
    with pytest.raises(ValueError):
        make_family("nope")
    with pytest.raises(ValueError):
        make_family("default", {"sigma": None})
    with pytest.raises(ValueError):
        make_family("silent", {"amplitude": 1.0})
    with pytest.raises(ValueError):
        make_family("default", {"K": 0})


def test_silent_family_is_zero(g8):
    fam = make_family("silent", {"K": 3})
    x = grid_points(g8)
    y = np.random.default_rng(0).standard_normal((6,) + g8.shape)
    s, sb = fam.sigma(x)
    h, hb = fam.h(x, y)
    assert not np.any(s) and not np.any(sb) and not np.any(h) and not np.any(hb)
    assert not np.any(fam.f(x, y))


def test_eval_family_pointwise():
    fam = make_family("default", {"K": 4})
    x = np.array([0.3, 1.1, 2.0])
    y = np.array([1.0, -2.0, 0.5, 3.0, 0.0, -1.0])
    vals = eval_family(fam, 2, x, y)
    a = math.sqrt(1.0 / 144.0) * 0.5
    assert np.allclose(vals.sigma_k, [0, 0, a])
    assert np.allclose(vals.sigma_bar_k, [a, 0, 0])
    w = 0.25 * 0.5
    assert np.allclose(vals.h_k, w * tau(y[:3]))
    assert np.allclose(vals.h_bar_k, w * tau(y[3:]))
    assert np.allclose(vals.f, [0.5 * math.sin(1.1), 0.5 * math.sin(2.0), 0.5 * math.sin(0.3), 0, 0, 0])
    with pytest.raises(IndexError):
        eval_family(fam, 4, x, y)


def test_h_contract_matches_callable(g8):
    fam = make_family("default", {"K": 5})
    gen = np.random.default_rng(2)
    y = gen.standard_normal((3, 6) + g8.shape)
    dW = gen.standard_normal((3, 5))
    dWb = gen.standard_normal((3, 5))
    x = grid_points(g8)
    fast = fam.h_contract(x, y, dW, dWb)
    for lane in range(3):
        h, hb = fam.h(x, y[lane])
        want = np.concatenate([np.tensordot(dW[lane], h, axes=1), np.tensordot(dWb[lane], hb, axes=1)])
        assert np.allclose(fast[lane], want, atol=1e-15)


def test_validator_accepts_default_and_silent(g8):
    for fam in (make_family("default"), make_family("silent")):
        rep = validate_assumptions(fam, g8, 200, RngStream(4))
        assert rep.passed, rep.violations
        assert rep.sigma_mass <= SIGMA_MASS_LIMIT


def test_validator_rejects_quadratic_h(g8):
    def h(x, y):
        y = np.asarray(y)
        hv = np.stack([y[:3] ** 2])
        return hv, np.zeros_like(hv)

    fam = make_family("custom", {"K": 1, "h": h, "C_H": 1.0})
    rep = validate_assumptions(fam, g8, 200, RngStream(5))
    assert not rep.passed
    assert "H_lipschitz" in rep.violations and "H_dy_bound" in rep.violations


def test_validator_rejects_understated_constants(g8):
    fam = make_family("custom", {"C_H": 0.01})
    rep = validate_assumptions(fam, g8, 200, RngStream(6))
    assert "H_lipschitz" in rep.violations
    forced = make_family("custom", {"F_f": 0.01})
    assert "f_growth" in validate_assumptions(forced, g8, 200, RngStream(6)).violations


def test_validator_needs_samples(g8):
    with pytest.raises(ValueError):
        validate_assumptions(make_family("default"), g8, 0, RngStream(0))

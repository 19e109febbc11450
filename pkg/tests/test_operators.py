import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tamed_mhd.noise import grid_points, make_family, tau
from tamed_mhd.operators import (
    TamingSpec,
    bilinear_block,
    bilinear_block_phys,
    convect,
    energy_pairing,
    eval_taming,
    eval_taming_derivative,
    hs_norm_B,
    hs_norms,
    operator_A,
    operator_A2,
    operator_B,
    operator_B_all,
    taming_coeffs,
)
from tamed_mhd.spectral import (
    VOLUME,
    GridSpec,
    SpectralError,
    SpectralField,
    StatePair,
    divergence_residual,
    forward_transform,
    ksquared,
    leray_coeffs,
    random_solenoidal,
    resample,
    single_mode,
    sobolev_norm_sq,
    to_physical,
    wavenumbers,
)


def random_state(grid, seed, amplitude=1.0, slope=1.0):
    gen = np.random.default_rng(seed)
    return StatePair(random_solenoidal(grid, gen, amplitude, slope), grid)


# --------------------------------------------------------------------------
# taming function

def test_taming_values():
    spec = TamingSpec(N=10.0, C_taming=2.0, C1=2.0)
    assert eval_taming(0.0, spec) == 0.0
    assert eval_taming(10.0, spec) == 0.0
    assert eval_taming(11.0, spec) == pytest.approx(1.0)
    assert eval_taming(13.0, spec) == pytest.approx(5.0)
    assert eval_taming(10.5, spec) == pytest.approx(2 * 0.125 - 0.0625)


def test_taming_rejects_negative_and_nan():
    spec = TamingSpec()
    with pytest.raises(ValueError):
        eval_taming(-1.0, spec)
    with pytest.raises(ValueError):
        eval_taming(np.array([1.0, np.nan]), spec)


def test_taming_spec_validation():
    with pytest.raises(ValueError):
        TamingSpec(N=0.0)
    with pytest.raises(ValueError):
        TamingSpec(C_taming=3.0, C1=2.0)
    with pytest.raises(ValueError):
        TamingSpec(blend="linear")


@pytest.mark.parametrize("knot", [0.0, 1.0])
def test_taming_is_c2_at_knots(knot):
    spec = TamingSpec(N=5.0, C_taming=2.0, C1=2.0)
    r0 = spec.N + knot
    h = 1e-6
    d = lambda r: eval_taming_derivative(r, spec)  # noqa: E731
    assert d(r0 - h) == pytest.approx(d(r0 + h), abs=1e-5)
    # second derivative vanishes on both sides of each knot
    left = (d(r0) - d(r0 - h)) / h
    right = (d(r0 + h) - d(r0)) / h
    assert abs(left) < 1e-4 and abs(right) < 1e-4


@given(st.floats(0.0, 50.0))
def test_taming_derivative_matches_difference(r):
    spec = TamingSpec(N=20.0)
    h = 1e-6
    fd = (eval_taming(r + h, spec) - eval_taming(max(r - h, 0.0), spec)) / (r + h - max(r - h, 0.0))
    assert eval_taming_derivative(r, spec) == pytest.approx(fd, abs=1e-5)
    assert 0.0 <= eval_taming_derivative(r, spec) <= spec.C1


def test_taming_coeffs_skip_and_batch(g16):
    y = random_state(g16, 1)
    assert taming_coeffs(y.coeffs, g16, TamingSpec(N=1e6)) is None
    spec = TamingSpec(N=0.5)
    batch = np.stack([y.coeffs, 0.01 * y.coeffs])
    out = taming_coeffs(batch, g16, spec)
    assert np.max(np.abs(out[1])) == 0.0
    assert np.allclose(out[0], taming_coeffs(y.coeffs, g16, spec), atol=1e-15)


def test_taming_coeffs_physical_oracle(g16):
    y = random_state(g16, 2)
    spec = TamingSpec(N=0.5)
    m = 48
    phys = to_physical(y.coeffs, g16, m)
    r = np.sum(phys**2, axis=0)
    want = np.fft.fftn(eval_taming(r, spec) * phys, axes=(1, 2, 3)) / m**3
    got = taming_coeffs(y.coeffs, g16, spec, m)
    K = g16.cutoff
    for k in [(0, 1, 0), (2, -3, 1), (5, 5, -5)]:
        assert got[(slice(None),) + tuple(c % 16 for c in k)] == pytest.approx(
            want[(slice(None),) + tuple(c % m for c in k)], abs=1e-15
        )
    assert max(abs(c) for c in (5, 5, -5)) <= K


# --------------------------------------------------------------------------
# bilinear terms

def test_convect_analytic(g16):
    x = grid_points(g16)
    a_phys = np.stack([np.sin(x[1]), np.zeros_like(x[0]), np.zeros_like(x[0])])
    b_phys = np.stack([np.zeros_like(x[0]), np.zeros_like(x[0]), np.cos(x[0] + 2 * x[2])])
    a = forward_transform(a_phys, g16)
    b = forward_transform(b_phys, g16)
    got = to_physical(convect(a, b).coeffs, g16)
    want = np.zeros_like(got)
    want[2] = -np.sin(x[1]) * np.sin(x[0] + 2 * x[2])
    assert np.max(np.abs(got - want)) < 1e-14


def test_convect_rejects_wrong_components(g8):
    f = random_state(g8, 0).v
    s = SpectralField(f.coeffs[:1], g8)
    with pytest.raises(SpectralError):
        convect(s, f)


def test_divergence_form_matches_gradient_form(g16):
    y = random_state(g16, 3)
    div_form = bilinear_block_phys(to_physical(y.coeffs, g16), g16)
    grad_form = bilinear_block(y).coeffs
    assert np.max(np.abs(div_form - grad_form)) < 1e-13 * np.max(np.abs(grad_form))


def test_single_mode_is_eigenfunction(g16):
    k = (1, 2, 0)
    v = single_mode(g16, k, 1).coeffs
    B = single_mode(g16, k, 2, amplitude=0.5).coeffs
    y = StatePair(np.concatenate([v, B]), g16)
    A = operator_A(y, TamingSpec(N=100.0)).coeffs
    assert np.max(np.abs(A + 5.0 * y.coeffs)) < 1e-14


def test_bilinear_cancellation_physical_oracle(g16):
    """The four trilinear integrals are evaluated by exact quadrature on 32^3."""
    y = random_state(g16, 4)
    m = 32
    phys = to_physical(y.coeffs, g16, m)
    kk = wavenumbers(g16)
    grads = to_physical(1j * kk[:, None] * y.coeffs[None], g16, m)  # (j, c, ...)
    v, B = phys[:3], phys[3:]
    gv, gB = grads[:, :3], grads[:, 3:]

    def tri(a, gb, c):
        return VOLUME * np.mean(np.einsum("j...,jc...,c...->...", a, gb, c))

    terms = [tri(v, gv, v), -tri(B, gB, v), tri(v, gB, B), -tri(B, gv, B)]
    scale = np.sqrt(sobolev_norm_sq(y) * VOLUME * np.mean(np.sum(grads**2, axis=(0, 1))))
    assert abs(sum(terms)) < 1e-12 * scale
    # the two coupling terms cancel each other, the self terms vanish
    assert abs(terms[1] + terms[3]) < 1e-12 * scale
    pairing = VOLUME * np.sum(np.real(operator_A2(y).coeffs * np.conj(y.coeffs)))
    assert abs(pairing) < 1e-12 * scale


def test_operator_A_is_solenoidal(g16):
    y = random_state(g16, 5, amplitude=3.0)
    A = operator_A(y, TamingSpec(N=1.0)).coeffs
    assert divergence_residual(A, g16) < 1e-14


def test_energy_pairing_without_taming(g16):
    y = random_state(g16, 6)
    ep = energy_pairing(y, TamingSpec(N=1e6))
    assert ep.taming_term == 0.0
    assert abs(ep.bilinear_pairing) < 1e-10 * ep.gradient_term
    assert ep.relative_residual < 1e-12


def test_energy_pairing_taming_converges_with_resolution():
    spec = TamingSpec(N=1.0)
    g = GridSpec(16)
    y = random_state(g, 7)
    coarse = energy_pairing(y, spec).relative_residual
    fine = energy_pairing(resample(y, GridSpec(32)), spec).relative_residual
    assert fine < coarse
    assert coarse < 1e-2


def test_energy_pairing_rejects_batches(g8):
    c = random_solenoidal(g8, np.random.default_rng(0), batch=(2,))
    with pytest.raises(SpectralError):
        energy_pairing(StatePair(c, g8), TamingSpec())


# --------------------------------------------------------------------------
# diffusion family

def test_operator_B_per_mode_formula(g16):
    fam = make_family("default")
    y = random_state(g16, 8)
    phys = to_physical(y.coeffs, g16)
    s, sb = fam.sigma(np.zeros((3, 1)))
    s = s.reshape(-1, 3)
    sb = sb.reshape(-1, 3)
    kk = wavenumbers(g16)
    for k in (0, 1, 7, 15):
        w = fam.h_weights[k]
        trans = np.concatenate([
            1j * np.tensordot(s[k], kk, axes=1) * y.coeffs[:3],
            1j * np.tensordot(sb[k], kk, axes=1) * y.coeffs[3:],
        ])
        state = forward_transform(np.concatenate([w * tau(phys[:3]), w * tau(phys[3:])]), g16).coeffs
        want = leray_coeffs(trans + state, g16)
        got = operator_B(y, fam, k).coeffs
        assert np.max(np.abs(got - want)) < 1e-15
    with pytest.raises(IndexError):
        operator_B(y, fam, 16)


def test_operator_B_all_matches_single(g16):
    fam = make_family("default", {"K": 4})
    y = random_state(g16, 9)
    allB = operator_B_all(y, fam)
    for k in range(4):
        assert np.allclose(allB[k], operator_B(y, fam, k).coeffs, atol=1e-15)


def test_state_independent_h(g16):
    x1 = lambda x: np.sin(x[0])  # noqa: E731

    def h(x, y):
        shape = np.broadcast_shapes(np.shape(x)[1:], np.shape(y)[1:])
        hv = np.zeros((2, 3) + shape)
        hv[0, 1] = x1(x)
        return hv, np.zeros_like(hv)

    fam = make_family("custom", {"K": 2, "h": h, "amplitude": 0.0})
    zero = StatePair(np.zeros((6,) + g16.shape, dtype=complex), g16)
    b0 = operator_B(zero, fam, 0)
    phys = to_physical(b0.coeffs, g16)
    x = grid_points(g16)
    assert np.max(np.abs(phys[1] - np.sin(x[0]))) < 1e-14
    assert np.max(np.abs(operator_B(zero, fam, 1).coeffs)) == 0.0


def test_operator_B_general_sigma_matches_constant_path(g16):
    """The physical-space transport path reproduces the spectral one."""
    base = make_family("default", {"K": 3})
    s, sb = base.sigma(np.zeros((3, 1)))

    def sigma(x):
        extra = (1,) * (np.ndim(x) - 1)
        return s.reshape((3, 3) + extra) + 0 * np.asarray(x)[None, :1], sb.reshape((3, 3) + extra) + 0 * np.asarray(x)[None, :1]

    fam = make_family("custom", {"K": 3, "sigma": sigma})
    assert not fam.sigma_constant
    y = random_state(g16, 10)
    for k in range(3):
        assert np.max(np.abs(operator_B(y, fam, k).coeffs - operator_B(y, base, k).coeffs)) < 1e-14


def test_hs_bounds_default_family(g16):
    fam = make_family("default")
    gen = np.random.default_rng(11)
    for amp in (0.01, 1.0, 10.0):
        for c in random_solenoidal(g16, gen, amp, 1.0, batch=(4,)):
            y = StatePair(c, g16)
            h0, h1 = hs_norms(y, fam)
            b0 = 0.5 * sobolev_norm_sq(y, 1) + fam.hs0_coeff * sobolev_norm_sq(y, 0) + 2 * fam.F_H_L1
            b1 = 0.5 * sobolev_norm_sq(y, 2) + fam.hs1_coeff * sobolev_norm_sq(y, 1) + fam.hs1_F_coeff * fam.F_H_L1
            assert h0 <= b0 and h1 <= b1
            assert hs_norm_B(y, fam, 0) == h0


def test_hs_norm_transport_only_closed_form(g16):
    """With h = 0 each mode contributes |s.k|^2 |y_k|^2 (solenoidal y, constant s)."""
    fam = make_family("custom", {"K": 5, "h": lambda x, y: (np.zeros((5, 3) + np.shape(y)[1:]),) * 2})
    y = random_state(g16, 12)
    s, sb = fam.sigma(np.zeros((3, 1)))
    kk = wavenumbers(g16)
    sk = np.sum(np.tensordot(s.reshape(5, 3), kk, axes=1) ** 2, axis=0)
    sbk = np.sum(np.tensordot(sb.reshape(5, 3), kk, axes=1) ** 2, axis=0)
    want = VOLUME * (np.sum(sk * np.abs(y.coeffs[:3]) ** 2) + np.sum(sbk * np.abs(y.coeffs[3:]) ** 2))
    assert hs_norm_B(y, fam, 0) == pytest.approx(want, rel=1e-12)
    w1 = 1 + ksquared(g16)
    want1 = VOLUME * (np.sum(w1 * sk * np.abs(y.coeffs[:3]) ** 2) + np.sum(w1 * sbk * np.abs(y.coeffs[3:]) ** 2))
    assert hs_norm_B(y, fam, 1) == pytest.approx(want1, rel=1e-12)
    with pytest.raises(ValueError):
        hs_norm_B(y, fam, 2)

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tamed_mhd.spectral import (
    VOLUME,
    GridSpec,
    SpectralError,
    SpectralField,
    StatePair,
    cube_mask,
    dealiased_product,
    divergence_residual,
    forward_transform,
    gradient_norm_sq,
    hermitian_defect,
    homogeneous_w22_sq,
    inverse_transform,
    laplacian,
    leray_project,
    polarization_vectors,
    random_solenoidal,
    resample,
    single_mode,
    sobolev_inner,
    sobolev_norm_sq,
    spectral_derivative,
    to_physical,
    truncate_modes,
    wavenumbers,
)


def random_field(grid, seed, ncomp=3, solenoidal=True):
    gen = np.random.default_rng(seed)
    if solenoidal:
        return SpectralField(random_solenoidal(grid, gen, ncomp=ncomp, slope=1.0), grid)
    phys = gen.standard_normal((ncomp,) + grid.shape)
    return forward_transform(phys, grid)


def convolution_oracle(a, b, grid):
    """Direct sum over retained modes of a(p) b(k - p), truncated to the band."""
    K = grid.cutoff
    n = grid.n
    modes = list(itertools.product(range(-K, K + 1), repeat=3))
    out = np.zeros(np.broadcast_shapes(a.shape[:-3], b.shape[:-3]) + grid.shape, dtype=complex)
    for k in modes:
        acc = 0
        for p in modes:
            q = tuple(ki - pi for ki, pi in zip(k, p))
            if max(abs(c) for c in q) > K:
                continue
            acc = acc + a[(...,) + tuple(c % n for c in p)] * b[(...,) + tuple(c % n for c in q)]
        out[(...,) + tuple(c % n for c in k)] = acc
    return out


@given(st.integers(0, 2**32 - 1))
def test_transform_round_trip(seed):
    g = GridSpec(16)
    f = random_field(g, seed, solenoidal=False)
    back = forward_transform(inverse_transform(f), g)
    assert np.max(np.abs(back.coeffs - f.coeffs)) < 1e-14
    assert hermitian_defect(f.coeffs) < 1e-14


def test_forward_of_band_limited_samples_is_exact(g16):
    f = random_field(g16, 3)
    phys = inverse_transform(f)
    assert np.max(np.abs(forward_transform(phys, g16).coeffs - f.coeffs)) < 1e-15


def test_padded_sampling_matches_native(g16):
    f = random_field(g16, 4)
    fine = to_physical(f.coeffs, g16, 32)
    assert np.allclose(fine[..., ::2, ::2, ::2], to_physical(f.coeffs, g16), atol=1e-14)


def test_forward_drops_modes_outside_band(g16):
    x = 2 * np.pi * np.arange(16) / 16
    phys = np.zeros((1,) + g16.shape)
    phys[0] += np.cos(7 * x)[:, None, None]
    assert np.max(np.abs(forward_transform(phys, g16).coeffs)) < 1e-14


def test_parseval(g16):
    f = random_field(g16, 5)
    phys = inverse_transform(f)
    assert sobolev_norm_sq(f) == pytest.approx(VOLUME * np.mean(np.sum(phys**2, axis=0)), rel=1e-13)


def test_inverse_rejects_non_hermitian(g8):
    c = np.zeros((3,) + g8.shape, dtype=complex)
    c[0, 1, 0, 0] = 1.0
    with pytest.raises(SpectralError):
        inverse_transform(SpectralField(c, g8))


def test_forward_rejects_complex_and_bad_shape(g8):
    with pytest.raises(SpectralError):
        forward_transform(np.zeros((3,) + g8.shape, dtype=complex), g8)
    with pytest.raises(SpectralError):
        forward_transform(np.zeros((3, 4, 4, 4)), g8)


@pytest.mark.parametrize("n", [6, 12, 4, 24])
def test_grid_rejects_non_powers_of_two(n):
    with pytest.raises(SpectralError):
        GridSpec(n)


def test_grid_rejects_cutoff_above_two_thirds():
    with pytest.raises(SpectralError):
        GridSpec(16, 6)


def test_dealiased_product_matches_convolution(g8):
    a = random_field(g8, 6, ncomp=1, solenoidal=False)
    b = random_field(g8, 7, ncomp=3, solenoidal=False)
    got = dealiased_product(a, b).coeffs
    want = convolution_oracle(a.coeffs, b.coeffs, g8) * cube_mask(g8, g8.cutoff)
    assert np.max(np.abs(got - want)) < 1e-14


def fd8(f, h, axis):
    """Eighth-order central difference."""
    w = [4 / 5, -1 / 5, 4 / 105, -1 / 280]
    return sum(c * (np.roll(f, -s, axis) - np.roll(f, s, axis)) for s, c in zip(range(1, 5), w)) / h


@pytest.mark.parametrize("axis", [0, 1, 2])
def test_derivative_matches_finite_differences(axis):
    g = GridSpec(64)
    gen = np.random.default_rng(axis)
    c = random_solenoidal(g, gen, band=2, ncomp=3)
    f = SpectralField(c, g)
    phys = inverse_transform(f)
    exact = inverse_transform(spectral_derivative(f, axis))
    approx = fd8(phys, 2 * np.pi / 64, axis + 1)
    assert np.max(np.abs(approx - exact)) < 1e-7 * np.max(np.abs(exact))


def test_derivative_axis_validation(g8):
    with pytest.raises(SpectralError):
        spectral_derivative(random_field(g8, 1), 3)


@given(st.integers(0, 2**32 - 1))
def test_leray_idempotent_and_solenoidal(seed):
    g = GridSpec(8)
    f = random_field(g, seed, ncomp=6, solenoidal=False)
    p = leray_project(f)
    assert divergence_residual(p.coeffs, g) < 1e-14
    assert np.max(np.abs(leray_project(p).coeffs - p.coeffs)) < 1e-14


def test_leray_identity_on_solenoidal_and_kills_gradients(g16):
    f = random_field(g16, 11)
    assert np.max(np.abs(leray_project(f).coeffs - f.coeffs)) < 1e-15
    phi = random_field(g16, 12, ncomp=1, solenoidal=False)
    grad = SpectralField(1j * wavenumbers(g16) * phi.coeffs, g16)
    assert np.max(np.abs(leray_project(grad).coeffs)) < 1e-15


def test_leray_rejects_bad_component_count(g8):
    with pytest.raises(SpectralError):
        leray_project(random_field(g8, 1, ncomp=1, solenoidal=False))


def test_w22_ratio_random_fields(g16):
    gen = np.random.default_rng(0)
    for c in random_solenoidal(g16, gen, batch=(100,), slope=0.0):
        y = StatePair(c, g16)
        assert homogeneous_w22_sq(y) / sobolev_norm_sq(y, 2) <= 9.0 + 1e-10


def test_w22_equals_sum_of_k4(g16):
    y = random_field(g16, 13)
    k2 = np.sum(wavenumbers(g16) ** 2, axis=0)
    direct = VOLUME * np.sum(k2**2 * np.abs(y.coeffs) ** 2)
    assert homogeneous_w22_sq(y) == pytest.approx(direct, rel=1e-13)


def test_gradient_norm_matches_physical(g16):
    f = random_field(g16, 14)
    total = 0.0
    for j in range(3):
        d = inverse_transform(spectral_derivative(f, j))
        total += VOLUME * np.mean(np.sum(d**2, axis=0))
    assert gradient_norm_sq(f) == pytest.approx(total, rel=1e-12)
    assert sobolev_norm_sq(f, 1) == pytest.approx(sobolev_norm_sq(f, 0) + total, rel=1e-12)


def test_sobolev_inner_generalises_pairing(g16):
    a = random_field(g16, 15)
    b = random_field(g16, 16)
    # (1 - Delta) moves one order from one side to the other
    lap_b = SpectralField(b.coeffs - laplacian(b).coeffs, g16)
    assert sobolev_inner(a, b, 1) == pytest.approx(sobolev_inner(a, lap_b, 0), rel=1e-12)
    assert sobolev_inner(a, b, 2) == pytest.approx(sobolev_inner(b, a, 2), rel=1e-13)
    with pytest.raises(SpectralError):
        sobolev_inner(a, b, -1)


def test_truncation_self_adjoint(g16):
    a = random_field(g16, 17)
    b = random_field(g16, 18)
    for n_keep in range(g16.cutoff + 1):
        lhs = sobolev_inner(truncate_modes(a, n_keep), b)
        rhs = sobolev_inner(a, truncate_modes(b, n_keep))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-14)
    with pytest.raises(SpectralError):
        truncate_modes(a, g16.cutoff + 1)


def test_single_mode_physical_form(g16):
    k = (1, -2, 1)
    f = single_mode(g16, k, 2, amplitude=0.7)
    p = polarization_vectors(k)[1]
    x = 2 * np.pi * np.arange(16) / 16
    X = np.stack(np.meshgrid(x, x, x, indexing="ij"))
    phase = np.tensordot(np.array(k, dtype=float), X, axes=1)
    want = 0.7 * p[:, None, None, None] * np.cos(phase)
    assert np.max(np.abs(inverse_transform(f) - want)) < 1e-14
    assert divergence_residual(f.coeffs, g16) < 1e-15


@given(st.tuples(st.integers(-5, 5), st.integers(-5, 5), st.integers(-5, 5)).filter(any))
def test_polarizations_orthonormal(k):
    p1, p2 = polarization_vectors(k)
    kk = np.array(k, dtype=float)
    assert abs(p1 @ kk) < 1e-12 and abs(p2 @ kk) < 1e-12
    assert abs(p1 @ p2) < 1e-12
    assert np.linalg.norm(p1) == pytest.approx(1.0) and np.linalg.norm(p2) == pytest.approx(1.0)


def test_resample_round_trip(g16):
    f = random_field(g16, 19)
    up = resample(f, GridSpec(32))
    assert sobolev_norm_sq(up, 1) == pytest.approx(sobolev_norm_sq(f, 1), rel=1e-14)
    assert np.array_equal(resample(up, g16).coeffs, f.coeffs)


def test_random_solenoidal_normalisation(g16):
    c = random_solenoidal(g16, np.random.default_rng(1), amplitude=2.0)
    phys = to_physical(c, g16)
    assert np.mean(np.sum(phys**2, axis=0)) == pytest.approx(4.0, rel=1e-12)
    assert abs(c[..., 0, 0, 0]).max() == 0.0


def test_field_arithmetic_checks_grid(g8, g16):
    a = random_field(g8, 1)
    b = random_field(g16, 1)
    with pytest.raises(SpectralError):
        a + b
    assert np.array_equal((2.0 * a - a).coeffs, a.coeffs)
    with pytest.raises(SpectralError):
        StatePair(np.zeros((3,) + g8.shape), g8)

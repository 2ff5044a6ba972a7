import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svnlw.spectral import (
    BESSEL,
    D,
    MODIFIED,
    FrequencyLattice,
    HermitianSymmetryError,
    SpectralField,
    apply_multiplier,
    inverse_transform,
    make_lattice,
    project,
    required_grid,
    resample,
    sobolev_norm,
    transform,
)


def random_field(lat, seed, N=None):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(lat.shape)
    f = inverse_transform(g, lat)
    return project(N, f) if N is not None else f


def test_small_lattice_frequencies():
    lat = make_lattice(4, 1)
    assert sorted(set(lat.n1.ravel())) == [-1, 0, 1, 2]
    assert lat.nyquist[2].all() and lat.nyquist[:, 2].all()
    assert not lat.nyquist[1, 1]


def test_lattice_preconditions():
    with pytest.raises(ValueError):
        make_lattice(3, 1)
    with pytest.raises(ValueError):
        make_lattice(8, 4)
    lat = make_lattice(16, 4)
    assert lat.shape == (16, 16) and lat.N == 4


def test_required_grid():
    assert required_grid(8, 3) == 50
    assert required_grid(1, 4, 0) == 6
    # full products need 2(dN + 1); a read-back on band B only dN + B + 1
    assert required_grid(64, 3, 64) == 258
    assert required_grid(3, 3, 3) == 14


def test_constant_and_cosine():
    lat = FrequencyLattice(8)
    c = SpectralField.from_modes(lat, {(0, 0): 2.5})
    np.testing.assert_allclose(transform(c), 2.5, atol=1e-14)
    f = SpectralField.from_modes(lat, {(1, 0): 0.5})
    x = np.arange(8) / 8
    np.testing.assert_allclose(transform(f), np.cos(2 * np.pi * x)[:, None] * np.ones(8), atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), M=st.sampled_from([4, 6, 10, 16]))
def test_round_trip_and_parseval(seed, M):
    lat = FrequencyLattice(M)
    f = random_field(lat, seed)
    assert f.is_hermitian()
    g = transform(f)
    back = inverse_transform(g, lat)
    assert np.abs(back.coeffs - f.coeffs).max() < 1e-12
    ms = np.mean(g**2)
    assert abs(ms - np.sum(np.abs(f.coeffs) ** 2)) < 1e-12 * max(ms, 1)
    assert abs(sobolev_norm(f, 0.0) ** 2 - ms) < 1e-12 * max(ms, 1)


def test_symmetry_violation_rejected():
    lat = FrequencyLattice(8)
    c = np.zeros(lat.shape, complex)
    c[1, 0] = 1.0
    with pytest.raises(HermitianSymmetryError):
        transform(SpectralField(lat, c))


def test_multipliers():
    lat = FrequencyLattice(8)
    one = SpectralField.from_modes(lat, {(0, 0): 1.0})
    assert np.abs(apply_multiplier(D, one).coeffs).max() == 0
    e = SpectralField.from_modes(lat, {(1, 0): 1.0})
    assert apply_multiplier(BESSEL**2, e).coeff((1, 0)) == pytest.approx(2.0)
    assert apply_multiplier(MODIFIED, one).coeff((0, 0)) == pytest.approx(1.0)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31), N=st.integers(0, 5))
def test_projection_properties(seed, N):
    lat = FrequencyLattice(12)
    f = random_field(lat, seed)
    p = project(N, f)
    np.testing.assert_array_equal(project(N, p).coeffs, p.coeffs)
    assert project(None, f) is f
    for sym in (D, BESSEL**-0.5, MODIFIED):
        a = project(N, apply_multiplier(sym, f)).coeffs
        b = apply_multiplier(sym, project(N, f)).coeffs
        np.testing.assert_allclose(a, b, atol=1e-14)
    assert p.is_hermitian() and apply_multiplier(D, p).is_hermitian()


def test_project_removes_high_mode():
    lat = FrequencyLattice(8)
    f = SpectralField.from_modes(lat, {(2, 0): 1.0})
    assert np.abs(project(1, f).coeffs).max() == 0


def test_sobolev_examples():
    lat = FrequencyLattice(8)
    c = SpectralField.from_modes(lat, {(0, 0): -3.0})
    assert sobolev_norm(c, 1.7) == pytest.approx(3.0)
    m = SpectralField.from_modes(lat, {(1, 0): 0.5})
    assert sobolev_norm(m, 1.0) == pytest.approx(1.0)
    assert sobolev_norm(m, 0.0, np.inf) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        sobolev_norm(m, 0.0, 3)


def test_resample_pads_and_truncates():
    f = random_field(FrequencyLattice(8), 4, N=2)
    up = resample(f, FrequencyLattice(16))
    np.testing.assert_allclose(resample(up, FrequencyLattice(8)).coeffs, f.coeffs, atol=1e-15)
    assert up.coeff((2, 0)) == f.coeff((2, 0))


def test_batched_fields_keep_batch_axes():
    lat = FrequencyLattice(6)
    f = SpectralField(lat, np.stack([random_field(lat, s).coeffs for s in range(3)]))
    assert f.batch_shape == (3,)
    assert sobolev_norm(f, 0.5).shape == (3,)

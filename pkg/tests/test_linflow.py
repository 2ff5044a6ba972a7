import numpy as np
import pytest
from scipy.integrate import quad
from scipy.linalg import expm

from svnlw.linflow import (
    FlowState,
    ModeRates,
    duhamel_S,
    energy_per_mode,
    flow_matrix,
    forcing_response,
    homogeneous_flow,
    linear_forcing_response,
    poisson_apply,
    poisson_operator_norm,
    schauder_exponent_check,
)
from svnlw.spectral import FrequencyLattice, SpectralField, inverse_transform

ABSN = np.array([0.0, 1.0, np.sqrt(2.0), 3.0, 7.5, 40.0])


def generator(absn, damping=True):
    return np.array([[0.0, 1.0], [-(1 + absn**2), -(absn if damping else 0.0)]])


def random_state(lat, seed):
    rng = np.random.default_rng(seed)
    return FlowState(inverse_transform(rng.standard_normal(lat.shape), lat), inverse_transform(rng.standard_normal(lat.shape), lat))


@pytest.mark.parametrize("damping", [True, False])
@pytest.mark.parametrize("t", [0.0, 0.013, 0.7, 3.1])
def test_flow_matrix_against_matrix_exponential(t, damping):
    g = flow_matrix(ModeRates.of(ABSN, damping), t).matrix()
    for i, n in enumerate(ABSN):
        np.testing.assert_allclose(g[i], expm(generator(n, damping) * t), atol=1e-12, rtol=1e-10)


def test_identity_at_zero_and_semigroup():
    lat = FrequencyLattice(32)
    g0 = flow_matrix(lat, 0.0)
    assert np.all(g0.g11 == 1) and np.all(g0.g22 == 1) and np.all(g0.g12 == 0) and np.all(g0.g21 == 0)
    st = random_state(lat, 1)
    a = homogeneous_flow(0.9, st)
    b = homogeneous_flow(0.5, homogeneous_flow(0.4, st))
    assert np.abs(a.v.coeffs - b.v.coeffs).max() < 1e-10
    assert np.abs(a.vt.coeffs - b.vt.coeffs).max() < 1e-10
    same = homogeneous_flow(0.0, st)
    np.testing.assert_array_equal(same.v.coeffs, st.v.coeffs)


def test_zero_mode_is_sine():
    lat = FrequencyLattice(8)
    st = FlowState(SpectralField.zeros(lat), SpectralField.from_modes(lat, {(0, 0): 1.0}))
    for t in (0.3, 1.0, 2.5, 11.0):
        assert abs(homogeneous_flow(t, st).v.coeff((0, 0)) - np.sin(t)) < 1e-12


def test_time_derivative_matches_second_component():
    lat = FrequencyLattice(16)
    st = random_state(lat, 2)
    h, t = 1e-4, 0.6
    a, b = homogeneous_flow(t, st), homogeneous_flow(t + h, st)
    fd = (b.v.coeffs - a.v.coeffs) / h
    assert np.abs(fd - a.vt.coeffs).max() < 50 * h * np.abs(st.v.coeffs).max() * 64


def test_duhamel_examples():
    lat = FrequencyLattice(16)
    f = random_state(lat, 3).v
    assert np.abs(duhamel_S(0.0, f).coeffs).max() == 0
    one = SpectralField.from_modes(lat, {(0, 0): 1.0})
    assert duhamel_S(np.pi / 2, one).coeff((0, 0)) == pytest.approx(1.0, abs=1e-15)
    t = 0.37
    sym = np.abs(duhamel_S(t, SpectralField(lat, np.ones(lat.shape))).coeffs)
    bound = np.exp(-lat.absn * t / 2) / np.sqrt(1 + 0.75 * lat.norm2)
    assert np.all(sym <= bound * (1 + 1e-12))
    # S(t) f is the first component of the flow started at (0, f)
    st = homogeneous_flow(t, FlowState(SpectralField.zeros(lat), f))
    np.testing.assert_array_equal(st.v.coeffs, duhamel_S(t, f).coeffs)


def test_undamped_energy_conserved_and_damped_energy_decreases():
    lat = FrequencyLattice(16)
    st = random_state(lat, 4)
    e0 = energy_per_mode(st.v.coeffs, st.vt.coeffs, lat)
    und = homogeneous_flow(2.3, st, damping=False)
    np.testing.assert_allclose(energy_per_mode(und.v.coeffs, und.vt.coeffs, lat), e0, rtol=1e-10, atol=1e-14)
    prev = e0
    for t in np.linspace(0.1, 3, 12):
        s = homogeneous_flow(t, st)
        e = energy_per_mode(s.v.coeffs, s.vt.coeffs, lat)
        live = lat.absn > 0
        assert np.all(e[live] <= prev[live] * (1 + 1e-12) + 1e-300)
        prev = e


@pytest.mark.parametrize("h", [1e-3, 0.05, 0.8])
def test_forcing_weights_against_quadrature(h):
    r = ModeRates.of(ABSN)
    p1, p2 = forcing_response(r, h)
    (a0, a1), (b0, b1) = linear_forcing_response(r, h)
    for i, n in enumerate(ABSN):
        ri = ModeRates.of(np.array([n]))
        S = lambda s: flow_matrix(ri, s).g12[0]
        Sp = lambda s: flow_matrix(ri, s).g22[0]
        kw = dict(epsabs=1e-14, epsrel=1e-12, limit=200)
        assert p1[i] == pytest.approx(quad(S, 0, h, **kw)[0], abs=1e-13)
        assert p2[i] == pytest.approx(S(h), abs=1e-15)
        # int G(h - s) e2 F(s) ds with F linear between F0 and F1
        assert a1[i] == pytest.approx(quad(lambda s: S(h - s) * s / h, 0, h, **kw)[0], abs=1e-13)
        assert a0[i] == pytest.approx(quad(lambda s: S(h - s) * (1 - s / h), 0, h, **kw)[0], abs=1e-13)
        assert b1[i] == pytest.approx(quad(lambda s: Sp(h - s) * s / h, 0, h, **kw)[0], abs=1e-13)
        assert b0[i] == pytest.approx(quad(lambda s: Sp(h - s) * (1 - s / h), 0, h, **kw)[0], abs=1e-13)


def test_poisson_examples():
    lat = FrequencyLattice(16)
    f = random_state(lat, 5).v
    np.testing.assert_array_equal(poisson_apply(0.0, 0.0, f).coeffs, f.coeffs)
    c = SpectralField.from_modes(lat, {(0, 0): 3.0})
    assert np.abs(poisson_apply(0.4, 0.5, c).coeffs).max() == 0
    with pytest.raises(ValueError):
        poisson_apply(0.0, 0.5, f)


def test_poisson_norm_near_continuum_maximum():
    lat = FrequencyLattice(2048)
    for a, t in [(0.5, 2**-4), (1.0, 2**-6)]:
        cont = (2 * a / (np.e * t)) ** a
        assert poisson_operator_norm(t, a, lat) == pytest.approx(cont, rel=0.02)


def test_kernel_scaling_identity():
    r = np.linspace(0.0, 500.0, 2001)
    for a in (0.0, 0.5, 1.0):
        for t in (2**-8, 0.1, 1.0):
            lhs = r**a * np.exp(-r * t / 2)
            rhs = t**-a * ((t * r) ** a * np.exp(-(t * r) / 2))
            np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


@pytest.mark.parametrize("alpha,tol", [(0.0, 0.05), (0.5, 0.1), (1.0, 0.1)])
def test_schauder_exponents(alpha, tol):
    slope, resid = schauder_exponent_check(alpha, 2.0 ** np.arange(-8, -1))
    assert abs(slope + alpha) <= tol
    assert resid < 0.1

import numpy as np
import pytest
from scipy.integrate import quad

from svnlw.linflow import ModeRates, flow_matrix
from svnlw.noise import (
    ModeSet,
    alpha_closed_form,
    sample_mu1,
    sample_phi_path,
    sample_psi_path,
    sigma_closed_form,
    tail_estimate,
    transition_covariance,
)
from svnlw.rng import Namespace, RngStream


def brute_sigma(t, N):
    """Direct per-mode sum of 2|n| int_0^t S(s)^2 ds."""
    total = 0.0
    for n1 in range(-N, N + 1):
        for n2 in range(-N, N + 1):
            if n1 * n1 + n2 * n2 > N * N or (n1 == 0 and n2 == 0):
                continue
            r = ModeRates.of(np.array([np.hypot(n1, n2)]))
            total += 2 * np.hypot(n1, n2) * quad(lambda s: flow_matrix(r, s).g12[0] ** 2, 0, t, epsabs=1e-13, limit=200)[0]
    return total


@pytest.mark.parametrize("t,N", [(0.3, 2), (1.0, 3), (2.0, 1)])
def test_sigma_matches_direct_integration(t, N):
    assert sigma_closed_form(t, N) == pytest.approx(brute_sigma(t, N), rel=1e-9)


def test_sigma_and_alpha_examples():
    assert sigma_closed_form(0.0, 8) == 0.0
    assert sigma_closed_form(3.0, 0) == 0.0
    assert abs(sigma_closed_form(50.0, 8) - (alpha_closed_form(8) - 1)) < 1e-10
    assert alpha_closed_form(0) == 1.0
    assert alpha_closed_form(1) == pytest.approx(3.0)
    assert alpha_closed_form(2) == pytest.approx(1 + 2 + 4 / 3 + 4 / 5)


def test_sigma_monotone_in_N_and_bounded():
    for t in np.linspace(0, 6, 13):
        vals = [sigma_closed_form(t, N) for N in (1, 2, 4, 8, 16)]
        assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))
        assert all(v <= alpha_closed_form(N) for v, N in zip(vals, (1, 2, 4, 8, 16)))


def test_sigma_log_growth():
    Ns = [4, 8, 16, 32, 64]
    s = np.array([sigma_closed_form(1.0, N) for N in Ns])
    inc = np.diff(s)
    assert np.polyfit(np.log(Ns), s, 1)[0] > 0
    assert np.all(np.abs(inc[1:] / inc[:-1] - 1) < 0.15)


def test_transition_covariance_is_stationary_lyapunov_defect():
    absn = np.array([0.0, 1.0, 2.0, 5.0])
    r = ModeRates.of(absn)
    h = 0.37
    q11, q12, q22 = transition_covariance(r, h)
    g = flow_matrix(r, h)
    P1 = 1 / r.kappa
    live = absn > 0
    np.testing.assert_allclose(q11[live], (P1 - (g.g11**2 * P1 + g.g12**2))[live], atol=1e-14)
    np.testing.assert_allclose(q12[live], (-(g.g11 * g.g21 * P1 + g.g12 * g.g22))[live], atol=1e-14)
    np.testing.assert_allclose(q22[live], (1 - (g.g21**2 * P1 + g.g22**2))[live], atol=1e-14)
    assert q11[0] == q12[0] == q22[0] == 0


def test_chapman_kolmogorov_covariance():
    r = ModeRates.of(np.array([1.0, 3.0, 9.0]))
    t = 0.8
    one = np.array(transition_covariance(r, t))
    half = np.array(transition_covariance(r, t / 2))
    g = flow_matrix(r, t / 2).matrix()
    for i in range(3):
        Q = np.array([[half[0, i], half[1, i]], [half[1, i], half[2, i]]])
        two = g[i] @ Q @ g[i].T + Q
        np.testing.assert_allclose(two, [[one[0, i], one[1, i]], [one[1, i], one[2, i]]], atol=1e-10)


def test_psi_path_basic_properties():
    rng = RngStream.range(3, 50)
    p = sample_psi_path([0.0, 0.25, 1.0], 4, rng)
    assert np.all(p.psi[:, 0] == 0) and np.all(p.dpsi[:, 0] == 0)
    z = p.modes.is_zero
    assert np.all(p.psi[..., z] == 0)
    # coupled across N: restricting a larger path gives the smaller path
    q = sample_psi_path([0.0, 0.25, 1.0], 2, rng)
    np.testing.assert_array_equal(p.restrict(2).psi, q.psi)


def test_bridge_leaves_base_grid_unchanged():
    rng = RngStream.range(4, 20)
    tg = np.linspace(0, 1, 5)
    a = sample_psi_path(tg, 3, rng)
    b = sample_psi_path(tg, 3, rng, midpoints=True)
    np.testing.assert_array_equal(b.psi[:, b.coarse], a.psi)
    assert len(b.time_grid) == 9


def test_bridge_midpoint_covariance():
    rng = RngStream.range(9, 20000)
    b = sample_psi_path([0.0, 0.6], 1, rng, midpoints=True)
    i = int(np.flatnonzero(~b.modes.is_zero)[0])
    x = b.psi[:, 1, i]
    r = ModeRates.of(b.modes.absn[i : i + 1])
    q11 = transition_covariance(r, 0.3)[0][0]
    se = np.std(np.abs(x) ** 2) / np.sqrt(len(x))
    assert abs(np.mean(np.abs(x) ** 2) - q11) < 4 * se


def test_psi_variance_monte_carlo():
    rng = RngStream.range(7, 10000)
    x = sample_psi_path([0.0, 1.0], 8, rng).point_values()[:, -1]
    d = (x - x.mean()) ** 2
    assert abs(d.mean() - sigma_closed_form(1.0, 8)) < 4 * d.std() / np.sqrt(len(x))


def test_mu1_examples():
    rng = RngStream.range(8, 10000)
    d = sample_mu1(4, rng)
    i10 = int(np.flatnonzero(np.all(d.modes.freqs == [1, 0], axis=1))[0])
    v = np.abs(d.u0[:, i10]) ** 2
    assert abs(v.mean() - 0.5) < 4 * v.std() / 100
    z = d.modes.is_zero
    assert np.all(d.u0[:, z].imag == 0)
    zz = d.u0[:, z].real.ravel()
    assert abs(zz.var() - 1) < 4 * np.sqrt(2) / 100
    m = d.u0.mean(0)
    se = d.u0.std(0) / 100
    assert np.all(np.abs(m.real) < 4 * se + 1e-15) and np.all(np.abs(m.imag) < 4 * se + 1e-15)


def test_phi_starts_at_data_and_is_stationary():
    rng = RngStream.range(10, 10000)
    d = sample_mu1(8, rng)
    p = sample_phi_path([0.0, 0.5, 2.0], 8, d, rng)
    np.testing.assert_array_equal(p.psi[:, 0], d.u0)
    x = p.point_values()
    a = alpha_closed_form(8)
    for j in range(3):
        dj = (x[:, j] - x[:, j].mean()) ** 2
        assert abs(dj.mean() - a) < 4 * dj.std() / 100


def test_phi_equals_flow_of_data_plus_psi():
    rng = RngStream.range(12, 6)
    d = sample_mu1(3, rng)
    p = sample_phi_path([0.0, 0.7], 3, d, rng)
    q = sample_psi_path([0.0, 0.7], 3, rng)
    g = flow_matrix(ModeRates.of(d.modes.absn), 0.7)
    np.testing.assert_allclose(p.psi[:, 1], g.g11 * d.u0 + g.g12 * d.u1 + q.psi[:, 1], atol=1e-13)


def test_ndjson_rows():
    p = sample_psi_path([0.0, 0.5], 1, RngStream.range(1, 2))
    rows = list(p.iter_ndjson())
    assert len(rows) == 2 * 2 * len(p.modes)
    import json

    assert set(json.loads(rows[0])) == {"replica", "n", "t", "re", "im", "d_re", "d_im"}


def test_grid_validation():
    with pytest.raises(ValueError):
        sample_psi_path([0.5, 1.0], 2, RngStream(1))
    with pytest.raises(ValueError):
        sample_psi_path([0.0, 1.0, 1.0], 2, RngStream(1))


def test_tail_shapes():
    z = RngStream.range(5, 4000).normals(Namespace.SCALAR, 0, np.zeros(1))[:, 0, 0]
    rep = tail_estimate(z, 1)
    assert rep.decaying and rep.r2 >= 0.95
    with pytest.raises(ValueError):
        tail_estimate(z[:999], 1)


def test_mode_set_layout():
    m = ModeSet.disc(2)
    assert len(m) == 7  # half of the 13 modes with |n| <= 2, plus zero
    assert m.is_zero[0] and m.is_zero.sum() == 1

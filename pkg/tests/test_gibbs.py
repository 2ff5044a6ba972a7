import json
import warnings

import numpy as np
import pytest

from svnlw.gibbs import (
    LowESSWarning,
    density_log_RN,
    gibbs_ensemble,
    gibbs_lattice,
    invariance_test,
)
from svnlw.noise import alpha_closed_form
from svnlw.spectral import FrequencyLattice, SpectralField, project
from svnlw.wick import DealiasingError

PILOT = {"chains": 200, "iterations": 300, "burn": 100}


@pytest.fixture(scope="module")
def ens():
    return gibbs_ensemble(2000, 1, 3, 7, pilot=PILOT)


def test_log_density_at_zero():
    lat = gibbs_lattice(1, 3)
    # -1/4 * 3 alpha_1^2 with alpha_1 = 1 + 4/2 = 3
    assert alpha_closed_form(1) == pytest.approx(3.0)
    assert density_log_RN(SpectralField.zeros(lat), 1, 3) == pytest.approx(-6.75, abs=1e-12)
    with pytest.raises(ValueError):
        density_log_RN(SpectralField.zeros(lat), 1, 1)
    with pytest.raises(DealiasingError):
        density_log_RN(SpectralField.zeros(FrequencyLattice(4)), 1, 3)


def test_log_density_ignores_modes_outside_band():
    lat = FrequencyLattice(16)
    u = SpectralField.from_modes(lat, {(1, 0): 0.4, (0, 1): 0.2j, (3, 2): 0.7})
    a = density_log_RN(u, 1, 3)
    b = density_log_RN(project(1, u), 1, 3)
    assert a == pytest.approx(b, abs=1e-13)


def test_ensemble_estimates(ens):
    assert ens.size == 2000
    assert ens.estimate(np.ones(ens.size)).mean == pytest.approx(1.0, abs=1e-12)
    i = int(np.flatnonzero((ens.coords.modes.freqs == [1, 0]).all(1))[0])
    odd = ens.estimate(ens.u1[:, i].real)
    assert abs(odd.mean) < 4 * odd.se
    assert ens.ess > 500
    assert ens.warning is None


def test_log_Z_is_seed_stable(ens):
    other = gibbs_ensemble(2000, 1, 3, 8, pilot=PILOT)
    a, b = ens.log_Z(), other.log_Z()
    assert abs(a.mean - b.mean) < 4 * np.hypot(a.se, b.se)


def test_prior_proposal_warns_on_low_ess():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        prior = gibbs_ensemble(1000, 1, 3, 7, proposal="prior")
    assert prior.ess < 50
    assert any(issubclass(w.category, LowESSWarning) for w in caught)
    est = prior.estimate(np.ones(prior.size))
    assert est.warning is not None


def test_ensemble_validation():
    with pytest.raises(ValueError):
        gibbs_ensemble(10, 1, 3, 7)
    with pytest.raises(ValueError):
        gibbs_ensemble(1000, 1, 4, 7)
    with pytest.raises(ValueError):
        gibbs_ensemble(1000, 1, 3, 7, proposal="uniform")


def test_ensemble_is_replica_deterministic():
    a = gibbs_ensemble(1000, 1, 3, 7, proposal="prior")
    b = gibbs_ensemble(1000, 1, 3, 7, proposal="prior")
    assert np.array_equal(a.u1, b.u1) and np.array_equal(a.log_weights, b.log_weights)


def test_short_invariance_run(ens):
    rep = invariance_test(ens, 0.2, h=0.01, shift_from=0.1)
    assert rep.passed
    assert rep.excluded == 0
    names = [r.observable for r in rep.rows]
    assert "|u2(1,0)|^2" in names and "int :u^4:" in names
    assert any(n.startswith("sentinel") for n in names)
    assert len(rep.shifted) == len(rep.rows)
    row = json.loads(rep.ndjson()[0])
    assert set(row) == {"observable", "t0_mean", "t0_se", "tT_mean", "tT_se", "z", "ess", "excluded"}


def test_invariance_does_not_depend_on_threads_or_chunks(ens):
    a = invariance_test(ens, 0.05, h=0.01)
    b = invariance_test(ens, 0.05, h=0.01, threads=2, chunk=300)
    assert a.ndjson() == b.ndjson()


def test_sentinel_stays_gaussian(ens):
    rep = invariance_test(ens, 0.5, h=0.01, nonlinear=False)
    sent = [r for r in rep.rows if r.observable.startswith("sentinel")]
    assert len(sent) == 2
    for r in sent:
        assert r.tT_mean == pytest.approx(1.0, abs=4 * r.tT_se)


def test_time_grid_must_divide():
    ens = gibbs_ensemble(1000, 1, 3, 7, proposal="prior")
    with pytest.raises(ValueError):
        invariance_test(ens, 0.25, h=0.1)

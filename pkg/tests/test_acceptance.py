"""Acceptance suite: every criterion at its stated size and tolerance.

Each experiment runs once per session at its default configuration.  A
criterion passes when all of its checks pass and, where a runtime bound is
stated, the experiment finished within it.  One verdict line per criterion
is printed in the terminal summary.
"""
import time

import pytest

from conftest import record
from svnlw.harness.config import ExperimentSpec
from svnlw.harness.experiments import run_experiment

_CACHE = {}


def run(name, **overrides):
    key = (name, repr(sorted(overrides.items())))
    if key not in _CACHE:
        t0 = time.perf_counter()
        res = run_experiment(ExperimentSpec.default(name, **overrides))
        _CACHE[key] = (res, time.perf_counter() - t0)
    return _CACHE[key]


def select(result, *prefixes):
    out = [r for r in result.reports if r.name.startswith(prefixes)]
    assert out, f"no checks named {prefixes}"
    return out


def verdict(number, title, reports, seconds=None, limit=None):
    failed = [r for r in reports if not r.passed]
    in_time = limit is None or seconds < limit
    ok = not failed and in_time
    parts = [f"{title}: {len(reports) - len(failed)}/{len(reports)} checks"]
    if seconds is not None:
        parts.append(f"{seconds:.1f}s" + (f" (limit {limit:g}s)" if limit else ""))
    parts += [f"failed: {r.name} (estimate {r.estimate:.4g})" for r in failed]
    record(number, ok, "; ".join(parts))
    assert not failed, [r.line() for r in failed]
    assert in_time, f"runtime {seconds:.1f}s over {limit}s"


def test_criterion_1_variance_closed_form():
    res, sec = run("variance")
    verdict(1, "Var Psi_N(t, x0) = sigma_N(t), sigma_N(0), sigma_N(50)", select(res, "Var Psi", "sigma_8(", "sigma_16("), sec, 60)


def test_criterion_2_stationary_variance():
    res, sec = run("variance")
    verdict(2, "Var Phi_8(t, x0) = alpha_8 and E|d_t Phi|^2 = 1", select(res, "Var Phi", "E|d_t Phi"), sec, 60)


def test_criterion_3_log_divergence_against_renormalization():
    res, sec = run("wick")
    verdict(3, "L2 increments 2 pi log 2 within 20%, Wick-square Cauchy differences decreasing", select(res, "E||Psi", "Cauchy difference"), sec, 300)


def test_criterion_4_hermite_algebra():
    res, _ = run("wick")
    verdict(4, "generating function and E[H_k H_m] orthogonality", select(res, "generating function", "E[H_"))


def test_criterion_5_linear_flow_exactness():
    res, sec = run("schauder")
    verdict(5, "semigroup, V(0) = Id, S(0) = 0, zero mode sin t", select(res, "semigroup", "V(0)", "S(0)", "zero mode"), sec)


def test_criterion_6_schauder_scaling():
    res, sec = run("schauder")
    verdict(6, "smoothing exponents -alpha within 0.1", select(res, "smoothing exponent"), sec, 10)


@pytest.mark.xfail(
    strict=True,
    reason="D(N) is still growing over N = 4, 8, 16, 32 at T = 0.1; see the decision ledger entry on coupled convergence",
)
def test_criterion_7_local_theory():
    res, sec = run("lwp")
    verdict(7, "coupled D(N) decreasing for >= 90% of replicas, Picard contraction and agreement", res.reports, sec, 600)


def test_criterion_7_picard_parts():
    res, _ = run("lwp")
    for r in select(res, "Picard", "zero data", "zero Wick"):
        assert r.passed, r.line()


def test_criterion_8_energy():
    res, sec = run("energy")
    verdict(8, "energy identity, zero blowups to T=10, affine envelope of log log(E + e)", res.reports, sec, 1200)


def test_criterion_9_gibbs_invariance():
    res, sec = run("gibbs")
    verdict(9, "Gibbs invariance with ESS, exclusions, OU-only and linear-only controls, log R_1(0)", res.reports, sec, 1800)


def test_supporting_checks():
    """Checks each experiment runs beyond the criteria above; all must pass."""
    claimed = ("Var Psi", "sigma_8(", "sigma_16(", "Var Phi", "E|d_t Phi", "E||Psi", "Cauchy difference", "generating function", "E[H_")
    for name in ("variance", "wick"):
        res, _ = run(name)
        rest = [r for r in res.reports if not r.name.startswith(claimed)]
        assert rest
        for r in rest:
            assert r.passed, r.line()


SMALL = {
    "wick": {"replicas": 1000, "params": {"hermite_replicas": 20000, "divergence_N": [4, 8, 16], "divergence_replicas": 100, "tail_replicas": 1000}},
    "lwp": {"replicas": 4, "T": 0.02, "params": {"N": [4, 8], "v_band": 16}},
    "energy": {"replicas": 4, "T": 0.5, "params": {"N": 8, "b_paths": 200, "identity_T": 0.1}},
    "gibbs": {"replicas": 2000, "T": 0.2, "h": 0.01, "params": {"shift_from": 0.1}},
}


def test_criterion_10_reproducibility():
    checked = []
    # full-size reruns of the cheap experiments, reduced sizes for the expensive ones
    for name in ("variance", "schauder"):
        base, _ = run(name)
        again = run_experiment(ExperimentSpec.default(name, threads=2))
        checked.append((f"{name} (full size)", base.ndjson() == again.ndjson()))
    for name, over in SMALL.items():
        a = run_experiment(ExperimentSpec.default(name, threads=1, **over))
        b = run_experiment(ExperimentSpec.default(name, threads=2, **over))
        c = run_experiment(ExperimentSpec.default(name, threads=1, **over))
        checked.append((f"{name} (reduced size)", a.ndjson() == b.ndjson() == c.ndjson()))
    bad = [n for n, same in checked if not same]
    record(10, not bad, "bit-identical NDJSON across reruns and thread counts for " + ", ".join(n for n, _ in checked) + (f"; differs: {bad}" if bad else ""))
    assert not bad

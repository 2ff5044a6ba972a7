import json
from pathlib import Path

import numpy as np
import pytest

from svnlw.harness.cli import build_parser, main
from svnlw.harness.config import DEFAULT_SEED, EXPERIMENTS, ExperimentSpec, load_spec
from svnlw.harness.experiments import run_experiment
from svnlw.harness.fits import fit_loglinear, upper_envelope
from svnlw.harness.pool import chunks, map_replicas
from svnlw.harness.report import StatReport, write_manifest, write_ndjson
from svnlw.rng import RngStream

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_fit_examples():
    fit = fit_loglinear([0, 1, 2, 3], [1, 3, 5, 7])
    assert fit.slope == pytest.approx(2.0) and fit.intercept == pytest.approx(1.0) and fit.r2 == pytest.approx(1.0)
    assert fit.points == 4
    assert np.allclose(fit.predict([4, 5]), [9, 11])
    noisy = fit_loglinear([0, 1, 2, 3], [0, 1.2, 1.8, 3.1])
    assert 0.9 < noisy.r2 < 1.0
    with pytest.raises(ValueError):
        fit_loglinear([0, 1], [0, 1])
    with pytest.raises(ValueError):
        fit_loglinear([1, 1, 1], [0, 1, 2])
    with pytest.raises(ValueError):
        fit_loglinear([0, 1, 2], [0, np.nan, 2])


def test_upper_envelope_lies_above():
    x = np.linspace(0, 1, 20)
    y = np.sin(7 * x) + x
    env = upper_envelope(x, y)
    assert np.all(env.predict(x) >= y - 1e-15)
    fixed = upper_envelope(x, y, slope=0.0)
    assert fixed.slope == 0.0 and fixed.intercept == pytest.approx(y.max())


@pytest.mark.parametrize(
    "kind,estimate,se,tol,ref,ok",
    [
        ("z", 1.3, 0.1, 4.0, 1.0, True),
        ("z", 1.5, 0.1, 4.0, 1.0, False),
        ("abs", 1e-13, 0.0, 1e-12, 0.0, True),
        ("rel", 4.7, 0.0, 0.2, 4.355, True),
        ("rel", 6.0, 0.0, 0.2, 4.355, False),
        ("upper", 0.5, 0.0, 0.5, 0.0, False),
        ("at_most", 0.5, 0.0, 0.5, 0.0, True),
        ("lower", 600.0, 0.0, 500.0, 0.0, True),
        ("at_least", 0.9, 0.0, 0.9, 0.0, True),
        ("above", 1.0, 0.1, 4.0, 0.5, True),
        ("above", 1.0, 0.2, 4.0, 0.5, False),
        ("true", 1.0, 0.0, 1.0, 0.0, True),
        ("true", 0.0, 0.0, 1.0, 0.0, False),
    ],
)
def test_report_kinds(kind, estimate, se, tol, ref, ok):
    r = StatReport("q", estimate, se, 10, kind, tol, ref)
    assert r.passed is ok
    assert r.recompute() is ok
    assert ("[PASS]" if ok else "[FAIL]") in r.line()


def test_report_rejects_unknown_kind_and_nan():
    with pytest.raises(ValueError):
        StatReport("q", 1.0, 0.0, 1, "approx", 1.0)
    assert not StatReport("q", float("nan"), 0.0, 1, "upper", 1.0).passed


def test_report_json_roundtrip(tmp_path):
    r = StatReport("q", np.float64(1.2), 0.1, 3, "z", 4.0, 1.0, "variance", {"N": np.int64(8), "t": [np.float64(0.5)]})
    d = json.loads(r.to_json())
    assert d["parameters"] == {"N": 8, "t": [0.5]} and d["passed"] is True
    again = StatReport(**{k: v for k, v in d.items() if k != "passed"})
    assert again.passed == r.passed
    write_ndjson(tmp_path / "a.ndjson", [r.to_json(), {"x": np.arange(2)}])
    lines = (tmp_path / "a.ndjson").read_text().splitlines()
    assert json.loads(lines[1]) == {"x": [0, 1]}
    doc = write_manifest(tmp_path / "m.json", "variance", {"a": 1}, 5, [r])
    assert doc["all_passed"] and json.loads((tmp_path / "m.json").read_text())["seed"] == 5


def test_spec_defaults_and_overrides():
    s = ExperimentSpec.default("lwp", seed=3, params={"N": [4, 8]})
    assert s.seed == 3 and s.params["N"] == [4, 8] and s.params["v_band"] == 64
    assert ExperimentSpec.default("gibbs").seed == DEFAULT_SEED
    with pytest.raises(ValueError):
        ExperimentSpec(name="nope")
    with pytest.raises(ValueError):
        ExperimentSpec(name="wick", seed=-1)


@pytest.mark.parametrize("name", EXPERIMENTS)
def test_shipped_configs_match_defaults(name):
    spec = load_spec(CONFIGS / f"{name}.yaml", name)
    assert spec.to_dict() == ExperimentSpec.default(name).to_dict()


def test_load_spec_formats(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"name": "schauder", "seed": 9}))
    assert load_spec(p).seed == 9
    y = tmp_path / "c.yaml"
    y.write_text("schauder:\n  seed: 4\n")
    assert load_spec(y, "schauder").seed == 4
    with pytest.raises(ValueError):
        load_spec(p, "wick")
    y.write_text("- 1\n")
    with pytest.raises(ValueError):
        load_spec(y, "schauder")


def test_chunks_do_not_depend_on_threads():
    rng = RngStream.range(1, 10)
    assert [len(c) for c in chunks(rng, 4)] == [4, 4, 2]
    f = lambda r: r.normals(0, np.uint64(0), np.arange(3, dtype=np.uint64))
    a = np.concatenate(map_replicas(f, rng, 1, 4))
    b = np.concatenate(map_replicas(f, rng, 3, 4))
    assert np.array_equal(a, b)


def test_cli_schauder_run(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["schauder", "--out", str(out), "--seed", "5"])
    assert code == 0
    text = capsys.readouterr().out
    assert "checks passed" in text and "[PASS]" in text
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["experiment"] == "schauder" and manifest["seed"] == 5 and manifest["all_passed"]
    rows = [json.loads(x) for x in (out / "results.ndjson").read_text().splitlines()]
    assert rows and all(r["type"] in ("check", "data") for r in rows)


def test_cli_errors(tmp_path, capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["variance", "--seed", str(2**64)])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["variance", "--replicas", "0"])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["unknown"])
    assert main(["schauder", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_results_do_not_depend_on_threads():
    over = {"replicas": 600, "params": {"sigma_points": [[8, 1.0]], "phi_times": [0.0, 0.5], "dphi_modes": [[1, 0]], "growth_N": [4, 8, 16]}}
    a = run_experiment(ExperimentSpec.default("variance", threads=1, **over))
    b = run_experiment(ExperimentSpec.default("variance", threads=2, **over))
    assert a.ndjson() == b.ndjson()

"""Command line entry point: ``svnlw <experiment> [options]``.

Every run writes ``manifest.json`` (all parameters, seed and code
version), ``results.ndjson`` (one row per check followed by the data
rows) and any experiment-specific artifacts into the output directory.
The exit code is 0 exactly when all declared checks pass.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import DEFAULT_SEED, EXPERIMENTS, ExperimentSpec, load_spec
from .experiments import run_experiment
from .report import write_manifest, write_ndjson

log = logging.getLogger("svnlw")

HELP = {
    "variance": "variance of the stochastic convolution and of the stationary process",
    "wick": "Hermite algebra, Wick-power moments, log divergence and tail shapes",
    "lwp": "coupled convergence in the noise band and Picard contraction",
    "energy": "energy identity and stochastic cubic growth",
    "gibbs": "invariance of the truncated Gibbs measure under the split dynamics",
    "schauder": "linear propagator exactness and smoothing exponents",
}


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="svnlw", description="Run a named experiment and check it against its declared tolerances.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    for name in EXPERIMENTS:
        s = sub.add_parser(name, help=HELP[name], description=HELP[name])
        s.add_argument("--config", type=Path, help="YAML or JSON file with an experiment spec")
        s.add_argument("--seed", type=_u64, help=f"master seed (default {DEFAULT_SEED})")
        s.add_argument("--out", type=Path, help="output directory (default runs/<experiment>)")
        s.add_argument("--replicas", type=_positive, help="number of Monte Carlo replicas")
        s.add_argument("--threads", type=_positive, help="worker threads; results do not depend on it")
    return p


def resolve_spec(args) -> ExperimentSpec:
    spec = load_spec(args.config, args.experiment) if args.config else ExperimentSpec.default(args.experiment)
    for key in ("seed", "replicas", "threads"):
        if getattr(args, key) is not None:
            setattr(spec, key, getattr(args, key))
    if args.out is not None:
        spec.out = str(args.out)
    if spec.out is None:
        spec.out = str(Path("runs") / spec.name)
    return spec


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        spec = resolve_spec(args)
    except (OSError, ValueError) as exc:
        print(f"svnlw: {exc}", file=sys.stderr)
        return 2
    log.info("running %s with seed %d into %s", spec.name, spec.seed, spec.out)
    result = run_experiment(spec)
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ndjson(out / "results.ndjson", result.ndjson())
    for fname, writer in result.artifacts.items():
        writer(out / fname)
    write_manifest(out / "manifest.json", spec.name, spec.to_dict(), spec.seed, result.reports, {"artifacts": sorted(result.artifacts)})
    for r in result.reports:
        print(r.line())
    ok = result.passed
    print(f"{spec.name}: {sum(r.passed for r in result.reports)}/{len(result.reports)} checks passed")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())

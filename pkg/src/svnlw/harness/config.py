"""Experiment specifications and their YAML/JSON configuration files."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

__all__ = ["ExperimentSpec", "DEFAULTS", "load_spec", "EXPERIMENTS"]

EXPERIMENTS = ("variance", "wick", "lwp", "energy", "gibbs", "schauder")

DEFAULT_SEED = 20240917

DEFAULTS: dict[str, dict] = {
    "variance": {
        "replicas": 10000,
        "params": {
            "sigma_points": [[8, 0.5], [8, 1.0], [16, 1.0]],
            "phi_N": 8,
            "phi_times": [0.0, 0.5, 2.0],
            "dphi_modes": [[0, 0], [1, 0], [1, 1], [2, 1], [0, 3]],
            "growth_N": [4, 8, 16, 32, 64],
            "growth_t": 1.0,
        },
        "tolerances": {"z": 4.0, "exact": 1e-10, "increment_ratio": 0.15},
    },
    "wick": {
        "replicas": 10000,
        "params": {
            "N": 8,
            "t": 1.0,
            "hermite_sigmas": ["1", "alpha_8"],
            "hermite_degree": 4,
            "hermite_replicas": 1000000,
            "generating": [0.3, 0.7, 2.0],
            "divergence_N": [4, 8, 16, 32, 64],
            "divergence_replicas": 400,
            "tail_replicas": 2000,
        },
        "tolerances": {"z": 4.0, "generating": 1e-10, "exact": 1e-12, "log_increment": 0.2, "tail_r2_k1": 0.95, "tail_r2_k2": 0.9},
    },
    "lwp": {
        "replicas": 20,
        "k": 3,
        "T": 0.1,
        "h": 0.002,
        "eps": 0.1,
        "params": {
            "N": [4, 8, 16, 32],
            "v_band": 64,
            "record_every": 5,
            "picard_T": 0.05,
            "picard_h": 0.0001,
            "picard_iterations": 12,
            "picard_band": 3,
        },
        "tolerances": {"monotone_fraction": 0.9, "picard_agreement": 1e-6, "reduction": 1e-12},
    },
    "energy": {
        "replicas": 20,
        "k": 3,
        "T": 10.0,
        "h": 0.002,
        "eps": 0.1,
        "params": {
            "N": 16,
            "record_every": 50,
            "identity_N": 8,
            "identity_h": 0.001,
            "identity_T": 1.0,
            "identity_replicas": 4,
            "b_paths": 1000,
            "b_dt": 0.1,
        },
        "tolerances": {"identity_residual": 1e-3, "blowups": 0},
    },
    "gibbs": {
        "replicas": 10000,
        "k": 3,
        "T": 2.0,
        "h": 0.001,
        "params": {
            "N": 1,
            "proposal": "mixture",
            "components": 8,
            "shift_from": 1.0,
            "controls": True,
            "log_R_N": [1, 2, 4, 8],
        },
        "tolerances": {"z": 4.0, "ess": 500.0, "excluded_fraction": 0.01, "log_R0": 1e-12},
    },
    "schauder": {
        "replicas": 1,
        "params": {"alphas": [0.0, 0.5, 1.0], "t_min_log2": -8, "t_max_log2": -2},
        "tolerances": {"slope": 0.1, "semigroup": 1e-10, "zero_mode": 1e-12},
    },
}


@dataclass
class ExperimentSpec:
    """Parameters of one named experiment; every run records all of them."""

    name: str
    seed: int = DEFAULT_SEED
    replicas: int = 1
    k: int = 3
    T: float = 1.0
    h: float = 1e-3
    eps: float = 0.1
    threads: int = 1
    out: str | None = None
    params: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.name!r}; choose from {EXPERIMENTS}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")

    @classmethod
    def default(cls, name: str, **overrides) -> "ExperimentSpec":
        base = copy.deepcopy(DEFAULTS.get(name, {}))
        params = base.pop("params", {})
        tols = base.pop("tolerances", {})
        params.update(overrides.pop("params", {}) or {})
        tols.update(overrides.pop("tolerances", {}) or {})
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(name=name, params=params, tolerances=tols, **base)

    def to_dict(self) -> dict:
        return asdict(self)


def load_spec(path, name: str | None = None) -> ExperimentSpec:
    """Read a YAML or JSON file holding one spec (or a mapping ``name -> spec``)."""
    text = Path(path).read_text()
    doc = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ValueError("configuration must be a mapping")
    if "name" not in doc and name is not None and name in doc:
        doc = doc[name]
    doc = dict(doc)
    doc_name = doc.pop("name", name)
    if name is not None and doc_name != name:
        raise ValueError(f"config describes experiment {doc_name!r}, not {name!r}")
    return ExperimentSpec.default(doc_name, **doc)

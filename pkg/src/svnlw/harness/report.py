"""Statistical reports and run manifests."""
from __future__ import annotations

import json
import math
import platform
import subprocess
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

__all__ = ["StatReport", "write_ndjson", "write_manifest", "code_version"]

KINDS = ("z", "abs", "rel", "upper", "lower", "at_most", "at_least", "above", "true")


def _clean(x):
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    return x


@dataclass
class StatReport:
    """One checked quantity.

    ``kind`` fixes how ``passed`` follows from the stored fields:

    * ``z``: ``|estimate - reference| <= tolerance * se``
    * ``abs``: ``|estimate - reference| <= tolerance``
    * ``rel``: ``|estimate - reference| <= tolerance * |reference|``
    * ``upper``: ``estimate < tolerance``; ``lower``: ``estimate > tolerance``
    * ``at_most`` / ``at_least``: the inclusive versions
    * ``above``: ``estimate - reference > tolerance * se`` (one-sided)
    * ``true``: ``estimate == 1`` (a boolean property, stored as 0/1)
    """

    name: str
    estimate: float
    se: float
    replicas: int
    kind: str
    tolerance: float
    reference: float = 0.0
    experiment: str = ""
    parameters: dict = field(default_factory=dict)
    passed: bool = field(init=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown report kind {self.kind!r}")
        self.passed = self.recompute()

    def recompute(self) -> bool:
        e, r, t = float(self.estimate), float(self.reference), float(self.tolerance)
        if not math.isfinite(e):
            return False
        if self.kind == "z":
            return abs(e - r) <= t * float(self.se)
        if self.kind == "abs":
            return abs(e - r) <= t
        if self.kind == "rel":
            return abs(e - r) <= t * abs(r)
        if self.kind == "upper":
            return e < t
        if self.kind == "lower":
            return e > t
        if self.kind == "at_most":
            return e <= t
        if self.kind == "at_least":
            return e >= t
        if self.kind == "above":
            return e - r > t * float(self.se)
        return e == 1.0

    @property
    def z(self) -> float:
        return (self.estimate - self.reference) / self.se if self.se > 0 else float("nan")

    def to_dict(self) -> dict:
        return _clean(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f" se={self.se:.3g}" if self.se else ""
        return f"[{tag}] {self.name}: estimate={self.estimate:.6g} reference={self.reference:.6g}{extra} ({self.kind} tol {self.tolerance:g})"


def write_ndjson(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in rows:
            fh.write((r if isinstance(r, str) else json.dumps(_clean(r), sort_keys=True)) + "\n")


def code_version() -> str:
    from .. import __version__

    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True, cwd=Path(__file__).parent, timeout=5)
        sha = rev.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        sha = ""
    return f"{__version__}+{sha}" if sha else __version__


def write_manifest(path, experiment: str, parameters: dict, seed: int, reports, extra: dict | None = None) -> dict:
    """Single JSON document describing one run."""
    doc = {
        "experiment": experiment,
        "seed": int(seed),
        "parameters": _clean(parameters),
        "code_version": code_version(),
        "numpy": np.__version__,
        "python": platform.python_version(),
        "created": datetime.now(timezone.utc).isoformat(),
        "checks": len(reports),
        "passed": sum(r.passed for r in reports),
        "all_passed": all(r.passed for r in reports),
    }
    if extra:
        doc.update(_clean(extra))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc

"""Self-describing result records shared by every property check."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def config_hash(config: Any) -> str:
    """Short stable hash of a JSON-able configuration."""
    blob = json.dumps(_jsonable(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EstimateReport:
    """Outcome of one named check.

    ``terms`` holds ``(term, value, stderr)`` rows; ``lhs``/``rhs`` hold
    per-path samples when the check compares two sides of an inequality.
    ``ratio`` is only formed where the right side exceeds ``floor``.
    """

    name: str
    passed: bool = True
    tolerance: float = 0.0
    terms: list[tuple[str, float, float]] = field(default_factory=list)
    lhs: np.ndarray | None = None
    rhs: np.ndarray | None = None
    ratio: float = float("nan")
    floor: float = 1e-14
    flags: dict[str, bool] = field(default_factory=dict)
    details: dict[str, Any] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)

    def add(self, term: str, value: float, stderr: float = 0.0) -> None:
        self.terms.append((term, float(value), float(stderr)))

    def term(self, name: str) -> float:
        for t, v, _ in self.terms:
            if t == name:
                return v
        raise KeyError(name)

    def set_ratio(self, lhs_mean: float, rhs_mean: float) -> float:
        if rhs_mean > self.floor:
            self.ratio = lhs_mean / rhs_mean
        else:
            self.ratio = float("nan")
            self.flags["degenerate"] = lhs_mean > self.floor
        return self.ratio

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def to_dict(self) -> dict[str, Any]:
        return _jsonable({
            "name": self.name,
            "pass": bool(self.passed),
            "tolerance": self.tolerance,
            "ratio": self.ratio,
            "flags": self.flags,
            "terms": [{"term": t, "value": v, "stderr": s} for t, v, s in self.terms],
            "details": self.details,
            "config": self.config,
            "config_hash": self.config_hash,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = ",".join(k for k, v in self.flags.items() if v)
        ratio = "" if np.isnan(self.ratio) else f" ratio={self.ratio:.6g}"
        return f"[{status}] {self.name}{ratio}" + (f" ({extra})" if extra else "")

    def __bool__(self) -> bool:
        return bool(self.passed)


def mean_stderr(samples: np.ndarray) -> tuple[float, float]:
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    mean = float(np.mean(samples))
    if n < 2:
        return mean, 0.0
    return mean, float(np.std(samples, ddof=1) / np.sqrt(n))

"""Estimation settings shared by every fitting routine."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any


@dataclass(frozen=True)
class FitConfig:
    """Tuning constants for EM fits, item bounds and the dimensionality test.

    Every default is written into report bundles so a run can be repeated
    from its output directory alone.
    """

    tolerance: float = 1e-8
    param_tolerance: float = 1e-8
    max_iterations: int = 5000
    n_random_starts: int = 19
    seed: int = 0
    epsilon: float = 1e-6
    alpha: float = 0.05
    gamma_min: float = 0.05
    gamma_max: float = 20.0
    beta_max: float = 10.0
    theta_max: float = 30.0
    inner_tolerance: float = 1e-10
    max_inner: int = 50
    prefit_iterations: int = 50
    threads: int = 1
    merge_start: str = "warm"

    def __post_init__(self):
        positive = (
            "tolerance", "param_tolerance", "max_iterations", "epsilon", "gamma_min", "gamma_max",
            "beta_max", "theta_max", "inner_tolerance", "max_inner", "threads",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.n_random_starts < 0:
            raise ValueError("n_random_starts must be >= 0")
        if self.prefit_iterations < 0:
            raise ValueError("prefit_iterations must be >= 0")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.epsilon < 0.5:
            raise ValueError("epsilon must be below 0.5")
        if self.gamma_min >= self.gamma_max:
            raise ValueError("gamma_min must be below gamma_max")
        if self.merge_start not in ("warm", "cold"):
            raise ValueError(f"merge_start must be 'warm' or 'cold', got {self.merge_start!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def with_overrides(self, **overrides: Any) -> "FitConfig":
        """Return a copy with the non-None entries of ``overrides`` applied."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, mapping: dict[str, Any]) -> "FitConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**mapping)

    @classmethod
    def from_json(cls, path: str | Path) -> "FitConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

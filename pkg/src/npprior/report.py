"""Posterior summaries and machine-readable reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
from numpy.typing import ArrayLike

from . import __version__, numkit
from .conjugate import DeltaPosterior


@dataclass(frozen=True)
class ParameterSummary:
    mean: float
    sd: float
    lower: float
    upper: float
    mass: float = 0.95
    interval: str = "hpd"

    @classmethod
    def from_draws(cls, x: ArrayLike, mass: float = 0.95, interval: str = "hpd") -> "ParameterSummary":
        x = np.asarray(x, dtype=float)
        lo, hi = numkit.credible_interval(x, mass, interval)
        return cls(float(x.mean()), float(x.std(ddof=1)), lo, hi, mass, interval)

    def scaled(self, factor: float) -> "ParameterSummary":
        lo, hi = sorted((self.lower * factor, self.upper * factor))
        return ParameterSummary(self.mean * factor, self.sd * abs(factor), lo, hi, self.mass, self.interval)


@dataclass(frozen=True)
class DeltaSummary:
    mean: float
    mode: float
    sd: float
    multimodal: bool
    lower: float = 0.0
    truncated: bool = False
    degenerate: bool = False

    @classmethod
    def from_posterior(cls, post: DeltaPosterior) -> "DeltaSummary":
        return cls(post.mean, post.mode, post.sd, post.multimodal_flag, post.lower, post.truncated, post.degenerate)


@dataclass(frozen=True)
class PosteriorReport:
    """Summaries for one analysis, with enough of the configuration to rerun it."""

    method: str
    parameters: Dict[str, ParameterSummary]
    delta: Optional[DeltaSummary]
    config: Dict[str, Any] = field(default_factory=dict)
    version: str = __version__
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "parameters": {k: asdict(v) for k, v in self.parameters.items()},
            "delta": asdict(self.delta) if self.delta is not None else None,
            "config": self.config,
            "version": self.version,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_rows(self) -> List[dict]:
        rows = []
        for name, s in self.parameters.items():
            rows.append({"method": self.method, "parameter": name, **asdict(s)})
        if self.delta is not None:
            d = self.delta
            rows.append(
                {"method": self.method, "parameter": "delta", "mean": d.mean, "sd": d.sd,
                 "lower": float("nan"), "upper": float("nan"), "mass": float("nan"), "interval": f"mode={d.mode}"}
            )
        return rows

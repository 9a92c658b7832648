"""Data containers, initial priors and the compatibility statistic.

Three families are supported: binomial (Bernoulli trials), multinomial and
the normal linear model (with the intercept-only normal population as the
``k = 1`` special case). Every container holds sufficient statistics only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Sequence, Union

import jsonschema
import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ConfigurationError, DomainError


def _count(name: str, v: Any) -> int:
    fv = float(v)
    if not math.isfinite(fv) or fv < 0 or not fv.is_integer():
        raise DomainError(f"{name} must be a nonnegative integer, got {v!r}")
    return int(fv)


@dataclass(frozen=True)
class BinomialData:
    """``y`` successes out of ``n`` Bernoulli trials."""

    n: int
    y: int

    def __post_init__(self) -> None:
        n, y = _count("n", self.n), _count("y", self.y)
        if y > n:
            raise DomainError(f"y={y} exceeds n={n}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "y", y)

    @property
    def failures(self) -> int:
        return self.n - self.y

    def to_multinomial(self) -> "MultinomialData":
        return MultinomialData((self.y, self.n - self.y))


@dataclass(frozen=True)
class MultinomialData:
    """Category counts; the category order must agree between datasets."""

    counts: tuple

    def __post_init__(self) -> None:
        counts = tuple(_count("count", c) for c in self.counts)
        if len(counts) < 2:
            raise DomainError("multinomial data need at least two categories")
        if not any(counts):
            raise DomainError("multinomial data need at least one positive count")
        object.__setattr__(self, "counts", counts)

    @property
    def k(self) -> int:
        return len(self.counts)

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def array(self) -> NDArray[np.float64]:
        return np.asarray(self.counts, dtype=float)

    def to_binomial(self) -> BinomialData:
        if self.k != 2:
            raise DomainError("only two-category data map onto BinomialData")
        return BinomialData(self.n, self.counts[0])


@dataclass(frozen=True)
class NormalLinearData:
    """Sufficient statistics of ``Y = X beta + eps``.

    ``xtx`` is X'X, ``beta_hat`` the least-squares estimate and ``s`` the
    residual sum of squares.
    """

    n: int
    xtx: NDArray[np.float64]
    beta_hat: NDArray[np.float64]
    s: float

    def __post_init__(self) -> None:
        n = _count("n", self.n)
        xtx = np.atleast_2d(np.asarray(self.xtx, dtype=float))
        beta = np.atleast_1d(np.asarray(self.beta_hat, dtype=float))
        k = beta.size
        if xtx.shape != (k, k):
            raise DomainError(f"xtx must be {k}x{k}, got shape {xtx.shape}")
        if not np.allclose(xtx, xtx.T, rtol=1e-12, atol=0.0):
            raise DomainError("xtx must be symmetric")
        try:
            np.linalg.cholesky(xtx)
        except np.linalg.LinAlgError as exc:
            raise DomainError("xtx must be positive definite") from exc
        s = float(self.s)
        if not math.isfinite(s) or s < 0:
            raise DomainError(f"s must be a finite nonnegative number, got {self.s!r}")
        xtx.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "xtx", xtx)
        object.__setattr__(self, "beta_hat", beta)
        object.__setattr__(self, "s", s)

    @property
    def k(self) -> int:
        return self.beta_hat.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NormalLinearData):
            return NotImplemented
        return (
            self.n == other.n
            and self.s == other.s
            and np.array_equal(self.xtx, other.xtx)
            and np.array_equal(self.beta_hat, other.beta_hat)
        )

    def __hash__(self) -> int:
        return hash((self.n, self.s, self.xtx.tobytes(), self.beta_hat.tobytes()))


@dataclass(frozen=True)
class NormalSummary:
    """Sample size, sample mean and sample standard deviation (n - 1 divisor)."""

    n: int
    mean: float
    sd: float

    def __post_init__(self) -> None:
        n = _count("n", self.n)
        if n < 2:
            raise DomainError("a normal summary needs n >= 2")
        if not math.isfinite(float(self.mean)):
            raise DomainError("mean must be finite")
        if not math.isfinite(float(self.sd)) or float(self.sd) < 0:
            raise DomainError("sd must be finite and nonnegative")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "sd", float(self.sd))

    def to_linear(self) -> NormalLinearData:
        return NormalLinearData(
            n=self.n,
            xtx=np.array([[float(self.n)]]),
            beta_hat=np.array([self.mean]),
            s=(self.n - 1) * self.sd**2,
        )


FamilyData = Union[BinomialData, MultinomialData, NormalLinearData, NormalSummary]


# ---------------------------------------------------------------------------
# initial priors
# ---------------------------------------------------------------------------


def _positive(name: str, v: float) -> float:
    v = float(v)
    if not math.isfinite(v) or v <= 0:
        raise DomainError(f"{name} must be finite and > 0, got {v!r}")
    return v


@dataclass(frozen=True)
class BetaPrior:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", _positive("alpha", self.alpha))
        object.__setattr__(self, "beta", _positive("beta", self.beta))


@dataclass(frozen=True)
class DirichletPrior:
    alpha: tuple

    def __post_init__(self) -> None:
        alpha = tuple(_positive("alpha", a) for a in self.alpha)
        if len(alpha) < 2:
            raise DomainError("a Dirichlet prior needs at least two categories")
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def symmetric(cls, k: int, value: float) -> "DirichletPrior":
        return cls(tuple([value] * k))

    @property
    def array(self) -> NDArray[np.float64]:
        return np.asarray(self.alpha, dtype=float)


@dataclass(frozen=True)
class NormalLinearPrior:
    """pi0(beta, sigma^2) ∝ sigma^(-2a - kb) exp{-b (beta - mu0)' R (beta - mu0) / (2 sigma^2)}.

    With ``b = 0`` the prior on beta is flat and ``mu0``/``R`` are ignored.
    """

    a: float = 1.0
    b: int = 0
    mu0: NDArray[np.float64] | None = None
    R: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", _positive("a", self.a))
        if self.b not in (0, 1):
            raise DomainError(f"b must be 0 or 1, got {self.b!r}")
        if self.b == 1:
            if self.mu0 is None or self.R is None:
                raise DomainError("b = 1 needs mu0 and R")
            mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=float))
            R = np.atleast_2d(np.asarray(self.R, dtype=float))
            if R.shape != (mu0.size, mu0.size):
                raise DomainError("R must be k x k with k = len(mu0)")
            try:
                np.linalg.cholesky(R)
            except np.linalg.LinAlgError as exc:
                raise DomainError("R must be positive definite") from exc
            object.__setattr__(self, "mu0", mu0)
            object.__setattr__(self, "R", R)

    def R_for(self, k: int) -> NDArray[np.float64]:
        if self.b == 0:
            return np.zeros((k, k))
        if self.R.shape != (k, k):
            raise DomainError(f"prior dimension {self.R.shape[0]} does not match k={k}")
        return self.R

    def mu0_for(self, k: int) -> NDArray[np.float64]:
        if self.b == 0:
            return np.zeros(k)
        return self.mu0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NormalLinearPrior):
            return NotImplemented
        same = self.a == other.a and self.b == other.b
        if self.b == 1 and same:
            same = np.array_equal(self.mu0, other.mu0) and np.array_equal(self.R, other.R)
        return same

    def __hash__(self) -> int:
        return hash((self.a, self.b))


ConjugatePrior = Union[BetaPrior, DirichletPrior, NormalLinearPrior]


@dataclass(frozen=True)
class DeltaPrior:
    """Initial prior on the power parameter: Beta(alpha, beta) or a point mass."""

    kind: str = "beta"
    alpha_delta: float = 1.0
    beta_delta: float = 1.0
    delta0: float | None = None

    def __post_init__(self) -> None:
        if self.kind == "beta":
            object.__setattr__(self, "alpha_delta", _positive("alpha_delta", self.alpha_delta))
            object.__setattr__(self, "beta_delta", _positive("beta_delta", self.beta_delta))
        elif self.kind == "fixed":
            if self.delta0 is None or not 0.0 <= float(self.delta0) <= 1.0:
                raise DomainError(f"delta0 must lie in [0, 1], got {self.delta0!r}")
            object.__setattr__(self, "delta0", float(self.delta0))
        else:
            raise DomainError(f"unknown delta prior kind {self.kind!r}")

    @classmethod
    def beta(cls, alpha_delta: float = 1.0, beta_delta: float = 1.0) -> "DeltaPrior":
        return cls("beta", alpha_delta, beta_delta)

    @classmethod
    def uniform(cls) -> "DeltaPrior":
        return cls("beta", 1.0, 1.0)

    @classmethod
    def fixed(cls, delta0: float) -> "DeltaPrior":
        return cls("fixed", delta0=delta0)

    @property
    def is_fixed(self) -> bool:
        return self.kind == "fixed"

    def log_density(self, delta: ArrayLike) -> np.ndarray:
        """Unnormalised log-density (kernel) on [0, 1]."""
        if self.is_fixed:
            raise DomainError("a fixed delta prior has no density")
        d = np.asarray(delta, dtype=float)
        with np.errstate(divide="ignore"):
            left = 0.0 if self.alpha_delta == 1.0 else (self.alpha_delta - 1.0) * np.log(d)
            right = 0.0 if self.beta_delta == 1.0 else (self.beta_delta - 1.0) * np.log1p(-d)
        return left + right + np.zeros_like(d)

    def d_log_density(self, delta: ArrayLike) -> np.ndarray:
        d = np.asarray(delta, dtype=float)
        return (self.alpha_delta - 1.0) / d - (self.beta_delta - 1.0) / (1.0 - d)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def compatibility_statistic(data: FamilyData) -> NDArray[np.float64]:
    """Sample average of the exponential family's sufficient statistics.

    binomial: ``[y/n]``; multinomial: ``counts/n`` without the last category;
    normal: ``[mean of x, mean of x^2]`` for the intercept-only model, and
    ``[X'Y/n, Y'Y/n]`` for a general design.
    """
    if isinstance(data, BinomialData):
        if data.n == 0:
            raise DomainError("compatibility statistic undefined for n = 0")
        return np.array([data.y / data.n])
    if isinstance(data, MultinomialData):
        return data.array[:-1] / data.n
    if isinstance(data, NormalSummary):
        data = data.to_linear()
    if isinstance(data, NormalLinearData):
        if data.n == 0:
            raise DomainError("compatibility statistic undefined for n = 0")
        xty = data.xtx @ data.beta_hat
        yty = data.s + float(data.beta_hat @ xty)
        return np.concatenate([xty, [yty]]) / data.n
    raise TypeError(f"unsupported data type {type(data).__name__}")


def binomial_from_raw(observations: Sequence[int]) -> BinomialData:
    x = np.asarray(observations)
    if x.size and not np.all((x == 0) | (x == 1)):
        raise DomainError("binary observations must be 0 or 1")
    return BinomialData(int(x.size), int(x.sum()))


def multinomial_from_raw(labels: Sequence[int], k: int) -> MultinomialData:
    x = np.asarray(labels, dtype=int)
    if x.size and (x.min() < 0 or x.max() >= k):
        raise DomainError(f"category labels must lie in 0..{k - 1}")
    return MultinomialData(tuple(np.bincount(x, minlength=k).tolist()))


def normal_summary_from_raw(x: Sequence[float]) -> NormalSummary:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("observations must be finite")
    return NormalSummary(arr.size, float(arr.mean()), float(arr.std(ddof=1)))


def normal_linear_from_raw(X: ArrayLike, y: ArrayLike) -> NormalLinearData:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise DomainError("design matrix and response lengths differ")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DomainError("design matrix and response must be finite")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise DomainError("design matrix is rank deficient")
    xtx = X.T @ X
    beta = np.linalg.solve(xtx, X.T @ y)
    resid = y - X @ beta
    return NormalLinearData(y.size, xtx, beta, float(resid @ resid))


def from_raw(family: str, *args, **kwargs) -> FamilyData:
    """Dispatch to the family-specific constructor from raw observations."""
    builders = {
        "binomial": binomial_from_raw,
        "multinomial": multinomial_from_raw,
        "normal_summary": normal_summary_from_raw,
        "normal_linear": normal_linear_from_raw,
    }
    try:
        return builders[family](*args, **kwargs)
    except KeyError:
        raise ConfigurationError(f"unknown family {family!r}") from None


def pool(datasets: Sequence[FamilyData]) -> FamilyData:
    """Combine independent samples of one family into a single sample."""
    if not datasets:
        raise DomainError("nothing to pool")
    first = datasets[0]
    if isinstance(first, BinomialData):
        return BinomialData(sum(d.n for d in datasets), sum(d.y for d in datasets))
    if isinstance(first, MultinomialData):
        if len({d.k for d in datasets}) != 1:
            raise DomainError("multinomial datasets differ in k")
        return MultinomialData(tuple(np.sum([d.counts for d in datasets], axis=0).tolist()))
    if isinstance(first, NormalSummary):
        n = sum(d.n for d in datasets)
        mean = sum(d.n * d.mean for d in datasets) / n
        ss = sum((d.n - 1) * d.sd**2 + d.n * (d.mean - mean) ** 2 for d in datasets)
        return NormalSummary(n, mean, math.sqrt(ss / (n - 1)))
    if isinstance(first, NormalLinearData):
        xtx = sum(d.xtx for d in datasets)
        xty = sum(d.xtx @ d.beta_hat for d in datasets)
        beta = np.linalg.solve(xtx, xty)
        yty = sum(d.s + d.beta_hat @ d.xtx @ d.beta_hat for d in datasets)
        s = max(float(yty - beta @ xtx @ beta), 0.0)
        return NormalLinearData(sum(d.n for d in datasets), xtx, beta, s)
    raise TypeError(f"unsupported data type {type(first).__name__}")


# ---------------------------------------------------------------------------
# JSON data schema
# ---------------------------------------------------------------------------

_RECORDS = {
    "binomial": {
        "type": "object",
        "required": ["n", "y"],
        "properties": {"n": {"type": "integer", "minimum": 0}, "y": {"type": "integer", "minimum": 0}},
    },
    "multinomial": {
        "type": "object",
        "required": ["counts"],
        "properties": {
            "counts": {"type": "array", "minItems": 2, "items": {"type": "integer", "minimum": 0}}
        },
    },
    "normal_summary": {
        "type": "object",
        "required": ["n", "mean", "sd"],
        "properties": {
            "n": {"type": "integer", "minimum": 2},
            "mean": {"type": "number"},
            "sd": {"type": "number", "minimum": 0},
        },
    },
    "normal_linear": {
        "type": "object",
        "required": ["n", "xtx", "beta_hat", "s"],
        "properties": {
            "n": {"type": "integer", "minimum": 1},
            "xtx": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
            "beta_hat": {"type": "array", "items": {"type": "number"}},
            "s": {"type": "number", "minimum": 0},
        },
    },
}

FAMILIES = tuple(_RECORDS)


def dataset_schema(family: str) -> dict:
    record = _RECORDS[family]
    return {
        "type": "object",
        "required": ["family", "current", "historical"],
        "properties": {
            "family": {"enum": list(FAMILIES)},
            "current": record,
            "historical": {"type": "array", "minItems": 1, "items": record},
        },
    }


@dataclass(frozen=True)
class Dataset:
    """A current sample plus one or more historical samples of one family."""

    family: str
    current: FamilyData
    historical: List[FamilyData] = field(default_factory=list)

    @property
    def pooled_historical(self) -> FamilyData:
        return pool(self.historical)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "current": record_to_dict(self.current),
            "historical": [record_to_dict(h) for h in self.historical],
        }


def _path(err: jsonschema.ValidationError) -> str:
    out = ""
    for p in err.absolute_path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def record_from_dict(family: str, rec: dict) -> FamilyData:
    if family == "binomial":
        return BinomialData(rec["n"], rec["y"])
    if family == "multinomial":
        return MultinomialData(tuple(rec["counts"]))
    if family == "normal_summary":
        return NormalSummary(rec["n"], rec["mean"], rec["sd"])
    if family == "normal_linear":
        return NormalLinearData(rec["n"], np.asarray(rec["xtx"]), np.asarray(rec["beta_hat"]), rec["s"])
    raise ConfigurationError(f"unknown family {family!r}")


def record_to_dict(data: FamilyData) -> dict:
    if isinstance(data, BinomialData):
        return {"n": data.n, "y": data.y}
    if isinstance(data, MultinomialData):
        return {"counts": list(data.counts)}
    if isinstance(data, NormalSummary):
        return {"n": data.n, "mean": data.mean, "sd": data.sd}
    if isinstance(data, NormalLinearData):
        return {"n": data.n, "xtx": data.xtx.tolist(), "beta_hat": data.beta_hat.tolist(), "s": data.s}
    raise TypeError(f"unsupported data type {type(data).__name__}")


def load_dataset(source: Union[str, Path, dict]) -> Dataset:
    """Parse and validate a dataset document.

    Raises :class:`ConfigurationError` whose message starts with the JSON
    path of the offending field.
    """
    if isinstance(source, dict):
        doc = source
    else:
        try:
            doc = json.loads(Path(source).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"<root>: invalid JSON ({exc})") from exc
    family = doc.get("family") if isinstance(doc, dict) else None
    if family not in _RECORDS:
        raise ConfigurationError(f"family: must be one of {list(FAMILIES)}, got {family!r}")
    validator = jsonschema.Draft7Validator(dataset_schema(family))
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigurationError(f"{_path(errors[0])}: {errors[0].message}")
    try:
        current = record_from_dict(family, doc["current"])
    except DomainError as exc:
        raise ConfigurationError(f"current: {exc}") from exc
    historical = []
    for i, rec in enumerate(doc["historical"]):
        try:
            historical.append(record_from_dict(family, rec))
        except DomainError as exc:
            raise ConfigurationError(f"historical[{i}]: {exc}") from exc
    if family == "multinomial" and any(h.k != current.k for h in historical):
        raise ConfigurationError("historical: category count differs from current")
    return Dataset(family, current, historical)

"""Row-level comparison of two estimates under a tolerance policy."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Estimate:
    """A value with its standard error; ``error=None`` marks an exact value."""

    value: float
    error: float | None = None

    def __post_init__(self) -> None:
        if self.error is not None and not self.error >= 0:
            raise ValueError("standard errors must be non-negative")

    @property
    def stochastic(self) -> bool:
        return self.error is not None


@dataclass(frozen=True)
class Policy:
    z_cap: float = 3.0
    rel_cap: float = 1e-6
    abs_cap: float | None = None
    bias: float = 0.0
    retry: bool = True

    def __post_init__(self) -> None:
        if self.z_cap <= 0 or self.rel_cap <= 0 or (self.abs_cap is not None and self.abs_cap < 0):
            raise ValueError("tolerances must be positive")
        if self.bias < 0:
            raise ValueError("the bias budget must be non-negative")

    @classmethod
    def from_dict(cls, d: dict | None) -> "Policy":
        return cls(**(d or {}))

    def override(self, **kw) -> "Policy":
        return replace(self, **kw)


@dataclass
class Row:
    """One comparison: route A against route B."""

    observable: str
    x: float
    y: float
    a: float
    a_err: float
    b: float
    b_err: float
    mode: str
    discrepancy: float
    score: float
    tolerance: float
    verdict: str
    note: str = ""

    def __post_init__(self) -> None:
        # numpy scalars would leak their repr into the CSV output
        for name in ("x", "y", "a", "a_err", "b", "b_err", "discrepancy", "score", "tolerance"):
            setattr(self, name, float(getattr(self, name)))

    @property
    def passed(self) -> bool:
        return self.verdict in ("pass", "info")

    @property
    def stochastic(self) -> bool:
        return self.mode in ("z", "combined", "degenerate")


def compare(a: Estimate, b: Estimate, policy: Policy, observable: str = "", x: float = math.nan,
            y: float = math.nan, note: str = "") -> Row:
    """Compare ``a`` (usually the stochastic route) with ``b``.

    * stochastic against exact: ``|a - b| <= z_cap * sigma_a + bias``; the
      reported score is ``z = |a - b| / sigma_a``
    * stochastic against stochastic: same with the variances combined
    * exact against exact: ``|a - b| <= abs_cap`` when an absolute cap is set,
      otherwise ``|a - b| / |b| <= rel_cap``

    A stochastic estimate with zero error cannot be judged and is flagged as
    degenerate (a failing verdict).
    """
    diff = abs(a.value - b.value)
    a_err = a.error if a.stochastic else 0.0
    b_err = b.error if b.stochastic else 0.0
    if a.stochastic or b.stochastic:
        mode = "combined" if a.stochastic and b.stochastic else "z"
        sigma = math.hypot(a_err, b_err)
        if sigma == 0.0:
            return Row(observable, x, y, a.value, a_err, b.value, b_err, "degenerate", diff,
                       math.inf, policy.bias, "fail", note or "zero standard error")
        score = diff / sigma
        tol = policy.z_cap * sigma + policy.bias
        verdict = "pass" if diff <= tol else "fail"
        return Row(observable, x, y, a.value, a_err, b.value, b_err, mode, diff, score, tol, verdict, note)
    if policy.abs_cap is not None:
        verdict = "pass" if diff <= policy.abs_cap else "fail"
        return Row(observable, x, y, a.value, 0.0, b.value, 0.0, "abs", diff, diff, policy.abs_cap, verdict, note)
    rel = diff / abs(b.value) if b.value != 0 else (0.0 if diff == 0 else math.inf)
    verdict = "pass" if rel <= policy.rel_cap else "fail"
    return Row(observable, x, y, a.value, 0.0, b.value, 0.0, "rel", diff, rel, policy.rel_cap, verdict, note)


def record(observable: str, value: Estimate, x: float = math.nan, y: float = math.nan,
           note: str = "") -> Row:
    """A row that carries a measurement without judging it."""
    err = value.error if value.stochastic else 0.0
    return Row(observable, x, y, value.value, err, math.nan, math.nan, "record", math.nan,
               math.nan, math.nan, "info", note)

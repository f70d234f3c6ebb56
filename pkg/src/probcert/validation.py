"""Order-statistics sample bounds for certifying a finite family of controllers.

Given ``N`` i.i.d. scenarios and the indicator vector ``v_i`` of each of ``M``
controllers, the ``r``-th largest entry of ``v_i`` is, with confidence
``1 - delta``, a level that the indicator of a fresh scenario exceeds with
probability at most ``epsilon``, simultaneously for all controllers, provided

    sum_{z=0}^{r-1} C(N, z) eps^z (1 - eps)^(N - z) <= delta / M.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class CertificationError(ValueError):
    """Inputs cannot support the requested certificate."""


@dataclass(frozen=True)
class RiskSpec:
    epsilon: float
    delta: float
    r: int = 1
    m: int = 1

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon!r}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta!r}")
        if int(self.r) != self.r or self.r < 1:
            raise ValueError(f"r must be an integer >= 1, got {self.r!r}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be an integer >= 1, got {self.m!r}")
        object.__setattr__(self, "r", int(self.r))
        object.__setattr__(self, "m", int(self.m))

    @property
    def per_controller_delta(self) -> float:
        return self.delta / self.m

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "delta": self.delta, "r": self.r, "m": self.m}


@dataclass(frozen=True)
class IndicatorVector:
    """Indicator outcomes of one controller on the shared scenario set.

    ``+inf`` is accepted as the sentinel of a faulted simulation; NaN is not.
    """

    values: np.ndarray
    controller_id: str = "0"

    def __post_init__(self):
        arr = np.array(self.values, dtype=float).ravel()
        if arr.size < 1:
            raise ValueError("indicator vector must hold at least one value")
        if np.isnan(arr).any():
            raise ValueError("indicator vector contains NaN")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.size


def generalized_max(v, r: int) -> float:
    """``r``-th largest component of ``v`` (``r = 1`` is the max).

    Ties count with multiplicity.
    """
    values = v.values if isinstance(v, IndicatorVector) else np.asarray(v, dtype=float).ravel()
    n = values.size
    if int(r) != r or not 1 <= r <= n:
        raise ValueError(f"r must satisfy 1 <= r <= {n}, got {r!r}")
    # the (n - r)-th smallest is the r-th largest
    return float(np.partition(values, n - int(r))[n - int(r)])


def _log_binom_term(n: int, z: int, log_eps: float, log_1m: float) -> float:
    return (math.lgamma(n + 1) - math.lgamma(z + 1) - math.lgamma(n - z + 1)
            + z * log_eps + (n - z) * log_1m)


def binomial_tail(n: int, epsilon: float, k: int) -> float:
    """``P[Binomial(n, epsilon) <= k]``, evaluated in log space."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    if n < 0 or k < 0:
        raise ValueError("n and k must be non-negative")
    if k >= n:
        return 1.0
    log_eps = math.log(epsilon)
    log_1m = math.log1p(-epsilon)
    logs = [_log_binom_term(n, z, log_eps, log_1m) for z in range(k + 1)]
    top = max(logs)
    total = math.exp(top) * math.fsum(math.exp(t - top) for t in logs)
    return min(1.0, max(0.0, total))


def min_samples(risk: RiskSpec) -> int:
    """Explicit sufficient sample size for ``risk``.

    ``N = ceil((r - 1 + ln(M/delta) + sqrt(2 (r - 1) ln(M/delta))) / epsilon)``
    """
    log_term = math.log(risk.m / risk.delta)
    rm1 = risk.r - 1
    n = math.ceil((rm1 + log_term + math.sqrt(2.0 * rm1 * log_term)) / risk.epsilon)
    n = max(n, risk.r)
    tail = binomial_tail(n, risk.epsilon, rm1)
    assert tail <= risk.per_controller_delta, (n, tail)
    return n


def exact_min_samples(risk: RiskSpec) -> int:
    """Smallest ``N`` whose binomial tail is at most ``delta / M``."""
    target = risk.per_controller_delta
    k = risk.r - 1
    lo, hi = risk.r, min_samples(risk)
    # the tail is nonincreasing in N
    while lo < hi:
        mid = (lo + hi) // 2
        if binomial_tail(mid, risk.epsilon, k) <= target:
            hi = mid
        else:
            lo = mid + 1
    return lo


@dataclass
class Certificate:
    risk: RiskSpec
    n_used: int
    levels: list
    safe_flags: list
    threshold: float = 0.0
    controller_ids: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "risk": self.risk.to_dict(),
            "n_used": self.n_used,
            "threshold": self.threshold,
            "controllers": [
                {"id": cid, "level": lvl, "safe": flag}
                for cid, lvl, flag in zip(self.controller_ids, self.levels, self.safe_flags)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Certificate":
        ctrl = d["controllers"]
        return cls(
            risk=RiskSpec(**d["risk"]),
            n_used=int(d["n_used"]),
            levels=[float(c["level"]) for c in ctrl],
            safe_flags=[bool(c["safe"]) for c in ctrl],
            threshold=float(d["threshold"]),
            controller_ids=[str(c["id"]) for c in ctrl],
        )


def certify_family(vectors: Sequence[IndicatorVector], risk: RiskSpec,
                   threshold: float = 0.0) -> Certificate:
    """Empirical levels ``psi(v_i, r)`` of a controller family and their safety flags.

    With confidence at least ``1 - delta``, each returned level is exceeded with
    probability at most ``epsilon`` for every controller simultaneously.
    """
    vectors = [v if isinstance(v, IndicatorVector) else IndicatorVector(v, str(i))
               for i, v in enumerate(vectors)]
    if len(vectors) != risk.m:
        raise CertificationError(f"risk spec is for M={risk.m} controllers, got {len(vectors)}")
    lengths = {len(v) for v in vectors}
    if len(lengths) != 1:
        raise CertificationError(f"indicator vectors have unequal lengths {sorted(lengths)}")
    n = lengths.pop()
    needed = exact_min_samples(risk)
    if n < needed:
        raise CertificationError(f"{n} samples given, at least {needed} required")
    levels = [generalized_max(v, risk.r) for v in vectors]
    return Certificate(
        risk=risk,
        n_used=n,
        levels=levels,
        safe_flags=[lvl <= threshold for lvl in levels],
        threshold=float(threshold),
        controller_ids=[v.controller_id for v in vectors],
    )

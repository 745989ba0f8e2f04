"""One-sided Clopper-Pearson lower bounds for Monte Carlo success counts."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from scipy import special

from .errors import ParameterError
from .numerics import BisectionSpec, UnitProbability, bisect_monotone

_BISECTION_TOL = 1e-13
# Shift applied to the bisection output so floating error cannot overshoot.
_DOWNWARD_SHIFT = 1e-12


@dataclass(frozen=True)
class MonteCarloEstimate:
    samples_n: int
    successes_k: int
    risk_alpha: float

    def __post_init__(self):
        if int(self.samples_n) != self.samples_n or self.samples_n < 1:
            raise ParameterError(f"samples_n must be a positive integer, got {self.samples_n!r}")
        if int(self.successes_k) != self.successes_k or self.successes_k < 0:
            raise ParameterError(f"successes_k must be a nonnegative integer, got {self.successes_k!r}")
        if self.successes_k > self.samples_n:
            raise ParameterError(
                f"successes_k={self.successes_k} exceeds samples_n={self.samples_n}"
            )
        alpha = float(UnitProbability(self.risk_alpha))
        if not 0.0 < alpha < 1.0:
            raise ParameterError(f"risk_alpha must lie in (0, 1), got {alpha!r}")
        object.__setattr__(self, "risk_alpha", alpha)

    @property
    def point_estimate(self) -> float:
        return self.successes_k / self.samples_n

    @property
    def lower_bound(self) -> float:
        return clopper_pearson_lower(self)


def binomial_upper_tail(n: int, k: int, p: float) -> float:
    """``P[Bin(n, p) >= k]`` via the regularized incomplete beta function."""
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    return float(special.betainc(k, n - k + 1, p))


def clopper_pearson_lower(est: MonteCarloEstimate) -> float:
    """Exact one-sided lower confidence bound on the success probability.

    Solves ``P[Bin(n, p) >= k] = alpha`` by bisection on ``p`` and rounds
    the answer down. ``k = 0`` gives 0 and ``k = n`` gives ``alpha ** (1/n)``.
    """
    return _cp_lower(est.samples_n, est.successes_k, est.risk_alpha)


@lru_cache(maxsize=4096)
def _cp_lower(n: int, k: int, alpha: float) -> float:
    if k == 0:
        return 0.0
    if k == n:
        return alpha ** (1.0 / n)
    spec = BisectionSpec(0.0, 1.0, _BISECTION_TOL)
    p = bisect_monotone(lambda q: binomial_upper_tail(n, k, q), alpha, spec,
                        side="lower_bracket")
    return max(0.0, p - _DOWNWARD_SHIFT)


def lower_bound(successes_k: int, samples_n: int, risk_alpha: float) -> float:
    return clopper_pearson_lower(MonteCarloEstimate(samples_n, successes_k, risk_alpha))


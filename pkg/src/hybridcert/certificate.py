"""Hybrid Neyman-Pearson certificate: threshold, adversarial value, radius search.

Everything is computed in the log-threshold variable ``u = log t`` (the
solver rescales it, see ``_Channel``). With ``s = r / sigma`` the clean
acceptance probability of group ``g`` is ``Phi(s/2 + (u - log gamma_g) / s)``
and its adversarial counterpart is the same argument shifted by ``-s``.

Numerical error only ever makes results smaller: the threshold is bracketed
from below (``F(t_L) <= p_A``), the adversarial value is nondecreasing in the
threshold, and the radius search returns the feasible end of its bracket.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DegenerateCertificateError, ParameterError
from .kernels import GroupedLikelihoodRatio, KernelParams, ThreatModel
from .numerics import (
    BisectionSpec,
    UnitProbability,
    _phi,
    bisect_monotone,
    bisect_predicate,
    std_normal_quantile,
)

DEFAULT_THRESHOLD_TOLERANCE = 1e-9
DEFAULT_RADIUS_TOLERANCE = 1e-4
DEFAULT_R_MAX_SIGMAS = 50.0
# Phi(-40) underflows to 0 and Phi(40) rounds to 1.
_BRACKET_Z = 40.0
# Keeps the scaled bracket finite when s is tiny; Phi is saturated long before.
_W_LIMIT = 1e300


@dataclass(frozen=True)
class HybridProblem:
    p_a_lower: float
    sigma: float
    groups: GroupedLikelihoodRatio
    radius_r: float

    def __post_init__(self):
        object.__setattr__(self, "p_a_lower", float(UnitProbability(self.p_a_lower)))
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ParameterError(f"sigma must be positive and finite, got {self.sigma!r}")
        if not (self.radius_r >= 0 and math.isfinite(self.radius_r)):
            raise ParameterError(f"radius_r must be nonnegative, got {self.radius_r!r}")

    @property
    def snr(self) -> float:
        return self.radius_r / self.sigma


@dataclass(frozen=True)
class CertificateResult:
    certified_radius: float
    budget_d: int
    threshold_tau: float
    radius_tolerance: float
    threshold_tolerance: float
    certified: bool
    worst_case_value_at_radius: float
    p_a_lower: float
    sigma: float
    bracket_limited: bool = False

    def to_dict(self):
        return asdict(self)


class _Channel:
    """Positive-ratio groups as arrays plus the ratio-0 clean mass.

    The solver works in ``w = (u - ref) / s`` where ``ref`` is the log-ratio
    of the group that straddles ``p_A``. Near ``r = 0`` the capacity moves on
    a scale of ``s`` in ``u``, so a fixed tolerance in ``u`` would be far
    too coarse there; in ``w`` the capacity has bounded slope for every ``s``.
    """

    __slots__ = ("clean", "adv", "log_ratio", "m0")

    def __init__(self, groups: GroupedLikelihoodRatio):
        pos = groups.adv > 0
        log_ratio = np.log(groups.adv[pos]) - np.log(groups.clean[pos])
        order = np.argsort(log_ratio, kind="stable")
        self.clean = np.ascontiguousarray(groups.clean[pos][order])
        self.adv = np.ascontiguousarray(groups.adv[pos][order])
        self.log_ratio = np.ascontiguousarray(log_ratio[order])
        self.m0 = groups.zero_ratio_mass

    def _z(self, w: float, s: float, ref: float):
        # for tiny s the far groups go to +-inf, which Phi saturates correctly
        with np.errstate(over="ignore"):
            return 0.5 * s + w - (self.log_ratio - ref) / s

    def capacity(self, u: float, s: float) -> float:
        return self.capacity_scaled(u / s, s, 0.0)

    def adversarial(self, u: float, s: float) -> float:
        return self.adversarial_scaled(u / s, s, 0.0)

    def capacity_scaled(self, w: float, s: float, ref: float) -> float:
        return self.m0 + float(np.dot(self.clean, _phi(self._z(w, s, ref))))

    def rejected_scaled(self, w: float, s: float, ref: float) -> float:
        """``1 - F`` summed directly, accurate when ``F`` is close to 1."""
        return float(np.dot(self.clean, _phi(-self._z(w, s, ref))))

    def adversarial_scaled(self, w: float, s: float, ref: float) -> float:
        return float(np.dot(self.adv, _phi(self._z(w, s, ref) - s)))

    def reference(self, p_a: float) -> float:
        """Log-ratio of the group where the discrete knapsack fills ``p_a``."""
        cum = self.m0 + np.cumsum(self.clean)
        idx = min(int(np.searchsorted(cum, p_a)), self.log_ratio.size - 1)
        return float(self.log_ratio[idx])

    def bracket(self, s: float, ref: float) -> tuple[float, float]:
        margin = _BRACKET_Z + 0.5 * s
        lo = (float(self.log_ratio[0]) - ref) / s - margin
        hi = (float(self.log_ratio[-1]) - ref) / s + margin
        return max(lo, -_W_LIMIT), min(hi, _W_LIMIT)


@dataclass(frozen=True)
class _Threshold:
    w: float
    s: float
    ref: float

    @property
    def log_t(self) -> float:
        return self.ref + self.s * self.w


def _require_positive_radius(problem: HybridProblem):
    if problem.radius_r == 0:
        raise ParameterError("radius_r = 0 has no hybrid threshold; use knapsack_value")


def capacity(t: float, problem: HybridProblem) -> float:
    """Clean-law probability that the joint likelihood ratio is at most ``t``.

    Ratio-0 groups are always accepted, so the range is ``[m0, 1)`` with
    ``m0`` the ratio-0 clean mass.
    """
    _require_positive_radius(problem)
    if not t > 0:
        raise ParameterError(f"threshold t must be positive, got {t!r}")
    ch = _Channel(problem.groups)
    return ch.capacity(math.log(t), problem.snr)


def _solve_scaled(ch: _Channel, p_a: float, s: float, tolerance: float) -> _Threshold:
    if p_a <= ch.m0:
        raise DegenerateCertificateError(p_a, ch.m0)
    if p_a >= 1.0:
        raise ParameterError("p_a_lower must be < 1 for the threshold to exist")
    ref = ch.reference(p_a)
    lo, hi = ch.bracket(s, ref)
    # |du| = s |dw|, so this is never coarser than ``tolerance`` in log t.
    spec = BisectionSpec(lo, hi, tolerance * min(1.0, 1.0 / s))
    if p_a > 0.5:
        # F <= p_A  <=>  1 - F >= 1 - p_A, and 1 - p_A is exact here; near
        # F = 1 the complement keeps the digits that F itself rounds away.
        w = bisect_monotone(lambda x: -ch.rejected_scaled(x, s, ref), -(1.0 - p_a), spec,
                            side="lower_bracket")
    else:
        w = bisect_monotone(lambda x: ch.capacity_scaled(x, s, ref), p_a, spec, side="lower_bracket")
    return _Threshold(w, s, ref)


def _solve_log_threshold(ch: _Channel, p_a: float, s: float, tolerance: float) -> float:
    return _solve_scaled(ch, p_a, s, tolerance).log_t


def solve_threshold(problem: HybridProblem, tolerance: float = DEFAULT_THRESHOLD_TOLERANCE) -> float:
    """Lower-bracketed NP threshold ``t_L <= t*`` with ``F(t_L; r) <= p_A``.

    ``tolerance`` applies to ``log t``.

    Raises
    ------
    DegenerateCertificateError
        If ``p_a_lower`` does not exceed the ratio-0 clean mass.
    """
    _require_positive_radius(problem)
    ch = _Channel(problem.groups)
    u = _solve_log_threshold(ch, problem.p_a_lower, problem.snr, tolerance)
    return math.exp(u)


def adversarial_value(problem: HybridProblem, t_threshold: float) -> float:
    """Adversarial-law acceptance probability of the test ``gamma <= t``."""
    _require_positive_radius(problem)
    if not t_threshold > 0:
        raise ParameterError(f"threshold must be positive, got {t_threshold!r}")
    ch = _Channel(problem.groups)
    return ch.adversarial(math.log(t_threshold), problem.snr)


def knapsack_value(groups: GroupedLikelihoodRatio, p_a: float) -> float:
    """Discrete-only worst case: fill ``p_a`` greedily in ascending ratio order."""
    p_a = float(UnitProbability(p_a))
    order = np.argsort(groups.ratios, kind="stable")
    remaining = p_a
    parts = []
    for idx in order:
        if remaining <= 0.0:
            break
        c = float(groups.clean[idx])
        take = min(c, remaining)
        parts.append(float(groups.adv[idx]) * (take / c))
        remaining -= take
    return math.fsum(parts)


def gaussian_value(p_a: float, snr: float) -> float:
    """``Phi(Phi^-1(p_a) - snr)`` with the quantile nudged so ``Phi(q) <= p_a``."""
    q = std_normal_quantile(p_a)
    for _ in range(16):
        if float(_phi(q)) <= p_a:
            break
        q = math.nextafter(q, -math.inf)
    return float(_phi(q - snr))


def worst_case_value(
    p_a_lower: float,
    sigma: float,
    groups: GroupedLikelihoodRatio,
    radius_r: float,
    threshold_tolerance: float = DEFAULT_THRESHOLD_TOLERANCE,
) -> float:
    """Certified lower bound on the smoothed score at continuous radius ``radius_r``.

    Dispatch: ``r = 0`` uses the fractional knapsack, an uninformative
    discrete channel uses the Gaussian closed form, ``p_A <= m0`` gives 0,
    and everything else goes through the hybrid NP solve.
    """
    problem = HybridProblem(p_a_lower, sigma, groups, radius_r)
    p_a = problem.p_a_lower
    if p_a == 1.0:
        raise ParameterError("p_a_lower = 1 is not a valid lower confidence bound")
    if p_a == 0.0:
        return 0.0
    if problem.radius_r == 0:
        return knapsack_value(groups, p_a)
    ch = _Channel(groups)
    if p_a <= ch.m0:
        return 0.0
    if groups.is_trivial:
        return gaussian_value(p_a, problem.snr)
    return _hybrid_value(ch, p_a, problem.snr, threshold_tolerance)


def _hybrid_value(ch: _Channel, p_a: float, s: float, tolerance: float) -> float:
    th = _solve_scaled(ch, p_a, s, tolerance)
    return ch.adversarial_scaled(th.w, s, th.ref)


def hybrid_np_value(problem: HybridProblem, threshold_tolerance: float = DEFAULT_THRESHOLD_TOLERANCE) -> float:
    """The generic grouped NP value, with no closed-form shortcut."""
    _require_positive_radius(problem)
    ch = _Channel(problem.groups)
    if problem.p_a_lower <= ch.m0:
        return 0.0
    return _hybrid_value(ch, problem.p_a_lower, problem.snr, threshold_tolerance)


def _check_tolerances(radius_tolerance, threshold_tolerance):
    for name, tol in (("radius_tolerance", radius_tolerance),
                      ("threshold_tolerance", threshold_tolerance)):
        if not (tol > 0 and math.isfinite(tol)):
            raise ParameterError(f"{name} must be positive and finite, got {tol!r}")


def certified_radius(
    p_a_lower: float,
    sigma: float,
    groups: GroupedLikelihoodRatio,
    tau: float,
    radius_tolerance: float = DEFAULT_RADIUS_TOLERANCE,
    threshold_tolerance: float = DEFAULT_THRESHOLD_TOLERANCE,
    r_max: float | None = None,
) -> CertificateResult:
    """Largest continuous radius whose certified worst-case value stays above ``tau``.

    The returned radius never exceeds the exact one and is within
    ``radius_tolerance`` of it unless the search hit ``r_max``, in which case
    ``bracket_limited`` is set.
    """
    tau = float(UnitProbability(tau))
    if not 0.0 < tau < 1.0:
        raise ParameterError(f"tau must lie strictly between 0 and 1, got {tau!r}")
    _check_tolerances(radius_tolerance, threshold_tolerance)
    if r_max is None:
        r_max = DEFAULT_R_MAX_SIGMAS * sigma
    if not (r_max > 0 and math.isfinite(r_max)):
        raise ParameterError(f"r_max must be positive, got {r_max!r}")
    d = groups.budget_d if groups.budget_d is not None else 0

    def value(r):
        return worst_case_value(p_a_lower, sigma, groups, r, threshold_tolerance)

    def result(radius, v, certified, limited=False):
        return CertificateResult(
            certified_radius=radius, budget_d=d, threshold_tau=tau,
            radius_tolerance=radius_tolerance, threshold_tolerance=threshold_tolerance,
            certified=certified, worst_case_value_at_radius=v,
            p_a_lower=float(p_a_lower), sigma=float(sigma), bracket_limited=limited,
        )

    v0 = value(0.0)
    if not v0 > tau:
        return result(0.0, v0, False)
    v_max = value(r_max)
    if v_max > tau:
        return result(float(r_max), v_max, True, limited=True)
    r_hat = bisect_predicate(lambda r: value(r) > tau, 0.0, float(r_max), radius_tolerance)
    return result(r_hat, value(r_hat), True)


def frontier(
    p_a_lower: float,
    sigma: float,
    kernel: KernelParams,
    threat_family: str,
    d_values: Sequence[int],
    tau: float,
    radius_tolerance: float = DEFAULT_RADIUS_TOLERANCE,
    threshold_tolerance: float = DEFAULT_THRESHOLD_TOLERANCE,
    r_max: float | None = None,
    max_workers: int | None = None,
) -> list[tuple[int, CertificateResult]]:
    """One certificate per discrete budget, in the order given.

    Entries are independent, so ``max_workers > 1`` evaluates them on a
    thread pool with identical results.
    """
    d_values = list(d_values)
    if not d_values:
        raise ParameterError("d_values must be nonempty")

    def one(d):
        groups = kernels.build_groups(ThreatModel(threat_family, int(d), kernel))
        return int(d), certified_radius(p_a_lower, sigma, groups, tau,
                                        radius_tolerance, threshold_tolerance, r_max)

    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(one, d_values))
    return [one(d) for d in d_values]

"""Gaussian special functions and a conservative monotone bisection engine.

The normal CDF is backed by ``scipy.special.ndtr`` (Cephes, erfc-based with
reflection for negative arguments), which keeps *relative* accuracy deep in
the lower tail. The quantile starts from ``ndtri`` and is Newton-corrected
against the CDF implemented here, so the pair used inside certificates is
self-consistent.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

from .errors import (
    BracketError,
    DomainError,
    EvaluationError,
    NumericError,
    ParameterError,
    UnboundedQuantileError,
)

__all__ = [
    "UnitProbability",
    "BisectionSpec",
    "BisectionResult",
    "std_normal_cdf",
    "log_std_normal_cdf",
    "std_normal_quantile",
    "required_iterations",
    "bisect_monotone",
    "bisect_predicate",
    "phi_fault",
]

LOWER_BRACKET = "lower_bracket"
UPPER_BRACKET = "upper_bracket"
MAX_EXPANSIONS = 200
DEFAULT_MAX_ITERATIONS = 2000

# Test-only fault injection: scales the argument of the engine's Phi.
_PHI_ARG_SCALE: contextvars.ContextVar[float] = contextvars.ContextVar(
    "hybridcert_phi_arg_scale", default=1.0
)


class UnitProbability(float):
    """A float constrained to [0, 1]. Construction outside the range raises."""

    def __new__(cls, value):
        v = float(value)
        if not (0.0 <= v <= 1.0):
            raise ParameterError(f"probability must lie in [0, 1], got {value!r}")
        return super().__new__(cls, v)

    def __repr__(self):
        return f"UnitProbability({float(self)!r})"


def required_iterations(width: float, tolerance: float) -> int:
    """Halvings needed so the final bracket midpoint is within ``tolerance``."""
    if tolerance <= 0:
        raise ParameterError(f"tolerance must be positive, got {tolerance!r}")
    if width <= 2 * tolerance:
        return 0
    # log-space so a huge width over a tiny tolerance cannot overflow
    return int(math.ceil(math.log2(width) - math.log2(2.0 * tolerance)))


@dataclass(frozen=True)
class BisectionSpec:
    lower: float
    upper: float
    tolerance: float
    max_iterations: int = DEFAULT_MAX_ITERATIONS

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ParameterError("bisection bracket must be finite")
        if not self.lower < self.upper:
            raise ParameterError(
                f"bisection needs lower < upper, got [{self.lower}, {self.upper}]"
            )
        if not self.tolerance > 0:
            raise ParameterError(f"tolerance must be positive, got {self.tolerance!r}")
        if self.max_iterations < 0:
            raise ParameterError("max_iterations must be nonnegative")

    @classmethod
    def from_tolerance(cls, lower, upper, tolerance):
        return cls(lower, upper, tolerance,
                   required_iterations(upper - lower, tolerance))


@dataclass(frozen=True)
class BisectionResult:
    x: float
    iterations: int
    lower: float
    upper: float
    expansions: int
    converged: bool


def phi_fault(scale_perturbation: float):
    """Context manager scaling the engine's Phi argument by ``1 + scale_perturbation``.

    Exists only so the verification suite can prove its oracles notice a
    broken Phi. The oracle module never routes through this hook.
    """

    @contextlib.contextmanager
    def _ctx():
        token = _PHI_ARG_SCALE.set(1.0 + float(scale_perturbation))
        try:
            yield
        finally:
            _PHI_ARG_SCALE.reset(token)

    return _ctx()


def _phi(x):
    # Unchecked fast path used by the certificate engine.
    scale = _PHI_ARG_SCALE.get()
    if scale != 1.0:
        x = np.multiply(x, scale)
    return special.ndtr(x)


def std_normal_cdf(x):
    """Standard normal CDF for scalars or arrays.

    Raises
    ------
    DomainError
        If any input is NaN.
    """
    arr = np.asarray(x, dtype=float)
    if np.isnan(arr).any():
        raise DomainError("std_normal_cdf is undefined for NaN")
    out = _phi(arr)
    if out.ndim == 0:
        return float(out)
    return out


def log_std_normal_cdf(x):
    """``log Phi(x)`` without underflow for very negative ``x``."""
    arr = np.asarray(x, dtype=float)
    if np.isnan(arr).any():
        raise DomainError("log_std_normal_cdf is undefined for NaN")
    out = special.log_ndtr(arr)
    if out.ndim == 0:
        return float(out)
    return out


def _lower_tail_quantile(p: float) -> float:
    # p in (0, 0.5]; Newton on log Phi keeps relative accuracy in the tail.
    x = float(special.ndtri(p))
    log_p = math.log(p)
    for _ in range(8):
        log_cdf = float(special.log_ndtr(x))
        # d/dx log Phi(x) = phi(x) / Phi(x)
        log_pdf = -0.5 * x * x - 0.5 * math.log(2.0 * math.pi)
        step = (log_cdf - log_p) / math.exp(log_pdf - log_cdf)
        x -= step
        if abs(step) <= 1e-15 * max(1.0, abs(x)):
            break
    return x


def std_normal_quantile(p) -> float:
    """Inverse of :func:`std_normal_cdf` on (0, 1).

    Raises
    ------
    UnboundedQuantileError
        If ``p`` is exactly 0 or 1.
    DomainError
        If ``p`` is outside [0, 1] or NaN.
    """
    p = float(p)
    if math.isnan(p) or p < 0.0 or p > 1.0:
        raise DomainError(f"quantile requires p in (0, 1), got {p!r}")
    if p == 0.0 or p == 1.0:
        raise UnboundedQuantileError(f"normal quantile of {p} is unbounded")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return _lower_tail_quantile(p)
    # 1 - p is exact for p in [0.5, 1].
    return -_lower_tail_quantile(1.0 - p)


def _checked(fn, x):
    v = float(fn(x))
    if not math.isfinite(v):
        raise EvaluationError(f"objective returned {v!r} at x={x!r}")
    return v


def bisect_monotone(
    fn: Callable[[float], float],
    target: float,
    spec: BisectionSpec,
    side: str = LOWER_BRACKET,
    full_output: bool = False,
):
    """Find where a nondecreasing ``fn`` crosses ``target``, on a chosen side.

    The bracket is doubled (up to 200 times) if it does not straddle the
    target. After ``k = ceil(log2(width / (2 * tolerance)))`` halvings the
    midpoint of the final bracket is probed once and kept only if it lies
    on the requested side; otherwise the matching endpoint is returned. The
    answer is therefore within ``tolerance`` of the crossing and

    * ``side="lower_bracket"`` guarantees ``fn(x) <= target``,
    * ``side="upper_bracket"`` guarantees ``fn(x) >= target``.

    Raises
    ------
    BracketError
        If no straddling bracket is found after expansion.
    EvaluationError
        If ``fn`` returns a non-finite value.
    """
    if side not in (LOWER_BRACKET, UPPER_BRACKET):
        raise ParameterError(f"unknown bisection side {side!r}")
    a, b = float(spec.lower), float(spec.upper)
    fa, fb = _checked(fn, a), _checked(fn, b)

    expansions = 0
    while fa > target or fb < target:
        if expansions >= MAX_EXPANSIONS:
            raise BracketError(
                f"no bracket straddles target {target!r} after {MAX_EXPANSIONS} doublings"
            )
        width = b - a
        if fa > target:
            a -= width
            fa = _checked(fn, a)
        if fb < target:
            b += width
            fb = _checked(fn, b)
        expansions += 1
        if not (math.isfinite(a) and math.isfinite(b)):
            raise BracketError("bracket expansion overflowed")

    needed = required_iterations(b - a, spec.tolerance)
    budget = min(needed, spec.max_iterations)
    lower_side = side == LOWER_BRACKET

    iterations = 0
    while iterations < budget:
        m = a + 0.5 * (b - a)
        if not a < m < b:
            break  # float resolution reached
        fm = _checked(fn, m)
        iterations += 1
        if lower_side:
            if fm <= target:
                a = m
            else:
                b = m
        else:
            if fm >= target:
                b = m
            else:
                a = m

    m = a + 0.5 * (b - a)
    x = a if lower_side else b
    if a < m < b:
        fm = _checked(fn, m)
        if (lower_side and fm <= target) or (not lower_side and fm >= target):
            x = m
    if full_output:
        return BisectionResult(x, iterations, a, b, expansions, needed <= spec.max_iterations)
    return x


def bisect_predicate(
    predicate: Callable[[float], bool],
    lower: float,
    upper: float,
    tolerance: float,
    full_output: bool = False,
):
    """Largest point found where a downward-closed predicate still holds.

    ``predicate(lower)`` must be true and ``predicate(upper)`` false. Uses the
    same iteration count and final midpoint probe as :func:`bisect_monotone`,
    so the result ``x`` satisfies ``predicate(x)`` and is within ``tolerance``
    of the boundary.
    """
    if not lower < upper:
        raise ParameterError("bisect_predicate needs lower < upper")
    a, b = float(lower), float(upper)
    needed = required_iterations(b - a, tolerance)
    iterations = 0
    while iterations < needed:
        m = a + 0.5 * (b - a)
        if not a < m < b:
            break
        iterations += 1
        if predicate(m):
            a = m
        else:
            b = m
    x = a
    m = a + 0.5 * (b - a)
    if a < m < b and predicate(m):
        x = m
    if full_output:
        return BisectionResult(x, iterations, a, b, 0, True)
    return x


def fsum_array(values) -> float:
    """Compensated sum of a 1-D array."""
    return math.fsum(np.asarray(values, dtype=float).tolist())


def ensure_finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise NumericError(f"{what} is not finite: {value!r}")
    return value

"""Grouped discrete likelihood-ratio representations for text/categorical kernels.

A discrete smoothing channel enters the hybrid certificate only through the
distribution of its likelihood ratio under the clean input, so each builder
returns a short list of ``(clean mass, adversarial mass)`` pairs sorted by
ratio. Because the uniform and absorbing kernels are symmetric, that list
depends on the number of differing positions ``d`` and the kernel
parameters only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ParameterError
from .numerics import UnitProbability

UNIFORM = "uniform"
ABSORBING = "absorbing"
SUFFIX_APPEND = "suffix_append"
L0_REPLACEMENT = "l0_replacement"

MASS_TOL = 1e-12
RATIO_TIE_RTOL = 1e-12
EXACT_BINOMIAL_MAX_D = 64


@dataclass(frozen=True)
class KernelParams:
    kind: str
    corruption_rate_beta: float
    vocab_size: int | None = None

    def __post_init__(self):
        if self.kind not in (UNIFORM, ABSORBING):
            raise ParameterError(f"unknown kernel kind {self.kind!r}")
        object.__setattr__(self, "corruption_rate_beta",
                           UnitProbability(self.corruption_rate_beta))
        if self.kind == UNIFORM:
            if self.vocab_size is None or int(self.vocab_size) < 2:
                raise ParameterError("uniform kernel requires vocab_size >= 2")
            object.__setattr__(self, "vocab_size", int(self.vocab_size))

    @property
    def beta(self) -> float:
        return float(self.corruption_rate_beta)

    @property
    def degenerate(self) -> bool:
        return self.beta in (0.0, 1.0)

    @property
    def replacement_prob(self) -> float:
        """Probability of each specific alternative token (uniform kernel only)."""
        if self.kind != UNIFORM:
            raise ParameterError("replacement_prob is defined for the uniform kernel only")
        return self.beta / (self.vocab_size - 1)

    def to_dict(self):
        return {"kind": self.kind, "beta": self.beta, "vocab_size": self.vocab_size}


@dataclass(frozen=True)
class ThreatModel:
    """Discrete attack family and budget.

    For ``suffix_append`` the budget counts appended tokens, which after
    padding every prompt to a common length are replacements of trailing PAD
    positions; the canonical grouped channel is the same as for
    ``l0_replacement`` with the same budget.
    """

    family: str
    budget_d: int
    kernel: KernelParams

    def __post_init__(self):
        if self.family not in (SUFFIX_APPEND, L0_REPLACEMENT):
            raise ParameterError(f"unknown threat family {self.family!r}")
        if int(self.budget_d) != self.budget_d or self.budget_d < 0:
            raise ParameterError(f"budget_d must be a nonnegative integer, got {self.budget_d!r}")


@dataclass(frozen=True, eq=False)
class GroupedLikelihoodRatio:
    """Clean/adversarial masses per likelihood-ratio level.

    ``clean`` must be strictly positive and sum to one; ``adv`` may sum to
    less than one when the adversarial channel puts mass outside the clean
    support (absorbing kernels). That mass never helps the adversary: the
    optimal test rejects it at zero cost, so it is simply not represented.
    """

    clean: np.ndarray
    adv: np.ndarray
    budget_d: int | None = None
    threat_family: str | None = None
    kernel: KernelParams | None = field(default=None, repr=False)

    def __post_init__(self):
        clean = np.array(self.clean, dtype=float).reshape(-1)
        adv = np.array(self.adv, dtype=float).reshape(-1)
        if clean.shape != adv.shape or clean.size == 0:
            raise ParameterError("clean and adv must be nonempty and of equal length")
        if not (np.all(np.isfinite(clean)) and np.all(np.isfinite(adv))):
            raise ParameterError("group masses must be finite")
        if np.any(clean <= 0):
            raise ParameterError("every group needs positive clean mass")
        if np.any(adv < 0):
            raise ParameterError("adversarial masses must be nonnegative")
        if abs(math.fsum(clean.tolist()) - 1.0) > MASS_TOL:
            raise ParameterError(f"clean masses sum to {math.fsum(clean.tolist())!r}, not 1")
        if math.fsum(adv.tolist()) > 1.0 + MASS_TOL:
            raise ParameterError("adversarial masses sum to more than 1")
        clean.setflags(write=False)
        adv.setflags(write=False)
        object.__setattr__(self, "clean", clean)
        object.__setattr__(self, "adv", adv)

    def __len__(self):
        return self.clean.size

    def __iter__(self):
        return iter(zip(self.clean.tolist(), self.adv.tolist()))

    def __eq__(self, other):
        if not isinstance(other, GroupedLikelihoodRatio):
            return NotImplemented
        return (np.array_equal(self.clean, other.clean)
                and np.array_equal(self.adv, other.adv))

    @property
    def ratios(self) -> np.ndarray:
        return self.adv / self.clean

    @property
    def log_ratios(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.adv) - np.log(self.clean)

    @property
    def zero_ratio_mass(self) -> float:
        """Clean mass on outcomes the adversarial channel cannot produce."""
        return math.fsum(self.clean[self.adv == 0].tolist())

    @property
    def adv_total(self) -> float:
        return math.fsum(self.adv.tolist())

    @property
    def is_trivial(self) -> bool:
        """True when the discrete channel carries no information (ratio 1 everywhere)."""
        return bool(np.allclose(self.adv, self.clean, rtol=RATIO_TIE_RTOL, atol=0.0))

    def to_records(self):
        return [{"clean": c, "adv": a} for c, a in self]

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_records(), **kwargs)

    @classmethod
    def from_records(cls, records: Iterable[dict], **meta):
        records = list(records)
        return cls([r["clean"] for r in records], [r["adv"] for r in records], **meta)

    @classmethod
    def trivial(cls):
        return cls([1.0], [1.0], budget_d=0)


def merge_and_sort(groups: GroupedLikelihoodRatio, *, rtol: float = RATIO_TIE_RTOL) -> GroupedLikelihoodRatio:
    """Sort groups by ascending ratio and merge ratio ties (relative ``rtol``)."""
    ratios = groups.ratios
    order = np.argsort(ratios, kind="stable")
    merged: list[tuple[list[float], list[float]]] = []
    last_ratio = None
    for idx in order:
        r = ratios[idx]
        c, a = float(groups.clean[idx]), float(groups.adv[idx])
        if last_ratio is not None and abs(r - last_ratio) <= rtol * max(abs(r), abs(last_ratio)):
            merged[-1][0].append(c)
            merged[-1][1].append(a)
        else:
            merged.append(([c], [a]))
            last_ratio = r
    clean = [math.fsum(cs) for cs, _ in merged]
    adv = [math.fsum(as_) for _, as_ in merged]
    return GroupedLikelihoodRatio(clean, adv, budget_d=groups.budget_d,
                                  threat_family=groups.threat_family, kernel=groups.kernel)


def _log_binom(n: int, k: int) -> float:
    if k < 0 or k > n:
        return -math.inf
    if n <= EXACT_BINOMIAL_MAX_D:
        return math.log(math.comb(n, k))
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _xlogy(k: int, y: float) -> float:
    # k * log(y) with the convention 0 * log(0) = 0
    if k == 0:
        return 0.0
    if y == 0.0:
        return -math.inf
    return k * math.log(y)


def build_uniform_groups(d: int, beta: float, vocab_size: int) -> GroupedLikelihoodRatio:
    """Grouped channel for the uniform replacement kernel at ``d`` differing positions.

    An outcome is classified by ``i`` (positions differing from the clean
    input) and ``j`` (positions differing from the adversarial input). With
    ``n_other = i + j - d`` positions matching neither and ``d - j`` matching
    the adversarial token, the multiplicity is
    ``C(d, i) * C(i, d - j) * (V - 2) ** n_other``.
    """
    if vocab_size < 2:
        raise ParameterError(f"uniform kernel requires vocab_size >= 2, got {vocab_size}")
    if d < 0:
        raise ParameterError("d must be nonnegative")
    beta = float(UnitProbability(beta))
    kernel = KernelParams(UNIFORM, beta, vocab_size)
    if d == 0:
        return GroupedLikelihoodRatio([1.0], [1.0], budget_d=0, kernel=kernel)

    alpha = beta / (vocab_size - 1)
    keep = 1.0 - beta
    clean, adv = [], []
    for i in range(d + 1):
        for j in range(d - i, d + 1):
            n_other = i + j - d
            n_adv_token = d - j
            log_mult = (_log_binom(d, i) + _log_binom(i, n_adv_token)
                        + _xlogy(n_other, vocab_size - 2))
            log_clean = log_mult + _xlogy(i, alpha) + _xlogy(d - i, keep)
            c = math.exp(log_clean)
            # Underflowed groups are dropped; losing their adversarial mass
            # can only lower the certified value.
            if c == 0.0:
                continue
            log_adv = log_mult + _xlogy(j, alpha) + _xlogy(d - j, keep)
            clean.append(c)
            adv.append(math.exp(log_adv) if log_adv > -math.inf else 0.0)
    raw = GroupedLikelihoodRatio(clean, adv, budget_d=d, kernel=kernel)
    return merge_and_sort(raw)


def build_absorbing_groups(d: int, beta: float) -> GroupedLikelihoodRatio:
    """Two-level channel of the absorbing (PAD/mask) kernel.

    Outcomes where every differing position was absorbed have ratio 1 and
    mass ``beta**d``; all other clean outcomes have ratio 0.
    """
    if d < 0:
        raise ParameterError("d must be nonnegative")
    beta = float(UnitProbability(beta))
    kernel = KernelParams(ABSORBING, beta)
    if d == 0:
        return GroupedLikelihoodRatio([1.0], [1.0], budget_d=0, kernel=kernel)
    both = beta ** d
    if both == 0.0:
        return GroupedLikelihoodRatio([1.0], [0.0], budget_d=d, kernel=kernel)
    if both == 1.0:
        return GroupedLikelihoodRatio([1.0], [1.0], budget_d=d, kernel=kernel)
    return GroupedLikelihoodRatio([1.0 - both, both], [0.0, both], budget_d=d, kernel=kernel)


def build_groups(threat: ThreatModel) -> GroupedLikelihoodRatio:
    """Canonical worst-case grouped channel for a threat model."""
    k = threat.kernel
    if k.kind == UNIFORM:
        g = build_uniform_groups(threat.budget_d, k.beta, k.vocab_size)
    else:
        g = build_absorbing_groups(threat.budget_d, k.beta)
    return GroupedLikelihoodRatio(g.clean, g.adv, budget_d=threat.budget_d,
                                  threat_family=threat.family, kernel=k)


def product_channel(channels: Sequence[GroupedLikelihoodRatio]) -> GroupedLikelihoodRatio:
    """Channel of independent positions: masses multiply, ratios multiply."""
    if not channels:
        return GroupedLikelihoodRatio.trivial()
    clean = np.array([1.0])
    adv = np.array([1.0])
    for ch in channels:
        clean = np.outer(clean, ch.clean).ravel()
        adv = np.outer(adv, ch.adv).ravel()
    d = sum(ch.budget_d or 0 for ch in channels)
    keep = clean > 0.0
    return merge_and_sort(GroupedLikelihoodRatio(clean[keep], adv[keep], budget_d=d))

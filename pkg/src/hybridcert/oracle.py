"""Brute-force references for the certificate engine.

Nothing here shares numerical code with :mod:`hybridcert.certificate`:

* channels are enumerated outcome by outcome in exact rational arithmetic,
* the hybrid NP value is obtained from mpmath (its own erfc and adaptive
  tanh-sinh quadrature of the likelihood-weighted projected Gaussian),
* the Monte Carlo verifier samples the one-dimensional projection directly,
* the knapsack is recomputed by explicit prefix accumulation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import mpmath
import numpy as np

from .errors import NumericError, ParameterError, SizeError
from .kernels import (
    ABSORBING,
    UNIFORM,
    GroupedLikelihoodRatio,
    KernelParams,
    build_absorbing_groups,
    build_uniform_groups,
)

PAD = -1
MAX_TOY_VOCAB = 6
MAX_TOY_LENGTH = 4
ORACLE_GRID_SEED = 20250117


@dataclass(frozen=True)
class ToyDiscreteSpace:
    vocab_size: int
    length: int
    clean_input: tuple
    adversarial_input: tuple

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ParameterError("toy vocabulary needs at least 2 tokens")
        if self.vocab_size > MAX_TOY_VOCAB or self.length > MAX_TOY_LENGTH:
            raise SizeError(
                f"toy space {self.vocab_size}^{self.length} exceeds the "
                f"{MAX_TOY_VOCAB}^{MAX_TOY_LENGTH} enumeration limit"
            )
        for seq in (self.clean_input, self.adversarial_input):
            if len(seq) != self.length:
                raise ParameterError("inputs must have the declared length")
            if any(not 0 <= tok < self.vocab_size for tok in seq):
                raise ParameterError("tokens must lie in range(vocab_size)")
        object.__setattr__(self, "clean_input", tuple(self.clean_input))
        object.__setattr__(self, "adversarial_input", tuple(self.adversarial_input))

    @property
    def hamming_distance(self) -> int:
        return sum(a != b for a, b in zip(self.clean_input, self.adversarial_input))


def _position_prob(kernel_kind, beta, vocab_size, z, x):
    if kernel_kind == UNIFORM:
        return 1 - beta if z == x else beta / (vocab_size - 1)
    if z == x:
        return 1 - beta
    return beta if z == PAD else Fraction(0)


def enumerate_channel(space: ToyDiscreteSpace, kernel: KernelParams) -> GroupedLikelihoodRatio:
    """Exact grouped channel by listing every noisy outcome.

    Probabilities are products of per-position kernel probabilities in
    :class:`fractions.Fraction` arithmetic, so ratios are grouped exactly.
    Outcomes outside the clean support are dropped.
    """
    if kernel.kind == UNIFORM and kernel.vocab_size != space.vocab_size:
        raise ParameterError("kernel vocab_size must match the toy space")
    beta = Fraction(kernel.beta)
    alphabet = list(range(space.vocab_size))
    if kernel.kind == ABSORBING:
        alphabet.append(PAD)

    by_ratio: dict[Fraction, list[Fraction]] = {}
    for z in itertools.product(alphabet, repeat=space.length):
        clean = Fraction(1)
        adv = Fraction(1)
        for zl, xl, yl in zip(z, space.clean_input, space.adversarial_input):
            clean *= _position_prob(kernel.kind, beta, space.vocab_size, zl, xl)
            adv *= _position_prob(kernel.kind, beta, space.vocab_size, zl, yl)
        if clean == 0:
            continue
        acc = by_ratio.setdefault(adv / clean, [Fraction(0), Fraction(0)])
        acc[0] += clean
        acc[1] += adv
    keys = sorted(by_ratio)
    return GroupedLikelihoodRatio(
        [float(by_ratio[k][0]) for k in keys],
        [float(by_ratio[k][1]) for k in keys],
        budget_d=space.hamming_distance,
        kernel=kernel,
    )


# ---------------------------------------------------------------------------
# Quadrature NP oracle
# ---------------------------------------------------------------------------

def _mp_groups(groups):
    out = []
    for c, a in groups:
        c_mp, a_mp = mpmath.mpf(c), mpmath.mpf(a)
        out.append((c_mp, a_mp, None if a == 0 else mpmath.log(a_mp / c_mp)))
    return out


def quadrature_np_value(
    groups: GroupedLikelihoodRatio,
    sigma: float,
    radius_r: float,
    p_a: float,
    dps: int = 30,
    grid_points: int = 400,
) -> float:
    """Hybrid NP value from the projected one-dimensional problem.

    With ``S`` the projection of the continuous noise onto the attack
    direction (``S ~ N(0, sigma^2)`` under the clean law), the joint ratio
    is ``gamma_g * exp((r S - r^2/2) / sigma^2)`` and the optimal test
    accepts ``S <= b_g(u)``. The threshold is located on a dense grid and
    refined by bisection; the adversarial value is then integrated as the
    clean density weighted by the likelihood ratio.
    """
    if not radius_r > 0:
        raise ParameterError("quadrature oracle requires radius_r > 0")
    if not 0 < p_a < 1:
        raise ParameterError("quadrature oracle requires 0 < p_a < 1")
    with mpmath.workdps(dps):
        sig = mpmath.mpf(sigma)
        r = mpmath.mpf(radius_r)
        p = mpmath.mpf(p_a)
        gs = _mp_groups(groups)
        m0 = mpmath.fsum(c for c, _, lr in gs if lr is None)
        if p <= m0:
            return 0.0
        finite = [lr for _, _, lr in gs if lr is not None]

        def bound(u, lr):
            return (r * r / 2 + sig * sig * (u - lr)) / r

        def clean_cdf(u):
            return m0 + mpmath.fsum(
                c * mpmath.ncdf(bound(u, lr), 0, sig) for c, _, lr in gs if lr is not None
            )

        span = (r / sig) * (12 + r / sig)
        lo, hi = min(finite) - span, max(finite) + span
        grid = [lo + (hi - lo) * k / (grid_points - 1) for k in range(grid_points)]
        values = [clean_cdf(u) for u in grid]
        if values[0] > p or values[-1] < p:
            raise NumericError("quadrature oracle grid does not bracket p_a")
        k = next(i for i, v in enumerate(values) if v >= p)
        a, b = grid[max(k - 1, 0)], grid[k]
        for _ in range(120):
            m = (a + b) / 2
            if clean_cdf(m) < p:
                a = m
            else:
                b = m
        u_star = (a + b) / 2

        def weighted_density(x):
            # clean projected density times the Gaussian likelihood ratio
            return mpmath.npdf(x, 0, sig) * mpmath.exp((r * x - r * r / 2) / (sig * sig))

        total = []
        for _, a_mass, lr in gs:
            if lr is None:
                continue
            b_g = bound(u_star, lr)
            breaks = [x for x in (r - 10 * sig, r - 4 * sig, r, r + 4 * sig, r + 10 * sig) if x < b_g]
            integral, err = mpmath.quad(weighted_density, [-mpmath.inf, *breaks, b_g], error=True)
            if err > mpmath.mpf("1e-18"):
                raise NumericError(f"quadrature did not converge (error estimate {err})")
            total.append(a_mass * integral)
        return float(mpmath.fsum(total))


# ---------------------------------------------------------------------------
# Monte Carlo verification of the optimal test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonteCarloCheck:
    clean_estimate: float
    adv_estimate: float
    clean_std_error: float
    adv_std_error: float
    n_samples: int


def monte_carlo_verify(
    groups: GroupedLikelihoodRatio,
    sigma: float,
    radius_r: float,
    t_threshold: float,
    n_samples: int,
    seed: int,
) -> MonteCarloCheck:
    """Empirical acceptance rates of ``1{gamma <= t}`` under both laws.

    Samples the group index and the projected Gaussian coordinate ``S``
    (mean 0 under the clean law, mean ``r`` under the adversarial law).
    Adversarial mass outside the clean support is drawn too and always
    rejected, because its likelihood ratio is infinite.
    """
    if int(n_samples) != n_samples or n_samples < 1:
        raise ParameterError(f"n_samples must be a positive integer, got {n_samples!r}")
    if not radius_r > 0:
        raise ParameterError("monte_carlo_verify requires radius_r > 0")
    rng = np.random.default_rng(seed)
    log_t = math.log(t_threshold) if t_threshold < math.inf else math.inf
    clean = np.asarray(groups.clean)
    adv = np.asarray(groups.adv)
    with np.errstate(divide="ignore"):
        log_ratio = np.log(adv) - np.log(clean)

    def accept(idx, s):
        lr = log_ratio[idx]
        stat = lr + (radius_r * s - 0.5 * radius_r ** 2) / sigma ** 2
        return np.where(np.isneginf(lr), True, stat <= log_t)

    g_clean = rng.choice(len(clean), size=n_samples, p=clean / clean.sum())
    s_clean = rng.normal(0.0, sigma, size=n_samples)
    clean_hits = accept(g_clean, s_clean)

    outside = max(0.0, 1.0 - float(adv.sum()))
    adv_probs = np.append(adv, outside)
    adv_probs = adv_probs / adv_probs.sum()
    g_adv = rng.choice(len(adv_probs), size=n_samples, p=adv_probs)
    s_adv = rng.normal(radius_r, sigma, size=n_samples)
    in_support = g_adv < len(adv)
    adv_hits = np.zeros(n_samples, dtype=bool)
    adv_hits[in_support] = accept(g_adv[in_support], s_adv[in_support])

    pc, pa = float(clean_hits.mean()), float(adv_hits.mean())
    return MonteCarloCheck(
        clean_estimate=pc,
        adv_estimate=pa,
        clean_std_error=math.sqrt(pc * (1 - pc) / n_samples),
        adv_std_error=math.sqrt(pa * (1 - pa) / n_samples),
        n_samples=int(n_samples),
    )


# ---------------------------------------------------------------------------
# Knapsack reference
# ---------------------------------------------------------------------------

class _Neumaier:
    def __init__(self):
        self.total = 0.0
        self.comp = 0.0

    def add(self, x):
        t = self.total + x
        if abs(self.total) >= abs(x):
            self.comp += (self.total - t) + x
        else:
            self.comp += (x - t) + self.total
        self.total = t

    @property
    def value(self):
        return self.total + self.comp


def knapsack_reference(groups: GroupedLikelihoodRatio, p_a: float) -> float:
    """Fractional knapsack via explicit sort and prefix accumulation."""
    items = sorted(((a / c, c, a) for c, a in groups), key=lambda it: it[0])
    filled = _Neumaier()
    value = _Neumaier()
    for ratio, c, a in items:
        room = p_a - filled.value
        if room <= 0:
            break
        if c <= room:
            filled.add(c)
            value.add(a)
        else:
            filled.add(room)
            value.add(room * ratio)
            break
    return value.value


# ---------------------------------------------------------------------------
# Seeded configuration grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyConfig:
    kind: str
    d: int
    beta: float
    vocab_size: int
    sigma: float
    radius_r: float
    p_a: float

    def groups(self) -> GroupedLikelihoodRatio:
        if self.kind == UNIFORM:
            return build_uniform_groups(self.d, self.beta, self.vocab_size)
        return build_absorbing_groups(self.d, self.beta)


def random_configs(n: int, seed: int = ORACLE_GRID_SEED, kinds: Sequence[str] = (UNIFORM, ABSORBING)):
    """Reproducible hybrid problems spanning both kernels and a range of scales."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        kind = kinds[i % len(kinds)]
        d = int(rng.integers(1, 5))
        beta = float(rng.choice([0.1, 0.25, 0.5, 0.75]))
        vocab = int(rng.choice([3, 5, 10, 50]))
        sigma = float(rng.choice([0.25, 0.5, 1.0, 2.0]))
        r = float(sigma * rng.uniform(0.1, 3.0))
        if kind == ABSORBING:
            m0 = 1.0 - beta ** d
            p_a = float(m0 + (1.0 - m0) * rng.uniform(0.2, 0.98))
        else:
            p_a = float(rng.uniform(0.55, 0.995))
        out.append(ToyConfig(kind, d, beta, vocab, sigma, r, p_a))
    return out

"""Cross-checks of the certificate engine against the brute-force oracles."""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass

import numpy as np

from . import oracle
from .certificate import _Channel, _solve_scaled, knapsack_value, worst_case_value
from .errors import ParameterError
from .kernels import ABSORBING, UNIFORM, GroupedLikelihoodRatio, KernelParams, build_absorbing_groups, build_uniform_groups
from .numerics import phi_fault

QUADRATURE_TOL = 1e-7
ENUMERATION_TOL = 1e-12
KNAPSACK_TOL = 1e-12
MC_SIGMAS = 4.0
MC_PASS_RATE = 0.99


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    max_deviation: float
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: max deviation {self.max_deviation:.3e} ({self.detail})"

    def to_dict(self):
        return {"name": self.name, "passed": self.passed,
                "max_deviation": self.max_deviation, "detail": self.detail}


def _engine(perturb_phi: float):
    return phi_fault(perturb_phi) if perturb_phi else contextlib.nullcontext()


def check_enumeration(betas=(0.1, 0.5, 0.9), max_vocab=4, max_length=3) -> CheckResult:
    worst, count = 0.0, 0
    for kind in (UNIFORM, ABSORBING):
        for v in range(2, max_vocab + 1):
            for length in range(1, max_length + 1):
                for beta in betas:
                    kernel = KernelParams(kind, beta, v if kind == UNIFORM else None)
                    for h in range(length + 1):
                        clean = (0,) * length
                        adv = tuple(1 if i < h else 0 for i in range(length))
                        space = oracle.ToyDiscreteSpace(v, length, clean, adv)
                        ref = oracle.enumerate_channel(space, kernel)
                        got = (build_uniform_groups(h, beta, v) if kind == UNIFORM
                               else build_absorbing_groups(h, beta))
                        count += 1
                        if len(ref) != len(got):
                            return CheckResult("enumeration", False, math.inf,
                                               f"group count mismatch for {kind} V={v} L={length} d={h}")
                        dev = max(np.max(np.abs(ref.clean - got.clean)),
                                  np.max(np.abs(ref.adv - got.adv)))
                        worst = max(worst, float(dev))
    return CheckResult("enumeration", worst <= ENUMERATION_TOL, worst, f"{count} toy channels")


def check_quadrature(n_configs=60, seed=oracle.ORACLE_GRID_SEED, perturb_phi=0.0) -> CheckResult:
    worst = 0.0
    for cfg in oracle.random_configs(n_configs, seed):
        g = cfg.groups()
        with _engine(perturb_phi):
            got = worst_case_value(cfg.p_a, cfg.sigma, g, cfg.radius_r)
        ref = oracle.quadrature_np_value(g, cfg.sigma, cfg.radius_r, cfg.p_a)
        worst = max(worst, abs(got - ref))
    return CheckResult("quadrature", worst <= QUADRATURE_TOL, worst, f"{n_configs} configurations")


def mc_zscores(cfg: oracle.ToyConfig, n_samples: int, seed: int, perturb_phi=0.0):
    """Standardized MC deviations of F and V at the engine's threshold."""
    g = cfg.groups()
    s = cfg.radius_r / cfg.sigma
    ch = _Channel(g)
    with _engine(perturb_phi):
        th = _solve_scaled(ch, cfg.p_a, s, 1e-9)
        f_val = ch.capacity_scaled(th.w, s, th.ref)
        v_val = ch.adversarial_scaled(th.w, s, th.ref)
    mc = oracle.monte_carlo_verify(g, cfg.sigma, cfg.radius_r, math.exp(th.log_t), n_samples, seed)

    def z(est, p):
        se = max(math.sqrt(p * (1 - p) / n_samples), 1.0 / n_samples)
        return abs(est - p) / se

    return z(mc.clean_estimate, f_val), z(mc.adv_estimate, v_val)


def check_monte_carlo(n_configs=200, n_samples=100_000, seed=oracle.ORACLE_GRID_SEED + 1,
                      perturb_phi=0.0) -> CheckResult:
    if n_samples < 1:
        raise ParameterError("Monte Carlo sample count must be positive")
    within, worst = 0, 0.0
    for i, cfg in enumerate(oracle.random_configs(n_configs, seed)):
        z_clean, z_adv = mc_zscores(cfg, n_samples, seed + i, perturb_phi)
        worst = max(worst, z_clean, z_adv)
        within += z_clean <= MC_SIGMAS and z_adv <= MC_SIGMAS
    rate = within / n_configs
    return CheckResult("monte_carlo", rate >= MC_PASS_RATE, worst,
                       f"{within}/{n_configs} configurations within {MC_SIGMAS:g} standard errors "
                       f"at n={n_samples}; deviation in standard errors")


def random_grouped_inputs(n: int, seed: int):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        k = int(rng.integers(1, 9))
        clean = rng.dirichlet(np.ones(k))
        clean = clean / clean.sum()
        ratios = rng.exponential(1.0, size=k)
        ratios[rng.random(k) < 0.15] = 0.0
        adv = clean * ratios
        if adv.sum() > 1:
            adv = adv / adv.sum()
        try:
            g = GroupedLikelihoodRatio(clean, adv)
        except ParameterError:
            continue
        yield g, float(rng.uniform(0, 1))


def check_knapsack(n_inputs=10_000, seed=oracle.ORACLE_GRID_SEED + 2) -> CheckResult:
    worst, count = 0.0, 0
    for g, p in random_grouped_inputs(n_inputs, seed):
        worst = max(worst, abs(knapsack_value(g, p) - oracle.knapsack_reference(g, p)))
        count += 1
    return CheckResult("knapsack", worst <= KNAPSACK_TOL, worst, f"{count} random grouped inputs")


def run_all(quad_configs=60, mc_configs=200, mc_samples=100_000, knapsack_inputs=10_000,
            seed=oracle.ORACLE_GRID_SEED, perturb_phi=0.0) -> list[CheckResult]:
    if mc_samples < 1:
        raise ParameterError("--mc-samples must be positive")
    return [
        check_enumeration(),
        check_quadrature(quad_configs, seed, perturb_phi),
        check_monte_carlo(mc_configs, mc_samples, seed + 1, perturb_phi),
        check_knapsack(knapsack_inputs, seed + 2),
    ]

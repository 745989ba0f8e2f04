"""Acceptance suite: one test per criterion, each printing a single pass/fail line."""

import json
import math
import subprocess
import sys
import time
from fractions import Fraction
from math import comb

import mpmath as mp
import numpy as np
import pytest

from hybridcert.certificate import (
    HybridProblem,
    capacity,
    certified_radius,
    hybrid_np_value,
    knapsack_value,
    solve_threshold,
    worst_case_value,
)
from hybridcert.confidence import lower_bound
from hybridcert.harness import LinearClassifier, certified_accuracy_sweep
from hybridcert.kernels import GroupedLikelihoodRatio, build_absorbing_groups, build_uniform_groups
from hybridcert.oracle import ORACLE_GRID_SEED, quadrature_np_value
from hybridcert.tabular import make_synthetic_linear
from hybridcert.verify import check_monte_carlo, check_quadrature

TRIVIAL = GroupedLikelihoodRatio.trivial()
SUITE_SEED = 20250118

GAUSSIAN_PA = [0.6, 0.7, 0.8, 0.85, 0.9, 0.95, 0.99, 0.995, 0.999]
GAUSSIAN_SNR = [0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0]

# Joint attack strictly below both single-coordinate attacks.
WITNESS = dict(d=1, beta=0.5, vocab=3, p_a=0.9, sigma=1.0, r=1.0)


@pytest.fixture
def report(capsys):
    def _report(number, passed, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}")
        assert passed, detail
    return _report


def _mp_gaussian(p, snr):
    with mp.workdps(40):
        q = mp.findroot(lambda x: mp.ncdf(x) - mp.mpf(p), 0)
        return float(mp.ncdf(q - mp.mpf(snr)))


def _random_suite(n, seed):
    """Randomized hybrid configurations shared by the monotonicity and conservatism checks."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        kind = rng.choice(["uniform", "absorbing"])
        beta = float(rng.choice([0.05, 0.1, 0.25, 0.5, 0.75]))
        vocab = int(rng.choice([3, 5, 20, 1000]))
        sigma = float(rng.choice([0.25, 0.5, 1.0, 2.0]))
        p_a = float(rng.uniform(0.55, 0.9995))
        tau = float(rng.uniform(0.05, 0.6))
        out.append((kind, beta, vocab, sigma, p_a, tau))
    return out


def _mp_capacity(g, s, u):
    with mp.workdps(40):
        return mp.mpf(g.zero_ratio_mass) + mp.fsum(
            mp.mpf(c) * mp.ncdf(s / 2 + (u - lr) / s)
            for c, lr in zip(g.clean, g.log_ratios) if math.isfinite(lr))


def _groups(kind, d, beta, vocab):
    return build_uniform_groups(d, beta, vocab) if kind == "uniform" else build_absorbing_groups(d, beta)


def test_criterion_01_gaussian_limit(report):
    refs = {(p, s): _mp_gaussian(p, s) for p in GAUSSIAN_PA for s in GAUSSIAN_SNR}
    start = time.perf_counter()
    worst = 0.0
    for (p, s), ref in refs.items():
        sigma = 1.3
        dispatched = worst_case_value(p, sigma, TRIVIAL, s * sigma)
        generic = hybrid_np_value(HybridProblem(p, sigma, TRIVIAL, s * sigma))
        worst = max(worst, abs(dispatched - ref), abs(generic - ref))
    elapsed = time.perf_counter() - start
    report(1, worst <= 1e-8 and elapsed < 1.0,
           f"Gaussian limit max |dV| = {worst:.2e} (tol 1e-8) over 9x10 grid, {elapsed:.2f}s (limit 1s)")


def test_criterion_02_discrete_limit(report):
    start = time.perf_counter()
    worst, count = 0.0, 0
    for d in (1, 2, 3):
        for beta in (0.1, 0.25, 0.5):
            for vocab in (3, 10, 50):
                g = build_uniform_groups(d, beta, vocab)
                for p in (0.55, 0.7, 0.8, 0.9, 0.95, 0.99, 0.999):
                    r = 0.7
                    v = worst_case_value(p, 1e3 * r, g, r)
                    worst = max(worst, abs(v - knapsack_value(g, p)))
                    count += 1
    elapsed = time.perf_counter() - start
    report(2, worst <= 1e-3 and elapsed < 10.0,
           f"sigma/r = 1e3 vs knapsack max |dV| = {worst:.2e} (tol 1e-3) on {count} cases, {elapsed:.2f}s")


def test_criterion_03_absorbing_closed_form(report):
    # Threshold tolerance is tightened so the log-threshold error is far
    # below the 1e-10 comparison tolerance.
    tol = 1e-12
    betas = [0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95]
    start = time.perf_counter()
    worst_t = worst_v = 0.0
    boundary_ok = True
    cases = 0
    for d in range(1, 9):
        for beta in betas:
            b = beta ** d
            m0 = 1.0 - b
            g = build_absorbing_groups(d, beta)
            for frac in (0.05, 0.3, 0.6, 0.9, 0.99):
                p = m0 + frac * b
                for sigma, r in ((1.0, 1.0), (0.5, 0.2), (2.0, 3.0)):
                    s = r / sigma
                    # explicit formula in exact arithmetic from the float beta**d and p_A
                    with mp.workdps(50):
                        b_in = mp.mpf(float(g.adv[1]))
                        q = mp.sqrt(2) * mp.erfinv(2 * (mp.mpf(p) - (1 - b_in)) / b_in - 1)
                        log_t = float(s * q - s * s / 2)
                        v_exact = float(b_in * mp.ncdf(q - s))
                    prob = HybridProblem(p, sigma, g, r)
                    worst_t = max(worst_t, abs(math.log(solve_threshold(prob, tol)) - log_t))
                    worst_v = max(worst_v, abs(hybrid_np_value(prob, tol) - v_exact))
                    cases += 1
            # certification fails below 1 - beta**d (and at equality, where V = 0)
            below = certified_radius(m0 * (1 - 1e-9), 1.0, g, 1e-12)
            at = certified_radius(m0, 1.0, g, 1e-12)
            above_p = m0 + 1e-3 * b
            above = certified_radius(above_p, 1.0, g, 0.5 * (above_p - m0))
            boundary_ok &= (not below.certified) and (not at.certified) and above.certified
    elapsed = time.perf_counter() - start
    passed = worst_t <= 1e-10 and worst_v <= 1e-10 and boundary_ok and elapsed < 5.0
    report(3, passed,
           f"absorbing closed form max |dlog t*| = {worst_t:.2e}, max |dV| = {worst_v:.2e} (tol 1e-10) "
           f"on {cases} cases, degeneracy boundary {'exact' if boundary_ok else 'WRONG'}, {elapsed:.2f}s")


def test_criterion_04_oracle_agreement(report):
    start = time.perf_counter()
    quad = check_quadrature(60, ORACLE_GRID_SEED)
    mc = check_monte_carlo(200, 100_000, ORACLE_GRID_SEED + 1)
    elapsed = time.perf_counter() - start
    report(4, quad.passed and mc.passed and elapsed < 300,
           f"quadrature max |dV| = {quad.max_deviation:.2e} (tol 1e-7, 60 configs); "
           f"Monte Carlo {mc.detail.split(' configurations')[0]} configs within 4 SE; {elapsed:.1f}s")


def test_criterion_05_monotonicity(report):
    start = time.perf_counter()
    rng = np.random.default_rng(SUITE_SEED)
    suite = _random_suite(1000, SUITE_SEED)
    viol = {"r": 0, "d": 0, "tau": 0, "F": 0}
    for kind, beta, vocab, sigma, p_a, tau in suite:
        d = int(rng.integers(0, 5))
        g = _groups(kind, d, beta, vocab)
        # V nonincreasing in r
        rs = np.sort(rng.uniform(0, 4 * sigma, size=6))
        vs = [worst_case_value(p_a, sigma, g, float(r)) for r in rs]
        viol["r"] += sum(b > a + 1e-12 for a, b in zip(vs, vs[1:]))
        # radii nonincreasing in d
        radii = [certified_radius(p_a, sigma, _groups(kind, dd, beta, vocab), tau).certified_radius
                 for dd in range(4)]
        viol["d"] += sum(b > a for a, b in zip(radii, radii[1:]))
        # radii nondecreasing as tau decreases
        r_big = certified_radius(p_a, sigma, g, tau).certified_radius
        r_small = certified_radius(p_a, sigma, g, tau / 2).certified_radius
        viol["tau"] += r_small < r_big
        # F strictly increasing in t where the increase is representable
        if d > 0 and kind == "uniform" and g.zero_ratio_mass < 1:
            prob = HybridProblem(p_a, sigma, g, float(rng.uniform(0.05, 3.0)))
            ts = np.sort(np.exp(rng.uniform(-4, 4, size=5)))
            fs = [capacity(float(t), prob) for t in ts]
            refs = [_mp_capacity(g, prob.snr, math.log(t)) for t in ts]
            for a, b, ra, rb in zip(fs, fs[1:], refs, refs[1:]):
                # only increases the float result can resolve are required to show
                if ra > 1e-290 and rb - ra > 8 * sys.float_info.epsilon * rb:
                    viol["F"] += not b > a
    elapsed = time.perf_counter() - start
    total = sum(viol.values())
    report(5, total == 0 and elapsed < 60,
           f"monotonicity violations r:{viol['r']} d:{viol['d']} tau:{viol['tau']} F:{viol['F']} "
           f"over {len(suite)} configs, {elapsed:.1f}s")


def test_criterion_06_conservatism(report):
    rng = np.random.default_rng(SUITE_SEED + 1)
    checked = violations = 0
    for kind, beta, vocab, sigma, p_a, tau in _random_suite(1000, SUITE_SEED):
        g = _groups(kind, int(rng.integers(0, 5)), beta, vocab)
        coarse = certified_radius(p_a, sigma, g, tau)
        if not coarse.certified:
            continue
        fine = certified_radius(p_a, sigma, g, tau, coarse.radius_tolerance / 10,
                                coarse.threshold_tolerance / 10)
        checked += 1
        violations += (fine.certified_radius < coarse.certified_radius
                       or not worst_case_value(p_a, sigma, g, coarse.certified_radius) > tau)
    report(6, violations == 0 and checked > 0,
           f"10x-finer re-solve below r_hat in {violations} of {checked} certified configs")


def _exact_tail(n, k, p):
    p = Fraction(p)
    return sum(comb(n, j) * p ** j * (1 - p) ** (n - j) for j in range(k, n + 1))


def test_criterion_07_clopper_pearson(report):
    start = time.perf_counter()
    bad = 0
    for n in range(1, 51):
        for alpha in (0.01, 0.05):
            # exact root lies in [got, got + 1e-9] iff the tail brackets alpha there
            for k in range(1, n):
                got = lower_bound(k, n, alpha)
                a = Fraction(alpha)
                bad += not (_exact_tail(n, k, got) <= a < _exact_tail(n, k, got + 1e-9))
            bad += lower_bound(0, n, alpha) != 0.0
            bad += lower_bound(n, n, alpha) != alpha ** (1.0 / n)
    ks = np.random.default_rng(SUITE_SEED + 2).binomial(1000, 0.9, size=10_000)
    coverage = float(np.mean([lower_bound(int(k), 1000, 0.05) <= 0.9 for k in ks]))
    elapsed = time.perf_counter() - start
    report(7, bad == 0 and coverage >= 0.94 and elapsed < 30,
           f"{bad} oracle mismatches for n <= 50, coverage {coverage:.4f} at nominal 0.95, {elapsed:.1f}s")


def test_criterion_08_non_composability(report):
    w = WITNESS
    g = build_uniform_groups(w["d"], w["beta"], w["vocab"])
    joint = worst_case_value(w["p_a"], w["sigma"], g, w["r"])
    joint_oracle = quadrature_np_value(g, w["sigma"], w["r"], w["p_a"])
    discrete_only = worst_case_value(w["p_a"], w["sigma"], g, 0.0)
    continuous_only = worst_case_value(w["p_a"], w["sigma"], TRIVIAL, w["r"])
    gap = min(discrete_only, continuous_only) - joint
    report(8, gap >= 1e-3 and abs(joint - joint_oracle) <= 1e-7,
           f"joint {joint:.6f} (oracle {joint_oracle:.6f}) vs discrete-only {discrete_only:.6f}, "
           f"continuous-only {continuous_only:.6f}: gap {gap:.4f}")


def test_criterion_09_sweep_shape(report):
    seed = 7
    start = time.perf_counter()
    ds, weights = make_synthetic_linear(50, seed)
    eps = [round(0.05 * i, 12) for i in range(61)]
    table = certified_accuracy_sweep(ds, LinearClassifier.from_weights(weights), "uniform", 0.25, 0.5, 0.5,
                                     [0, 1, 2], eps, 2000, 0.01, seed)
    elapsed = time.perf_counter() - start

    def first_zero(d):
        return next((e for e in eps if table.fraction(d, e) == 0.0), math.inf)

    z0, z2 = first_zero(0), first_zero(2)
    report(9, table.is_monotone() and z2 < z0 and elapsed < 120,
           f"monotone={table.is_monotone()}, zero reached at eps {z2:g} for d=2 vs {z0:g} for d=0, "
           f"{elapsed:.1f}s")


def _cli(*args):
    res = subprocess.run([sys.executable, "-m", "hybridcert", *args],
                         capture_output=True, text=True, check=False)
    return res.returncode, res.stdout


def _strip_timestamp(text):
    return "\n".join(line for line in text.splitlines() if not line.startswith("# generated_at:"))


def test_criterion_10_determinism(report, tmp_path):
    runs = {
        "certify.json": ["certify", "--n", "2000", "--k", "1930", "--d", "2", "--beta", "0.25", "--vocab", "5"],
        "frontier.csv": ["frontier", "--pa", "0.99", "--kernel", "absorbing", "--beta", "0.9", "--d-max", "4"],
        "sweep.csv": ["sweep", "--seed", "7"],
    }
    identical = []
    for name, args in runs.items():
        first, second = tmp_path / name, tmp_path / f"replay-{name}"
        code1, _ = _cli(*args, "-o", str(first))
        code2, _ = _cli(args[0], "--config", str(first), "-o", str(second))
        same = code1 == code2 == 0 and _strip_timestamp(first.read_text()) == _strip_timestamp(second.read_text())
        identical.append(same)
    code_v1, out_v1 = _cli("verify", "--quad-configs", "5", "--mc-configs", "10", "--mc-samples", "5000",
                           "--knapsack-inputs", "200", "--json")
    cfg = tmp_path / "verify.json"
    cfg.write_text(json.dumps(json.loads(out_v1)["config"]))
    code_v2, out_v2 = _cli("verify", "--config", str(cfg), "--json")
    identical.append(code_v1 == code_v2 == 0 and _strip_timestamp(out_v1) == _strip_timestamp(out_v2))
    report(10, all(identical),
           f"{sum(identical)}/{len(identical)} CLI artifacts reproduced byte-identically from embedded config")

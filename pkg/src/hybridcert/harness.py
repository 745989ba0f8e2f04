"""End-to-end smoothing pipeline for mixed discrete/continuous classifiers.

Randomness is derived per chunk of samples from ``(seed, example, chunk)``
via :class:`numpy.random.SeedSequence`, so counts are identical whether the
chunks run sequentially or on a thread pool.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .certificate import (
    DEFAULT_RADIUS_TOLERANCE,
    DEFAULT_THRESHOLD_TOLERANCE,
    certified_radius,
)
from .confidence import MonteCarloEstimate, clopper_pearson_lower
from .errors import HybridCertError, ParameterError
from .kernels import ABSORBING, UNIFORM, GroupedLikelihoodRatio, KernelParams
from .tabular import TabularDataset

PAD_TOKEN = -1
CHUNK_SIZE = 1024
SWEEP_COLUMNS = ["d", "epsilon", "certified_fraction", "n_examples", "sigma", "beta", "tau", "seed"]


class ClassifierEvaluationError(HybridCertError):
    def __init__(self, sample_index: int, cause: BaseException):
        self.sample_index = sample_index
        super().__init__(f"classifier failed on sample {sample_index}: {cause!r}")


@dataclass(frozen=True)
class HybridInput:
    discrete: tuple
    continuous: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "discrete", tuple(int(t) for t in self.discrete))
        object.__setattr__(self, "continuous", np.asarray(self.continuous, dtype=float).reshape(-1))

    def __eq__(self, other):
        if not isinstance(other, HybridInput):
            return NotImplemented
        return self.discrete == other.discrete and np.array_equal(self.continuous, other.continuous)

    __hash__ = None


class BaseClassifier:
    """Deterministic binary classifier over hybrid inputs.

    Subclasses implement :meth:`predict_batch`; single inputs go through
    ``__call__``.
    """

    name = "base"

    def __init__(self, n_discrete: int, n_continuous: int):
        self.n_discrete = n_discrete
        self.n_continuous = n_continuous

    def predict_batch(self, discrete: np.ndarray, continuous: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x: HybridInput) -> int:
        out = self.predict_batch(np.array([x.discrete], dtype=np.int64).reshape(1, -1),
                                 x.continuous.reshape(1, -1))
        return int(out[0])


class ConstantClassifier(BaseClassifier):
    def __init__(self, value: int, n_discrete: int = 0, n_continuous: int = 0):
        super().__init__(n_discrete, n_continuous)
        self.value = int(value)
        self.name = f"constant-{self.value}"

    def predict_batch(self, discrete, continuous):
        return np.full(discrete.shape[0], self.value, dtype=np.int64)


class FunctionClassifier(BaseClassifier):
    """Wraps a per-input callable; batches are evaluated row by row."""

    def __init__(self, fn: Callable[[HybridInput], int], n_discrete: int, n_continuous: int, name="function"):
        super().__init__(n_discrete, n_continuous)
        self.fn = fn
        self.name = name

    def predict_batch(self, discrete, continuous):
        return np.array([int(self.fn(HybridInput(d, c))) for d, c in zip(discrete, continuous)],
                        dtype=np.int64)


class LinearClassifier(BaseClassifier):
    """``1{sum_c w_c[token_c] + w . x + b > 0}``; PAD/UNK tokens contribute 0."""

    name = "linear"

    def __init__(self, categorical_weights: Sequence[np.ndarray], continuous_weights, bias: float = 0.0):
        self.categorical_weights = [np.asarray(w, dtype=float) for w in categorical_weights]
        self.continuous_weights = np.asarray(continuous_weights, dtype=float)
        self.bias = float(bias)
        super().__init__(len(self.categorical_weights), self.continuous_weights.size)

    def score_batch(self, discrete, continuous):
        s = continuous @ self.continuous_weights + self.bias
        for c, w in enumerate(self.categorical_weights):
            tok = discrete[:, c]
            valid = (tok >= 0) & (tok < w.size)
            s = s + np.where(valid, w[np.clip(tok, 0, w.size - 1)], 0.0)
        return s

    def predict_batch(self, discrete, continuous):
        return (self.score_batch(discrete, continuous) > 0).astype(np.int64)

    @classmethod
    def from_weights(cls, weights: dict) -> "LinearClassifier":
        return cls(weights["categorical"], weights["continuous"], weights.get("bias", 0.0))


def fit_linear_classifier(dataset: TabularDataset, ridge: float = 1e-3) -> LinearClassifier:
    """Least-squares fit on one-hot categorical plus continuous features."""
    cards = dataset.cardinalities
    n = len(dataset)
    blocks = []
    for c, v in enumerate(cards):
        onehot = np.zeros((n, v))
        tok = dataset.categorical[:, c]
        ok = tok >= 0
        onehot[np.nonzero(ok)[0], tok[ok]] = 1.0
        blocks.append(onehot)
    X = np.hstack(blocks + [dataset.continuous, np.ones((n, 1))])
    y = 2.0 * dataset.labels - 1.0
    w = np.linalg.solve(X.T @ X + ridge * np.eye(X.shape[1]), X.T @ y)
    out, pos = [], 0
    for v in cards:
        out.append(w[pos:pos + v])
        pos += v
    k = dataset.continuous.shape[1]
    return LinearClassifier(out, w[pos:pos + k], w[pos + k])


def _resolve_vocab(kernel: KernelParams, n_positions: int, vocab_sizes):
    if vocab_sizes is not None:
        sizes = [int(v) for v in vocab_sizes]
        if len(sizes) != n_positions:
            raise ParameterError("vocab_sizes must list one size per discrete position")
        return sizes
    if kernel.kind == UNIFORM:
        return [kernel.vocab_size] * n_positions
    return [0] * n_positions


def _sample_batch(rng, x: HybridInput, kernel: KernelParams, sigma: float, n: int,
                  eligible: np.ndarray, sizes: list[int]):
    base = np.array(x.discrete, dtype=np.int64)
    disc = np.tile(base, (n, 1))
    if eligible.size:
        hit = rng.random((n, eligible.size)) < kernel.beta
        if kernel.kind == ABSORBING:
            sub = disc[:, eligible]
            sub[hit] = PAD_TOKEN
            disc[:, eligible] = sub
        else:
            for col_i, pos in enumerate(eligible):
                v = sizes[pos]
                orig = base[pos]
                if 0 <= orig < v:
                    # a uniformly chosen token different from the original
                    repl = (orig + rng.integers(1, v, size=n)) % v
                else:
                    repl = rng.integers(0, v, size=n)
                disc[:, pos] = np.where(hit[:, col_i], repl, disc[:, pos])
    cont = np.tile(x.continuous, (n, 1))
    if sigma > 0 and x.continuous.size:
        cont = cont + rng.normal(0.0, sigma, size=cont.shape)
    return disc, cont


def _eligible(x: HybridInput, eligible_positions):
    if eligible_positions is None:
        return np.arange(len(x.discrete), dtype=np.int64)
    idx = np.asarray(sorted(set(int(p) for p in eligible_positions)), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= len(x.discrete)):
        raise ParameterError("eligible_positions must index discrete positions")
    return idx


def sample_product_kernel(
    x: HybridInput,
    kernel: KernelParams,
    sigma: float,
    eligible_positions=None,
    seed: int = 0,
    vocab_sizes=None,
) -> HybridInput:
    """One draw from the product noise channel (discrete kernel x Gaussian)."""
    if sigma < 0:
        raise ParameterError("sigma must be nonnegative")
    eligible = _eligible(x, eligible_positions)
    sizes = _resolve_vocab(kernel, len(x.discrete), vocab_sizes)
    rng = np.random.default_rng(seed)
    disc, cont = _sample_batch(rng, x, kernel, sigma, 1, eligible, sizes)
    return HybridInput(disc[0], cont[0])


@dataclass(frozen=True)
class SmoothedScore:
    estimate: MonteCarloEstimate
    lower_bound: float
    target_class: int


def _count_chunk(classifier, x, kernel, sigma, eligible, sizes, seed, stream, chunk, n, target):
    rng = np.random.default_rng(np.random.SeedSequence([seed, *stream, chunk]))
    disc, cont = _sample_batch(rng, x, kernel, sigma, n, eligible, sizes)
    start = chunk * CHUNK_SIZE
    try:
        out = np.asarray(classifier.predict_batch(disc, cont))
    except Exception:
        # locate the failing sample
        for i in range(n):
            try:
                classifier.predict_batch(disc[i:i + 1], cont[i:i + 1])
            except Exception as exc:
                raise ClassifierEvaluationError(start + i, exc) from exc
        raise
    return int(np.count_nonzero(out == target))


def count_successes(classifier, x, kernel, sigma, n_samples, seed, *, stream=(0,), target_class=1,
                    eligible_positions=None, vocab_sizes=None, max_workers=None) -> int:
    if n_samples < 1:
        raise ParameterError("n_samples must be >= 1")
    eligible = _eligible(x, eligible_positions)
    sizes = _resolve_vocab(kernel, len(x.discrete), vocab_sizes)
    n_chunks = math.ceil(n_samples / CHUNK_SIZE)
    sizes_per_chunk = [min(CHUNK_SIZE, n_samples - c * CHUNK_SIZE) for c in range(n_chunks)]

    def work(c):
        return _count_chunk(classifier, x, kernel, sigma, eligible, sizes, seed, tuple(stream),
                            c, sizes_per_chunk[c], target_class)

    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return sum(pool.map(work, range(n_chunks)))
    return sum(work(c) for c in range(n_chunks))


def smoothed_score(
    classifier: BaseClassifier,
    x: HybridInput,
    kernel: KernelParams,
    sigma: float,
    n_samples: int,
    risk_alpha: float,
    seed: int,
    *,
    target_class: int = 1,
    example_index: int = 0,
    eligible_positions=None,
    vocab_sizes=None,
    max_workers: int | None = None,
) -> SmoothedScore:
    """Monte Carlo count of ``target_class`` under the product kernel, with its CP bound."""
    k = count_successes(classifier, x, kernel, sigma, n_samples, seed,
                        stream=(1, example_index), target_class=target_class,
                        eligible_positions=eligible_positions, vocab_sizes=vocab_sizes,
                        max_workers=max_workers)
    est = MonteCarloEstimate(int(n_samples), k, risk_alpha)
    return SmoothedScore(est, clopper_pearson_lower(est), target_class)


# ---------------------------------------------------------------------------
# Certified-accuracy sweep
# ---------------------------------------------------------------------------

def column_channel(kind: str, beta: float, cardinality: int) -> GroupedLikelihoodRatio:
    """Grouped channel of one attacked categorical column."""
    if kind == UNIFORM:
        return kernels.build_uniform_groups(1, beta, cardinality)
    return kernels.build_absorbing_groups(1, beta)


def attacked_channels(kind: str, beta: float, cardinalities: Sequence[int], d: int):
    """Distinct product channels over every size-``d`` subset of columns.

    Subsets with the same multiset of cardinalities induce the same channel,
    so only one representative per multiset is kept.
    """
    if d < 0 or d > len(cardinalities):
        raise ParameterError(f"budget d={d} exceeds the {len(cardinalities)} categorical columns")
    if d == 0:
        return [GroupedLikelihoodRatio.trivial()]
    seen = {}
    for subset in itertools.combinations(range(len(cardinalities)), d):
        key = tuple(sorted(cardinalities[i] for i in subset))
        if key not in seen:
            ch = kernels.product_channel([column_channel(kind, beta, v) for v in key])
            seen[key] = GroupedLikelihoodRatio(ch.clean, ch.adv, budget_d=d,
                                               threat_family=kernels.L0_REPLACEMENT)
    return list(seen.values())


@dataclass
class ExampleCertificate:
    index: int
    label: int
    prediction: int
    p_a_lower: float
    radii: dict[int, float | None]   # None = not certified at this d

    @property
    def correct(self) -> bool:
        return self.prediction == self.label


@dataclass
class SweepTable:
    rows: list[tuple[int, float, float]]
    n_examples: int
    sigma: float
    beta: float
    tau: float
    seed: int
    examples: list[ExampleCertificate] = field(default_factory=list)

    def fraction(self, d: int, epsilon: float) -> float:
        for dd, eps, frac in self.rows:
            if dd == d and eps == epsilon:
                return frac
        raise KeyError((d, epsilon))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for d, eps, frac in self.rows:
            w.writerow([d, repr(float(eps)), repr(float(frac)), self.n_examples,
                        repr(self.sigma), repr(self.beta), repr(self.tau), self.seed])
        return buf.getvalue()

    def is_monotone(self) -> bool:
        ds = sorted({d for d, _, _ in self.rows})
        eps = sorted({e for _, e, _ in self.rows})
        grid = {(d, e): f for d, e, f in self.rows}
        for d in ds:
            col = [grid[(d, e)] for e in eps]
            if any(b > a for a, b in zip(col, col[1:])):
                return False
        for e in eps:
            row = [grid[(d, e)] for d in ds]
            if any(b > a for a, b in zip(row, row[1:])):
                return False
        return True


def certified_accuracy_sweep(
    dataset: TabularDataset,
    classifier: BaseClassifier,
    kernel_kind: str,
    beta: float,
    sigma: float,
    tau: float,
    d_values: Sequence[int],
    epsilon_grid: Sequence[float],
    n_samples: int,
    risk_alpha: float,
    seed: int,
    *,
    n_select: int | None = None,
    radius_tolerance: float = DEFAULT_RADIUS_TOLERANCE,
    threshold_tolerance: float = DEFAULT_THRESHOLD_TOLERANCE,
    r_max: float | None = None,
    max_workers: int | None = None,
) -> SweepTable:
    """Certified accuracy over a grid of discrete budgets and continuous radii.

    For each example a small selection batch picks the smoothed prediction;
    an independent batch of ``n_samples`` then gives the Clopper-Pearson
    bound for that class. The radius at budget ``d`` is the smallest over
    all size-``d`` sets of attacked categorical columns.
    """
    if len(dataset) == 0:
        raise ParameterError("dataset is empty")
    d_values = sorted(set(int(d) for d in d_values))
    epsilon_grid = sorted(set(float(e) for e in epsilon_grid))
    if not d_values or not epsilon_grid:
        raise ParameterError("d_values and epsilon_grid must be nonempty")
    if kernel_kind not in (UNIFORM, ABSORBING):
        raise ParameterError(f"unknown kernel kind {kernel_kind!r}")
    cards = dataset.cardinalities
    channels = {d: attacked_channels(kernel_kind, beta, cards, d) for d in d_values}
    # per-column cardinalities override kernel.vocab_size during sampling
    kernel = KernelParams(kernel_kind, beta, max(cards, default=2) if kernel_kind == UNIFORM else None)
    vocab_sizes = cards
    n_select = n_select or max(32, n_samples // 20)

    radius_cache: dict[tuple[int, float], float | None] = {}

    def radius_for(d, p_lower):
        key = (d, p_lower)
        if key not in radius_cache:
            best = math.inf
            for ch in channels[d]:
                res = certified_radius(p_lower, sigma, ch, tau, radius_tolerance,
                                       threshold_tolerance, r_max)
                if not res.certified:
                    best = None
                    break
                best = min(best, res.certified_radius)
            radius_cache[key] = best
        return radius_cache[key]

    examples = []
    for i in range(len(dataset)):
        x = HybridInput(dataset.categorical[i], dataset.continuous[i])
        ones = count_successes(classifier, x, kernel, sigma, n_select, seed, stream=(0, i),
                               vocab_sizes=vocab_sizes, max_workers=max_workers)
        prediction = int(2 * ones >= n_select)
        score = smoothed_score(classifier, x, kernel, sigma, n_samples, risk_alpha, seed,
                               target_class=prediction, example_index=i,
                               vocab_sizes=vocab_sizes, max_workers=max_workers)
        radii = {d: radius_for(d, score.lower_bound) for d in d_values}
        examples.append(ExampleCertificate(i, int(dataset.labels[i]), prediction,
                                           score.lower_bound, radii))

    rows = []
    n = len(examples)
    for d in d_values:
        for eps in epsilon_grid:
            hits = sum(1 for ex in examples
                       if ex.correct and ex.radii[d] is not None and ex.radii[d] >= eps)
            rows.append((d, eps, hits / n))
    return SweepTable(rows, n, float(sigma), float(beta), float(tau), int(seed), examples)

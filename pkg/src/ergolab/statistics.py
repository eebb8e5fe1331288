"""
Decay of correlations, CLT harness and the Birkhoff cohomology check
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .exceptions import InvalidInputError
from .measures import LeafFamily
from .potentials import reduce_fiber_potential
from .ruelle import GridFunction, normalized_apply
from .skew_transfer import SkewSystem, initial_points, rng_streams

logger = logging.getLogger(__name__)

BaseObservable = Callable[[np.ndarray], np.ndarray]
Observable = Callable[[np.ndarray, np.ndarray], np.ndarray]

CORRELATION_FLOOR = 1e-13
VARIANCE_TRUNCATION = 1e-10
DEGENERATE_VARIANCE = 1e-12
DEGENERATE_RATIO = 1e-6
KS_COEFFICIENT = 1.358
MAX_VARIANCE_LAG = 10_000


@dataclass
class CorrelationSeries:
    """C(n) for n = 0..n_max and its log-linear fit"""
    n_values: List[int]
    C_values: List[float]
    fitted_rate: float
    fit_r2: float
    fit_constant: float = math.nan

    def to_rows(self) -> List[Tuple[int, float]]:
        return list(zip(self.n_values, self.C_values))

    def to_dict(self) -> dict:
        return {"fitted_rate": self.fitted_rate, "fit_r2": self.fit_r2,
                "fit_constant": self.fit_constant, "n_max": self.n_values[-1]}


def fiber_integral(fam: LeafFamily, phi_obs: Observable) -> np.ndarray:
    """s(x_i) = integral of phi_obs(x_i, .) against leaf i"""
    centers = fam.centers
    return np.array([leaf.integrate(lambda y, x=x: phi_obs(np.full(np.shape(y), x), y))
                     for x, leaf in zip(centers, fam.leaves)])


def _fit_decay(C: np.ndarray, floor: float) -> Tuple[float, float, float]:
    n = np.arange(len(C))
    keep = np.abs(C) > floor
    if keep.sum() < 2:
        return 0.0, math.nan, math.nan
    logs = np.log(np.abs(C[keep]))
    slope, intercept = np.polyfit(n[keep], logs, 1)
    fitted = slope * n[keep] + intercept
    total = np.sum((logs - logs.mean()) ** 2)
    r2 = 1.0 - float(np.sum((logs - fitted) ** 2)) / float(total) if total > 0 else 1.0
    return math.exp(slope), r2, math.exp(intercept)


def _duality_series(system: SkewSystem, psi_values: np.ndarray, s: np.ndarray, n_max: int) -> np.ndarray:
    m = system.spectral.m_weights
    mean = float(psi_values @ m) * float(s @ m)
    out = np.empty(n_max + 1)
    current = s
    for n in range(n_max + 1):
        out[n] = float(psi_values @ (current * m)) - mean
        current = normalized_apply(system.spectral, system.A, current).values
    return out


def correlation(system: SkewSystem, eq: LeafFamily, psi: BaseObservable, phi_obs: Observable,
                n_max: int, floor: float = CORRELATION_FLOOR) -> CorrelationSeries:
    """C(n) = int (psi o f^n) s dm - int psi dm int s dm via L^n duality"""
    if n_max < 1:
        raise InvalidInputError(f"n_max must be positive, got {n_max}")
    if eq.N != system.N:
        raise InvalidInputError(f"family has {eq.N} leaves, system grid has {system.N}")
    psi_values = np.asarray(psi(system.grid_centers()), dtype=float)
    s = fiber_integral(eq, phi_obs)
    C = _duality_series(system, psi_values, s, n_max)
    rate, r2, const = _fit_decay(C, floor)
    logger.info(f"Correlation decay: fitted rate {rate:.4g}, R2 {r2:.4g}, C(0)={C[0]:.4g}")
    return CorrelationSeries(n_values=list(range(n_max + 1)), C_values=[float(c) for c in C],
                             fitted_rate=rate, fit_r2=r2, fit_constant=const)


def _parallel(func, count: int, workers: int):
    if workers <= 1:
        return [func(k) for k in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, range(count)))


def _split(total: int, parts: int) -> List[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if k < extra else 0) for k in range(parts)]


@dataclass
class MonteCarloCorrelation:
    """Direct orbit estimate of C(n) with standard errors"""
    C_values: np.ndarray
    std_errors: np.ndarray
    samples: int
    seed: int
    workers: int


def correlation_monte_carlo(system: SkewSystem, eq: LeafFamily, psi: BaseObservable, phi_obs: Observable,
                            n_max: int, samples: int, seed: int = 0, workers: int = 1) -> MonteCarloCorrelation:
    """Sample (x, y) from the equilibrium and average (psi(x_n) - mean)(phi(x_0, y_0) - mean)"""
    workers = max(1, workers)
    counts = _split(samples, workers)
    streams = rng_streams(seed, workers)

    def run(k: int):
        rng = streams[k]
        x, y = initial_points(system, eq, counts[k], rng)
        phi0 = np.asarray(phi_obs(x, y), dtype=float)
        psis = np.empty((n_max + 1, counts[k]))
        for n in range(n_max + 1):
            psis[n] = psi(x)
            x, y = system.step(x, y, rng)
        return phi0, psis

    parts = _parallel(run, workers, workers)
    phi0 = np.concatenate([p[0] for p in parts])
    psis = np.concatenate([p[1] for p in parts], axis=1)
    centered = (psis - psis.mean(axis=1, keepdims=True)) * (phi0 - phi0.mean())[None, :]
    C = centered.mean(axis=1)
    se = centered.std(axis=1, ddof=1) / math.sqrt(phi0.size)
    return MonteCarloCorrelation(C_values=C, std_errors=se, samples=phi0.size, seed=seed, workers=workers)


@dataclass
class KsResult:
    statistic: float
    critical: float
    pvalue: float
    passed: bool


def ks_normal(values: np.ndarray, sigma: float = 1.0) -> KsResult:
    """Two-sided KS against Normal(0, sigma^2) with the asymptotic 5% critical value"""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise InvalidInputError("KS test needs at least one value")
    if sigma <= 0:
        raise InvalidInputError(f"sigma must be positive, got {sigma}")
    result = stats.kstest(values, "norm", args=(0.0, sigma))
    critical = KS_COEFFICIENT / math.sqrt(values.size)
    return KsResult(statistic=float(result.statistic), critical=critical, pvalue=float(result.pvalue),
                    passed=bool(result.statistic <= critical))


@dataclass
class CltReport:
    """Normalized Birkhoff sums against Normal(0, sigma^2)"""
    sample_count: int
    n: int
    sigma_sq_estimate: float
    ks_statistic: Optional[float]
    ks_pass: Optional[bool]
    ks_critical: float
    mean: float
    truncation_lag: int
    floored: bool
    degenerate: bool
    max_abs_sum: float
    max_abs_sum_short: float
    seed: int
    workers: int
    pvalue: Optional[float] = None

    @property
    def passed(self) -> bool:
        if self.degenerate:
            return self.max_abs_sum <= self.max_abs_sum_short
        return bool(self.ks_pass)

    def to_dict(self) -> dict:
        return {
            "sample_count": self.sample_count, "n": self.n,
            "sigma_sq_estimate": self.sigma_sq_estimate, "ks_statistic": self.ks_statistic,
            "ks_pass": self.ks_pass, "ks_critical": self.ks_critical, "pvalue": self.pvalue,
            "mean": self.mean, "truncation_lag": self.truncation_lag, "floored": self.floored,
            "degenerate": self.degenerate, "max_abs_sum": self.max_abs_sum,
            "max_abs_sum_short": self.max_abs_sum_short, "seed": self.seed, "workers": self.workers,
            "passed": self.passed,
        }


@dataclass
class VarianceEstimate:
    """Asymptotic variance of the Birkhoff sums of phi_obs"""
    sigma_sq: float
    mean: float
    lag: int
    floored: bool
    c0: float

    def is_degenerate(self, degenerate_variance: float = DEGENERATE_VARIANCE,
                      degenerate_ratio: float = DEGENERATE_RATIO) -> bool:
        return self.sigma_sq <= max(degenerate_variance, degenerate_ratio * self.c0)


def variance_estimate(system: SkewSystem, eq: LeafFamily, phi_obs: Observable,
                      truncation: float = VARIANCE_TRUNCATION,
                      max_lag: int = MAX_VARIANCE_LAG) -> VarianceEstimate:
    """sigma^2 as the leafwise second moment of the martingale part of phi_obs.

    With v = sum_{j>=1} L^j (s - mean), phi_obs - mean = chi + v o f - v and
    sigma^2 = int chi^2 dmu. Every lag goes through the same grid operator and
    chi is integrated leaf by leaf, so a coboundary u o f - u leaves only the
    interpolation error of v. The plain series C(0) + 2 sum C(j) is summed
    alongside; ``floored`` reports that it went negative.
    """
    m = eq.base_weights
    centers = eq.centers
    s = fiber_integral(eq, phi_obs)
    mean = float(s @ m)
    masses = eq.leaf_masses()
    centered = s - mean * masses
    conditional = np.divide(s, masses, out=np.zeros_like(s), where=masses > 0)

    second = np.array([leaf.integrate(lambda y, x=x: phi_obs(np.full(np.shape(y), x), y) ** 2)
                       for x, leaf in zip(centers, eq.leaves)])
    c0 = float(second @ m) - mean ** 2

    v = np.zeros_like(s)
    series = c0
    current = centered
    lag = 0
    for lag in range(1, max_lag + 1):
        current = normalized_apply(system.spectral, system.A, current).values
        if np.max(np.abs(current)) < truncation:
            break
        v += current
        series += 2.0 * float(conditional @ (current * m))
    else:
        logger.warning(f"Variance series not truncated after {max_lag} lags")

    v_at_image = GridFunction(v, circle=system.base.circle)(system.base.evaluate(centers))
    shift = mean - v + v_at_image
    sigma_sq = float(np.array([leaf.integrate(lambda y, x=x, c=c: (phi_obs(np.full(np.shape(y), x), y) - c) ** 2)
                               for x, c, leaf in zip(centers, shift, eq.leaves)]) @ m)
    floored = series < 0
    if floored:
        logger.warning(f"Truncated correlation series is negative ({series:.3e}); grid too coarse for phi_obs")
    logger.debug(f"Variance estimate {sigma_sq:.6g} (series {series:.6g}, C(0) {c0:.6g}, lag {lag})")
    return VarianceEstimate(sigma_sq=max(sigma_sq, 0.0), mean=mean, lag=lag, floored=floored, c0=c0)


def clt_sample(system: SkewSystem, eq: LeafFamily, phi_obs: Observable, n: int, samples: int,
               seed: int = 0, workers: int = 1, truncation: float = VARIANCE_TRUNCATION,
               degenerate_variance: float = DEGENERATE_VARIANCE,
               degenerate_ratio: float = DEGENERATE_RATIO) -> CltReport:
    """Normalized Birkhoff sums of phi_obs - mean against Normal(0, sigma^2).

    The variance counts as zero below max(degenerate_variance, degenerate_ratio * C(0));
    the report then checks that the normalized sums shrink between n/10 and n.
    """
    if samples < 1000:
        raise InvalidInputError(f"samples must be at least 1000, got {samples}")
    if n < 10:
        raise InvalidInputError(f"Birkhoff length n must be at least 10, got {n}")
    estimate = variance_estimate(system, eq, phi_obs, truncation)
    sigma_sq, mean, lag, floored = estimate.sigma_sq, estimate.mean, estimate.lag, estimate.floored

    workers = max(1, workers)
    counts = _split(samples, workers)
    streams = rng_streams(seed, workers)
    short = max(1, n // 10)

    def run(k: int):
        rng = streams[k]
        x, y = initial_points(system, eq, counts[k], rng)
        total = np.zeros(counts[k])
        partial = None
        for step in range(n):
            total += np.asarray(phi_obs(x, y), dtype=float) - mean
            if step + 1 == short:
                partial = total.copy()
            x, y = system.step(x, y, rng)
        return total, partial

    parts = _parallel(run, workers, workers)
    sums = np.concatenate([p[0] for p in parts]) / math.sqrt(n)
    short_sums = np.concatenate([p[1] for p in parts]) / math.sqrt(short)
    critical = KS_COEFFICIENT / math.sqrt(samples)

    degenerate = estimate.is_degenerate(degenerate_variance, degenerate_ratio)
    if degenerate:
        ks_stat, ks_pass, pvalue = None, None, None
        logger.info(f"Degenerate variance {sigma_sq:.3e}; checking that normalized sums vanish")
    else:
        ks = ks_normal(sums, math.sqrt(sigma_sq))
        ks_stat, ks_pass, pvalue = ks.statistic, ks.passed, ks.pvalue
        logger.info(f"CLT: sigma^2={sigma_sq:.6g}, KS={ks_stat:.4g} vs {critical:.4g} -> "
                    f"{'pass' if ks_pass else 'fail'}")

    return CltReport(sample_count=samples, n=n, sigma_sq_estimate=sigma_sq, ks_statistic=ks_stat,
                     ks_pass=ks_pass, ks_critical=critical, mean=mean, truncation_lag=lag,
                     floored=floored, degenerate=degenerate,
                     max_abs_sum=float(np.max(np.abs(sums))),
                     max_abs_sum_short=float(np.max(np.abs(short_sums))),
                     seed=seed, workers=workers, pvalue=pvalue)


@dataclass
class CohomologyReport:
    """Birkhoff averages of phi_bar against its fiber-constant reduction"""
    ns: List[int]
    deltas: List[List[float]]
    initial_y: List[float]
    fitted_C: float
    within_bound: bool
    order_one_over_n: bool
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.within_bound and self.order_one_over_n

    def to_dict(self) -> dict:
        return {"ns": self.ns, "deltas": self.deltas, "initial_y": self.initial_y,
                "fitted_C": self.fitted_C, "within_bound": self.within_bound,
                "order_one_over_n": self.order_one_over_n, "passed": self.passed,
                "failures": list(self.failures)}


def birkhoff_cohomology_check(system: SkewSystem, phi_bar: Observable, y0: float, orbit_count: int = 16,
                              ns: Sequence[int] = (100, 1000, 10000), seed: int = 0,
                              fixed_fiber_tol: float = 1e-9) -> CohomologyReport:
    """Delta_n = |(1/n) sum phi_bar(F^k z) - (1/n) sum phi_bar(f^k x, y0)| along random orbits"""
    reduced = reduce_fiber_potential(phi_bar, y0, system, tol=fixed_fiber_tol)
    ns = sorted(int(n) for n in ns)
    if not ns or ns[0] < 1:
        raise InvalidInputError(f"ns must be positive integers, got {ns}")
    rng = rng_streams(seed, 1)[0]
    m = system.spectral.m_weights
    cell = rng.choice(system.N, size=orbit_count, p=m / m.sum())
    x = system.snap((cell + rng.uniform(size=orbit_count)) / system.N)
    y = rng.uniform(size=orbit_count)
    initial_y = y.copy()

    difference = np.zeros(orbit_count)
    deltas = []
    checkpoints = set(ns)
    for k in range(1, ns[-1] + 1):
        difference += np.asarray(phi_bar(x, y), dtype=float) - reduced(x)
        x, y = system.step(x, y, rng)
        if k in checkpoints:
            deltas.append(np.abs(difference) / k)
    table = np.array(deltas)

    # C is fitted on the shortest horizon; longer horizons must stay under 2C/n
    fitted_C = float(np.max(table[0]) * ns[0])
    within = bool(np.all(table <= 2.0 * fitted_C / np.array(ns)[:, None] + 1e-15))
    failures = []
    order = True
    for a in range(len(ns) - 1):
        ratio = ns[a + 1] / ns[a]
        big, small = table[a], table[a + 1]
        # Delta should shrink by about the length ratio; allow a factor two
        bad = (big > 1e-15) & (small > big * 2.0 / ratio)
        if np.any(bad):
            order = False
            failures.append(f"Delta_{ns[a + 1]} exceeds Delta_{ns[a]}*{2.0 / ratio:g} on {int(bad.sum())} orbits")
    logger.info(f"Cohomology check: C={fitted_C:.4g}, 1/n order {'holds' if order else 'fails'}")
    return CohomologyReport(ns=ns, deltas=table.T.tolist(), initial_y=initial_y.tolist(),
                            fitted_C=fitted_C, within_bound=within, order_one_over_n=order,
                            failures=failures)

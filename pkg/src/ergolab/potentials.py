"""
Hölder potentials on the base, membership diagnostics and fiber reduction
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .base_dynamics import IntervalMap
from .exceptions import ClassSViolation, InvalidInputError, PotentialError

logger = logging.getLogger(__name__)

DEFAULT_GRID = 256
DEFAULT_EPSILON_PHI = 0.05


@dataclass(frozen=True)
class HolderPotential:
    """zeta-Hölder potential phi on the base together with its sampled statistics"""
    evaluator: Callable[[np.ndarray], np.ndarray]
    zeta: float
    epsilon_phi: float = DEFAULT_EPSILON_PHI
    holder_constant_estimate: float = 0.0
    sup_val: float = 0.0
    inf_val: float = 0.0
    grid_size: int = 0
    circle: bool = False
    name: str = "custom"

    def __post_init__(self):
        if not 0.0 < self.zeta <= 1.0:
            raise InvalidInputError(f"zeta must lie in (0, 1], got {self.zeta}")
        if self.epsilon_phi <= 0:
            raise InvalidInputError(f"epsilon_phi must be positive, got {self.epsilon_phi}")
        if self.inf_val > self.sup_val:
            raise InvalidInputError(f"inf_val {self.inf_val} exceeds sup_val {self.sup_val}")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.evaluator(x), dtype=float), x.shape).copy()

    @property
    def populated(self) -> bool:
        return self.grid_size > 0

    @property
    def oscillation(self) -> float:
        return self.sup_val - self.inf_val

    def with_estimates(self, grid_size: int = DEFAULT_GRID) -> "HolderPotential":
        """Copy with sup, inf and the Hölder constant sampled on ``grid_size``"""
        values = self(interior_nodes(grid_size))
        if not np.all(np.isfinite(values)):
            raise PotentialError(f"Potential {self.name} is not finite on the sampling grid")
        return replace(
            self,
            holder_constant_estimate=_holder_scan(values, self.zeta, grid_size, self.circle),
            sup_val=float(np.max(values)),
            inf_val=float(np.min(values)),
            grid_size=grid_size,
        )


def interior_nodes(grid_size: int) -> np.ndarray:
    """Nodes i/grid_size for 0 < i < grid_size; refining by 2 keeps every old node"""
    return np.arange(1, grid_size) / grid_size


def _holder_scan(values: np.ndarray, zeta: float, grid_size: int, circle: bool) -> float:
    n = len(values)
    best = 0.0
    for lag in range(1, n):
        d = lag / grid_size
        if circle:
            d = min(d, 1.0 - d)
        ratio = np.max(np.abs(values[lag:] - values[:-lag])) / d ** zeta
        best = max(best, float(ratio))
    return best


def estimate_holder_constant(phi: HolderPotential, grid_size: int) -> float:
    """Max of |phi(x)-phi(y)|/d(x,y)^zeta over all pairs of interior nodes"""
    if grid_size < 8:
        raise InvalidInputError(f"grid_size must be at least 8, got {grid_size}")
    values = phi(interior_nodes(grid_size))
    return _holder_scan(values, phi.zeta, grid_size, phi.circle)


@dataclass
class MembershipReport:
    """Outcome of the P_M membership checks"""
    f31: bool
    f32: bool
    oscillation: float
    exp_holder: float
    f32_bound: float
    epsilon_phi: float
    grid_size: int

    @property
    def passed(self) -> bool:
        return self.f31 and self.f32

    def to_dict(self) -> dict:
        return {
            "f31": self.f31, "f32": self.f32, "oscillation": self.oscillation,
            "exp_holder": self.exp_holder, "f32_bound": self.f32_bound,
            "epsilon_phi": self.epsilon_phi, "grid_size": self.grid_size,
        }


def check_PM_membership(phi: HolderPotential) -> MembershipReport:
    if not phi.populated:
        raise InvalidInputError(f"Potential {phi.name} has no estimates; call with_estimates first")
    values = np.exp(phi(interior_nodes(phi.grid_size)))
    exp_holder = _holder_scan(values, phi.zeta, phi.grid_size, phi.circle)
    bound = phi.epsilon_phi * math.exp(phi.inf_val)
    report = MembershipReport(
        f31=phi.oscillation < phi.epsilon_phi,
        f32=exp_holder < bound,
        oscillation=phi.oscillation,
        exp_holder=exp_holder,
        f32_bound=bound,
        epsilon_phi=phi.epsilon_phi,
        grid_size=phi.grid_size,
    )
    logger.debug(f"P_M check for {phi.name}: f31={report.f31} ({report.oscillation:.4g}), "
                 f"f32={report.f32} ({exp_holder:.4g} vs {bound:.4g})")
    return report


def gap_condition_value(deg: int, q: int, sigma: float, L: float, zeta: float,
                        epsilon_phi: float, exponent: Optional[float] = None) -> float:
    """exp(eps)[(deg-q)sigma^-e + q L^e (1 + (L-1)^e)]/deg with e = zeta unless given"""
    if not (deg > q >= 0):
        raise InvalidInputError(f"need deg > q >= 0, got deg={deg}, q={q}")
    if sigma <= 1:
        raise InvalidInputError(f"sigma must exceed 1, got {sigma}")
    if L < 1:
        raise InvalidInputError(f"L must be at least 1, got {L}")
    if not 0.0 < zeta <= 1.0:
        raise InvalidInputError(f"zeta must lie in (0, 1], got {zeta}")
    if epsilon_phi < 0:
        raise InvalidInputError(f"epsilon_phi must be non-negative, got {epsilon_phi}")
    e = zeta if exponent is None else exponent
    inner = (deg - q) * sigma ** (-e) + q * L ** e * (1.0 + (L - 1.0) ** e)
    return math.exp(epsilon_phi) * inner / deg


def constant_potential(c: float, zeta: float = 1.0, epsilon_phi: float = DEFAULT_EPSILON_PHI,
                       grid_size: int = DEFAULT_GRID, circle: bool = False) -> HolderPotential:
    return HolderPotential(
        evaluator=lambda x: np.full(np.shape(x), float(c)),
        zeta=zeta, epsilon_phi=epsilon_phi, circle=circle, name=f"constant({c:g})",
    ).with_estimates(grid_size)


def geometric_potential(fmap: IntervalMap, t: float, zeta: float,
                        epsilon_phi: float = DEFAULT_EPSILON_PHI,
                        grid_size: int = DEFAULT_GRID) -> HolderPotential:
    """x -> -t log|Df(x)|"""
    probe = fmap.derivative(interior_nodes(grid_size))
    if np.any(probe == 0.0):
        raise PotentialError(f"Derivative of {fmap.name} vanishes on the sampling grid")

    def evaluator(x):
        return -t * np.log(np.abs(fmap.derivative(x)))

    return HolderPotential(
        evaluator=evaluator, zeta=zeta, epsilon_phi=epsilon_phi, circle=fmap.circle,
        name=f"geometric(t={t:g})",
    ).with_estimates(grid_size)


def tabulated_potential(values: Sequence[float], zeta: float,
                        epsilon_phi: float = DEFAULT_EPSILON_PHI,
                        grid_size: int = DEFAULT_GRID, circle: bool = False) -> HolderPotential:
    """Linear interpolation of a table given at cell centers (i+1/2)/n"""
    table = np.asarray(values, dtype=float)
    if table.ndim != 1 or len(table) < 2:
        raise InvalidInputError("a tabulated potential needs at least two values")
    if not np.all(np.isfinite(table)):
        raise PotentialError("tabulated potential contains non-finite values")
    centers = (np.arange(len(table)) + 0.5) / len(table)
    if circle:
        xp = np.concatenate(([centers[-1] - 1.0], centers, [centers[0] + 1.0]))
        fp = np.concatenate(([table[-1]], table, [table[0]]))
    else:
        xp, fp = centers, table

    return HolderPotential(
        evaluator=lambda x: np.interp(x, xp, fp), zeta=zeta, epsilon_phi=epsilon_phi,
        circle=circle, name=f"table({len(table)})",
    ).with_estimates(grid_size)


def lift_potential(phi: HolderPotential) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """(x, y) -> phi(x)"""
    def lifted(x, y):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(phi(x), np.broadcast(x, np.asarray(y)).shape).copy()
    return lifted


def reduce_fiber_potential(phi_bar: Callable[[np.ndarray, np.ndarray], np.ndarray], y0: float,
                           system, zeta: Optional[float] = None,
                           epsilon_phi: Optional[float] = None, tol: float = 1e-9,
                           grid_size: int = DEFAULT_GRID) -> HolderPotential:
    """x -> phi_bar(x, y0), provided G(x, y0) = y0 on the system's grid"""
    if not 0.0 <= y0 <= 1.0:
        raise InvalidInputError(f"y0 must lie in [0, 1], got {y0}")
    x = system.grid_centers()
    images = system.fiber_image(x, np.full_like(x, y0))
    deviation = float(np.max(np.abs(images - y0)))
    if deviation > tol:
        raise ClassSViolation(
            f"G(x, {y0:g}) deviates from {y0:g} by {deviation:.3e} > {tol:g}; system is outside class S",
            max_deviation=deviation,
        )

    base_potential = system.potential
    return HolderPotential(
        evaluator=lambda xs: np.asarray(phi_bar(xs, np.full(np.shape(xs), y0)), dtype=float),
        zeta=base_potential.zeta if zeta is None else zeta,
        epsilon_phi=base_potential.epsilon_phi if epsilon_phi is None else epsilon_phi,
        circle=system.base.circle,
        name=f"reduced(y0={y0:g})",
    ).with_estimates(grid_size)


@dataclass
class TernarySkewReport:
    """Closed-form checks for the 2D skew base (3x mod 1, g(x, y))"""
    delta: float
    sigma: float
    zeta: float
    q: int
    expansion_lemma: bool
    lemma_equivalence: bool
    min_margin: float
    max_L_outside: float
    L_bound: float
    oscillation_bound: float
    gap_value: float
    gap_limit: float
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.expansion_lemma and self.lemma_equivalence and self.gap_limit < 1.0

    def to_dict(self) -> Dict[str, object]:
        return {
            "delta": self.delta, "sigma": self.sigma, "zeta": self.zeta, "q": self.q,
            "expansion_lemma": self.expansion_lemma, "lemma_equivalence": self.lemma_equivalence,
            "min_margin": self.min_margin, "max_L_outside": self.max_L_outside,
            "L_bound": self.L_bound, "oscillation_bound": self.oscillation_bound,
            "gap_value": self.gap_value, "gap_limit": self.gap_limit,
            "failures": list(self.failures),
        }


def ternary_skew_conditions(delta: float, sigma: float = 2.0, zeta: float = 1.0,
                            epsilon_0: float = 0.05, samples: int = 64,
                            dx_g: Optional[Callable] = None,
                            dy_g: Optional[Callable] = None) -> TernarySkewReport:
    """Expansion lemma and gap value for f(x, y) = (3x mod 1, g(x, y)).

    Partial derivatives default to dx_g = delta cos(2 pi x), dy_g = 1 + delta/2
    away from the critical square around (1/2, 1/2).
    """
    if not 0.0 < delta < 1.0:
        raise InvalidInputError(f"delta must lie in (0, 1), got {delta}")
    if not 0.0 < epsilon_0 < 1.0 / 6.0:
        raise InvalidInputError(f"epsilon_0 must lie in (0, 1/6), got {epsilon_0}")
    if dx_g is None:
        dx_g = lambda x, y: delta * np.cos(2.0 * np.pi * x)
    if dy_g is None:
        dy_g = lambda x, y: np.full(np.broadcast(x, y).shape, 1.0 + delta / 2.0)

    axis = (np.arange(samples) + 0.5) / samples
    X, Y = np.meshgrid(axis, axis, indexing="ij")
    outside = ~((np.abs(X - 0.5) < epsilon_0) & (np.abs(Y - 0.5) < epsilon_0))
    gx = np.abs(np.asarray(dx_g(X, Y), dtype=float))
    gy = np.abs(np.asarray(dy_g(X, Y), dtype=float))

    L = np.maximum(1.0 / 3.0, (gx + 3.0) / (3.0 * gy))
    margin = gy - (1.0 + gx / 3.0)
    lemma = bool(np.all(margin[outside] > 0))
    equivalence = bool(np.all((margin > 0) == (L < 1.0)))

    # the critical square lies inside the middle strip only
    q = 1
    L_bound = (3.0 + delta) / (3.0 * (1.0 - delta))
    oscillation_bound = math.log((1.0 + delta) / (1.0 - delta))
    failures = []
    if not lemma:
        failures.append("expansion lemma fails on the complement of the critical square")
    if not equivalence:
        failures.append("L < 1 and the derivative inequality disagree on the sample grid")

    return TernarySkewReport(
        delta=delta, sigma=sigma, zeta=zeta, q=q,
        expansion_lemma=lemma, lemma_equivalence=equivalence,
        min_margin=float(np.min(margin[outside])),
        max_L_outside=float(np.max(L[outside])),
        L_bound=L_bound, oscillation_bound=oscillation_bound,
        gap_value=gap_condition_value(3, q, sigma, max(L_bound, 1.0), zeta, oscillation_bound),
        gap_limit=gap_condition_value(3, q, sigma, 1.0, zeta, 0.0),
        failures=failures,
    )

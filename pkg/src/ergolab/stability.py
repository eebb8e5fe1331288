"""
Perturbation families of skew systems, admissibility checks and equilibrium stability curves
"""
import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .base_dynamics import l_adic
from .exceptions import HypothesisViolation, InvalidInputError, StabilityError
from .measures import DEFAULT_FAR_PAIRS, AtomicMeasure, LeafFamily, family_distance_linf, holder_seminorm
from .potentials import constant_potential
from .ruelle import grid_centers, lasota_yorke_probe
from .skew_transfer import FiberMap, SkewSystem, equilibrium, piecewise_constant

logger = logging.getLogger(__name__)

DEFAULT_DELTAS = (0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001)
ADMISSIBILITY_SLACK = 1e-9
JITTER = 0.10
C_RATIO_RANGE = (0.2, 5.0)

Shift = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class PerturbationFamily:
    """delta -> F_delta with modulus R(delta); generator(0) is the unperturbed system"""
    generator: Callable[[float], SkewSystem]
    R: Callable[[float], float]
    deltas: Tuple[float, ...] = DEFAULT_DELTAS
    kind: str = "constant"
    name: str = "family"
    notes: str = ""
    coupling_bound: Optional[Callable[[float], float]] = None
    _systems: Dict[float, SkewSystem] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.deltas = tuple(sorted((float(d) for d in self.deltas), reverse=True))
        if not self.deltas:
            raise InvalidInputError("a perturbation family needs at least one delta")
        if any(not 0.0 < d < 1.0 for d in self.deltas):
            raise InvalidInputError(f"deltas must lie in (0, 1), got {self.deltas}")
        if self.R(0.0) != 0.0:
            raise InvalidInputError(f"R(0) must be 0, got {self.R(0.0)}")
        moduli = [self.R(d) for d in self.deltas]
        if any(a < b for a, b in zip(moduli, moduli[1:])):
            raise InvalidInputError(f"R must be non-decreasing on the sweep, got {moduli}")

    def system(self, delta: float) -> SkewSystem:
        delta = float(delta)
        if delta not in self._systems:
            self._systems[delta] = self.generator(delta)
        return self._systems[delta]


def _shifted_fiber(fiber: FiberMap, delta: float, shift: Shift, shift_holder: float) -> FiberMap:
    maps = tuple(
        (lambda x, y, G=G: np.clip(G(x, y) + delta * shift(x, y), 0.0, 1.0))
        for G in fiber.branch_maps
    )
    return FiberMap(branch_maps=maps, alpha=fiber.alpha, G_holder=fiber.G_holder + delta * shift_holder,
                    name=f"{fiber.name}+{delta:g}s")


def fiber_shift(system: SkewSystem, shift: Optional[Shift] = None, shift_sup: float = 1.0,
                shift_holder: float = 0.0, deltas: Sequence[float] = DEFAULT_DELTAS) -> PerturbationFamily:
    """G_delta = clip(G + delta s), R(delta) = delta sup|s|; s must not depend on y"""
    shift = shift or (lambda x, y: np.ones(np.shape(x)))
    alpha = system.fiber.alpha
    bin_width = 1.0 / system.bins if system.bins else 0.0

    def generator(delta: float) -> SkewSystem:
        if delta == 0.0:
            return system
        return dataclasses.replace(system, fiber=_shifted_fiber(system.fiber, delta, shift, shift_holder),
                                   name=f"{system.name} [fiber shift {delta:g}]")

    return PerturbationFamily(
        generator=generator, R=lambda d: shift_sup * d, deltas=tuple(deltas), kind="fiber-shift",
        name=f"fiber_shift({system.name})",
        notes="clip at the fiber boundary is inactive while the attractor stays below 1 - 2 max(delta)",
        # both equilibria are driven by the same base orbit; fiber offsets accumulate geometrically
        coupling_bound=lambda d: shift_sup * d / (1.0 - alpha) + 2.0 * bin_width,
    )


def base_shift(fiber: FiberMap, l: int = 2, zeta: float = 1.0, N: int = 256, bins: Optional[int] = 256,
               atom_cap: int = 512, deltas: Sequence[float] = DEFAULT_DELTAS,
               epsilon_phi: float = 0.05) -> PerturbationFamily:
    """f_delta(x) = l x + delta mod 1 with the constant potential -log l, R(delta) = delta"""
    potential = constant_potential(-math.log(l), zeta=zeta, epsilon_phi=epsilon_phi)

    def generator(delta: float) -> SkewSystem:
        return SkewSystem.build(l_adic(l, shift=delta), fiber, potential, N=N, bins=bins, atom_cap=atom_cap,
                                name=f"l_adic({l}, shift={delta:g}) x {fiber.name}")

    return PerturbationFamily(generator=generator, R=lambda d: d, deltas=tuple(deltas), kind="base-shift",
                              name=f"base_shift(l={l})")


def coefficient(system: SkewSystem, alphas: Sequence[float], directions: Sequence[float],
                offsets: Optional[Sequence[float]] = None,
                deltas: Sequence[float] = DEFAULT_DELTAS) -> PerturbationFamily:
    """Piecewise-constant fibers alpha_i + delta c_i over a fixed base, R(delta) = delta max|c_i|"""
    alphas = [float(a) for a in alphas]
    directions = [float(c) for c in directions]
    if len(directions) != len(alphas):
        raise InvalidInputError(f"got {len(alphas)} coefficients but {len(directions)} directions")
    unperturbed = dataclasses.replace(system, fiber=piecewise_constant(alphas, offsets))
    scale = max(abs(c) for c in directions)

    def generator(delta: float) -> SkewSystem:
        if delta == 0.0:
            return unperturbed
        perturbed = [a + delta * c for a, c in zip(alphas, directions)]
        return dataclasses.replace(unperturbed, fiber=piecewise_constant(perturbed, offsets),
                                   name=f"{system.base.name} x coefficients {perturbed}")

    return PerturbationFamily(generator=generator, R=lambda d: scale * d, deltas=tuple(deltas),
                              kind="coefficient", name=f"coefficient({alphas})")


def constant(system: SkewSystem, deltas: Sequence[float] = DEFAULT_DELTAS) -> PerturbationFamily:
    """The generator ignores delta"""
    return PerturbationFamily(generator=lambda d: system, R=lambda d: d, deltas=tuple(deltas),
                              kind="constant", name=f"constant({system.name})")


@dataclass
class AdmissibilityReport:
    delta: float
    R: float
    degree_equal: bool
    jacobian_difference: float
    spectral_slack: float
    preimage_displacement: float
    fiber_displacement: float
    density_ratio: float
    slack: float
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "delta": self.delta, "R": self.R,
            "U1": {"passed": self.degree_equal},
            "U2.1": {"value": self.jacobian_difference, "spectral_slack": self.spectral_slack,
                     "passed": "U2.1" not in self.failures},
            "U2.2": {"value": self.preimage_displacement, "passed": "U2.2" not in self.failures},
            "U2.3": {"value": self.fiber_displacement, "passed": "U2.3" not in self.failures},
            "U3": {"value": self.density_ratio, "passed": "U3" not in self.failures},
            "passed": self.passed,
        }


def jacobian_reciprocals(system: SkewSystem) -> np.ndarray:
    """g(gamma) = h(gamma) e^phi(gamma) / (lambda h(f gamma)) at every preimage of every grid center"""
    st = system.stencil
    h = system.spectral.h.values
    h_pre = st.w_l * h[st.idx_l] + st.w_r * h[st.idx_r]
    return h_pre * st.expphi / (system.spectral.lam * h[None, :])


def _pair_preimages(base, pre0: np.ndarray, pre1: np.ndarray) -> np.ndarray:
    """For every perturbed preimage, the index of the nearest unperturbed one at the same center"""
    dist = base.distance(pre1[:, None, :], pre0[None, :, :])
    return np.argmin(dist, axis=1)


def check_admissibility(family: PerturbationFamily, delta: float, fiber_grid: int = 64,
                        slack: float = ADMISSIBILITY_SLACK) -> AdmissibilityReport:
    sys0 = family.system(0.0)
    sys1 = family.system(delta)
    if sys0.N != sys1.N:
        raise InvalidInputError(f"perturbed grid N={sys1.N} differs from unperturbed N={sys0.N}")
    R = family.R(delta)
    failures = []

    degree_equal = sys0.base.degree == sys1.base.degree
    if not degree_equal:
        failures.append("U1")
        preimage_disp = jac_diff = math.inf
    else:
        pre0, pre1 = sys0.stencil.preimages, sys1.stencil.preimages
        match = _pair_preimages(sys0.base, pre0, pre1)
        columns = np.arange(sys0.N)[None, :]
        preimage_disp = float(np.max(sys0.base.distance(pre1, pre0[match, columns])))
        g0, g1 = jacobian_reciprocals(sys0), jacobian_reciprocals(sys1)
        jac_diff = float(np.max(np.sum(np.abs(g1 - g0[match, columns]), axis=0)))
    spectral_slack = sum(s.spectral.residual_h + s.spectral.residual_nu for s in (sys0, sys1))
    if degree_equal and jac_diff > R + spectral_slack + slack:
        failures.append("U2.1")
    if degree_equal and preimage_disp > R + slack:
        failures.append("U2.2")

    x = np.repeat(sys0.grid_centers(), fiber_grid)
    y = np.tile(grid_centers(fiber_grid), sys0.N)
    fiber_disp = float(np.max(np.abs(sys1.fiber_image(x, y) - sys0.fiber_image(x, y))))
    if fiber_disp > R + slack:
        failures.append("U2.3")

    m0, m1 = sys0.spectral.m_weights, sys1.spectral.m_weights
    positive = m0 > 0
    density_ratio = float(np.max(m1[positive] / m0[positive])) if np.any(positive) else math.inf
    if np.any(m1[~positive] > 0) or not math.isfinite(density_ratio):
        failures.append("U3")

    report = AdmissibilityReport(delta=delta, R=R, degree_equal=degree_equal, jacobian_difference=jac_diff,
                                 spectral_slack=spectral_slack, preimage_displacement=preimage_disp,
                                 fiber_displacement=fiber_disp, density_ratio=density_ratio, slack=slack,
                                 failures=failures)
    logger.info(f"Admissibility of {family.name} at delta={delta:g}: "
                f"{'pass' if report.passed else 'fail ' + ', '.join(failures)}")
    return report


@dataclass
class StabilityCurve:
    """d(delta) = |mu_delta - mu_0|_inf over the sweep with the fitted envelope"""
    deltas: List[float]
    distances: List[float]
    R_values: List[float]
    envelope_factors: List[float]
    C_candidates: List[float]
    C_hat: float
    monotone: bool
    C_stable: bool
    coupling_bounds: Optional[List[float]] = None
    equilibria: Dict[float, LeafFamily] = field(default_factory=dict, repr=False)

    @property
    def within_coupling(self) -> bool:
        if self.coupling_bounds is None:
            return True
        return all(d <= b for d, b in zip(self.distances, self.coupling_bounds))

    @property
    def envelopes(self) -> List[float]:
        return [self.C_hat * e for e in self.envelope_factors]

    @property
    def passed(self) -> bool:
        return self.monotone and self.C_stable and self.within_coupling

    def to_rows(self) -> List[Tuple[float, float, float, float, float]]:
        return [(d, dist, R, env, self.C_hat)
                for d, dist, R, env in zip(self.deltas, self.distances, self.R_values, self.envelopes)]

    def to_dict(self) -> dict:
        return {"deltas": self.deltas, "distances": self.distances, "C_hat": self.C_hat,
                "C_candidates": self.C_candidates, "monotone": self.monotone, "C_stable": self.C_stable,
                "coupling_bounds": self.coupling_bounds, "within_coupling": self.within_coupling,
                "passed": self.passed}


def _require_hypotheses(system: SkewSystem, delta: float):
    if system.beta >= 1.0:
        raise HypothesisViolation(f"(alpha L)^zeta = {system.beta:.4g} >= 1 at delta={delta:g}",
                                  violations=["(alpha L)^zeta < 1"])


def _equilibrium_family(family: PerturbationFamily, delta: float, m2: AtomicMeasure, tol: float,
                        n_max: int, workers: int) -> LeafFamily:
    system = family.system(delta)
    _require_hypotheses(system, delta)
    result = equilibrium(system, m2, tol=tol, n_max=n_max, workers=workers)
    if not result.converged:
        raise StabilityError(f"equilibrium at delta={delta:g} did not converge in {n_max} iterations",
                             delta=delta)
    return result.family


def _ratio_in_range(a: float, b: float) -> bool:
    if a == 0.0 and b == 0.0:
        return True
    if a == 0.0 or b == 0.0:
        return False
    lo, hi = C_RATIO_RANGE
    return lo <= b / a <= hi


def stability_curve(family: PerturbationFamily, m2: Optional[AtomicMeasure] = None, tol: float = 1e-6,
                    n_max: int = 400, workers: int = 1, jitter: float = JITTER) -> StabilityCurve:
    if m2 is None:
        m2 = AtomicMeasure.dirac(0.0)
    sys0 = family.system(0.0)
    zeta = sys0.zeta
    mu0 = _equilibrium_family(family, 0.0, m2, tol, n_max, 1)

    def run(delta: float) -> LeafFamily:
        return _equilibrium_family(family, delta, m2, tol, n_max, 1)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            families = list(pool.map(run, family.deltas))
    else:
        families = [run(d) for d in family.deltas]

    distances = [family_distance_linf(mu, mu0, zeta, workers) for mu in families]
    R_values = [family.R(d) for d in family.deltas]
    factors = [R ** zeta * abs(math.log(d)) for R, d in zip(R_values, family.deltas)]
    candidates = [dist / f if f > 0 else 0.0 for dist, f in zip(distances, factors)]
    C_hat = max(candidates)

    monotone = all(b <= a * (1.0 + jitter) + 1e-12 for a, b in zip(distances, distances[1:]))
    C_stable = _ratio_in_range(candidates[-2], candidates[-1]) if len(candidates) > 1 else True
    bounds = [family.coupling_bound(d) for d in family.deltas] if family.coupling_bound else None

    curve = StabilityCurve(deltas=list(family.deltas), distances=distances, R_values=R_values,
                           envelope_factors=factors, C_candidates=candidates, C_hat=C_hat,
                           monotone=monotone, C_stable=C_stable, coupling_bounds=bounds,
                           equilibria={0.0: mu0, **dict(zip(family.deltas, families))})
    if not curve.passed:
        logger.warning(f"Stability curve of {family.name} fails: monotone={monotone}, C stable={C_stable}, "
                       f"within coupling={curve.within_coupling}")
    else:
        logger.info(f"Stability curve of {family.name}: C_hat={C_hat:.4g}, d(min delta)={distances[-1]:.3e}")
    return curve


@dataclass
class UniformConstantsReport:
    """Per-delta Lasota-Yorke fits, contraction rates and equilibrium regularity"""
    deltas: List[float]
    r_hat: List[float]
    ly_B: List[float]
    ly_C: List[float]
    beta: List[float]
    D: List[float]
    holder: List[float]
    B_u: float
    slack: float

    @property
    def sup_beta(self) -> float:
        return max(self.beta)

    @property
    def sup_D(self) -> float:
        return max(self.D)

    @property
    def sup_holder(self) -> float:
        return max(self.holder)

    @property
    def passed(self) -> bool:
        return self.sup_beta < 1.0 and self.sup_holder <= self.B_u + self.slack

    def to_dict(self) -> dict:
        return {"deltas": self.deltas, "r_hat": self.r_hat, "ly_B": self.ly_B, "ly_C": self.ly_C,
                "beta": self.beta, "D": self.D, "holder": self.holder, "sup_beta": self.sup_beta,
                "sup_D": self.sup_D, "sup_holder": self.sup_holder, "B_u": self.B_u, "slack": self.slack,
                "passed": self.passed}


def uniform_constants_probe(family: PerturbationFamily, curve: Optional[StabilityCurve] = None,
                            m2: Optional[AtomicMeasure] = None, trials: int = 10, n_max: int = 20,
                            far_pairs: int = DEFAULT_FAR_PAIRS, seed: int = 0,
                            workers: int = 1) -> UniformConstantsReport:
    deltas = [0.0] + list(family.deltas)
    if curve is None:
        curve = stability_curve(family, m2, workers=workers)
    rows = {"r_hat": [], "ly_B": [], "ly_C": [], "beta": [], "D": [], "holder": []}
    for delta in deltas:
        system = family.system(delta)
        ly = lasota_yorke_probe(system.spectral, system.A, trials=trials, n_max=n_max, zeta=system.zeta,
                                seed=seed)
        rows["r_hat"].append(ly.r_hat)
        rows["ly_B"].append(ly.B)
        rows["ly_C"].append(ly.C)
        rows["beta"].append(system.beta)
        rows["D"].append(system.D)
        rows["holder"].append(holder_seminorm(curve.equilibria[delta], system.zeta, far_pairs=far_pairs,
                                              seed=seed, workers=workers))

    beta_u = max(rows["beta"])
    B_u = max(rows["D"]) / (1.0 - beta_u) if beta_u < 1.0 else math.inf
    sys0 = family.system(0.0)
    slack = 2.0 * (0.5 / sys0.bins) ** sys0.zeta * sys0.N ** sys0.zeta if sys0.bins else 0.0
    report = UniformConstantsReport(deltas=deltas, B_u=B_u, slack=slack, **rows)
    if report.sup_beta >= 1.0:
        logger.warning(f"sup beta over the sweep is {report.sup_beta:.4g} >= 1")
    logger.info(f"Uniform constants of {family.name}: sup beta={report.sup_beta:.4g}, "
                f"sup D={report.sup_D:.4g}, sup |mu|={report.sup_holder:.4g} vs B_u={B_u:.4g}")
    return report

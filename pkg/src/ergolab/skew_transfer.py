"""
Skew products F(x, y) = (f(x), G(x, y)) and the leafwise transfer operator
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .base_dynamics import IntervalMap
from .exceptions import HypothesisViolation, InvalidInputError, TransferError
from .measures import (
    DEFAULT_ATOM_CAP,
    DEFAULT_BINS,
    DEFAULT_FAR_PAIRS,
    AtomicMeasure,
    LeafFamily,
    coarsen,
    family_distance_linf,
    holder_pairs,
)
from .potentials import HolderPotential, gap_condition_value
from .ruelle import (
    DEFAULT_EIGEN_MAX_ITER,
    DEFAULT_EIGEN_TOL,
    SpectralData,
    TransferStencil,
    build_operator_matrix,
    grid_centers,
    leading_eigendata,
    normalized_apply,
)

logger = logging.getLogger(__name__)

FiberFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

CONTRACTION_SLACK = 1e-12
HOLDER_SLACK = 1e-9
FIT_WINDOW = 20
MANTISSA_BITS = 52


@dataclass(frozen=True)
class FiberMap:
    """Per-branch fiber maps G_b(x, y) with contraction rate alpha and base-Hölder constant"""
    branch_maps: Tuple[FiberFn, ...]
    alpha: float
    G_holder: float
    name: str = "custom"

    def __post_init__(self):
        if not self.branch_maps:
            raise InvalidInputError("FiberMap needs at least one branch map")
        if not 0.0 <= self.alpha < 1.0:
            raise InvalidInputError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.G_holder < 0:
            raise InvalidInputError(f"G_holder must be non-negative, got {self.G_holder}")
        object.__setattr__(self, "branch_maps", tuple(self.branch_maps))

    def for_branch(self, b: int) -> FiberFn:
        return self.branch_maps[b] if len(self.branch_maps) > 1 else self.branch_maps[0]

    def evaluate(self, base: IntervalMap, x, y) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        idx = base.branch_index(x.ravel()).reshape(x.shape)
        out = np.empty(x.shape)
        for b in range(base.degree):
            mask = idx == b
            if np.any(mask):
                out[mask] = self.for_branch(b)(x[mask], y[mask])
        return out


def affine(alpha: float, c: float) -> FiberMap:
    """G(x, y) = alpha y + c on every branch"""
    if c < 0 or alpha + c > 1.0 + 1e-12:
        raise InvalidInputError(f"alpha*y + c must map [0,1] into itself, got alpha={alpha}, c={c}")
    return FiberMap(branch_maps=(lambda x, y: alpha * y + c,), alpha=alpha, G_holder=0.0,
                    name=f"affine({alpha:g}, {c:g})")


def solenoid(alpha: float, amplitude: float, zeta: float = 1.0) -> FiberMap:
    """G(x, y) = alpha y + amplitude (1 + cos 2 pi x)"""
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    if amplitude < 0 or alpha + 2.0 * amplitude > 1.0 + 1e-12:
        raise InvalidInputError(f"alpha + 2*amplitude must not exceed 1, got {alpha + 2 * amplitude}")
    lipschitz = 2.0 * np.pi * amplitude
    oscillation = 2.0 * amplitude
    holder = lipschitz ** zeta * oscillation ** (1.0 - zeta) if amplitude > 0 else 0.0
    return FiberMap(
        branch_maps=(lambda x, y: alpha * y + amplitude * (1.0 + np.cos(2.0 * np.pi * x)),),
        alpha=alpha, G_holder=holder, name=f"solenoid({alpha:g}, {amplitude:g})",
    )


def piecewise_constant(alphas: Sequence[float], offsets: Optional[Sequence[float]] = None) -> FiberMap:
    """G(x, y) = alpha_i y + c_i on the i-th branch; constant in x inside each branch"""
    alphas = [float(a) for a in alphas]
    offsets = [0.0] * len(alphas) if offsets is None else [float(c) for c in offsets]
    if len(offsets) != len(alphas):
        raise InvalidInputError(f"got {len(alphas)} coefficients but {len(offsets)} offsets")
    for a, c in zip(alphas, offsets):
        if not 0.0 <= a < 1.0 or c < 0 or a + c > 1.0 + 1e-12:
            raise InvalidInputError(f"branch map {a}*y + {c} must contract [0,1] into itself")
    maps = tuple((lambda x, y, a=a, c=c: a * y + c) for a, c in zip(alphas, offsets))
    return FiberMap(branch_maps=maps, alpha=max(alphas), G_holder=0.0,
                    name=f"piecewise_constant({alphas})")


def piecewise_lipschitz(alpha: float, slopes: Sequence[float], intercepts: Sequence[float],
                        breakpoints: Sequence[float], zeta: float = 1.0) -> FiberMap:
    """G(x, y) = h_i(x) y with h_i(x) = intercept_i + slope_i (x - a_i) valued in [0, alpha]"""
    if len(slopes) != len(intercepts) or len(breakpoints) != len(slopes) + 1:
        raise InvalidInputError("need one slope and intercept per branch and len(slopes)+1 breakpoints")
    maps = []
    holder = 0.0
    for s, c, a, b in zip(slopes, intercepts, breakpoints, breakpoints[1:]):
        ends = (c, c + s * (b - a))
        if min(ends) < 0 or max(ends) > alpha + 1e-12:
            raise InvalidInputError(f"coefficient on [{a}, {b}] leaves [0, {alpha}]: endpoint values {ends}")
        maps.append(lambda x, y, s=s, c=c, a=a: (c + s * (x - a)) * y)
        holder = max(holder, abs(s) * (b - a) ** (1.0 - zeta))
    return FiberMap(branch_maps=tuple(maps), alpha=alpha, G_holder=holder,
                    name=f"piecewise_lipschitz({alpha:g})")


@dataclass
class FiberReport:
    """Sampled (H1) and (H2) diagnostics"""
    h1: bool
    h2: bool
    into_unit: bool
    max_contraction_ratio: float
    max_holder_ratio: float
    alpha: float
    G_holder: float

    @property
    def passed(self) -> bool:
        return self.h1 and self.h2 and self.into_unit

    def to_dict(self) -> dict:
        return {
            "H1": self.h1, "H2": self.h2, "into_unit": self.into_unit,
            "max_contraction_ratio": self.max_contraction_ratio,
            "max_holder_ratio": self.max_holder_ratio,
            "alpha": self.alpha, "G_holder": self.G_holder,
        }


def check_fiber_conditions(fiber: FiberMap, base: IntervalMap, zeta: float,
                           samples: int = 64) -> FiberReport:
    x = grid_centers(samples)
    y = grid_centers(samples)
    X, Y = np.meshgrid(x, y, indexing="ij")
    images = fiber.evaluate(base, X, Y)
    into_unit = bool(np.all(images >= -1e-12) and np.all(images <= 1.0 + 1e-12))

    # (H1): contraction along each leaf, adjacent and far fiber pairs
    dy = np.abs(Y[:, :, None] - Y[:, None, :])
    dg = np.abs(images[:, :, None] - images[:, None, :])
    off = dy > 0
    contraction = float(np.max(dg[off] / dy[off])) if np.any(off) else 0.0

    # (H2): base-Hölder ratio between points of the same branch
    idx = base.branch_index(x)
    holder = 0.0
    for i in range(samples):
        for j in range(i + 1, samples):
            if idx[i] != idx[j]:
                continue
            d = float(base.distance(x[i], x[j]))
            holder = max(holder, float(np.max(np.abs(images[i] - images[j]))) / d ** zeta)

    return FiberReport(
        h1=contraction <= fiber.alpha + CONTRACTION_SLACK,
        h2=holder <= fiber.G_holder + HOLDER_SLACK,
        into_unit=into_unit,
        max_contraction_ratio=contraction,
        max_holder_ratio=holder,
        alpha=fiber.alpha,
        G_holder=fiber.G_holder,
    )


def rng_streams(seed: int, count: int) -> List[np.random.Generator]:
    """Independent generators from one seed by fixed PCG64 jumps"""
    root = np.random.PCG64(seed)
    return [np.random.Generator(root.jumped(k)) for k in range(count)]


@dataclass(frozen=True, eq=False)
class SkewSystem:
    """Base map, fiber map and potential with the base spectral data on an N-grid"""
    base: IntervalMap
    fiber: FiberMap
    potential: HolderPotential
    N: int
    bins: Optional[int]
    atom_cap: int
    A: object
    spectral: SpectralData
    stencil: TransferStencil
    name: str = "system"

    @classmethod
    def build(cls, base: IntervalMap, fiber: FiberMap, potential: HolderPotential, N: int = 256,
              bins: Optional[int] = DEFAULT_BINS, atom_cap: int = DEFAULT_ATOM_CAP,
              tol: float = DEFAULT_EIGEN_TOL, max_iter: int = DEFAULT_EIGEN_MAX_ITER,
              name: Optional[str] = None) -> "SkewSystem":
        if len(fiber.branch_maps) not in (1, base.degree):
            raise InvalidInputError(
                f"fiber map has {len(fiber.branch_maps)} branch maps, base has degree {base.degree}")
        if bins is not None and bins < 2:
            raise InvalidInputError(f"bins must be at least 2, got {bins}")
        stencil = TransferStencil.build(base, potential, N)
        A = build_operator_matrix(base, potential, N, stencil=stencil)
        spectral = leading_eigendata(A, tol=tol, max_iter=max_iter, circle=base.circle)
        system = cls(base=base, fiber=fiber, potential=potential, N=N, bins=bins, atom_cap=atom_cap,
                     A=A, spectral=spectral, stencil=stencil,
                     name=name or f"{base.name} x {fiber.name}")
        logger.info(f"Built skew system {system.name}: N={N}, bins={bins}, beta={system.beta:.4g}, "
                    f"gap={system.gap_value:.4g}")
        return system

    @property
    def zeta(self) -> float:
        return self.potential.zeta

    @property
    def beta(self) -> float:
        return (self.fiber.alpha * self.base.L_max) ** self.zeta

    @property
    def D(self) -> float:
        return (self.potential.epsilon_phi + self.fiber.G_holder) * self.base.L_max ** self.zeta

    @property
    def regularity_bound(self) -> float:
        return self.D / (1.0 - self.beta) if self.beta < 1 else math.inf

    @property
    def gap_value(self) -> float:
        q = self.base.covering_count()
        if q >= self.base.degree:
            return math.inf
        return gap_condition_value(self.base.degree, q, self.base.sigma, self.base.L_max,
                                   self.zeta, self.potential.epsilon_phi)

    def grid_centers(self) -> np.ndarray:
        return grid_centers(self.N)

    def fiber_image(self, x, y) -> np.ndarray:
        return self.fiber.evaluate(self.base, x, y)

    def snap(self, x: np.ndarray) -> np.ndarray:
        """Round base points to the exact digit lattice used by ``step``"""
        if self.base.digit_base is None:
            return x
        scale = float(self.base.digit_base) ** self._digits
        return np.floor(np.asarray(x) * scale) / scale

    @property
    def _digits(self) -> int:
        return int(MANTISSA_BITS // math.log2(self.base.digit_base))

    def step(self, x: np.ndarray, y: np.ndarray, rng: Optional[np.random.Generator] = None
             ) -> Tuple[np.ndarray, np.ndarray]:
        """One application of F; power-of-two l-adic bases draw a fresh lowest digit"""
        y_next = self.fiber_image(x, y)
        l = self.base.digit_base
        if l is not None and rng is not None:
            x_next = np.mod(l * x, 1.0) + rng.integers(0, l, size=np.shape(x)) * float(l) ** (-self._digits)
        else:
            x_next = self.base.evaluate(x)
        return x_next, np.clip(y_next, 0.0, 1.0)

    def product_family(self, m2: AtomicMeasure) -> LeafFamily:
        return LeafFamily.product(self.spectral.m_weights, m2, circle=self.base.circle)


def _output_leaf(system: SkewSystem, fam: LeafFamily, j: int) -> AtomicMeasure:
    st = system.stencil
    h = system.spectral.h.values
    scale = 1.0 / (system.spectral.lam * h[j])
    positions, weights = [], []
    for b in range(st.degree):
        x_pre = st.preimages[b, j]
        G = system.fiber.for_branch(b)
        for k, w in ((st.idx_l[b, j], st.w_l[b, j]), (st.idx_r[b, j], st.w_r[b, j])):
            if w == 0.0:
                continue
            leaf = fam.leaves[k]
            if leaf.n_atoms == 0:
                continue
            images = np.asarray(G(np.full(leaf.n_atoms, x_pre), leaf.positions), dtype=float)
            positions.append(images)
            weights.append(leaf.weights * (st.expphi[b, j] * w * h[k] * scale))
    if not positions:
        return AtomicMeasure.empty()
    pos = np.concatenate(positions)
    if np.any(pos < -1e-12) or np.any(pos > 1.0 + 1e-12):
        raise TransferError(f"fiber map sends atoms of leaf {j} outside [0, 1]")
    leaf = AtomicMeasure(np.clip(pos, 0.0, 1.0), np.concatenate(weights))
    if system.bins is not None:
        return coarsen(leaf, system.bins)
    if leaf.n_atoms > system.atom_cap:
        return coarsen(leaf, system.atom_cap)
    return leaf


def apply_transfer(system: SkewSystem, fam: LeafFamily, workers: int = 1) -> LeafFamily:
    """Normalized leafwise transfer operator followed by coarsening"""
    if fam.N != system.N:
        raise InvalidInputError(f"family has {fam.N} leaves, system grid has {system.N}")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            leaves = list(pool.map(lambda j: _output_leaf(system, fam, j), range(system.N)))
    else:
        leaves = [_output_leaf(system, fam, j) for j in range(system.N)]
    marginal = normalized_apply(system.spectral, system.A, fam.marginal_density).values
    if np.any(marginal <= 0) and np.all(fam.marginal_density > 0):
        raise TransferError("transfer of a positive family produced a non-positive marginal density")
    return LeafFamily(tuple(leaves), system.spectral.m_weights, marginal, circle=system.base.circle)


def fit_geometric_ratio(trace: Sequence[float], window: int = FIT_WINDOW,
                        floor: float = 0.0) -> Tuple[float, float]:
    """(ratio, R^2) of a log-linear fit over the last ``window`` entries above ``floor``"""
    values = np.asarray(trace, dtype=float)
    n = np.arange(len(values))
    keep = values > floor
    n, values = n[keep][-window:], values[keep][-window:]
    if len(values) < 3:
        return math.nan, math.nan
    logs = np.log(values)
    slope, intercept = np.polyfit(n, logs, 1)
    residual = logs - (slope * n + intercept)
    total = np.sum((logs - logs.mean()) ** 2)
    r2 = 1.0 - float(np.sum(residual ** 2)) / float(total) if total > 0 else 1.0
    return math.exp(slope), r2


@dataclass
class EquilibriumResult:
    """Fixed point of the leafwise operator and the convergence record"""
    family: LeafFamily
    trace: List[float]
    converged: bool
    ratio: float
    r2: float

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def to_dict(self) -> dict:
        return {
            "converged": self.converged, "iterations": self.iterations,
            "ratio": self.ratio, "r2": self.r2, "final_distance": self.trace[-1] if self.trace else None,
        }


def equilibrium(system: SkewSystem, m2: AtomicMeasure, tol: float = 1e-6, n_max: int = 400,
                workers: int = 1) -> EquilibriumResult:
    if tol <= 0:
        raise InvalidInputError(f"tol must be positive, got {tol}")
    if abs(m2.total_mass - 1.0) > 1e-12 or np.any(m2.weights < 0):
        raise InvalidInputError("m2 must be a probability measure")

    fam = system.product_family(m2)
    trace: List[float] = []
    converged = False
    for n in range(n_max):
        nxt = apply_transfer(system, fam, workers)
        dist = family_distance_linf(nxt, fam, system.zeta, workers)
        trace.append(dist)
        fam = nxt
        logger.debug(f"Equilibrium iteration {n + 1}: distance {dist:.3e}")
        if dist < tol:
            converged = True
            break

    ratio, r2 = fit_geometric_ratio(trace)
    if converged:
        logger.info(f"Equilibrium of {system.name} converged in {len(trace)} iterations "
                    f"(ratio {ratio:.4g}, R2 {r2:.4g})")
    else:
        logger.warning(f"Equilibrium of {system.name} did not reach tol {tol:g} in {n_max} iterations; "
                       f"last distance {trace[-1]:.3e}")
    return EquilibriumResult(family=fam, trace=trace, converged=converged, ratio=ratio, r2=r2)


@dataclass
class RegularityReport:
    """Measured Hölder seminorm of an equilibrium against D/(1-beta).

    ``slack`` is in W-K units per leaf pair: a pair passes when
    ||mu_i - mu_j||_W <= bound d^zeta + slack.
    """
    holder: float
    beta: float
    D: float
    bound: float
    slack: float
    passed: bool

    def to_dict(self) -> dict:
        return {"holder": self.holder, "beta": self.beta, "D": self.D, "bound": self.bound,
                "slack": self.slack, "passed": self.passed}


def regularity_check(system: SkewSystem, fam: LeafFamily, far_pairs: int = DEFAULT_FAR_PAIRS,
                     seed: int = 0, workers: int = 1) -> RegularityReport:
    beta = system.beta
    if beta >= 1.0:
        raise HypothesisViolation(f"(alpha L)^zeta = {beta:.4g} >= 1", violations=["(alpha L)^zeta < 1"])
    zeta = system.zeta
    d, W = holder_pairs(fam, zeta, far_pairs=far_pairs, seed=seed, workers=workers)
    H = float(np.max(W / d ** zeta)) if d.size else 0.0
    bound = system.D / (1.0 - beta)
    # each leaf of the pair is off by at most half a mesh cell in base and fiber
    mesh = max(1.0 / system.N, 1.0 / system.bins) if system.bins else 1.0 / system.N
    slack = 2.0 * (0.5 * mesh) ** zeta
    report = RegularityReport(holder=H, beta=beta, D=system.D, bound=bound, slack=slack,
                              passed=bool(np.all(W <= bound * d ** zeta + slack)))
    logger.info(f"Regularity: |mu|_zeta={H:.4g} vs D/(1-beta)={bound:.4g} + slack {slack:.4g}")
    return report


def sandwich_probe(system: SkewSystem, psi: Callable[[np.ndarray, np.ndarray], np.ndarray], n: int,
                   fiber_grid: int = 64, seed: int = 0) -> Tuple[float, float]:
    """(sum_i m_i min_y psi(F^n(x_i, y)), sum_i m_i max_y psi(F^n(x_i, y))).

    Every fiber column shares one base orbit; power-of-two l-adic bases draw the
    fresh lowest digit from the seeded stream so long orbits do not collapse to 0.
    """
    if n < 0:
        raise InvalidInputError(f"n must be non-negative, got {n}")
    rng = rng_streams(seed, 1)[0]
    x = system.snap(system.grid_centers())
    y = np.tile(grid_centers(fiber_grid), (system.N, 1))
    for _ in range(n):
        x_next, _ = system.step(x, y[:, 0], rng)
        y = system.fiber_image(np.repeat(x, fiber_grid), y.ravel()).reshape(system.N, fiber_grid)
        y = np.clip(y, 0.0, 1.0)
        x = x_next
    x = np.repeat(x, fiber_grid)
    y = y.ravel()
    values = np.asarray(psi(x, y), dtype=float).reshape(system.N, fiber_grid)
    m = system.spectral.m_weights
    return float(m @ values.min(axis=1)), float(m @ values.max(axis=1))


def initial_points(system: SkewSystem, fam: LeafFamily, count: int, rng: np.random.Generator
                   ) -> Tuple[np.ndarray, np.ndarray]:
    """Draw (x, y) from a family: leaf by base weight times leaf mass, jitter inside the cell,
    fiber point from the leaf atoms"""
    masses = np.maximum(fam.leaf_masses(), 0.0) * fam.base_weights
    if masses.sum() <= 0:
        raise InvalidInputError("cannot sample from a family with no positive mass")
    leaf = rng.choice(fam.N, size=count, p=masses / masses.sum())
    x = system.snap((leaf + rng.uniform(size=count)) / fam.N)
    y = np.empty(count)
    for i in np.unique(leaf):
        sel = leaf == i
        atoms = fam.leaves[i]
        w = np.maximum(atoms.weights, 0.0)
        y[sel] = atoms.positions[rng.choice(atoms.n_atoms, size=int(sel.sum()), p=w / w.sum())]
    return x, y


def _run_chain(system: SkewSystem, rng: np.random.Generator, chains: int, burn_in: int,
               steps: int) -> Tuple[np.ndarray, np.ndarray]:
    m = system.spectral.m_weights
    cell = rng.choice(system.N, size=chains, p=m / m.sum())
    x = system.snap((cell + rng.uniform(size=chains)) / system.N)
    y = rng.uniform(size=chains)
    for _ in range(burn_in):
        x, y = system.step(x, y, rng)
    xs, ys = np.empty((steps, chains)), np.empty((steps, chains))
    for t in range(steps):
        x, y = system.step(x, y, rng)
        xs[t], ys[t] = x, y
    return xs.ravel(), ys.ravel()


def orbit_family(system: SkewSystem, samples: int, leaves: int = 64, bins: Optional[int] = None,
                 burn_in: int = 100, chains: int = 1000, seed: int = 0, workers: int = 1) -> LeafFamily:
    """Empirical leaf family of long orbits, the Monte Carlo oracle for ``equilibrium``"""
    if system.N % leaves:
        raise InvalidInputError(f"leaves={leaves} must divide the system grid N={system.N}")
    bins = bins or system.bins or DEFAULT_BINS
    workers = max(1, workers)
    per_worker = max(1, math.ceil(chains / workers))
    steps = max(1, math.ceil(samples / (per_worker * workers)))
    streams = rng_streams(seed, workers)

    def run(k: int):
        return _run_chain(system, streams[k], per_worker, burn_in, steps)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(workers)))
    else:
        parts = [run(0)]
    x = np.concatenate([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    base_weights = system.spectral.m_weights.reshape(leaves, -1).sum(axis=1)
    logger.info(f"Orbit family: {x.size} samples from {per_worker * workers} chains, seed {seed}")
    return LeafFamily.from_samples(x, y, leaves, bins, base_weights=base_weights, circle=system.base.circle)

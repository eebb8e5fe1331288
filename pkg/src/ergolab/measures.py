"""
Atomic signed measures on the fiber [0,1], the W-K norm and leaf families
"""
import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize, sparse, stats

from .exceptions import InvalidInputError, MeasureError
from .ruelle import grid_holder_seminorm

logger = logging.getLogger(__name__)

FIBER_SLACK = 1e-12
ZERO_MASS_RTOL = 1e-12
DEFAULT_ATOM_CAP = 512
DEFAULT_BINS = 256
DEFAULT_FAR_PAIRS = 10_000
ORACLE_SWEEPS = 200
ORACLE_PROJECTION_PASSES = 8
ORACLE_FIRST_STEP = 0.5
ORACLE_LAST_STEP = 1e-3
ORACLE_SNAP_EVERY = 20
ORACLE_ACTIVE_TOLS = (1e-2, 1e-3, 1e-4)
ORACLE_FEASIBILITY_TOL = 1e-10
CSV_HEADER = ("leaf", "pos", "weight")


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Finite signed atomic measure; positions sorted, distinct, weights nonzero"""
    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pos = np.atleast_1d(np.asarray(self.positions, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if pos.shape != w.shape or pos.ndim != 1:
            raise InvalidInputError(f"positions and weights must be 1-D of equal length, got {pos.shape} and {w.shape}")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(w))):
            raise InvalidInputError("atom positions and weights must be finite")
        if np.any(pos < 0.0) or np.any(pos > 1.0):
            raise InvalidInputError("atom positions must lie in [0, 1]")
        uniq, inverse = np.unique(pos, return_inverse=True)
        merged = np.zeros(len(uniq))
        np.add.at(merged, inverse, w)
        keep = merged != 0.0
        object.__setattr__(self, "positions", uniq[keep])
        object.__setattr__(self, "weights", merged[keep])

    @classmethod
    def empty(cls) -> "AtomicMeasure":
        return cls(np.empty(0), np.empty(0))

    @classmethod
    def dirac(cls, y: float, weight: float = 1.0) -> "AtomicMeasure":
        return cls(np.array([y]), np.array([weight]))

    @property
    def n_atoms(self) -> int:
        return len(self.positions)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @property
    def total_variation(self) -> float:
        return float(np.abs(self.weights).sum())

    def positive(self) -> "AtomicMeasure":
        keep = self.weights > 0
        return AtomicMeasure(self.positions[keep], self.weights[keep])

    def negative(self) -> "AtomicMeasure":
        keep = self.weights < 0
        return AtomicMeasure(self.positions[keep], -self.weights[keep])

    def integrate(self, func: Callable[[np.ndarray], np.ndarray]) -> float:
        if self.n_atoms == 0:
            return 0.0
        return float(np.asarray(func(self.positions), dtype=float) @ self.weights)

    def __add__(self, other: "AtomicMeasure") -> "AtomicMeasure":
        return AtomicMeasure(np.concatenate([self.positions, other.positions]),
                             np.concatenate([self.weights, other.weights]))

    def __neg__(self) -> "AtomicMeasure":
        return AtomicMeasure(self.positions, -self.weights)

    def __sub__(self, other: "AtomicMeasure") -> "AtomicMeasure":
        return self + (-other)

    def __mul__(self, c: float) -> "AtomicMeasure":
        return AtomicMeasure(self.positions, self.weights * float(c))

    __rmul__ = __mul__

    @staticmethod
    def combine(measures: Sequence["AtomicMeasure"], coefficients: Sequence[float]) -> "AtomicMeasure":
        """sum_k c_k mu_k merged in one pass"""
        pos = [m.positions for m in measures]
        w = [m.weights * float(c) for m, c in zip(measures, coefficients)]
        if not pos:
            return AtomicMeasure.empty()
        return AtomicMeasure(np.concatenate(pos), np.concatenate(w))


def _wk_lp(positions: np.ndarray, weights: np.ndarray, zeta: float) -> float:
    n = len(positions)
    if zeta == 1.0:
        i = np.arange(n - 1)
        j = i + 1
    else:
        i, j = np.triu_indices(n, k=1)
    cap = np.abs(positions[j] - positions[i]) ** zeta
    m = len(i)
    rows = np.concatenate([np.arange(m), np.arange(m), m + np.arange(m), m + np.arange(m)])
    cols = np.concatenate([i, j, j, i])
    vals = np.concatenate([np.ones(m), -np.ones(m), np.ones(m), -np.ones(m)])
    A_ub = sparse.csr_matrix((vals, (rows, cols)), shape=(2 * m, n))
    res = optimize.linprog(-weights, A_ub=A_ub, b_ub=np.concatenate([cap, cap]),
                           bounds=[(-1.0, 1.0)] * n, method="highs",
                           options={"primal_feasibility_tolerance": 1e-10,
                                    "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise MeasureError(f"W-K linear program failed: {res.message}")
    return max(0.0, -float(res.fun))


def wk_norm(mu: AtomicMeasure, zeta: float) -> float:
    """sup of sum w_i u(y_i) over u with |u| <= 1 and Hölder-zeta constant <= 1"""
    if not 0.0 < zeta <= 1.0:
        raise InvalidInputError(f"zeta must lie in (0, 1], got {zeta}")
    if mu.n_atoms == 0:
        return 0.0
    w = mu.weights
    if np.all(w > 0) or np.all(w < 0):
        return mu.total_variation
    if zeta == 1.0 and abs(mu.total_mass) <= ZERO_MASS_RTOL * mu.total_variation:
        # a 1-Lipschitz function on [0,1] never needs the sup cap
        plus, minus = mu.positive(), mu.negative()
        mass = 0.5 * (plus.total_mass + minus.total_mass)
        return mass * float(stats.wasserstein_distance(plus.positions, minus.positions,
                                                        plus.weights, minus.weights))
    return _wk_lp(mu.positions, w, zeta)


def _pair_excess(u: np.ndarray, cap: np.ndarray) -> np.ndarray:
    """excess[i, j] = how far u_i - u_j overshoots cap[i, j]"""
    return np.maximum(u[:, None] - u[None, :] - cap, 0.0)


def _project_pairs(u: np.ndarray, cap: np.ndarray) -> np.ndarray:
    excess = _pair_excess(u, cap)
    count = np.count_nonzero(excess, axis=1) + np.count_nonzero(excess, axis=0)
    if not count.any():
        return u
    # every violated pair meets halfway; nodes in several pairs take the average move
    shift = 0.5 * (excess.sum(axis=0) - excess.sum(axis=1))
    return u + shift / np.maximum(count, 1)


def _feasible_below(u: np.ndarray, cap: np.ndarray) -> np.ndarray:
    """Hölder envelope min_j (u_j + cap_ij) clamped to [-1, 1]; exactly feasible"""
    return np.clip(np.min(u[None, :] + cap, axis=1), -1.0, 1.0)


def _atom_constraints(positions: np.ndarray, zeta: float) -> Tuple[np.ndarray, np.ndarray]:
    n = len(positions)
    i, j = np.triu_indices(n, k=1)
    cap = np.abs(positions[j] - positions[i]) ** zeta
    m = len(i)
    G = np.zeros((2 * m + 2 * n, n))
    G[np.arange(m), i], G[np.arange(m), j] = 1.0, -1.0
    G[m + np.arange(m), i], G[m + np.arange(m), j] = -1.0, 1.0
    G[2 * m + np.arange(n), np.arange(n)] = 1.0
    G[2 * m + n + np.arange(n), np.arange(n)] = -1.0
    return G, np.concatenate([cap, cap, np.ones(2 * n)])


def _snap_to_vertices(u: np.ndarray, weights: np.ndarray, G: np.ndarray, h: np.ndarray) -> float:
    """Score the vertex and faces of G v <= h nearest to a feasible u"""
    slack = h - G @ u
    candidates = []
    rows: List[int] = []
    for r in np.argsort(slack):
        if np.linalg.matrix_rank(G[rows + [r]]) == len(rows) + 1:
            rows.append(int(r))
            if len(rows) == len(u):
                candidates.append(np.linalg.solve(G[rows], h[rows]))
                break
    for tol in ORACLE_ACTIVE_TOLS:
        active = slack <= tol
        if active.any():
            candidates.append(u + np.linalg.lstsq(G[active], h[active] - G[active] @ u, rcond=None)[0])
    best = -np.inf
    slop = ORACLE_FEASIBILITY_TOL * float(np.abs(weights).sum())
    for v in candidates:
        if np.all(G @ v <= h + ORACLE_FEASIBILITY_TOL):
            best = max(best, float(weights @ v) - slop)
    return best


def wk_norm_oracle(mu: AtomicMeasure, zeta: float, grid: int = 64, sweeps: int = ORACLE_SWEEPS) -> float:
    """Lower bound on the W-K norm by projected-subgradient ascent over test-function values.

    The test function lives on the atoms plus a uniform fiber grid. Every sweep steps
    along the weights, then alternates the clamp to [-1, 1] with pairwise Hölder
    projections. Only exactly feasible functions are scored, and every
    ``ORACLE_SNAP_EVERY`` sweeps the nearest vertices of the atom program are scored too.
    """
    if grid < 64:
        raise InvalidInputError(f"grid must be at least 64, got {grid}")
    if sweeps < 1:
        raise InvalidInputError(f"sweeps must be positive, got {sweeps}")
    if not 0.0 < zeta <= 1.0:
        raise InvalidInputError(f"zeta must lie in (0, 1], got {zeta}")
    if mu.n_atoms == 0:
        return 0.0

    nodes = np.unique(np.concatenate([mu.positions, np.linspace(0.0, 1.0, grid)]))
    atoms = np.searchsorted(nodes, mu.positions)
    w = np.zeros(len(nodes))
    w[atoms] = mu.weights
    cap = np.abs(nodes[:, None] - nodes[None, :]) ** zeta
    G, h = _atom_constraints(mu.positions, zeta)

    decay = (ORACLE_LAST_STEP / ORACLE_FIRST_STEP) ** (np.arange(sweeps) / max(sweeps - 1, 1))
    steps = ORACLE_FIRST_STEP * decay / float(np.max(np.abs(mu.weights)))
    u = np.zeros(len(nodes))
    best = 0.0
    for k, step in enumerate(steps, start=1):
        u = u + step * w
        for _ in range(ORACLE_PROJECTION_PASSES):
            u = _project_pairs(np.clip(u, -1.0, 1.0), cap)
        feasible = _feasible_below(u, cap)
        best = max(best, float(w @ feasible))
        if k % ORACLE_SNAP_EVERY == 0 or k == sweeps:
            best = max(best, _snap_to_vertices(feasible[atoms], mu.weights, G, h))
    logger.debug(f"W-K oracle: {mu.n_atoms} atoms, {len(nodes)} nodes, {sweeps} sweeps, bound {best:.10g}")
    return best


def pushforward(G_at_leaf: Callable[[np.ndarray], np.ndarray], mu: AtomicMeasure) -> AtomicMeasure:
    """Move every atom y to G(y); weights are kept and coincident images merged"""
    if mu.n_atoms == 0:
        return mu
    images = np.asarray(G_at_leaf(mu.positions), dtype=float)
    if np.any(images < -FIBER_SLACK) or np.any(images > 1.0 + FIBER_SLACK) or not np.all(np.isfinite(images)):
        raise MeasureError(f"fiber map sends atoms outside [0, 1]: range "
                           f"[{np.min(images):.6g}, {np.max(images):.6g}]")
    return AtomicMeasure(np.clip(images, 0.0, 1.0), mu.weights)


def coarsen(mu: AtomicMeasure, bins: int = DEFAULT_BINS) -> AtomicMeasure:
    """Aggregate atoms to the centers of a uniform partition of [0,1]"""
    if bins < 2:
        raise InvalidInputError(f"bins must be at least 2, got {bins}")
    if mu.n_atoms == 0:
        return mu
    idx = np.clip(np.floor(mu.positions * bins).astype(int), 0, bins - 1)
    mass = np.bincount(idx, weights=mu.weights, minlength=bins)
    occupied = np.unique(idx)
    return AtomicMeasure((occupied + 0.5) / bins, mass[occupied])


@dataclass(frozen=True, eq=False)
class LeafFamily:
    """One atomic fiber measure per base grid cell plus base weights and marginal density"""
    leaves: Tuple[AtomicMeasure, ...]
    base_weights: np.ndarray
    marginal_density: np.ndarray
    circle: bool = False

    def __post_init__(self):
        leaves = tuple(self.leaves)
        base = np.asarray(self.base_weights, dtype=float)
        marginal = np.asarray(self.marginal_density, dtype=float)
        if not leaves:
            raise InvalidInputError("a leaf family needs at least one leaf")
        if len(leaves) != len(base) or len(leaves) != len(marginal):
            raise InvalidInputError(
                f"leaf count {len(leaves)} must match base weights {len(base)} and marginal {len(marginal)}")
        object.__setattr__(self, "leaves", leaves)
        object.__setattr__(self, "base_weights", base)
        object.__setattr__(self, "marginal_density", marginal)

    @property
    def N(self) -> int:
        return len(self.leaves)

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) / self.N

    @classmethod
    def product(cls, base_weights: np.ndarray, m2: AtomicMeasure, circle: bool = False) -> "LeafFamily":
        """m x m2: every leaf equals m2, unit marginal density"""
        N = len(base_weights)
        return cls(leaves=(m2,) * N, base_weights=base_weights, marginal_density=np.ones(N), circle=circle)

    @classmethod
    def from_samples(cls, x: np.ndarray, y: np.ndarray, N: int, bins: int,
                     base_weights: Optional[np.ndarray] = None, circle: bool = False) -> "LeafFamily":
        """Empirical family of points (x, y): conditional fiber laws per cell, coarsened to ``bins``"""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape != y.shape or x.size == 0:
            raise InvalidInputError("samples must be non-empty arrays of equal shape")
        cell = np.clip(np.floor(x * N).astype(int), 0, N - 1)
        ybin = np.clip(np.floor(y * bins).astype(int), 0, bins - 1)
        counts = np.zeros((N, bins))
        np.add.at(counts, (cell, ybin), 1.0)
        per_leaf = counts.sum(axis=1)
        weights = np.full(N, 1.0 / N) if base_weights is None else np.asarray(base_weights, dtype=float)
        centers = (np.arange(bins) + 0.5) / bins
        leaves = []
        for i in range(N):
            if per_leaf[i] == 0:
                leaves.append(AtomicMeasure.empty())
                continue
            nz = counts[i] > 0
            leaves.append(AtomicMeasure(centers[nz], counts[i, nz] / per_leaf[i]))
        marginal = (per_leaf / x.size) / weights
        return cls(leaves=tuple(leaves), base_weights=weights, marginal_density=marginal, circle=circle)

    def leaf_masses(self) -> np.ndarray:
        return np.array([leaf.total_mass for leaf in self.leaves])

    def total_mass(self) -> float:
        return float(self.base_weights @ self.leaf_masses())

    def map_leaves(self, func: Callable[[AtomicMeasure], AtomicMeasure]) -> "LeafFamily":
        return LeafFamily(tuple(func(leaf) for leaf in self.leaves), self.base_weights,
                          self.marginal_density, self.circle)

    def aggregate(self, cells: int) -> "LeafFamily":
        """Base-weighted average of consecutive leaves down to ``cells`` leaves"""
        if cells < 1 or self.N % cells:
            raise InvalidInputError(f"cannot aggregate {self.N} leaves into {cells} cells")
        group = self.N // cells
        leaves, weights, marginal = [], [], []
        for k in range(cells):
            sl = slice(k * group, (k + 1) * group)
            wk = self.base_weights[sl]
            total = float(wk.sum())
            coeffs = wk / total if total > 0 else np.full(group, 1.0 / group)
            leaves.append(AtomicMeasure.combine(self.leaves[sl], coeffs))
            weights.append(total)
            marginal.append(float(coeffs @ self.marginal_density[sl]))
        return LeafFamily(tuple(leaves), np.array(weights), np.array(marginal), self.circle)

    def base_distance(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        d = np.abs(np.asarray(i) - np.asarray(j)) / self.N
        return np.minimum(d, 1.0 - d) if self.circle else d

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_HEADER)
            for i, leaf in enumerate(self.leaves):
                for pos, weight in zip(leaf.positions, leaf.weights):
                    writer.writerow([i, repr(float(pos)), repr(float(weight))])
        logger.debug(f"Wrote leaf family with {self.N} leaves to {path}")
        return path

    @classmethod
    def from_csv(cls, path: Union[str, Path], base_weights: np.ndarray,
                 marginal_density: Optional[np.ndarray] = None, circle: bool = False) -> "LeafFamily":
        N = len(base_weights)
        pos: List[List[float]] = [[] for _ in range(N)]
        wts: List[List[float]] = [[] for _ in range(N)]
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if tuple(header or ()) != CSV_HEADER:
                raise MeasureError(f"{path} does not start with header {','.join(CSV_HEADER)}")
            for line, row in enumerate(reader, start=2):
                try:
                    leaf, p, w = int(row[0]), float(row[1]), float(row[2])
                except (ValueError, IndexError) as e:
                    raise MeasureError(f"{path}:{line}: malformed row {row}: {e}")
                if not 0 <= leaf < N:
                    raise MeasureError(f"{path}:{line}: leaf index {leaf} outside 0..{N - 1}")
                pos[leaf].append(p)
                wts[leaf].append(w)
        leaves = tuple(AtomicMeasure(np.array(p), np.array(w)) for p, w in zip(pos, wts))
        if marginal_density is None:
            marginal_density = np.array([leaf.total_mass for leaf in leaves])
        return cls(leaves, base_weights, marginal_density, circle)


def _map(func, items: Iterable, workers: int) -> List[float]:
    if workers <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def linf_norm(fam: LeafFamily, zeta: float, workers: int = 1) -> float:
    return max(_map(lambda leaf: wk_norm(leaf, zeta), fam.leaves, workers))


def sinf_norm(fam: LeafFamily, zeta: float, workers: int = 1) -> float:
    """Grid Hölder norm of the marginal density plus the L-infinity norm"""
    marginal = fam.marginal_density
    holder = grid_holder_seminorm(marginal, zeta, fam.circle) if fam.N > 1 else 0.0
    return holder + float(np.max(np.abs(marginal))) + linf_norm(fam, zeta, workers)


def leaf_pairs(N: int, far_pairs: int = DEFAULT_FAR_PAIRS, seed: int = 0,
               circle: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """All adjacent pairs plus ``far_pairs`` seeded random pairs with separation >= 2"""
    i = np.arange(N - 1)
    j = i + 1
    if circle and N > 2:
        i, j = np.append(i, N - 1), np.append(j, 0)
    if far_pairs > 0 and N > 2:
        rng = np.random.default_rng(seed)
        a = rng.integers(0, N, size=far_pairs)
        b = rng.integers(0, N, size=far_pairs)
        far = np.abs(a - b) >= 2
        i, j = np.concatenate([i, a[far]]), np.concatenate([j, b[far]])
    return i, j


def holder_pairs(fam: LeafFamily, zeta: float, far_pairs: int = DEFAULT_FAR_PAIRS,
                 seed: int = 0, workers: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """(d(i, j), ||mu_i - mu_j||_W) over the pairs of ``leaf_pairs``"""
    if fam.N < 2:
        return np.empty(0), np.empty(0)
    i, j = leaf_pairs(fam.N, far_pairs, seed, fam.circle)
    d = fam.base_distance(i, j)
    keep = d > 0
    i, j, d = i[keep], j[keep], d[keep]
    W = _map(lambda k: wk_norm(fam.leaves[i[k]] - fam.leaves[j[k]], zeta), range(len(i)), workers)
    return d, np.asarray(W, dtype=float)


def holder_seminorm(fam: LeafFamily, zeta: float, far_pairs: int = DEFAULT_FAR_PAIRS,
                    seed: int = 0, workers: int = 1) -> float:
    """Lower estimate of sup ||mu_i - mu_j||_W / d(i, j)^zeta over leaf pairs"""
    d, W = holder_pairs(fam, zeta, far_pairs, seed, workers)
    return float(np.max(W / d ** zeta)) if d.size else 0.0


def family_distance_linf(a: LeafFamily, b: LeafFamily, zeta: float, workers: int = 1) -> float:
    if a.N != b.N:
        raise InvalidInputError(f"leaf counts differ: {a.N} vs {b.N}")
    return max(_map(lambda k: wk_norm(a.leaves[k] - b.leaves[k], zeta), range(a.N), workers))

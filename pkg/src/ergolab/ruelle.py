"""
Discretized Ruelle-Perron-Frobenius operator and its leading eigendata
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import sparse

from .base_dynamics import IntervalMap
from .exceptions import InvalidInputError, SpectralError
from .potentials import HolderPotential

logger = logging.getLogger(__name__)

MIN_GRID = 8
DEFAULT_EIGEN_TOL = 1e-12
DEFAULT_EIGEN_MAX_ITER = 100_000


def grid_centers(N: int) -> np.ndarray:
    return (np.arange(N) + 0.5) / N


def interpolation_weights(y: np.ndarray, N: int, circle: bool
                          ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Neighbouring center indices and linear weights for points ``y``"""
    p = np.asarray(y, dtype=float) * N - 0.5
    il = np.floor(p).astype(int)
    frac = p - il
    if circle:
        return np.mod(il, N), np.mod(il + 1, N), 1.0 - frac, frac
    left_edge = il < 0
    right_edge = il >= N - 1
    il = np.clip(il, 0, N - 1)
    ir = np.clip(il + 1, 0, N - 1)
    w_r = np.where(left_edge | right_edge, 0.0, frac)
    return il, ir, 1.0 - w_r, w_r


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values at cell centers (i+1/2)/N with linear interpolation in between"""
    values: np.ndarray
    circle: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or len(values) < MIN_GRID:
            raise InvalidInputError(f"GridFunction needs at least {MIN_GRID} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("GridFunction values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def N(self) -> int:
        return len(self.values)

    @classmethod
    def from_callable(cls, func, N: int, circle: bool = False) -> "GridFunction":
        return cls(np.asarray(func(grid_centers(N)), dtype=float), circle=circle)

    def __call__(self, y) -> np.ndarray:
        il, ir, wl, wr = interpolation_weights(y, self.N, self.circle)
        return wl * self.values[il] + wr * self.values[ir]

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def holder_seminorm(self, zeta: float, max_lag: Optional[int] = None) -> float:
        return grid_holder_seminorm(self.values, zeta, self.circle, max_lag)

    def strong_norm(self, zeta: float, max_lag: Optional[int] = None) -> float:
        return self.holder_seminorm(zeta, max_lag) + self.sup_norm()


def grid_holder_seminorm(values: np.ndarray, zeta: float, circle: bool = False,
                         max_lag: Optional[int] = None) -> float:
    """max |u_i - u_j| / d(x_i, x_j)^zeta over center pairs, separation >= 1/N"""
    N = len(values)
    last = N - 1 if max_lag is None else min(N - 1, max_lag)
    best = 0.0
    for lag in range(1, last + 1):
        d = lag / N
        if circle:
            d = min(d, 1.0 - d)
        best = max(best, float(np.max(np.abs(values[lag:] - values[:-lag]))) / d ** zeta)
    return best


@dataclass(frozen=True, eq=False)
class TransferStencil:
    """Preimages of every grid center and their interpolation data, per branch"""
    N: int
    circle: bool
    preimages: np.ndarray
    idx_l: np.ndarray
    idx_r: np.ndarray
    w_l: np.ndarray
    w_r: np.ndarray
    expphi: np.ndarray

    @classmethod
    def build(cls, fmap: IntervalMap, phi: HolderPotential, N: int) -> "TransferStencil":
        if N < MIN_GRID:
            raise InvalidInputError(f"N must be at least {MIN_GRID}, got {N}")
        pre = fmap.preimages(grid_centers(N))
        il, ir, wl, wr = interpolation_weights(pre, N, fmap.circle)
        return cls(N=N, circle=fmap.circle, preimages=pre, idx_l=il, idx_r=ir,
                   w_l=wl, w_r=wr, expphi=np.exp(phi(pre)))

    @property
    def degree(self) -> int:
        return self.preimages.shape[0]


def build_operator_matrix(fmap: IntervalMap, phi: HolderPotential, N: int,
                          stencil: Optional[TransferStencil] = None) -> sparse.csr_matrix:
    """Collocation matrix: (A g)_i = sum_b exp(phi(y_ib)) g(y_ib), y_ib = f_b^-1(x_i)"""
    st = stencil or TransferStencil.build(fmap, phi, N)
    rows = np.broadcast_to(np.arange(st.N), st.preimages.shape)
    A = sparse.coo_matrix(
        (np.concatenate([(st.expphi * st.w_l).ravel(), (st.expphi * st.w_r).ravel()]),
         (np.concatenate([rows.ravel(), rows.ravel()]),
          np.concatenate([st.idx_l.ravel(), st.idx_r.ravel()]))),
        shape=(st.N, st.N),
    ).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    logger.debug(f"Built collocation operator for {fmap.name}: N={st.N}, nnz={A.nnz}")
    return A


def build_ulam_matrix(fmap: IntervalMap, phi: HolderPotential, N: int,
                      samples_per_cell: int = 32) -> sparse.csr_matrix:
    """Cell-averaged operator acting on piecewise-constant functions"""
    if N < MIN_GRID:
        raise InvalidInputError(f"N must be at least {MIN_GRID}, got {N}")
    if samples_per_cell < 1:
        raise InvalidInputError(f"samples_per_cell must be positive, got {samples_per_cell}")
    offsets = (np.arange(samples_per_cell) + 0.5) / samples_per_cell
    x = ((np.arange(N)[:, None] + offsets[None, :]) / N).ravel()
    rows = np.repeat(np.arange(N), samples_per_cell)
    pre = fmap.preimages(x)
    cols = np.clip(np.floor(pre * N).astype(int), 0, N - 1)
    data = np.exp(phi(pre)) / samples_per_cell
    A = sparse.coo_matrix(
        (data.ravel(), (np.broadcast_to(rows, pre.shape).ravel(), cols.ravel())), shape=(N, N),
    ).tocsr()
    A.sum_duplicates()
    logger.debug(f"Built Ulam operator for {fmap.name}: N={N}, nnz={A.nnz}")
    return A


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Leading eigenvalue, eigenfunction, conformal measure and equilibrium weights"""
    lam: float
    h: GridFunction
    nu_weights: np.ndarray
    m_weights: np.ndarray
    iterations: int
    residual_h: float
    residual_nu: float

    @property
    def N(self) -> int:
        return self.h.N

    @property
    def pressure(self) -> float:
        return math.log(self.lam)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "pressure": self.pressure,
            "residuals": [self.residual_h, self.residual_nu],
            "N": self.N,
            "iterations": self.iterations,
            "h_min": float(np.min(self.h.values)),
            "h_max": float(np.max(self.h.values)),
        }


def _power_iteration(M, tol: float, max_iter: int, norm_ord) -> Tuple[float, np.ndarray, int, float]:
    n = M.shape[0]
    v = np.ones(n)
    rq = float("nan")
    residual = float("inf")
    for it in range(1, max_iter + 1):
        w = M @ v
        rq = float(v @ w) / float(v @ v)
        residual = float(np.linalg.norm(w - rq * v, ord=norm_ord)) / (rq * np.linalg.norm(v, ord=norm_ord))
        if residual <= tol:
            return rq, v, it, residual
        scale = np.linalg.norm(w, ord=norm_ord)
        if not np.isfinite(scale) or scale == 0.0:
            break
        v = w / scale
        if it % 1000 == 0:
            logger.debug(f"Power iteration {it}: rayleigh={rq:.15g}, residual={residual:.3e}")
    raise SpectralError(
        f"Power iteration did not converge in {max_iter} iterations (residual {residual:.3e}, tol {tol:g})",
        rayleigh_quotient=rq, iterations=max_iter,
    )


def leading_eigendata(A, tol: float = DEFAULT_EIGEN_TOL, max_iter: int = DEFAULT_EIGEN_MAX_ITER,
                      circle: bool = False) -> SpectralData:
    """Power iteration for (lambda, h) and adjoint power iteration for nu"""
    if A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"operator matrix must be square, got {A.shape}")
    data = A.data if sparse.issparse(A) else np.asarray(A)
    if np.any(data < 0):
        raise InvalidInputError("operator matrix must have nonnegative entries")

    lam, h, it_h, res_h = _power_iteration(A, tol, max_iter, np.inf)
    lam_nu, nu, it_nu, res_nu = _power_iteration(A.T.tocsr() if sparse.issparse(A) else A.T,
                                                 tol, max_iter, 1)
    if abs(lam_nu - lam) > 10 * tol * lam + 1e-14:
        logger.warning(f"Primal and adjoint eigenvalues differ: {lam:.15g} vs {lam_nu:.15g}")
    if np.min(h) <= 0 or np.min(nu) < 0:
        raise SpectralError("Leading eigenvector is not positive; operator is not irreducible on the grid",
                            rayleigh_quotient=lam, iterations=it_h)

    nu = nu / nu.sum()
    h = h / float(h @ nu)
    m = h * nu
    m = m / m.sum()
    logger.info(f"Leading eigendata: lambda={lam:.12g}, iterations={it_h}+{it_nu}, "
                f"residuals={res_h:.2e}/{res_nu:.2e}")
    return SpectralData(lam=lam, h=GridFunction(h, circle=circle), nu_weights=nu, m_weights=m,
                        iterations=it_h + it_nu, residual_h=res_h, residual_nu=res_nu)


def _values(u: Union[GridFunction, np.ndarray]) -> np.ndarray:
    return u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=float)


def normalized_apply(spec: SpectralData, A, u: Union[GridFunction, np.ndarray]) -> GridFunction:
    """(A (u h)) / (lambda h)"""
    values = _values(u)
    if values.shape[-1] != spec.N:
        raise InvalidInputError(f"grid function has {values.shape[-1]} values, operator has {spec.N}")
    h = spec.h.values
    return GridFunction((A @ (values * h)) / (spec.lam * h), circle=spec.h.circle)


def normalized_orbit(spec: SpectralData, A, u: Union[GridFunction, np.ndarray], n: int) -> List[GridFunction]:
    """[u, L u, ..., L^n u] for the normalized operator"""
    current = GridFunction(_values(u), circle=spec.h.circle)
    orbit = [current]
    for _ in range(n):
        current = normalized_apply(spec, A, current)
        orbit.append(current)
    return orbit


@dataclass
class LasotaYorkeReport:
    """Fitted constants of the strong/weak norm inequality for the normalized operator"""
    zeta: float
    trials: int
    n_max: int
    r_hat: float
    D: float
    beta: float
    B: float
    C: float
    holds: bool
    strong_norms: List[List[float]] = field(default_factory=list)
    sup_norms: List[List[float]] = field(default_factory=list)

    @property
    def red_flag(self) -> bool:
        return not self.r_hat < 1.0

    def to_dict(self) -> dict:
        return {
            "zeta": self.zeta, "trials": self.trials, "n_max": self.n_max,
            "r_hat": self.r_hat, "D": self.D, "beta": self.beta, "B": self.B, "C": self.C,
            "holds": self.holds, "red_flag": self.red_flag,
        }


def random_test_function(rng: np.random.Generator, N: int, circle: bool, modes: int = 5) -> np.ndarray:
    """Random Fourier mixture plus a hat bump, sampled at the grid centers"""
    x = grid_centers(N)
    u = np.zeros(N)
    for k in range(1, modes + 1):
        u += rng.normal() * np.cos(2 * np.pi * k * x + rng.uniform(0, 2 * np.pi)) / k
    center, width = rng.uniform(0.1, 0.9), rng.uniform(0.05, 0.3)
    dist = np.abs(x - center)
    if circle:
        dist = np.minimum(dist, 1.0 - dist)
    u += rng.normal() * np.maximum(0.0, 1.0 - dist / width)
    return u


def lasota_yorke_probe(spec: SpectralData, A, trials: int = 20, n_max: int = 20,
                       zeta: float = 1.0, seed: int = 0, max_lag: int = 64) -> LasotaYorkeReport:
    if trials < 10:
        raise InvalidInputError(f"trials must be at least 10, got {trials}")
    if n_max < 2:
        raise InvalidInputError(f"n_max must be at least 2, got {n_max}")
    rng = np.random.default_rng(seed)
    circle = spec.h.circle
    floor = 1e-14

    strong_all, sup_all = [], []
    centered_strong, ratios, weak_ratio, tail = [], [], [], []
    for _ in range(trials):
        u = random_test_function(rng, spec.N, circle)
        orbit = normalized_orbit(spec, A, u, n_max)
        strong = [g.strong_norm(zeta, max_lag) for g in orbit]
        strong_all.append(strong)
        sup_all.append([g.sup_norm() for g in orbit])
        s0 = strong[0]
        ratios.append(np.array(strong) / s0)
        weak_ratio.append(orbit[0].sup_norm() / s0)
        tail.append(strong[-1] / orbit[0].sup_norm())

        zero_mean = u - float(u @ spec.m_weights)
        centered_strong.append([g.strong_norm(zeta, max_lag)
                                for g in normalized_orbit(spec, A, zero_mean, n_max)])

    # decay rate of zero-mean inputs, worst trial
    n = np.arange(n_max + 1)
    r_hat, D = 0.0, 0.0
    for values in centered_strong:
        values = np.asarray(values)
        keep = values > floor
        if keep.sum() < 2:
            continue
        slope, intercept = np.polyfit(n[keep], np.log(values[keep]), 1)
        if math.exp(slope) > r_hat:
            r_hat, D = math.exp(slope), math.exp(intercept)

    # |L^n u|_s <= B beta^n |u|_s + C |u|_inf
    C = max(tail)
    excess = np.max([np.maximum(r - C * w, floor) for r, w in zip(ratios, weak_ratio)], axis=0)
    keep = excess > floor
    if keep.sum() >= 2:
        slope, _ = np.polyfit(n[keep], np.log(excess[keep]), 1)
        beta = math.exp(slope)
    else:
        beta = 0.0
    B = float(np.max(excess / np.maximum(beta, floor) ** n)) if beta > 0 else float(excess[0])
    holds = bool(beta < 1.0 and all(
        np.all(r <= B * beta ** n + C * w + 1e-8) for r, w in zip(ratios, weak_ratio)))

    report = LasotaYorkeReport(zeta=zeta, trials=trials, n_max=n_max, r_hat=r_hat, D=D,
                               beta=beta, B=B, C=C, holds=holds,
                               strong_norms=strong_all, sup_norms=sup_all)
    if report.red_flag:
        logger.warning(f"Fitted decay rate r_hat={r_hat:.4f} >= 1")
    logger.info(f"Lasota-Yorke probe: r_hat={r_hat:.4f}, beta={beta:.4f}, B={B:.4g}, C={C:.4g}")
    return report


def compute_spectral_data(fmap: IntervalMap, phi: HolderPotential, N: int, method: str = "collocation",
                          tol: float = DEFAULT_EIGEN_TOL, max_iter: int = DEFAULT_EIGEN_MAX_ITER):
    """Operator matrix and its leading eigendata for (f, phi) on an N-grid"""
    if method == "collocation":
        A = build_operator_matrix(fmap, phi, N)
    elif method == "ulam":
        A = build_ulam_matrix(fmap, phi, N)
    else:
        raise InvalidInputError(f"unknown discretization {method!r}; use 'collocation' or 'ulam'")
    return A, leading_eigendata(A, tol=tol, max_iter=max_iter, circle=fmap.circle)

"""
Piecewise full-branch base maps on [0,1] or the circle
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from .exceptions import BranchError, InvalidInputError

logger = logging.getLogger(__name__)

BISECT_XTOL = 1e-12
BISECT_MAXITER = 200
F1_SLACK = 1e-12
SURJECTIVITY_TOL = 1e-9

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Branch:
    """One full branch of a base map.

    ``domain`` is [a, b] in lifted coordinates; on the circle ``a`` may be
    negative, in which case the branch covers the arc [a+1, 1) U [0, b].
    """
    domain: Tuple[float, float]
    forward: ArrayFn
    inverse_lipschitz: ArrayFn
    inverse: Optional[ArrayFn] = None
    derivative: Optional[ArrayFn] = None

    @property
    def width(self) -> float:
        return self.domain[1] - self.domain[0]

    def preimage(self, y: np.ndarray) -> np.ndarray:
        """Lifted preimage of ``y`` in this branch's domain"""
        y = np.asarray(y, dtype=float)
        if self.inverse is not None:
            return np.asarray(self.inverse(y), dtype=float)
        return np.array([self._bisect(float(v)) for v in np.ravel(y)]).reshape(y.shape)

    def _bisect(self, y: float) -> float:
        a, b = self.domain
        fa = float(self.forward(np.array(a))) - y
        fb = float(self.forward(np.array(b))) - y
        if abs(fa) <= BISECT_XTOL:
            return a
        if abs(fb) <= BISECT_XTOL:
            return b
        if fa * fb > 0:
            raise BranchError(
                f"Branch on [{a}, {b}] does not bracket {y}: f(a)-y={fa:.3e}, f(b)-y={fb:.3e}",
                branch=self.domain, point=y,
            )
        try:
            root, result = optimize.bisect(
                lambda t: float(self.forward(np.array(t))) - y,
                a, b, xtol=BISECT_XTOL, maxiter=BISECT_MAXITER,
                full_output=True, disp=False,
            )
        except (ValueError, RuntimeError) as e:
            raise BranchError(f"Root finding failed on [{a}, {b}] for {y}: {e}",
                              branch=self.domain, point=y)
        if not result.converged:
            raise BranchError(
                f"Bisection did not converge in {BISECT_MAXITER} iterations on [{a}, {b}] for {y}",
                branch=self.domain, point=y,
            )
        return root


@dataclass(frozen=True)
class IntervalMap:
    """Piecewise full-branch map f of [0,1].

    ``tie`` selects which branch owns a shared endpoint: "left" gives
    left-closed/right-open domains, "right" gives left-open/right-closed.
    """
    branches: Tuple[Branch, ...]
    sigma: float
    circle: bool = False
    L_max: float = 1.0
    expansion_region: Optional[Tuple[float, float]] = None
    tie: str = "left"
    digit_base: Optional[int] = None
    name: str = "custom"

    def __post_init__(self):
        if not self.branches:
            raise InvalidInputError("IntervalMap needs at least one branch")
        if self.sigma <= 1:
            raise InvalidInputError(f"sigma must exceed 1, got {self.sigma}")
        if self.L_max < 1:
            raise InvalidInputError(f"L_max must be at least 1, got {self.L_max}")
        if self.tie not in ("left", "right"):
            raise InvalidInputError(f"tie must be 'left' or 'right', got {self.tie!r}")
        object.__setattr__(self, "branches", tuple(sorted(self.branches, key=lambda b: b.domain[0])))

    @property
    def degree(self) -> int:
        return len(self.branches)

    def _lift(self, branch: Branch, x: np.ndarray) -> np.ndarray:
        if not self.circle:
            return x
        a = branch.domain[0]
        return a + np.mod(x - a, 1.0)

    def branch_index(self, x) -> np.ndarray:
        """Index of the branch owning each point of ``x``"""
        x = np.asarray(x, dtype=float)
        idx = np.full(x.shape, -1, dtype=int)
        for k, branch in enumerate(self.branches):
            a, b = branch.domain
            t = self._lift(branch, x)
            if self.tie == "left":
                inside = (t >= a) & (t < b)
            else:
                inside = (t > a) & (t <= b)
            idx = np.where((idx < 0) & inside, k, idx)
        if np.any(idx < 0):
            # closed outer endpoints, or gaps from malformed descriptors
            centers = np.array([0.5 * (b.domain[0] + b.domain[1]) for b in self.branches])
            nearest = np.argmin(np.abs(x[..., None] - centers), axis=-1)
            idx = np.where(idx < 0, nearest, idx)
        return idx

    def lifted(self, x) -> Tuple[np.ndarray, np.ndarray]:
        """Branch index and lifted coordinate of each point, flattened"""
        x = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
        idx = self.branch_index(x)
        t = np.array(x, copy=True)
        if self.circle:
            for k, branch in enumerate(self.branches):
                mask = idx == k
                t[mask] = self._lift(branch, x[mask])
        return idx, t

    def evaluate(self, x) -> np.ndarray:
        shape = np.shape(x)
        x = _check_unit(x)
        idx, t = self.lifted(x)
        out = np.empty_like(t)
        for k, branch in enumerate(self.branches):
            mask = idx == k
            if np.any(mask):
                out[mask] = branch.forward(t[mask])
        return np.clip(out, 0.0, 1.0).reshape(shape)

    def inverse_lipschitz(self, x) -> np.ndarray:
        """L(x) at domain points"""
        shape = np.shape(x)
        x = _check_unit(x)
        idx, t = self.lifted(x)
        out = np.empty_like(t)
        for k, branch in enumerate(self.branches):
            mask = idx == k
            if np.any(mask):
                out[mask] = branch.inverse_lipschitz(t[mask])
        return out.reshape(shape)

    def derivative(self, x) -> np.ndarray:
        shape = np.shape(x)
        x = _check_unit(x)
        idx, t = self.lifted(x)
        out = np.empty_like(t)
        for k, branch in enumerate(self.branches):
            mask = idx == k
            if not np.any(mask):
                continue
            if branch.derivative is None:
                raise BranchError(f"Branch {k} of {self.name} has no derivative evaluator",
                                  branch=branch.domain)
            out[mask] = branch.derivative(t[mask])
        return out.reshape(shape)

    def preimages(self, y) -> np.ndarray:
        """Array of shape (degree, *y.shape) with one preimage per branch"""
        y = _check_unit(y)
        rows = []
        for branch in self.branches:
            t = branch.preimage(y)
            rows.append(np.mod(t, 1.0) if self.circle else np.clip(t, 0.0, 1.0))
        out = np.stack(rows)
        if self.circle:
            # mod of a tiny negative lift rounds to 1.0
            out = np.where(out >= 1.0, 0.0, out)
        return out

    def in_expansion_region(self, x: np.ndarray) -> np.ndarray:
        if self.expansion_region is None:
            return np.zeros(np.shape(x), dtype=bool)
        c, d = self.expansion_region
        return (x >= c) & (x <= d)

    def covering_count(self) -> int:
        """Number of branch domains whose interior meets the region where L may exceed 1/sigma"""
        if self.expansion_region is None:
            return 0
        c, d = self.expansion_region
        q = 0
        for branch in self.branches:
            a, b = branch.domain
            arcs = [(a, b)] if a >= 0 else [(a + 1.0, 1.0), (0.0, b)]
            if any(max(lo, c) < min(hi, d) for lo, hi in arcs):
                q += 1
        return q

    def distance(self, x, y) -> np.ndarray:
        d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
        return np.minimum(d, 1.0 - d) if self.circle else d


def _check_unit(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InvalidInputError(f"Base points must lie in [0, 1], got range "
                                f"[{np.nanmin(arr):.6g}, {np.nanmax(arr):.6g}]")
    return arr


def eval(fmap: IntervalMap, x):
    """f(x); scalar in, float out"""
    out = fmap.evaluate(x)
    return float(out) if np.ndim(x) == 0 else out


def inverse_branches(fmap: IntervalMap, x):
    """Preimages of x ordered by branch index"""
    out = fmap.preimages(x)
    return tuple(float(v) for v in out) if np.ndim(x) == 0 else out


@dataclass
class StructureReport:
    """Outcome of the structural checks on a base map"""
    f1: bool
    p2: bool
    cover: bool
    monotone: bool
    surjective: bool
    q: int
    max_L_outside: float
    max_L_inside: float
    round_trip_error: float
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.f1 and self.p2

    def to_dict(self) -> dict:
        return {
            "f1": self.f1, "P2": self.p2, "cover": self.cover, "monotone": self.monotone,
            "surjective": self.surjective, "q": self.q,
            "max_L_outside": self.max_L_outside, "max_L_inside": self.max_L_inside,
            "round_trip_error": self.round_trip_error, "failures": list(self.failures),
        }


def check_structure(fmap: IntervalMap, sample_count: int = 1000) -> StructureReport:
    if sample_count < 2 * fmap.degree:
        raise InvalidInputError(
            f"sample_count must be at least 2*degree = {2 * fmap.degree}, got {sample_count}")

    failures: List[str] = []

    # cover: consecutive endpoints meet and the union spans a unit length
    domains = [b.domain for b in fmap.branches]
    gaps = [abs(domains[k][1] - domains[k + 1][0]) for k in range(len(domains) - 1)]
    span = domains[-1][1] - domains[0][0]
    cover = all(g <= 1e-12 for g in gaps) and abs(span - 1.0) <= 1e-12
    if not fmap.circle:
        cover = cover and abs(domains[0][0]) <= 1e-12 and abs(domains[-1][1] - 1.0) <= 1e-12
    if not cover:
        failures.append(f"branch domains do not partition the base: {domains}")

    monotone = True
    surjective = True
    per_branch = max(2, sample_count // fmap.degree)
    for k, branch in enumerate(fmap.branches):
        a, b = branch.domain
        t = np.linspace(a, b, per_branch)
        values = np.asarray(branch.forward(t), dtype=float)
        diffs = np.diff(values)
        if not (np.all(diffs > 0) or np.all(diffs < 0)):
            monotone = False
            failures.append(f"branch {k} is not strictly monotone")
        ends = sorted((values[0], values[-1]))
        if abs(ends[0]) > SURJECTIVITY_TOL or abs(ends[1] - 1.0) > SURJECTIVITY_TOL:
            surjective = False
            failures.append(f"branch {k} maps onto [{ends[0]:.6g}, {ends[1]:.6g}], not [0, 1]")

    x = (np.arange(sample_count) + 0.5) / sample_count
    L = fmap.inverse_lipschitz(x)
    inside = fmap.in_expansion_region(x)
    max_out = float(np.max(L[~inside])) if np.any(~inside) else 0.0
    max_in = float(np.max(L[inside])) if np.any(inside) else 0.0
    f1 = max_out <= 1.0 / fmap.sigma + F1_SLACK and max_in <= fmap.L_max + F1_SLACK
    if not f1:
        failures.append(f"(f1) fails: max L outside = {max_out:.6g} vs 1/sigma = {1 / fmap.sigma:.6g}, "
                        f"max L inside = {max_in:.6g} vs L_max = {fmap.L_max:.6g}")

    round_trip = 0.0
    if surjective:
        try:
            y = np.linspace(0.0, 1.0, max(sample_count // 10, 11))
            pre = fmap.preimages(y)
            back = np.stack([branch.forward(fmap._lift(branch, pre[k]))
                             for k, branch in enumerate(fmap.branches)])
            err = np.abs(back - y)
            if fmap.circle:
                err = np.mod(err, 1.0)
                err = np.minimum(err, 1.0 - err)
            round_trip = float(np.max(err))
        except BranchError as e:
            round_trip = math.inf
            failures.append(f"inverse branch failed: {e}")

    p2 = cover and monotone and surjective
    report = StructureReport(f1=f1, p2=p2, cover=cover, monotone=monotone, surjective=surjective,
                             q=fmap.covering_count(), max_L_outside=max_out, max_L_inside=max_in,
                             round_trip_error=round_trip, failures=failures)
    logger.debug(f"Structure check for {fmap.name}: f1={f1}, P2={p2}, q={report.q}")
    return report


def l_adic(l: int, shift: float = 0.0, circle: bool = True) -> IntervalMap:
    """x -> l*x + shift mod 1"""
    if not isinstance(l, (int, np.integer)) or l < 2:
        raise InvalidInputError(f"l must be an integer >= 2, got {l}")
    if not 0.0 <= shift < 1.0:
        raise InvalidInputError(f"shift must lie in [0, 1), got {shift}")
    if shift and not circle:
        raise InvalidInputError("a shifted l-adic map is only full-branch on the circle")

    branches = []
    for k in range(l):
        a = (k - shift) / l
        branches.append(Branch(
            domain=(a, a + 1.0 / l),
            forward=lambda t, k=k: l * t + shift - k,
            inverse=lambda y, k=k: (y + k - shift) / l,
            inverse_lipschitz=lambda t: np.full(np.shape(t), 1.0 / l),
            derivative=lambda t: np.full(np.shape(t), float(l)),
        ))
    name = f"l_adic({l})" if not shift else f"l_adic({l}, shift={shift:g})"
    digit_base = int(l) if (l & (l - 1)) == 0 and not shift else None
    return IntervalMap(branches=tuple(branches), sigma=float(l), circle=circle,
                       digit_base=digit_base, name=name)


def doubling() -> IntervalMap:
    fmap = l_adic(2)
    return IntervalMap(branches=fmap.branches, sigma=fmap.sigma, circle=fmap.circle,
                       digit_base=fmap.digit_base, name="doubling")


def manneville_pomeau(alpha: float, region_end: float = 0.1) -> IntervalMap:
    """x(1 + 2^alpha x^alpha) on [0, 1/2], 2x - 1 on (1/2, 1]"""
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    if not 0.0 < region_end < 0.5:
        raise InvalidInputError(f"region_end must lie in (0, 1/2), got {region_end}")
    c = 2.0 ** alpha

    def left_forward(t):
        t = np.asarray(t, dtype=float)
        return t * (1.0 + c * t ** alpha)

    def left_derivative(t):
        t = np.asarray(t, dtype=float)
        return 1.0 + c * (1.0 + alpha) * t ** alpha

    branches = (
        Branch(domain=(0.0, 0.5), forward=left_forward,
               inverse_lipschitz=lambda t: 1.0 / left_derivative(t),
               derivative=left_derivative),
        Branch(domain=(0.5, 1.0), forward=lambda t: 2.0 * np.asarray(t, dtype=float) - 1.0,
               inverse=lambda y: (np.asarray(y, dtype=float) + 1.0) / 2.0,
               inverse_lipschitz=lambda t: np.full(np.shape(t), 0.5),
               derivative=lambda t: np.full(np.shape(t), 2.0)),
    )
    sigma = min(2.0, float(left_derivative(region_end)))
    # x = 1/2 belongs to the left branch so that f(1/2) = 1
    return IntervalMap(branches=branches, sigma=sigma, circle=False, L_max=1.0,
                       expansion_region=(0.0, region_end), tie="right",
                       name=f"manneville_pomeau({alpha:g})")


def piecewise_affine(slopes: Sequence[float], breakpoints: Sequence[float]) -> IntervalMap:
    """Full-branch affine map; negative slopes give decreasing branches"""
    slopes = [float(s) for s in slopes]
    breakpoints = [float(b) for b in breakpoints]
    if len(breakpoints) != len(slopes) + 1:
        raise InvalidInputError(
            f"need len(slopes)+1 breakpoints, got {len(slopes)} slopes and {len(breakpoints)} breakpoints")
    if abs(breakpoints[0]) > 1e-12 or abs(breakpoints[-1] - 1.0) > 1e-12:
        raise InvalidInputError("breakpoints must start at 0 and end at 1")
    if any(b >= c for b, c in zip(breakpoints, breakpoints[1:])):
        raise InvalidInputError("breakpoints must be strictly increasing")

    branches = []
    for k, s in enumerate(slopes):
        a, b = breakpoints[k], breakpoints[k + 1]
        if abs(abs(s) * (b - a) - 1.0) > 1e-9:
            raise InvalidInputError(
                f"slope {s} on [{a}, {b}] does not give a full branch (|slope|*width = {abs(s) * (b - a)})")
        if s > 0:
            forward = lambda t, s=s, a=a: s * (np.asarray(t, dtype=float) - a)
            inverse = lambda y, s=s, a=a: a + np.asarray(y, dtype=float) / s
        else:
            forward = lambda t, s=s, b=b: -s * (b - np.asarray(t, dtype=float))
            inverse = lambda y, s=s, b=b: b + np.asarray(y, dtype=float) / s
        branches.append(Branch(
            domain=(a, b), forward=forward, inverse=inverse,
            inverse_lipschitz=lambda t, s=s: np.full(np.shape(t), 1.0 / abs(s)),
            derivative=lambda t, s=s: np.full(np.shape(t), abs(s)),
        ))
    return IntervalMap(branches=tuple(branches), sigma=min(abs(s) for s in slopes),
                       circle=False, name="piecewise_affine")

"""Exact reference computations used to cross-check the grid estimators.

Survivor sets are built by interval pullback, transfer iterates at a point by
enumerating the preimage tree, and pressures of full-branch affine systems in
closed form. None of this touches the grid discretization.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, stats

from cocycle import Branch, Orbit, RandomOpenSystem, fiber_preimages
from errors import DegenerateSystemError, DepthError, InsufficientDataError, NotAnalyticError
from intervals import MERGE_GUARD, IntervalSet
from orbit_worker import OrbitWorkerPool

logger = logging.getLogger("oracle")

MAX_COMPONENTS: int = 10 ** 7
MAX_PREIMAGE_NODES: int = 10 ** 6
MAX_POINT_DEPTH: int = 15
MAX_CYLINDERS: int = 10 ** 6
FULL_TOL: float = 1e-12


def is_full_interval(lo: float, hi: float) -> bool:
    """[lo, hi] covers [0, 1] up to FULL_TOL at both ends."""
    return lo <= FULL_TOL and hi >= 1.0 - FULL_TOL


def survivor_intervals(system: RandomOpenSystem, orbit: Orbit, p: int, n: int,
                       max_components: int = MAX_COMPONENTS) -> IntervalSet:
    """X_{omega,n}: points whose iterates 0..n avoid the holes along the orbit from p.

    Uses X_{omega,n} = I_omega intersected with T_omega^-1(X_{sigma omega, n-1}).
    """
    if n < 0:
        raise ValueError("survivor_intervals needs n >= 0")
    current = system.holes[orbit.symbol(p + n)].survivor_set()
    for j in range(n - 1, -1, -1):
        s = orbit.symbol(p + j)
        current = system.fibers[s].preimage_set(current).intersection(system.holes[s].survivor_set())
        if len(current) > max_components:
            raise DepthError(f"Survivor set at depth {n} exceeds {max_components} components",
                             {"depth": n, "components": len(current)})
    return current


def survivor_sequence(system: RandomOpenSystem, orbit: Orbit, p: int, depths: Sequence[int],
                      max_components: int = MAX_COMPONENTS) -> List[IntervalSet]:
    return [survivor_intervals(system, orbit, p, d, max_components) for d in depths]


def point_transfer(system: RandomOpenSystem, orbit: Orbit, p: int, n: int, f: Callable[[Any], Any],
                   y: float, openness: str = "open", max_nodes: int = MAX_PREIMAGE_NODES,
                   threads: int = 1) -> float:
    """(L^n f)(y) by summing g^(n)(x) f(x) over every x in T^-n(y).

    In open mode a branch of the tree is pruned as soon as it enters the hole
    of the fiber acting at that step.
    """
    if n > MAX_POINT_DEPTH:
        raise DepthError(f"point_transfer is limited to n <= {MAX_POINT_DEPTH}")
    if n == 0:
        return float(f(np.array([y]))[0])
    open_flag = openness == "open"
    last = p + n - 1
    s_last = orbit.symbol(last)
    roots = fiber_preimages(system.fibers[s_last], system.holes[s_last], y, open_flag,
                            system.potential, s_last)

    def expand(root: Tuple[float, int, float]) -> float:
        frontier = [(root[0], root[2])]
        for k in range(last - 1, p - 1, -1):
            s = orbit.symbol(k)
            fiber, hole = system.fibers[s], system.holes[s]
            nxt = []
            for z, w in frontier:
                for x, _, g in fiber_preimages(fiber, hole, z, open_flag, system.potential, s):
                    nxt.append((x, w * g))
            if len(nxt) > max_nodes:
                raise DepthError(f"Preimage tree exceeds {max_nodes} nodes at depth {last - k + 1}")
            frontier = nxt
        if not frontier:
            return 0.0
        xs = np.array([x for x, _ in frontier])
        ws = np.array([w for _, w in frontier])
        return float(np.dot(ws, f(xs)))

    parts = OrbitWorkerPool(threads).map(expand, roots)
    return float(sum(parts))


# --- Cylinders ---

@dataclass(frozen=True)
class Cylinder:
    """Element of the n-step monotonicity partition (refined by the holes in open mode)."""
    domain: Tuple[float, float]
    image: Tuple[float, float]
    word: Tuple[int, ...]
    weight_bounds: Tuple[float, float]

    @property
    def is_full(self) -> bool:
        return is_full_interval(*self.image)

    @property
    def diameter(self) -> float:
        return self.domain[1] - self.domain[0]


class CylinderTree:
    """
    Depth-n cylinder tree along a fixed fiber word. Level k holds the cylinders
    of Z^(k) with their images T^k(Z) and bounds on the weight g^(k).
    """
    def __init__(self, system: RandomOpenSystem, word: Sequence[int], depth: int,
                 open_: bool = True, max_nodes: int = MAX_CYLINDERS):
        if depth > len(word):
            raise ValueError("Fiber word is shorter than the requested depth")
        self.system = system
        self.word = tuple(int(s) for s in word[:depth])
        self.depth = depth
        self.open = open_
        self.max_nodes = max_nodes
        self.levels: List[List[Cylinder]] = [[Cylinder((0.0, 1.0), (0.0, 1.0), (), (1.0, 1.0))]]
        for k in range(depth):
            self.levels.append(self._refine(self.levels[-1], k))
            logger.debug("Cylinder level %d: %d nodes", k + 1, len(self.levels[-1]))

    def _pullback(self, word: Tuple[int, ...], y: float) -> float:
        x = y
        for k in range(len(word) - 1, -1, -1):
            x = self.system.fibers[self.word[k]].branches[word[k]].inverse(x)
        return x

    def _weight_range(self, symbol: int, br: Branch, lo: float, hi: float) -> Tuple[float, float]:
        x_lo, x_hi = sorted((br.inverse(lo), br.inverse(hi)))
        pot = self.system.potential
        if pot.branch_constant(br):
            g = float(pot.weight(symbol, br, 0.5 * (x_lo + x_hi)))
            return g, g
        samples = np.linspace(x_lo, x_hi, 9)
        g = np.asarray(pot.weight(symbol, br, samples), dtype=float)
        return float(g.min()), float(g.max())

    def _refine(self, nodes: List[Cylinder], k: int) -> List[Cylinder]:
        symbol = self.word[k]
        fiber = self.system.fibers[symbol]
        hole = self.system.holes[symbol]
        children: List[Cylinder] = []
        for node in nodes:
            c, d = node.image
            for b, br in enumerate(fiber.branches):
                lo, hi = max(c, br.domain[0]), min(d, br.domain[1])
                if hi - lo <= MERGE_GUARD:
                    continue
                pieces = IntervalSet.from_pairs([(lo, hi)])
                if self.open:
                    pieces = pieces.difference(hole.intervals)
                for a, e in pieces:
                    ends = sorted((self._pullback(node.word, a), self._pullback(node.word, e)))
                    img = sorted((float(br(a)), float(br(e))))
                    g_lo, g_hi = self._weight_range(symbol, br, a, e)
                    children.append(Cylinder(domain=(ends[0], ends[1]),
                                             image=(max(img[0], 0.0), min(img[1], 1.0)),
                                             word=node.word + (b,),
                                             weight_bounds=(node.weight_bounds[0] * g_lo,
                                                            node.weight_bounds[1] * g_hi)))
                    if len(children) > self.max_nodes:
                        raise DepthError(f"Cylinder tree exceeds {self.max_nodes} nodes at level {k + 1}")
        children.sort(key=lambda z: z.domain[0])
        return children

    def level(self, k: int) -> List[Cylinder]:
        return self.levels[k]

    def leaves(self) -> List[Cylinder]:
        return self.levels[-1]


def contiguous_nonfull_detail(system: RandomOpenSystem, word: Sequence[int], n: int,
                              max_nodes: int = MAX_CYLINDERS) -> Tuple[int, bool]:
    """(zeta^(n), whether a hole-pullback gap joined two counted cylinders).

    Surviving cylinders are ordered left to right; the components of the hole
    pullbacks between them separate nothing, so zeta is the longest run of
    consecutive surviving cylinders whose image is not the whole interval.
    """
    leaves = CylinderTree(system, word, n, open_=True, max_nodes=max_nodes).leaves()
    best = run = 0
    binds = False
    previous: Optional[Cylinder] = None
    for z in leaves:
        if z.is_full:
            run = 0
        else:
            if run > 0 and previous is not None and z.domain[0] - previous.domain[1] > MERGE_GUARD:
                binds = True
            run += 1
            best = max(best, run)
        previous = z
    return best, binds


def contiguous_nonfull_count(system: RandomOpenSystem, word: Sequence[int], n: int,
                             max_nodes: int = MAX_CYLINDERS) -> int:
    return contiguous_nonfull_detail(system, word, n, max_nodes)[0]


def zeta_product_bound(system: RandomOpenSystem, word: Sequence[int], n: int) -> int:
    """n * prod_{j<n} (zeta^(1) of fiber word[j] + 2)."""
    bound = n
    for j in range(n):
        bound *= contiguous_nonfull_count(system, (word[j],), 1) + 2
    return bound


# --- Closed-form pressure for full-branch affine systems ---

@dataclass(frozen=True)
class AnalyticSystem:
    """Full-branch affine data; flag is set only when the closed forms apply."""
    flag: bool
    surviving_slopes: Tuple[Tuple[float, ...], ...]
    all_slopes: Tuple[Tuple[float, ...], ...]
    weights: Tuple[float, ...]
    closed_flag: bool = False
    reason: str = ""

    @classmethod
    def from_system(cls, system: RandomOpenSystem) -> 'AnalyticSystem':
        surviving, every = [], []
        reason = ""
        closed_ok = system.potential.kind == "geometric"
        if not closed_ok:
            reason = "potential is not geometric"
        for s, (fiber, hole) in enumerate(zip(system.fibers, system.holes)):
            if not fiber.is_affine or not all(br.is_full() for br in fiber.branches):
                closed_ok = False
                reason = reason or f"fiber {s} has a non-affine or non-full branch"
            slopes = tuple(abs(br.slope) if br.is_affine else float("nan") for br in fiber.branches)
            every.append(slopes)
            inside = [br for br in fiber.branches if not hole.intervals.clip(*br.domain).is_empty()]
            covered = IntervalSet.from_pairs([br.domain for br in inside])
            if not covered.approx_equal(hole.intervals, 1e-12):
                reason = reason or f"hole of fiber {s} is not a union of whole branches"
                surviving.append(())
                continue
            surviving.append(tuple(abs(br.slope) for br in fiber.branches
                                   if br.is_affine and hole.intervals.clip(*br.domain).is_empty()))
        flag = closed_ok and not reason
        return cls(flag=flag, surviving_slopes=tuple(surviving), all_slopes=tuple(every),
                   weights=tuple(system.driving.stationary), closed_flag=closed_ok, reason=reason)

    def fiber_lambda(self, symbol: int, t: float, closed: bool = False) -> float:
        slopes = self.all_slopes[symbol] if closed else self.surviving_slopes[symbol]
        return float(sum(s ** (-t) for s in slopes))

    def survivor_mass(self, word: Sequence[int]) -> float:
        """Lebesgue mass of X_{omega,n} for the word of fibers 0..n."""
        mass = 1.0
        for s in word:
            mass *= self.fiber_lambda(s, 1.0)
        return mass


def _require(system: RandomOpenSystem, closed: bool = False) -> AnalyticSystem:
    info = AnalyticSystem.from_system(system)
    if not (info.closed_flag if closed else info.flag):
        raise NotAnalyticError(f"No closed form for this system: {info.reason}")
    return info


def analytic_pressure(system: RandomOpenSystem, t: float, closed: bool = False) -> float:
    """EP(t) = sum_s m(s) log sum_{surviving b} |slope_b|^(-t)."""
    info = _require(system, closed)
    total = 0.0
    for s, m in enumerate(info.weights):
        if m == 0:
            continue
        lam = info.fiber_lambda(s, t, closed)
        if lam <= 0:
            raise DegenerateSystemError(f"Every branch of fiber {s} lies in the hole")
        total += m * math.log(lam)
    return total


def analytic_root(system: RandomOpenSystem, tol: float = 1e-12) -> float:
    """Zero of t -> EP(t) on [0, 1], clamped to the boundary when none is inside."""
    _require(system)
    if analytic_pressure(system, 0.0) <= 0:
        return 0.0
    if analytic_pressure(system, 1.0) >= 0:
        return 1.0
    return float(optimize.bisect(lambda t: analytic_pressure(system, t), 0.0, 1.0, xtol=tol, maxiter=200))


# --- Box counting ---

@dataclass(frozen=True)
class BoxCountEstimate:
    slope: float
    intercept: float
    r_squared: float
    scales: Tuple[float, ...]
    counts: Tuple[int, ...]
    empty: bool = False


def box_count_dimension(survivors: Sequence[IntervalSet],
                        scales: Optional[Sequence[float]] = None) -> BoxCountEstimate:
    """Slope of log N(eps) against log(1/eps) across survivor depths.

    By default eps at each depth is the shortest component length. If those
    give fewer than three distinct scales (e.g. no hole), dyadic scales
    2^-(k+1) are used instead.
    """
    if len(survivors) < 3:
        raise InsufficientDataError("Box counting needs at least three depths")
    if all(s.is_empty() for s in survivors):
        return BoxCountEstimate(0.0, 0.0, 0.0, (), (), empty=True)
    if scales is None:
        eps = [float(s.lengths.min()) if not s.is_empty() else float("nan") for s in survivors]
        if len({round(math.log(e), 9) for e in eps if e == e}) < 3:
            eps = [2.0 ** -(k + 1) for k in range(len(survivors))]
    else:
        eps = [float(e) for e in scales]
        if len(eps) != len(survivors):
            raise InsufficientDataError("Need one scale per survivor set")
    xs, ys, used, counts = [], [], [], []
    for s, e in zip(survivors, eps):
        if s.is_empty() or not e > 0:
            continue
        count = int(np.sum(np.ceil(s.lengths / e - 1e-9)))
        xs.append(math.log(1.0 / e))
        ys.append(math.log(count))
        used.append(e)
        counts.append(count)
    if len(set(xs)) < 3:
        raise InsufficientDataError("Fewer than three usable scales for box counting")
    fit = stats.linregress(xs, ys)
    return BoxCountEstimate(float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2),
                            tuple(used), tuple(counts))


def survivor_rows(survivors: Sequence[IntervalSet], depths: Sequence[int]) -> List[dict]:
    rows: List[dict] = []
    for d, s in zip(depths, survivors):
        rows.extend(s.to_rows(d))
    return rows

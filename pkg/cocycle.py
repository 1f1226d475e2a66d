"""Random driving systems, fiber maps, holes and potentials.

A random open system is a finite alphabet of fibers. Each symbol carries a
piecewise monotone map of [0, 1], a hole and a weight function, and a
stationary shift on the symbols picks which fiber acts at each time step.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from itertools import product
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize

from errors import ConfigError, DomainError, NumericsError, OrbitError
from intervals import IntervalSet

logger = logging.getLogger("cocycle")

PROB_TOL: float = 1e-12
STATIONARY_TOL: float = 1e-10
SNAP_TOL: float = 1e-12
ENDPOINT_TOL: float = 1e-12
INVERSE_XTOL: float = 1e-14
MIN_EXPANSION: float = 1.01
MAX_HOLE_OVERLAPS: int = 2
SEED_LIMIT: int = 2 ** 64

Number = Union[int, float, str]


def parse_number(value: Number) -> float:
    """Accept floats or exact fraction strings such as ``"10/3"``."""
    if isinstance(value, str):
        try:
            return float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"Cannot parse number {value!r}: {e}")
    return float(value)


# --- Driving system and orbits ---

@dataclass(frozen=True)
class DrivingSystem:
    """Stationary shift on ``alphabet_size`` symbols, i.i.d. or Markov."""
    alphabet_size: int
    kind: str
    stationary: Tuple[float, ...]
    transition: Optional[Tuple[Tuple[float, ...], ...]] = None

    @classmethod
    def iid(cls, probabilities: Sequence[Number]) -> 'DrivingSystem':
        p = np.array([parse_number(v) for v in probabilities], dtype=float)
        if p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
            raise ConfigError(f"i.i.d. probabilities must be nonnegative and sum to 1, got {p.tolist()}")
        return cls(alphabet_size=int(p.size), kind="iid", stationary=tuple(p.tolist()))

    @classmethod
    def markov(cls, transition: Sequence[Sequence[Number]],
               stationary: Optional[Sequence[Number]] = None) -> 'DrivingSystem':
        P = np.array([[parse_number(v) for v in row] for row in transition], dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
            raise ConfigError(f"Transition matrix must be square, got shape {P.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > PROB_TOL):
            raise ConfigError("Transition matrix is not row-stochastic")
        if stationary is None:
            pi = _stationary_vector(P)
        else:
            pi = np.array([parse_number(v) for v in stationary], dtype=float)
            if pi.shape != (P.shape[0],) or np.any(pi < 0) or abs(pi.sum() - 1.0) > PROB_TOL:
                raise ConfigError("Stationary vector must be a probability vector of matching size")
        if np.max(np.abs(pi @ P - pi)) > STATIONARY_TOL:
            raise ConfigError("Stationary vector is not invariant under the transition matrix")
        return cls(alphabet_size=int(P.shape[0]), kind="markov", stationary=tuple(pi.tolist()),
                   transition=tuple(tuple(row) for row in P.tolist()))

    @property
    def weights(self) -> np.ndarray:
        """Stationary mass of each one-symbol cylinder."""
        return np.array(self.stationary, dtype=float)

    def word_probability(self, word: Sequence[int]) -> float:
        if not word:
            return 1.0
        prob = self.stationary[word[0]]
        if self.kind == "iid":
            for s in word[1:]:
                prob *= self.stationary[s]
        else:
            for a, b in zip(word[:-1], word[1:]):
                prob *= self.transition[a][b]
        return prob

    def words(self, length: int) -> Iterator[Tuple[Tuple[int, ...], float]]:
        """All words of positive probability with their stationary mass."""
        for word in product(range(self.alphabet_size), repeat=length):
            prob = self.word_probability(word)
            if prob > 0:
                yield word, prob

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == "iid":
            return {"kind": "iid", "probabilities": list(self.stationary)}
        return {"kind": "markov", "transition": [list(r) for r in self.transition],
                "stationary": list(self.stationary)}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'DrivingSystem':
        kind = doc.get("kind")
        if kind == "iid":
            return cls.iid(doc["probabilities"])
        if kind == "markov":
            return cls.markov(doc["transition"], doc.get("stationary"))
        raise ConfigError(f"Unknown driving kind {kind!r}")


def _stationary_vector(P: np.ndarray) -> np.ndarray:
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


@dataclass(frozen=True)
class Orbit:
    """Finite window of a two-sided symbol sequence.

    ``symbols`` holds indices ``-n_back .. n_fwd`` of the sampled sequence.
    ``offset`` implements the shift: ``orbit.shift(p).symbol(k)`` equals
    ``orbit.symbol(p + k)``.
    """
    symbols: Tuple[int, ...]
    seed: int
    window: Tuple[int, int]
    offset: int = 0

    def symbol(self, k: int) -> int:
        idx = k + self.offset
        n_back, n_fwd = self.window
        if not -n_back <= idx <= n_fwd:
            raise OrbitError(f"Orbit index {k} (absolute {idx}) outside window [-{n_back}, {n_fwd}]",
                             {"index": k, "window": list(self.window)})
        return self.symbols[idx + n_back]

    def word(self, start: int, length: int) -> Tuple[int, ...]:
        return tuple(self.symbol(start + j) for j in range(length))

    def shift(self, p: int) -> 'Orbit':
        return replace(self, offset=self.offset + p)

    def covers(self, start: int, stop: int) -> bool:
        """True when indices ``start .. stop`` (inclusive) are in the window."""
        n_back, n_fwd = self.window
        return -n_back <= start + self.offset and stop + self.offset <= n_fwd


def derive_seed(seed: int, k: int) -> int:
    """Seed of the k-th Monte Carlo orbit drawn under ``seed``."""
    state = np.random.SeedSequence(seed, spawn_key=(k,)).generate_state(1, dtype=np.uint64)
    return int(state[0])


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < SEED_LIMIT:
        raise ConfigError(f"Seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def _chain(rng: np.random.Generator, start: int, steps: int, cumulative: np.ndarray) -> List[int]:
    out = []
    current = start
    last = cumulative.shape[1] - 1
    for u in rng.random(steps):
        current = min(int(np.searchsorted(cumulative[current], u, side="right")), last)
        out.append(current)
    return out


def _forward_symbols(driving: DrivingSystem, rng: np.random.Generator, n_fwd: int) -> List[int]:
    """Symbols at indices 0..n_fwd."""
    probs = driving.weights
    if driving.kind == "iid":
        return rng.choice(driving.alphabet_size, size=n_fwd + 1, p=probs).tolist()
    first = int(rng.choice(driving.alphabet_size, p=probs))
    cumulative = np.cumsum(np.array(driving.transition), axis=1)
    return [first] + _chain(rng, first, n_fwd, cumulative)


def _backward_symbols(driving: DrivingSystem, rng: np.random.Generator, first: int, n_back: int) -> List[int]:
    """Symbols at indices -1, -2, ..., -n_back."""
    if n_back == 0:
        return []
    if driving.kind == "iid":
        return rng.choice(driving.alphabet_size, size=n_back, p=driving.weights).tolist()
    P = np.array(driving.transition)
    pi = driving.weights
    with np.errstate(divide="ignore", invalid="ignore"):
        reversed_P = np.where(pi[:, None] > 0, (pi[None, :] * P.T) / pi[:, None], 0.0)
    return _chain(rng, first, n_back, np.cumsum(reversed_P, axis=1))


def sample_orbit(driving: DrivingSystem, seed: int, n_back: int, n_fwd: int) -> Orbit:
    """Sample a reproducible two-sided window of the driving shift.

    Forward and backward halves come from independent child streams of the
    seed, so enlarging either side never changes existing symbols.
    """
    if n_back < 0 or n_fwd < 0:
        raise ConfigError("Orbit window sizes must be nonnegative")
    seed = _check_seed(seed)
    fwd_seq, back_seq = np.random.SeedSequence(seed).spawn(2)
    forward = _forward_symbols(driving, np.random.default_rng(fwd_seq), n_fwd)
    backward = _backward_symbols(driving, np.random.default_rng(back_seq), forward[0], n_back)
    symbols = tuple(reversed(backward)) + tuple(forward)
    return Orbit(symbols=tuple(int(s) for s in symbols), seed=seed, window=(n_back, n_fwd))


def sample_words(driving: DrivingSystem, seed: int, first: int, count: int, length: int) -> np.ndarray:
    """Forward words of Monte Carlo orbits ``first .. first+count-1``.

    Row k equals ``sample_orbit(driving, derive_seed(seed, first + k), 0,
    length - 1).word(0, length)``.
    """
    words = np.empty((count, length), dtype=np.int64)
    for row in range(count):
        fwd_seq, _ = np.random.SeedSequence(derive_seed(seed, first + row)).spawn(2)
        words[row] = _forward_symbols(driving, np.random.default_rng(fwd_seq), length - 1)
    return words


# --- Branches and fiber maps ---

@dataclass(frozen=True, eq=False)
class Branch:
    """Strictly monotone piece of a fiber map on ``domain = [a, b)``.

    Affine branches store ``slope`` and ``intercept``. Generic branches store
    vectorized ``forward`` and ``derivative`` callables.
    """
    domain: Tuple[float, float]
    slope: Optional[float] = None
    intercept: Optional[float] = None
    forward: Optional[Callable[[Any], Any]] = None
    derivative: Optional[Callable[[Any], Any]] = None
    closed_right: bool = False

    @property
    def is_affine(self) -> bool:
        return self.slope is not None

    @property
    def orientation(self) -> int:
        if self.is_affine:
            return 1 if self.slope > 0 else -1
        a, b = self.domain
        return 1 if self.forward(b) > self.forward(a) else -1

    @property
    def length(self) -> float:
        return self.domain[1] - self.domain[0]

    def __call__(self, x: Any) -> Any:
        if self.is_affine:
            return self.slope * np.asarray(x, dtype=float) + self.intercept
        return self.forward(np.asarray(x, dtype=float))

    def deriv(self, x: Any) -> Any:
        if self.is_affine:
            return np.full(np.shape(x), self.slope, dtype=float) if np.ndim(x) else self.slope
        return self.derivative(np.asarray(x, dtype=float))

    @property
    def image(self) -> Tuple[float, float]:
        a, b = self.domain
        ya, yb = float(self(a)), float(self(b))
        return (min(ya, yb), max(ya, yb))

    def is_full(self, tol: float = ENDPOINT_TOL) -> bool:
        lo, hi = self.image
        return lo <= tol and hi >= 1.0 - tol

    def in_domain(self, x: float) -> bool:
        a, b = self.domain
        return a <= x < b or (self.closed_right and x == b)

    def inverse(self, y: float) -> float:
        """Preimage of ``y`` in the closed domain; ``y`` is clipped to the image."""
        lo, hi = self.image
        y = min(max(float(y), lo), hi)
        a, b = self.domain
        if self.is_affine:
            return min(max((y - self.intercept) / self.slope, a), b)
        fa, fb = float(self.forward(a)), float(self.forward(b))
        if y == fa:
            return a
        if y == fb:
            return b
        try:
            return float(optimize.bisect(lambda x: float(self.forward(x)) - y, a, b,
                                         xtol=INVERSE_XTOL, maxiter=200))
        except (ValueError, RuntimeError) as e:
            raise NumericsError(f"Branch inverse failed on {self.domain} at y={y}: {e}")

    def inverse_array(self, ys: np.ndarray) -> np.ndarray:
        ys = np.asarray(ys, dtype=float)
        if self.is_affine:
            lo, hi = self.image
            a, b = self.domain
            return np.clip((np.clip(ys, lo, hi) - self.intercept) / self.slope, a, b)
        return np.array([self.inverse(y) for y in ys.tolist()], dtype=float).reshape(ys.shape)


@dataclass(frozen=True, eq=False)
class FiberMap:
    """Piecewise monotone map whose branch domains partition [0, 1]."""
    branches: Tuple[Branch, ...]
    label: int = 0
    kind: str = "affine"
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.branches:
            raise DomainError("A fiber map needs at least one branch")
        if abs(self.branches[0].domain[0]) > ENDPOINT_TOL or abs(self.branches[-1].domain[1] - 1.0) > ENDPOINT_TOL:
            raise DomainError("Branch domains must start at 0 and end at 1")
        for left, right in zip(self.branches[:-1], self.branches[1:]):
            if abs(left.domain[1] - right.domain[0]) > ENDPOINT_TOL:
                raise DomainError(f"Branch domains {left.domain} and {right.domain} are not adjacent")
        for br in self.branches:
            if br.length <= 0:
                raise DomainError(f"Empty branch domain {br.domain}")
            lo, hi = br.image
            if lo < -ENDPOINT_TOL or hi > 1.0 + ENDPOINT_TOL:
                raise DomainError(f"Branch image [{lo}, {hi}] leaves [0, 1]", {"domain": list(br.domain)})

    @property
    def breakpoints(self) -> List[float]:
        return [br.domain[0] for br in self.branches] + [self.branches[-1].domain[1]]

    @property
    def is_affine(self) -> bool:
        return all(br.is_affine for br in self.branches)

    def branch_index(self, x: Any) -> Any:
        starts = np.array([br.domain[0] for br in self.branches])
        idx = np.searchsorted(starts, x, side="right") - 1
        return np.clip(idx, 0, len(self.branches) - 1)

    def __call__(self, x: Any) -> Any:
        x_arr = np.asarray(x, dtype=float)
        idx = self.branch_index(x_arr)
        out = np.empty(x_arr.shape, dtype=float)
        for b, br in enumerate(self.branches):
            mask = idx == b
            if np.any(mask):
                out[mask] = br(x_arr[mask])
        return out if out.ndim else float(out)

    def derivative(self, x: Any) -> Any:
        x_arr = np.asarray(x, dtype=float)
        idx = self.branch_index(x_arr)
        out = np.empty(x_arr.shape, dtype=float)
        for b, br in enumerate(self.branches):
            mask = idx == b
            if np.any(mask):
                out[mask] = br.deriv(x_arr[mask])
        return out if out.ndim else float(out)

    def image_set(self) -> IntervalSet:
        return IntervalSet.from_pairs(br.image for br in self.branches)

    def is_surjective(self, tol: float = ENDPOINT_TOL) -> bool:
        images = self.image_set()
        return (len(images) == 1 and images.lefts[0] <= tol
                and images.rights[0] >= 1.0 - tol)

    def slope_range(self, samples: int = 2001) -> Tuple[float, float]:
        """(min |T'|, max |T'|); generic branches are sampled on a mesh."""
        lows, highs = [], []
        for br in self.branches:
            if br.is_affine:
                values = np.array([abs(br.slope)])
            else:
                values = np.abs(br.deriv(np.linspace(br.domain[0], br.domain[1], samples)))
            lows.append(float(values.min()))
            highs.append(float(values.max()))
        return min(lows), max(highs)

    def preimage_set(self, target: IntervalSet) -> IntervalSet:
        """Full preimage of ``target`` under the fiber map."""
        pieces = []
        for br in self.branches:
            lo, hi = br.image
            part = target.clip(lo, hi + (ENDPOINT_TOL if hi >= 1.0 else 0.0))
            if part.is_empty():
                continue
            pieces.append(part.map_monotone(br.inverse_array, decreasing=br.orientation < 0))
        result = IntervalSet.empty()
        for piece in pieces:
            result = result.union(piece)
        return result


def beta_fiber(beta: Number, label: int = 0) -> FiberMap:
    """T(x) = beta*x mod 1 with ceil(beta) branches, the last possibly non-full."""
    beta = parse_number(beta)
    if beta < MIN_EXPANSION:
        raise DomainError(f"beta must be at least {MIN_EXPANSION}, got {beta}")
    count = int(math.ceil(beta - ENDPOINT_TOL))
    branches = []
    for k in range(count):
        a = k / beta
        b = min((k + 1) / beta, 1.0)
        branches.append(Branch(domain=(a, 1.0 if k == count - 1 else b), slope=beta,
                               intercept=-float(k), closed_right=k == count - 1))
    return FiberMap(branches=tuple(branches), label=label, kind="beta", params={"beta": beta})


def affine_fiber(breakpoints: Sequence[Number], slopes: Sequence[Number],
                 anchors: Optional[Sequence[Optional[Number]]] = None, label: int = 0,
                 allow_non_expanding: bool = False) -> FiberMap:
    """Piecewise affine map from breakpoints and slopes.

    Increasing branches start at 0 and decreasing branches start at 1 unless
    ``anchors`` gives the value T(a) at the left end of each branch.
    """
    points = [parse_number(v) for v in breakpoints]
    slopes = [parse_number(v) for v in slopes]
    if len(points) != len(slopes) + 1 or len(slopes) == 0:
        raise DomainError("Need len(breakpoints) == len(slopes) + 1")
    if abs(points[0]) > ENDPOINT_TOL or abs(points[-1] - 1.0) > ENDPOINT_TOL:
        raise DomainError("Breakpoints must run from 0 to 1")
    if any(b <= a for a, b in zip(points[:-1], points[1:])):
        raise DomainError("Breakpoints must be strictly increasing")
    if anchors is not None and len(anchors) != len(slopes):
        raise DomainError("Need one anchor per branch")
    branches = []
    for k, s in enumerate(slopes):
        if s == 0:
            raise DomainError(f"Zero slope on branch {k}")
        if abs(s) < MIN_EXPANSION and not allow_non_expanding:
            raise DomainError(f"|slope| = {abs(s)} on branch {k} is below {MIN_EXPANSION}; "
                              "set allow_non_expanding to accept it")
        a = points[k]
        anchor = anchors[k] if anchors is not None and anchors[k] is not None else (0.0 if s > 0 else 1.0)
        intercept = parse_number(anchor) - s * a
        last = k == len(slopes) - 1
        branches.append(Branch(domain=(a, 1.0 if last else points[k + 1]), slope=s,
                               intercept=intercept, closed_right=last))
    return FiberMap(branches=tuple(branches), label=label, kind="affine",
                    params={"breakpoints": points, "slopes": slopes,
                            "anchors": None if anchors is None else [None if v is None else parse_number(v) for v in anchors]})


def perturbed_doubling_fiber(a: Number, label: int = 0) -> FiberMap:
    """T(x) = 2x + a*sin(2*pi*x)/(2*pi) mod 1 with two full C^2 branches."""
    a = parse_number(a)
    if abs(a) >= 1.0:
        raise DomainError(f"Perturbation must satisfy |a| < 1, got {a}")

    def make(k: int) -> Tuple[Callable[[Any], Any], Callable[[Any], Any]]:
        def forward(x: Any) -> Any:
            return 2.0 * x + a * np.sin(2.0 * np.pi * x) / (2.0 * np.pi) - k

        def derivative(x: Any) -> Any:
            return 2.0 + a * np.cos(2.0 * np.pi * x)
        return forward, derivative

    branches = []
    for k, domain in enumerate([(0.0, 0.5), (0.5, 1.0)]):
        fwd, der = make(k)
        branches.append(Branch(domain=domain, forward=fwd, derivative=der, closed_right=k == 1))
    return FiberMap(branches=tuple(branches), label=label, kind="perturbed_doubling", params={"a": a})


# --- Holes and potentials ---

@dataclass(frozen=True, eq=False)
class Hole:
    """Finite union of intervals removed from the phase space."""
    intervals: IntervalSet

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[Number]], snap_points: Sequence[float] = ()) -> 'Hole':
        snap = np.asarray(sorted(snap_points), dtype=float)
        cleaned = []
        for pair in pairs:
            if len(pair) != 2:
                raise DomainError(f"Hole interval {pair!r} must have two endpoints")
            a, b = (parse_number(v) for v in pair)
            if a < -SNAP_TOL or b > 1.0 + SNAP_TOL or b <= a:
                raise DomainError(f"Hole interval [{a}, {b}) is not a nonempty subinterval of [0, 1]")
            cleaned.append((_snap(max(a, 0.0), snap), _snap(min(b, 1.0), snap)))
        return cls(IntervalSet.from_pairs(cleaned))

    @classmethod
    def none(cls) -> 'Hole':
        return cls(IntervalSet.empty())

    def contains(self, x: Any) -> Any:
        return self.intervals.contains(x)

    def is_empty(self) -> bool:
        return self.intervals.is_empty()

    @property
    def component_count(self) -> int:
        return len(self.intervals)

    @property
    def endpoints(self) -> List[float]:
        return self.intervals.lefts.tolist() + self.intervals.rights.tolist()

    def survivor_set(self) -> IntervalSet:
        return self.intervals.complement(0.0, 1.0)

    def to_pairs(self) -> List[List[float]]:
        return [[a, b] for a, b in self.intervals]


def _snap(x: float, points: np.ndarray) -> float:
    if points.size:
        nearest = points[np.argmin(np.abs(points - x))]
        if abs(nearest - x) <= SNAP_TOL:
            return float(nearest)
    return x


@dataclass(frozen=True, eq=False)
class Potential:
    """Weight g = exp(phi) shared by all fibers.

    Geometric potentials use g = |T'|^(-t). Tabulated potentials give phi per
    symbol as a step function on ``edges``.
    """
    kind: str = "geometric"
    t: float = 1.0
    tables: Optional[Tuple[Tuple[np.ndarray, np.ndarray], ...]] = None

    @classmethod
    def geometric(cls, t: Number) -> 'Potential':
        t = parse_number(t)
        if t < 0 or not math.isfinite(t):
            raise DomainError(f"Geometric potential needs finite t >= 0, got {t}")
        return cls(kind="geometric", t=t)

    @classmethod
    def tabulated(cls, tables: Sequence[Dict[str, Sequence[Number]]]) -> 'Potential':
        parsed = []
        for k, table in enumerate(tables):
            edges = np.array([parse_number(v) for v in table["edges"]], dtype=float)
            values = np.array([parse_number(v) for v in table["values"]], dtype=float)
            if edges.size != values.size + 1 or edges[0] != 0.0 or edges[-1] != 1.0 or np.any(np.diff(edges) <= 0):
                raise DomainError(f"Potential table {k} needs increasing edges from 0 to 1 and one value per cell")
            if not np.all(np.isfinite(values)):
                raise DomainError(f"Potential table {k} has non-finite values")
            parsed.append((edges, values))
        return cls(kind="tabulated", t=1.0, tables=tuple(parsed))

    def weight(self, symbol: int, branch: Branch, x: Any) -> Any:
        """g_symbol(x) for points ``x`` in the domain of ``branch``."""
        if self.kind == "geometric":
            if self.t == 0:
                return np.ones(np.shape(x)) if np.ndim(x) else 1.0
            return np.abs(branch.deriv(x)) ** (-self.t)
        edges, values = self.tables[symbol]
        idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, values.size - 1)
        return np.exp(values[idx])

    def branch_constant(self, branch: Branch) -> bool:
        return self.kind == "geometric" and (branch.is_affine or self.t == 0)

    def breakpoints(self, symbol: int) -> List[float]:
        if self.kind == "tabulated":
            return self.tables[symbol][0].tolist()
        return []

    def with_t(self, t: float) -> 'Potential':
        if self.kind != "geometric":
            raise DomainError("Only geometric potentials can be re-parametrized by t")
        return Potential.geometric(t)

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == "geometric":
            return {"kind": "geometric", "t": self.t}
        return {"kind": "tabulated",
                "tables": [{"edges": e.tolist(), "values": v.tolist()} for e, v in self.tables]}


# --- Systems ---

@dataclass(frozen=True, eq=False)
class RandomOpenSystem:
    """Driving shift plus one (fiber map, hole) pair per symbol and a potential."""
    driving: DrivingSystem
    fibers: Tuple[FiberMap, ...]
    holes: Tuple[Hole, ...]
    potential: Potential
    full_branch_guarantee: bool = False

    def __post_init__(self) -> None:
        S = self.driving.alphabet_size
        if len(self.fibers) != S or len(self.holes) != S:
            raise ConfigError(f"Driving alphabet has {S} symbols but {len(self.fibers)} fibers "
                              f"and {len(self.holes)} holes were given")
        if self.potential.kind == "tabulated" and len(self.potential.tables) != S:
            raise ConfigError("Tabulated potential needs one table per symbol")
        if self.full_branch_guarantee:
            for s in range(S):
                if not has_full_branch_outside_hole(self.fibers[s], self.holes[s]):
                    raise DomainError(f"Fiber {s} has no full branch disjoint from its hole")

    @property
    def alphabet_size(self) -> int:
        return self.driving.alphabet_size

    @property
    def t(self) -> float:
        return self.potential.t

    @property
    def is_open(self) -> bool:
        return any(not h.is_empty() for h in self.holes)

    def structural_points(self, symbol: int) -> List[float]:
        return (self.fibers[symbol].breakpoints + self.holes[symbol].endpoints
                + self.potential.breakpoints(symbol))

    def with_t(self, t: float) -> 'RandomOpenSystem':
        return replace(self, potential=self.potential.with_t(t))

    def closed(self) -> 'RandomOpenSystem':
        return replace(self, holes=tuple(Hole.none() for _ in self.holes))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "driving": self.driving.to_dict(),
            "fibers": [{"type": f.kind, "params": f.params, "hole": h.to_pairs()}
                       for f, h in zip(self.fibers, self.holes)],
            "potential": self.potential.to_dict(),
        }


def has_full_branch_outside_hole(fiber: FiberMap, hole: Hole) -> bool:
    for br in fiber.branches:
        if br.is_full() and hole.intervals.clip(*br.domain).is_empty():
            return True
    return False


def _hole_overlaps(fiber: FiberMap, hole: Hole) -> List[int]:
    counts = []
    for a, b in hole.intervals:
        counts.append(sum(1 for br in fiber.branches
                          if min(b, br.domain[1]) - max(a, br.domain[0]) > SNAP_TOL))
    return counts


def _assemble(fibers: List[FiberMap], hole_spec: Sequence[Sequence[Sequence[Number]]],
              potential: Potential, driving: DrivingSystem, full_branch_guarantee: bool = False,
              max_overlaps: Optional[int] = None) -> RandomOpenSystem:
    if len(hole_spec) != len(fibers):
        raise ConfigError(f"Expected {len(fibers)} hole specifications, got {len(hole_spec)}")
    holes = []
    for s, (fiber, pairs) in enumerate(zip(fibers, hole_spec)):
        hole = Hole.from_pairs(pairs, snap_points=fiber.breakpoints)
        if max_overlaps is not None:
            overlaps = _hole_overlaps(fiber, hole)
            if any(c > max_overlaps for c in overlaps):
                raise DomainError(f"Hole of fiber {s} meets {max(overlaps)} branches; "
                                  "set allow_wide_holes to accept it")
        if not fiber.is_surjective():
            logger.warning("Fiber %d (%s) is not surjective", s, fiber.kind)
        holes.append(hole)
    system = RandomOpenSystem(driving=driving, fibers=tuple(fibers), holes=tuple(holes),
                              potential=potential, full_branch_guarantee=full_branch_guarantee)
    logger.info("Assembled system with %d fibers (%s), potential %s",
                len(fibers), ",".join(f.kind for f in fibers), potential.kind)
    return system


def build_beta_system(betas: Sequence[Number], hole_spec: Sequence[Sequence[Sequence[Number]]],
                      t: Number, driving: DrivingSystem, allow_wide_holes: bool = False,
                      full_branch_guarantee: bool = False) -> RandomOpenSystem:
    """Random beta-transformations with one hole specification per symbol."""
    fibers = [beta_fiber(beta, label=s) for s, beta in enumerate(betas)]
    return _assemble(fibers, hole_spec, Potential.geometric(t), driving, full_branch_guarantee,
                     max_overlaps=None if allow_wide_holes else MAX_HOLE_OVERLAPS)


def build_affine_ly_system(fiber_specs: Sequence[Dict[str, Any]],
                           hole_spec: Sequence[Sequence[Sequence[Number]]], t: Number,
                           driving: DrivingSystem, allow_non_expanding: bool = False,
                           full_branch_guarantee: bool = False) -> RandomOpenSystem:
    """Random piecewise affine maps.

    Each entry of ``fiber_specs`` has ``breakpoints``, ``slopes`` and optional
    ``anchors``.
    """
    fibers = [affine_fiber(spec["breakpoints"], spec["slopes"], spec.get("anchors"), label=s,
                           allow_non_expanding=allow_non_expanding)
              for s, spec in enumerate(fiber_specs)]
    return _assemble(fibers, hole_spec, Potential.geometric(t), driving, full_branch_guarantee)


def fiber_from_dict(doc: Dict[str, Any], label: int, allow_non_expanding: bool = False) -> FiberMap:
    kind = doc.get("type")
    params = doc.get("params", {})
    try:
        if kind == "beta":
            return beta_fiber(params["beta"], label=label)
        if kind == "affine":
            return affine_fiber(params["breakpoints"], params["slopes"], params.get("anchors"),
                                label=label, allow_non_expanding=allow_non_expanding)
        if kind == "perturbed_doubling":
            return perturbed_doubling_fiber(params["a"], label=label)
    except KeyError as e:
        raise ConfigError(f"Fiber {label} of type {kind!r} is missing parameter {e}")
    raise ConfigError(f"Unknown fiber type {kind!r} for fiber {label}")


def system_from_dict(doc: Dict[str, Any]) -> RandomOpenSystem:
    """Build a system from its JSON document (see docs/config-schema.json)."""
    if "driving" not in doc or "fibers" not in doc:
        raise ConfigError("System document needs 'driving' and 'fibers'")
    options = doc.get("options", {})
    driving = DrivingSystem.from_dict(doc["driving"])
    fibers = [fiber_from_dict(f, s, options.get("allow_non_expanding", False))
              for s, f in enumerate(doc["fibers"])]
    pot_doc = doc.get("potential", {"t": 1.0})
    if pot_doc.get("kind", "geometric") == "tabulated":
        potential = Potential.tabulated(pot_doc["tables"])
    else:
        potential = Potential.geometric(pot_doc.get("t", 1.0))
    only_beta = all(f.kind == "beta" for f in fibers)
    max_overlaps = MAX_HOLE_OVERLAPS if only_beta and not options.get("allow_wide_holes", False) else None
    return _assemble(fibers, [f.get("hole", []) for f in doc["fibers"]], potential, driving,
                     options.get("full_branch_guarantee", False), max_overlaps)


def fiber_preimages(fiber: FiberMap, hole: Hole, y: float, open_flag: bool,
                    potential: Optional[Potential] = None,
                    symbol: Optional[int] = None) -> List[Tuple[float, int, float]]:
    """All x with T(x) = y as (x, branch index, g(x)).

    With ``open_flag`` the preimages lying in the hole are dropped. The
    potential defaults to the geometric one at t = 1.
    """
    potential = potential or Potential.geometric(1.0)
    symbol = fiber.label if symbol is None else symbol
    out = []
    for b, br in enumerate(fiber.branches):
        lo, hi = br.image
        if not lo - ENDPOINT_TOL <= y <= hi + ENDPOINT_TOL:
            continue
        x = br.inverse(y)
        if not br.in_domain(x):
            continue
        if open_flag and hole.contains(x):
            continue
        out.append((x, b, float(potential.weight(symbol, br, x))))
    return out

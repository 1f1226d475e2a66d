"""Grid discretization of closed and open fiber transfer operators.

Functions of bounded variation are represented by their cell averages on a
grid that contains every branch, hole and potential breakpoint. Transfer
operators become sparse nonnegative matrices (weighted Ulam scheme):

    M[i, j] = (1/w_i) * sum_b  integral over cell_i of g(T_b^-1 y) * 1[T_b^-1 y in cell_j] dy

Holes are unions of whole cells, so the open matrix is the closed matrix with
the hole columns set to zero.
"""
import json
import logging
import os
import threading
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, sparse

from cocycle import Branch, FiberMap, Hole, Orbit, Potential, RandomOpenSystem, parse_number
from errors import GridError, NumericsError, UndefinedMetric
from intervals import IntervalSet
from orbit_worker import OrbitWorkerPool

logger = logging.getLogger("transfer")

WIDTH_FLOOR: float = 1e-12
STRUCTURAL_TOL: float = 1e-12
OVERLAP_FLOOR: float = 1e-15
QUAD_EPSABS: float = 1e-10
QUAD_LIMIT: int = 20
DENSE_LIMIT: int = 512

CLOSED = "closed"
OPEN = "open"


@dataclass(frozen=True, eq=False)
class Grid:
    """Sorted breakpoints 0 = x_0 < ... < x_N = 1."""
    breakpoints: np.ndarray

    def __post_init__(self) -> None:
        self.breakpoints.setflags(write=False)

    @property
    def N(self) -> int:
        return int(self.breakpoints.size - 1)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.breakpoints[:-1] + self.breakpoints[1:])

    def cell_of(self, y: Any) -> Any:
        idx = np.searchsorted(self.breakpoints, y, side="right") - 1
        return np.clip(idx, 0, self.N - 1)

    def contains_point(self, x: float, tol: float = STRUCTURAL_TOL) -> bool:
        k = int(np.argmin(np.abs(self.breakpoints - x)))
        return abs(self.breakpoints[k] - x) <= tol

    def overlap_fractions(self, intervals: IntervalSet) -> np.ndarray:
        """Fraction of each cell covered by ``intervals``."""
        x = self.breakpoints
        covered = np.zeros(self.N)
        for a, b in intervals:
            lo = max(int(self.cell_of(a)), 0)
            hi = int(np.searchsorted(x, b, side="left")) - 1
            for i in range(lo, min(hi, self.N - 1) + 1):
                covered[i] += max(0.0, min(b, x[i + 1]) - max(a, x[i]))
        return np.clip(covered / self.widths, 0.0, 1.0)

    def integrate(self, values: np.ndarray) -> Any:
        """Lebesgue integral of a piecewise constant function (or columns)."""
        return self.widths @ values


def build_grid(system: RandomOpenSystem, resolution: int) -> Grid:
    """Uniform ``resolution``-cell grid refined by every structural point."""
    if resolution < 2:
        raise GridError(f"Grid resolution must be at least 2, got {resolution}")
    structural = sorted({min(max(float(p), 0.0), 1.0)
                         for s in range(system.alphabet_size)
                         for p in system.structural_points(s)} | {0.0, 1.0})
    merged: List[float] = []
    for p in structural:
        if not merged or p - merged[-1] > STRUCTURAL_TOL:
            merged.append(p)
    merged[-1] = 1.0
    uniform = np.linspace(0.0, 1.0, resolution + 1)
    anchor = np.asarray(merged)
    idx = np.clip(np.searchsorted(anchor, uniform), 1, anchor.size - 1)
    nearest = np.minimum(np.abs(anchor[idx] - uniform), np.abs(anchor[idx - 1] - uniform))
    points = np.union1d(anchor, uniform[nearest > STRUCTURAL_TOL])
    if np.min(np.diff(points)) < WIDTH_FLOOR:
        raise GridError("Grid cell below width floor; structural points are too close together",
                        {"min_width": float(np.min(np.diff(points)))})
    grid = Grid(breakpoints=points)
    logger.info("Built grid with %d cells (%d structural points)", grid.N, len(merged))
    return grid


# --- Grid functions ---

@dataclass(frozen=True, eq=False)
class GridFunction:
    """Piecewise constant representative of a BV function."""
    values: np.ndarray
    grid: Grid

    def variation(self) -> float:
        return float(np.sum(np.abs(np.diff(self.values))))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def bv_norm(self) -> float:
        return self.variation() + self.sup_norm()

    def is_nonnegative(self) -> bool:
        return bool(np.all(self.values >= 0))

    def support(self) -> 'SupportMask':
        return SupportMask(self.values > 0)

    def positive_part(self) -> 'GridFunction':
        return GridFunction(np.maximum(self.values, 0.0), self.grid)

    def negative_part(self) -> 'GridFunction':
        return GridFunction(np.maximum(-self.values, 0.0), self.grid)

    def lebesgue(self) -> float:
        return float(self.grid.integrate(self.values))

    def __mul__(self, other: Union['GridFunction', float]) -> 'GridFunction':
        if isinstance(other, GridFunction):
            _check_grid(self.grid, other.grid)
            return GridFunction(self.values * other.values, self.grid)
        return GridFunction(self.values * float(other), self.grid)

    __rmul__ = __mul__

    def __add__(self, other: 'GridFunction') -> 'GridFunction':
        _check_grid(self.grid, other.grid)
        return GridFunction(self.values + other.values, self.grid)

    def __sub__(self, other: 'GridFunction') -> 'GridFunction':
        _check_grid(self.grid, other.grid)
        return GridFunction(self.values - other.values, self.grid)


@dataclass(frozen=True)
class SupportMask:
    bits: np.ndarray

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def is_subset(self, other: 'SupportMask') -> bool:
        return bool(np.all(~self.bits | other.bits))


def variation(f: GridFunction) -> float:
    return f.variation()


def bv_norm(f: GridFunction) -> float:
    return f.bv_norm()


def constant(grid: Grid, value: float = 1.0) -> GridFunction:
    return GridFunction(np.full(grid.N, float(value)), grid)


def indicator(grid: Grid, intervals: Union[IntervalSet, Sequence[float]]) -> GridFunction:
    """Cell-averaged indicator; exact 0/1 for intervals with grid endpoints."""
    if not isinstance(intervals, IntervalSet):
        intervals = IntervalSet.from_pairs([[parse_number(v) for v in intervals]])
    return GridFunction(grid.overlap_fractions(intervals), grid)


def grid_function(grid: Grid, spec: Dict[str, Any]) -> GridFunction:
    """Battery test function from its config entry.

    Kinds: ``indicator`` (``interval``), ``ramp``, ``constant`` (``value``)
    and ``hat`` (``center``, ``width``). Ramps and hats are sampled at cell
    midpoints.
    """
    kind = spec.get("kind")
    x = grid.midpoints
    if kind == "indicator":
        return indicator(grid, spec["interval"])
    if kind == "ramp":
        return GridFunction(x.copy(), grid)
    if kind == "constant":
        return constant(grid, spec.get("value", 1.0))
    if kind == "hat":
        center, width = float(spec["center"]), float(spec["width"])
        return GridFunction(np.clip(1.0 - np.abs(x - center) / width, 0.0, None), grid)
    raise GridError(f"Unknown test function kind {kind!r}")


def point_function(spec: Dict[str, Any]) -> Callable[[np.ndarray], np.ndarray]:
    """The same battery entry as a function of points, for the preimage oracle."""
    kind = spec.get("kind")
    if kind == "indicator":
        lo, hi = (parse_number(v) for v in spec["interval"])
        return lambda x: ((np.asarray(x) >= lo) & (np.asarray(x) < hi)).astype(float)
    if kind == "ramp":
        return lambda x: np.asarray(x, dtype=float)
    if kind == "constant":
        value = float(spec.get("value", 1.0))
        return lambda x: np.full(np.shape(x), value)
    if kind == "hat":
        center, width = float(spec["center"]), float(spec["width"])
        return lambda x: np.clip(1.0 - np.abs(np.asarray(x) - center) / width, 0.0, None)
    raise GridError(f"Unknown test function kind {kind!r}")


def default_battery(count: int = 20) -> List[Dict[str, Any]]:
    """Indicators of dyadic intervals, ramps, hats and constants."""
    battery: List[Dict[str, Any]] = [{"name": "one", "kind": "constant", "value": 1.0},
                                     {"name": "ramp", "kind": "ramp"}]
    for level in (1, 2, 3):
        for k in range(2 ** level):
            battery.append({"name": f"ind_{level}_{k}", "kind": "indicator",
                            "interval": [k / 2 ** level, (k + 1) / 2 ** level]})
    for center in (0.25, 0.5, 0.75):
        battery.append({"name": f"hat_{center}", "kind": "hat", "center": center, "width": 0.2})
    battery.append({"name": "half", "kind": "constant", "value": 0.5})
    return battery[:count]


def _check_grid(a: Grid, b: Grid) -> None:
    if a is not b and (a.breakpoints.shape != b.breakpoints.shape
                       or not np.array_equal(a.breakpoints, b.breakpoints)):
        raise GridError("Grid mismatch between operands")


# --- Transfer matrices ---

@dataclass(frozen=True, eq=False)
class TransferMatrix:
    entries: sparse.csr_matrix
    grid: Grid
    openness: str
    symbol: int
    t: float

    @property
    def image_mask(self) -> SupportMask:
        return SupportMask(np.asarray(self.entries.getnnz(axis=1)) > 0)

    @property
    def dead_columns(self) -> np.ndarray:
        return np.asarray(self.entries.getnnz(axis=0)) == 0

    def dense(self) -> np.ndarray:
        return self.entries.toarray()


def hole_cells(grid: Grid, hole: Hole) -> np.ndarray:
    """Cells lying in the hole (hole endpoints are grid points)."""
    return hole.contains(grid.midpoints)


def _check_refined(fiber: FiberMap, hole: Hole, potential: Potential, symbol: int, grid: Grid) -> None:
    for p in fiber.breakpoints + hole.endpoints + potential.breakpoints(symbol):
        if not grid.contains_point(p):
            raise GridError(f"Grid is not refined for fiber {symbol}: missing breakpoint {p}")


def _branch_cells(grid: Grid, branch: Branch) -> np.ndarray:
    x = grid.breakpoints
    start = int(np.argmin(np.abs(x - branch.domain[0])))
    stop = int(np.argmin(np.abs(x - branch.domain[1])))
    return np.arange(start, stop)


def _quad_piece(branch: Branch, t: float, xa: float, xb: float) -> float:
    """Integral of |T'|^(1-t) over [xa, xb]."""
    if xb <= xa:
        return 0.0
    result = integrate.quad(lambda x: abs(float(branch.deriv(x))) ** (1.0 - t), xa, xb,
                            epsabs=QUAD_EPSABS, epsrel=QUAD_EPSABS, limit=QUAD_LIMIT, full_output=1)
    if len(result) > 3:
        raise NumericsError(f"Quadrature did not converge on [{xa}, {xb}]: {result[3]}",
                            {"abserr": result[1]})
    return float(result[0])


def ulam_matrix(fiber: FiberMap, hole: Hole, potential: Potential, grid: Grid,
                openness: str = CLOSED, symbol: Optional[int] = None) -> TransferMatrix:
    """Weighted Ulam discretization of one fiber transfer operator."""
    symbol = fiber.label if symbol is None else symbol
    if openness not in (CLOSED, OPEN):
        raise ValueError(f"openness must be 'closed' or 'open', got {openness!r}")
    _check_refined(fiber, hole, potential, symbol, grid)
    x = grid.breakpoints
    w = grid.widths
    N = grid.N
    dead = hole_cells(grid, hole) if openness == OPEN else np.zeros(N, dtype=bool)
    rows_all, cols_all, vals_all = [], [], []

    for br in fiber.branches:
        cells = _branch_cells(grid, br)
        cells = cells[~dead[cells]]
        if cells.size == 0:
            continue
        ya, yb = br(x[cells]), br(x[cells + 1])
        lo = np.clip(np.minimum(ya, yb), 0.0, 1.0)
        hi = np.clip(np.maximum(ya, yb), 0.0, 1.0)
        i_lo = np.clip(np.searchsorted(x, lo, side="right") - 1, 0, N - 1)
        i_hi = np.clip(np.searchsorted(x, hi, side="left") - 1, 0, N - 1)
        counts = np.maximum(i_hi - i_lo + 1, 0)
        total = int(counts.sum())
        if total == 0:
            continue
        starts = np.repeat(np.cumsum(counts) - counts, counts)
        rows = np.repeat(i_lo, counts) + (np.arange(total) - starts)
        cols = np.repeat(cells, counts)
        piece_lo = np.maximum(np.repeat(lo, counts), x[rows])
        piece_hi = np.minimum(np.repeat(hi, counts), x[rows + 1])
        length = piece_hi - piece_lo
        keep = length > OVERLAP_FLOOR
        rows, cols, piece_lo, piece_hi, length = rows[keep], cols[keep], piece_lo[keep], piece_hi[keep], length[keep]

        if potential.kind == "tabulated":
            mass = potential.weight(symbol, br, grid.midpoints[cols]) * length
        elif potential.branch_constant(br):
            g = 1.0 if potential.t == 0 else abs(br.slope) ** (-potential.t)
            mass = g * length
        elif potential.t == 1.0:
            mass = np.abs(br.inverse_array(piece_hi) - br.inverse_array(piece_lo))
        else:
            mass = np.empty(length.size)
            for k in range(length.size):
                xa, xb = sorted((br.inverse(piece_lo[k]), br.inverse(piece_hi[k])))
                mass[k] = _quad_piece(br, potential.t, xa, xb)
        rows_all.append(rows)
        cols_all.append(cols)
        vals_all.append(mass / w[rows])

    if rows_all:
        rows = np.concatenate(rows_all)
        cols = np.concatenate(cols_all)
        vals = np.concatenate(vals_all)
    else:
        rows = cols = np.empty(0, dtype=np.int64)
        vals = np.empty(0)
    entries = sparse.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsr()
    entries.sum_duplicates()
    logger.debug("Ulam matrix for symbol %d (%s): nnz=%d", symbol, openness, entries.nnz)
    return TransferMatrix(entries=entries, grid=grid, openness=openness, symbol=symbol, t=potential.t)


def apply(matrix: TransferMatrix, f: GridFunction) -> GridFunction:
    _check_grid(matrix.grid, f.grid)
    return GridFunction(matrix.entries @ f.values, f.grid)


def hilbert_metric_plus(f: GridFunction, h: GridFunction, mask: Optional[SupportMask] = None) -> float:
    """Hilbert projective distance in the cone of nonnegative functions.

    log sup_{x,y} f(y)h(x) / (f(x)h(y)) over masked cells; cells where both
    vanish are ignored.
    """
    _check_grid(f.grid, h.grid)
    bits = np.ones(f.values.size, dtype=bool) if mask is None else mask.bits
    fv, hv = f.values[bits], h.values[bits]
    if np.any(fv < 0) or np.any(hv < 0):
        raise ValueError("hilbert_metric_plus needs nonnegative functions")
    both_zero = (fv == 0) & (hv == 0)
    if np.all(both_zero):
        raise UndefinedMetric("Both functions vanish on the mask")
    fv, hv = fv[~both_zero], hv[~both_zero]
    if np.any((fv == 0) != (hv == 0)):
        return float("inf")
    ratio = fv / hv
    return float(np.log(ratio.max() / ratio.min()))


class OperatorCocycle:
    """
    Per-symbol transfer matrices on a shared grid, built lazily and cached.
    Orbit positions are mapped to symbols through an Orbit.
    """
    def __init__(self, system: RandomOpenSystem, grid: Grid, openness: str = OPEN):
        self.system = system
        self.grid = grid
        self.openness = openness
        self.lock = threading.RLock()
        self._matrices: Dict[int, TransferMatrix] = {}
        self._survivors: Dict[int, np.ndarray] = {}
        self._closed: Optional['OperatorCocycle'] = None

    def build(self, threads: int = 1) -> 'OperatorCocycle':
        """Builds every symbol matrix; assembly order does not depend on threads."""
        symbols = [s for s in range(self.system.alphabet_size) if s not in self._matrices]
        built = OrbitWorkerPool(threads).map(self._build_one, symbols)
        with self.lock:
            for s, m in zip(symbols, built):
                self._matrices.setdefault(s, m)
        return self

    def _build_one(self, symbol: int) -> TransferMatrix:
        return ulam_matrix(self.system.fibers[symbol], self.system.holes[symbol],
                           self.system.potential, self.grid, self.openness, symbol)

    def matrix(self, symbol: int) -> TransferMatrix:
        with self.lock:
            if symbol not in self._matrices:
                self._matrices[symbol] = self._build_one(symbol)
            return self._matrices[symbol]

    def matrix_at(self, orbit: Orbit, k: int) -> TransferMatrix:
        return self.matrix(orbit.symbol(k))

    def survivor_indicator(self, symbol: int) -> np.ndarray:
        """Values of 1_omega on the grid (all ones for the closed cocycle)."""
        with self.lock:
            if symbol not in self._survivors:
                if self.openness == OPEN:
                    values = 1.0 - hole_cells(self.grid, self.system.holes[symbol]).astype(float)
                else:
                    values = np.ones(self.grid.N)
                self._survivors[symbol] = values
            return self._survivors[symbol]

    def step(self, orbit: Orbit, k: int, values: np.ndarray) -> np.ndarray:
        return self.matrix_at(orbit, k).entries @ values

    def push(self, orbit: Orbit, p: int, n: int, values: np.ndarray) -> np.ndarray:
        """Applies n steps of the cocycle starting at orbit position p."""
        for k in range(p, p + n):
            values = self.step(orbit, k, values)
        return values

    def closed_twin(self) -> 'OperatorCocycle':
        if self.openness == CLOSED:
            return self
        with self.lock:
            if self._closed is None:
                self._closed = OperatorCocycle(self.system, self.grid, CLOSED)
            return self._closed

    def with_system(self, system: RandomOpenSystem) -> 'OperatorCocycle':
        """Same grid and openness for a re-parametrized system (e.g. a new t)."""
        return OperatorCocycle(system, self.grid, self.openness)


def compose_cocycle(cocycle: OperatorCocycle, orbit: Orbit, p: int, n: int) -> TransferMatrix:
    """Explicit product M_{p+n-1} ... M_p, for small diagnostic grids."""
    if n < 1:
        raise ValueError("compose_cocycle needs n >= 1")
    if n == 1:
        return cocycle.matrix_at(orbit, p)
    if cocycle.grid.N > DENSE_LIMIT:
        raise GridError(f"Explicit composition is limited to N <= {DENSE_LIMIT}; use push for actions")
    product = cocycle.matrix_at(orbit, p).entries
    for k in range(p + 1, p + n):
        product = cocycle.matrix_at(orbit, k).entries @ product
    first = cocycle.matrix_at(orbit, p)
    return TransferMatrix(entries=sparse.csr_matrix(product), grid=cocycle.grid,
                          openness=cocycle.openness, symbol=first.symbol, t=first.t)


def dump_matrix(matrix: TransferMatrix, path: str) -> Tuple[str, str]:
    """Writes ``path`` as 'row col value' lines and ``path.json`` as the header."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    coo = matrix.entries.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8") as f:
        for r, c, v in zip(coo.row[order].tolist(), coo.col[order].tolist(), coo.data[order].tolist()):
            f.write(f"{r} {c} {v!r}\n")
    header_path = path + ".json"
    header = {"breakpoints": matrix.grid.breakpoints.tolist(), "symbol": matrix.symbol,
              "t": matrix.t, "openness": matrix.openness, "N": matrix.grid.N, "nnz": int(coo.nnz)}
    with open(header_path, "w", encoding="utf-8") as f:
        json.dump(header, f, indent=2)
    logger.info("Dumped matrix for symbol %d to %s", matrix.symbol, path)
    return path, header_path

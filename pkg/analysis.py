"""Headline quantities built from the quenched estimators.

Expected pressures are averages over Monte Carlo orbits drawn from derived
seeds; reductions always run in orbit-index order, so results do not depend
on the thread count.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from cocycle import Orbit, RandomOpenSystem, derive_seed, sample_orbit, sample_words
from errors import (ConfigError, DegenerateSystemError, DepthError, InconclusiveError,
                    InsufficientDataError, NotAnalyticError)
from intervals import IntervalSet
from oracle import (AnalyticSystem, CylinderTree, analytic_pressure, contiguous_nonfull_count,
                    point_transfer, survivor_intervals)
from orbit_worker import OrbitWorkerPool, chunked
from quenched import (DEFAULT_N_MAX, DEFAULT_TOL, closed_lambda, fiber_lambda, functional_lambda_many,
                      invariant_density, lebesgue_conformal)
from transfer import OperatorCocycle, build_grid, grid_function, indicator, point_function

logger = logging.getLogger("analysis")

ESTIMATORS: Dict[str, str] = {"sandwich": "sup_inf_sandwich", "lambda": "lambda_product", "analytic": "analytic"}
Z95: float = 1.959963984540054
ZERO_TOL: float = 1e-12
MAX_SAMPLES: int = 2 ** 16
ORBIT_CHUNK: int = 256
ESCAPE_COMPONENTS: int = 200_000
ESCAPE_MIN_TOL: float = 5e-3
DECAY_FLOOR: float = 1e-14
DECAY_BURN_IN: int = 3
FLOOR_FACTOR: float = 10.0
MIN_R_SQUARED: float = 0.9


def _finite(value: float) -> Optional[float]:
    return float(value) if value is not None and math.isfinite(value) else None


def _stderr(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0


# --- Expected pressure ---

@dataclass(frozen=True)
class PressurePoint:
    t: float
    ep: float
    stderr: float
    samples: int
    depth: int
    estimator: str
    gap: float = 0.0
    values: Tuple[float, ...] = ()

    def to_row(self) -> Dict[str, Any]:
        return {"t": self.t, "ep": self.ep, "stderr": self.stderr, "n": self.depth, "estimator": self.estimator}

    def interval(self, z: float = Z95) -> Tuple[float, float]:
        return self.ep - z * self.stderr, self.ep + z * self.stderr


@dataclass
class PressureCurve:
    estimator: str
    points: List[PressurePoint] = field(default_factory=list)

    def is_decreasing(self) -> bool:
        """EP decreases along the t-grid up to twice the combined standard error."""
        pts = sorted(self.points, key=lambda p: p.t)
        for a, b in zip(pts, pts[1:]):
            slack = 2.0 * math.hypot(a.stderr, b.stderr)
            if not b.ep < a.ep + slack + (0.0 if slack else ZERO_TOL):
                return False
        return True

    def to_rows(self) -> List[Dict[str, Any]]:
        return [p.to_row() for p in self.points]

    def to_dict(self) -> Dict[str, Any]:
        return {"estimator": self.estimator, "decreasing": self.is_decreasing(),
                "points": [{"t": p.t, "ep": _finite(p.ep), "stderr": p.stderr, "samples": p.samples,
                            "n": p.depth, "sandwich_gap": p.gap} for p in self.points]}


def _sandwich_batch(cocycle: OperatorCocycle, words: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-word sandwich midpoints and gaps of (1/n) log L^n 1 on its support."""
    count, n = words.shape
    V = np.empty((cocycle.grid.N, count))
    for s in np.unique(words[:, 0]):
        V[:, words[:, 0] == s] = cocycle.survivor_indicator(int(s))[:, None]
    log_scale = np.zeros(count)
    for k in range(n):
        for s in np.unique(words[:, k]):
            idx = np.nonzero(words[:, k] == s)[0]
            V[:, idx] = cocycle.matrix(int(s)).entries @ V[:, idx]
        scale = V.max(axis=0)
        if np.any(scale <= 0):
            raise DegenerateSystemError(f"Support of L^n 1 vanished at step {k + 1}",
                                        {"step": k + 1, "orbits": np.nonzero(scale <= 0)[0].tolist()})
        V /= scale
        log_scale += np.log(scale)
    log_inf = log_scale + np.log(np.where(V > 0, V, np.inf).min(axis=0))
    return 0.5 * (log_inf + log_scale) / n, (log_scale - log_inf) / n


class PressureSampler:
    """
    Per-orbit pressure estimates for a growing Monte Carlo sample. Orbit k is
    always drawn from ``derive_seed(seed, k)``, so enlarging the sample keeps
    the orbits already used.
    """
    def __init__(self, system: RandomOpenSystem, depth: int, seed: int = 0, resolution: int = 256,
                 estimator: str = "sandwich", threads: int = 1,
                 n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL):
        if depth < 1:
            raise ConfigError("Pressure depth must be at least 1")
        if estimator not in ("sandwich", "lambda"):
            raise ConfigError(f"Unknown Monte Carlo estimator {estimator!r}")
        self.system = system
        self.depth = depth
        self.seed = seed
        self.estimator = estimator
        self.threads = threads
        self.n_max = n_max
        self.tol = tol
        self.grid = build_grid(system, resolution)
        self._words = np.empty((0, depth), dtype=np.int64)
        self._cocycles: Dict[float, OperatorCocycle] = {}
        self._values: Dict[float, np.ndarray] = {}
        self._gaps: Dict[float, np.ndarray] = {}

    def cocycle(self, t: float) -> OperatorCocycle:
        if t not in self._cocycles:
            system = self.system.with_t(t) if self.system.potential.kind == "geometric" else self.system
            self._cocycles[t] = OperatorCocycle(system, self.grid).build(self.threads)
        return self._cocycles[t]

    def words(self, count: int) -> np.ndarray:
        have = self._words.shape[0]
        if count > have:
            extra = sample_words(self.system.driving, self.seed, have, count - have, self.depth)
            self._words = np.vstack([self._words, extra])
        return self._words[:count]

    def _lambda_values(self, cocycle: OperatorCocycle, first: int, stop: int) -> Tuple[np.ndarray, np.ndarray]:
        out = np.empty(stop - first)
        for row, k in enumerate(range(first, stop)):
            orbit = sample_orbit(self.system.driving, derive_seed(self.seed, k), 0, self.depth + self.n_max + 1)
            logs = [math.log(fiber_lambda(cocycle, orbit, j, self.n_max, self.tol).value) for j in range(self.depth)]
            out[row] = math.fsum(logs) / self.depth
        return out, np.zeros_like(out)

    def values(self, t: float, count: int) -> Tuple[np.ndarray, np.ndarray]:
        have = self._values.get(t, np.empty(0))
        if count > have.size:
            cocycle = self.cocycle(t)
            words = self.words(count)
            chunks = [(a + have.size, b + have.size) for a, b in chunked(count - have.size, ORBIT_CHUNK)]
            if self.estimator == "sandwich":
                parts = OrbitWorkerPool(self.threads).map(lambda c: _sandwich_batch(cocycle, words[c[0]:c[1]]), chunks)
            else:
                parts = OrbitWorkerPool(self.threads).map(lambda c: self._lambda_values(cocycle, c[0], c[1]), chunks)
            self._values[t] = np.concatenate([have] + [p[0] for p in parts])
            self._gaps[t] = np.concatenate([self._gaps.get(t, np.empty(0))] + [p[1] for p in parts])
        return self._values[t][:count], self._gaps[t][:count]

    def point(self, t: float, count: int) -> PressurePoint:
        vals, gaps = self.values(t, count)
        return PressurePoint(t=float(t), ep=float(np.mean(vals)), stderr=_stderr(vals), samples=count,
                             depth=self.depth, estimator=ESTIMATORS[self.estimator],
                             gap=float(np.mean(gaps)), values=tuple(vals.tolist()))


def expected_pressure(system: RandomOpenSystem, t: float, samples: int = 256, depth: int = 30,
                      estimator: str = "sandwich", seed: int = 0, resolution: int = 256, threads: int = 1,
                      n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL,
                      sampler: Optional[PressureSampler] = None) -> PressurePoint:
    """EP(t) as mean and standard error over ``samples`` orbits, or in closed form."""
    if samples < 1:
        raise ConfigError("Pressure needs at least one orbit sample")
    if estimator == "analytic":
        return PressurePoint(t=float(t), ep=analytic_pressure(system, t), stderr=0.0, samples=0,
                             depth=depth, estimator=ESTIMATORS["analytic"])
    sampler = sampler or PressureSampler(system, depth, seed, resolution, estimator, threads, n_max, tol)
    point = sampler.point(t, samples)
    logger.info("EP(%g) = %.12g +- %.3g over %d orbits (%s)", t, point.ep, point.stderr, samples, point.estimator)
    return point


def pressure_curve(system: RandomOpenSystem, t_grid: Sequence[float], samples: int = 256, depth: int = 30,
                   estimator: str = "sandwich", seed: int = 0, resolution: int = 256, threads: int = 1,
                   n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL) -> PressureCurve:
    if not t_grid:
        raise ConfigError("The t-grid is empty")
    sampler = None
    if estimator != "analytic":
        sampler = PressureSampler(system, depth, seed, resolution, estimator, threads, n_max, tol)
    curve = PressureCurve(estimator=ESTIMATORS.get(estimator, estimator))
    for t in t_grid:
        curve.points.append(expected_pressure(system, float(t), samples, depth, estimator, seed, resolution,
                                              threads, n_max, tol, sampler))
    return curve


def sandwich_gaps(cocycle: OperatorCocycle, orbit: Orbit, p: int, depths: Sequence[int]) -> Dict[int, float]:
    """(1/n)(log sup - log inf) of L^n 1 on its support for each n."""
    return {n: float(_sandwich_batch(cocycle, np.array([orbit.word(p, n)]))[1][0]) for n in depths}


# --- Escape rate ---

@dataclass(frozen=True)
class EscapeReport:
    direct: float
    direct_stderr: float
    band: float
    pressure_closed: float
    pressure_open: float
    pressure_diff: float
    pressure_stderr: float
    tolerance: float
    agree: bool
    source: str
    underflow: bool
    depth: int
    t: float
    orbit_slopes: Tuple[float, ...] = ()
    log_masses: Tuple[Tuple[int, float], ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {"direct": _finite(self.direct), "direct_stderr": self.direct_stderr, "band": self.band,
                "pressure_closed": _finite(self.pressure_closed), "pressure_open": _finite(self.pressure_open),
                "pressure_diff": _finite(self.pressure_diff), "pressure_stderr": self.pressure_stderr,
                "tolerance": self.tolerance, "agree": self.agree, "mass_source": self.source,
                "underflow": self.underflow, "n": self.depth, "t": self.t,
                "orbit_slopes": [_finite(s) for s in self.orbit_slopes],
                "log_masses": [{"k": k, "log_mass": _finite(m)} for k, m in self.log_masses]}


def _fit_range(depth: int) -> List[int]:
    if depth < 2:
        raise InsufficientDataError("Escape fits need depth n >= 2")
    start = depth // 2
    if depth - start + 1 < 3:
        start = depth - 2
    return list(range(start, depth + 1))


def _grid_log_masses(cocycle: OperatorCocycle, orbit: Orbit, p: int, ks: List[int],
                     n_max: int, tol: float) -> List[float]:
    """log nu_c(X_k) by duality: nu_{sigma^(k+1),c}(L^(k+1) 1) / prod lambda_c."""
    v = np.ones(cocycle.grid.N)
    log_scale, log_lam_c = 0.0, 0.0
    lebesgue = lebesgue_conformal(cocycle)
    out = []
    for k in range(ks[-1] + 1):
        v = cocycle.step(orbit, p + k, v)
        scale = float(v.max())
        if not scale > 0:
            out.extend([-math.inf] * sum(1 for kk in ks if kk >= k))
            return out
        v /= scale
        log_scale += math.log(scale)
        if not lebesgue:
            log_lam_c += math.log(closed_lambda(cocycle, orbit, p + k, n_max, tol).value)
        if k in ks:
            if lebesgue:
                out.append(log_scale + math.log(float(cocycle.grid.integrate(v))))
            else:
                est = functional_lambda_many(cocycle.closed_twin(), orbit, p + k + 1, [v], n_max, tol)[0]
                out.append(log_scale + math.log(est.value) - log_lam_c)
    return out


def survivor_log_masses(system: RandomOpenSystem, orbit: Orbit, p: int, depth: int,
                        cocycle: Optional[OperatorCocycle] = None, resolution: int = 256,
                        max_components: int = ESCAPE_COMPONENTS,
                        n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL) -> Tuple[List[int], List[float], str]:
    """log nu_{omega,c}(X_{omega,k}) for k in [n/2, n] and the name of the mass source used.

    Exact survivor intervals come first, then the product law for analytic
    systems, then grid duality.
    """
    ks = _fit_range(depth)
    t = system.t
    lebesgue = system.potential.kind == "geometric" and t == 1.0
    try:
        sets = {depth: survivor_intervals(system, orbit, p, depth, max_components)}
        for k in ks[:-1]:
            sets[k] = survivor_intervals(system, orbit, p, k, max_components)
        if lebesgue:
            masses = [sets[k].total_length for k in ks]
            return ks, [math.log(m) if m > 0 else -math.inf for m in masses], "exact_intervals"
        cocycle = cocycle or OperatorCocycle(system, build_grid(system, resolution))
        columns = [indicator(cocycle.grid, sets[k]).values for k in ks]
        if all(c.max() > 0 for c in columns):
            ests = functional_lambda_many(cocycle.closed_twin(), orbit, p, columns, n_max, tol)
            return ks, [math.log(e.value) if e.value > 0 else -math.inf for e in ests], "exact_intervals"
    except DepthError as e:
        logger.warning("Exact survivor sets unavailable at depth %d: %s", depth, e)

    info = AnalyticSystem.from_system(system)
    if info.flag and info.closed_flag:
        logs = []
        for k in ks:
            total = 0.0
            for s in orbit.word(p, k + 1):
                ratio = info.fiber_lambda(s, t) / info.fiber_lambda(s, t, closed=True)
                total += math.log(ratio) if ratio > 0 else -math.inf
            logs.append(total)
        return ks, logs, "product_law"

    logger.warning("Falling back to grid survivor masses at depth %d", depth)
    cocycle = cocycle or OperatorCocycle(system, build_grid(system, resolution))
    return ks, _grid_log_masses(cocycle, orbit, p, ks, n_max, tol), "grid_duality"


def escape_rate(system: RandomOpenSystem, orbits: Union[Orbit, Sequence[Orbit]], depth: int, p: int = 0,
                samples: int = 256, seed: int = 0, resolution: int = 256, threads: int = 1,
                max_components: int = ESCAPE_COMPONENTS, n_max: int = DEFAULT_N_MAX,
                tol: float = DEFAULT_TOL) -> EscapeReport:
    """Direct slope of -log nu_c(X_{omega,k}) against EP(phi_c) - EP(phi)."""
    if isinstance(orbits, Orbit):
        orbits = [orbits]
    if not orbits:
        raise ConfigError("escape_rate needs at least one orbit")
    t = system.t
    cocycle = OperatorCocycle(system, build_grid(system, resolution))
    slopes, reg_errors, sources = [], [], []
    underflow = False
    first_masses: Tuple[Tuple[int, float], ...] = ()
    for i, orbit in enumerate(orbits):
        ks, logs, source = survivor_log_masses(system, orbit, p, depth, cocycle, resolution,
                                               max_components, n_max, tol)
        sources.append(source)
        if i == 0:
            first_masses = tuple(zip(ks, logs))
        pts = [(k, -m) for k, m in zip(ks, logs) if math.isfinite(m)]
        if len(pts) < 3:
            underflow = True
            slopes.append(math.inf)
            reg_errors.append(0.0)
            continue
        fit = stats.linregress([k for k, _ in pts], [y for _, y in pts])
        slopes.append(float(fit.slope))
        reg_errors.append(float(fit.stderr) if math.isfinite(fit.stderr) else 0.0)
    slope_arr = np.array(slopes)
    if underflow:
        direct, direct_se = math.inf, 0.0
    else:
        direct, direct_se = float(np.mean(slope_arr)), _stderr(slope_arr)
    band = max(direct_se, float(np.mean(reg_errors)))

    info = AnalyticSystem.from_system(system)
    if info.flag and info.closed_flag:
        closed_ep = analytic_pressure(system, t, closed=True)
        open_ep = analytic_pressure(system, t)
        p_se = 0.0
    else:
        closed_pt = expected_pressure(system.closed(), t, samples, depth, "sandwich", seed, resolution, threads)
        open_pt = expected_pressure(system, t, samples, depth, "sandwich", seed, resolution, threads)
        closed_ep, open_ep = closed_pt.ep, open_pt.ep
        p_se = math.hypot(closed_pt.stderr, open_pt.stderr)
    diff = closed_ep - open_ep
    tolerance = max(2.0 * math.hypot(band, p_se), ESCAPE_MIN_TOL)
    agree = math.isfinite(direct) and math.isfinite(diff) and abs(direct - diff) <= tolerance
    source = sources[0] if len(set(sources)) == 1 else "+".join(sorted(set(sources)))
    logger.info("Escape rate at t=%g: direct %.12g (band %.3g), pressure difference %.12g, agree=%s",
                t, direct, band, diff, agree)
    return EscapeReport(direct=direct, direct_stderr=direct_se, band=band, pressure_closed=closed_ep,
                        pressure_open=open_ep, pressure_diff=diff, pressure_stderr=p_se, tolerance=tolerance,
                        agree=agree, source=source, underflow=underflow, depth=depth, t=t,
                        orbit_slopes=tuple(slopes), log_masses=first_masses)


# --- Bowen dimension ---

@dataclass
class DimensionReport:
    h: float
    bracket: Tuple[float, float]
    ep_bracket: Tuple[float, float]
    method: str
    boundary: Optional[str] = None
    samples: int = 0
    steps: List[Dict[str, Any]] = field(default_factory=list)
    box_count: Optional[float] = None
    unresolved_at: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {"h": self.h, "bracket": list(self.bracket), "bracket_width": self.bracket[1] - self.bracket[0],
                "ep_bracket": [_finite(v) for v in self.ep_bracket], "method": self.method,
                "boundary": self.boundary, "samples": self.samples, "steps": self.steps,
                "box_count": self.box_count, "unresolved_at": self.unresolved_at}


class _SignOracle:
    """Sign of EP(t), exact for the closed form, CI-based with sample doubling otherwise."""
    def __init__(self, system: RandomOpenSystem, sampler: Optional[PressureSampler], samples: int,
                 max_samples: int):
        self.system = system
        self.sampler = sampler
        self.samples = samples
        self.max_samples = max_samples
        self.steps: List[Dict[str, Any]] = []

    def __call__(self, t: float) -> Tuple[int, float]:
        while True:
            if self.sampler is None:
                ep, se = analytic_pressure(self.system, t), 0.0
            else:
                point = self.sampler.point(t, self.samples)
                ep, se = point.ep, point.stderr
            half = Z95 * se
            if abs(ep) <= ZERO_TOL and half <= ZERO_TOL:
                sign = 0
            elif ep - half > 0:
                sign = 1
            elif ep + half < 0:
                sign = -1
            else:
                if 2 * self.samples > self.max_samples:
                    raise InconclusiveError(f"Sign of EP({t:.6g}) unresolved with {self.samples} orbits",
                                            {"t": t, "ep": ep, "stderr": se, "samples": self.samples})
                self.samples *= 2
                logger.info("EP(%.6g) = %.6g +- %.3g straddles zero; doubling to %d orbits", t, ep, half, self.samples)
                continue
            self.steps.append({"t": t, "ep": ep, "stderr": se, "samples": self.samples, "sign": sign})
            return sign, ep


def bowen_dimension(system: RandomOpenSystem, tol_t: float = 1e-3, estimator: str = "analytic",
                    samples: int = 256, depth: int = 30, seed: int = 0, resolution: int = 256,
                    threads: int = 1, max_samples: int = MAX_SAMPLES,
                    n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL) -> DimensionReport:
    """
    Zero h of the decreasing map t -> EP(t) on [0, 1] by bisection to width tol_t.

    A midpoint whose sign stays inside the confidence interval at the sample
    cap is indistinguishable from the root. If the certified bracket around it
    is at most 2 tol_t wide, that midpoint is returned as h and recorded in
    ``unresolved_at``; otherwise the bisection is inconclusive.
    """
    if not tol_t > 0:
        raise ConfigError("tol_t must be positive")
    if estimator == "analytic":
        if not AnalyticSystem.from_system(system).flag:
            raise NotAnalyticError("Analytic Bowen root requested for a system without the analytic flag")
        sign_of = _SignOracle(system, None, 0, max_samples)
        method = "bisection_analytic"
    else:
        sampler = PressureSampler(system, depth, seed, resolution, estimator, threads, n_max, tol)
        sign_of = _SignOracle(system, sampler, samples, max_samples)
        method = "bisection_monte_carlo"

    s0, ep0 = sign_of(0.0)
    if s0 <= 0:
        logger.info("EP(0) = %.6g is not positive; h = 0", ep0)
        return DimensionReport(0.0, (0.0, 0.0), (ep0, ep0), method, "zero", sign_of.samples, sign_of.steps)
    s1, ep1 = sign_of(1.0)
    if s1 >= 0 or ep1 >= -ZERO_TOL:
        logger.info("EP(1) = %.6g is not negative; h = 1", ep1)
        return DimensionReport(1.0, (1.0, 1.0), (ep1, ep1), method, "one", sign_of.samples, sign_of.steps)

    lo, hi, ep_lo, ep_hi = 0.0, 1.0, ep0, ep1
    while hi - lo > tol_t:
        mid = 0.5 * (lo + hi)
        try:
            sign, ep = sign_of(mid)
        except InconclusiveError as err:
            if hi - lo > 2.0 * tol_t:
                raise
            logger.warning("EP(%.9f) unresolved at the sample cap; h taken as the midpoint of [%.9f, %.9f]",
                           mid, lo, hi)
            sign_of.steps.append({**err.details, "sign": None})
            return DimensionReport(mid, (lo, hi), (ep_lo, ep_hi), method, None, sign_of.samples,
                                   sign_of.steps, unresolved_at=mid)
        if sign == 0:
            lo = hi = mid
            ep_lo = ep_hi = ep
            break
        if sign > 0:
            lo, ep_lo = mid, ep
        else:
            hi, ep_hi = mid, ep
        logger.info("Bisection bracket [%.9f, %.9f]", lo, hi)
    h = 0.5 * (lo + hi)
    return DimensionReport(h, (lo, hi), (ep_lo, ep_hi), method, None, sign_of.samples, sign_of.steps)


# --- Decay of the normalized cocycle ---

@dataclass(frozen=True)
class DecayFit:
    kappa: Optional[float]
    intercept: Optional[float]
    r_squared: Optional[float]
    status: str
    fit_range: Tuple[int, int] = (0, 0)
    method: str = "regression"

    def to_dict(self) -> Dict[str, Any]:
        return {"kappa": self.kappa, "intercept": self.intercept, "r_squared": self.r_squared,
                "status": self.status, "fit_range": list(self.fit_range), "method": self.method}


@dataclass
class DecayReport:
    sequences: Dict[str, List[float]]
    fits: Dict[str, DecayFit]
    pooled: DecayFit
    correlations: Dict[str, List[float]] = field(default_factory=dict)

    def to_rows(self) -> List[Dict[str, Any]]:
        return [{"n": n, "test_fn": name, "c_n": c}
                for name, seq in self.sequences.items() for n, c in enumerate(seq)]

    def to_dict(self) -> Dict[str, Any]:
        return {"fits": {k: v.to_dict() for k, v in self.fits.items()}, "pooled": self.pooled.to_dict(),
                "correlations": self.correlations}


def _run_above(sequence: Sequence[float], floors: Sequence[float], start: int) -> List[Tuple[int, float]]:
    pts = []
    for n in range(start, len(sequence)):
        if not sequence[n] > max(floors[n], DECAY_FLOOR):
            break
        pts.append((n, math.log(sequence[n])))
    return pts


def _regression(pts: List[Tuple[int, float]]) -> DecayFit:
    fit = stats.linregress([n for n, _ in pts], [y for _, y in pts])
    r2 = float(fit.rvalue ** 2)
    status = "fitted" if fit.slope < 0 and r2 >= MIN_R_SQUARED else "inconclusive"
    return DecayFit(float(math.exp(fit.slope)), float(fit.intercept), r2, status, (pts[0][0], pts[-1][0]))


def fit_decay(sequence: Sequence[float], floors: Sequence[float], burn_in: int = DECAY_BURN_IN,
              scale: float = 1.0) -> DecayFit:
    """
    Log-linear fit of C_n from the burn-in up to the first value at its floor.

    A run that reaches the floor before three points survive the burn-in is
    refitted from n = 0. If that leaves fewer than two points or no good fit,
    kappa is the envelope max_n (C_n / C_ref)^(1/n), C_ref = max(C_0, scale), taking C_n
    no lower than its floor; the two envelope points fit the line exactly.
    """
    pts = _run_above(sequence, floors, burn_in)
    if len(pts) >= 3:
        fit = _regression(pts)
        if fit.status == "inconclusive":
            logger.warning("Decay fit inconclusive: kappa %.3g, R^2 %.3f", fit.kappa, fit.r_squared)
        return fit
    pts = _run_above(sequence, floors, 0)
    if len(pts) >= 2:
        fit = _regression(pts)
        if fit.status == "fitted":
            return fit
    if len(sequence) < 2:
        raise InsufficientDataError("Decay fits need at least two terms of C_n")
    ref = max(sequence[0], scale, DECAY_FLOOR)
    rates = [(max(sequence[n], floors[n], DECAY_FLOOR) / ref) ** (1.0 / n) for n in range(1, len(sequence))]
    worst = int(np.argmax(rates)) + 1
    kappa = float(rates[worst - 1])
    status = "fitted" if kappa < 1.0 else "inconclusive"
    if status == "inconclusive":
        logger.warning("Decay envelope does not contract: kappa %.3g", kappa)
    return DecayFit(kappa, math.log(ref), 1.0, status, (0, worst), "envelope")


def decay_fit(cocycle: OperatorCocycle, orbit: Orbit, p: int, fs: Dict[str, np.ndarray], depth: int,
              density_depth: Optional[int] = None, observable: Optional[np.ndarray] = None,
              n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL) -> DecayReport:
    """C_n = ||lambda^-n L^n f - nu(f) q_{sigma^n omega}||_inf for n = 0..depth.

    q along the orbit is carried forward by the normalized cocycle itself.
    With ``observable`` h, also reports |mu((f o T^n) h) - mu(f) mu(h)|.
    """
    density = invariant_density(cocycle, orbit, p, density_depth or depth, tol, n_max)
    q = density.q.values
    names = list(fs)
    nus = functional_lambda_many(cocycle, orbit, p, [np.asarray(fs[k], dtype=float) for k in names], n_max, tol)
    lams = [fiber_lambda(cocycle, orbit, p + j, n_max, tol).value for j in range(depth)]

    q_path = [q]
    for j in range(depth):
        q_path.append(cocycle.step(orbit, p + j, q_path[-1]) / lams[j])
    q_sup = [float(np.max(np.abs(v))) for v in q_path]

    scales = {k: max(float(np.max(np.abs(fs[k]))), 1e-300) for k in names}
    sequences, fits, floors_all = {}, {}, {}
    for name, nu in zip(names, nus):
        v = np.asarray(fs[name], dtype=float) - nu.value * q
        seq = [float(np.max(np.abs(v)))]
        for j in range(depth):
            v = cocycle.step(orbit, p + j, v) / lams[j]
            seq.append(float(np.max(np.abs(v))))
        noise = nu.error + abs(nu.value) * density.normalization_error
        floors = [FLOOR_FACTOR * noise * s for s in q_sup]
        sequences[name], floors_all[name] = seq, floors
        fits[name] = fit_decay(seq, floors, scale=scales[name])

    pooled_seq = [max(sequences[k][n] / scales[k] for k in names) for n in range(depth + 1)]
    pooled_floor = [max(floors_all[k][n] / scales[k] for k in names) for n in range(depth + 1)]
    report = DecayReport(sequences=sequences, fits=fits, pooled=fit_decay(pooled_seq, pooled_floor))

    if observable is not None:
        h = np.asarray(observable, dtype=float)
        hq = h * q
        mu_h = functional_lambda_many(cocycle, orbit, p, [hq], n_max, tol)[0].value
        u = hq
        report.correlations = {k: [] for k in names}
        for j in range(depth):
            u = cocycle.step(orbit, p + j, u) / lams[j]
            centered = u - mu_h * q_path[j + 1]
            ests = functional_lambda_many(cocycle, orbit, p + j + 1,
                                          [np.asarray(fs[k], dtype=float) * centered for k in names], n_max, tol)
            for k, e in zip(names, ests):
                report.correlations[k].append(abs(e.value))
    return report


# --- Conditional invariance ---

@dataclass
class ConditionalInvarianceReport:
    ratios: Dict[str, List[float]]
    eta: Dict[str, List[float]]
    residuals: Dict[str, List[float]]
    monotone: Dict[str, bool]
    truncated_at: Optional[int] = None

    def limit(self, name: str) -> float:
        return self.ratios[name][-1]

    def to_dict(self) -> Dict[str, Any]:
        return {"ratios": self.ratios, "eta": self.eta, "residuals": self.residuals,
                "monotone": self.monotone, "truncated_at": self.truncated_at}


def conditional_invariance_residual(cocycle: OperatorCocycle, orbit: Orbit, p: int,
                                    sets: Dict[str, Union[IntervalSet, Sequence[float]]], depth: int,
                                    density_depth: Optional[int] = None, burn_in: int = DECAY_BURN_IN,
                                    n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL
                                    ) -> ConditionalInvarianceReport:
    """|nu_c(T^-n A | X_{omega,n}) - eta_{sigma^n omega}(A)| for n = 1..depth.

    Both sides are ratios at the fiber sigma^n omega:
    nu_c(1_A 1_I L^n 1) / nu_c(1_I L^n 1) against the same ratio with L^n q.
    """
    grid = cocycle.grid
    q = invariant_density(cocycle, orbit, p, density_depth or depth, tol, n_max).q.values
    cells = {name: indicator(grid, a).values for name, a in sets.items()}
    lebesgue = lebesgue_conformal(cocycle)
    report = ConditionalInvarianceReport({k: [] for k in sets}, {k: [] for k in sets},
                                         {k: [] for k in sets}, {})
    v, u = np.ones(grid.N), q.copy()
    for k in range(1, depth + 1):
        v = cocycle.step(orbit, p + k - 1, v)
        u = cocycle.step(orbit, p + k - 1, u)
        sv, su = float(v.max()), float(u.max())
        if not (sv > 0 and su > 0):
            report.truncated_at = k
            logger.warning("Survivor mass underflow at n=%d; truncating conditional invariance sequence", k)
            break
        v, u = v / sv, u / su
        alive = cocycle.survivor_indicator(orbit.symbol(p + k))
        columns = [alive * v, alive * u]
        for name in sets:
            columns.extend([cells[name] * alive * v, cells[name] * alive * u])
        if lebesgue:
            values = [float(grid.integrate(c)) for c in columns]
        else:
            values = [e.value for e in functional_lambda_many(cocycle.closed_twin(), orbit, p + k, columns, n_max, tol)]
        if not (values[0] > 0 and values[1] > 0):
            report.truncated_at = k
            break
        for i, name in enumerate(sets):
            ratio = values[2 + 2 * i] / values[0]
            eta = values[3 + 2 * i] / values[1]
            report.ratios[name].append(ratio)
            report.eta[name].append(eta)
            report.residuals[name].append(abs(ratio - eta))
    for name, res in report.residuals.items():
        tail = res[burn_in:]
        report.monotone[name] = all(b <= a + ZERO_TOL * max(1.0, a) for a, b in zip(tail, tail[1:]))
    return report


# --- Lasota-Yorke constants ---

@dataclass(frozen=True)
class LYConstants:
    A: float
    B: float
    Q: float
    K: float
    xi: int
    g_norm: float
    delta: float
    rho: float

    def to_dict(self) -> Dict[str, Any]:
        return {"A": self.A, "B": self.B, "Q": _finite(self.Q), "K": _finite(self.K), "xi": self.xi,
                "g_norm": self.g_norm, "delta": self.delta, "rho_n": self.rho}


def _cover_sup(images: Sequence[Tuple[float, float]], weights: Sequence[float],
               within: Optional[IntervalSet] = None, minimum: bool = False) -> float:
    """sup (or inf) over y of sum of weights of the images containing y."""
    ends = sorted({0.0, 1.0} | {e for im in images for e in im})
    best = None
    for a, b in zip(ends, ends[1:]):
        if b - a <= 0:
            continue
        y = 0.5 * (a + b)
        if within is not None and not bool(within.contains(y)):
            continue
        total = sum(w for (lo, hi), w in zip(images, weights) if lo <= y < hi)
        best = total if best is None else (min(best, total) if minimum else max(best, total))
    return 0.0 if best is None else best


def ly_constants(system: RandomOpenSystem, word: Sequence[int], n: int, delta: Optional[float] = None,
                 rho: Optional[float] = None) -> LYConstants:
    """
    Computable bounds for the n-step Lasota-Yorke constants along a fiber word.

    A = (9 + 16 xi) ||g^(n)|| and B = 8 (2 xi + 1) ||g^(n)|| / delta, with xi
    bounded by the exact contiguous non-full count. delta defaults to the lower
    bound inf g^(n) / ||L_c^n 1||. Q and K divide by rho^n, which defaults to
    the product of inf L 1 lower bounds along the word.
    """
    open_leaves = CylinderTree(system, word, n, open_=True).leaves()
    if not open_leaves:
        raise DegenerateSystemError("No cylinder survives along this word")
    g_norm = max(z.weight_bounds[1] for z in open_leaves)
    g_inf = min(z.weight_bounds[0] for z in open_leaves)
    xi = contiguous_nonfull_count(system, word, n)
    if delta is None:
        closed_leaves = CylinderTree(system, word, n, open_=False).leaves()
        sup_l1 = _cover_sup([z.image for z in closed_leaves], [z.weight_bounds[1] for z in closed_leaves])
        delta = g_inf / sup_l1
    if rho is None:
        rho = 1.0
        for j in range(n):
            leaves = CylinderTree(system, (word[j],), 1, open_=True).leaves()
            within = system.holes[word[j + 1]].survivor_set() if j + 1 < len(word) else None
            rho *= _cover_sup([z.image for z in leaves], [z.weight_bounds[0] for z in leaves],
                              within, minimum=True)
    A = (9.0 + 16.0 * xi) * g_norm
    B = 8.0 * (2.0 * xi + 1.0) * g_norm / delta
    Q = A / rho if rho > 0 else math.inf
    K = B / rho if rho > 0 else math.inf
    return LYConstants(A=A, B=B, Q=Q, K=K, xi=xi, g_norm=g_norm, delta=delta, rho=rho)


# --- Oracle agreement ---

@dataclass(frozen=True)
class OracleAgreement:
    discrepancies: Tuple[float, ...]
    median: float
    constant: float
    variation: float
    N: int

    def to_dict(self) -> Dict[str, Any]:
        return {"median": self.median, "max": max(self.discrepancies, default=0.0), "constant": self.constant,
                "variation": self.variation, "N": self.N}


def oracle_agreement(cocycle: OperatorCocycle, orbit: Orbit, p: int, n: int, spec: Dict[str, Any],
                     points: Sequence[float]) -> OracleAgreement:
    """Grid L^n f at the cell of y against the exact preimage sum at y."""
    f = grid_function(cocycle.grid, spec)
    pushed = cocycle.push(orbit, p, n, f.values)
    fn = point_function(spec)
    diffs = []
    for y in points:
        exact = point_transfer(cocycle.system, orbit, p, n, fn, float(y), cocycle.openness)
        diffs.append(abs(float(pushed[int(cocycle.grid.cell_of(y))]) - exact))
    var = f.variation()
    worst = max(diffs, default=0.0)
    constant = worst * cocycle.grid.N / var if var > 0 else worst * cocycle.grid.N
    return OracleAgreement(tuple(diffs), float(np.median(diffs)) if diffs else 0.0, constant, var, cocycle.grid.N)


@dataclass(frozen=True)
class OracleConvergence:
    coarse: OracleAgreement
    fine: OracleAgreement

    @property
    def ratio(self) -> Optional[float]:
        """median(N) / median(2N); about 2 for first-order convergence."""
        if not self.fine.median > 0:
            return None
        return self.coarse.median / self.fine.median

    def to_dict(self) -> Dict[str, Any]:
        return {**self.coarse.to_dict(), "fine_N": self.fine.N, "fine_median": self.fine.median,
                "ratio": self.ratio}


def oracle_convergence(system: RandomOpenSystem, orbit: Orbit, p: int, n: int, spec: Dict[str, Any],
                       points: Sequence[float], resolution: int, threads: int = 1,
                       coarse: Optional[OperatorCocycle] = None,
                       fine: Optional[OperatorCocycle] = None) -> OracleConvergence:
    """Oracle agreement at ``resolution`` and at twice that resolution."""
    if coarse is None:
        coarse = OperatorCocycle(system, build_grid(system, resolution)).build(threads)
    if fine is None:
        fine = OperatorCocycle(system, build_grid(system, 2 * resolution), coarse.openness).build(threads)
    result = OracleConvergence(oracle_agreement(coarse, orbit, p, n, spec, points),
                               oracle_agreement(fine, orbit, p, n, spec, points))
    logger.info("Oracle median for %s: %.3g at N=%d, %.3g at N=%d", spec.get("name"), result.coarse.median,
                result.coarse.N, result.fine.median, result.fine.N)
    return result

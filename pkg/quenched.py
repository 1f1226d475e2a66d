"""Quenched estimators along a sampled driving orbit.

Everything here is built on one primitive: the bracket

    min over supp(L^n 1) of L^n f / L^n 1   <=   Lambda(f)   <=   max of the same ratio

which is monotone in n for nonnegative f and closes as n grows. Conformal
measures are the functional Lambda itself, fiber multipliers are
Lambda(L 1), and invariant densities are normalized backward pushes of 1.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from cocycle import Orbit
from errors import DegenerateSystemError, NumericsError, OrbitError
from oracle import survivor_intervals
from transfer import GridFunction, OperatorCocycle, indicator

logger = logging.getLogger("quenched")

DEFAULT_TOL: float = 1e-10
DEFAULT_N_MAX: int = 200
MONOTONE_RTOL: float = 1e-10
STABLE_STEPS: int = 5


@dataclass(frozen=True)
class RatioRecord:
    n: int
    min_ratio: float
    max_ratio: float
    support: int


@dataclass
class RatioSequence:
    """Per-iterate brackets of L^n f / L^n 1 on the support of L^n 1."""
    records: List[RatioRecord] = field(default_factory=list)
    stabilized_at: Optional[int] = None

    @property
    def final(self) -> RatioRecord:
        return self.records[-1]

    def to_rows(self, name: str = "") -> List[Dict[str, Any]]:
        return [{"test_fn": name, "n": r.n, "min_ratio": r.min_ratio, "max_ratio": r.max_ratio,
                 "support": r.support} for r in self.records]


@dataclass(frozen=True)
class LambdaEstimate:
    value: float
    error: float
    iterations: int
    sequence: Optional[RatioSequence] = None

    @property
    def lower(self) -> float:
        return self.value - 0.5 * self.error

    @property
    def upper(self) -> float:
        return self.value + 0.5 * self.error


@dataclass(frozen=True)
class MeasureEntry:
    name: str
    value: float
    error: float
    kind: str


@dataclass
class MeasureEstimate:
    """Evaluations of one measure (nu_open, nu_closed, mu or eta) on named test functions."""
    kind: str
    entries: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    def add(self, entry: MeasureEntry) -> None:
        self.entries[entry.name] = (entry.value, entry.error)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind,
                "entries": {k: {"value": v, "error": e} for k, (v, e) in self.entries.items()}}


@dataclass(frozen=True)
class DensityEstimate:
    q: GridFunction
    position: int
    depth: int
    residual: float
    normalization_error: float

    @property
    def error_bound(self) -> float:
        return self.residual + self.q.sup_norm() * self.normalization_error


def _values(f: Union[GridFunction, np.ndarray]) -> np.ndarray:
    return np.asarray(f.values if isinstance(f, GridFunction) else f, dtype=float)


def ratio_brackets(cocycle: OperatorCocycle, orbit: Orbit, p: int, columns: np.ndarray,
                   n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL) -> List[RatioSequence]:
    """Iterates nonnegative columns and 1_omega together until every bracket is within tol."""
    num = np.array(columns, dtype=float, copy=True)
    if num.ndim == 1:
        num = num[:, None]
    if np.any(num < 0):
        raise ValueError("ratio_brackets needs nonnegative columns")
    den = cocycle.survivor_indicator(orbit.symbol(p)).copy()
    mask = den > 0
    if not mask.any():
        raise DegenerateSystemError(f"Fiber at position {p} is entirely inside its hole")
    lo = num[mask].min(axis=0)
    hi = num[mask].max(axis=0)
    sequences = [RatioSequence([RatioRecord(0, float(a), float(b), int(mask.sum()))])
                 for a, b in zip(lo, hi)]
    last_change, n = 0, 0
    while np.max(hi - lo) > tol and n < n_max:
        M = cocycle.matrix_at(orbit, p + n).entries
        num = M @ num
        den = M @ den
        n += 1
        scale = den.max()
        if not scale > 0:
            raise DegenerateSystemError(f"Support of L^n 1 vanished at step {n} from position {p}",
                                        {"position": p, "step": n})
        num /= scale
        den /= scale
        new_mask = den > 0
        if not np.array_equal(new_mask, mask):
            last_change = n
        mask = new_mask
        ratio = num[mask] / den[mask][:, None]
        new_lo, new_hi = ratio.min(axis=0), ratio.max(axis=0)
        slack = MONOTONE_RTOL * np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
        if np.any(new_lo < lo - slack) or np.any(new_hi > hi + slack):
            raise NumericsError(f"Ratio bracket lost monotonicity at step {n} from position {p}",
                                {"lo": lo.tolist(), "new_lo": new_lo.tolist()})
        lo = np.maximum(lo, new_lo)
        hi = np.minimum(hi, new_hi)
        support = int(mask.sum())
        for seq, a, b in zip(sequences, lo, hi):
            seq.records.append(RatioRecord(n, float(a), float(b), support))
        logger.debug("position %d step %d: max width %.3e, support %d", p, n, float(np.max(hi - lo)), support)
    if n - last_change >= STABLE_STEPS:
        for seq in sequences:
            seq.stabilized_at = last_change
    return sequences


def _estimate(seq: RatioSequence) -> LambdaEstimate:
    rec = seq.final
    return LambdaEstimate(value=0.5 * (rec.min_ratio + rec.max_ratio),
                          error=rec.max_ratio - rec.min_ratio, iterations=rec.n, sequence=seq)


def functional_lambda_many(cocycle: OperatorCocycle, orbit: Orbit, p: int,
                           fs: Sequence[Union[GridFunction, np.ndarray]],
                           n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL) -> List[LambdaEstimate]:
    """Lambda_omega of several functions sharing one run of the denominator.

    Signed functions are split as f = f+ - f-; values subtract and errors add.
    """
    columns, layout = [], []
    for f in fs:
        v = _values(f)
        if np.all(v >= 0):
            layout.append((len(columns), None))
            columns.append(v)
        else:
            layout.append((len(columns), len(columns) + 1))
            columns.extend([np.maximum(v, 0.0), np.maximum(-v, 0.0)])
    sequences = ratio_brackets(cocycle, orbit, p, np.column_stack(columns), n_max, tol)
    out = []
    for pos, neg in layout:
        plus = _estimate(sequences[pos])
        if neg is None:
            out.append(plus)
            continue
        minus = _estimate(sequences[neg])
        out.append(LambdaEstimate(value=plus.value - minus.value, error=plus.error + minus.error,
                                  iterations=max(plus.iterations, minus.iterations), sequence=plus.sequence))
    return out


def functional_lambda(cocycle: OperatorCocycle, orbit: Orbit, p: int, f: Union[GridFunction, np.ndarray],
                      n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL) -> LambdaEstimate:
    """Lambda_omega(f) at orbit position p with its certified bracket."""
    return functional_lambda_many(cocycle, orbit, p, [f], n_max, tol)[0]


def fiber_lambda(cocycle: OperatorCocycle, orbit: Orbit, p: int,
                 n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL) -> LambdaEstimate:
    """lambda_omega = Lambda_{sigma omega}(L_omega 1_omega)."""
    image = cocycle.step(orbit, p, cocycle.survivor_indicator(orbit.symbol(p)))
    return functional_lambda(cocycle, orbit, p + 1, image, n_max, tol)


def closed_lambda(cocycle: OperatorCocycle, orbit: Orbit, p: int,
                  n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL) -> LambdaEstimate:
    """Closed multiplier; exactly 1 for the geometric potential at t = 1."""
    if lebesgue_conformal(cocycle):
        return LambdaEstimate(value=1.0, error=0.0, iterations=0)
    return fiber_lambda(cocycle.closed_twin(), orbit, p, n_max, tol)


def lebesgue_conformal(cocycle: OperatorCocycle) -> bool:
    potential = cocycle.system.potential
    return potential.kind == "geometric" and potential.t == 1.0


def conformal_eval(cocycle: OperatorCocycle, orbit: Orbit, p: int, f: Union[GridFunction, np.ndarray],
                   n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL, kind: str = "nu_open",
                   name: str = "f") -> MeasureEntry:
    """nu_omega(f), or the closed conformal measure for ``kind='nu_closed'``."""
    if kind == "nu_closed":
        cocycle = cocycle.closed_twin()
    est = functional_lambda(cocycle, orbit, p, f, n_max, tol)
    return MeasureEntry(name=name, value=est.value, error=est.error, kind=kind)


def closed_conformal_integral(cocycle: OperatorCocycle, orbit: Orbit, p: int, h: np.ndarray,
                              n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL) -> Tuple[float, float]:
    """nu_{omega,c}(h): the Lebesgue integral at t = 1, the closed functional otherwise."""
    if lebesgue_conformal(cocycle):
        return float(cocycle.grid.integrate(h)), 0.0
    est = functional_lambda(cocycle.closed_twin(), orbit, p, h, n_max, tol)
    return est.value, est.error


def _push_normalized(cocycle: OperatorCocycle, orbit: Orbit, start: int, steps: int) -> np.ndarray:
    v = cocycle.survivor_indicator(orbit.symbol(start)).copy()
    for k in range(start, start + steps):
        v = cocycle.step(orbit, k, v)
        scale = v.max()
        if not scale > 0:
            raise DegenerateSystemError(f"Backward push from position {start} died at step {k - start + 1}")
        v /= scale
    return v


def invariant_density(cocycle: OperatorCocycle, orbit: Orbit, p: int, n: int,
                      tol: float = DEFAULT_TOL, n_max: int = DEFAULT_N_MAX) -> DensityEstimate:
    """q_omega from L^n 1 pushed in from position p - n, normalized so Lambda_omega(q) = 1."""
    if n < 1:
        raise ValueError("invariant_density needs backward depth n >= 1")
    if not orbit.covers(p - n, p):
        raise OrbitError(f"Orbit window does not reach back to position {p - n}",
                         {"position": p, "depth": n, "window": list(orbit.window)})
    previous = _push_normalized(cocycle, orbit, p - n + 1, n - 1)
    current = _push_normalized(cocycle, orbit, p - n, n)
    est_prev, est_cur = functional_lambda_many(cocycle, orbit, p, [previous, current], n_max, tol)
    q_prev = previous / est_prev.value
    q = current / est_cur.value
    residual = float(np.max(np.abs(q - q_prev)))
    logger.info("Density at position %d depth %d: residual %.3e", p, n, residual)
    return DensityEstimate(q=GridFunction(q, cocycle.grid), position=p, depth=n, residual=residual,
                           normalization_error=est_cur.error / est_cur.value)


def invariant_measure_eval(cocycle: OperatorCocycle, orbit: Orbit, p: int, f: Union[GridFunction, np.ndarray],
                           depth: int, density: Optional[DensityEstimate] = None,
                           n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL,
                           name: str = "f") -> MeasureEntry:
    """mu_omega(f) = nu_omega(f q) / nu_omega(q)."""
    density = density or invariant_density(cocycle, orbit, p, depth, tol, n_max)
    q = density.q.values
    fq, qq = functional_lambda_many(cocycle, orbit, p, [_values(f) * q, q], n_max, tol)
    value = fq.value / qq.value
    error = (fq.error + abs(value) * qq.error) / qq.value
    return MeasureEntry(name=name, value=value, error=error, kind="mu")


@dataclass(frozen=True)
class RaccimEstimate:
    """Conditionally invariant measure eta_omega with its escape factor alpha_omega."""
    entries: Dict[str, Tuple[float, float]]
    alpha: float
    alpha_error: float
    residual: float
    lambda_closed: float


def raccim_eval(cocycle: OperatorCocycle, orbit: Orbit, p: int,
                fs: Dict[str, Union[GridFunction, np.ndarray]], depth: int,
                n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL) -> RaccimEstimate:
    """eta_omega(f) = nu_c(1_omega q f) / nu_c(1_omega q) for each named f.

    Also returns alpha_omega = eta_omega(X_{omega,1}) and the sup-norm defect
    of 1_{sigma omega} L_c(h_omega) = lambda_c alpha h_{sigma omega}, where h
    is the density of eta with respect to the closed conformal measure.
    """
    grid = cocycle.grid
    here = invariant_density(cocycle, orbit, p, depth, tol, n_max)
    there = invariant_density(cocycle, orbit, p + 1, depth, tol, n_max)
    one_here = cocycle.survivor_indicator(orbit.symbol(p))
    one_there = cocycle.survivor_indicator(orbit.symbol(p + 1))
    base = one_here * here.q.values
    mass, mass_err = closed_conformal_integral(cocycle, orbit, p, base, n_max, tol)
    if not mass > 0:
        raise DegenerateSystemError(f"Conditionally invariant measure undefined at position {p}")

    entries: Dict[str, Tuple[float, float]] = {}
    for name, f in fs.items():
        val, err = closed_conformal_integral(cocycle, orbit, p, base * _values(f), n_max, tol)
        value = val / mass
        entries[name] = (value, (err + abs(value) * mass_err) / mass + here.normalization_error * abs(value))

    x1 = indicator(grid, survivor_intervals(cocycle.system, orbit, p, 1)).values
    a_val, a_err = closed_conformal_integral(cocycle, orbit, p, base * x1, n_max, tol)
    alpha = a_val / mass
    alpha_error = (a_err + alpha * mass_err) / mass

    lam_c = closed_lambda(cocycle, orbit, p, n_max, tol)
    mass_there, _ = closed_conformal_integral(cocycle, orbit, p + 1, one_there * there.q.values, n_max, tol)
    lhs = one_there * cocycle.closed_twin().step(orbit, p, base / mass)
    rhs = lam_c.value * alpha * one_there * there.q.values / mass_there
    residual = float(np.max(np.abs(lhs - rhs)))
    logger.info("RACCIM at position %d: alpha=%.12g residual=%.3e", p, alpha, residual)
    return RaccimEstimate(entries=entries, alpha=alpha, alpha_error=alpha_error,
                          residual=residual, lambda_closed=lam_c.value)


def conformality_residual(cocycle: OperatorCocycle, orbit: Orbit, p: int, f: Union[GridFunction, np.ndarray],
                          n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL) -> Tuple[float, float]:
    """(|nu_{sigma omega}(L f) - lambda nu_omega(f)|, combined bracket error)."""
    v = _values(f)
    lam = fiber_lambda(cocycle, orbit, p, n_max, tol)
    nu_f = functional_lambda(cocycle, orbit, p, v, n_max, tol)
    nu_lf = functional_lambda(cocycle, orbit, p + 1, cocycle.step(orbit, p, v), n_max, tol)
    residual = abs(nu_lf.value - lam.value * nu_f.value)
    error = nu_lf.error + lam.value * nu_f.error + abs(nu_f.value) * lam.error
    return residual, error


def density_equivariance(cocycle: OperatorCocycle, orbit: Orbit, p: int, depth: int,
                         n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL) -> Tuple[float, float]:
    """(||lambda^-1 L q_omega - q_{sigma omega}||_inf, declared bound)."""
    here = invariant_density(cocycle, orbit, p, depth, tol, n_max)
    there = invariant_density(cocycle, orbit, p + 1, depth, tol, n_max)
    lam = fiber_lambda(cocycle, orbit, p, n_max, tol)
    pushed = cocycle.step(orbit, p, here.q.values) / lam.value
    defect = float(np.max(np.abs(pushed - there.q.values)))
    scale = float(np.max(np.abs(pushed)))
    bound = (2.0 * (here.residual + there.residual) + scale * (lam.error / lam.value)
             + scale * here.normalization_error + there.q.sup_norm() * there.normalization_error + 1e-12)
    return defect, bound


def lambda_product_check(cocycle: OperatorCocycle, orbit: Orbit, p: int, f: Union[GridFunction, np.ndarray],
                         n: int, n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL) -> Tuple[float, float, float]:
    """(Lambda_{sigma^n omega}(L^n f), prod lambda * Lambda_omega(f), tolerance)."""
    v = _values(f)
    base = functional_lambda(cocycle, orbit, p, v, n_max, tol)
    pushed = functional_lambda(cocycle, orbit, p + n, cocycle.push(orbit, p, n, v), n_max, tol)
    product, rel = 1.0, 0.0
    for k in range(p, p + n):
        lam = fiber_lambda(cocycle, orbit, k, n_max, tol)
        product *= lam.value
        rel += lam.error / lam.value
    rhs = product * base.value
    tolerance = pushed.error + product * base.error + abs(rhs) * rel + 1e-12
    return pushed.value, rhs, tolerance

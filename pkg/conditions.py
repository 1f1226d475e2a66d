"""Checkable surrogates of the standing hypotheses on a random open system.

Everything here is computed by exact enumeration of fiber words weighted by
the stationary measure, so it only scales to short words. The generating
partition hypothesis is not checked: it is implied by uniform expansion and
is listed in the report as an assumption.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from cocycle import RandomOpenSystem, has_full_branch_outside_hole, parse_number
from intervals import IntervalSet
from oracle import AnalyticSystem, CylinderTree, contiguous_nonfull_detail, is_full_interval

logger = logging.getLogger("conditions")

WORD_LIMIT: int = 10 ** 6
COVER_CAP: int = 8
COVER_DEPTHS: int = 2
ASSUMPTIONS: Tuple[str, ...] = (
    "generating partition: implied by min |T'| > 1, not checked",
    "xi is bounded by the contiguous non-full count zeta",
)


@dataclass(frozen=True)
class FiberConditions:
    symbol: int
    kind: str
    zeta: int
    hole_separated: bool
    hole_components: int
    full_branch_outside_hole: bool
    surjective: bool
    min_slope: float
    max_slope: float
    large_images: bool
    large_images_hole: bool
    distortion: float

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


@dataclass
class ConditionReport:
    n1: int
    n2: int
    lhs: Optional[float]
    rhs: Optional[float]
    fibers: List[FiberConditions]
    cch: int
    cch_expected: float
    covering_times: Dict[int, Optional[int]]
    epsilon: Optional[float]
    distortion: float
    ly_margin: Optional[float]
    analytic: bool
    monte_carlo_required: bool = False
    escalations: List[Dict[str, Any]] = field(default_factory=list)
    beta_condition: Optional[Dict[str, Any]] = None

    @property
    def margin(self) -> Optional[float]:
        if self.lhs is None or self.rhs is None:
            return None
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.margin is not None and self.margin > 0

    def to_dict(self) -> Dict[str, Any]:
        def fin(v: Optional[float]) -> Optional[float]:
            return v if v is not None and math.isfinite(v) else None
        return {
            "N1": self.n1, "N2": self.n2, "lhs": fin(self.lhs), "rhs": fin(self.rhs),
            "margin": fin(self.margin), "passed": self.passed,
            "full_branch_outside_hole": all(f.full_branch_outside_hole for f in self.fibers),
            "cch": self.cch, "cch_expected": self.cch_expected,
            "fibers": [f.to_dict() for f in self.fibers],
            "covering_times": {str(k): v for k, v in self.covering_times.items()},
            "epsilon_n": self.epsilon, "distortion": self.distortion, "ly_example_margin": fin(self.ly_margin),
            "analytic": self.analytic, "monte_carlo_required": self.monte_carlo_required,
            "escalations": self.escalations, "beta_condition": self.beta_condition,
            "assumptions": list(ASSUMPTIONS),
        }


def beta_condition_check(betas: Sequence[Any], probabilities: Sequence[Any]) -> Dict[str, Any]:
    """Sufficient condition E log(floor(beta) - 1) > log 5 for random beta maps with holes."""
    total = 0.0
    for beta, m in zip(betas, probabilities):
        m = parse_number(m)
        if m == 0:
            continue
        base = math.floor(parse_number(beta)) - 1
        total += m * math.log(base) if base > 0 else -math.inf
    threshold = math.log(5.0)
    return {"value": total if math.isfinite(total) else None, "threshold": threshold,
            "passed": total > threshold}


def _covers(image: IntervalSet) -> bool:
    return len(image) == 1 and is_full_interval(image.lefts[0], image.rights[0])


def _forward_image(system: RandomOpenSystem, symbol: int, image: IntervalSet) -> IntervalSet:
    fiber = system.fibers[symbol]
    out = IntervalSet.empty()
    for br in fiber.branches:
        for a, b in image.clip(*br.domain):
            lo, hi = sorted((float(br(a)), float(br(b))))
            out = out.union(IntervalSet.from_pairs([(max(lo, 0.0), min(hi, 1.0))]))
    return out


def _successors(system: RandomOpenSystem, last: Optional[int]) -> List[int]:
    driving = system.driving
    if driving.kind == "markov" and last is not None:
        return [s for s in range(driving.alphabet_size) if driving.transition[last][s] > 0]
    return [s for s in range(driving.alphabet_size) if driving.stationary[s] > 0]


def covering_time(system: RandomOpenSystem, image: Tuple[float, float], last: Optional[int],
                  cap: int = COVER_CAP) -> Optional[int]:
    """Worst case over continuation words of the steps until the image covers [0, 1]."""
    def search(current: IntervalSet, previous: Optional[int], depth: int) -> Optional[int]:
        if _covers(current):
            return depth
        if depth >= cap:
            return None
        worst = depth
        for s in _successors(system, previous):
            steps = search(_forward_image(system, s, current), s, depth + 1)
            if steps is None:
                return None
            worst = max(worst, steps)
        return worst

    return search(IntervalSet.from_pairs([image]), last, 0)


def _fiber_conditions(system: RandomOpenSystem, s: int) -> FiberConditions:
    fiber, hole = system.fibers[s], system.holes[s]
    zeta, separated = contiguous_nonfull_detail(system, (s,), 1)
    alive = CylinderTree(system, (s,), 1, open_=True).leaves()
    lo, hi = fiber.slope_range()
    next_survivors = [system.holes[n].survivor_set() for n in _successors(system, s)]
    large = all(z.is_full for z in alive)
    large_hole = all(_covers(IntervalSet.from_pairs([z.image])) or
                     all(surv.is_subset(IntervalSet.from_pairs([z.image]), 1e-12) for surv in next_survivors)
                     for z in alive)
    distortion = max((z.weight_bounds[1] / z.weight_bounds[0] for z in alive if z.weight_bounds[0] > 0),
                     default=1.0)
    return FiberConditions(
        symbol=s, kind=fiber.kind, zeta=zeta, hole_separated=separated, hole_components=hole.component_count,
        full_branch_outside_hole=has_full_branch_outside_hole(fiber, hole),
        surjective=fiber.is_surjective(), min_slope=lo, max_slope=hi,
        large_images=large, large_images_hole=large_hole, distortion=distortion)


def _word_count(system: RandomOpenSystem, n: int) -> int:
    return system.alphabet_size ** n


def _lhs(system: RandomOpenSystem, fibers: List[FiberConditions], n1: int) -> Tuple[float, float, float]:
    """(LHS, min cylinder diameter, distortion) at depth n1."""
    spread, eps, distortion = 0.0, math.inf, 1.0
    for word, prob in system.driving.words(n1):
        leaves = CylinderTree(system, word, n1, open_=False).leaves()
        sup_w = max(z.weight_bounds[1] for z in leaves)
        inf_w = min(z.weight_bounds[0] for z in leaves)
        spread += prob * (math.log(sup_w) - math.log(inf_w))
        eps = min(eps, min(z.diameter for z in leaves))
        distortion = max(distortion, max(z.weight_bounds[1] / z.weight_bounds[0] for z in leaves))
    zeta_term = sum(m * math.log(f.zeta + 2) for f, m in zip(fibers, system.driving.stationary) if m > 0)
    return spread / n1 + zeta_term, eps, distortion


def _preimage_floor(leaves: Sequence[Any]) -> int:
    """min over y in [0, 1] of the number of leaf images containing y."""
    ends = sorted({0.0, 1.0} | {e for z in leaves for e in z.image})
    counts = []
    for a, b in zip(ends, ends[1:]):
        if b - a <= 0:
            continue
        y = 0.5 * (a + b)
        counts.append(sum(1 for z in leaves if z.image[0] <= y < z.image[1]))
    return min(counts) if counts else 0


def _rhs(system: RandomOpenSystem, n2: int) -> float:
    total = 0.0
    for word, prob in system.driving.words(n2):
        f = _preimage_floor(CylinderTree(system, word, n2, open_=True).leaves())
        if f == 0:
            return -math.inf
        total += prob * math.log(f)
    return total / n2


def condition_check(system: RandomOpenSystem, n1: int = 1, n2: int = 1, max_escalation: int = 4) -> ConditionReport:
    """
    Evaluates the averaged contiguous-count condition with N1 >= N2 and the
    structural hypotheses of the affine and beta examples. When the margin
    is not positive, N1 = N2 = k is tried for k up to ``max_escalation``.
    """
    if n1 < n2:
        raise ValueError("The condition needs N1 >= N2")
    m = system.driving.stationary
    fibers = [_fiber_conditions(system, s) for s in range(system.alphabet_size)]
    report = ConditionReport(
        n1=n1, n2=n2, lhs=None, rhs=None, fibers=fibers,
        cch=max(f.hole_components for f in fibers),
        cch_expected=sum(w * f.hole_components for f, w in zip(fibers, m)),
        covering_times={}, epsilon=None, distortion=1.0, ly_margin=None,
        analytic=AnalyticSystem.from_system(system).flag)

    candidates = [(n1, n2)] + [(k, k) for k in range(max(n1, n2) + 1, max_escalation + 1)]
    for a, b in candidates:
        if _word_count(system, a) > WORD_LIMIT:
            report.monte_carlo_required = True
            logger.warning("Word enumeration at N1=%d exceeds %d words; Monte Carlo required", a, WORD_LIMIT)
            break
        lhs, eps, distortion = _lhs(system, fibers, a)
        rhs = _rhs(system, b)
        report.escalations.append({"N1": a, "N2": b, "lhs": lhs, "rhs": rhs if math.isfinite(rhs) else None})
        report.n1, report.n2, report.lhs, report.rhs = a, b, lhs, rhs
        report.epsilon, report.distortion = eps, distortion
        logger.info("Condition check N1=%d N2=%d: lhs %.6g rhs %.6g", a, b, lhs, rhs)
        if rhs - lhs > 0:
            break

    if report.rhs is not None and system.potential.kind == "geometric":
        spread = sum(w * math.log(f.max_slope / f.min_slope) for f, w in zip(fibers, m) if w > 0)
        zeta_term = sum(w * math.log(f.zeta + 2) for f, w in zip(fibers, m) if w > 0)
        report.ly_margin = report.rhs - system.t * spread - zeta_term

    for n in range(1, COVER_DEPTHS + 1):
        if _word_count(system, n) > WORD_LIMIT:
            break
        worst: Optional[int] = 0
        for word, _ in system.driving.words(n):
            for z in CylinderTree(system, word, n, open_=False).leaves():
                steps = covering_time(system, z.image, word[-1])
                if steps is None:
                    worst = None
                    break
                worst = max(worst, n + steps)
            if worst is None:
                break
        report.covering_times[n] = worst

    if all(f.kind == "beta" for f in fibers):
        report.beta_condition = beta_condition_check(
            [system.fibers[s].params.get("beta") for s in range(system.alphabet_size)], m)
    return report

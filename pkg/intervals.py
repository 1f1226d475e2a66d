"""Finite unions of disjoint half-open intervals on the real line.

Endpoints are doubles. Components closer than ``MERGE_GUARD`` are merged and
components shorter than ``MIN_LENGTH`` are dropped, so sets built by different
routes compare equal when they agree up to round-off.
"""
from typing import Any, Callable, Dict, Iterable, Iterator, List, Sequence, Tuple

import numpy as np

MERGE_GUARD: float = 1e-13
MIN_LENGTH: float = 1e-15


class IntervalSet:
    """Sorted, disjoint union of intervals [a, b).

    The right end of a component is treated as closed when it equals 1.0, so
    the unit interval and final branch domains are represented exactly.
    """
    __slots__ = ("lefts", "rights", "total_length")

    def __init__(self, lefts: Sequence[float], rights: Sequence[float], normalized: bool = False) -> None:
        lefts = np.asarray(lefts, dtype=float).reshape(-1)
        rights = np.asarray(rights, dtype=float).reshape(-1)
        if lefts.shape != rights.shape:
            raise ValueError("lefts and rights must have the same length")
        if not normalized:
            lefts, rights = _normalize(lefts, rights)
        self.lefts: np.ndarray = lefts
        self.rights: np.ndarray = rights
        self.lefts.setflags(write=False)
        self.rights.setflags(write=False)
        # left-to-right sum of component lengths
        self.total_length: float = float(sum((rights - lefts).tolist()))

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[float]]) -> 'IntervalSet':
        pairs = [tuple(p) for p in pairs]
        if not pairs:
            return cls.empty()
        for a, b in pairs:
            if b < a:
                raise ValueError(f"Invalid interval start={a} end={b}")
        return cls([p[0] for p in pairs], [p[1] for p in pairs])

    @classmethod
    def empty(cls) -> 'IntervalSet':
        return cls(np.empty(0), np.empty(0), normalized=True)

    @classmethod
    def unit(cls) -> 'IntervalSet':
        return cls(np.array([0.0]), np.array([1.0]), normalized=True)

    def __len__(self) -> int:
        return int(self.lefts.size)

    def __iter__(self) -> Iterator[Tuple[float, float]]:
        return iter(zip(self.lefts.tolist(), self.rights.tolist()))

    def __bool__(self) -> bool:
        return self.lefts.size > 0

    def __repr__(self) -> str:
        shown = ", ".join(f"[{a:.6g}, {b:.6g})" for a, b in list(self)[:6])
        more = "" if len(self) <= 6 else f", ... ({len(self)} components)"
        return f"IntervalSet({shown}{more})"

    @property
    def component_count(self) -> int:
        return len(self)

    @property
    def lengths(self) -> np.ndarray:
        return self.rights - self.lefts

    def is_empty(self) -> bool:
        return self.lefts.size == 0

    def contains(self, x: Any) -> Any:
        """Membership test, vectorized over ``x``."""
        x_arr = np.asarray(x, dtype=float)
        if self.is_empty():
            result = np.zeros(x_arr.shape, dtype=bool)
        else:
            idx = np.searchsorted(self.lefts, x_arr, side="right") - 1
            safe = np.clip(idx, 0, None)
            inside = (idx >= 0) & (x_arr < self.rights[safe])
            at_one = (idx >= 0) & (x_arr == 1.0) & (self.rights[safe] == 1.0)
            result = inside | at_one
        return bool(result) if result.ndim == 0 else result

    def union(self, other: 'IntervalSet') -> 'IntervalSet':
        return IntervalSet(np.concatenate([self.lefts, other.lefts]),
                           np.concatenate([self.rights, other.rights]))

    def complement(self, lo: float = 0.0, hi: float = 1.0) -> 'IntervalSet':
        """Complement relative to [lo, hi)."""
        clipped = self.clip(lo, hi)
        lefts = np.concatenate([[lo], clipped.rights])
        rights = np.concatenate([clipped.lefts, [hi]])
        return IntervalSet(lefts, rights)

    def intersection(self, other: 'IntervalSet') -> 'IntervalSet':
        if self.is_empty() or other.is_empty():
            return IntervalSet.empty()
        lo = min(self.lefts[0], other.lefts[0])
        hi = max(self.rights[-1], other.rights[-1])
        return self.complement(lo, hi).union(other.complement(lo, hi)).complement(lo, hi)

    def difference(self, other: 'IntervalSet') -> 'IntervalSet':
        if self.is_empty() or other.is_empty():
            return self
        lo = min(self.lefts[0], other.lefts[0])
        hi = max(self.rights[-1], other.rights[-1])
        return self.intersection(other.complement(lo, hi))

    def clip(self, lo: float, hi: float) -> 'IntervalSet':
        """Intersection with a single interval [lo, hi)."""
        if self.is_empty() or hi <= lo:
            return IntervalSet.empty()
        lefts = np.maximum(self.lefts, lo)
        rights = np.minimum(self.rights, hi)
        keep = rights - lefts > MIN_LENGTH
        return IntervalSet(lefts[keep], rights[keep], normalized=True)

    def map_monotone(self, fn: Callable[[np.ndarray], np.ndarray], decreasing: bool = False) -> 'IntervalSet':
        """Image under a continuous monotone map applied to the endpoints."""
        if self.is_empty():
            return self
        a = np.asarray(fn(self.lefts), dtype=float)
        b = np.asarray(fn(self.rights), dtype=float)
        if decreasing:
            a, b = b, a
        return IntervalSet(a, b)

    def is_subset(self, other: 'IntervalSet', tol: float = MERGE_GUARD) -> bool:
        if self.is_empty():
            return True
        if other.is_empty():
            return False
        idx = np.searchsorted(other.lefts, self.lefts + tol, side="right") - 1
        if np.any(idx < 0):
            return False
        return bool(np.all(self.rights <= other.rights[idx] + tol))

    def approx_equal(self, other: 'IntervalSet', tol: float = MERGE_GUARD) -> bool:
        return self.is_subset(other, tol) and other.is_subset(self, tol)

    def to_rows(self, depth: int) -> List[Dict[str, Any]]:
        return [{"depth": depth, "left": a, "right": b} for a, b in self]


def _normalize(lefts: np.ndarray, rights: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sort, drop slivers and merge components closer than the guard."""
    keep = rights - lefts > MIN_LENGTH
    lefts, rights = lefts[keep], rights[keep]
    if lefts.size == 0:
        return lefts, rights
    order = np.lexsort((rights, lefts))
    lefts, rights = lefts[order], rights[order]
    reach = np.maximum.accumulate(rights)
    starts = np.empty(lefts.size, dtype=bool)
    starts[0] = True
    starts[1:] = lefts[1:] > reach[:-1] + MERGE_GUARD
    start_idx = np.flatnonzero(starts)
    end_idx = np.concatenate([start_idx[1:] - 1, [lefts.size - 1]])
    return lefts[start_idx].copy(), reach[end_idx].copy()

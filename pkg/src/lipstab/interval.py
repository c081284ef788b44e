"""Interval arithmetic and branch-and-bound range bounding.

Intervals use plain floating point with a small outward slack applied to
every non-degenerate result. Operations between two degenerate intervals
stay degenerate, so exactly-constant expressions (a zero Jacobian entry, for
instance) come back as exact point intervals.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

SLACK = 1e-12


class IntervalError(ArithmeticError):
    """Raised when an interval operation leaves its domain."""


def _widen(lo: float, hi: float) -> tuple[float, float]:
    return lo - SLACK * (1.0 + abs(lo)), hi + SLACK * (1.0 + abs(hi))


class Interval:
    __slots__ = ("lo", "hi")

    def __init__(self, lo: float, hi: Optional[float] = None):
        if hi is None:
            hi = lo
        lo = float(lo)
        hi = float(hi)
        if not lo <= hi:
            raise ValueError(f"empty interval [{lo}, {hi}]")
        self.lo = lo
        self.hi = hi

    @staticmethod
    def _make(lo: float, hi: float, exact: bool) -> "Interval":
        if exact:
            if lo > hi:
                lo, hi = hi, lo
            return Interval(lo, hi)
        return Interval(*_widen(lo, hi))

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def degenerate(self) -> bool:
        return self.lo == self.hi

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi

    def subset_of(self, other: "Interval") -> bool:
        return other.lo <= self.lo and self.hi <= other.hi

    def __repr__(self) -> str:
        return f"Interval({self.lo!r}, {self.hi!r})"

    def __eq__(self, other) -> bool:
        other = _as_interval(other)
        return self.lo == other.lo and self.hi == other.hi

    def __hash__(self) -> int:
        return hash((self.lo, self.hi))

    # arithmetic
    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def __pos__(self) -> "Interval":
        return self

    def __add__(self, other) -> "Interval":
        other = _as_interval(other)
        exact = self.degenerate and other.degenerate
        return Interval._make(self.lo + other.lo, self.hi + other.hi, exact)

    __radd__ = __add__

    def __sub__(self, other) -> "Interval":
        other = _as_interval(other)
        exact = self.degenerate and other.degenerate
        return Interval._make(self.lo - other.hi, self.hi - other.lo, exact)

    def __rsub__(self, other) -> "Interval":
        return _as_interval(other) - self

    def __mul__(self, other) -> "Interval":
        other = _as_interval(other)
        exact = self.degenerate and other.degenerate
        if (self.degenerate and self.lo == 0.0) or (other.degenerate and other.lo == 0.0):
            return Interval(0.0)
        p = (self.lo * other.lo, self.lo * other.hi, self.hi * other.lo, self.hi * other.hi)
        return Interval._make(min(p), max(p), exact)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Interval":
        other = _as_interval(other)
        if other.lo <= 0.0 <= other.hi:
            raise IntervalError(f"division by an interval containing zero: {other!r}")
        exact = self.degenerate and other.degenerate
        q = (self.lo / other.lo, self.lo / other.hi, self.hi / other.lo, self.hi / other.hi)
        return Interval._make(min(q), max(q), exact)

    def __rtruediv__(self, other) -> "Interval":
        return _as_interval(other) / self

    def __pow__(self, k: int) -> "Interval":
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise IntervalError("only nonnegative integer powers are supported")
        k = int(k)
        if k == 0:
            return Interval(1.0)
        if k == 1:
            return self
        a, b = self.lo ** k, self.hi ** k
        if k % 2 == 1:
            lo, hi = a, b
        elif self.lo >= 0.0:
            lo, hi = a, b
        elif self.hi <= 0.0:
            lo, hi = b, a
        else:
            lo, hi = 0.0, max(a, b)
        return Interval._make(lo, hi, self.degenerate)

    def __abs__(self) -> "Interval":
        if self.lo >= 0.0:
            return self
        if self.hi <= 0.0:
            return -self
        return Interval(0.0, max(-self.lo, self.hi))


def _as_interval(value) -> Interval:
    if isinstance(value, Interval):
        return value
    return Interval(float(value))


def _monotone(fn: Callable[[float], float], x) -> Interval | float:
    if not isinstance(x, Interval):
        return fn(x)
    return Interval._make(fn(x.lo), fn(x.hi), x.degenerate)


def exp(x):
    return _monotone(math.exp, x)


def tanh(x):
    return _monotone(math.tanh, x)


def sqrt(x):
    if isinstance(x, Interval) and x.lo < 0.0:
        raise IntervalError("sqrt of an interval with negative part")
    return _monotone(math.sqrt, x)


def hull(a: Interval, b: Interval) -> Interval:
    return Interval(min(a.lo, b.lo), max(a.hi, b.hi))


class Box:
    """Axis-aligned box: one interval per coordinate."""

    __slots__ = ("intervals",)

    def __init__(self, intervals: Sequence[Interval]):
        ivs = tuple(_as_interval(iv) for iv in intervals)
        if not ivs:
            raise ValueError("a box needs at least one dimension")
        for iv in ivs:
            if not (math.isfinite(iv.lo) and math.isfinite(iv.hi)):
                raise ValueError("box bounds must be finite")
        self.intervals = ivs

    @classmethod
    def from_bounds(cls, lower, upper) -> "Box":
        return cls([Interval(lo, hi) for lo, hi in zip(lower, upper)])

    def __len__(self) -> int:
        return len(self.intervals)

    def __getitem__(self, i):
        return self.intervals[i]

    def __iter__(self):
        return iter(self.intervals)

    def __repr__(self) -> str:
        return f"Box({list(self.intervals)!r})"

    @property
    def lower(self) -> np.ndarray:
        return np.array([iv.lo for iv in self.intervals])

    @property
    def upper(self) -> np.ndarray:
        return np.array([iv.hi for iv in self.intervals])

    @property
    def center(self) -> np.ndarray:
        return np.array([iv.mid for iv in self.intervals])

    @property
    def widths(self) -> np.ndarray:
        return np.array([iv.width for iv in self.intervals])

    def bisect(self, dim: Optional[int] = None) -> tuple["Box", "Box"]:
        if dim is None:
            dim = int(np.argmax(self.widths))
        iv = self.intervals[dim]
        mid = iv.mid
        left = list(self.intervals)
        right = list(self.intervals)
        left[dim] = Interval(iv.lo, mid)
        right[dim] = Interval(mid, iv.hi)
        return Box(left), Box(right)

    def contains_box(self, other: "Box") -> bool:
        return all(o.subset_of(s) for s, o in zip(self.intervals, other.intervals))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, len(self)))


class Region(Protocol):
    """Extra constraint on a branch-and-bound domain.

    ``excludes`` must only return True when the box misses the region
    entirely. ``feasible_point`` returns some point of box-and-region, or None.
    """

    def excludes(self, box: Box) -> bool: ...

    def contains(self, point: np.ndarray) -> bool: ...

    def feasible_point(self, box: Box) -> Optional[np.ndarray]: ...


Expression = Callable[[Sequence], object]


def eval_interval(expr: Expression, box: Box) -> Interval:
    """Natural interval extension of ``expr`` over ``box``.

    ``expr`` receives the box's intervals as a sequence and must be written
    with operations that :class:`Interval` overloads.
    """
    out = expr(box.intervals)
    return _as_interval(out)


def _eval_point(expr: Expression, point: np.ndarray) -> float:
    out = expr([Interval(float(v)) for v in point])
    out = _as_interval(out)
    return out.mid


@dataclass(frozen=True)
class RangeBound:
    """Result of :func:`bound_range`.

    ``lo``/``hi`` are conservative. When ``tight`` is true each side is within
    ``tol`` of the true infimum/supremum.
    """

    lo: float
    hi: float
    tight: bool
    boxes: int

    @property
    def interval(self) -> Interval:
        return Interval(self.lo, self.hi)


def relevant_dims(expr: Expression, box: Box) -> list[int]:
    """Coordinates whose collapse to a point changes the enclosure over ``box``.

    Splitting any other coordinate cannot tighten the natural extension, so
    branch and bound skips them. The choice affects efficiency only.
    """
    base = eval_interval(expr, box)
    dims = []
    for d, iv in enumerate(box.intervals):
        if iv.degenerate:
            continue
        for v in (iv.lo, iv.mid, iv.hi):
            ivs = list(box.intervals)
            ivs[d] = Interval(v)
            if eval_interval(expr, Box(ivs)) != base:
                dims.append(d)
                break
    return dims


def _minimize(expr, box, tol, region, max_boxes, sign):
    counter = itertools.count()
    dims = relevant_dims(expr, box)

    def lower(b: Box) -> float:
        iv = eval_interval(expr, b)
        return iv.lo if sign > 0 else -iv.hi

    def point(p: np.ndarray) -> float:
        return sign * _eval_point(expr, p)

    def attained(b: Box) -> float:
        c = b.center
        if region is None or region.contains(c):
            return point(c)
        finder = getattr(region, "feasible_point", None)
        p = finder(b) if finder is not None else None
        return math.inf if p is None else point(p)

    best = attained(box)
    heap = [(lower(box), next(counter), box)]
    processed = 1
    while heap:
        lb, _, b = heap[0]
        if best - lb <= tol:
            return sign * lb, True, processed
        if processed >= max_boxes:
            return sign * min(lb, best), False, processed
        heapq.heappop(heap)
        widths = b.widths
        if not dims or float(np.max(widths[dims])) == 0.0:
            # nothing left to split; the enclosure is as tight as it gets
            best = min(best, lb)
            continue
        split = dims[int(np.argmax(widths[dims]))]
        for child in b.bisect(split):
            processed += 1
            if region is not None and region.excludes(child):
                continue
            best = min(best, attained(child))
            clb = lower(child)
            if clb < best:
                heapq.heappush(heap, (clb, next(counter), child))
    # every box pruned against an attained value
    return sign * best, True, processed


def bound_range(
    expr: Expression,
    box: Box,
    tol: float = 1e-3,
    *,
    region: Optional[Region] = None,
    max_boxes: int = 100_000,
) -> RangeBound:
    """Bracket the range of ``expr`` over ``box`` (intersected with ``region``).

    Branch and bound on the widest coordinate. The returned bounds always
    contain the true range; if the subdivision budget runs out before both
    sides are within ``tol`` the result is flagged ``tight=False``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if region is not None and region.excludes(box):
        raise ValueError("the region does not intersect the box")
    lo, tight_lo, n_lo = _minimize(expr, box, tol, region, max_boxes, +1.0)
    hi, tight_hi, n_hi = _minimize(expr, box, tol, region, max_boxes, -1.0)
    return RangeBound(lo=lo, hi=hi, tight=tight_lo and tight_hi, boxes=n_lo + n_hi)

"""Plant models, parameter boxes, safe polytopes and linearizations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

from .interval import Box, Interval


class DimensionError(ValueError):
    """Raised when array shapes do not match a model's dimensions."""


ScalarFn = Callable[..., Sequence]


@dataclass(frozen=True)
class ParamBox:
    """Axis-aligned parameter set; must contain the origin."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionError("lower and upper must be 1-d arrays of equal length")
        if np.any(lo > hi):
            raise ValueError("parameter box has lower > upper")
        if np.any(lo > 0) or np.any(hi < 0):
            raise ValueError("parameter box must contain 0")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def corners(self) -> np.ndarray:
        grids = np.meshgrid(*[(lo, hi) for lo, hi in zip(self.lower, self.upper)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def contains(self, theta, atol: float = 0.0) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower - atol) and np.all(theta <= self.upper + atol))

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        shape = (self.dim,) if size is None else (size, self.dim)
        return rng.uniform(self.lower, self.upper, size=shape)

    def intervals(self) -> list[Interval]:
        return [Interval(lo, hi) for lo, hi in zip(self.lower, self.upper)]


@dataclass(frozen=True)
class SafePolytope:
    """Bounded polytope {x | a_i^T x <= b_i} with the origin strictly inside."""

    A: np.ndarray
    b: np.ndarray
    box_lower: np.ndarray = field(init=False, repr=False)
    box_upper: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape[0] != b.size:
            raise DimensionError("A and b have inconsistent row counts")
        if np.any(np.all(A == 0, axis=1)):
            raise ValueError("polytope has an all-zero face normal")
        if np.any(b <= 0):
            raise ValueError("origin must be strictly interior (all b_i > 0)")
        n = A.shape[1]
        lower = np.empty(n)
        upper = np.empty(n)
        for k in range(n):
            c = np.zeros(n)
            c[k] = 1.0
            for sign, out in ((1.0, lower), (-1.0, upper)):
                res = linprog(sign * c, A_ub=A, b_ub=b, bounds=[(None, None)] * n, method="highs")
                if res.status != 0:
                    raise ValueError("polytope is unbounded")
                out[k] = sign * res.fun
        for arr in (A, b, lower, upper):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "box_lower", lower)
        object.__setattr__(self, "box_upper", upper)

    @classmethod
    def from_vertices(cls, vertices) -> "SafePolytope":
        """Halfspace form of the convex hull of planar or higher-dim vertices."""
        from scipy.spatial import ConvexHull

        V = np.asarray(vertices, dtype=float)
        hull = ConvexHull(V)
        eq = hull.equations
        A, b = eq[:, :-1], -eq[:, -1]
        # merge duplicated facets (triangulated faces in >2-d)
        keys = {}
        for a_i, b_i in zip(A, b):
            key = tuple(np.round(np.append(a_i, b_i) / np.linalg.norm(a_i), 12))
            keys.setdefault(key, (a_i, b_i))
        A = np.array([v[0] for v in keys.values()])
        b = np.array([v[1] for v in keys.values()])
        return cls(A, b)

    @classmethod
    def from_box(cls, lower, upper) -> "SafePolytope":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        n = lower.size
        A = np.vstack([np.eye(n), -np.eye(n)])
        return cls(A, np.concatenate([upper, -lower]))

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_faces(self) -> int:
        return self.A.shape[0]

    def scaled(self, delta: float) -> "SafePolytope":
        if delta <= 0:
            raise ValueError("scale must be positive")
        return SafePolytope(self.A, delta * self.b)

    def contains(self, x, atol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(self.A @ x <= self.b + atol))

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.box_lower.copy(), self.box_upper.copy()

    def max_inf_norm(self) -> float:
        return float(max(np.max(np.abs(self.box_lower)), np.max(np.abs(self.box_upper))))


class PolytopeRegion:
    """Restricts coordinates ``offset:offset+n`` of a box to a polytope."""

    def __init__(self, polytope: SafePolytope, offset: int = 0):
        self.polytope = polytope
        self.offset = offset

    def excludes(self, box: Box) -> bool:
        n = self.polytope.dim
        lo = box.lower[self.offset:self.offset + n]
        hi = box.upper[self.offset:self.offset + n]
        A = self.polytope.A
        # minimum of a_i^T x over the sub-box
        min_ax = np.where(A > 0, A * lo, A * hi).sum(axis=1)
        return bool(np.any(min_ax > self.polytope.b))

    def contains(self, point) -> bool:
        n = self.polytope.dim
        return self.polytope.contains(np.asarray(point)[self.offset:self.offset + n])

    def feasible_point(self, box: Box):
        """A point of the box whose polytope coordinates lie in the polytope."""
        n = self.polytope.dim
        lo = box.lower[self.offset:self.offset + n]
        hi = box.upper[self.offset:self.offset + n]
        res = linprog(np.zeros(n), A_ub=self.polytope.A, b_ub=self.polytope.b,
                      bounds=list(zip(lo, hi)), method="highs")
        if res.status != 0:
            return None
        point = box.center
        point[self.offset:self.offset + n] = res.x
        return point


@dataclass(frozen=True)
class LinearizedDynamics:
    A: np.ndarray
    B: np.ndarray

    def closed_loop(self, K) -> np.ndarray:
        return self.A + self.B @ np.asarray(K, dtype=float)


@dataclass(frozen=True)
class PlantModel:
    """Dynamics x' = f(x, u, theta) with analytic Jacobians and interval extensions.

    The scalar callables take the flattened arguments ``x_1..x_n, u_1..u_m,
    theta_1..theta_d`` and must work on floats and on
    :class:`~lipstab.interval.Interval` objects alike. ``f_scalar`` returns a
    length-n sequence; ``jx_scalar`` and ``ju_scalar`` return nested
    n-by-n and n-by-m sequences.

    ``constant_input_jacobian`` declares that J_{f,u} does not depend on
    (x, u, theta); compute_sector uses it to skip recomputation.
    """

    name: str
    n: int
    m: int
    d: int
    f_scalar: ScalarFn
    jx_scalar: ScalarFn
    ju_scalar: ScalarFn
    constant_input_jacobian: bool = False

    def _args(self, x, u, theta) -> list[float]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        u = np.atleast_1d(np.asarray(u, dtype=float))
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if x.shape != (self.n,) or u.shape != (self.m,) or theta.shape != (self.d,):
            raise DimensionError(
                f"{self.name}: expected x({self.n}), u({self.m}), theta({self.d}); "
                f"got {x.shape}, {u.shape}, {theta.shape}"
            )
        return [*x.tolist(), *u.tolist(), *theta.tolist()]

    def dynamics(self, x, u, theta) -> np.ndarray:
        return np.array(self.f_scalar(*self._args(x, u, theta)), dtype=float)

    def jacobians(self, x, u, theta) -> tuple[np.ndarray, np.ndarray]:
        args = self._args(x, u, theta)
        jx = np.array(self.jx_scalar(*args), dtype=float).reshape(self.n, self.n)
        ju = np.array(self.ju_scalar(*args), dtype=float).reshape(self.n, self.m)
        return jx, ju

    def _split(self, box: Box):
        if len(box) != self.n + self.m + self.d:
            raise DimensionError("box dimension must be n + m + d")
        return list(box.intervals)

    def dynamics_interval(self, box: Box) -> list[Interval]:
        return [Interval(v) if not isinstance(v, Interval) else v for v in self.f_scalar(*self._split(box))]

    def jacobians_interval(self, box: Box):
        args = self._split(box)
        return self.jx_scalar(*args), self.ju_scalar(*args)

    def domain_box(self, x_lower, x_upper, u_lower, u_upper, params: ParamBox) -> Box:
        return Box.from_bounds(
            np.concatenate([x_lower, u_lower, params.lower]),
            np.concatenate([x_upper, u_upper, params.upper]),
        )


def eval_dynamics(model: PlantModel, x, u, theta) -> np.ndarray:
    return model.dynamics(x, u, theta)


def eval_jacobians(model: PlantModel, x, u, theta) -> tuple[np.ndarray, np.ndarray]:
    return model.jacobians(x, u, theta)


def linearize(model: PlantModel, theta=None) -> LinearizedDynamics:
    """(A_theta, B_theta): Jacobians at the origin for parameter ``theta``."""
    if theta is None:
        theta = np.zeros(model.d)
    A, B = model.jacobians(np.zeros(model.n), np.zeros(model.m), theta)
    return LinearizedDynamics(A, B)


# built-in plants ------------------------------------------------------------


def _example_f(x1, x2, u1, u2, w1, w2):
    return [-(1 + w1) * x2 + u1, x1 + (1 + w2) * (x1 ** 2 - 1) * x2 + u2]


def _example_jx(x1, x2, u1, u2, w1, w2):
    return [[0.0, -(1 + w1)], [1 + 2 * (1 + w2) * x1 * x2, (1 + w2) * (x1 ** 2 - 1)]]


def _example_ju(x1, x2, u1, u2, w1, w2):
    return [[1.0, 0.0], [0.0, 1.0]]


EXAMPLE_VERTICES = np.array(
    [(0.3, 0.6), (0.1962, 0.8077), (-0.3375, 0.1406), (-0.3375, -0.8523), (0.3, -0.2727)]
)


def example_plant() -> PlantModel:
    """Two-state Van der Pol-like plant with two uncertain coefficients."""
    return PlantModel(
        name="example",
        n=2,
        m=2,
        d=2,
        f_scalar=_example_f,
        jx_scalar=_example_jx,
        ju_scalar=_example_ju,
        constant_input_jacobian=True,
    )


def example_params() -> ParamBox:
    return ParamBox([-0.05, -0.1], [0.05, 0.1])


def example_polytope() -> SafePolytope:
    return SafePolytope.from_vertices(EXAMPLE_VERTICES)


def affine_plant(A0, B0, A_terms=(), B_terms=(), name: str = "affine") -> PlantModel:
    """Linear plant x' = (A0 + sum_k theta_k A_k) x + (B0 + sum_k theta_k B_k) u."""
    A0 = np.atleast_2d(np.asarray(A0, dtype=float))
    B0 = np.atleast_2d(np.asarray(B0, dtype=float))
    n, m = B0.shape
    A_terms = [np.atleast_2d(np.asarray(a, dtype=float)) for a in A_terms]
    B_terms = [np.atleast_2d(np.asarray(b, dtype=float)) for b in B_terms]
    d = max(len(A_terms), len(B_terms), 1)
    A_terms += [np.zeros((n, n))] * (d - len(A_terms))
    B_terms += [np.zeros((n, m))] * (d - len(B_terms))

    def mats(th):
        A = [[A0[i, j] + sum(th[k] * A_terms[k][i, j] for k in range(d) if A_terms[k][i, j] != 0)
              for j in range(n)] for i in range(n)]
        B = [[B0[i, j] + sum(th[k] * B_terms[k][i, j] for k in range(d) if B_terms[k][i, j] != 0)
              for j in range(m)] for i in range(n)]
        return A, B

    def f(*args):
        x, u, th = args[:n], args[n:n + m], args[n + m:]
        A, B = mats(th)
        return [sum((A[i][j] * x[j] for j in range(n)), 0.0) + sum((B[i][j] * u[j] for j in range(m)), 0.0)
                for i in range(n)]

    def jx(*args):
        return mats(args[n + m:])[0]

    def ju(*args):
        return mats(args[n + m:])[1]

    constant_b = all(np.all(b == 0) for b in B_terms)
    return PlantModel(name=name, n=n, m=m, d=d, f_scalar=f, jx_scalar=jx, ju_scalar=ju,
                      constant_input_jacobian=constant_b)


BUILTIN_PLANTS = {"example": example_plant}

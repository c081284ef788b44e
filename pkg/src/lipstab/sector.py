"""Nonlinearity-plus-parameter-variation (NPV) sector bounds and uncertainty vertices.

For a nominal gain ``K`` the closed loop ``x' = f(x, K x + u_rho, theta)`` is
split as ``A0K x + B0 u_rho + zeta_K(x, u_rho, theta)`` with
``A0K = A0 + B0 K``. The sector bounds every Jacobian entry of ``zeta_K``
elementwise over the safe set, a box of admissible perturbation inputs and the
parameter box.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .interval import Box, Interval, bound_range
from .model import LinearizedDynamics, ParamBox, PlantModel, PolytopeRegion, SafePolytope, linearize

DEFAULT_TOL = 1e-3
MAX_DEPENDENT_ENTRIES = 20
MAX_CORNER_DIM = 10


class VertexExplosionError(ValueError):
    """Too many parameter-dependent entries to enumerate vertices."""


@dataclass(frozen=True)
class ControlBox:
    """Box ``|u_i| <= u_max[i]`` containing every admissible perturbation input."""

    u_max: np.ndarray

    @classmethod
    def for_budget(cls, L: float, polytope: SafePolytope, m: int) -> "ControlBox":
        if L < 0:
            raise ValueError("Lipschitz budget must be nonnegative")
        return cls(np.full(m, L * polytope.max_inf_norm()))

    def contains(self, u, atol: float = 0.0) -> bool:
        return bool(np.all(np.abs(np.asarray(u)) <= self.u_max + atol))


@dataclass(frozen=True)
class SectorBound:
    """Elementwise bounds ``lower <= J_zeta <= upper`` (n x (n+m)).

    Columns ``0..n-1`` bound the state Jacobian of the NPV, columns
    ``n..n+m-1`` its deviation from the nominal input matrix.
    """

    lower: np.ndarray
    upper: np.ndarray
    K: Optional[np.ndarray] = None
    L: float = 0.0
    tol: float = DEFAULT_TOL
    tight: Optional[np.ndarray] = None
    control_box: Optional[ControlBox] = field(default=None, repr=False)

    def __post_init__(self):
        lo = np.atleast_2d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_2d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("lower and upper must have the same shape")
        if np.any(lo > hi):
            raise ValueError("sector has lower > upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    @property
    def m(self) -> int:
        return self.lower.shape[1] - self.lower.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def radius(self) -> np.ndarray:
        """Entrywise ``max(|lower|, |upper|)``."""
        return np.maximum(np.abs(self.lower), np.abs(self.upper))

    @property
    def zero_mask(self) -> np.ndarray:
        """Entries pinned to exactly zero."""
        return (self.lower == 0.0) & (self.upper == 0.0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "col", "lo", "hi"])
        for i in range(self.n):
            for j in range(self.n + self.m):
                w.writerow([i + 1, j + 1, repr(float(self.lower[i, j])), repr(float(self.upper[i, j]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SectorBound":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise ValueError("empty sector CSV")
        n = max(int(r["row"]) for r in rows)
        cols = max(int(r["col"]) for r in rows)
        lo = np.zeros((n, cols))
        hi = np.zeros((n, cols))
        for r in rows:
            i, j = int(r["row"]) - 1, int(r["col"]) - 1
            lo[i, j] = float(r["lo"])
            hi[i, j] = float(r["hi"])
        return cls(lo, hi)

    def widened(self, factor: float) -> "SectorBound":
        """Same center, interval widths multiplied by ``factor``."""
        half = 0.5 * (self.upper - self.lower) * factor
        return SectorBound(self.center - half, self.center + half, self.K, self.L, self.tol)


def _nominal(model: PlantModel, nominal: Optional[LinearizedDynamics]) -> LinearizedDynamics:
    return linearize(model) if nominal is None else nominal


def npv(model: PlantModel, K, x, u_rho, theta, nominal: Optional[LinearizedDynamics] = None) -> np.ndarray:
    """``zeta_K(x, u_rho, theta) = f(x, K x + u_rho, theta) - A0K x - B0 u_rho``."""
    nom = _nominal(model, nominal)
    K = np.asarray(K, dtype=float)
    x = np.asarray(x, dtype=float)
    u_rho = np.asarray(u_rho, dtype=float)
    f = model.dynamics(x, K @ x + u_rho, theta)
    return f - nom.closed_loop(K) @ x - nom.B @ u_rho


def npv_jacobian(model: PlantModel, K, x, u_rho, theta, nominal=None) -> np.ndarray:
    """Full n x (n+m) NPV Jacobian: ``[J_fx + (J_fu - B0) K - A0, J_fu - B0]``."""
    nom = _nominal(model, nominal)
    K = np.asarray(K, dtype=float)
    x = np.asarray(x, dtype=float)
    jx, ju = model.jacobians(x, K @ x + np.asarray(u_rho, dtype=float), theta)
    du = ju - nom.B
    return np.hstack([(jx - nom.A) + du @ K, du])


def npv_jacobian_entry(model: PlantModel, K, block: str, i: int, j: int, x, u_rho, theta,
                       nominal=None) -> float:
    """One entry of the x-block (``block='x'``) or u-block (``'u'``) of the NPV Jacobian."""
    n, m = model.n, model.m
    limit = {"x": n, "u": m}.get(block)
    if limit is None:
        raise ValueError("block must be 'x' or 'u'")
    if not (0 <= i < n and 0 <= j < limit):
        raise IndexError(f"entry ({i}, {j}) out of range for the {block}-block")
    jac = npv_jacobian(model, K, x, u_rho, theta, nominal)
    return float(jac[i, j if block == "x" else n + j])


def _entry_expression(model: PlantModel, K: np.ndarray, nom: LinearizedDynamics, i: int, j: int):
    """Interval-extension evaluator of NPV Jacobian entry (i, j) over (x, u_rho, theta)."""
    n, m = model.n, model.m
    A0 = nom.A
    B0 = nom.B

    def expr(ivs):
        x = ivs[:n]
        ur = ivs[n:n + m]
        th = ivs[n + m:]
        u = [sum((K[l, c] * x[c] for c in range(n) if K[l, c] != 0.0), ur[l]) for l in range(m)]
        jx, ju = model.jx_scalar(*x, *u, *th), model.ju_scalar(*x, *u, *th)
        if j < n:
            out = jx[i][j] - A0[i, j]
            for l in range(m):
                dev = ju[i][l] - B0[i, l]
                if K[l, j] != 0.0:
                    out = out + dev * K[l, j]
            return out
        return ju[i][j - n] - B0[i, j - n]

    return expr


def compute_sector(
    model: PlantModel,
    K,
    L: float,
    polytope: SafePolytope,
    params: ParamBox,
    tol: float = DEFAULT_TOL,
    *,
    nominal: Optional[LinearizedDynamics] = None,
    max_boxes: int = 100_000,
) -> SectorBound:
    """Bound each NPV Jacobian entry over ``polytope x ControlBox x params``.

    Parameters
    ----------
    K : (m, n) array
        Nominal gain.
    L : float
        Lipschitz budget of the perturbation controller; sets the control box.
    polytope : SafePolytope
        State domain, already scaled to the current level.
    tol : float
        Per-side accuracy of each bound.

    Returns
    -------
    SectorBound
        ``tight[i, j]`` is False where the subdivision budget ran out; those
        entries are still sound but may be loose.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n, m = model.n, model.m
    K = np.asarray(K, dtype=float).reshape(m, n)
    if polytope.dim != n or params.dim != model.d:
        raise ValueError("polytope or parameter box dimension does not match the model")
    nom = _nominal(model, nominal)
    cbox = ControlBox.for_budget(L, polytope, m)
    box = model.domain_box(polytope.box_lower, polytope.box_upper, -cbox.u_max, cbox.u_max, params)
    region = PolytopeRegion(polytope, offset=0)
    lower = np.zeros((n, n + m))
    upper = np.zeros((n, n + m))
    tight = np.ones((n, n + m), dtype=bool)
    for i in range(n):
        for j in range(n + m):
            res = bound_range(_entry_expression(model, K, nom, i, j), box, tol,
                              region=region, max_boxes=max_boxes)
            lower[i, j], upper[i, j], tight[i, j] = res.lo, res.hi, res.tight
    return SectorBound(lower, upper, K=K, L=float(L), tol=tol, tight=tight, control_box=cbox)


# uncertainty vertices ---------------------------------------------------------


@dataclass(frozen=True)
class UncertaintyVertices:
    """Vertices ``(A_v, B_v)`` whose convex hull contains every ``(A_theta, B_theta)``."""

    A: tuple
    B: tuple
    dependent: tuple  # flat indices into vec([A B]) that vary with theta

    def __len__(self) -> int:
        return len(self.A)

    def contains(self, A, B, atol: float = 1e-9) -> bool:
        """LP test: is ``(A, B)`` a convex combination of the vertices?"""
        target = np.concatenate([np.ravel(A), np.ravel(B)])
        V = np.array([np.concatenate([a.ravel(), b.ravel()]) for a, b in zip(self.A, self.B)]).T
        k = V.shape[1]
        A_eq = np.vstack([V, np.ones((1, k))])
        b_eq = np.concatenate([target, [1.0]])
        # minimize the residual l1 norm via slack variables
        A_full = np.hstack([A_eq, -np.eye(A_eq.shape[0]), np.eye(A_eq.shape[0])])
        cost = np.concatenate([np.zeros(k), np.ones(2 * A_eq.shape[0])])
        res = linprog(cost, A_eq=A_full, b_eq=b_eq, bounds=[(0, None)] * A_full.shape[1], method="highs")
        return bool(res.status == 0 and res.fun <= atol)


def uncertainty_vertices(model: PlantModel, params: ParamBox, tol: float = DEFAULT_TOL) -> UncertaintyVertices:
    """Box-vertex enumeration of the parameter-dependent entries of (A_theta, B_theta).

    Dependence is detected numerically by comparing the linearization at the
    center, the axis endpoints and (for up to ``MAX_CORNER_DIM`` parameters)
    the corners of the parameter box. Each dependent entry is bounded
    over the box by branch and bound; vertices take every lower/upper pattern.
    """
    n, m, d = model.n, model.m, model.d
    samples = [params.center]
    for k in range(d):
        for end in (params.lower, params.upper):
            theta = params.center.copy()
            theta[k] = end[k]
            samples.append(theta)
    if d <= MAX_CORNER_DIM:
        samples.extend(params.corners())
    flats = np.array([np.concatenate([lin.A.ravel(), lin.B.ravel()])
                      for lin in (linearize(model, th) for th in samples)])
    dependent = np.flatnonzero(np.ptp(flats, axis=0) > 1e-12)
    if dependent.size > MAX_DEPENDENT_ENTRIES:
        raise VertexExplosionError(
            f"{dependent.size} parameter-dependent entries would give 2^{dependent.size} vertices "
            f"(limit {MAX_DEPENDENT_ENTRIES})"
        )
    base = linearize(model)
    base_flat = np.concatenate([base.A.ravel(), base.B.ravel()])
    origin = [Interval(0.0)] * (n + m)
    box = Box([*origin, *params.intervals()])
    bounds = []
    for idx in dependent:
        if idx < n * n:
            r, c = divmod(int(idx), n)
            expr = lambda ivs, r=r, c=c: model.jx_scalar(*ivs)[r][c]
        else:
            r, c = divmod(int(idx) - n * n, m)
            expr = lambda ivs, r=r, c=c: model.ju_scalar(*ivs)[r][c]
        res = bound_range(expr, box, tol)
        bounds.append((res.lo, res.hi))
    As, Bs = [], []
    for pattern in itertools.product((0, 1), repeat=dependent.size):
        flat = base_flat.copy()
        for idx, side, (lo, hi) in zip(dependent, pattern, bounds):
            flat[idx] = hi if side else lo
        As.append(flat[: n * n].reshape(n, n))
        Bs.append(flat[n * n:].reshape(n, m))
    return UncertaintyVertices(tuple(As), tuple(Bs), tuple(int(i) for i in dependent))

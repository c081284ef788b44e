"""Small dense semidefinite programming layer.

Problems are assembled from :class:`Affine` matrix expressions over a flat
vector of scalar decision variables, then solved by a primal log-barrier
interior-point method (phase I by a uniform slack, phase II by damped Newton
centering along the central path). Every returned point is re-checked with an
eigenvalue test that does not depend on the solver's internal state.

An optional ``cvxopt`` backend solves the same linear-objective problems and
exists mainly for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky, solve_triangular

RECHECK_TOL = 1e-7


class Affine:
    """Matrix-valued affine function ``const + sum_k z_k * terms[k]``."""

    __array_ufunc__ = None  # make ndarray (op) Affine defer to the reflected method

    def __init__(self, const, terms: Optional[dict] = None):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.terms = {} if terms is None else terms

    @property
    def shape(self) -> tuple[int, int]:
        return self.const.shape

    @property
    def T(self) -> "Affine":
        return Affine(self.const.T, {k: v.T for k, v in self.terms.items()})

    def value(self, z: np.ndarray) -> np.ndarray:
        out = self.const.copy()
        for k, coef in self.terms.items():
            out += z[k] * coef
        return out

    def _combine(self, other, sign: float) -> "Affine":
        other = as_affine(other)
        if other.shape != self.shape:
            if self.shape == (1, 1) or other.shape == (1, 1):
                raise ValueError("scalar/matrix addition is ambiguous; multiply by a matrix first")
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        terms = dict(self.terms)
        for k, v in other.terms.items():
            terms[k] = terms[k] + sign * v if k in terms else sign * v
        return Affine(self.const + sign * other.const, terms)

    def __add__(self, other):
        return self._combine(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __rsub__(self, other):
        return as_affine(other)._combine(self, -1.0)

    def __neg__(self):
        return self * -1.0

    def __mul__(self, other):
        if np.isscalar(other):
            return Affine(self.const * other, {k: v * other for k, v in self.terms.items()})
        other = np.asarray(other, dtype=float)
        if self.shape != (1, 1):
            raise ValueError("elementwise products are only supported for 1x1 expressions")
        other = np.atleast_2d(other)
        return Affine(self.const[0, 0] * other, {k: v[0, 0] * other for k, v in self.terms.items()})

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, Affine):
            raise TypeError("product of two affine expressions is not affine")
        other = np.atleast_2d(np.asarray(other, dtype=float))
        return Affine(self.const @ other, {k: v @ other for k, v in self.terms.items()})

    def __rmatmul__(self, other):
        other = np.atleast_2d(np.asarray(other, dtype=float))
        return Affine(other @ self.const, {k: other @ v for k, v in self.terms.items()})

    def __getitem__(self, idx):
        sub = self.const[idx]
        wrap = lambda a: np.atleast_2d(a) if np.ndim(a) < 2 else a
        return Affine(wrap(sub), {k: wrap(v[idx]) for k, v in self.terms.items()})

    def __repr__(self) -> str:
        return f"Affine(shape={self.shape}, nvars={len(self.terms)})"


def as_affine(x) -> Affine:
    return x if isinstance(x, Affine) else Affine(x)


def bmat(blocks: Sequence[Sequence]) -> Affine:
    """Block matrix from a nested list of Affine / ndarray blocks."""
    rows = [[as_affine(b) for b in row] for row in blocks]
    heights = [row[0].shape[0] for row in rows]
    widths = [b.shape[1] for b in rows[0]]
    for r, row in enumerate(rows):
        if len(row) != len(widths):
            raise ValueError("ragged block matrix")
        for c, b in enumerate(row):
            if b.shape != (heights[r], widths[c]):
                raise ValueError(f"block ({r},{c}) has shape {b.shape}, expected {(heights[r], widths[c])}")
    roff = np.concatenate([[0], np.cumsum(heights)])
    coff = np.concatenate([[0], np.cumsum(widths)])
    const = np.zeros((roff[-1], coff[-1]))
    terms: dict[int, np.ndarray] = {}
    for r, row in enumerate(rows):
        for c, b in enumerate(row):
            sl = (slice(roff[r], roff[r + 1]), slice(coff[c], coff[c + 1]))
            const[sl] = b.const
            for k, v in b.terms.items():
                if k not in terms:
                    terms[k] = np.zeros_like(const)
                terms[k][sl] += v
    return Affine(const, terms)


def diag(entries: Iterable) -> Affine:
    """Diagonal matrix whose entries are scalars or 1x1 affine expressions."""
    entries = [as_affine(e) for e in entries]
    n = len(entries)
    const = np.zeros((n, n))
    terms: dict[int, np.ndarray] = {}
    for i, e in enumerate(entries):
        if e.shape != (1, 1):
            raise ValueError("diag entries must be scalar")
        const[i, i] = e.const[0, 0]
        for k, v in e.terms.items():
            terms.setdefault(k, np.zeros((n, n)))[i, i] += v[0, 0]
    return Affine(const, terms)


def hstack(items) -> Affine:
    return bmat([list(items)])


def vstack(items) -> Affine:
    return bmat([[it] for it in items])


class Status(str, Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max-iterations"


@dataclass
class SdpSolution:
    status: Status
    values: dict[str, np.ndarray]
    z: Optional[np.ndarray]
    objective: float
    margin: float
    iterations: int
    logdet_history: list[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status in (Status.OPTIMAL, Status.FEASIBLE)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]


@dataclass
class _Lmi:
    expr: Affine
    margin: float
    name: str


class SdpProblem:
    """Container for variables, matrix inequalities and an objective.

    Examples
    --------
    >>> prob = SdpProblem()
    >>> p = prob.variable("p")
    >>> prob.lmi(p, ">>", 1e-6)
    >>> prob.lmi(-2.0 * p, "<<", 1e-6)
    >>> prob.solve().ok
    True
    """

    def __init__(self, box_bound: float = 1e6):
        self.nvars = 0
        self._vars: dict[str, tuple[np.ndarray, tuple[int, ...]]] = {}
        self._lmis: list[_Lmi] = []
        self._lin_rows: list[tuple[int, float]] = []  # z_k >= bound
        self.objective: Optional[Affine] = None
        self.logdet: Optional[Affine] = None
        self.box_bound = box_bound

    # variables ------------------------------------------------------------
    def variable(self, name: str, shape=(), *, symmetric: bool = False, nonneg: bool = False) -> Affine:
        """Register a decision variable; returns it as an Affine matrix (1x1 for scalars)."""
        if name in self._vars:
            raise ValueError(f"duplicate variable {name!r}")
        shape = tuple(np.atleast_1d(shape)) if shape != () else ()
        if len(shape) > 2:
            raise ValueError("variables are scalars, vectors or matrices")
        rows, cols = {0: (1, 1), 1: (shape[0], 1) if shape else (1, 1), 2: shape[:2]}[len(shape)]
        if symmetric and rows != cols:
            raise ValueError("symmetric variable must be square")
        index = np.full((rows, cols), -1, dtype=int)
        for r in range(rows):
            for c in range(cols):
                if symmetric and c < r:
                    index[r, c] = index[c, r]
                else:
                    index[r, c] = self.nvars
                    self.nvars += 1
        terms: dict[int, np.ndarray] = {}
        for r in range(rows):
            for c in range(cols):
                k = index[r, c]
                terms.setdefault(k, np.zeros((rows, cols)))[r, c] = 1.0
        self._vars[name] = (index, shape)
        if nonneg:
            for k in np.unique(index):
                self._lin_rows.append((int(k), 0.0))
        return Affine(np.zeros((rows, cols)), terms)

    def nonneg(self, expr: Affine) -> None:
        """Require every variable entry of a variable expression to be >= 0."""
        for k in expr.terms:
            self._lin_rows.append((int(k), 0.0))

    # constraints ----------------------------------------------------------
    def lmi(self, expr, sense: str, margin: float = 0.0, name: str = "") -> None:
        """Add ``expr >> margin*I`` (sense ``'>>'``) or ``expr << -margin*I`` (``'<<'``)."""
        expr = as_affine(expr)
        if expr.shape[0] != expr.shape[1]:
            raise ValueError("matrix inequality needs a square expression")
        scale = max(1.0, np.max(np.abs(expr.const)))
        for mat in [expr.const, *expr.terms.values()]:
            if np.max(np.abs(mat - mat.T), initial=0.0) > 1e-10 * scale:
                raise ValueError(f"matrix inequality {name!r} is not symmetric")
        if sense == "<<":
            expr = -expr
        elif sense != ">>":
            raise ValueError("sense must be '>>' or '<<'")
        sym = Affine(0.5 * (expr.const + expr.const.T), {k: 0.5 * (v + v.T) for k, v in expr.terms.items()})
        self._lmis.append(_Lmi(sym, float(margin), name or f"lmi{len(self._lmis)}"))

    def minimize(self, expr) -> None:
        expr = as_affine(expr)
        if expr.shape != (1, 1):
            raise ValueError("objective must be scalar")
        self.objective = expr
        self.logdet = None

    def maximize_logdet(self, expr: Affine) -> None:
        """Objective: maximize ln det(expr); expr must be symmetric affine."""
        self.lmi(expr, ">>", 0.0, name="logdet-domain")
        self.logdet = self._lmis[-1].expr
        self.objective = None

    def spectral_norm_bound(self, expr: Affine, name: str) -> Affine:
        """Epigraph variable ``t`` with ``||expr||_2 <= t`` via [[tI, M^T],[M, tI]] >> 0."""
        expr = as_affine(expr)
        r, c = expr.shape
        t = self.variable(name)
        block = bmat([[t * np.eye(c), expr.T], [expr, t * np.eye(r)]])
        self.lmi(block, ">>", 0.0, name=f"{name}-epigraph")
        return t

    # solving --------------------------------------------------------------
    def pack(self, values: dict) -> np.ndarray:
        """Flat variable vector from named values; missing names default to 0."""
        z = np.zeros(self.nvars)
        for name, value in values.items():
            index, shape = self._vars[name]
            z[index.ravel()] = np.broadcast_to(np.asarray(value, dtype=float), index.shape).ravel()
        return z

    def unpack(self, z: np.ndarray) -> dict[str, np.ndarray]:
        out = {}
        for name, (index, shape) in self._vars.items():
            out[name] = z[index].reshape(shape) if shape else np.array(z[index[0, 0]])
        return out

    def constraint_margin(self, z: np.ndarray) -> float:
        """Smallest slack over all constraints, measured by eigenvalues."""
        worst = np.inf
        for lmi in self._lmis:
            mat = lmi.expr.value(z)
            worst = min(worst, float(np.linalg.eigvalsh(0.5 * (mat + mat.T))[0]) - lmi.margin)
        for k, bound in self._lin_rows:
            worst = min(worst, float(z[k] - bound))
        return worst

    def solve(self, backend: str = "barrier", **options) -> SdpSolution:
        if backend == "barrier":
            return BarrierSolver(**options).solve(self)
        if backend == "cvxopt":
            return _solve_cvxopt(self, **options)
        raise ValueError(f"unknown backend {backend!r}")


def solve(problem: SdpProblem, **options) -> SdpSolution:
    return problem.solve(**options)


def logdet_maximize(problem: SdpProblem, **options) -> SdpSolution:
    if problem.logdet is None:
        raise ValueError("problem has no log-det objective")
    return problem.solve(**options)


# barrier method ---------------------------------------------------------------


class _Block:
    """One matrix barrier term ``-weight * ln det(G0 + sum z_k G_k)``."""

    def __init__(self, expr: Affine, shift: float, nvars: int, slack_index: Optional[int] = None):
        p = expr.shape[0]
        self.p = p
        self.const = expr.const - shift * np.eye(p)
        idx = sorted(expr.terms)
        mats = [expr.terms[k] for k in idx]
        if slack_index is not None:
            idx.append(slack_index)
            mats.append(np.eye(p))
        self.idx = np.array(idx, dtype=int)
        self.mats = np.array(mats).reshape(len(idx), p, p)

    def matrix(self, z: np.ndarray) -> np.ndarray:
        if self.idx.size == 0:
            return self.const
        return self.const + np.tensordot(z[self.idx], self.mats, axes=1)

    def derivatives(self, z: np.ndarray):
        """Value, gradient and Hessian of -ln det, or None outside the domain."""
        try:
            chol = cholesky(self.matrix(z), lower=True)
        except LinAlgError:
            return None
        val = -2.0 * float(np.sum(np.log(np.diag(chol))))
        k = self.idx.size
        if k == 0:
            return val, self.idx, np.zeros(0), np.zeros((0, 0))
        p = self.p
        stacked = self.mats.transpose(1, 0, 2).reshape(p, k * p)
        left = solve_triangular(chol, stacked, lower=True).reshape(p, k, p).transpose(1, 0, 2)
        flipped = left.transpose(0, 2, 1).transpose(1, 0, 2).reshape(p, k * p)
        scaled = solve_triangular(chol, flipped, lower=True).reshape(p, k, p).transpose(1, 0, 2)
        flat = scaled.reshape(k, p * p)
        grad = -np.trace(scaled, axis1=1, axis2=2)
        hess = flat @ flat.T
        return val, self.idx, grad, hess


class BarrierSolver:
    """Primal log-barrier interior-point method for small dense SDPs.

    Parameters
    ----------
    gap_tol : float
        Target bound ``nu / t`` on the duality gap.
    mu : float
        Barrier parameter growth factor per outer iteration.
    max_newton : int
        Total Newton step budget across both phases.
    """

    def __init__(self, gap_tol: float = 1e-8, mu: float = 20.0, max_newton: int = 3000,
                 newton_tol: float = 1e-10, start: Optional[np.ndarray] = None):
        self.gap_tol = gap_tol
        self.mu = mu
        self.max_newton = max_newton
        self.newton_tol = newton_tol
        self.start = start
        self.newton_steps = 0

    # generic damped Newton centering of t*obj(z) + barrier(z)
    def _center(self, z, t, blocks, obj_lin, obj_block, lin, box, stop=None):
        n = z.size
        lin_idx, lin_lo = lin

        def evaluate(zz, need_derivs=True):
            total = t * float(obj_lin @ zz) if obj_lin is not None else 0.0
            grad = t * obj_lin.copy() if obj_lin is not None else np.zeros(n)
            hess = np.zeros((n, n))
            items = [(b, 1.0) for b in blocks]
            if obj_block is not None:
                items.append((obj_block, t))
            for blk, weight in items:
                out = blk.derivatives(zz) if need_derivs else None
                if need_derivs:
                    if out is None:
                        return None
                    val, idx, g, h = out
                    total += weight * val
                    grad[idx] += weight * g
                    hess[np.ix_(idx, idx)] += weight * h
                else:
                    try:
                        chol = cholesky(blk.matrix(zz), lower=True)
                    except LinAlgError:
                        return None
                    total += weight * -2.0 * float(np.sum(np.log(np.diag(chol))))
            s = zz[lin_idx] - lin_lo
            if np.any(s <= 0):
                return None
            up = box - zz
            dn = box + zz
            if np.any(up <= 0) or np.any(dn <= 0):
                return None
            total -= float(np.sum(np.log(s)) + np.sum(np.log(up)) + np.sum(np.log(dn)))
            if need_derivs:
                np.add.at(grad, lin_idx, -1.0 / s)
                grad += 1.0 / up - 1.0 / dn
                np.add.at(hess, (lin_idx, lin_idx), 1.0 / s ** 2)
                hess[np.diag_indices(n)] += 1.0 / up ** 2 + 1.0 / dn ** 2
            return total, grad, hess

        cur = evaluate(z)
        while True:
            if stop is not None and stop(z):
                return z, True
            if self.newton_steps >= self.max_newton:
                return z, False
            val, grad, hess = cur
            scale = np.sqrt(np.maximum(np.diag(hess), 1e-300))
            hs = hess / np.outer(scale, scale)
            try:
                step = -cho_solve(cho_factor(hs), grad / scale) / scale
            except LinAlgError:
                step = -np.linalg.lstsq(hs, grad / scale, rcond=None)[0] / scale
            decrement = float(-grad @ step)
            self.newton_steps += 1
            if decrement / 2.0 <= self.newton_tol:
                return z, True
            alpha = 1.0
            while alpha > 1e-14:
                cand = z + alpha * step
                trial = evaluate(cand, need_derivs=False)
                if trial is not None and trial[0] <= val - 0.01 * alpha * decrement:
                    break
                alpha *= 0.5
            else:
                return z, True  # no progress possible at this precision
            z = cand
            cur = evaluate(z)
            if val - cur[0] <= 1e-13 * max(1.0, abs(val)):
                return z, True  # centered to working precision

    def _phase_one(self, prob: SdpProblem, z0: np.ndarray):
        """Find z with every constraint strictly satisfied, or prove none exists."""
        n = prob.nvars
        margins = []
        for lmi in prob._lmis:
            mat = lmi.expr.value(z0) - lmi.margin * np.eye(lmi.expr.shape[0])
            margins.append(np.linalg.eigvalsh(mat)[0])
        for k, bound in prob._lin_rows:
            margins.append(z0[k] - bound)
        if not margins or min(margins) > 0:
            return z0, True
        s0 = max(0.0, -min(margins)) + 1.0
        si = n
        blocks = [_Block(l.expr, l.margin, n + 1, slack_index=si) for l in prob._lmis]
        for k, bound in prob._lin_rows:
            blocks.append(_Block(Affine(np.zeros((1, 1)), {k: np.ones((1, 1))}), bound, n + 1, slack_index=si))
        # s >= -1 keeps phase I bounded
        blocks.append(_Block(Affine(np.ones((1, 1)), {si: np.ones((1, 1))}), 0.0, n + 1))
        obj = np.zeros(n + 1)
        obj[si] = 1.0
        box = np.full(n + 1, prob.box_bound)
        box[si] = max(prob.box_bound, 10 * s0)
        z = np.append(z0, s0)
        nu = sum(b.p for b in blocks) + 2 * (n + 1)
        lin = (np.zeros(0, dtype=int), np.zeros(0))
        t = 1.0
        done = lambda zz: zz[si] < 0
        while True:
            z, ok = self._center(z, t, blocks, obj, None, lin, box, stop=done)
            if z[si] < 0:
                return z[:n], True
            if not ok:
                return z[:n], None
            if z[si] - nu / t > 0:
                return z[:n], False
            if nu / t < self.gap_tol:
                return z[:n], bool(z[si] < 0)
            t *= self.mu

    def solve(self, prob: SdpProblem) -> SdpSolution:
        self.newton_steps = 0
        n = prob.nvars
        z0 = np.zeros(n) if self.start is None else np.asarray(self.start, dtype=float).copy()
        z0 = np.clip(z0, -0.5 * prob.box_bound, 0.5 * prob.box_bound)
        for k, bound in prob._lin_rows:
            z0[k] = max(z0[k], bound + 1e-3)
        pure_feasibility = prob.objective is None and prob.logdet is None
        z, feasible = self._phase_one(prob, z0)
        if feasible is None:
            return self._finish(prob, z, Status.MAX_ITERATIONS, [])
        if not feasible:
            return SdpSolution(Status.INFEASIBLE, {}, None, np.nan, prob.constraint_margin(z),
                               self.newton_steps)
        obj_block = None
        blocks = []
        for lmi in prob._lmis:
            blk = _Block(lmi.expr, lmi.margin, n)
            if prob.logdet is not None and lmi.expr is prob.logdet:
                obj_block = blk
            else:
                blocks.append(blk)
        lin_idx = np.array([k for k, _ in prob._lin_rows], dtype=int)
        lin_lo = np.array([b for _, b in prob._lin_rows], dtype=float)
        box = np.full(n, prob.box_bound)
        obj_lin = None
        if prob.objective is not None:
            obj_lin = np.zeros(n)
            for k, v in prob.objective.terms.items():
                obj_lin[k] = v[0, 0]
        elif pure_feasibility:
            return self._finish(prob, z, Status.FEASIBLE, [])
        nu = sum(b.p for b in blocks) + lin_idx.size + 2 * n
        if obj_block is not None:
            nu += obj_block.p
        history: list[float] = []
        t = 1.0
        while True:
            z, ok = self._center(z, t, blocks, obj_lin, obj_block, (lin_idx, lin_lo), box)
            if obj_block is not None:
                history.append(-obj_block.derivatives(z)[0])
            if not ok:
                return self._finish(prob, z, Status.MAX_ITERATIONS, history)
            if nu / t < self.gap_tol:
                return self._finish(prob, z, Status.OPTIMAL, history)
            t *= self.mu

    def _finish(self, prob, z, status, history) -> SdpSolution:
        margin = prob.constraint_margin(z)
        if status in (Status.OPTIMAL, Status.FEASIBLE) and margin < -RECHECK_TOL:
            status = Status.MAX_ITERATIONS
        if prob.objective is not None:
            objective = float(prob.objective.value(z)[0, 0])
        elif prob.logdet is not None:
            objective = float(np.linalg.slogdet(prob.logdet.value(z))[1])
        else:
            objective = 0.0
        return SdpSolution(status, prob.unpack(z), z, objective, margin, self.newton_steps, history)


# cvxopt backend ---------------------------------------------------------------


def _solve_cvxopt(prob: SdpProblem, **options) -> SdpSolution:
    """Solve a linear-objective or feasibility problem with cvxopt.solvers.sdp."""
    if prob.logdet is not None:
        raise ValueError("the cvxopt backend handles linear objectives only")
    from cvxopt import matrix, solvers

    n = prob.nvars
    c = np.zeros(n)
    if prob.objective is not None:
        for k, v in prob.objective.terms.items():
            c[k] = v[0, 0]
    Gs, hs = [], []
    for lmi in prob._lmis:
        p = lmi.expr.shape[0]
        G = np.zeros((p * p, n))
        for k, v in lmi.expr.terms.items():
            G[:, k] = -v.ravel(order="F")
        Gs.append(matrix(G))
        hs.append(matrix(lmi.expr.const - lmi.margin * np.eye(p)))
    rows = [(k, b) for k, b in prob._lin_rows]
    Gl = np.zeros((len(rows) + 2 * n, n))
    hl = np.zeros(len(rows) + 2 * n)
    for r, (k, b) in enumerate(rows):
        Gl[r, k] = -1.0
        hl[r] = -b
    Gl[len(rows):len(rows) + n] = np.eye(n)
    Gl[len(rows) + n:] = -np.eye(n)
    hl[len(rows):] = prob.box_bound
    solvers.options["show_progress"] = False
    solvers.options.update(options)
    res = solvers.sdp(matrix(c), Gl=matrix(Gl), hl=matrix(hl), Gs=Gs, hs=hs)
    if res["status"] == "primal infeasible":
        return SdpSolution(Status.INFEASIBLE, {}, None, np.nan, np.nan, int(res["iterations"]))
    z = np.array(res["x"]).ravel()
    margin = prob.constraint_margin(z)
    status = Status.OPTIMAL if res["status"] == "optimal" else Status.MAX_ITERATIONS
    if margin < -RECHECK_TOL:
        status = Status.MAX_ITERATIONS
    return SdpSolution(status, prob.unpack(z), z, float(c @ z), margin, int(res["iterations"]))

"""Quadratic-constraint matrices, the stability LMI and certificate checks.

The LMI acts on the stacked vector ``[x; chi; xi]`` where

* ``chi`` (length m*n) splits the perturbation input as ``u_rho = Q chi``,
  entry ``(i, j)`` (input i, state j) at position ``i*n + j``;
* ``xi`` (length n*(n+m)) splits the NPV as ``zeta = R xi``, entry ``(i, j)``
  of the sector at position ``i*(n+m) + j``.

Multipliers ``gamma`` (m x n) and ``Lambda`` (n x (n+m)) are stored as
matrices in the same layout as the entries they weight. A flat ``Lambda``
vector is read column-major, i.e. entry ``(i, j)`` at ``i + j*n``.

Every builder accepts numeric arrays or :class:`~lipstab.conic.Affine`
expressions, so the same code assembles both the numeric matrix used for
verification and the symbolic one handed to the solver.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import conic
from .conic import Affine, SdpProblem, bmat
from .model import PlantModel, SafePolytope, linearize
from .sector import SectorBound

Matrix = Union[np.ndarray, Affine]

P_MIN_EIG = 1e-9
LMI_REL_MARGIN = 1e-7


def input_selector(n: int, m: int) -> np.ndarray:
    """``Q = I_m kron 1_{1 x n}``: sums chi into u_rho."""
    return np.kron(np.eye(m), np.ones((1, n)))


def npv_selector(n: int, m: int) -> np.ndarray:
    """``R = I_n kron 1_{1 x (n+m)}``: sums xi into zeta."""
    return np.kron(np.eye(n), np.ones((1, n + m)))


def _numeric(x) -> bool:
    return not isinstance(x, Affine)


def _finish(mat):
    """Return plain arrays for fully numeric results."""
    if isinstance(mat, Affine) and not mat.terms:
        return mat.const
    return mat


def _diag(entries):
    return _finish(conic.diag(entries))


def _check_nonneg(name: str, value) -> None:
    if _numeric(value) and np.any(np.asarray(value) < 0):
        raise ValueError(f"{name} must be elementwise nonnegative")


def _as_lambda(lam, n: int, m: int):
    if isinstance(lam, Affine):
        if lam.shape != (n, n + m):
            raise ValueError(f"Lambda must have shape {(n, n + m)}")
        return lam
    lam = np.asarray(lam, dtype=float)
    if lam.ndim == 1:
        if lam.size != n * (n + m):
            raise ValueError(f"Lambda must have {n * (n + m)} entries")
        lam = lam.reshape((n, n + m), order="F")
    if lam.shape != (n, n + m):
        raise ValueError(f"Lambda must have shape {(n, n + m)}")
    return lam


def _entry(mat, i, j):
    return mat[i, j] if isinstance(mat, Affine) else float(mat[i, j])


@dataclass(frozen=True)
class QcMultipliers:
    gamma: np.ndarray  # (m, n)
    lam: np.ndarray  # (n, n + m)

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        lam = np.atleast_2d(np.asarray(self.lam, dtype=float))
        if np.any(g < 0) or np.any(lam < 0):
            raise ValueError("multipliers must be nonnegative")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "lam", lam)


def lipschitz_qc_matrix(L: float, gamma) -> Matrix:
    """Block-diagonal ``[L^2 diag(Gamma_j), 0; 0, -diag(gamma)]``.

    ``Gamma_j`` is the j-th column sum of ``gamma`` (m x n); the ``gamma``
    diagonal follows the ``chi`` ordering (row-major).
    """
    if L < 0:
        raise ValueError("L must be nonnegative")
    _check_nonneg("gamma", gamma)
    if _numeric(gamma):
        gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    m, n = gamma.shape
    col_sums = [sum((_entry(gamma, i, j) for i in range(m)), 0.0) for j in range(n)]
    flat = [_entry(gamma, i, j) for i in range(m) for j in range(n)]
    top = _diag([L ** 2 * c for c in col_sums])
    bottom = _diag([-g for g in flat])
    return _finish(bmat([[top, np.zeros((n, m * n))], [np.zeros((m * n, n)), bottom]]))


@dataclass(frozen=True)
class SectorQcBlocks:
    M_x: Matrix
    M_chi: Matrix
    M_xi: Matrix
    N_x: Matrix
    N_chi: Matrix
    n: int
    m: int

    @property
    def Q(self) -> np.ndarray:
        return input_selector(self.n, self.m)

    @property
    def R(self) -> np.ndarray:
        return npv_selector(self.n, self.m)


def sector_qc_blocks(sector: SectorBound, lam) -> SectorQcBlocks:
    """Matrices of the sector quadratic constraint for multipliers ``lam``."""
    n, m = sector.n, sector.m
    lam = _as_lambda(lam, n, m)
    _check_nonneg("Lambda", lam)
    c = sector.center
    spread = sector.radius ** 2 - c ** 2
    Q = input_selector(n, m)
    nx = n * (n + m)

    def weighted(i, j, w):
        if w == 0.0:
            return 0.0
        return _entry(lam, i, j) * float(w)

    M_x = _diag([sum((weighted(i, j, spread[i, j]) for i in range(n)), 0.0) for j in range(n)])
    M_u = _diag([sum((weighted(i, n + l, spread[i, n + l]) for i in range(n)), 0.0) for l in range(m)])
    M_chi = _finish(Q.T @ M_u @ Q)
    M_xi = _diag([-_entry(lam, i, j) for i in range(n) for j in range(n + m)])
    # N_x: row j couples x_j with xi_(i, j); N_u: row l couples u_l with xi_(i, n+l)
    N_x = np.zeros((n, nx))
    N_u = np.zeros((m, nx))
    terms_x, terms_u = [], []
    for i in range(n):
        for j in range(n + m):
            w = weighted(i, j, c[i, j])
            if isinstance(w, float) and w == 0.0:
                continue
            unit = np.zeros((n if j < n else m, nx))
            unit[j if j < n else j - n, i * (n + m) + j] = 1.0
            (terms_x if j < n else terms_u).append(w * unit)
    N_x = _finish(sum(terms_x, Affine(N_x)))
    N_u = _finish(sum(terms_u, Affine(N_u)))
    N_chi = _finish(Q.T @ N_u)
    return SectorQcBlocks(M_x, M_chi, M_xi, N_x, N_chi, n, m)


def active_xi(sector: SectorBound) -> np.ndarray:
    """Boolean mask over ``xi`` of entries whose sector is not pinned to zero.

    A zero sector entry makes the matching ``xi`` component vanish
    identically, so its row and column can be dropped from the LMI.
    """
    return ~sector.zero_mask.ravel()


def stability_lmi(A0K, P, blocks: SectorQcBlocks, L: float, gamma, *, B0=None,
                  xi_mask: Optional[np.ndarray] = None) -> Matrix:
    """Assemble the symmetric stability matrix on ``[x; chi; xi]``.

    Parameters
    ----------
    A0K : (n, n)
        Nominal closed-loop matrix ``A0 + B0 K``.
    P : (n, n)
        Lyapunov matrix.
    blocks : SectorQcBlocks
    L : float
        Lipschitz budget.
    gamma : (m, n)
        Lipschitz-QC multipliers.
    B0 : (n, m), optional
        Nominal input matrix. When given, the ``(chi, x)`` block carries
        ``Q^T B0^T P`` so the perturbation input enters through ``B0``;
        when omitted that block is zero.
    xi_mask : bool array, optional
        Keep only these ``xi`` rows/columns (see :func:`active_xi`).
    """
    n, m = blocks.n, blocks.m
    if _numeric(gamma):
        gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    _check_nonneg("gamma", gamma)
    if gamma.shape != (m, n):
        raise ValueError(f"gamma must have shape {(m, n)}")
    if _numeric(A0K):
        A0K = np.atleast_2d(np.asarray(A0K, dtype=float))
    if _numeric(P):
        P = np.atleast_2d(np.asarray(P, dtype=float))
    Q, R = blocks.Q, blocks.R
    col_sums = [sum((_entry(gamma, i, j) for i in range(m)), 0.0) for j in range(n)]
    flat = [_entry(gamma, i, j) for i in range(m) for j in range(n)]
    lyap = P @ A0K
    V = blocks.M_x + _diag([L ** 2 * s for s in col_sums]) + lyap + lyap.T
    chi_x = np.zeros((m * n, n)) if B0 is None else Q.T @ np.asarray(B0, dtype=float).T @ P
    chi_chi = blocks.M_chi - _diag(flat)
    xi_x = blocks.N_x.T + R.T @ P
    xi_chi = blocks.N_chi.T
    xi_xi = blocks.M_xi
    if xi_mask is not None:
        keep = np.flatnonzero(xi_mask)
        sel = np.eye(n * (n + m))[keep]
        xi_x = sel @ xi_x
        xi_chi = sel @ xi_chi
        xi_xi = sel @ xi_xi @ sel.T
    mat = bmat([
        [V, _transpose(chi_x), _transpose(xi_x)],
        [chi_x, chi_chi, _transpose(xi_chi)],
        [xi_x, xi_chi, xi_xi],
    ])
    return _finish(mat)


def _transpose(x):
    return x.T


# certificates -------------------------------------------------------------------


def max_level(P, polytope: SafePolytope, delta: float = 1.0) -> float:
    """Largest ``sigma`` with ``{x : x^T P x <= sigma}`` inside ``delta * polytope``."""
    P = np.asarray(P, dtype=float)
    if np.min(np.linalg.eigvalsh(P)) <= 0:
        raise ValueError("P must be positive definite")
    if delta <= 0:
        raise ValueError("delta must be positive")
    Pinv_a = np.linalg.solve(P, polytope.A.T)
    quad = np.einsum("ij,ji->i", polytope.A, Pinv_a)
    return float(np.min((delta * polytope.b) ** 2 / quad))


@dataclass(frozen=True)
class StabilityCertificate:
    K: np.ndarray
    L: float
    P: np.ndarray
    multipliers: QcMultipliers
    sigma: float
    polytope: SafePolytope  # already scaled to the certified level
    delta: float = 1.0
    margin: float = LMI_REL_MARGIN

    def to_report(self) -> str:
        buf = io.StringIO()
        buf.write("# stability certificate\n")
        for key in ("L", "sigma", "delta", "margin"):
            buf.write(f"{key},{getattr(self, key)!r}\n")
        for name, mat in (("K", self.K), ("P", self.P), ("gamma", self.multipliers.gamma),
                          ("lambda", self.multipliers.lam), ("polytope_A", self.polytope.A),
                          ("polytope_b", self.polytope.b.reshape(-1, 1))):
            buf.write(f"[{name}]\n")
            for row in np.atleast_2d(mat):
                buf.write(",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_report(cls, text: str) -> "StabilityCertificate":
        scalars: dict[str, float] = {}
        mats: dict[str, list[list[float]]] = {}
        current = None
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("["):
                current = line.strip("[]")
                mats[current] = []
            elif current is None:
                key, value = line.split(",", 1)
                scalars[key] = float(value)
            else:
                mats[current].append([float(v) for v in line.split(",")])
        arr = {k: np.array(v, dtype=float) for k, v in mats.items()}
        return cls(
            K=arr["K"], L=scalars["L"], P=arr["P"],
            multipliers=QcMultipliers(arr["gamma"], arr["lambda"]),
            sigma=scalars["sigma"],
            polytope=SafePolytope(arr["polytope_A"], arr["polytope_b"].ravel()),
            delta=scalars["delta"], margin=scalars["margin"],
        )


@dataclass(frozen=True)
class Verdict:
    valid: bool
    reason: str
    lmi_max_eig: float = np.nan
    p_min_eig: float = np.nan
    level_limit: float = np.nan

    def __bool__(self) -> bool:
        return self.valid


def assemble(model: PlantModel, K, P, L, multipliers: QcMultipliers, sector: SectorBound) -> np.ndarray:
    """Numeric stability matrix for a candidate certificate (zero-sector rows removed)."""
    nom = linearize(model)
    K = np.asarray(K, dtype=float)
    blocks = sector_qc_blocks(sector, multipliers.lam)
    return stability_lmi(nom.closed_loop(K), np.asarray(P, dtype=float), blocks, L, multipliers.gamma,
                         B0=nom.B, xi_mask=active_xi(sector))


def verify_certificate(model: PlantModel, cert: StabilityCertificate, sector: SectorBound) -> Verdict:
    """Check positivity of P, negativity of the stability matrix, and ellipsoid containment."""
    P = np.asarray(cert.P, dtype=float)
    if not np.allclose(P, P.T, atol=1e-12 * max(1.0, np.max(np.abs(P)))):
        return Verdict(False, "P not symmetric")
    p_min = float(np.linalg.eigvalsh(P)[0])
    if not np.isfinite(p_min) or p_min < P_MIN_EIG:
        return Verdict(False, "P not PD", p_min_eig=p_min)
    mat = assemble(model, cert.K, P, cert.L, cert.multipliers, sector)
    mat = 0.5 * (mat + mat.T)
    eigs = np.linalg.eigvalsh(mat)
    scale = max(1.0, float(np.max(np.abs(eigs))))
    top = float(eigs[-1])
    if top > -cert.margin * scale:
        return Verdict(False, "LMI not negative definite", top, p_min)
    limit = max_level(P, cert.polytope)
    if cert.sigma <= 0 or cert.sigma > limit * (1 + 1e-12):
        return Verdict(False, "ellipsoid not contained in the safe set", top, p_min, limit)
    return Verdict(True, "valid", top, p_min, limit)


def certify_multipliers(model: PlantModel, K, P, L: float, sector: SectorBound,
                        margin: float = 1e-6) -> Optional[QcMultipliers]:
    """Search for multipliers making the stability matrix negative definite for fixed (K, P)."""
    nom = linearize(model)
    n, m = model.n, model.m
    prob = SdpProblem()
    lam = prob.variable("lam", (n, n + m), nonneg=True)
    gamma = prob.variable("gamma", (m, n), nonneg=True)
    blocks = sector_qc_blocks(sector, lam)
    mat = stability_lmi(nom.closed_loop(np.asarray(K, dtype=float)), np.asarray(P, dtype=float), blocks, L,
                        gamma, B0=nom.B, xi_mask=active_xi(sector))
    prob.lmi(mat, "<<", margin, name="stability")
    sol = prob.solve()
    if not sol.ok:
        return None
    lam_value = np.where(sector.zero_mask, 0.0, np.maximum(sol["lam"], 0.0))
    return QcMultipliers(np.maximum(sol["gamma"], 0.0), lam_value)

"""Iterative synthesis of a nominal gain, Lipschitz budget and safe ellipsoid.

Starting from a robust linear design, each iteration enlarges the certified
level ``delta`` of the safe polytope and the Lipschitz budget ``L`` by fixed
increments, then re-solves for a nearby gain ``K`` (with ``P`` held) and a
nearby ``P`` (with ``K`` held). The loop stops at the first infeasible
iteration and keeps the last certified iterate.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .certificate import (LMI_REL_MARGIN, QcMultipliers, StabilityCertificate, active_xi, max_level, sector_qc_blocks,
                          stability_lmi, verify_certificate)
from .conic import BarrierSolver, SdpProblem, Status, bmat
from .model import LinearizedDynamics, ParamBox, PlantModel, SafePolytope, linearize
from .sector import DEFAULT_TOL, SectorBound, compute_sector, uncertainty_vertices

log = logging.getLogger(__name__)


class NotStabilizableError(RuntimeError):
    """The linearized plant admits no common quadratic Lyapunov function."""


@dataclass(frozen=True)
class SynthesisConfig:
    w: float = 1.1
    n_steps: int = 20
    sector_tol: float = DEFAULT_TOL
    lmi_margin: float = 1e-5
    init_margin: float = 1e-6
    p_margin: float = 1e-6

    def __post_init__(self):
        if self.w < 0:
            raise ValueError("w must be nonnegative")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")
        if self.sector_tol <= 0:
            raise ValueError("sector_tol must be positive")
        if min(self.lmi_margin, self.init_margin, self.p_margin) <= 0:
            raise ValueError("margins must be positive")

    @property
    def step(self) -> float:
        return 1.0 / self.n_steps

    def delta_at(self, k: int) -> float:
        return k / self.n_steps

    def budget_at(self, k: int) -> float:
        # the fraction is exactly 1 at the last step, so the final budget equals w
        return self.w * (k / self.n_steps)


@dataclass(frozen=True)
class IterationRecord:
    k: int
    delta: float
    L: float
    feasible: bool
    eig_real: tuple
    sigma: float
    reason: str = ""


@dataclass
class SynthesisResult:
    K: np.ndarray
    L: float
    P: np.ndarray
    sigma: float
    delta: float
    multipliers: Optional[QcMultipliers]
    sector: Optional[SectorBound]
    certificate: Optional[StabilityCertificate]
    K0: np.ndarray
    P0: np.ndarray
    log: list[IterationRecord] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return sum(1 for r in self.log if r.feasible)

    def log_csv(self) -> str:
        n = self.K.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "delta", "L", "feasible", *[f"eig_re_{i + 1}" for i in range(n)], "sigma"])
        for r in self.log:
            eig = list(r.eig_real) if r.eig_real else [float("nan")] * n
            w.writerow([r.k, repr(r.delta), repr(r.L), int(r.feasible), *[repr(float(e)) for e in eig],
                        repr(float(r.sigma))])
        return buf.getvalue()


def parse_log_csv(text: str) -> list[IterationRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for r in rows:
        eig = tuple(float(r[k]) for k in sorted(r) if k.startswith("eig_re_"))
        out.append(IterationRecord(int(r["k"]), float(r["delta"]), float(r["L"]), bool(int(r["feasible"])),
                                   eig, float(r["sigma"])))
    return out


def _eig_real(A: np.ndarray) -> tuple:
    return tuple(float(v) for v in np.sort(np.linalg.eigvals(A).real))


# initialization -------------------------------------------------------------------


def init_nominal(model: PlantModel, params: ParamBox, polytope: SafePolytope,
                 margin: float = 1e-6, tol: float = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Robust linear design: maximize ln det Q over the vertex Lyapunov LMIs.

    Solves for ``Q = P^{-1}`` and ``Y = K Q`` with
    ``Q A_v^T + A_v Q + B_v Y + Y^T B_v^T << 0`` at every uncertainty vertex and
    ``||Q a_i|| <= b_i`` for every polytope face. The maximizing ``Q`` is
    unique; ``Y`` is not, so a second solve fixes ``Q`` and picks the gain of
    smallest spectral norm.

    Returns
    -------
    (K0, P0)

    Raises
    ------
    NotStabilizableError
        If the vertex LMIs have no solution.
    """
    verts = uncertainty_vertices(model, params, tol)
    n, m = model.n, model.m

    def vertex_lmis(prob, Q, Y):
        for k, (A, B) in enumerate(zip(verts.A, verts.B)):
            lyap = Q @ A.T + B @ Y
            prob.lmi(lyap + lyap.T, "<<", margin, name=f"vertex{k}")

    prob = SdpProblem()
    Q = prob.variable("Q", (n, n), symmetric=True)
    Y = prob.variable("Y", (m, n))
    vertex_lmis(prob, Q, Y)
    for i, (a, b) in enumerate(zip(polytope.A, polytope.b)):
        Qa = Q @ a.reshape(-1, 1)
        prob.lmi(bmat([[b * np.eye(n), Qa], [Qa.T, np.array([[b]])]]), ">>", 0.0, name=f"face{i}")
    prob.maximize_logdet(Q)
    start = prob.pack({"Q": 1e-3 * np.eye(n)})
    sol = prob.solve(start=start)
    if not sol.ok:
        raise NotStabilizableError("not robustly stabilizable at the linear level")
    Q_opt = 0.5 * (sol["Q"] + sol["Q"].T)
    Y_opt = sol["Y"]
    Q_inv = np.linalg.inv(Q_opt)

    gain = SdpProblem()
    Y2 = gain.variable("Y", (m, n))
    vertex_lmis(gain, Q_opt, Y2)
    t = gain.spectral_norm_bound(Y2 @ Q_inv, "t")
    gain.minimize(t)
    sol2 = gain.solve(start=gain.pack({"Y": Y_opt, "t": 1.0 + np.linalg.norm(Y_opt @ Q_inv, 2)}))
    Y_final = sol2["Y"] if sol2.ok else Y_opt
    return Y_final @ Q_inv, Q_inv


# iteration --------------------------------------------------------------------


@dataclass
class StepOutcome:
    feasible: bool
    K: Optional[np.ndarray] = None
    P: Optional[np.ndarray] = None
    multipliers: Optional[QcMultipliers] = None
    sector: Optional[SectorBound] = None
    reason: str = ""


SectorFn = Callable[[np.ndarray, float, SafePolytope], SectorBound]


def _multiplier_vars(prob: SdpProblem, n: int, m: int):
    lam = prob.variable("lam", (n, n + m), nonneg=True)
    gamma = prob.variable("gamma", (m, n), nonneg=True)
    return lam, gamma


def _extract(sol, sector: SectorBound) -> QcMultipliers:
    lam = np.where(sector.zero_mask, 0.0, np.maximum(sol["lam"], 0.0))
    return QcMultipliers(np.maximum(sol["gamma"], 0.0), lam)


MARGIN_RETRIES = 3


def _solve_with_relative_margin(build, margin: float):
    """Solve ``build(margin)``; if the LMI misses the verifier's relative margin, re-solve with it.

    Large multipliers inflate the LMI's eigenvalue scale, so an absolute
    margin can fall short of ``LMI_REL_MARGIN * scale``. Each retry sets the
    margin to twice the required relative margin.
    """
    for _ in range(MARGIN_RETRIES + 1):
        prob, mat, start = build(margin)
        sol = prob.solve(start=prob.pack(start))
        if not sol.ok:
            return sol
        eigs = np.linalg.eigvalsh(mat.value(sol.z))
        required = LMI_REL_MARGIN * max(1.0, float(np.max(np.abs(eigs))))
        if eigs[-1] <= -required:
            return sol
        margin = max(margin, 2.0 * required)
    return replace(sol, status=Status.INFEASIBLE)


def iteration_step(K_prev: np.ndarray, P_prev: np.ndarray, delta: float, L: float, model: PlantModel,
                   params: ParamBox, polytope: SafePolytope, config: SynthesisConfig = SynthesisConfig(),
                   sector_fn: Optional[SectorFn] = None) -> StepOutcome:
    """One alternating update: nearest feasible K for fixed P, then nearest P for that K.

    The sector is recomputed for the previous gain before the K-update and
    for the new gain before the P-update.
    """
    n, m = model.n, model.m
    nom = linearize(model)
    level = polytope.scaled(delta)
    if sector_fn is None:
        sector_fn = lambda K, L_, X: compute_sector(model, K, L_, X, params, config.sector_tol, nominal=nom)

    sector = sector_fn(K_prev, L, level)

    def gain_problem(margin):
        prob = SdpProblem()
        K = prob.variable("K", (m, n))
        lam, gamma = _multiplier_vars(prob, n, m)
        mat = stability_lmi(nom.A + nom.B @ K, P_prev, sector_qc_blocks(sector, lam), L, gamma, B0=nom.B,
                            xi_mask=active_xi(sector))
        prob.lmi(mat, "<<", margin, name="stability")
        prob.minimize(prob.spectral_norm_bound(K - K_prev, "t"))
        return prob, mat, {"K": K_prev, "lam": 1.0, "gamma": 1.0, "t": 1.0}

    sol = _solve_with_relative_margin(gain_problem, config.lmi_margin)
    if not sol.ok:
        return StepOutcome(False, reason=f"gain update {sol.status.value}")
    K_new = sol["K"]

    sector = sector_fn(K_new, L, level)

    def lyapunov_problem(margin):
        prob = SdpProblem()
        P = prob.variable("P", (n, n), symmetric=True)
        lam, gamma = _multiplier_vars(prob, n, m)
        mat = stability_lmi(nom.closed_loop(K_new), P, sector_qc_blocks(sector, lam), L, gamma, B0=nom.B,
                            xi_mask=active_xi(sector))
        prob.lmi(mat, "<<", margin, name="stability")
        prob.lmi(P, ">>", config.p_margin, name="P-positive")
        prob.minimize(prob.spectral_norm_bound(P - P_prev, "t"))
        return prob, mat, {"P": P_prev, "lam": 1.0, "gamma": 1.0, "t": 1.0}

    sol = _solve_with_relative_margin(lyapunov_problem, config.lmi_margin)
    if not sol.ok:
        return StepOutcome(False, reason=f"Lyapunov update {sol.status.value}")
    P_new = 0.5 * (sol["P"] + sol["P"].T)
    return StepOutcome(True, K_new, P_new, _extract(sol, sector), sector)


def _cached_sector(model: PlantModel, params: ParamBox, config: SynthesisConfig,
                   nom: LinearizedDynamics) -> SectorFn:
    """Sector evaluator that reuses results when the gain cannot matter."""
    cache: dict = {}

    def fn(K, L, X):
        key_K = None if model.constant_input_jacobian else np.asarray(K).tobytes()
        key = (key_K, float(L), X.b.tobytes())
        if key not in cache:
            cache[key] = compute_sector(model, K, L, X, params, config.sector_tol, nominal=nom)
        return cache[key]

    return fn


def synthesize(model: PlantModel, params: ParamBox, polytope: SafePolytope,
               config: SynthesisConfig = SynthesisConfig(),
               initial: Optional[tuple[np.ndarray, np.ndarray]] = None) -> SynthesisResult:
    """Run the full iterative synthesis.

    Parameters
    ----------
    initial : (K0, P0), optional
        Skip :func:`init_nominal` and start from these matrices.
    """
    nom = linearize(model)
    if initial is None:
        K0, P0 = init_nominal(model, params, polytope, config.init_margin, config.sector_tol)
    else:
        K0, P0 = (np.asarray(a, dtype=float) for a in initial)
    sector_fn = _cached_sector(model, params, config, nom)
    K, P = K0, P0
    multipliers = None
    sector = None
    records: list[IterationRecord] = []
    done = 0
    for k in range(1, config.n_steps + 1):
        delta, L = config.delta_at(k), config.budget_at(k)
        out = iteration_step(K, P, delta, L, model, params, polytope, config, sector_fn)
        if not out.feasible:
            records.append(IterationRecord(k, delta, L, False, (), float("nan"), out.reason))
            log.info("iteration %d infeasible: %s", k, out.reason)
            break
        K, P, multipliers, sector = out.K, out.P, out.multipliers, out.sector
        done = k
        sigma_k = max_level(P, polytope, delta)
        records.append(IterationRecord(k, delta, L, True, _eig_real(nom.closed_loop(K)), sigma_k))
        log.info("iteration %d feasible: sigma=%.4f", k, sigma_k)

    if done == 0:
        return SynthesisResult(K0, 0.0, P0, max_level(P0, polytope), 0.0, None, None, None, K0, P0, records)
    delta, L = config.delta_at(done), config.budget_at(done)
    level = polytope.scaled(delta)
    sigma = max_level(P, level)
    cert = StabilityCertificate(K, L, P, multipliers, sigma, level, delta)
    verdict = verify_certificate(model, cert, sector)
    if not verdict:
        raise RuntimeError(f"final certificate failed verification: {verdict.reason}")
    return SynthesisResult(K, L, P, sigma, delta, multipliers, sector, cert, K0, P0, records)

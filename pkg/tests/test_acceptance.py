"""End-to-end acceptance checks on the example plant.

Each test records one ``criterion N: PASS|FAIL`` line; ``conftest.py`` prints
them in the terminal summary. Run ``python3 -m pytest tests/test_acceptance.py -v``
or ``python3 tests/test_acceptance.py``.
"""

import math

import numpy as np
import pytest

from lipstab.certificate import assemble, max_level, verify_certificate
from lipstab.conic import SdpProblem
from lipstab.model import affine_plant, linearize
from lipstab.policy import Mlp, forward, lipschitz_upper_bound, log_density_grad
from lipstab.sector import npv_jacobian, uncertainty_vertices
from lipstab.sim import (Controller, ParamSampler, care_residual, lqr_gain, monte_carlo_eval, rk4_rollout,
                         sample_ellipsoid)

RESULTS: dict[int, str] = {}

# values printed for the example plant
PUBLISHED_K_LQR = np.array([[-0.8350, 0.1414], [0.1414, -0.5043]])
PUBLISHED_L_STAR = 1.1


def record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}  ({detail})"
    RESULTS[number] = line
    print(line)
    assert ok, line


def _states_in(polytope, rng, count):
    lo, hi = polytope.bounding_box()
    out = []
    while len(out) < count:
        x = rng.uniform(lo, hi, size=(4 * count, lo.size))
        out.extend(p for p in x if polytope.contains(p))
    return np.array(out[:count])


def test_criterion_01_linearization(plant):
    lin = linearize(plant, np.zeros(2))
    err = max(np.max(np.abs(lin.A - np.array([[0.0, -1.0], [1.0, -1.0]]))), np.max(np.abs(lin.B - np.eye(2))))
    record(1, "linearization at theta = 0", err <= 1e-12, f"max error {err:.1e}")


def test_criterion_02_uncertainty_vertices(plant, params):
    verts = uncertainty_vertices(plant, params)
    found = sorted((round(float(a[0, 1]), 6), round(float(a[1, 1]), 6)) for a in verts.A)
    expected = sorted((-1.0 + s1 * 0.05, -1.0 + s2 * 0.1) for s1 in (-1, 1) for s2 in (-1, 1))
    worst = max(abs(f - e) for pf, pe in zip(found, expected) for f, e in zip(pf, pe)) if len(found) == 4 else math.inf
    b_fixed = all(np.array_equal(b, np.eye(2)) for b in verts.B)
    record(2, "uncertainty vertices", len(verts) == 4 and worst <= 0.002 and b_fixed,
           f"{len(verts)} vertices, worst entry error {worst:.1e}")


def test_criterion_03_sector_soundness(plant, params, polytope, synthesis_result):
    res = synthesis_result
    s = res.sector
    rng = np.random.default_rng(3)
    xs = _states_in(polytope.scaled(res.delta), rng, 10_000)
    us = rng.uniform(-s.control_box.u_max, s.control_box.u_max, size=(10_000, 2))
    thetas = params.sample(rng, 10_000)
    nom = linearize(plant)
    worst = -math.inf
    for x, u, th in zip(xs, us, thetas):
        jac = npv_jacobian(plant, res.K, x, u, th, nom)
        worst = max(worst, float(np.max(s.lower - jac)), float(np.max(jac - s.upper)))
    closed_form = max(abs(s.lower[0, 1] + 0.05), abs(s.upper[0, 1] - 0.05))
    record(3, "sector soundness over 10^4 samples", worst <= 0.001 and closed_form <= 0.002,
           f"worst excursion {worst:.2e}, (1,2) bound [{s.lower[0, 1]:.4f}, {s.upper[0, 1]:.4f}]")


def test_criterion_04_synthesis(plant, polytope, synthesis_result):
    res = synthesis_result
    verdict = verify_certificate(plant, res.certificate, res.sector)
    inside = max_level(res.P, polytope, res.delta) >= res.sigma
    ok = (res.iterations == 20 and res.L == PUBLISHED_L_STAR and bool(verdict) and inside
          and 0.2 <= res.sigma <= 0.45)
    record(4, "iterative synthesis", ok,
           f"{res.iterations} feasible iterations, L* = {res.L!r}, sigma* = {res.sigma:.4f}, "
           f"certificate {'valid' if verdict else 'invalid'}")


def test_criterion_05_eigenvalue_migration(synthesis_result):
    res = synthesis_result
    first = np.sort(np.array(res.log[0].eig_real))
    final = np.sort(np.linalg.eigvals(np.array([[0.0, -1.0], [1.0, -1.0]]) + res.K).real)
    record(5, "closed-loop eigenvalues move left", bool(np.all(final <= first - 0.1)),
           f"k=1 real parts {np.round(first, 4).tolist()}, final {np.round(final, 4).tolist()}")


def test_criterion_06_lqr(plant):
    nom = linearize(plant)
    K, P = lqr_gain(nom.A, nom.B, np.eye(2), np.eye(2))
    err = float(np.max(np.abs(K - PUBLISHED_K_LQR)))
    residual = care_residual(nom.A, nom.B, np.eye(2), np.eye(2), P)
    record(6, "LQR baseline", err <= 1e-2 and residual <= 1e-8, f"gain error {err:.1e}, residual {residual:.1e}")


def _certified_rollouts(plant, params, polytope, res, perturbation, seed):
    rng = np.random.default_rng(seed)
    exits, increases, worst_final = 0, 0, 0.0
    X = polytope.scaled(res.delta)
    for x0 in sample_ellipsoid(rng, res.P, res.sigma, 100):
        thetas = ParamSampler(params, seed=int(rng.integers(1 << 31))).draw(200)
        traj = rk4_rollout(plant, res.K, x0, thetas, 0.1, perturbation=perturbation)
        exits += int(not all(X.contains(x) for x in traj.x))
        v = np.einsum("ij,jk,ik->i", traj.x, res.P, traj.x)
        increases += int(np.any(np.diff(v) > 1e-12))
        worst_final = max(worst_final, float(np.max(np.abs(traj.x[-1]))))
    return exits, increases, worst_final


def test_criterion_07_certified_rollouts(plant, params, polytope, synthesis_result, training_result):
    res = synthesis_result
    zero = _certified_rollouts(plant, params, polytope, res, None, 70)
    trained = _certified_rollouts(plant, params, polytope, res, training_result.actor, 71)
    ok = all(e == 0 and i == 0 and f <= 1e-2 for e, i, f in (zero, trained))
    record(7, "rollouts from the safe ellipsoid", ok,
           f"pi=0: exits {zero[0]}, V increases {zero[1]}, max |x(20s)| {zero[2]:.1e}; "
           f"trained: exits {trained[0]}, V increases {trained[1]}, max |x(20s)| {trained[2]:.1e}")


def test_criterion_08_training_cap(synthesis_result, training_result):
    bounds = [r.lipschitz for r in training_result.log]
    record(8, "Lipschitz cap during training", len(bounds) == 600 and max(bounds) <= PUBLISHED_L_STAR,
           f"{len(bounds)} updates, max bound {max(bounds):.6f}, final {bounds[-1]:.4f}")


def test_criterion_09_utility_comparison(plant, params, synthesis_result, training_result):
    res = synthesis_result
    nom = linearize(plant)
    K_lqr, _ = lqr_gain(nom.A, nom.B, np.eye(2), np.eye(2))
    stats = monte_carlo_eval(plant, {"lqr": Controller(K_lqr), "trained": Controller(res.K, training_result.actor)},
                             40, res.P, res.sigma, params, 200, 0.1, 2023)
    lqr, trained = stats["lqr"].median, stats["trained"].median
    record(9, "trained vs LQR median utility", trained >= 0.95 * lqr,
           f"trained {trained:.5f}, LQR {lqr:.5f}, threshold {0.95 * lqr:.5f}")


def test_criterion_10_numerical_kernels(plant, polytope, synthesis_result):
    notes, ok = [], True

    # RK4 order ratio on x' = -x
    decay = affine_plant([[-1.0]], [[0.0]])

    def error(tau):
        traj = rk4_rollout(decay, [[0.0]], [1.0], np.zeros((round(1 / tau), 1)), tau, substeps=1)
        return abs(traj.x[-1, 0] - math.exp(-1.0))

    ratio = error(0.1) / error(0.05)
    ok &= 14.0 <= ratio <= 18.0
    notes.append(f"RK4 ratio {ratio:.2f}")

    # MLP gradient vs central differences
    rng = np.random.default_rng(10)
    actor = Mlp.random([2, 5, 2], rng)
    x, cov = rng.normal(size=2), np.array([0.0225, 0.0225])
    u = forward(actor, x) + 0.15 * rng.normal(size=2)
    theta = actor.flat()

    def log_density(t):
        r = u - forward(actor.with_flat(t), x)
        return -0.5 * float(np.sum(r * r / cov))

    fd = np.array([(log_density(theta + h) - log_density(theta - h)) / 2e-6 for h in 1e-6 * np.eye(theta.size)])
    analytic = np.concatenate([g.ravel() for g in log_density_grad(actor, x, u, cov)])
    rel = float(np.linalg.norm(analytic - fd) / np.linalg.norm(fd))
    ok &= rel <= 1e-4
    notes.append(f"MLP gradient rel error {rel:.1e}")

    # independent eigenvalue re-check of SDP solutions
    prob = SdpProblem()
    Q = prob.variable("Q", (2, 2), symmetric=True)
    A = np.array([[-1.0, 2.0], [-0.5, -0.3]])
    prob.lmi(A.T @ Q + Q @ A, "<<", 1e-6)
    prob.lmi(Q, ">>", 1e-6)
    prob.lmi(10.0 * np.eye(2) - Q, ">>", 0.0)
    sol = prob.solve()
    Qs = sol["Q"]
    margins = [-np.max(np.linalg.eigvalsh(A.T @ Qs + Qs @ A)) - 1e-6, np.min(np.linalg.eigvalsh(Qs)) - 1e-6]
    res = synthesis_result
    cert_mat = assemble(plant, res.K, res.P, res.L, res.multipliers, res.sector)
    margins.append(-float(np.max(np.linalg.eigvalsh(cert_mat))))
    ok &= sol.ok and min(margins) >= -1e-7
    notes.append(f"SDP re-check margin {min(margins):.1e}")

    # log-det iterates are monotone
    prob = SdpProblem()
    Q = prob.variable("Q", (2, 2), symmetric=True)
    prob.lmi(np.array([[3.0, 0.5], [0.5, 2.0]]) - Q, ">>", 0.0)
    prob.maximize_logdet(Q)
    history = np.array(prob.solve(start=prob.pack({"Q": 0.1 * np.eye(2)})).logdet_history)
    ok &= history.size >= 2 and bool(np.all(np.diff(history) >= -1e-12))
    notes.append(f"log-det history of {history.size} monotone")

    # max_level against a boundary-sampling oracle
    P = res.P
    angles = np.linspace(0, 2 * np.pi, 200_000, endpoint=False)
    boundary = np.stack([np.cos(angles), np.sin(angles)], axis=1) @ np.linalg.inv(np.linalg.cholesky(P))
    oracle = float(np.min((polytope.b / np.max(boundary @ polytope.A.T, axis=0)) ** 2))
    level_err = abs(max_level(P, polytope) - oracle) / oracle
    ok &= level_err <= 1e-3
    notes.append(f"max_level rel error {level_err:.1e}")

    record(10, "numerical kernels", bool(ok), ", ".join(notes))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))

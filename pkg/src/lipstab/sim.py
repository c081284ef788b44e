"""Closed-loop simulation, utilities, the LQR baseline and paired Monte-Carlo runs."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import solve_continuous_lyapunov, sqrtm

from .conic import SdpProblem
from .model import ParamBox, PlantModel

DIVERGENCE_LIMIT = 1e6

Reward = Callable[[np.ndarray, np.ndarray], float]
Perturbation = Callable[[np.ndarray], np.ndarray]


def quadratic_reward(x: np.ndarray, u: np.ndarray, input_weight: float = 0.1) -> float:
    """``-(x^T x + input_weight * u^T u)``."""
    return -float(x @ x + input_weight * (u @ u))


class ParamSampler:
    """Piecewise-constant parameter signal, i.i.d. uniform over the box at each sample."""

    def __init__(self, params: ParamBox, seed=None):
        self.params = params
        self.rng = np.random.default_rng(seed)

    def draw(self, n_s: int) -> np.ndarray:
        return self.params.sample(self.rng, n_s)


@dataclass
class Trajectory:
    x: np.ndarray  # (n_s + 1, n)
    u: np.ndarray  # (n_s, m)
    theta: np.ndarray  # (n_s, d)
    rewards: np.ndarray  # (n_s,)
    tau: float
    diverged: bool = False

    @property
    def steps(self) -> int:
        return self.u.shape[0]

    def to_csv(self) -> str:
        n, m, d = self.x.shape[1], self.u.shape[1], self.theta.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *[f"x{i + 1}" for i in range(n)], *[f"u{i + 1}" for i in range(m)],
                    *[f"theta{i + 1}" for i in range(d)], "r"])
        for k in range(self.x.shape[0]):
            row = [repr(k * self.tau), *[repr(float(v)) for v in self.x[k]]]
            if k < self.steps:
                row += [repr(float(v)) for v in self.u[k]] + [repr(float(v)) for v in self.theta[k]]
                row.append(repr(float(self.rewards[k])))
            else:
                row += [""] * (m + d + 1)
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        rows = list(reader)
        cols = {name: i for i, name in enumerate(header)}
        pick = lambda prefix: [i for name, i in cols.items() if name.rstrip("0123456789") == prefix]
        xs, us, ths = pick("x"), pick("u"), pick("theta")
        x = np.array([[float(r[i]) for i in xs] for r in rows])
        body = [r for r in rows if r[cols["r"]] != ""]
        u = np.array([[float(r[i]) for i in us] for r in body]).reshape(len(body), len(us))
        th = np.array([[float(r[i]) for i in ths] for r in body]).reshape(len(body), len(ths))
        rew = np.array([float(r[cols["r"]]) for r in body])
        tau = float(rows[1][0]) if len(rows) > 1 else 0.0
        return cls(x, u, th, rew, tau, diverged=len(rows) - 1 != len(body))


def rk4_step(model: PlantModel, x: np.ndarray, u: np.ndarray, theta: np.ndarray, tau: float,
             substeps: int = 10) -> np.ndarray:
    """Integrate one held-input sample period with classical RK4."""
    h = tau / substeps
    f = lambda y: model.dynamics(y, u, theta)
    for _ in range(substeps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def rk4_rollout(model: PlantModel, K, x0, thetas: np.ndarray, tau: float, *,
                perturbation: Optional[Perturbation] = None, substeps: int = 10,
                reward: Reward = quadratic_reward) -> Trajectory:
    """Simulate ``u = K x + perturbation(x)`` under a zero-order hold.

    Parameters
    ----------
    thetas : (n_s, d) array
        Parameter value held over each sample period; its length sets n_s.
        A :class:`ParamSampler` produces these.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    K = np.atleast_2d(np.asarray(K, dtype=float))
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    n_s = thetas.shape[0]
    x = np.asarray(x0, dtype=float).copy()
    xs, us, rs = [x], [], []
    diverged = False
    for k in range(n_s):
        u = K @ x
        if perturbation is not None:
            u = u + perturbation(x)
        rs.append(reward(x, u))
        us.append(u)
        x = rk4_step(model, x, u, thetas[k], tau, substeps)
        xs.append(x)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_LIMIT:
            diverged = True
            break
    steps = len(us)
    return Trajectory(np.array(xs), np.array(us).reshape(steps, model.m), thetas[:steps].copy(),
                      np.array(rs), tau, diverged)


def utility(traj: Trajectory, reward: Optional[Reward] = None) -> float:
    """Riemann sum ``sum_k r(x_k, u_k) * tau``; recomputes rewards if ``reward`` is given."""
    if reward is None:
        rewards = traj.rewards
    else:
        rewards = np.array([reward(traj.x[k], traj.u[k]) for k in range(traj.steps)])
    return float(np.sum(rewards) * traj.tau)


def sample_ellipsoid(rng: np.random.Generator, P, sigma: float, size: int) -> np.ndarray:
    """Uniform samples from ``{x : x^T P x <= sigma}``."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    g = rng.standard_normal((size, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    radius = rng.uniform(size=(size, 1)) ** (1.0 / n)
    root_inv = np.real(np.linalg.inv(sqrtm(P)))
    return np.sqrt(sigma) * (g * radius) @ root_inv.T


# LQR ------------------------------------------------------------------------------


class NotStabilizableError(ValueError):
    pass


def _stabilizing_gain(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    if np.max(np.linalg.eigvals(A).real) < 0:
        return np.zeros((B.shape[1], A.shape[0]))
    n, m = B.shape
    prob = SdpProblem()
    Q = prob.variable("Q", (n, n), symmetric=True)
    Y = prob.variable("Y", (m, n))
    lyap = A @ Q + B @ Y
    prob.lmi(lyap + lyap.T, "<<", 1e-6)
    prob.lmi(Q, ">>", 1e-6)
    prob.lmi(1e3 * np.eye(n) - Q, ">>", 0.0)
    sol = prob.solve()
    if not sol.ok:
        raise NotStabilizableError("(A, B) is not stabilizable")
    return sol["Y"] @ np.linalg.inv(sol["Q"])


def care_residual(A, B, Q, R, P) -> float:
    return float(np.linalg.norm(A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q))


def lqr_gain(A, B, Q, R, *, tol: float = 1e-13, max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Stabilizing LQR gain ``K = -R^{-1} B^T P`` by Newton-Kleinman iteration.

    Returns
    -------
    (K, P)
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if np.min(np.linalg.eigvalsh(R)) <= 0:
        raise ValueError("R must be positive definite")
    K = _stabilizing_gain(A, B)
    P = None
    for _ in range(max_iter):
        Acl = A + B @ K
        P_new = solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        P_new = 0.5 * (P_new + P_new.T)
        K = -np.linalg.solve(R, B.T @ P_new)
        if P is not None and np.linalg.norm(P_new - P) <= tol * max(1.0, np.linalg.norm(P_new)):
            P = P_new
            break
        P = P_new
    return K, P


# Monte Carlo ----------------------------------------------------------------------


@dataclass(frozen=True)
class Controller:
    K: np.ndarray
    perturbation: Optional[Perturbation] = None


@dataclass
class UtilityStats:
    values: np.ndarray
    diverged: np.ndarray

    def summary(self) -> dict[str, float]:
        if self.values.size == 0:
            return {}
        q = np.percentile(self.values, [0, 25, 50, 75, 100])
        return dict(zip(("min", "q1", "median", "q3", "max"), (float(v) for v in q)))

    @property
    def median(self) -> float:
        return float(np.median(self.values)) if self.values.size else float("nan")


def draw_scenarios(seed: int, n_runs: int, P, sigma: float, params: ParamBox, n_s: int):
    """Per-run initial states and parameter sequences from independent child seeds."""
    children = np.random.SeedSequence(seed).spawn(n_runs)
    scenarios = []
    for child in children:
        rng = np.random.default_rng(child)
        x0 = sample_ellipsoid(rng, P, sigma, 1)[0]
        scenarios.append((x0, params.sample(rng, n_s)))
    return scenarios


def monte_carlo_eval(model: PlantModel, controllers: dict[str, Controller], n_runs: int, P, sigma: float,
                     params: ParamBox, n_s: int, tau: float, seed: int, *,
                     reward: Reward = quadratic_reward, substeps: int = 10) -> dict[str, UtilityStats]:
    """Paired comparison: every controller sees the same (x0, theta) draws."""
    scenarios = draw_scenarios(seed, n_runs, P, sigma, params, n_s)
    out = {}
    for name, ctrl in controllers.items():
        vals, div = [], []
        for x0, thetas in scenarios:
            traj = rk4_rollout(model, ctrl.K, x0, thetas, tau, perturbation=ctrl.perturbation,
                               substeps=substeps, reward=reward)
            vals.append(utility(traj))
            div.append(traj.diverged)
        out[name] = UtilityStats(np.array(vals), np.array(div, dtype=bool))
    return out


def stats_csv(stats: dict[str, UtilityStats]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "min", "q1", "median", "q3", "max"])
    for name, st in stats.items():
        s = st.summary()
        w.writerow([name, *[repr(s.get(k, float("nan"))) for k in ("min", "q1", "median", "q3", "max")]])
    return buf.getvalue()


def parse_stats_csv(text: str) -> dict[str, dict[str, float]]:
    return {r["policy"]: {k: float(v) for k, v in r.items() if k != "policy"}
            for r in csv.DictReader(io.StringIO(text))}

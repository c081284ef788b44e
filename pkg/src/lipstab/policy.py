"""Bias-free tanh MLPs, their Lipschitz bound, and Lipschitz-constrained actor-critic training."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .model import ParamBox, PlantModel
from .sim import Reward, quadratic_reward, rk4_step, sample_ellipsoid


class Mlp:
    """``W_L tanh(... tanh(W_1 x))`` with zero biases.

    Parameters
    ----------
    weights : sequence of 2-d arrays
        ``weights[l]`` maps layer ``l`` to layer ``l + 1``.
    """

    def __init__(self, weights: Sequence[np.ndarray]):
        ws = [np.atleast_2d(np.asarray(w, dtype=float)).copy() for w in weights]
        if not ws:
            raise ValueError("an MLP needs at least one layer")
        for a, b in zip(ws, ws[1:]):
            if b.shape[1] != a.shape[0]:
                raise ValueError(f"layer shapes do not chain: {a.shape} then {b.shape}")
        self.weights = ws

    @classmethod
    def random(cls, sizes: Sequence[int], rng: np.random.Generator, scale: float = 1.0) -> "Mlp":
        """Glorot-uniform initialization for layer widths ``sizes`` (input first)."""
        ws = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            limit = scale * np.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        return cls(ws)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "Mlp":
        return Mlp(self.weights)

    def _activations(self, x: np.ndarray) -> list[np.ndarray]:
        hs = [x]
        for w in self.weights[:-1]:
            hs.append(np.tanh(w @ hs[-1]))
        return hs

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)

    def vjp(self, x, v) -> list[np.ndarray]:
        """Gradient of ``v . net(x)`` with respect to every weight matrix."""
        x = np.asarray(x, dtype=float)
        hs = self._activations(x)
        g = np.atleast_1d(np.asarray(v, dtype=float))
        grads = [None] * self.n_layers
        grads[-1] = np.outer(g, hs[-1])
        g = self.weights[-1].T @ g
        for l in range(self.n_layers - 2, -1, -1):
            g = g * (1.0 - hs[l + 1] ** 2)
            grads[l] = np.outer(g, hs[l])
            g = self.weights[l].T @ g
        return grads

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights])

    def with_flat(self, theta: np.ndarray) -> "Mlp":
        out, pos = [], 0
        for w in self.weights:
            out.append(theta[pos:pos + w.size].reshape(w.shape))
            pos += w.size
        return Mlp(out)

    def to_text(self) -> str:
        """Layer sizes header followed by row-major CSV blocks, one per layer."""
        sizes = [self.input_dim] + [w.shape[0] for w in self.weights]
        lines = ["# mlp weights", "layers," + ",".join(str(s) for s in sizes)]
        for k, w in enumerate(self.weights, start=1):
            lines.append(f"[W{k}]")
            lines.extend(",".join(repr(float(v)) for v in row) for row in w)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Mlp":
        sizes = None
        blocks: list[list[list[float]]] = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("layers,"):
                sizes = [int(v) for v in line.split(",")[1:]]
            elif line.startswith("[W"):
                blocks.append([])
            else:
                blocks[-1].append([float(v) for v in line.split(",")])
        if sizes is None:
            raise ValueError("missing layers header")
        ws = [np.array(b, dtype=float).reshape(sizes[k + 1], sizes[k]) for k, b in enumerate(blocks)]
        return cls(ws)


def forward(net: Mlp, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.input_dim:
        raise ValueError(f"expected input of size {net.input_dim}, got {x.shape[-1]}")
    h = x.T
    for w in net.weights[:-1]:
        h = np.tanh(w @ h)
    return (net.weights[-1] @ h).T


def lipschitz_upper_bound(net: Mlp) -> float:
    """Product of induced infinity-norms (max absolute row sums) of the layers."""
    return float(np.prod([np.max(np.sum(np.abs(w), axis=1)) for w in net.weights]))


def lipschitz_subgradient(net: Mlp) -> list[np.ndarray]:
    """A subgradient of :func:`lipschitz_upper_bound` with respect to each weight matrix."""
    norms = [np.sum(np.abs(w), axis=1) for w in net.weights]
    tops = [float(np.max(r)) for r in norms]
    grads = []
    for l, w in enumerate(net.weights):
        others = float(np.prod([t for k, t in enumerate(tops) if k != l]))
        g = np.zeros_like(w)
        row = int(np.argmax(norms[l]))
        g[row] = np.sign(w[row]) * others
        grads.append(g)
    return grads


def project_to_lipschitz(net: Mlp, cap: float) -> Mlp:
    """Scale every layer by ``(cap / bound)^(1/n_layers)`` when the bound exceeds ``cap``."""
    if cap <= 0:
        raise ValueError("the Lipschitz cap must be positive")
    bound = lipschitz_upper_bound(net)
    if bound <= cap or bound == 0.0:
        return net
    factor = (cap / bound) ** (1.0 / net.n_layers)
    projected = Mlp([w * factor for w in net.weights])
    # rounding can leave the product a few ulps above the cap
    while lipschitz_upper_bound(projected) > cap:
        factor = np.nextafter(factor, 0.0)
        projected = Mlp([w * factor for w in net.weights])
    return projected


def n_step_advantage(rewards: Sequence[float], critic: Mlp, x_next, x_first) -> float:
    """Undiscounted ``sum(rewards) + v(x_next) - v(x_first)``."""
    if len(rewards) == 0:
        raise ValueError("insufficient reward history")
    return float(np.sum(rewards) + critic(x_next)[0] - critic(x_first)[0])


def log_density_grad(actor: Mlp, x, u, cov_diag) -> list[np.ndarray]:
    """Gradient of ``ln N(u; actor(x), diag(cov_diag))`` with respect to the actor weights."""
    precision = 1.0 / np.maximum(np.asarray(cov_diag, dtype=float), 1e-8)
    return actor.vjp(x, precision * (np.asarray(u) - actor(x)))


class Adam:
    """Adam optimizer over a list of arrays; ``step`` ascends along ``direction``."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: Optional[list[np.ndarray]] = None
        self.v: Optional[list[np.ndarray]] = None

    def step(self, params: list[np.ndarray], direction: list[np.ndarray]) -> list[np.ndarray]:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        out = []
        for i, (p, g) in enumerate(zip(params, direction)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1 - self.beta2 ** self.t)
            out.append(p + self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return out


@dataclass(frozen=True)
class TrainConfig:
    tau: float = 0.1
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    exploration: tuple = (0.0225, 0.0225)
    decay: float = 0.98
    decay_floor: float = 1e-4
    n_trajectories: int = 600
    n_steps: int = 200
    advantage_horizon: int = 20
    beta: float = 1e-15
    hidden: int = 5
    seed: int = 0
    substeps: int = 10

    def errors(self) -> list[str]:
        """All violated invariants, empty when the configuration is valid."""
        errs = []
        if self.tau <= 0:
            errs.append("tau must be positive")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            errs.append("step sizes must be positive")
        if any(s < 0 for s in self.exploration):
            errs.append("exploration covariance must be nonnegative")
        if not 0 < self.decay < 1:
            errs.append("decay must lie in (0, 1)")
        if not 0 < self.decay_floor < 1:
            errs.append("decay_floor must lie in (0, 1)")
        if self.n_trajectories < 0:
            errs.append("n_trajectories must be nonnegative")
        if self.n_steps < 1:
            errs.append("n_steps must be positive")
        if not 1 <= self.advantage_horizon < self.n_steps:
            errs.append("advantage_horizon must satisfy 1 <= n_a < n_s")
        if self.beta < 0:
            errs.append("beta must be nonnegative")
        if self.hidden < 1:
            errs.append("hidden must be positive")
        if self.substeps < 1:
            errs.append("substeps must be positive")
        return errs

    def __post_init__(self):
        errs = self.errors()
        if errs:
            raise ValueError("; ".join(errs))


@dataclass(frozen=True)
class TrainRecord:
    trajectory: int
    ret: float
    lipschitz: float
    nu: float


@dataclass
class TrainResult:
    actor: Mlp
    critic: Mlp
    log: list[TrainRecord] = field(default_factory=list)

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trajectory", "return", "lipschitz", "nu"])
        for r in self.log:
            w.writerow([r.trajectory, repr(r.ret), repr(r.lipschitz), repr(r.nu)])
        return buf.getvalue()


def parse_train_log(text: str) -> list[TrainRecord]:
    return [TrainRecord(int(r["trajectory"]), float(r["return"]), float(r["lipschitz"]), float(r["nu"]))
            for r in csv.DictReader(io.StringIO(text))]


def _scaled(grads: list[np.ndarray], s: float) -> list[np.ndarray]:
    return [g * s for g in grads]


def _add(a: list[np.ndarray], b: list[np.ndarray], s: float = 1.0) -> list[np.ndarray]:
    return [x + s * y for x, y in zip(a, b)]


def train(model: PlantModel, K, cap: float, P, sigma: float, params: ParamBox,
          config: TrainConfig = TrainConfig(), *, reward: Reward = quadratic_reward,
          actor: Optional[Mlp] = None, critic: Optional[Mlp] = None) -> TrainResult:
    """Lipschitz-constrained actor-critic training of the perturbation controller.

    Each trajectory starts uniformly inside ``{x^T P x <= sigma}`` with a
    fresh piecewise-constant parameter sequence. Gradients are averaged over
    the trajectory; after the actor step the weights are projected so the
    Lipschitz bound never exceeds ``cap``.

    The critic moves along the negative gradient of half the squared
    advantage, so the advantage shrinks toward zero.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    rng = np.random.default_rng(config.seed)
    n, m = model.n, model.m
    if actor is None:
        actor = Mlp.random([n, config.hidden, m], rng)
    if critic is None:
        critic = Mlp.random([n, config.hidden, 1], rng)
    actor = project_to_lipschitz(actor, cap)
    actor_opt = Adam(config.actor_lr)
    critic_opt = Adam(config.critic_lr)
    base_cov = np.asarray(config.exploration, dtype=float)
    if base_cov.shape != (m,):
        raise ValueError(f"exploration must have {m} entries")
    nu = 1.0
    n_a, n_s = config.advantage_horizon, config.n_steps
    records = []
    for e in range(1, config.n_trajectories + 1):
        cov = nu * base_cov
        std = np.sqrt(cov)
        d_actor = [np.zeros_like(w) for w in actor.weights]
        d_critic = [np.zeros_like(w) for w in critic.weights]
        x = sample_ellipsoid(rng, P, sigma, 1)[0]
        thetas = params.sample(rng, n_s)
        xs, rs = [x], []
        count = 0
        for k in range(n_s):
            mean = actor(x)
            u_rho = mean + std * rng.standard_normal(m)
            u = K @ x + u_rho
            rs.append(reward(x, u))
            x_next = rk4_step(model, x, u, thetas[k], config.tau, config.substeps)
            if not np.all(np.isfinite(x_next)) or np.linalg.norm(x_next) > 1e6:
                break
            xs.append(x_next)
            if k >= n_a:
                count += 1
                x_first = xs[k - n_a + 1]
                adv = n_step_advantage(rs[k - n_a + 1:k + 1], critic, x_next, x_first)
                g_actor = _scaled(log_density_grad(actor, x, u_rho, cov), adv)
                g_critic = _scaled(_add(critic.vjp(x_first, [1.0]), critic.vjp(x_next, [1.0]), -1.0), adv)
                d_actor = [((count - 1) * d + g) / count for d, g in zip(d_actor, g_actor)]
                d_critic = [((count - 1) * d + g) / count for d, g in zip(d_critic, g_critic)]
            x = x_next
        ascent = _add(d_actor, lipschitz_subgradient(actor), -config.beta)
        actor = project_to_lipschitz(Mlp(actor_opt.step(actor.weights, ascent)), cap)
        critic = Mlp(critic_opt.step(critic.weights, d_critic))
        nu = max(config.decay_floor, nu * config.decay)
        records.append(TrainRecord(e, float(np.sum(rs) * config.tau), lipschitz_upper_bound(actor), nu))
    return TrainResult(actor, critic, records)

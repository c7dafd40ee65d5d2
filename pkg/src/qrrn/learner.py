"""Quantile-regression TD learning with replay and epsilon-greedy behavior.

The agent maintains N quantile atoms per (state, action), either as a
dense table or as a small dense network over one-hot state encodings, plus
a target copy used for bootstrap targets. Updates minimize the quantile
Huber regression loss over TD residuals

    delta[i, j] = r + gamma * theta_target_j(s', a*) - theta_i(s, a)

where a* maximizes the target-side mean at s' and the bootstrap term is
dropped on terminal transitions. "Terminal" means the transition entered a
goal state; hitting the episode step cap truncates an episode without
marking the transition terminal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .quantdist import huber_terms, midpoints


class EmptyBuffer(ValueError):
    pass


class EmptyBatch(ValueError):
    pass


@dataclass(frozen=True)
class Transition:
    s: int
    a: int
    r: float
    s_next: int
    done: bool


@dataclass
class Batch:
    """Column-wise minibatch of transitions."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return len(self.s)

    @classmethod
    def from_transitions(cls, transitions) -> "Batch":
        ts = list(transitions)
        return cls(
            s=np.array([t.s for t in ts], dtype=np.int64),
            a=np.array([t.a for t in ts], dtype=np.int64),
            r=np.array([t.r for t in ts], dtype=float),
            s_next=np.array([t.s_next for t in ts], dtype=np.int64),
            done=np.array([t.done for t in ts], dtype=bool),
        )


class ReplayBuffer:
    """Fixed-capacity ring of transitions with FIFO overwrite."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.s = np.zeros(capacity, dtype=np.int64)
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity, dtype=float)
        self.s_next = np.zeros(capacity, dtype=np.int64)
        self.done = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.cursor = 0

    def __len__(self) -> int:
        return self.size

    def push(self, s: int, a: int, r: float, s_next: int, done: bool) -> None:
        i = self.cursor
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s_next[i] = s_next
        self.done[i] = done
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, k: int, rng: np.random.Generator) -> Batch:
        """k transitions drawn uniformly with replacement."""
        if self.size == 0:
            raise EmptyBuffer("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=k)
        return Batch(self.s[idx], self.a[idx], self.r[idx],
                     self.s_next[idx], self.done[idx])

    def contents(self):
        """Transitions currently held, oldest first."""
        order = (np.arange(self.size) + (self.cursor - self.size)) % self.capacity \
            if self.size == self.capacity else np.arange(self.size)
        return [Transition(int(self.s[i]), int(self.a[i]), float(self.r[i]),
                           int(self.s_next[i]), bool(self.done[i])) for i in order]


def buffer_push(buf: ReplayBuffer, t: Transition) -> None:
    buf.push(t.s, t.a, t.r, t.s_next, t.done)


def buffer_sample(buf: ReplayBuffer, k: int, rng: np.random.Generator) -> Batch:
    return buf.sample(k, rng)


@dataclass
class AgentConfig:
    n_quantiles: int = 4
    gamma: float = 0.99
    lr: float = 5e-4
    buffer_size: int = 2048
    batch_size: int = 64
    gradient_steps: int = 1
    exploration_fraction: float = 0.02
    exploration_final_eps: float = 0.1
    target_sync_interval: int | None = None   # backend default: tabular 1, network 1000
    backend: str = "tabular"
    kappa: float = 1.0
    hidden: tuple = (64, 64)
    optimizer: str = "adam"                   # "adam" | "sgd" (plain gradient step)

    def __post_init__(self):
        if self.n_quantiles < 1:
            raise ValueError("n_quantiles must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.buffer_size < 1 or self.batch_size < 1 or self.gradient_steps < 1:
            raise ValueError("buffer_size, batch_size, gradient_steps must be >= 1")
        if not 0.0 < self.exploration_fraction <= 1.0:
            raise ValueError("exploration_fraction must lie in (0, 1]")
        if not 0.0 <= self.exploration_final_eps <= 1.0:
            raise ValueError("exploration_final_eps must lie in [0, 1]")
        if self.target_sync_interval is not None and self.target_sync_interval < 1:
            raise ValueError("target_sync_interval must be >= 1")
        if self.backend not in ("tabular", "network"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if not self.kappa > 0:
            raise ValueError("kappa must be > 0")
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def sync_interval(self) -> int:
        if self.target_sync_interval is not None:
            return self.target_sync_interval
        return 1 if self.backend == "tabular" else 1000

    def to_dict(self) -> dict:
        return {
            "n_quantiles": self.n_quantiles,
            "gamma": self.gamma,
            "lr": self.lr,
            "buffer_size": self.buffer_size,
            "batch_size": self.batch_size,
            "gradient_steps": self.gradient_steps,
            "exploration_fraction": self.exploration_fraction,
            "exploration_final_eps": self.exploration_final_eps,
            "target_sync_interval": self.target_sync_interval,
            "backend": self.backend,
            "kappa": self.kappa,
            "hidden": list(self.hidden),
            "optimizer": self.optimizer,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AgentConfig":
        unknown = set(doc) - set(cls().to_dict())
        if unknown:
            raise ValueError(f"unknown agent config keys {sorted(unknown)}")
        return cls(**doc)


def epsilon(step: int, total_steps: int, cfg: AgentConfig) -> float:
    """Exploration rate: linear from 1 to the final value over the initial
    ``exploration_fraction`` share of training, constant afterwards."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside 0..{total_steps}")
    window = cfg.exploration_fraction * total_steps
    if step >= window:
        return cfg.exploration_final_eps
    return 1.0 + (cfg.exploration_final_eps - 1.0) * (step / window)


class Agent:
    """QR learner state: online atoms, target copy, replay buffer."""

    def __init__(self, cfg: AgentConfig, n_states: int, n_actions: int, seed=0):
        if n_states < 1 or n_actions < 1:
            raise ValueError("need at least one state and one action")
        self.cfg = cfg
        self.n_states = n_states
        self.n_actions = n_actions
        self.n = cfg.n_quantiles
        self.taus = midpoints(self.n)
        self._tau_col = self.taus.reshape(1, -1, 1)
        self.buffer = ReplayBuffer(cfg.buffer_size)
        self.steps_done = 0
        if cfg.backend == "tabular":
            self.theta = np.zeros((n_states, n_actions, self.n))
            self.theta_target = self.theta.copy()
            self.opt_m = np.zeros_like(self.theta)
            self.opt_v = np.zeros_like(self.theta)
            self.opt_t = 0
            self.net = None
            self.net_target = None
            self.adam = None
        else:
            dims = [n_states, *cfg.hidden, n_actions * self.n]
            self.theta = None
            self.theta_target = None
            self.net = nn.init(dims, seed)
            self.net_target = nn.clone(self.net)
            self.adam = nn.AdamState.for_net(self.net)

    # ----- distribution access ------------------------------------------

    def _onehot(self, states) -> np.ndarray:
        states = np.atleast_1d(np.asarray(states, dtype=np.int64))
        x = np.zeros((len(states), self.n_states))
        x[np.arange(len(states)), states] = 1.0
        return x

    def action_dists(self, s: int, target: bool = False) -> np.ndarray:
        """Per-action atoms at state s, shape (n_actions, n_quantiles)."""
        if self.cfg.backend == "tabular":
            table = self.theta_target if target else self.theta
            return table[s]
        net = self.net_target if target else self.net
        out = nn.forward(net, self._onehot(s)[0])
        return out.reshape(self.n_actions, self.n)

    def _dists_batch(self, states, target: bool) -> np.ndarray:
        if self.cfg.backend == "tabular":
            table = self.theta_target if target else self.theta
            return table[states]
        net = self.net_target if target else self.net
        out = nn.forward(net, self._onehot(states))
        return out.reshape(len(states), self.n_actions, self.n)

    def greedy_action(self, s: int) -> int:
        # inline argmax-of-means (policies.greedy_action semantics, hot path)
        return int(self.action_dists(s).mean(axis=1).argmax())

    def behavior_action(self, s: int, step: int, total_steps: int,
                        rng: np.random.Generator) -> int:
        """Epsilon-greedy over the online distribution means."""
        eps = epsilon(step, total_steps, self.cfg)
        if rng.random() < eps:
            return int(rng.integers(self.n_actions))
        return self.greedy_action(s)

    # ----- updates --------------------------------------------------------

    def td_deltas(self, batch: Batch) -> np.ndarray:
        """Residual tensor delta[b, i, j] for a minibatch.

        The bootstrap action a* is the target-side greedy action at s';
        terminal transitions use the bare reward as the target.
        """
        if len(batch) == 0:
            raise EmptyBatch("batch is empty")
        if self.cfg.backend == "tabular":
            th = self.theta[batch.s, batch.a]
        else:
            th = self._dists_batch(batch.s, target=False)[
                np.arange(len(batch)), batch.a]
        tt_all = self._dists_batch(batch.s_next, target=True)
        a_star = tt_all.mean(axis=2).argmax(axis=1)
        tt = tt_all[np.arange(len(batch)), a_star]
        alive = (~batch.done).astype(float)[:, None]
        target_atoms = batch.r[:, None] + self.cfg.gamma * alive * tt
        return target_atoms[:, None, :] - th[:, :, None]

    def qr_update(self, batch: Batch) -> float:
        """One optimizer step on the quantile regression loss; returns it.

        The reported loss per transition is sum_i E_j[rho_taui(delta_ij)],
        averaged over the batch. The tabular gradient is accumulated per
        sampled transition (a pair occurring twice in the batch contributes
        twice) and fed to the configured optimizer; "sgd" is the plain
        step theta <- theta - lr * grad, "adam" (the default) normalizes
        per-atom step sizes, which keeps rarely visited actions converging
        at the same pace as frequently visited ones. The network backend
        takes one batch-mean gradient. Target parameters are untouched.
        """
        delta = self.td_deltas(batch)
        b = len(batch)
        rho, drho = huber_terms(delta, self._tau_col, self.cfg.kappa)
        loss = float(rho.mean(axis=2).sum(axis=1).mean())
        # dL/dtheta_i picks up -1 from delta = target - theta_i
        g = -drho.mean(axis=2)
        if self.cfg.backend == "tabular":
            grad = np.zeros_like(self.theta)
            np.add.at(grad, (batch.s, batch.a), g)
            if self.cfg.optimizer == "sgd":
                self.theta -= self.cfg.lr * grad
            else:
                self.opt_t += 1
                b1, b2, eps = 0.9, 0.999, 1e-8
                self.opt_m *= b1
                self.opt_m += (1.0 - b1) * grad
                self.opt_v *= b2
                self.opt_v += (1.0 - b2) * grad * grad
                m_hat = self.opt_m / (1.0 - b1 ** self.opt_t)
                v_hat = self.opt_v / (1.0 - b2 ** self.opt_t)
                self.theta -= self.cfg.lr * m_hat / (np.sqrt(v_hat) + eps)
        else:
            grad_out = np.zeros((b, self.n_actions * self.n))
            cols = batch.a[:, None] * self.n + np.arange(self.n)[None, :]
            grad_out[np.arange(b)[:, None], cols] = g / b
            grads = nn.backward(self.net, self._onehot(batch.s), grad_out)
            if self.cfg.optimizer == "adam":
                nn.adam_step(self.net, grads, self.adam, self.cfg.lr)
            else:
                nn.sgd_step(self.net, grads, self.cfg.lr)
        return loss

    def sync_target(self) -> None:
        if self.cfg.backend == "tabular":
            np.copyto(self.theta_target, self.theta)
        else:
            self.net_target = nn.clone(self.net)


# functional aliases over the agent methods --------------------------------

def behavior_action(agent: Agent, s: int, step: int, total_steps: int,
                    rng: np.random.Generator) -> int:
    return agent.behavior_action(s, step, total_steps, rng)


def td_deltas(batch: Batch, agent: Agent) -> np.ndarray:
    return agent.td_deltas(batch)


def qr_update(agent: Agent, batch: Batch) -> float:
    return agent.qr_update(batch)


def sync_target(agent: Agent) -> None:
    agent.sync_target()

"""MDP over a road network: episode lifecycle, observations, reward model.

Transitions are fully deterministic (see ``roadnet.transition``); the only
stochastic element is the crosswalk travel-time reward, drawn from a
truncated Gaussian. Rewards encode travel-time cost:

* arriving at a goal pays 0 (routes end there),
* a loopback (staying put) pays -(r_base + r_loopback),
* arriving at a crosswalk pays a truncated-normal draw with mean -r_base,
  standard deviation ``crosswalk_std``, support [-2 r_base, 0],
* anything else pays -r_base.

Precedence for overlapping cases is goal > loopback > crosswalk > base,
so terminal arrivals always pay 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .roadnet import GraphMap, InvalidAction, transition


class EpisodeFinished(RuntimeError):
    """step() was called on a finished episode."""


class InternalError(RuntimeError):
    """Rejection sampling failed to accept within the retry cap."""


def stream_rng(*keys) -> np.random.Generator:
    """Deterministic PCG64 generator for a hierarchical stream key.

    Keys are non-negative integers (tuples are flattened), hashed through
    numpy's SeedSequence so distinct keys give independent streams. Used to
    derive per-episode, per-trial and per-evaluation streams that never
    collide across parallel runs.
    """
    flat: list[int] = []
    for k in keys:
        if isinstance(k, (tuple, list)):
            flat.extend(int(x) for x in k)
        else:
            flat.append(int(k))
    if any(x < 0 for x in flat):
        raise ValueError(f"stream keys must be non-negative, got {flat}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(flat)))


@dataclass
class EnvConfig:
    r_base: float = 1.0
    r_loopback: float = 0.0
    crosswalk_std: float = 1.0
    episode_cap: int = 1000
    obs_encoding: str = "one-hot"

    def __post_init__(self):
        if not self.r_base > 0:
            raise ValueError(f"r_base must be > 0, got {self.r_base}")
        if self.r_loopback < 0:
            raise ValueError(f"r_loopback must be >= 0, got {self.r_loopback}")
        if not self.crosswalk_std > 0:
            raise ValueError(f"crosswalk_std must be > 0, got {self.crosswalk_std}")
        if self.episode_cap < 1:
            raise ValueError(f"episode_cap must be >= 1, got {self.episode_cap}")
        if self.obs_encoding not in ("one-hot", "index"):
            raise ValueError(f"unknown obs_encoding {self.obs_encoding!r}")

    def to_dict(self) -> dict:
        return {
            "r_base": self.r_base,
            "r_loopback": self.r_loopback,
            "crosswalk_std": self.crosswalk_std,
            "episode_cap": self.episode_cap,
            "obs_encoding": self.obs_encoding,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EnvConfig":
        unknown = set(doc) - set(cls().to_dict())
        if unknown:
            raise ValueError(f"unknown env config keys {sorted(unknown)}")
        return cls(**doc)


def trunc_normal(mean: float, std: float, lo: float, hi: float,
                 rng: np.random.Generator, max_tries: int = 1_000_000) -> float:
    """Sample Normal(mean, std) conditioned on [lo, hi] by rejection."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    if not std > 0:
        raise ValueError(f"std must be > 0, got {std}")
    for _ in range(max_tries):
        x = rng.normal(mean, std)
        if lo <= x <= hi:
            return float(x)
    raise InternalError(f"no acceptance in {max_tries} draws for [{lo}, {hi}]")


def reward_sample(m: GraphMap, nxt: int, prev: int, cfg: EnvConfig,
                  rng: np.random.Generator) -> float:
    """Reward for arriving at ``nxt`` coming from ``prev``."""
    if nxt in m.goals:
        return 0.0
    if nxt == prev:
        return -(cfg.r_base + cfg.r_loopback)
    if nxt in m.crosswalks:
        return trunc_normal(-cfg.r_base, cfg.crosswalk_std,
                            -2.0 * cfg.r_base, 0.0, rng)
    return -cfg.r_base


class RoadEnv:
    """Single-owner mutable episode state over an immutable GraphMap.

    The reward stream of episode ``e`` is derived from the stream key
    (seed, e), so replaying a seed reproduces every trace bit-exactly and
    parallel trials never share randomness.
    """

    def __init__(self, graph: GraphMap, cfg: EnvConfig, seed=0):
        self.graph = graph
        self.cfg = cfg
        self._seed = seed
        self.episode = -1
        self.current = graph.start
        self.prev = graph.start
        self.steps = 0
        self.done = True   # must reset() before stepping
        self.rng = None

    def observe(self, s: int | None = None) -> np.ndarray:
        """Deterministic encoding of a state; identical on every visit."""
        s = self.current if s is None else s
        if self.cfg.obs_encoding == "index":
            return np.array([float(s)])
        vec = np.zeros(self.graph.n_states)
        vec[s] = 1.0
        return vec

    def reset(self, seed=None, episode: int | None = None) -> np.ndarray:
        if seed is not None:
            self._seed = seed
            self.episode = -1
        self.episode = self.episode + 1 if episode is None else episode
        self.rng = stream_rng(self._seed, self.episode)
        self.current = self.graph.start
        self.prev = self.graph.start
        self.steps = 0
        self.done = False
        return self.observe()

    def step(self, action: int):
        """Advance one step; returns (observation, reward, done)."""
        if self.done:
            raise EpisodeFinished("episode is over; call reset()")
        nxt = transition(self.graph, self.current, action)
        reward = reward_sample(self.graph, nxt, self.current, self.cfg, self.rng)
        self.prev = self.current
        self.current = nxt
        self.steps += 1
        self.done = (nxt in self.graph.goals) or (self.steps >= self.cfg.episode_cap)
        return self.observe(), reward, self.done

    def at_goal(self) -> bool:
        return self.current in self.graph.goals

    # snapshot hooks used by training checkpoints
    def get_state(self) -> dict:
        return {
            "current": self.current,
            "prev": self.prev,
            "steps": self.steps,
            "episode": self.episode,
            "done": self.done,
            "rng": None if self.rng is None else self.rng.bit_generator.state,
        }

    def set_state(self, state: dict) -> None:
        self.current = int(state["current"])
        self.prev = int(state["prev"])
        self.steps = int(state["steps"])
        self.episode = int(state["episode"])
        self.done = bool(state["done"])
        if state["rng"] is None:
            self.rng = None
        else:
            self.rng = stream_rng(0)
            self.rng.bit_generator.state = state["rng"]


def reset(graph: GraphMap, cfg: EnvConfig, seed):
    """Build an environment and start its first episode."""
    env = RoadEnv(graph, cfg, seed)
    return env, env.reset(episode=0)

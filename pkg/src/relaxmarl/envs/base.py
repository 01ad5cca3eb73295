from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence, TextIO

import numpy as np


class EnvConfigError(ValueError):
    pass


class ActionError(ValueError):
    pass


@dataclass(frozen=True)
class PosgSpec:
    n_agents: int
    n_actions: int
    obs_size: int
    max_steps: int
    gamma: float = 0.99

    def __post_init__(self):
        if self.n_agents < 2:
            raise EnvConfigError("a POSG needs at least two agents")
        if self.n_actions < 2:
            raise EnvConfigError("action arity must be at least 2")
        if self.max_steps < 1:
            raise EnvConfigError("episodes need at least one step")
        if not 0 < self.gamma <= 1:
            raise EnvConfigError("gamma must lie in (0, 1]")


@dataclass
class JointStep:
    observations: list[np.ndarray]
    rewards: np.ndarray
    done: bool
    step_index: int


class GridEnv:
    """Common surface for the grid-world POSGs."""

    spec: PosgSpec
    action_names: tuple[str, ...]

    def reset(self, seed: int | None = None) -> JointStep:
        raise NotImplementedError

    def step(self, actions: Sequence[int]) -> JointStep:
        raise NotImplementedError

    def observe(self, agent: int, sight: int | None = None) -> np.ndarray:
        raise NotImplementedError

    def snapshot(self) -> tuple:
        """Hashable copy of the full dynamic state (used by tests)."""
        raise NotImplementedError

    def _check_actions(self, actions) -> np.ndarray:
        acts = np.asarray(actions)
        if acts.shape != (self.spec.n_agents,):
            raise ActionError(f"expected {self.spec.n_agents} actions, got shape {acts.shape}")
        if not np.issubdtype(acts.dtype, np.integer):
            raise ActionError("actions must be integer indices")
        if np.any(acts < 0) or np.any(acts >= self.spec.n_actions):
            raise ActionError(f"action index out of range [0, {self.spec.n_actions})")
        return acts

    def _joint(self, rewards, done) -> JointStep:
        obs = [self.observe(i) for i in range(self.spec.n_agents)]
        return JointStep(obs, np.asarray(rewards, dtype=np.float64), bool(done), self.t)


def rollout_trace(env: GridEnv, policy: Callable[[list[np.ndarray]], Sequence[int]],
                  seed: int, out: TextIO) -> float:
    """Run one episode, writing one JSON line per agent per step; returns the summed reward."""
    js = env.reset(seed)
    total = 0.0
    while not js.done:
        acts = [int(a) for a in policy(js.observations)]
        js = env.step(acts)
        total += float(js.rewards.sum())
        for i, a in enumerate(acts):
            out.write(json.dumps({"step": js.step_index, "agent": i, "action": a,
                                  "reward": float(js.rewards[i]), "done": js.done}) + "\n")
    return total

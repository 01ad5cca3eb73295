"""Compact Level-Based Foraging.

Agents and foods carry levels. A food is collected when the agents standing
orthogonally next to it and issuing LOAD have a combined level at least the
food's level. Each loader is paid ``agent_level * food_level`` divided by
``(sum of loader levels) * (sum of all initial food levels)``, so one
episode pays out at most 1 in total.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import EnvConfigError, GridEnv, PosgSpec

NOOP, UP, DOWN, LEFT, RIGHT, LOAD = range(6)
ACTION_NAMES = ("NOOP", "UP", "DOWN", "LEFT", "RIGHT", "LOAD")
MOVES = {UP: (0, -1), DOWN: (0, 1), LEFT: (-1, 0), RIGHT: (1, 0)}
MASKED = -1.0


@dataclass(frozen=True)
class LbfConfig:
    width: int = 8
    height: int = 8
    n_agents: int = 2
    n_foods: int = 2
    sight: int = 0  # 0 = full observability
    max_level: int = 2
    max_steps: int = 50
    gamma: float = 0.99
    seed: int = 0
    # "any": level in 1..sum(levels); "strong": max(levels)..sum(levels); "coop": sum(levels)
    food_rule: str = "any"

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise EnvConfigError("grid must be at least 2x2")
        if self.food_rule not in ("any", "strong", "coop"):
            raise EnvConfigError(f"unknown food rule {self.food_rule!r}")
        if self.n_foods < 1 or self.max_level < 1 or self.sight < 0:
            raise EnvConfigError("invalid LBF config")


class LevelBasedForaging(GridEnv):
    action_names = ACTION_NAMES
    max_placement_attempts = 100

    def __init__(self, config: LbfConfig):
        self.config = config
        self.spec = PosgSpec(config.n_agents, len(ACTION_NAMES),
                             3 * (config.n_agents + config.n_foods), config.max_steps, config.gamma)
        self.rng = np.random.default_rng(config.seed)
        self.t = 0
        self.agent_pos = np.zeros((config.n_agents, 2), dtype=np.int64)
        self.agent_level = np.ones(config.n_agents, dtype=np.int64)
        self.food_pos = np.zeros((config.n_foods, 2), dtype=np.int64)
        self.food_level = np.ones(config.n_foods, dtype=np.int64)
        self.food_alive = np.zeros(config.n_foods, dtype=bool)
        self.total_food_level = 1

    # -- dynamics ---------------------------------------------------------

    def reset(self, seed: int | None = None):
        c = self.config
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        for _ in range(self.max_placement_attempts):
            if self._place():
                break
        else:
            raise EnvConfigError(f"could not place {c.n_agents} agents and {c.n_foods} foods "
                                 f"on a {c.width}x{c.height} grid")
        self.t = 0
        return self._joint(np.zeros(c.n_agents), False)

    def _place(self) -> bool:
        c = self.config
        rng = self.rng
        self.agent_level = rng.integers(1, c.max_level + 1, size=c.n_agents)
        # interior cells keep every side of a food reachable
        xs = range(1, c.width - 1) if c.width > 2 else range(c.width)
        ys = range(1, c.height - 1) if c.height > 2 else range(c.height)
        candidates = [(x, y) for y in ys for x in xs]
        foods: list[tuple[int, int]] = []
        for _ in range(c.n_foods):
            free = [p for p in candidates
                    if all(max(abs(p[0] - q[0]), abs(p[1] - q[1])) > 1 for q in foods)]
            if not free:
                return False
            foods.append(free[rng.integers(len(free))])
        taken = set(foods)
        agents = []
        for _ in range(c.n_agents):
            free = [(x, y) for y in range(c.height) for x in range(c.width) if (x, y) not in taken]
            if not free:
                return False
            p = free[rng.integers(len(free))]
            agents.append(p)
            taken.add(p)
        self.food_pos = np.array(foods, dtype=np.int64)
        self.agent_pos = np.array(agents, dtype=np.int64)
        team = int(self.agent_level.sum())
        if c.food_rule == "coop":
            self.food_level = np.full(c.n_foods, team, dtype=np.int64)
        else:
            low = 1 if c.food_rule == "any" else int(self.agent_level.max())
            self.food_level = rng.integers(low, team + 1, size=c.n_foods)
        self.food_alive = np.ones(c.n_foods, dtype=bool)
        self.total_food_level = int(self.food_level.sum())
        return True

    def step(self, actions):
        acts = self._check_actions(actions)
        c = self.config
        rewards = np.zeros(c.n_agents)
        movers = [i for i in range(c.n_agents) if acts[i] in MOVES]
        if movers:
            blocked = {tuple(p) for p in self.food_pos[self.food_alive]}
            for i in self.rng.permutation(c.n_agents):
                if acts[i] not in MOVES:
                    continue
                dx, dy = MOVES[int(acts[i])]
                x, y = self.agent_pos[i, 0] + dx, self.agent_pos[i, 1] + dy
                if not (0 <= x < c.width and 0 <= y < c.height):
                    continue
                if (x, y) in blocked:
                    continue
                if any((self.agent_pos[j, 0] == x and self.agent_pos[j, 1] == y)
                       for j in range(c.n_agents) if j != i):
                    continue
                self.agent_pos[i] = (x, y)
        loaders = acts == LOAD
        if loaders.any():
            for f in np.flatnonzero(self.food_alive):
                dist = np.abs(self.agent_pos - self.food_pos[f]).sum(axis=1)
                team = np.flatnonzero(loaders & (dist == 1))
                if team.size == 0:
                    continue
                team_level = self.agent_level[team].sum()
                if team_level < self.food_level[f]:
                    continue
                self.food_alive[f] = False
                rewards[team] += (self.agent_level[team] * self.food_level[f]
                                  / (team_level * self.total_food_level))
        self.t += 1
        done = (not self.food_alive.any()) or self.t >= c.max_steps
        return self._joint(rewards, done)

    # -- observations -----------------------------------------------------

    def observe(self, agent: int, sight: int | None = None) -> np.ndarray:
        """Triples per entity: self (x, y, level), then others as (dx, dy, level).

        Entities beyond Chebyshev distance ``sight`` (when sight > 0) and
        collected foods are encoded as the sentinel -1 in all three fields.
        """
        c = self.config
        s = c.sight if sight is None else sight
        me = self.agent_pos[agent]
        obs = np.full(self.spec.obs_size, MASKED)
        obs[0:3] = (me[0], me[1], self.agent_level[agent])
        slot = 1
        entities = [(self.agent_pos[j], self.agent_level[j], True)
                    for j in range(c.n_agents) if j != agent]
        entities += [(self.food_pos[f], self.food_level[f], self.food_alive[f])
                     for f in range(c.n_foods)]
        for pos, level, alive in entities:
            d = pos - me
            if alive and (s <= 0 or max(abs(d[0]), abs(d[1])) <= s):
                obs[3 * slot:3 * slot + 3] = (d[0], d[1], level)
            slot += 1
        return obs

    def snapshot(self) -> tuple:
        return (self.t, self.agent_pos.tobytes(), self.agent_level.tobytes(),
                self.food_pos.tobytes(), self.food_level.tobytes(), self.food_alive.tobytes())

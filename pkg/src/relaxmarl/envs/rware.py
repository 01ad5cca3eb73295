"""Compact Multi-Robot Warehouse.

The tiny layout is 10 columns by 11 rows: three double shelf columns eight
cells tall, separated by corridor columns, with two goal cells centred on
the bottom row. Robots are oriented and move one cell forward at a time.
A robot pays out 1 whenever it stands on a goal carrying a requested shelf;
that request is then replaced by a fresh one. Episodes only end on time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import EnvConfigError, GridEnv, PosgSpec

NOOP, FORWARD, TURN_LEFT, TURN_RIGHT, TOGGLE_LOAD = range(5)
ACTION_NAMES = ("NOOP", "FORWARD", "TURN_LEFT", "TURN_RIGHT", "TOGGLE_LOAD")
# orientation order is clockwise so turning is +/-1 mod 4
DIRS = ((0, -1), (1, 0), (0, 1), (-1, 0))  # up, right, down, left
N_CHANNELS = 4  # wall, shelf, requested shelf, other robot


@dataclass(frozen=True)
class RwareConfig:
    width: int = 10
    height: int = 11
    shelf_columns: int = 3
    shelf_rows: int = 8
    n_agents: int = 2
    request_queue: int = 0  # 0 = one request per agent
    sight: int = 1
    max_steps: int = 500
    gamma: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if self.width < 3 * self.shelf_columns + 1 or self.height < self.shelf_rows + 3:
            raise EnvConfigError("grid too small for the shelf layout")
        if self.sight < 1:
            raise EnvConfigError("RWARE sight must be >= 1")

    @property
    def n_requests(self) -> int:
        return self.request_queue or self.n_agents


def tiny_layout(config: RwareConfig) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Shelf slots and goal cells; everything else is corridor."""
    slots = [(3 * c + dx, y) for c in range(config.shelf_columns) for dx in (1, 2)
             for y in range(1, config.shelf_rows + 1)]
    mid = config.width // 2
    goals = [(mid - 1, config.height - 1), (mid, config.height - 1)]
    return slots, goals


class RoboticWarehouse(GridEnv):
    action_names = ACTION_NAMES

    def __init__(self, config: RwareConfig):
        self.config = config
        slots, goals = tiny_layout(config)
        if len(slots) < config.n_requests:
            raise EnvConfigError("more requests than shelves")
        if config.n_agents > config.width * config.height:
            raise EnvConfigError("more robots than cells")
        self.slots = slots
        self.slot_set = set(slots)
        self.goals = set(goals)
        if self.goals & self.slot_set:
            raise EnvConfigError("goal cells overlap shelf slots")
        win = 2 * config.sight + 1
        self.spec = PosgSpec(config.n_agents, len(ACTION_NAMES), win * win * N_CHANNELS + 4 + 1 + 2,
                             config.max_steps, config.gamma)
        self.rng = np.random.default_rng(config.seed)
        self.t = 0
        self.agent_pos = np.zeros((config.n_agents, 2), dtype=np.int64)
        self.agent_dir = np.zeros(config.n_agents, dtype=np.int64)
        self.carrying = np.full(config.n_agents, -1, dtype=np.int64)
        self.shelf_pos = np.array(slots, dtype=np.int64)
        self.requests: list[int] = []

    def reset(self, seed: int | None = None):
        c = self.config
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.shelf_pos = np.array(self.slots, dtype=np.int64)
        cells = c.width * c.height
        flat = self.rng.choice(cells, size=c.n_agents, replace=False)
        self.agent_pos = np.stack([flat % c.width, flat // c.width], axis=1).astype(np.int64)
        self.agent_dir = self.rng.integers(0, 4, size=c.n_agents)
        self.carrying = np.full(c.n_agents, -1, dtype=np.int64)
        self.requests = [int(s) for s in self.rng.choice(len(self.slots), size=c.n_requests, replace=False)]
        self.t = 0
        return self._joint(np.zeros(c.n_agents), False)

    def _resting_shelf_at(self, x: int, y: int) -> int:
        hits = np.flatnonzero((self.shelf_pos[:, 0] == x) & (self.shelf_pos[:, 1] == y))
        for s in hits:
            if s not in self.carrying:
                return int(s)
        return -1

    def step(self, actions):
        acts = self._check_actions(actions)
        c = self.config
        rewards = np.zeros(c.n_agents)
        for i in range(c.n_agents):
            if acts[i] == TURN_LEFT:
                self.agent_dir[i] = (self.agent_dir[i] - 1) % 4
            elif acts[i] == TURN_RIGHT:
                self.agent_dir[i] = (self.agent_dir[i] + 1) % 4
        if np.any(acts == FORWARD):
            for i in self.rng.permutation(c.n_agents):
                if acts[i] != FORWARD:
                    continue
                dx, dy = DIRS[self.agent_dir[i]]
                x, y = self.agent_pos[i, 0] + dx, self.agent_pos[i, 1] + dy
                if not (0 <= x < c.width and 0 <= y < c.height):
                    continue
                if np.any((self.agent_pos[:, 0] == x) & (self.agent_pos[:, 1] == y)):
                    continue
                if self.carrying[i] >= 0 and self._resting_shelf_at(x, y) >= 0:
                    continue
                self.agent_pos[i] = (x, y)
                if self.carrying[i] >= 0:
                    self.shelf_pos[self.carrying[i]] = (x, y)
        for i in range(c.n_agents):
            if acts[i] != TOGGLE_LOAD:
                continue
            x, y = (int(v) for v in self.agent_pos[i])
            if self.carrying[i] < 0:
                s = self._resting_shelf_at(x, y)
                if s >= 0:
                    self.carrying[i] = s
            elif (x, y) in self.slot_set and self._resting_shelf_at(x, y) < 0:
                self.carrying[i] = -1
        for i in range(c.n_agents):
            s = int(self.carrying[i])
            if s >= 0 and s in self.requests and tuple(int(v) for v in self.agent_pos[i]) in self.goals:
                rewards[i] += 1.0
                pool = [k for k in range(len(self.slots)) if k not in self.requests]
                self.requests[self.requests.index(s)] = int(pool[self.rng.integers(len(pool))])
        self.t += 1
        return self._joint(rewards, self.t >= c.max_steps)

    def observe(self, agent: int, sight: int | None = None) -> np.ndarray:
        """Egocentric (2s+1)^2 window x 4 channels, heading one-hot, carrying flag, (x, y) / size."""
        c = self.config
        s = c.sight if sight is None else sight
        win = 2 * s + 1
        grid = np.zeros((win, win, N_CHANNELS))
        ax, ay = self.agent_pos[agent]
        requested = set(self.requests)
        for wy in range(win):
            for wx in range(win):
                x, y = ax + wx - s, ay + wy - s
                if not (0 <= x < c.width and 0 <= y < c.height):
                    grid[wy, wx, 0] = 1.0
                    continue
                here = np.flatnonzero((self.shelf_pos[:, 0] == x) & (self.shelf_pos[:, 1] == y))
                if here.size:
                    grid[wy, wx, 1] = 1.0
                    if any(int(h) in requested for h in here):
                        grid[wy, wx, 2] = 1.0
                others = (self.agent_pos[:, 0] == x) & (self.agent_pos[:, 1] == y)
                others[agent] = False
                if others.any():
                    grid[wy, wx, 3] = 1.0
        heading = np.zeros(4)
        heading[self.agent_dir[agent]] = 1.0
        tail = [float(self.carrying[agent] >= 0), ax / (c.width - 1), ay / (c.height - 1)]
        return np.concatenate([grid.ravel(), heading, tail])

    def snapshot(self) -> tuple:
        return (self.t, self.agent_pos.tobytes(), self.agent_dir.tobytes(), self.carrying.tobytes(),
                self.shelf_pos.tobytes(), tuple(self.requests))

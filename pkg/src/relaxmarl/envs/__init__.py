"""Grid-world POSG tasks addressable by name."""

from __future__ import annotations

import re

from .base import ActionError, EnvConfigError, GridEnv, JointStep, PosgSpec, rollout_trace
from .lbf import LbfConfig, LevelBasedForaging
from .rware import RoboticWarehouse, RwareConfig

# the nine benchmark tasks, then desk-scale smoke variants
BENCHMARK_TASKS = (
    "lbf-8x8-2p-2f", "lbf-8x8-2p-2f-2s", "lbf-10x10-3p-3f", "lbf-10x10-3p-3f-2s",
    "lbf-15x15-3p-5f", "lbf-15x15-4p-3f", "lbf-15x15-4p-5f", "rware-tiny-2ag", "rware-tiny-4ag",
)
SMOKE_TASKS = ("lbf-6x6-2p-1f", "lbf-6x6-2p-1f-coop", "lbf-5x5-2p-1f", "rware-tiny-2ag-short")
TASKS = BENCHMARK_TASKS + SMOKE_TASKS

_LBF = re.compile(r"^(?:lbf-)?(\d+)x(\d+)-(\d+)p-(\d+)f(?:-(\d+)s)?(-coop)?$")
_RWARE = re.compile(r"^(?:rware-)?tiny-(\d+)ag(-short)?$")


def canonical_name(name: str) -> str:
    """Accept bare names such as ``8x8-2p-2f`` or ``tiny-4ag``."""
    if name in TASKS:
        return name
    for prefix in ("lbf-", "rware-"):
        if prefix + name in TASKS:
            return prefix + name
    raise EnvConfigError(f"unknown task {name!r}; known tasks: {', '.join(TASKS)}")


def make_env(name: str, seed: int = 0, **overrides) -> GridEnv:
    name = canonical_name(name)
    m = _LBF.match(name)
    if m:
        w, h, p, f, s, coop = m.groups()
        cfg = dict(width=int(w), height=int(h), n_agents=int(p), n_foods=int(f),
                   sight=int(s or 0), seed=seed, food_rule="coop" if coop else "any")
        cfg.update(overrides)
        return LevelBasedForaging(LbfConfig(**cfg))
    m = _RWARE.match(name)
    n, short = m.groups()
    cfg = dict(n_agents=int(n), seed=seed, max_steps=100 if short else 500)
    cfg.update(overrides)
    return RoboticWarehouse(RwareConfig(**cfg))


__all__ = [
    "ActionError", "EnvConfigError", "GridEnv", "JointStep", "PosgSpec", "LbfConfig",
    "LevelBasedForaging", "RwareConfig", "RoboticWarehouse", "TASKS", "BENCHMARK_TASKS",
    "SMOKE_TASKS", "canonical_name", "make_env", "rollout_trace",
]

"""Finite-difference checks for the critic and actor parameter gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .estimators import EstimatorConfig, surrogate_from_noise
from .maddpg import AgentNets, Batch, _joint_input, actor_graph, critic_loss


def relative_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray]) -> float:
    """||a - n|| / max(||a||, ||n||) over all parameters stacked."""
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return float(np.linalg.norm(a - n) / scale) if scale > 0 else 0.0


def _central_differences(params: Sequence[Tensor], value: Callable[[], float], h: float):
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        flat, gflat = p.data.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = value()
            flat[j] = orig - h
            down = value()
            flat[j] = orig
            gflat[j] = (up - down) / (2 * h)
        out.append(g)
    return out


def critic_gradient_error(agents: Sequence[AgentNets], batch: Batch, i: int, gamma: float,
                          h: float = 1e-6) -> float:
    """Relative error of d(critic loss)/d(critic params) against central differences."""
    params = agents[i].critic.params
    analytic = ad.grad_of(critic_loss(agents, batch, i, gamma), params)
    numeric = _central_differences(
        params, lambda: float(critic_loss(agents, batch, i, gamma).data), h)
    return relative_error(analytic, numeric)


def actor_gradient_error(agents: Sequence[AgentNets], batch: Batch, i: int,
                         estimator: EstimatorConfig, rng: np.random.Generator, t: int = 0,
                         h: float = 1e-6) -> float:
    """Relative error of the actor gradient against differences of the relaxed objective.

    The estimator noise and hard sample are pinned. With ``c`` the critic
    gradient at the hard joint action, the straight-through gradient equals
    the gradient of ``<c, surrogate(zeta(theta))>``, which is smooth in theta.
    """
    g = actor_graph(agents, batch, i, estimator, rng, t)
    params = agents[i].policy.params
    analytic = ad.grad_of(g.loss, params)

    leaf = Tensor(g.relaxed.hard, requires_grad=True)
    others = iter(g.other_actions)
    acts = [leaf if j == i else next(others) for j in range(len(agents))]
    q = agents[i].critic(_joint_input(batch.obs, acts))
    (c,) = ad.grad_of(ad.mul(ad.mean(q), -1.0), [leaf])

    obs_i = batch.obs[:, i, :]
    noise, tau = g.relaxed.noise, g.relaxed.tau

    def value() -> float:
        zeta = Tensor(agents[i].policy.predict(obs_i))
        return float((c * surrogate_from_noise(zeta, noise, tau).data).sum())

    return relative_error(analytic, _central_differences(params, value, h))

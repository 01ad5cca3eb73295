"""Discrete gradient estimators for categorical samples.

Every estimator returns a :class:`RelaxedAction`: a hard one-hot sample used
in the forward pass, plus a relaxed surrogate on the autodiff tape that
carries the backward pass. All surrogates have the common form

    mean_k softmax_tau(zeta + noise_k)

where ``noise`` is treated as a constant. For STGS it is Gumbel noise, for
GRMC-K it is K draws of Gumbel noise conditioned on the sampled index, and
for GST it is the deterministic perturbation m1 + m2. Keeping the noise
explicit lets callers pin it (finite-difference checks, benchmarks).

Logits may be a single vector ``(N,)`` or a batch ``(B, N)``; every
operation acts row-wise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import InvalidTemperatureError, Tensor

UNIFORM_EPS = 1e-12

KINDS = ("STGS1", "STGST", "TAGS", "GRMCK", "GST")


class EstimatorConfigError(ValueError):
    pass


def sample_gumbel(shape, rng: np.random.Generator) -> np.ndarray:
    """Standard Gumbel draws, ``-log(-log(u))`` with u clamped away from 0 and 1."""
    u = rng.random(shape)
    return gumbel_from_uniform(u)


def gumbel_from_uniform(u) -> np.ndarray:
    u = np.clip(np.asarray(u, dtype=np.float64), UNIFORM_EPS, 1.0 - UNIFORM_EPS)
    return -np.log(-np.log(u))


def one_hot(index, n: int) -> np.ndarray:
    index = np.asarray(index)
    out = np.zeros(index.shape + (n,))
    np.put_along_axis(out, index[..., None], 1.0, axis=-1)
    return out


def gumbel_argmax(zeta: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Exact categorical draw from softmax(zeta) via the Gumbel-max trick.

    Returns ``(index, gumbel_noise)``; ties resolve to the lowest index
    (``np.argmax`` semantics).
    """
    zeta = np.asarray(zeta, dtype=np.float64)
    g = sample_gumbel(zeta.shape, rng)
    return np.argmax(zeta + g, axis=-1), g


def conditional_gumbel(zeta, index, rng: np.random.Generator, k: int | None = None) -> np.ndarray:
    """Gumbel-perturbed logits ``zeta + g`` conditioned on ``argmax = index``.

    Uses the exponential-race construction: with E_j ~ Exp(1) i.i.d. and
    Z = sum_j exp(zeta_j), the selected coordinate is ``-log E_i + log Z``
    and every other coordinate is ``-log(E_j / exp(zeta_j) + E_i / Z)``.
    With ``k`` given, a leading axis of k independent draws is added.
    """
    zeta = np.asarray(zeta, dtype=np.float64)
    index = np.asarray(index)
    shape = zeta.shape if k is None else (k,) + zeta.shape
    e = rng.exponential(size=shape)
    # shift by the row max so Z and exp(zeta) stay representable
    shift = zeta.max(axis=-1, keepdims=True)
    zs = zeta - shift
    log_z = np.log(np.exp(zs).sum(axis=-1, keepdims=True))
    mask = one_hot(index, zeta.shape[-1]).astype(bool)
    mask = np.broadcast_to(mask, shape)
    e_sel = np.take_along_axis(e, np.broadcast_to(index[..., None], shape[:-1] + (1,)), axis=-1)
    selected = -np.log(e) + log_z
    others = -np.log(e * np.exp(-zs) + e_sel * np.exp(-log_z))
    return np.where(mask, selected, others) + shift


def gst_perturbations(zeta, a, kappa: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic GST perturbations ``(m1, m2)`` for one-hot sample ``a``.

    m1 lifts the selected logit to the row maximum; m2 pushes every
    unselected logit at least ``kappa`` below that maximum.
    """
    zeta = np.asarray(zeta, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    top = zeta.max(axis=-1, keepdims=True)
    m1 = (top - (zeta * a).sum(axis=-1, keepdims=True)) * a
    m2 = -np.maximum(kappa + zeta - top, 0.0) * (1.0 - a)
    return m1, m2


@dataclass
class RelaxedAction:
    """Hard one-hot sample with its relaxed surrogate.

    ``noise`` has a leading K axis (K=1 except for GRMC) and holds the
    constant perturbation added to the logits inside the surrogate.
    """

    hard: np.ndarray
    surrogate: Tensor
    index: np.ndarray
    noise: np.ndarray
    tau: float

    def output(self) -> Tensor:
        return ad.straight_through(self.hard, self.surrogate)


def surrogate_from_noise(zeta: Tensor, noise: np.ndarray, tau: float) -> Tensor:
    """``mean_k softmax_tau(zeta + noise[k])`` with the noise held constant."""
    if noise.shape[0] == 1:
        return ad.softmax_tau(ad.add(zeta, noise[0]), tau)
    return ad.mean(ad.softmax_tau(ad.add(zeta, noise), tau), axis=0)


def _check_tau(tau: float) -> None:
    if not (isinstance(tau, (int, float)) and math.isfinite(tau) and tau > 0):
        raise InvalidTemperatureError(f"temperature must be positive and finite, got {tau}")


def _logits(zeta) -> Tensor:
    return zeta if isinstance(zeta, Tensor) else Tensor(zeta)


def stgs_sample(zeta, tau: float, rng: np.random.Generator) -> RelaxedAction:
    """Straight-through Gumbel-softmax: hard = argmax(zeta + g), soft = softmax_tau(zeta + g)."""
    _check_tau(tau)
    zeta = _logits(zeta)
    index, g = gumbel_argmax(zeta.data, rng)
    noise = g[None]
    return RelaxedAction(one_hot(index, zeta.shape[-1]), surrogate_from_noise(zeta, noise, tau),
                         index, noise, tau)


def grmc_sample(zeta, tau: float, k: int, rng: np.random.Generator) -> RelaxedAction:
    """Gumbel-Rao Monte Carlo: average K relaxations under noise conditioned on the draw."""
    _check_tau(tau)
    if not (isinstance(k, (int, np.integer)) and k >= 1):
        raise EstimatorConfigError(f"K must be a positive integer, got {k!r}")
    zeta = _logits(zeta)
    index, _ = gumbel_argmax(zeta.data, rng)
    noise = conditional_gumbel(zeta.data, index, rng, k=k) - zeta.data
    return RelaxedAction(one_hot(index, zeta.shape[-1]), surrogate_from_noise(zeta, noise, tau),
                         index, noise, tau)


def gst_sample(zeta, tau: float, kappa: float, rng: np.random.Generator) -> RelaxedAction:
    """Gapped straight-through: soft = softmax_tau(zeta + m1 + m2)."""
    _check_tau(tau)
    if not (math.isfinite(kappa) and kappa > 0):
        raise EstimatorConfigError(f"kappa must be positive, got {kappa!r}")
    zeta = _logits(zeta)
    index, _ = gumbel_argmax(zeta.data, rng)
    a = one_hot(index, zeta.shape[-1])
    m1, m2 = gst_perturbations(zeta.data, a, kappa)
    noise = (m1 + m2)[None]
    return RelaxedAction(a, surrogate_from_noise(zeta, noise, tau), index, noise, tau)


@dataclass(frozen=True)
class TemperatureSchedule:
    kind: str = "constant"
    tau_start: float = 1.0
    tau_end: float = 1.0
    horizon: int = 1

    def __post_init__(self):
        if self.kind not in ("constant", "exponential"):
            raise EstimatorConfigError(f"unknown schedule kind {self.kind!r}")
        _check_tau(self.tau_start)
        _check_tau(self.tau_end)
        if self.horizon < 1:
            raise EstimatorConfigError("annealing horizon must be >= 1 step")

    def __call__(self, t: int) -> float:
        return anneal_temperature(self, t)


def anneal_temperature(schedule: TemperatureSchedule, t: int) -> float:
    if t < 0:
        raise ValueError("step must be non-negative")
    if schedule.kind == "constant":
        return schedule.tau_start
    frac = min(t, schedule.horizon) / schedule.horizon
    return schedule.tau_start * (schedule.tau_end / schedule.tau_start) ** frac


@dataclass(frozen=True)
class EstimatorConfig:
    """Which estimator to use and its hyperparameters.

    ``tau`` is used by STGST, GRMCK and GST; STGS1 always runs at 1.0 and
    TAGS reads its temperature from ``schedule``.
    """

    kind: str = "STGS1"
    tau: float = 1.0
    schedule: TemperatureSchedule | None = None
    K: int = 10
    kappa: float = 1.0
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise EstimatorConfigError(f"unknown estimator kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "STGS1" and self.tau != 1.0:
            object.__setattr__(self, "tau", 1.0)
        _check_tau(self.tau)
        if not (isinstance(self.K, (int, np.integer)) and self.K >= 1):
            raise EstimatorConfigError(f"K must be a positive integer, got {self.K!r}")
        if not self.kappa > 0:
            raise EstimatorConfigError(f"kappa must be positive, got {self.kappa!r}")
        if self.kind == "TAGS" and self.schedule is None:
            raise EstimatorConfigError("TAGS needs a temperature schedule")

    @property
    def label(self) -> str:
        if self.kind == "GRMCK":
            return f"GRMC{self.K}"
        return self.kind

    def with_horizon(self, horizon: int) -> "EstimatorConfig":
        if self.schedule is None:
            return self
        return replace(self, schedule=replace(self.schedule, horizon=max(1, int(horizon))))

    def temperature(self, t: int = 0) -> float:
        if self.kind == "TAGS":
            return anneal_temperature(self.schedule, t)
        return self.tau

    def relax(self, zeta, rng: np.random.Generator, t: int = 0) -> RelaxedAction:
        tau = self.temperature(t)
        if self.kind in ("STGS1", "STGST", "TAGS"):
            return stgs_sample(zeta, tau, rng)
        if self.kind == "GRMCK":
            return grmc_sample(zeta, tau, self.K, rng)
        return gst_sample(zeta, tau, self.kappa, rng)

    def sample_hard(self, zeta, rng: np.random.Generator) -> np.ndarray:
        """Forward path only: index drawn from softmax(zeta).

        Identical for every kind, so it consumes the rng identically too.
        """
        zeta = zeta.data if isinstance(zeta, Tensor) else np.asarray(zeta, dtype=np.float64)
        index, _ = gumbel_argmax(zeta, rng)
        return index


def make_estimator(kind: str, *, tau: float | None = None, K: int = 10, kappa: float = 1.0,
                   tau_start: float = 2.0, tau_end: float = 0.3, horizon: int = 1) -> EstimatorConfig:
    """Build an EstimatorConfig with the documented defaults filled in.

    STGST defaults to tau=0.5 and GRMCK/GST to tau=1.0 when ``tau`` is None.
    """
    if kind == "TAGS":
        sched = TemperatureSchedule("exponential", tau_start, tau_end, horizon)
        return EstimatorConfig(kind, tau=tau_start, schedule=sched, K=K, kappa=kappa)
    if tau is None:
        tau = 0.5 if kind == "STGST" else 1.0
    return EstimatorConfig(kind, tau=tau, K=K, kappa=kappa)

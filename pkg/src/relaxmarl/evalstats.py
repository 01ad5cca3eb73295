"""Return summaries, Welch's t-test, confidence intervals, gradient variance."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

GRADVAR_COLUMNS = ("step", "agent", "layer", "param_class", "variance")
SUMMARY_COLUMNS = ("task", "estimator", "max_return", "max_ci", "avg_return", "avg_ci",
                   "significant_vs_best")


class EmptyInputError(ValueError):
    pass


class InsufficientSampleError(ValueError):
    pass


def mean_ci(values, confidence: float = 0.95) -> tuple[float, float]:
    """Sample mean and Student-t half-width; half-width is NaN for n = 1."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise EmptyInputError("no values")
    m = float(x.mean())
    if x.size == 1:
        return m, float("nan")
    sem = x.std(ddof=1) / np.sqrt(x.size)
    crit = stats.t.ppf(0.5 + confidence / 2, df=x.size - 1)
    return m, float(crit * sem)


@dataclass
class ReturnCurve:
    steps: np.ndarray
    returns: np.ndarray  # [n_seeds, n_evals]

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.int64)
        self.returns = np.atleast_2d(np.asarray(self.returns, dtype=np.float64))
        if self.returns.size == 0 or self.steps.size == 0:
            raise EmptyInputError("return curve is empty")
        if self.returns.shape[1] != self.steps.size:
            raise ValueError("returns must have one column per evaluation step")
        if np.isnan(self.returns).any():
            raise ValueError("return curve contains NaN")
        if np.any(np.diff(self.steps) <= 0):
            raise ValueError("evaluation steps must be strictly increasing")


@dataclass
class ReturnSummary:
    max_return: float
    max_ci: float
    max_step: int
    avg_return: float
    avg_ci: float
    max_samples: np.ndarray  # per-seed returns at the best step
    avg_samples: np.ndarray  # per-seed grand means


def summarize_returns(curve: ReturnCurve, confidence: float = 0.95) -> ReturnSummary:
    """Maximum return (best seed-mean step) and average return over all steps and seeds."""
    step_means = curve.returns.mean(axis=0)
    best = int(np.argmax(step_means))
    at_best = curve.returns[:, best]
    per_seed = curve.returns.mean(axis=1)
    mx, mx_ci = mean_ci(at_best, confidence)
    avg, avg_ci = mean_ci(per_seed, confidence)
    return ReturnSummary(float(step_means[best]), mx_ci, int(curve.steps[best]),
                         float(curve.returns.mean()), avg_ci, at_best, per_seed)


@dataclass(frozen=True)
class WelchResult:
    t: float
    dof: float
    p: float


def welch_t_test(sample_a, sample_b) -> WelchResult:
    """Two-sided heteroscedastic t-test with Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise InsufficientSampleError("each sample needs at least two values")
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    if va + vb == 0:
        # both samples constant: equal means are indistinguishable, unequal ones are certain
        if diff == 0:
            return WelchResult(0.0, float(a.size + b.size - 2), 1.0)
        return WelchResult(float(np.copysign(np.inf, diff)), float(a.size + b.size - 2), 0.0)
    t = diff / np.sqrt(va + vb)
    dof = (va + vb) ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    p = 2.0 * stats.t.sf(abs(t), dof)
    return WelchResult(float(t), float(dof), float(min(1.0, p)))


@dataclass(frozen=True)
class GradVarianceRecord:
    step: int
    agent: int
    layer: int
    param_class: str
    variance: float


def per_parameter_variance(per_sample_grads) -> np.ndarray:
    g = np.asarray(per_sample_grads, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] < 2:
        raise InsufficientSampleError("need a [batch >= 2, params] matrix")
    return g.var(axis=0, ddof=1)


def grad_variance_batch(per_sample_grads, layer_map: Sequence[tuple[int, str]],
                        step: int = 0, agent: int = 0) -> list[GradVarianceRecord]:
    """Unbiased per-parameter variance across the batch, averaged per (layer, class).

    ``layer_map[j]`` names the (layer index, "weight" | "bias") group of
    flattened parameter column ``j``.
    """
    var = per_parameter_variance(per_sample_grads)
    if len(layer_map) != var.size:
        raise ValueError("layer_map must label every parameter column")
    groups: dict[tuple[int, str], list[int]] = {}
    for j, key in enumerate(layer_map):
        groups.setdefault(tuple(key), []).append(j)
    return [GradVarianceRecord(step, agent, layer, cls, float(var[idx].mean()))
            for (layer, cls), idx in sorted(groups.items())]


def aggregate_across_agents(records: Sequence[GradVarianceRecord]) -> list[dict]:
    """Mean, min and max across agents for each (step, layer, param_class)."""
    groups: dict[tuple, list[float]] = {}
    for r in records:
        groups.setdefault((r.step, r.layer, r.param_class), []).append(r.variance)
    return [dict(step=s, layer=l, param_class=c, mean=float(np.mean(v)), min=float(np.min(v)),
                 max=float(np.max(v))) for (s, l, c), v in sorted(groups.items())]


def gradvar_to_csv(records: Sequence[GradVarianceRecord], header: str = "") -> str:
    buf = io.StringIO()
    buf.write(header)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GRADVAR_COLUMNS)
    for r in records:
        w.writerow([r.step, r.agent, r.layer, r.param_class, repr(r.variance)])
    return buf.getvalue()


def significance_marks(samples: Mapping[str, np.ndarray], point: Mapping[str, float],
                       alpha: float = 0.05) -> dict[str, str]:
    """Mark each estimator relative to the best point estimate.

    ``best`` for the winner, ``*`` when Welch's test cannot separate it from
    the winner at level ``alpha``, and ``-`` otherwise.
    """
    best = max(point, key=lambda k: point[k])
    marks = {}
    for name in point:
        if name == best:
            marks[name] = "best"
            continue
        a, b = samples[name], samples[best]
        if len(a) < 2 or len(b) < 2:
            marks[name] = "*" if point[name] == point[best] else "-"
            continue
        marks[name] = "*" if welch_t_test(a, b).p >= alpha else "-"
    return marks

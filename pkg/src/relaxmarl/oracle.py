"""Exact gradient oracle and Monte Carlo bias/variance measurement.

The objective is a table ``f`` over one-hot outcomes, i.e. ``f(a) = <f, a>``.
Its expectation under softmax(zeta) has the closed-form gradient
``p * (f - <p, f>)``, which every estimator is measured against.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .estimators import EstimatorConfig, make_estimator

MAX_ENUMERATION = 20
SE_TOLERANCE = 3.0
CSV_COLUMNS = ("estimator", "tau", "K", "kappa", "coord", "mean", "var", "se_mean", "mse", "n_samples")


class EnumerationLimitError(ValueError):
    pass


def softmax(zeta) -> np.ndarray:
    z = np.asarray(zeta, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def expected_objective(zeta, f) -> float:
    """``sum_a f(a) p(a)`` by enumerating the categorical outcomes."""
    zeta = np.asarray(zeta, dtype=np.float64)
    if zeta.shape[-1] > MAX_ENUMERATION:
        raise EnumerationLimitError(f"N={zeta.shape[-1]} exceeds enumeration limit {MAX_ENUMERATION}")
    p = softmax(zeta)
    return float(sum(p[i] * f[i] for i in range(len(p))))


def exact_gradient(zeta, f) -> np.ndarray:
    """Gradient of ``E_{a ~ softmax(zeta)} <f, a>`` with respect to ``zeta``."""
    zeta = np.asarray(zeta, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if zeta.shape[-1] > MAX_ENUMERATION:
        raise EnumerationLimitError(f"N={zeta.shape[-1]} exceeds enumeration limit {MAX_ENUMERATION}")
    if zeta.shape != f.shape:
        raise ValueError("zeta and f must have the same length")
    p = softmax(zeta)
    return p * (f - p @ f)


@dataclass
class EstimatorStats:
    label: str
    tau: float
    K: int
    kappa: float
    mean_grad: np.ndarray
    per_coord_variance: np.ndarray
    se_mean: np.ndarray
    mse_vs_oracle: float
    se_mse: float
    exact: np.ndarray
    n_samples: int

    @property
    def bias(self) -> np.ndarray:
        return self.mean_grad - self.exact

    @property
    def bias_norm(self) -> float:
        return float(np.linalg.norm(self.bias))

    @property
    def se_bias_norm(self) -> float:
        # delta method on ||bias||
        b = self.bias
        norm = np.linalg.norm(b)
        if norm == 0:
            return float(np.linalg.norm(self.se_mean))
        return float(np.sqrt(((b / norm) ** 2 * self.se_mean ** 2).sum()))

    def csv_rows(self) -> list[dict]:
        return [
            dict(estimator=self.label, tau=self.tau, K=self.K, kappa=self.kappa, coord=j,
                 mean=self.mean_grad[j], var=self.per_coord_variance[j], se_mean=self.se_mean[j],
                 mse=self.mse_vs_oracle, n_samples=self.n_samples)
            for j in range(len(self.mean_grad))
        ]


class _Moments:
    """Streaming mean / M2 with Chan's pairwise merge."""

    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x: np.ndarray) -> None:
        nb = x.shape[0]
        mb = x.mean(axis=0)
        m2b = ((x - mb) ** 2).sum(axis=0)
        n = self.n + nb
        delta = mb - self.mean
        self.mean = self.mean + delta * nb / n
        self.m2 = self.m2 + m2b + delta ** 2 * self.n * nb / n
        self.n = n

    @property
    def var(self) -> np.ndarray:
        return self.m2 / (self.n - 1)


def sample_gradients(config: EstimatorConfig, zeta, f, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` per-sample estimator gradients of ``<f, straight_through(a)>`` w.r.t. zeta.

    Each row of a tiled logits leaf gets its own sample, so a single
    backward pass yields all per-sample gradients.
    """
    zeta = np.asarray(zeta, dtype=np.float64)
    leaf = ad.Tensor(np.tile(zeta, (n, 1)), requires_grad=True)
    out = config.relax(leaf, rng).output()
    objective = ad.sum(ad.mul(out, np.asarray(f, dtype=np.float64)))
    (g,) = ad.grad_of(objective, [leaf])
    return g


def estimator_stats(config: EstimatorConfig, zeta, f, n_samples: int, rng: np.random.Generator,
                    chunk: int | None = None) -> EstimatorStats:
    """Monte Carlo mean, variance and MSE of an estimator against the exact gradient."""
    if n_samples < 1000:
        raise ValueError("estimator_stats needs n_samples >= 1000")
    zeta = np.asarray(zeta, dtype=np.float64)
    exact = exact_gradient(zeta, f)
    k = config.K if config.kind == "GRMCK" else 1
    if chunk is None:
        chunk = int(max(1000, min(100_000, 4_000_000 // (k * zeta.size))))
    grads = _Moments(zeta.size)
    sq_err = _Moments(1)
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        g = sample_gradients(config, zeta, f, n, rng)
        grads.add(g)
        sq_err.add(((g - exact) ** 2).sum(axis=1, keepdims=True))
        done += n
    var = grads.var
    return EstimatorStats(
        label=config.label, tau=config.temperature(0), K=k, kappa=config.kappa,
        mean_grad=grads.mean, per_coord_variance=var, se_mean=np.sqrt(var / n_samples),
        mse_vs_oracle=float(sq_err.mean[0]), se_mse=float(np.sqrt(sq_err.var[0] / n_samples)),
        exact=exact, n_samples=n_samples,
    )


@dataclass
class RaoBlackwellReport:
    baseline: EstimatorStats
    rows: list[EstimatorStats]

    def mse_checks(self) -> list[tuple[int, bool]]:
        """(K, MSE(GRMC-K) <= MSE(STGS) + 3 combined SE) per row."""
        b = self.baseline
        out = []
        for r in self.rows:
            tol = SE_TOLERANCE * np.hypot(r.se_mse, b.se_mse)
            out.append((r.K, r.mse_vs_oracle <= b.mse_vs_oracle + tol))
        return out

    def mean_checks(self) -> list[tuple[int, bool]]:
        b = self.baseline
        out = []
        for r in self.rows:
            tol = SE_TOLERANCE * np.hypot(r.se_mean, b.se_mean)
            out.append((r.K, bool(np.all(np.abs(r.mean_grad - b.mean_grad) <= tol))))
        return out

    def all_stats(self) -> list[EstimatorStats]:
        return [self.baseline, *self.rows]

    def to_csv(self, header: str = "") -> str:
        return stats_to_csv(self.all_stats(), header)


def rao_blackwell_report(zeta, f, tau: float, k_list, n_samples: int,
                         rng: np.random.Generator) -> RaoBlackwellReport:
    """STGS at ``tau`` against GRMC-K at the same ``tau`` for each K (rows sorted by K)."""
    k_list = sorted(set(int(k) for k in k_list))
    if not k_list:
        raise ValueError("K_list must be non-empty")
    base = estimator_stats(make_estimator("STGST", tau=tau), zeta, f, n_samples, rng)
    rows = [estimator_stats(make_estimator("GRMCK", tau=tau, K=k), zeta, f, n_samples, rng)
            for k in k_list]
    return RaoBlackwellReport(base, rows)


def stats_to_csv(stats: list[EstimatorStats], header: str = "") -> str:
    buf = io.StringIO()
    if header:
        buf.write(header)
    buf.write(f"# statistical tolerance: {SE_TOLERANCE:g} standard errors\n")
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for s in stats:
        for row in s.csv_rows():
            writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                             for k, v in row.items()})
    return buf.getvalue()

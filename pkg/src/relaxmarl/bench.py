"""Time-per-relaxation microbenchmark for the estimators.

The timed region is one relaxation (sampling, surrogate construction and
straight-through output) plus the backward pass of a fixed linear objective
through it, which is what an actor update pays per call.
"""

from __future__ import annotations

import io
import platform
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from . import autodiff as ad
from .autodiff import Tensor
from .estimators import EstimatorConfig, make_estimator
from .evalstats import mean_ci

CSV_COLUMNS = ("estimator", "K", "dim", "mean_us", "ci_us", "slowdown_vs_stgs")
DEFAULT_DIMS = (2, 10, 100, 1000)
TIMED_REGION = "relax + straight-through + backward of a fixed linear objective"
# an aggregated window shorter than this many clock ticks is flagged as unreliable
MIN_TICKS = 100


class BenchmarkError(RuntimeError):
    pass


def default_configs() -> list[EstimatorConfig]:
    return [make_estimator("STGS1"), make_estimator("GST"),
            *(make_estimator("GRMCK", K=k) for k in (1, 10, 50))]


@dataclass
class BenchResult:
    estimator: str
    K: int | None
    dim: int
    mean_us: float
    ci_us: float
    slowdown: float = 1.0
    coarse_timer: bool = False
    instance_us: tuple[float, ...] = ()

    def csv_row(self) -> dict:
        return dict(estimator=self.estimator, K="" if self.K is None else self.K, dim=self.dim,
                    mean_us=f"{self.mean_us:.4f}", ci_us=f"{self.ci_us:.4f}",
                    slowdown_vs_stgs=f"{self.slowdown:.4f}")


def _check_single_thread() -> None:
    busy = [p for p in threadpool_info() if p.get("num_threads", 1) > 1]
    if busy:
        names = ", ".join(f"{p.get('internal_api')}={p.get('num_threads')}" for p in busy)
        raise BenchmarkError(f"refusing to time with internal parallelism enabled ({names})")


def time_callable(make_fn: Callable[[int], Callable[[], object]], n_reps: int,
                  n_instances: int, warmup: int = 10) -> tuple[np.ndarray, bool]:
    """Mean seconds per call for each instance, plus a coarse-timer flag.

    ``make_fn(instance)`` returns the zero-argument closure to time. Calls are
    timed as one window of ``n_reps`` repetitions per instance.
    """
    if n_reps < 1 or n_instances < 1:
        raise ValueError("n_reps and n_instances must be positive")
    tick = time.get_clock_info("perf_counter").resolution
    out = np.empty(n_instances)
    coarse = False
    with threadpool_limits(limits=1):
        _check_single_thread()
        for k in range(n_instances):
            fn = make_fn(k)
            for _ in range(warmup):
                fn()
            start = time.perf_counter()
            for _ in range(n_reps):
                fn()
            window = time.perf_counter() - start
            coarse |= window < MIN_TICKS * tick
            out[k] = window / n_reps
    return out, bool(coarse)


def _relaxation_closure(config: EstimatorConfig, zeta: np.ndarray, weights: np.ndarray,
                        rng: np.random.Generator) -> Callable[[], object]:
    def run():
        leaf = Tensor(zeta, requires_grad=True)
        out = config.relax(leaf, rng).output()
        return ad.grad_of(ad.sum(ad.mul(out, weights)), [leaf])
    return run


def time_estimator(config: EstimatorConfig, dim: int, n_reps: int, n_instances: int,
                   rng: np.random.Generator) -> BenchResult:
    """Mean time per relaxation in microseconds, with a 95% CI over logit instances."""
    if dim < 2:
        raise ValueError("dim must be at least 2")
    if n_reps < 100:
        raise ValueError("n_reps must be at least 100")
    instances = [(rng.normal(size=dim), rng.normal(size=dim)) for _ in range(n_instances)]
    seeds = rng.integers(2 ** 63, size=n_instances)

    def make(k):
        zeta, weights = instances[k]
        return _relaxation_closure(config, zeta, weights, np.random.default_rng(seeds[k]))

    per, coarse = time_callable(make, n_reps, n_instances)
    us = per * 1e6
    mean, ci = mean_ci(us)
    return BenchResult(config.label, config.K if config.kind == "GRMCK" else None, dim,
                       mean, ci, coarse_timer=coarse, instance_us=tuple(us))


def noop_control(n_reps: int, n_instances: int) -> BenchResult:
    """Harness overhead: the same loop around an empty closure."""
    per, coarse = time_callable(lambda k: (lambda: None), n_reps, n_instances)
    mean, ci = mean_ci(per * 1e6)
    return BenchResult("noop", None, 0, mean, ci, coarse_timer=coarse, instance_us=tuple(per * 1e6))


def bench_table(dims: Sequence[int] = DEFAULT_DIMS,
                configs: Sequence[EstimatorConfig] | None = None, n_reps: int = 10_000,
                n_instances: int = 5, rng: np.random.Generator | None = None) -> list[BenchResult]:
    """Every (config, dim) pair, with slowdowns against the STGS row at the same dim."""
    if not dims:
        raise ValueError("dims must be non-empty")
    configs = list(configs or default_configs())
    rng = rng or np.random.default_rng(0)
    if not any(c.kind == "STGS1" for c in configs):
        configs.insert(0, make_estimator("STGS1"))
    rows = []
    for dim in dims:
        block = [time_estimator(c, dim, n_reps, n_instances, rng) for c in configs]
        base = next(r for r, c in zip(block, configs) if c.kind == "STGS1").mean_us
        for r in block:
            r.slowdown = r.mean_us / base
        rows += block
    return rows


def bench_to_csv(rows: Sequence[BenchResult], n_reps: int, n_instances: int,
                 control: BenchResult | None = None, header: str = "") -> str:
    buf = io.StringIO()
    buf.write(header)
    buf.write(f"# machine: {platform.machine()} {platform.processor() or ''} "
              f"python {platform.python_version()} numpy {np.__version__}\n")
    buf.write(f"# reps per instance: {n_reps}; instances: {n_instances}; threads: 1\n")
    buf.write(f"# timed region: {TIMED_REGION}\n")
    if control is not None:
        buf.write(f"# noop control: {control.mean_us:.4f} us\n")
    if any(r.coarse_timer for r in rows):
        buf.write("# warning: some timing windows were near the clock resolution\n")
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for r in rows:
        d = r.csv_row()
        buf.write(",".join(str(d[c]) for c in CSV_COLUMNS) + "\n")
    return buf.getvalue()

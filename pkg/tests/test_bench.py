import numpy as np
import pytest

from relaxmarl import bench
from relaxmarl.estimators import make_estimator


def test_result_fields():
    r = bench.time_estimator(make_estimator("GST"), 4, 100, 3, np.random.default_rng(0))
    assert r.estimator == "GST" and r.K is None and r.dim == 4
    assert r.mean_us > 0 and np.isfinite(r.ci_us) and len(r.instance_us) == 3


def test_argument_checks():
    with pytest.raises(ValueError):
        bench.time_estimator(make_estimator("STGS1"), 1, 100, 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        bench.time_estimator(make_estimator("STGS1"), 2, 99, 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        bench.bench_table([], n_reps=100)


def test_noop_control_near_floor():
    control = bench.noop_control(2000, 3)
    work = bench.time_estimator(make_estimator("STGS1"), 2, 200, 3, np.random.default_rng(1))
    assert control.mean_us < 1.0 and control.mean_us < work.mean_us / 20


def test_table_structure_and_baseline():
    configs = [make_estimator("GST"), make_estimator("GRMCK", K=2)]
    rows = bench.bench_table([2, 5], configs, n_reps=100, n_instances=2)
    assert [(r.estimator, r.dim) for r in rows] == [
        ("STGS1", 2), ("GST", 2), ("GRMC2", 2), ("STGS1", 5), ("GST", 5), ("GRMC2", 5)]
    assert all(r.slowdown == 1.0 for r in rows if r.estimator == "STGS1")
    text = bench.bench_to_csv(rows, 100, 2)
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    assert body[0] == ",".join(bench.CSV_COLUMNS) and len(body) == 7
    assert "# timed region:" in text


def test_refuses_parallel_blas(monkeypatch):
    monkeypatch.setattr(bench, "threadpool_info",
                        lambda: [{"internal_api": "openblas", "num_threads": 4}])
    with pytest.raises(bench.BenchmarkError, match="parallelism"):
        bench.time_callable(lambda k: (lambda: None), 10, 1)


def test_coarse_timer_flag(monkeypatch):
    ticks = iter(range(1000))
    monkeypatch.setattr(bench.time, "perf_counter", lambda: float(next(ticks)) * 1e-9)
    _, coarse = bench.time_callable(lambda k: (lambda: None), 10, 2, warmup=0)
    assert coarse

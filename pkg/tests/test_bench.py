import io
import math
import time

import numpy as np
import pytest

from leanresnet.bench import (
    CSV_HEADER,
    DEFAULT_LEVELS,
    BenchResult,
    BenchRow,
    BenchSpec,
    format_table,
    monotone_violations,
    run_pyramid,
    time_kernel,
    write_csv,
)

SMALL = ((4, 32), (8, 16), (16, 8))


def test_default_levels_double_and_halve():
    spec = BenchSpec()
    assert spec.batch == 64 and spec.levels == DEFAULT_LEVELS
    for (c0, m0), (c1, m1) in zip(spec.levels, spec.levels[1:]):
        assert c1 == 2 * c0 and m1 * 2 == m0


def test_spec_validation_and_scaling():
    with pytest.raises(ValueError):
        BenchSpec(repetitions=2)
    assert BenchSpec.scaled(4).levels[0] == (16, 128)


def test_time_kernel_noop():
    mean, sd = time_kernel(lambda: None, 1, 5)
    assert 0 <= mean < 1e-3 and sd >= 0
    with pytest.raises(ValueError):
        time_kernel(lambda: None, 0, 2)


def test_time_kernel_sleep():
    mean, _ = time_kernel(lambda: time.sleep(0.01), 1, 5)
    assert mean == pytest.approx(0.01, rel=0.2)


def test_time_kernel_stable():
    a = np.random.default_rng(0).standard_normal((200, 200))
    mean, sd = time_kernel(lambda: a @ a, 2, 10)
    assert sd / mean < 0.5


def test_small_pyramid():
    result = run_pyramid(BenchSpec(batch=4, levels=SMALL, repetitions=3, warmup=1))
    assert result.levels() == list(SMALL)
    for c, m in SMALL:
        dense = result.get(c, "dense3x3")
        assert dense.ratio_to_dense3x3 == 1.0
        for v in ("unfused_square", "lean_fused"):
            row = result.get(c, v)
            assert row.mean_s > 0 and row.ratio_to_dense3x3 == pytest.approx(row.mean_s / dense.mean_s)
    with pytest.raises(KeyError):
        result.get(1024, "dense3x3")


def test_compare_backends_adds_variant():
    result = run_pyramid(BenchSpec(batch=2, levels=((4, 8),), repetitions=3, warmup=0,
                                   compare_backends=True))
    names = {r.variant for r in result.rows}
    assert {"dense3x3", "unfused_square", "lean_fused"} <= names


def _row(c, m, v, mean):
    return BenchRow(c, m, v, mean, 0.0, mean, 1.0)


def test_monotone_violations():
    ok = BenchResult([_row(4, 8, "x", 1.0), _row(8, 8, "x", 1.05)])
    assert monotone_violations(ok) == []
    bad = BenchResult([_row(4, 8, "x", 2.0), _row(8, 8, "x", 1.0)])
    assert monotone_violations(bad) == [("x", (4, 8), (8, 8))]


def test_csv_and_table():
    result = BenchResult([_row(4, 8, "dense3x3", 0.5), _row(4, 8, "lean_fused", 0.25)])
    buf = io.StringIO()
    write_csv(result, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert lines[2].split(",")[:4] == ["4", "8", "lean_fused", "0.25"]
    assert "lean_fused" in format_table(result)


def test_allocation_failure_skips_level(monkeypatch):
    from leanresnet import bench

    def boom(*a):
        raise MemoryError

    monkeypatch.setattr(bench, "_level", boom)
    result = run_pyramid(BenchSpec(batch=1, levels=((4, 8),), repetitions=3))
    (row,) = result.rows
    assert row.variant == "skipped" and math.isnan(row.mean_s)

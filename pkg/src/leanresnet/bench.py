"""Pyramid benchmark: fused lean convolution vs. its unfused decomposition
vs. a dense 3x3 convolution, on CPU.

Every level is first checked for agreement between variants on a small
sub-batch; timings are only reported for levels that pass.
"""
from __future__ import annotations

import csv
import logging
import math
import statistics
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from leanresnet.conv import (
    BACKEND,
    LeanConvWeights,
    available_backends,
    dense_conv2d,
    lean_conv2d_fused,
    lean_conv2d_reference,
    lean_to_dense,
)
from leanresnet.tensor import max_abs_diff

log = logging.getLogger(__name__)

DEFAULT_LEVELS = ((16, 512), (32, 256), (64, 128), (128, 64), (256, 32), (512, 16))
VARIANTS = ("dense3x3", "unfused_square", "lean_fused")
CSV_HEADER = ("channels", "map", "variant", "mean_s", "stddev_s", "ratio_to_dense3x3")
GATE_TOL = 1e-5
GATE_BATCH = 2


@dataclass
class BenchSpec:
    batch: int = 64
    levels: tuple = DEFAULT_LEVELS
    repetitions: int = 10
    warmup: int = 2
    threads: int = 1
    seed: int = 0
    compare_backends: bool = False

    def __post_init__(self):
        if self.repetitions < 3:
            raise ValueError("repetitions must be >= 3")
        self.levels = tuple(tuple(int(v) for v in lvl) for lvl in self.levels)

    @classmethod
    def scaled(cls, factor: int, **kw):
        """The default pyramid with maps divided by ``factor`` (keeps channel counts)."""
        levels = tuple((c, max(1, m // factor)) for c, m in DEFAULT_LEVELS)
        return cls(levels=levels, **kw)


@dataclass
class BenchRow:
    channels: int
    map: int
    variant: str
    mean_s: float
    stddev_s: float
    median_s: float
    ratio_to_dense3x3: float


@dataclass
class BenchResult:
    rows: list[BenchRow] = field(default_factory=list)
    threads: int = 1
    backend: str = BACKEND

    def get(self, channels, variant):
        for r in self.rows:
            if r.channels == channels and r.variant == variant:
                return r
        raise KeyError((channels, variant))

    def levels(self):
        seen = []
        for r in self.rows:
            if (r.channels, r.map) not in seen:
                seen.append((r.channels, r.map))
        return seen


_sink = 0.0


def _consume(out):
    global _sink
    if isinstance(out, np.ndarray) and out.size:
        _sink += float(out.flat[0])


def time_samples(thunk, warmup: int = 3, reps: int = 10) -> list[float]:
    for _ in range(warmup):
        _consume(thunk())
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        out = thunk()
        samples.append(time.perf_counter() - t0)
        _consume(out)
        del out
    return samples


def time_kernel(thunk, warmup: int = 3, reps: int = 10):
    """Wall-clock ``(mean, stddev)`` of ``thunk()`` over ``reps`` runs after ``warmup``."""
    if reps < 3:
        raise ValueError("reps must be >= 3")
    s = time_samples(thunk, warmup, reps)
    return statistics.fmean(s), statistics.stdev(s)


def _variants(x, w, dense_w, spec):
    fns = {
        "dense3x3": lambda: dense_conv2d(x, dense_w),
        "unfused_square": lambda: lean_conv2d_reference(x, w),
        "lean_fused": lambda: lean_conv2d_fused(x, w, num_threads=spec.threads),
    }
    if spec.compare_backends:
        for b in available_backends():
            if b != BACKEND:
                fns[f"lean_fused_{b}"] = (
                    lambda b=b: lean_conv2d_fused(x, w, backend=b, num_threads=spec.threads))
    return fns


def _level(c, m, spec, rng):
    x = rng.standard_normal((spec.batch, c, m, m), dtype=np.float32)
    w = LeanConvWeights(
        (rng.standard_normal((c, c), dtype=np.float32) / np.float32(math.sqrt(c))),
        rng.standard_normal((c, 4), dtype=np.float32) * np.float32(0.5),
    )
    # same operator, full dense 3x3 cost
    dense_w = lean_to_dense(w)
    fns = _variants(x, w, dense_w, spec)

    sub = x[:GATE_BATCH]
    ref = lean_conv2d_reference(sub, w)
    gate = {
        "dense3x3": dense_conv2d(sub, dense_w),
        "lean_fused": lean_conv2d_fused(sub, w),
    }
    for b in available_backends():
        gate[f"lean_fused_{b}"] = lean_conv2d_fused(sub, w, backend=b)
    for name, out in gate.items():
        err = max_abs_diff(out, ref)
        if not err <= GATE_TOL:
            raise AssertionError(f"level ({c}, {m}): {name} differs from reference by {err:.3g}")
    del ref, gate, sub

    timings = {}
    for name, fn in fns.items():
        timings[name] = time_samples(fn, spec.warmup, spec.repetitions)
        log.info("level (%d, %d) %s mean %.4fs", c, m, name, statistics.fmean(timings[name]))
    return timings


def run_pyramid(spec: BenchSpec | None = None) -> BenchResult:
    spec = spec or BenchSpec()
    rng = np.random.default_rng(spec.seed)
    result = BenchResult(threads=spec.threads)
    with threadpool_limits(spec.threads):
        for c, m in spec.levels:
            try:
                timings = _level(c, m, spec, rng)
            except MemoryError:
                log.warning("level (%d, %d) skipped: allocation failed", c, m)
                result.rows.append(BenchRow(c, m, "skipped", math.nan, math.nan, math.nan, math.nan))
                continue
            dense_mean = statistics.fmean(timings["dense3x3"])
            for name, s in timings.items():
                mean = statistics.fmean(s)
                result.rows.append(BenchRow(c, m, name, mean, statistics.stdev(s),
                                            statistics.median(s), mean / dense_mean))
    return result


def monotone_violations(result: BenchResult, tolerance: float = 0.1):
    """Pairs of levels where a variant got more than ``tolerance`` slower on a smaller problem."""
    out = []
    variants = {r.variant for r in result.rows if r.variant != "skipped"}
    for v in sorted(variants):
        rows = sorted((r for r in result.rows if r.variant == v), key=lambda r: r.channels * r.map ** 2)
        for small, big in zip(rows, rows[1:]):
            if small.channels * small.map ** 2 < big.channels * big.map ** 2 and \
                    small.mean_s > big.mean_s * (1 + tolerance):
                out.append((v, (small.channels, small.map), (big.channels, big.map)))
    return out


def write_csv(result: BenchResult, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in result.rows:
        writer.writerow([r.channels, r.map, r.variant, repr(r.mean_s), repr(r.stddev_s),
                         repr(r.ratio_to_dense3x3)])


def format_table(result: BenchResult) -> str:
    lines = [f"backend={result.backend} threads={result.threads}",
             f"{'channels':>8} {'map':>5} {'variant':<22} {'mean_s':>10} {'median_s':>10} "
             f"{'stddev_s':>10} {'ratio':>7}"]
    for r in result.rows:
        lines.append(f"{r.channels:>8} {r.map:>5} {r.variant:<22} {r.mean_s:>10.5f} {r.median_s:>10.5f} "
                     f"{r.stddev_s:>10.5f} {r.ratio_to_dense3x3:>7.3f}")
    return "\n".join(lines)

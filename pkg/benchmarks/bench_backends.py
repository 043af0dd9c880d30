"""Compare the compiled and pure-Python fused lean kernels against the
unfused numpy reference on a few layer shapes.

    python benchmarks/bench_backends.py [--batch 16] [--reps 5] [--threads 1]
"""
import argparse

import numpy as np
from threadpoolctl import threadpool_limits

from leanresnet.bench import time_kernel
from leanresnet.conv import LeanConvWeights, available_backends, lean_conv2d_fused, lean_conv2d_reference

SHAPES = ((16, 128, 1), (64, 64, 1), (64, 64, 2), (256, 16, 1), (512, 8, 1))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    backends = available_backends()
    print(f"{'channels':>8} {'map':>5} {'stride':>6} {'reference':>10} " + " ".join(f"{b:>10}" for b in backends))
    with threadpool_limits(args.threads):
        for c, m, s in SHAPES:
            x = rng.standard_normal((args.batch, c, m, m), dtype=np.float32)
            w = LeanConvWeights(rng.standard_normal((c, c), dtype=np.float32),
                                rng.standard_normal((c, 4), dtype=np.float32), s)
            ref, _ = time_kernel(lambda: lean_conv2d_reference(x, w), 1, args.reps)
            times = [time_kernel(lambda b=b: lean_conv2d_fused(x, w, backend=b, num_threads=args.threads),
                                 1, args.reps)[0] for b in backends]
            print(f"{c:>8} {m:>5} {s:>6} {ref:>10.5f} " + " ".join(f"{t:>10.5f}" for t in times))


if __name__ == "__main__":
    main()

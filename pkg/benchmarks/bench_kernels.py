"""Compare the compiled and numpy gradient kernels on training-sized batches.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from attnclust import kernels
from attnclust.mixtures import MixtureSpec, make_orthonormal_centroids, sample_batch

CASES = [
    # name, d, K, L, M
    ("linear K=2 d=5", 5, 2, 30, 256),
    ("linear K=3 d=6", 6, 3, 30, 256),
    ("linear K=2 d=100", 100, 2, 30, 256),
    ("softmax d=5", 5, 2, 30, 256),
]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)
    if kernels.compiled is None:
        print("compiled kernels are not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    print(f"{'case':<20}{'numpy ms':>10}{'compiled ms':>13}{'speedup':>9}{'max |diff|':>12}")
    for name, d, K, L, M in CASES:
        C = make_orthonormal_centroids(d, K)
        X = sample_batch(MixtureSpec.gaussian(C, 0.3), L, M, rng).tokens
        H = rng.standard_normal((K, d))
        H /= np.linalg.norm(H, axis=1, keepdims=True)
        if name.startswith("softmax"):
            call = lambda mod: mod.softmax_loss_grad(X, H, 3.0, 2.0, 0.5)
        else:
            call = lambda mod: mod.linear_loss_grad(X, H, 0.6, 0.2, 0)
        t_py = timeit.timeit(lambda: call(kernels.pure), number=args.repeat) / args.repeat * 1e3
        if kernels.compiled is None:
            print(f"{name:<20}{t_py:>10.3f}{'-':>13}{'-':>9}{'-':>12}")
            continue
        t_c = timeit.timeit(lambda: call(kernels.compiled), number=args.repeat) / args.repeat * 1e3
        a, b = call(kernels.pure), call(kernels.compiled)
        diff = max(abs(a[0] - b[0]), float(np.max(np.abs(a[1] - b[1]))))
        print(f"{name:<20}{t_py:>10.3f}{t_c:>13.3f}{t_py / t_c:>9.2f}{diff:>12.1e}")


if __name__ == "__main__":
    main()

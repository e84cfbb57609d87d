"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeats 20] [--batch 256]

Each kernel is called once before timing so numba compilation is excluded.
Results are checked for agreement before anything is reported.
"""
import argparse
import time

import numpy as np

from nplb import kernels


def best_time(fn, args, repeats):
    fn(*args)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def cases(batch, dim, n_points, seed):
    rng = np.random.default_rng(seed)
    ea, ep, en = (rng.normal(size=(batch, dim)) for _ in range(3))
    pts = rng.normal(size=(n_points, dim))
    labels = rng.integers(0, 5, size=n_points)
    z = rng.normal(size=(3 * batch, 512))
    g = rng.normal(size=z.shape)
    mask = (rng.random(z.shape) >= 0.1) / 0.9
    return {
        "triplet_terms/traditional": ("triplet_terms", (ea, ep, en, kernels.TRADITIONAL, 1.0, 2)),
        "triplet_terms/swap": ("triplet_terms", (ea, ep, en, kernels.SWAP, 1.0, 2)),
        "triplet_terms/nplb": ("triplet_terms", (ea, ep, en, kernels.REGULARIZED, 1.0, 2)),
        "pairwise_distances": ("pairwise_distances", (pts[: n_points // 4], pts)),
        "nearest_same_label": ("nearest_same_label", (pts, labels)),
        "prelu_forward": ("prelu_forward", (z, 0.25)),
        "prelu_backward": ("prelu_backward", (g, z, 0.25, mask)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--points", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, (attr, call_args) in cases(args.batch, args.dim, args.points, args.seed).items():
        f_np = getattr(kernels.numpy_impl, attr)
        f_nb = getattr(kernels.numba_impl, attr)
        a, b = f_np(*call_args), f_nb(*call_args)
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)
        t_np = best_time(f_np, call_args, args.repeats)
        t_nb = best_time(f_nb, call_args, args.repeats)
        print(f"{name:28s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:8.2f}")


if __name__ == "__main__":
    main()

"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both variants are called directly, so the env flag is not needed here; the
first jitted call (compilation) is excluded from the timings.
"""
import argparse
import timeit

import numpy as np

from dagekit import _accel, kernels


def cases(rng):
    x = rng.normal(size=(64, 400))
    y = rng.normal(size=(64, 300))
    w = rng.uniform(size=(120, 120))
    np.fill_diagonal(w, 0.0)
    phi = rng.normal(size=(8, 120))
    sqd = rng.uniform(size=(200, 150))
    src, tgt = rng.integers(0, 10, 200), rng.integers(0, 10, 150)
    dist = rng.uniform(0, 3, size=(300, 300))
    active = rng.uniform(size=(300, 300)) < 0.7
    return {
        "pairwise_sqdist 64x400x300": (kernels.pairwise_sqdist_numpy, kernels.pairwise_sqdist_jit, (x, y)),
        "pair_energy n=120 d=8": (kernels.pair_energy_numpy, kernels.pair_energy_jit, (w, phi)),
        "dsne_edges 200x150": (kernels.dsne_edges_numpy, kernels.dsne_edges_jit, (sqd, src, tgt)),
        "knn n=400 k=5": (kernels.knn_numpy, kernels.knn_jit, (x, 5)),
        "margin_weights 300x300": (kernels.margin_weights_numpy, kernels.margin_weights_jit,
                                   (dist, active, 2.0, 1e-9)),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    if not _accel.NUMBA_AVAILABLE:
        raise SystemExit("numba is disabled or missing; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, (np_fn, jit_fn, fn_args) in cases(rng).items():
        jit_fn(*fn_args)
        t_np = min(timeit.repeat(lambda: np_fn(*fn_args), number=1, repeat=args.repeat)) * 1e3
        t_jit = min(timeit.repeat(lambda: jit_fn(*fn_args), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<28}{t_np:>10.3f}{t_jit:>10.3f}{t_np / t_jit:>8.1f}x")


if __name__ == "__main__":
    main()

"""Benchmark the numba-jitted kernels against the pure-numpy fallback.

Usage:
    python benchmarks/bench_kernels.py [--quick]

Also times an end-to-end linear-probe grid search per backend; switch the
engine backend at runtime with EMBEVAL_NUMBA=0|1.
"""
import argparse
import time

import numpy as np

from embeval.kernels import numpy_backend

try:
    from embeval.kernels import numba_backend
except ImportError:
    numba_backend = None


def bench(fn, args, repeats, make_args=None):
    best = float("inf")
    for _ in range(repeats):
        a = make_args() if make_args else args
        t0 = time.perf_counter()
        fn(*a)
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(rng, n, k):
    logits = np.ascontiguousarray(rng.standard_normal((n, k)) * 2)
    labels = rng.integers(0, k, n)
    targets = (rng.random((n, k)) < 0.4).astype(np.float64)
    p = rng.standard_normal(n * k)
    g = np.ascontiguousarray(rng.standard_normal(n * k))
    m, v = np.zeros(n * k), np.zeros(n * k)
    return [
        ("softmax_xent", lambda b: b.softmax_xent(logits, labels)),
        ("binary_xent", lambda b: b.binary_xent(logits, targets)),
        ("normalize_rows", lambda b: b.normalize_rows(logits)),
        ("adamw_update", lambda b: b.adamw_update(
            p.copy(), m.copy(), v.copy(), g, 1e-3, 0.9, 0.999, 1e-8, 1)),
    ]


def run_kernel_table(quick):
    rng = np.random.default_rng(0)
    sizes = [(4, 10), (32, 100)] if quick else [(4, 10), (32, 100), (256, 1000)]
    repeats = 200 if quick else 1000
    print(f"{'kernel':<16} {'batch x K':<12} {'numpy (us)':>12} "
          f"{'numba (us)':>12} {'speedup':>9}")
    for n, k in sizes:
        for name, call in kernel_cases(rng, n, k):
            t_np = bench(lambda: call(numpy_backend), (), repeats) * 1e6
            if numba_backend is None:
                print(f"{name:<16} {f'{n} x {k}':<12} {t_np:>12.1f} "
                      f"{'n/a':>12} {'n/a':>9}")
                continue
            call(numba_backend)  # trigger JIT outside the timed region
            t_nb = bench(lambda: call(numba_backend), (), repeats) * 1e6
            print(f"{name:<16} {f'{n} x {k}':<12} {t_np:>12.1f} "
                  f"{t_nb:>12.1f} {t_np / t_nb:>8.1f}x")


def run_end_to_end(quick):
    """Time one LP grid search on a synthetic archive with each backend."""
    import embeval.kernels as kernels
    from embeval.archive import SynthSpec, synthesize_archive
    from embeval.optim import TrainConfig
    from embeval.protocol import (GridSpec, _InitSpec, grid_search,
                                  sample_few_shot, split_train_val)

    archive = synthesize_archive(SynthSpec(
        n_classes=10, samples_per_class=20 if quick else 50,
        feature_dim=64, joint_dim=32, noise=0.45, seed=0))
    split = sample_few_shot(archive, "full", seed=0)
    split_train_val(split)
    grid = GridSpec(search_epochs=3 if quick else 10)
    backends = {"numpy": numpy_backend}
    if numba_backend is not None:
        backends["numba"] = numba_backend
    print("\nend-to-end LP grid search (15 cells):")
    for name, backend in backends.items():
        for fn in ("softmax_xent", "binary_xent", "normalize_rows",
                   "sgd_update", "momentum_update", "adamw_update"):
            setattr(kernels, fn, getattr(backend, fn))
        # heads/optim resolve normalize_rows and the optimizer kernels at
        # import time in some paths; patch those references too
        import embeval.heads as heads
        heads.normalize_rows = backend.normalize_rows
        t0 = time.perf_counter()
        grid_search(archive, split, "lp", _InitSpec(kind="lang-sep"), grid,
                    TrainConfig(seed=0))
        print(f"  {name:<6} {time.perf_counter() - t0:8.2f} s")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true")
    args = parser.parse_args()
    if numba_backend is None:
        print("numba unavailable; showing numpy-only timings")
    run_kernel_table(args.quick)
    run_end_to_end(args.quick)


if __name__ == "__main__":
    main()

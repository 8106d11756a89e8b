"""Compiled kernels against the numpy fallback on workload-sized inputs.

Run with ``python benchmarks/bench_kernels.py``; ``--repeat`` sets the number
of timed repetitions (best of N is reported). Outputs of the two backends are
compared before timing so a speedup never hides a wrong answer.
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from adspeech import kernels
from adspeech.classifiers.svm import rbf_kernel


def workloads(rng):
    """Inputs shaped like one clip or one training fold of the real pipeline."""
    frames = rng.uniform(-1, 1, (1200, 400))
    pitch_frames = rng.standard_normal((600, 640))
    X_tree = rng.standard_normal((165, 168))
    y_tree = rng.integers(0, 2, 165).astype(np.float64)
    order = np.argsort(X_tree, axis=0, kind="stable")
    X_svm = rng.standard_normal((165, 20))
    y_svm = np.where(rng.random(165) < 0.5, -1.0, 1.0)
    K = rbf_kernel(X_svm, X_svm, 0.05)
    return {
        "zero_crossings (1200 x 400 frames)": ("zero_crossings", (frames,)),
        "normalized_autocorr (600 frames, lags 32-213)": ("normalized_autocorr", (pitch_frames, 32, 213)),
        "best_split (165 x 168 node)": ("best_split", (X_tree, order, y_tree)),
        "smo_solve (165-row RBF dual)": ("smo_solve", (K, y_svm, 1.0, 1e-3, 10_000_000)),
    }


def same_result(a, b) -> bool:
    if isinstance(a, tuple):
        return all(same_result(x, y) for x, y in zip(a, b))
    return bool(np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=1e-9, atol=1e-12))


def best_time(fn, args, repeat: int) -> float:
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5, help="timed repetitions per kernel (best is kept)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if kernels.compiled_kernels is None:
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':48s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s}")
    for label, (name, call_args) in workloads(rng).items():
        py_fn = getattr(kernels.python_kernels, name)
        c_fn = getattr(kernels.compiled_kernels, name)
        if not same_result(py_fn(*call_args), c_fn(*call_args)):
            print(f"{label}: backends disagree", file=sys.stderr)
            return 2
        t_py = best_time(py_fn, call_args, args.repeat)
        t_c = best_time(c_fn, call_args, args.repeat)
        print(f"{label:48s} {1e3 * t_py:12.2f} {1e3 * t_c:12.2f} {t_py / t_c:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Time the compiled evaluation kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--n 200000] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from reltemp.kernels import _fallback

try:
    from reltemp.kernels import _core
except ImportError:
    _core = None


def make_case(n, m, seed=0):
    rng = np.random.default_rng(seed)
    truth = np.zeros(n, dtype=bool)
    for start in rng.integers(0, n - 20, size=n // 400):
        truth[start : start + rng.integers(5, 20)] = True
    scores = rng.random(n) + 0.5 * truth
    return {
        "scores": scores,
        "truth": truth,
        "pred": scores > 0.9,
        "thresholds": np.linspace(scores.min(), scores.max(), 100),
        "a_n": rng.random((m, m)),
        "a_a": rng.random((m, m)),
    }


CALLS = {
    "point_adjust": lambda k, c: k.point_adjust(c["pred"], c["truth"]),
    "confusion": lambda k, c: k.confusion(c["pred"], c["truth"]),
    "threshold_counts": lambda k, c: k.threshold_counts(c["scores"], c["truth"], c["thresholds"]),
    "correlation_change": lambda k, c: k.correlation_change(c["a_n"], c["a_a"]),
}


def best_time(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=200_000, help="series length")
    parser.add_argument("--m", type=int, default=38, help="metrics for the attention kernel")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    case = make_case(args.n, args.m)
    impls = [("python", _fallback)] + ([("cython", _core)] if _core is not None else [])
    if _core is None:
        print("compiled extension not built; showing the fallback only")
    print(f"{'kernel':<20}" + "".join(f"{name:>14}" for name, _ in impls) + ("     speedup" if _core else ""))
    for name, call in CALLS.items():
        times = [best_time(lambda k=k: call(k, case), args.repeat) for _, k in impls]
        row = f"{name:<20}" + "".join(f"{t * 1e3:>12.3f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()

"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 200]

The first numba call compiles; it is run once before timing and reported
separately.
"""

import argparse
import time

import numpy as np

from hss.kernels import _numba, _numpy


def gru_inputs(rng, b, d):
    return (
        rng.normal(size=(b, d)),
        rng.normal(size=(b, d)),
        rng.normal(scale=0.1, size=(3 * d, d)),
        rng.normal(scale=0.1, size=(3 * d, d)),
        rng.normal(scale=0.1, size=3 * d),
        (rng.random(b) < 0.9).astype(float),
    )


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    for b, d in ((10, 32), (100, 64), (100, 300)):
        args = gru_inputs(rng, b, d)
        fwd = _numpy.gru_forward(*args)
        dh = rng.normal(size=(b, d))
        back = (dh, *args[:4], *fwd[1:], args[5])
        yield f"gru_forward  b={b} d={d}", "gru_forward", args
        yield f"gru_backward b={b} d={d}", "gru_backward", back
    for n in (20, 100, 400):
        a = rng.integers(0, 50, size=n).tolist()
        c = rng.integers(0, 50, size=n).tolist()
        yield f"lcs_length   n={n}", "lcs_length", (a, c)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'numpy us':>11}{'numba us':>11}{'speedup':>9}{'compile s':>11}")
    for label, name, inputs in cases(rng):
        slow, fast = getattr(_numpy, name), getattr(_numba, name)
        t0 = time.perf_counter()
        fast(*inputs)
        compile_s = time.perf_counter() - t0
        t_np = best_of(lambda: slow(*inputs), args.repeat)
        t_nb = best_of(lambda: fast(*inputs), args.repeat)
        print(f"{label:<26}{t_np * 1e6:>11.1f}{t_nb * 1e6:>11.1f}{t_np / t_nb:>8.1f}x{compile_s:>11.2f}")


if __name__ == "__main__":
    main()

"""Compare the compiled and numpy conv2d kernels.

    python3 bench/benchmark_kernels.py [--repeat 5]

Shapes cover the desk-scale map model: a batch of per-step map stacks pushed
through the stem and a residual block, forward and backward.
"""

import argparse
import statistics
import time

import numpy as np

from advforecast.kernels import _conv_py

try:
    from advforecast.kernels import _conv_ext
except ImportError:
    _conv_ext = None

SHAPES = [
    # (batch, in channels, out channels, height, width)
    (64, 5, 8, 12, 10),
    (256, 8, 8, 12, 10),
    (64, 5, 16, 20, 17),
    (256, 16, 16, 20, 17),
]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), statistics.median(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = {"numpy": _conv_py}
    if _conv_ext is not None:
        backends["cython"] = _conv_ext
    else:
        print("compiled extension not built; timing the numpy kernel only")

    rng = np.random.default_rng(0)
    header = f"{'shape (N,Cin,Cout,H,W)':<26}{'pass':<10}" + "".join(f"{b + ' ms':>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for n, cin, cout, h, w in SHAPES:
        x = rng.normal(size=(n, cin, h, w))
        wt = rng.normal(size=(cout, cin, 3, 3))
        b = rng.normal(size=cout)
        g = rng.normal(size=(n, cout, h, w))
        ref = _conv_py.conv2d_forward(x, wt, b)
        for label, call in (("forward", lambda k: k.conv2d_forward(x, wt, b)),
                            ("backward", lambda k: k.conv2d_backward(x, wt, g))):
            row = f"{str((n, cin, cout, h, w)):<26}{label:<10}"
            best = {}
            for name, kernel in backends.items():
                if label == "forward":
                    np.testing.assert_allclose(kernel.conv2d_forward(x, wt, b), ref, atol=1e-9)
                best[name], _ = best_of(lambda: call(kernel), args.repeat)
                row += f"{best[name] * 1e3:>12.2f}"
            if len(best) == 2:
                row += f"{best['numpy'] / best['cython']:>9.1f}x"
            print(row)


if __name__ == "__main__":
    main()

"""Time the numba conv kernels against the pure-numpy fallback.

Runs forward, input-gradient and weight-gradient at shapes the fusion
branches actually use, plus one larger case. Usage:

    python benchmarks/bench_kernels.py [--repeats 20]
"""

import argparse
import statistics
import time

import numpy as np

from fundusfusion.kernels import conv_numpy

try:
    from fundusfusion.kernels import conv_numba
except ImportError:
    conv_numba = None

# (batch, channels, height, width, out_channels, kh, kw, stride)
CASES = [
    ("branch 2x2/s2 desk", (16, 32, 4, 4, 32, 2, 2, 2)),
    ("local 1x3 desk", (16, 8, 4, 16, 8, 1, 3, 1)),
    ("branch 2x2/s2 mid", (8, 64, 14, 14, 64, 2, 2, 2)),
    ("large 3x3", (4, 32, 28, 28, 32, 3, 3, 1)),
]


def _args(shape, rng):
    b, c, h, w, o, kh, kw, stride = shape
    x = rng.normal(size=(b, c, h, w))
    wt = rng.normal(size=(o, c, kh, kw))
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    g = rng.normal(size=(b, o, oh, ow))
    return x, wt, g, stride, h, w, kh, kw


def _time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.mean(times), statistics.stdev(times)


def bench(mod, shape, repeats, rng):
    x, wt, g, stride, h, w, kh, kw = _args(shape, rng)
    out = {}
    for name, fn in (
        ("forward", lambda: mod.conv2d_forward(x, wt, stride)),
        ("grad_input", lambda: mod.conv2d_grad_input(g, wt, stride, h, w)),
        ("grad_weight", lambda: mod.conv2d_grad_weight(g, x, stride, kh, kw)),
    ):
        fn()  # warm up (JIT compile on the numba path)
        out[name] = _time(fn, repeats)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    opts = ap.parse_args()
    rng = np.random.default_rng(0)

    if conv_numba is None:
        print("numba unavailable; timing the numpy backend only")
    header = f"{'case':22s} {'kernel':12s} {'numpy ms':>12s}"
    if conv_numba is not None:
        header += f" {'numba ms':>12s} {'speedup':>8s}"
    print(header)
    for label, shape in CASES:
        ref = bench(conv_numpy, shape, opts.repeats, rng)
        alt = bench(conv_numba, shape, opts.repeats, rng) if conv_numba else None
        for kernel in ("forward", "grad_input", "grad_weight"):
            m, s = ref[kernel]
            line = f"{label:22s} {kernel:12s} {m * 1e3:9.3f}±{s * 1e3:.3f}"
            if alt:
                am, asd = alt[kernel]
                line += f" {am * 1e3:9.3f}±{asd * 1e3:.3f} {m / am:7.1f}x"
            print(line)


if __name__ == "__main__":
    main()

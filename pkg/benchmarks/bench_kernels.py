"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints seconds per call for each kernel and backend, plus the speedup, and
checks that both backends return identical arrays.
"""

import argparse
import timeit

import numpy as np

from fedpipe_sim import _kernels_py
from fedpipe_sim.quantizer import build_codebook

try:
    from fedpipe_sim import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    core8 = rng.standard_normal((8, 8))
    core4 = rng.standard_normal((4, 4))
    flat = rng.standard_normal(100_000)
    nf4 = build_codebook(4).codes
    nf8 = build_codebook(8).codes
    return [
        ("jacobi 4x4", "jacobi_singular_values", (core4,)),
        ("jacobi 8x8", "jacobi_singular_values", (core8,)),
        ("quantize 1e5 NF4", "quantize_blocks", (flat, nf4, 64)),
        ("quantize 1e5 NF8", "quantize_blocks", (flat, nf8, 64)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = {"python": _kernels_py}
    if _kernels is not None:
        backends["compiled"] = _kernels
    else:
        print("compiled extension not built; timing the fallback only")

    print(f"{'case':<20}" + "".join(f"{b:>14}" for b in backends) + f"{'speedup':>10}")
    for name, fn, fargs in cases(np.random.default_rng(0)):
        times, outs = {}, {}
        for b, mod in backends.items():
            f = getattr(mod, fn)
            outs[b] = f(*fargs)
            number = 200 if fn == "jacobi_singular_values" else 5
            times[b] = min(timeit.repeat(lambda: f(*fargs), number=number, repeat=args.repeat)) / number
        if len(outs) == 2:
            a, c = outs["python"], outs["compiled"]
            same = all(np.array_equal(np.asarray(x), np.asarray(y)) for x, y in zip(
                a if isinstance(a, tuple) else (a,), c if isinstance(c, tuple) else (c,)))
            assert same, f"backends disagree on {name}"
        speed = f"{times['python'] / times['compiled']:>9.1f}x" if "compiled" in times else ""
        print(f"{name:<20}" + "".join(f"{times[b]:>13.2e}s" for b in backends) + speed)


if __name__ == "__main__":
    main()

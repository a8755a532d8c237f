"""Time each hot kernel under the compiled and numpy backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--batch B]
Prints a tab-separated table: kernel, backend, best time per call (ms), speedup.
"""

import argparse
import timeit

import numpy as np

from sargnn.graph import Connectivity
from sargnn.kernels import available_backends
from sargnn.sparse import sparsify


def cases(batch, rng):
    side, c = 32, 32
    x = np.ascontiguousarray(rng.standard_normal((batch, side, side, c)))
    ex = rng.random((batch, side, side)) < 0.3
    x *= ex[..., None]
    offs = Connectivity.EIGHT.offsets
    scale = rng.random((batch, side, side))
    w = rng.standard_normal((256, 128))
    w[rng.random(w.shape) < 0.9] = 0.0
    sp = sparsify(w)
    dense_in = rng.standard_normal((batch * 64, 256))
    vec = rng.standard_normal(256)
    sp_t = sparsify(w.T.copy())
    yield "neighbor_sum", lambda k: k.neighbor_sum(x, offs)
    yield "neighbor_mean", lambda k: k.neighbor_mean(x, ex, offs)
    yield "neighbor_sum_scaled", lambda k: k.neighbor_sum_scaled(x, scale, offs)
    yield "pool_max", lambda k: k.pool_max(x, ex)
    arg = available_backends()["python"].pool_max(x, ex)[2]
    g = rng.standard_normal((batch, side // 2, side // 2, c))
    yield "pool_max_backward", lambda k: k.pool_max_backward(g, arg)
    yield "csr_matvec", lambda k: k.csr_matvec(sp_t.row_offsets, sp_t.col_indices, sp_t.values,
                                               vec, sp_t.rows)
    yield "dense_csr_matmul", lambda k: k.dense_csr_matmul(dense_in, sp.row_offsets,
                                                           sp.col_indices, sp.values, sp.cols)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=20)
    args = ap.parse_args(argv)
    backends = available_backends()
    if "cython" not in backends:
        print("# compiled extension not built; timing the numpy backend only")
    rng = np.random.default_rng(0)
    print("kernel\tbackend\tms_per_call\tspeedup_vs_python")
    for name, fn in cases(args.batch, rng):
        times = {}
        for bname, mod in backends.items():
            fn(mod)  # warm-up
            times[bname] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        for bname, t in times.items():
            print(f"{name}\t{bname}\t{1000 * t:.3f}\t{times['python'] / t:.2f}")


if __name__ == "__main__":
    main()

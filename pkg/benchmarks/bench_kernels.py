"""Time the numba kernels against the numpy fallbacks.

    python benchmarks/bench_kernels.py [--sizes 200,2000,20000] [--K 10] [--repeat 20]

Both implementations are imported side by side from ``IMPLEMENTATIONS``, so
the ``STABLECHEB_BACKEND`` setting does not matter here.  Outputs are also
compared, and the script exits non-zero if they disagree.
"""
import argparse
import sys
import time

import numpy as np

from stablecheb._kernels import IMPLEMENTATIONS, NUMBA_AVAILABLE
from stablecheb.datasets import sample_family_graph
from stablecheb.graph import ScaledLaplacianOp


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="200,2000,20000")
    ap.add_argument("--K", type=int, default=10)
    ap.add_argument("--d", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if not NUMBA_AVAILABLE:
        print("numba is not importable; nothing to compare")
        return 0

    rng = np.random.default_rng(0)
    nb, npy = IMPLEMENTATIONS["numba"], IMPLEMENTATIONS["numpy"]
    print(f"{'kernel':<14}{'n':>8}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    ok = True
    for n in (int(s) for s in args.sizes.split(",")):
        g = sample_family_graph("barabasi_albert", n, rng)
        op = ScaledLaplacianOp(g)
        csr = (g.indptr, g.indices, op.weights, op.diag, op.scale)
        X = rng.standard_normal((n, args.d))
        Z = rng.standard_normal((n, args.K + 1, args.d))
        cases = {
            "scaled_apply": lambda impl: impl["scaled_apply"](*csr, X, np.empty_like(X)),
            "cheb_basis": lambda impl: impl["cheb_basis"](*csr, X, args.K),
            "cheb_sum": lambda impl: impl["cheb_sum"](*csr, Z),
        }
        if n <= 2000:
            cases["bfs_all_pairs"] = lambda impl: impl["bfs_all_pairs"](g.indptr, g.indices, n)
        for name, call in cases.items():
            call(nb)  # compile outside the timed region
            reps = max(1, args.repeat if name != "bfs_all_pairs" else args.repeat // 10)
            t_nb, out_nb = best_of(lambda: call(nb), reps)
            t_np, out_np = best_of(lambda: call(npy), reps)
            same = np.allclose(out_nb, out_np, rtol=1e-12, atol=1e-12)
            ok &= bool(same)
            flag = "" if same else "  MISMATCH"
            print(f"{name:<14}{n:>8}{t_nb * 1e3:>12.3f}{t_np * 1e3:>12.3f}"
                  f"{t_np / t_nb:>9.1f}x{flag}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())

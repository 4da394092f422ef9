"""Time the numba and numpy tree kernels on synthetic forests.

    python3 benchmarks/bench_kernels.py --trees 200 1000 4000 --repeat 5

Each size is generated once; both backends then run depth and subtree
passes over the same arrays and must agree bit for bit.  The first numba
call (JIT compilation) is reported separately and excluded from the timings.
"""

import argparse
import statistics
import time

import numpy as np

from convtox import _kernels
from convtox.synth import SynthParams, synth_arrays


def _run(backend, parent, ptr, idx, tox):
    depth = _kernels.node_depths(parent, ptr, idx, backend=backend)
    ta, eng = _kernels.subtree_metrics(parent, ptr, idx, depth, tox, backend=backend)
    return depth, ta, eng


def _time(fn, repeat):
    samples = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        samples.append(time.perf_counter() - start)
    return statistics.median(samples), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trees", type=int, nargs="+", default=[200, 1000, 4000])
    ap.add_argument("--mean-children", type=float, default=4.0)
    ap.add_argument("--depth-decay", type=float, default=0.8)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba backend unavailable (not installed or CONVTOX_NO_NUMBA set)")

    warm = synth_arrays(SynthParams(trees=2, with_text=False), seed=0)
    ptr, idx = _kernels.child_csr(warm.parent)
    start = time.perf_counter()
    _run("numba", warm.parent, ptr, idx, warm.toxicity)
    print(f"numba compile + first call: {time.perf_counter() - start:.2f}s\n")

    print(f"{'nodes':>10} {'max depth':>9} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for trees in args.trees:
        params = SynthParams(trees=trees, mean_children=args.mean_children,
                             depth_decay=args.depth_decay, with_text=False)
        arr = synth_arrays(params, seed=args.seed)
        parent, tox = arr.parent, arr.toxicity
        assert np.all(parent < np.arange(len(parent))), "parents must precede children"
        ptr, idx = _kernels.child_csr(parent)
        t_jit, out_jit = _time(lambda: _run("numba", parent, ptr, idx, tox), args.repeat)
        t_np, out_np = _time(lambda: _run("numpy", parent, ptr, idx, tox), args.repeat)
        for a, b in zip(out_jit, out_np):
            assert np.array_equal(a, b), "backends disagree"
        print(f"{len(parent):>10} {int(out_np[0].max()):>9} {t_jit * 1e3:>10.1f} "
              f"{t_np * 1e3:>10.1f} {t_np / t_jit:>7.1f}x")


if __name__ == "__main__":
    main()

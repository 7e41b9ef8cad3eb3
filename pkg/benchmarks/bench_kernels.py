"""Compiled vs pure-Python kernel timings.

    python3 benchmarks/bench_kernels.py [--size 256] [--occupancy 0.1] [--repeats 5]

Prints one ``kernel=<name> python_ms=<t> compiled_ms=<t> speedup=<x>`` line
per kernel, then the same comparison for a full sparse refinement pass.
"""
import argparse
import time

import numpy as np

from mask2alpha import kernels
from mask2alpha.numerics import SeededRng
from mask2alpha.sparse import WIDTH, init_sparse, random_map, sparse_refine


def best_ms(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return 1000.0 * min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--occupancy", type=float, default=0.1)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if "compiled" not in kernels.BACKENDS:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    py, cc = kernels.get_backend("python"), kernels.get_backend("compiled")
    rng = SeededRng(args.seed, 0xBE)
    smap = random_map((args.size, args.size), args.occupancy, rng)
    coords = np.ascontiguousarray(smap.active)
    index = smap.index_grid()
    nbr = py.build_neighbors(index, coords, 3)
    feat = rng.random((len(coords), WIDTH))
    weight = rng.normal(0.0, 0.1, (9, WIDTH, WIDTH))
    bias = np.zeros(WIDTH)
    blobs = np.ascontiguousarray(rng.random((args.size, args.size)) < 0.55, dtype=np.uint8)

    cases = [
        ("build_neighbors", lambda impl: impl.build_neighbors(index, coords, 3)),
        ("subm_conv", lambda impl: impl.subm_conv(feat, nbr, weight, bias)),
        ("largest_component", lambda impl: impl.largest_component(blobs)),
    ]
    params = init_sparse(rng)
    params["sgsdr.head.w"].data[...] = rng.normal(0.0, 0.1, params["sgsdr.head.w"].data.shape)
    image = rng.random((3, args.size, args.size))
    a_low = rng.random((args.size // 4, args.size // 4))
    cases.append(("sparse_refine", lambda impl: sparse_refine(
        a_low, image, smap, params, backend="compiled" if impl is cc else "python")))

    print(f"size={args.size} occupancy={args.occupancy:g} active={len(coords)}")
    for name, fn in cases:
        t_py = best_ms(lambda: fn(py), args.repeats)
        t_cc = best_ms(lambda: fn(cc), args.repeats)
        print(f"kernel={name} python_ms={t_py:.3f} compiled_ms={t_cc:.3f} speedup={t_py / t_cc:.2f}")


if __name__ == "__main__":
    main()

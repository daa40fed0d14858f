"""Compare the compiled and pure-numpy kernel backends.

Times ``spread``, ``interp`` and ``direct_sum`` on a 32^3 cones trajectory with
both backends, checks that their outputs agree, and prints one line per
kernel.  Usage::

    python3 benchmarks/bench_kernels.py [--repeat 3] [--json out.json]
"""
import argparse
import json
import timeit

import numpy as np
from threadpoolctl import threadpool_limits

from offres.kernels import available_backends, get_backend
from offres.recon import DEFAULT_OVERSAMP, DEFAULT_WIDTH, kb_table, oversampled_shape
from offres.trajectory import generate_cones


def _cases(n, m=512):
    traj = generate_cones(32, 48, 64, 1.18e-3, 2.0, n)
    shape = (n,) * 3
    gshape = oversampled_shape(shape, DEFAULT_OVERSAMP)
    table, tscale = kb_table(DEFAULT_WIDTH, DEFAULT_OVERSAMP)
    coords = np.ascontiguousarray(traj.samples * (gshape[0] / n))
    r = np.random.default_rng(0)
    vals = r.standard_normal(traj.n_samples) + 1j * r.standard_normal(traj.n_samples)
    grid = r.standard_normal(gshape) + 1j * r.standard_normal(gshape)
    # direct sum over a sparse set of voxels keeps the python twin tolerable
    pts = np.ascontiguousarray(r.integers(-n // 2, n // 2, size=(m, 3)).astype(np.float64))
    pv = r.standard_normal(m) + 1j * r.standard_normal(m)
    pf = r.uniform(-400, 400, m)
    t = np.ascontiguousarray(traj.timestamps.ravel())
    dims = np.array(shape, dtype=np.float64)
    return {
        "spread": lambda b: b.spread(coords, vals, gshape, DEFAULT_WIDTH, table, tscale),
        "interp": lambda b: b.interp(grid, coords, DEFAULT_WIDTH, table, tscale),
        "direct_sum": lambda b: b.direct_sum(pts, pv, pf, traj.samples, t, dims),
    }, traj.n_samples


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--points", type=int, default=512, help="voxels in the direct sum")
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    backends = available_backends()
    cases, n_samples = _cases(args.size, args.points)
    print(f"{n_samples} samples, grid {args.size}^3, backends: {', '.join(backends)}")
    results = []
    with threadpool_limits(1):
        for name, fn in cases.items():
            row = {"kernel": name}
            outs = {}
            for be in backends:
                mod = get_backend(be)
                outs[be] = fn(mod)
                row[be + "_s"] = min(timeit.repeat(lambda: fn(mod), number=1,
                                                   repeat=args.repeat))
            if len(outs) == 2:
                a, b = outs["cython"], outs["python"]
                row["rel_diff"] = float(np.linalg.norm(a - b) / np.linalg.norm(b))
                row["speedup"] = row["python_s"] / row["cython_s"]
            results.append(row)
            print("  ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                            for k, v in row.items()))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=1)
    return results


if __name__ == "__main__":
    main()

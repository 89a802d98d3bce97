"""Compare the compiled and numpy kernels on representative workloads.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
import argparse
import json
import timeit

import numpy as np

from widthforge import kernels


def workloads(rng):
    mats = rng.normal(size=(20000, 3, 3))
    mats6 = rng.normal(size=(2000, 6, 6))
    V = rng.normal(size=(400, 4, 3))
    origin = V[:, 0]
    inv = np.linalg.inv(np.transpose(V[:, 1:] - origin[:, None], (0, 2, 1)))
    pts = rng.normal(size=(5000, 3))
    coef = rng.normal(size=(2000, 5, 3))
    return {
        "singular_values 20000x3x3": lambda b: b.singular_values(mats),
        "singular_values 2000x6x6": lambda b: b.singular_values(mats6),
        "locate_simplices 5000 pts / 400 tets": lambda b: b.locate_simplices(pts, inv, origin, 1e-12),
        "clip_halfplanes 2000 x 5": lambda b: b.clip_halfplanes(coef, 2.0),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json")
    args = p.parse_args(argv)
    backends = kernels.backends()
    rows = []
    for name, fn in workloads(np.random.default_rng(0)).items():
        row = {"workload": name}
        for bname, mod in sorted(backends.items()):
            row[bname] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        if "cython" in row:
            row["speedup"] = row["python"] / row["cython"]
        rows.append(row)
    width = max(len(r["workload"]) for r in rows)
    print(f"{'workload':<{width}}  {'python s':>10}  {'cython s':>10}  speedup")
    for r in rows:
        cy = f"{r['cython']:10.4f}" if "cython" in r else f"{'-':>10}"
        sp = f"{r['speedup']:7.1f}x" if "speedup" in r else "      -"
        print(f"{r['workload']:<{width}}  {r['python']:10.4f}  {cy}  {sp}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()

"""Compare the compiled kernels against the numpy fallback on the bundled
mixed instance.

    python benchmarks/bench_kernels.py [--levels 3] [--repeat 3]

Each row times one full solve (lattice control problem and projected finite
differences) and reports the largest difference between the two backends.
"""
import argparse
import timeit
from importlib import resources

import numpy as np

from dynkingame import _backend
from dynkingame.chain import build_chain
from dynkingame.cli import RunConfig
from dynkingame.game import mixed_value
from dynkingame.model import load_spec
from dynkingame.pde import hjbvi_project_solve


def solvers(spec, grid, threads):
    chain = build_chain(spec, grid)
    return {
        "lattice": lambda: mixed_value(chain, spec, threads=threads).u,
        "fd-projection": lambda: hjbvi_project_solve(spec, grid, threads=threads).u,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, default=3, help="grid refinements beyond the published grid")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)

    cfg = RunConfig.load(resources.files("dynkingame") / "data" / "mixed_run.json")
    spec = load_spec(cfg.spec_path)
    grid = cfg.make_grid(spec)
    backends = _backend.available()
    if "compiled" not in backends:
        print("compiled kernels are not built; only the numpy fallback is available")
    print(f"{'solver':<14s} {'N':>5s} {'M':>5s} " + " ".join(f"{b + ' [s]':>14s}" for b in backends)
          + f" {'speedup':>8s} {'max diff':>9s}")
    prev = _backend.name()
    try:
        for _ in range(args.levels + 1):
            for label, fn in solvers(spec, grid, args.threads).items():
                times, out = [], []
                for b in backends:
                    _backend.use(b)
                    out.append(fn())
                    times.append(min(timeit.repeat(fn, number=1, repeat=args.repeat)))
                speed = times[-1] / times[0] if len(times) > 1 else 1.0
                diff = float(np.max(np.abs(out[0] - out[-1])))
                print(f"{label:<14s} {grid.N:>5d} {grid.M:>5d} " + " ".join(f"{t:>14.4f}" for t in times)
                      + f" {speed:>7.1f}x {diff:>9.1e}")
            grid = grid.refine()
    finally:
        _backend.use(prev)


if __name__ == "__main__":
    main()

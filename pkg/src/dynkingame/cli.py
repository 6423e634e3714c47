"""Command line front end: JSON config in, CSV/JSON artifacts out.

Exit codes: 0 success, 1 a check failed, 2 bad configuration or build error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bsde import BsdeSolution, SolverError, solve_drbsde
from .chain import ChainBuildError, TimeStateGrid, build_chain
from .game import dpp_residual, lsc_envelope_sequence, mixed_value
from .model import ProblemSpec, SpecError, load_spec, validate
from .oracle import OracleError, enumerate_game_value, random_instance
from .pde import (StabilityError, hjbvi_penalty_solve, hjbvi_project_solve, hjbvi_residual, penalty_sweep,
                  uniqueness_form)

SCHEMA = 1
METHODS = ("lattice", "fd-projection", "fd-penalty")
COMMANDS = ("validate", "solve", "cross-check", "oracle", "dpp-check", "envelope", "report")
DEFAULT_TOL = {"cross_check": 5e-3, "oracle": 1e-10, "dpp": 1e-12}
CONFIG_KEYS = {
    "schema", "spec_path", "grid", "method", "penalty_n", "seed", "output_dir", "tolerances",
    "levels", "refinements", "random_instances", "penalty_levels",
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    spec_path: Path
    grid: dict
    method: str = "lattice"
    penalty_n: float = 0.0
    seed: int = 0
    output_dir: Path = Path("out")
    tolerances: dict = field(default_factory=dict)
    levels: list = field(default_factory=lambda: [1, 2, 4, 8, 16])
    refinements: int = 0
    random_instances: int = 0
    penalty_levels: list = field(default_factory=list)

    def tol(self, name: str) -> float:
        return float(self.tolerances.get(name, DEFAULT_TOL[name]))

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            obj = json.loads(path.read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from None
        return cls.from_json(obj, path.parent)

    @classmethod
    def from_json(cls, obj: dict, base: Path = Path(".")) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        bad = sorted(set(obj) - CONFIG_KEYS)
        if bad:
            raise ConfigError(f"unknown config keys: {', '.join(bad)}")
        if obj.get("schema") != SCHEMA:
            raise ConfigError(f"config schema must be {SCHEMA}, got {obj.get('schema')!r}")
        for key in ("spec_path", "grid"):
            if key not in obj:
                raise ConfigError(f"config is missing {key!r}")
        grid = obj["grid"]
        if not isinstance(grid, dict) or set(grid) != {"N", "M", "x_min", "x_max"}:
            raise ConfigError("grid needs exactly the keys N, M, x_min, x_max")
        if int(grid["N"]) < 1 or int(grid["M"]) < 3 or not float(grid["x_min"]) < float(grid["x_max"]):
            raise ConfigError(f"grid must satisfy N >= 1, M >= 3, x_min < x_max; got {grid}")
        method = obj.get("method", "lattice")
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
        tols = obj.get("tolerances", {})
        unknown = sorted(set(tols) - set(DEFAULT_TOL))
        if unknown:
            raise ConfigError(f"unknown tolerance overrides: {', '.join(unknown)}")
        spec_path = Path(obj["spec_path"])
        if not spec_path.is_absolute():
            spec_path = base / spec_path
        # spec_path is relative to the config file, output_dir to the working directory
        out = Path(obj.get("output_dir", "out"))
        return cls(
            spec_path=spec_path,
            grid={"N": int(grid["N"]), "M": int(grid["M"]), "x_min": float(grid["x_min"]), "x_max": float(grid["x_max"])},
            method=method,
            penalty_n=float(obj.get("penalty_n", 0.0)),
            seed=int(obj.get("seed", 0)),
            output_dir=out,
            tolerances=dict(tols),
            levels=list(obj.get("levels", [1, 2, 4, 8, 16])),
            refinements=int(obj.get("refinements", 0)),
            random_instances=int(obj.get("random_instances", 0)),
            penalty_levels=list(obj.get("penalty_levels", [])),
        )

    def make_grid(self, spec: ProblemSpec) -> TimeStateGrid:
        g = self.grid
        return TimeStateGrid(g["N"], g["M"], g["x_min"], g["x_max"], spec.T)


# ---------------------------------------------------------------------------
# export


def _num(v) -> str:
    return "%.17g" % v


def _node_prefix(grid, rows: int):
    ts, xs = grid.times, grid.xs
    return [(k, _num(ts[k]), i, _num(xs[i])) for k in range(rows) for i in range(len(xs))]


def _write_table(path: Path, header: list[str], grid, columns: list[np.ndarray], kinds: list[str]):
    """``grid`` only needs ``times`` and ``xs``."""
    rows = columns[0].shape[0]
    M = len(grid.xs)
    flat = [np.asarray(c).reshape(rows * M) for c in columns]
    lines = [",".join(header)]
    for n, (k, t, i, x) in enumerate(_node_prefix(grid, rows)):
        cells = [str(k), t, str(i), x]
        for col, kind in zip(flat, kinds):
            cells.append(str(int(col[n])) if kind == "int" else _num(col[n]))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
    return path


def export_fields(fields: dict, grid, output_dir) -> list[Path]:
    """One ``<name>.csv`` per field, header ``k,t,i,x,value``, rows in (k, i) order."""
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {out}: {e}") from None
    paths = []
    for name in sorted(fields):
        arr = np.asarray(fields[name], dtype=float)
        M = len(grid.xs)
        if arr.ndim != 2 or arr.shape[1] != M or arr.shape[0] > len(grid.times):
            raise ValueError(f"field {name!r} has shape {arr.shape}, expected (rows, {M})")
        try:
            paths.append(_write_table(out / f"{name}.csv", ["k", "t", "i", "x", "value"], grid, [arr], ["float"]))
        except OSError as e:
            raise ConfigError(f"cannot write {out / (name + '.csv')}: {e}") from None
    return paths


def export_bsde(sol: BsdeSolution, grid: TimeStateGrid, path) -> Path:
    J = sol.K.shape[2]
    header = ["k", "t", "i", "x", "Y", "Z"] + [f"K_{j + 1}" for j in range(J)] + ["A1_inc", "A2_inc"]
    cols = [sol.Y, sol.Z] + [sol.K[:, :, j] for j in range(J)] + [sol.A1_inc, sol.A2_inc]
    return _write_table(Path(path), header, grid, cols, ["float"] * len(cols))


def export_game(u, strategy, grid: TimeStateGrid, path) -> Path:
    N, M = grid.N, grid.M
    astar = np.full((N + 1, M), -1, dtype=np.int64)
    astar[:N] = strategy.alpha_star
    header = ["k", "t", "i", "x", "u", "alpha_star", "lower_contact", "upper_contact"]
    cols = [u, astar, strategy.lower_contact, strategy.upper_contact]
    return _write_table(Path(path), header, grid, cols, ["float", "int", "int", "int"])


def export_pde(sol, path) -> Path:
    return _write_table(Path(path), ["k", "t", "i", "x", "u", "residual"], sol.grid, [sol.u, sol.residual],
                        ["float", "float"])


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# commands


def _prepare(cfg: RunConfig):
    spec = load_spec(cfg.spec_path)
    grid = cfg.make_grid(spec)
    try:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {cfg.output_dir}: {e}") from None
    return spec, grid


def cmd_validate(cfg: RunConfig | None, spec_path, threads, out) -> int:
    spec = load_spec(spec_path if cfg is None else cfg.spec_path)
    rep = validate(spec)
    if rep.ok:
        print("spec valid: no violated invariants", file=out)
        return 0
    for v in rep.violations:
        print(f"violation: {v}", file=out)
    return 1


def cmd_solve(cfg: RunConfig, threads, out) -> int:
    spec, grid = _prepare(cfg)
    d = cfg.output_dir
    if cfg.method == "lattice":
        chain = build_chain(spec, grid)
        ms = mixed_value(chain, spec, threads=threads)
        export_fields({"u": ms.u}, grid, d)
        export_game(ms.u, ms.strategy, grid, d / "game.csv")
        export_bsde(ms.solution, grid, d / "bsde.csv")
        print(f"lattice solve: u[0] at mid node = {_num(ms.u[0, grid.M // 2])}", file=out)
        return 0
    if cfg.method == "fd-projection":
        sol = hjbvi_project_solve(spec, grid, threads=threads)
    else:
        sol = hjbvi_penalty_solve(spec, grid, cfg.penalty_n, threads=threads)
        if cfg.penalty_levels:
            write_json(d / "penalty_sweep.json", penalty_sweep(spec, grid, cfg.penalty_levels, threads=threads))
    export_fields({"u": sol.u}, grid, d)
    export_pde(sol, d / "pde.csv")
    norm = hjbvi_residual(spec, grid, sol.u)[1].norm
    print(f"{cfg.method} solve: u[0] at mid node = {_num(sol.u[0, grid.M // 2])}, residual norm {_num(norm)}",
          file=out)
    return 0


def cross_check_levels(spec: ProblemSpec, grid: TimeStateGrid, refinements: int, threads: int = 1) -> dict:
    levels = []
    for _ in range(refinements + 1):
        u_lat = mixed_value(build_chain(spec, grid), spec, threads=threads).u
        u_fd = hjbvi_project_solve(spec, grid, threads=threads).u
        levels.append({"grid": grid.to_json(), "gap": float(np.max(np.abs(u_lat - u_fd)))})
        grid = grid.refine()
    gaps = [lv["gap"] for lv in levels]
    ratios = [b / a if a > 0 else 0.0 for a, b in zip(gaps, gaps[1:])]
    return {"levels": levels, "ratios": ratios}


def cmd_cross_check(cfg: RunConfig, threads, out) -> int:
    spec, grid = _prepare(cfg)
    res = cross_check_levels(spec, grid, cfg.refinements, threads)
    tol = cfg.tol("cross_check")
    gap = res["levels"][0]["gap"]
    ok = gap <= tol
    # the gap only speaks to uniqueness when the driver has no explicit t-dependence
    res.update({"tolerance": tol, "gap": gap, "pass": ok, "uniqueness_form": uniqueness_form(spec)})
    write_json(cfg.output_dir / "cross_check.json", res)
    print(f"cross-check: sup gap {_num(gap)} vs tolerance {_num(tol)}: {'ok' if ok else 'FAIL'}", file=out)
    if not res["uniqueness_form"]:
        print("cross-check: driver depends on t explicitly; the gap is not a uniqueness statement", file=out)
    return 0 if ok else 1


def _oracle_entry(spec, grid, i0, seed, policy=0):
    chain = build_chain(spec, grid)
    res = enumerate_game_value(chain, spec, policy, i0)
    solver = float(solve_drbsde(chain, spec, policy).Y[0, i0])
    return {"instance_seed": seed, "oracle_value": res.value, "solver_value": solver,
            "gap": abs(res.value - solver), "saddle_ok": res.saddle_ok}


def cmd_oracle(cfg: RunConfig, threads, out) -> int:
    spec, grid = _prepare(cfg)
    entries = []
    for a in range(spec.n_controls):
        entries.append(_oracle_entry(spec, grid, grid.M // 2, None, a))
    for n in range(cfg.random_instances):
        s = cfg.seed + n
        rs, rg, i0 = random_instance(s)
        entries.append(_oracle_entry(rs, rg, i0, s))
    tol = cfg.tol("oracle")
    worst = max(e["gap"] for e in entries)
    ok = worst <= tol and all(e["saddle_ok"] for e in entries)
    write_json(cfg.output_dir / "oracle.json", {"instances": entries, "tolerance": tol, "max_gap": worst, "pass": ok})
    print(f"oracle: {len(entries)} instances, max gap {_num(worst)}: {'ok' if ok else 'FAIL'}", file=out)
    return 0 if ok else 1


def cmd_dpp_check(cfg: RunConfig, threads, out) -> int:
    spec, grid = _prepare(cfg)
    chain = build_chain(spec, grid)
    u = mixed_value(chain, spec, threads=threads).u
    res = [dpp_residual(chain, spec, u, s, threads=threads) for s in range(1, grid.N)]
    tol = cfg.tol("dpp")
    worst = max(res, default=0.0)
    ok = worst <= tol
    write_json(cfg.output_dir / "dpp.json",
               {"residuals": res, "s_index": list(range(1, grid.N)), "max": worst, "tolerance": tol, "pass": ok})
    print(f"dpp-check: {len(res)} interior times, max residual {_num(worst)}: {'ok' if ok else 'FAIL'}", file=out)
    return 0 if ok else 1


def cmd_envelope(cfg: RunConfig, threads, out) -> int:
    spec, grid = _prepare(cfg)
    chain = build_chain(spec, grid)
    seq = lsc_envelope_sequence(chain, spec, cfg.levels, threads=threads)
    fields = {f"u_n{int(n) if float(n).is_integer() else n}": u for n, u in zip(seq.levels, seq.u_n)}
    export_fields(fields, grid, cfg.output_dir)
    ok = seq.monotone()
    g_rows = {f"{n:g}": row.tolist() for n, row in zip(seq.levels, seq.g_n)}
    write_json(cfg.output_dir / "envelope.json", {"levels": seq.levels, "monotone": ok, "g_n": g_rows})
    print(f"envelope: {len(seq.levels)} levels, monotone: {'yes' if ok else 'NO'}", file=out)
    return 0 if ok else 1


def cmd_report(cfg: RunConfig, threads, out) -> int:
    d = cfg.output_dir
    if not d.is_dir():
        raise ConfigError(f"output directory {d} does not exist")
    files = []
    checks = {}
    notes = []
    for p in sorted(d.iterdir()):
        if not p.is_file() or p.name == "report.json":
            continue
        data = p.read_bytes()
        entry = {"name": p.name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()}
        if p.suffix == ".csv":
            entry["rows"] = data.count(b"\n") - 1
        elif p.suffix == ".json":
            obj = json.loads(data)
            if isinstance(obj, dict) and "pass" in obj:
                checks[p.stem] = obj["pass"]
                if obj.get("uniqueness_form") is False:
                    notes.append(f"{p.name}: driver outside the uniqueness form, gap not conclusive")
            elif isinstance(obj, dict) and "monotone" in obj:
                checks[p.stem] = obj["monotone"]
        files.append(entry)
    ok = all(checks.values())
    write_json(d / "report.json", {"files": files, "checks": checks, "notes": notes, "all_pass": ok})
    print(f"report: {len(files)} artifacts, checks {'all pass' if ok else 'FAILED'}", file=out)
    return 0 if ok else 1


HANDLERS = {
    "solve": cmd_solve,
    "cross-check": cmd_cross_check,
    "oracle": cmd_oracle,
    "dpp-check": cmd_dpp_check,
    "envelope": cmd_envelope,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynkingame", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("config", help="run config JSON (validate also accepts a bare problem spec)")
    p.add_argument("--method", choices=METHODS, help="override the config method")
    p.add_argument("--penalty", type=float, help="override penalty_n")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--output-dir", help="override output_dir")
    p.add_argument("--seed", type=int, help="override seed")
    return p


def _load_config(path, args):
    obj = json.loads(Path(path).read_text())
    if isinstance(obj, dict) and "spec_path" not in obj:
        return None  # a bare problem spec
    cfg = RunConfig.from_json(obj, Path(path).parent)
    if args.method:
        cfg.method = args.method
    if args.penalty is not None:
        if args.penalty < 0:
            raise ConfigError(f"penalty must be nonnegative, got {args.penalty}")
        cfg.penalty_n = args.penalty
    if args.output_dir:
        cfg.output_dir = Path(args.output_dir)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = _load_config(args.config, args)
        if args.command == "validate":
            return cmd_validate(cfg, args.config, args.threads, out)
        if cfg is None:
            raise ConfigError(f"command {args.command!r} needs a run config with spec_path and grid")
        return HANDLERS[args.command](cfg, args.threads, out)
    except (ConfigError, SpecError, ChainBuildError, StabilityError, SolverError, OracleError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as e:
        print(f"error: invalid JSON: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

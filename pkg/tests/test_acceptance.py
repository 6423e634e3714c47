"""Acceptance criteria, one test each. Every test prints a single PASS/FAIL
line (visible with ``pytest -v`` or ``-s``) before asserting."""
import io
import json
import time

import numpy as np
import pytest

from dynkingame import cli
from dynkingame import model as m
from dynkingame.bsde import barrier_fields, solve_drbsde
from dynkingame.chain import TimeStateGrid, build_chain
from dynkingame.game import dpp_residual, evaluate_strategies, lsc_envelope_sequence, mixed_value
from dynkingame.oracle import FAMILIES, enumerate_game_value, linear_case_value, mokobodzki_decompose, random_instance
from dynkingame.pde import hjbvi_project_solve, penalty_sweep
from conftest import DATA


def report(capsys, n, name, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance {n:2d}] {name:<28s} {'PASS' if ok else 'FAIL'}  {detail}")


def published(config_name):
    cfg = cli.RunConfig.load(DATA / config_name)
    spec = m.load_spec(cfg.spec_path)
    return cfg, spec, cfg.make_grid(spec)


def test_01_oracle_equivalence(capsys):
    t0 = time.perf_counter()
    gaps, saddles, seen = [], [], set()
    for seed in range(60):
        spec, grid, i0 = random_instance(seed)
        seen.add(spec.driver.family)
        assert grid.N <= 3
        ch = build_chain(spec, grid)
        res = enumerate_game_value(ch, spec, 0, i0)
        gaps.append(abs(res.value - solve_drbsde(ch, spec, 0).Y[0, i0]))
        saddles.append(res.saddle_ok)
    elapsed = time.perf_counter() - t0
    ok = max(gaps) <= 1e-10 and all(saddles) and seen == set(FAMILIES) and elapsed <= 60
    report(capsys, 1, "oracle equivalence", ok,
           f"{len(gaps)} instances, {len(seen)} driver families, max gap {max(gaps):.2e}, {elapsed:.1f} s")
    assert ok


def test_02_sandwich_invariant(capsys):
    checked = 0
    bad = []

    def check(spec, grid, u, what):
        nonlocal checked
        h1, h2 = barrier_fields(spec, grid)
        checked += 1
        if not (np.all(h1[:-1] <= u[:-1]) and np.all(u[:-1] <= h2[:-1])):
            bad.append(what + " sandwich")
        if not np.array_equal(u[-1], spec.g(grid.xs) * np.ones(grid.M)):
            bad.append(what + " terminal")

    _, spec, grid = published("mixed_run.json")
    for _ in range(3):
        check(spec, grid, mixed_value(build_chain(spec, grid), spec).u, f"lattice {grid.N}")
        check(spec, grid, hjbvi_project_solve(spec, grid).u, f"fd {grid.N}")
        grid = grid.refine()
    for seed in range(40):
        s, g, _ = random_instance(seed)
        check(s, g, solve_drbsde(build_chain(s, g), s, 0).Y, f"random {seed}")
    ok = not bad
    report(capsys, 2, "sandwich invariant", ok, f"{checked} solves, violations: {bad or 'none'}")
    assert ok


def _perturbed_pairs(rng):
    """(base, bumped) root-field pairs under nodewise increases of g, h1, h2 or the source."""
    kinds = ("g", "h1", "h2", "source")
    for n in range(24):
        spec, grid, _ = random_instance(1000 + n)
        ch = build_chain(spec, grid)
        h1, h2 = barrier_fields(spec, grid)
        g = spec.g(grid.xs) * np.ones(grid.M)
        base = solve_drbsde(ch, spec, 0).Y
        kind = kinds[n % 4]
        if kind == "g":
            bumped = solve_drbsde(ch, spec, 0, terminal=g + rng.uniform(0, 0.5, grid.M)).Y
        elif kind == "h1":
            up = np.minimum(rng.uniform(0, 0.5, h1.shape), h2 - h1)
            bumped = solve_drbsde(ch, spec, 0, h1=h1 + up).Y
        elif kind == "h2":
            bumped = solve_drbsde(ch, spec, 0, h2=h2 + rng.uniform(0, 0.5, h2.shape)).Y
        else:
            d = spec.driver
            fam = "discount" if d.family == "zero" else d.family
            src = (d.source[0] + rng.uniform(0, 0.3), d.source[1], d.source[2], d.source[3])
            more = spec.with_(driver=m.DriverSpec(fam, d.r, d.r_alpha, d.a, d.kappa, d.gamma, src))
            bumped = solve_drbsde(ch, more, 0).Y
        yield kind, base, bumped
    # the mixed instance through the full control problem
    _, spec, grid = published("mixed_run.json")
    ch = build_chain(spec, grid)
    base = mixed_value(ch, spec).u
    d = spec.driver
    variants = {
        "g": spec.with_(g=m.piecewise(spec.g.breakpoints, [(a + 0.01, b) for a, b in spec.g.pieces])),
        "h1": spec.with_(h1=m.Barrier(m.constant(0.44), 0.0, -1.0)),
        "h2": spec.with_(h2=m.Barrier(m.constant(0.6), spec.h2.ct, 1.0)),
        "source": spec.with_(driver=m.DriverSpec(d.family, d.r, d.r_alpha, d.a, d.kappa, d.gamma,
                                                 (d.source[0] + 0.02,) + d.source[1:])),
    }
    for kind, v in variants.items():
        yield kind, base, mixed_value(ch, v).u


def test_03_comparison_monotonicity(capsys):
    rng = np.random.default_rng(3)
    worst, count = 0.0, 0
    for kind, base, bumped in _perturbed_pairs(rng):
        count += 1
        worst = max(worst, float(np.max(base - bumped)))
    ok = count >= 20 and worst <= 1e-12
    report(capsys, 3, "comparison monotonicity", ok, f"{count} pairs, max decrease {worst:.2e}")
    assert ok


def test_04_dpp_residual(capsys, tmp_path):
    code = cli.main(["dpp-check", str(DATA / "mixed_run.json"), "--output-dir", str(tmp_path)], out=io.StringIO())
    worst = json.loads((tmp_path / "dpp.json").read_text())["max"]
    solves = 1
    _, spec, grid = published("mixed_run.json")
    grid = grid.refine()
    ch = build_chain(spec, grid)
    u = mixed_value(ch, spec).u
    worst = max(worst, max(dpp_residual(ch, spec, u, s) for s in range(1, grid.N)))
    solves += 1
    for seed in range(10):
        s, g, _ = random_instance(seed)
        c = build_chain(s, g)
        uu = mixed_value(c, s).u
        worst = max(worst, max(dpp_residual(c, s, uu, k) for k in range(1, g.N)))
        solves += 1
    ok = code == 0 and worst <= 1e-12
    report(capsys, 4, "DPP residual", ok, f"{solves} lattice solves, every interior time, max residual {worst:.2e}")
    assert ok


def test_05_cross_solver_convergence(capsys):
    t0 = time.perf_counter()
    cfg, spec, grid = published("mixed_run.json")
    assert spec.n_controls == 2 and spec.jumps.n_marks == 2 and spec.driver.family == "z-ambiguity"
    res = cli.cross_check_levels(spec, grid, 3)
    gaps = [lv["gap"] for lv in res["levels"]]
    ratios = res["ratios"]
    elapsed = time.perf_counter() - t0
    ok = gaps[0] <= 5e-3 and len(ratios) == 3 and all(0.3 <= r <= 0.7 for r in ratios) and elapsed <= 300
    report(capsys, 5, "cross-solver convergence", ok,
           f"gaps {', '.join(f'{g:.3e}' for g in gaps)}; ratios {', '.join(f'{r:.3f}' for r in ratios)}; "
           f"{elapsed:.1f} s")
    assert ok


def test_06_penalty_consistency(capsys):
    _, spec, grid = published("mixed_run.json")
    sweep = penalty_sweep(spec, grid, [10, 20, 40, 80])
    viol = [s["sandwich_violation"] for s in sweep]
    gap = sweep[-1]["gap_to_projection"]
    # projection-scheme tolerance: dt + dx, capped by the cross-check tolerance
    tol = min(grid.dt + grid.dx, cli.DEFAULT_TOL["cross_check"])
    ok = all(b < a for a, b in zip(viol, viol[1:])) and gap < 2 * tol
    report(capsys, 6, "penalty consistency", ok,
           f"violations {', '.join(f'{v:.3e}' for v in viol)}; gap at n=80 {gap:.3e} < {2 * tol:.3e}")
    assert ok


def test_07_linear_closed_form(capsys):
    r, dt, N, c = 0.1, 0.1, 10, 1.0
    expected = 1.0
    for _ in range(N):
        expected *= 1.0 - r * dt
    spec = m.ProblemSpec(
        coefficients=m.CoefficientSet(vol=m.CoefFamily(c0=0.3), jump=m.CoefFamily(c0=0.0)),
        jumps=m.JumpMeasure(), driver=m.DriverSpec("discount", r=r),
        h1=m.Barrier(m.constant(-1.0)), h2=m.Barrier(m.constant(2.0)), g=m.constant(c), controls=(0.0,), T=N * dt,
    )
    grid = TimeStateGrid(N, 11, -1.0, 1.0, N * dt)
    ch = build_chain(spec, grid)
    closed = linear_case_value(spec, ch, c)
    root = solve_drbsde(ch, spec, 0).Y[0]
    gap = float(np.max(np.abs(root - expected)))
    ok = gap <= 1e-12 and abs(closed - expected) <= 1e-12 and abs(expected - 0.9043820750088044) <= 1e-15
    report(capsys, 7, "linear closed form", ok, f"solver {float(root[5])!r} vs {expected!r}, gap {gap:.1e}")
    assert ok


def test_08_decomposition(capsys):
    rng = np.random.default_rng(8)
    worst_slack, neg, mismatch = None, 0, 0
    for n in range(10):
        spec, grid, _ = random_instance(200 + n)
        coeffs = tuple(rng.uniform(-1, 1, 3))
        barrier = "h1" if n % 2 == 0 else "h2"
        smooth = m.Barrier(m.poly(*coeffs), float(rng.uniform(-0.5, 0.5)))
        spec = spec.with_(**{barrier: smooth})
        dec = mokobodzki_decompose(build_chain(spec, grid), spec, barrier=barrier)
        neg += sum(v < 0 for v in dec.H.ravel()) + sum(v < 0 for v in dec.Hp.ravel())
        mismatch += sum(a - b != t for a, b, t in zip(dec.H.ravel(), dec.Hp.ravel(), dec.target.ravel()))
        s = min(dec.supermartingale_slack())
        worst_slack = s if worst_slack is None else min(worst_slack, s)
    ok = neg == 0 and mismatch == 0 and worst_slack >= -1e-12
    report(capsys, 8, "decomposition", ok,
           f"10 instances, negative entries {neg}, identity mismatches {mismatch}, min slack {float(worst_slack):.2e}")
    assert ok


def test_09_envelope_monotonicity(capsys):
    cfg, spec, grid = published("envelope_run.json")
    levels = [1, 2, 4, 8, 16]
    seq = lsc_envelope_sequence(build_chain(spec, grid), spec, levels)
    xs = grid.xs
    exact = all(np.array_equal(row, np.minimum(1.0, n * np.maximum(xs, 0.0))) for n, row in zip(levels, seq.g_n))
    mono = seq.monotone()
    ok = exact and mono
    report(capsys, 9, "envelope monotonicity", ok, f"levels {levels}, u_n nondecreasing {mono}, g_n exact {exact}")
    assert ok


def test_10_strategy_consistency(capsys):
    cfg, spec, grid = published("mixed_run.json")
    ch = build_chain(spec, grid)
    ms = mixed_value(ch, spec)
    i0 = grid.M // 2
    est = evaluate_strategies(ch, spec, ms, i0, 100_000, seed=cfg.seed)
    tol = grid.dt + grid.dx
    diff = abs(est.mean - ms.u[0, i0])
    ok = diff <= 3 * est.stderr + tol
    report(capsys, 10, "strategy consistency", ok,
           f"MC {est.mean:.6f} +- {est.stderr:.2e} vs u0 {ms.u[0, i0]:.6f} "
           f"({diff / est.stderr:.2f} SE; bound 3 SE + {tol:.3f})")
    assert ok


def test_11_determinism(capsys, tmp_path):
    runs = [
        ("solve", "mixed_run.json", []),
        ("solve", "mixed_run.json", ["--method", "fd-projection"]),
        ("solve", "mixed_run.json", ["--method", "fd-penalty"]),
        ("cross-check", "mixed_run.json", []),
        ("dpp-check", "mixed_run.json", []),
        ("oracle", "two_step_2_run.json", []),
        ("envelope", "envelope_run.json", []),
    ]
    trees = {}
    for threads in (1, 4):
        root = tmp_path / f"t{threads}"
        for n, (cmd, cfg, extra) in enumerate(runs):
            d = root / f"{n}_{cmd}"
            cli.main([cmd, str(DATA / cfg), "--threads", str(threads), "--output-dir", str(d), *extra],
                     out=io.StringIO())
            cli.main(["report", str(DATA / cfg), "--output-dir", str(d)], out=io.StringIO())
        trees[threads] = {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
    same = trees[1].keys() == trees[4].keys() and all(trees[1][k] == trees[4][k] for k in trees[1])
    ok = same and len(trees[1]) > 0
    report(capsys, 11, "determinism", ok, f"{len(trees[1])} artifacts byte-identical across 1 and 4 threads: {same}")
    assert ok

"""Explicit finite differences for the double-obstacle HJB variational inequality.

Independent of the lattice solver except for the jump-landing interpolation,
which both share. Drift (including the jump compensator) is upwinded, the
diffusion term uses central differences, boundary ghosts copy the edge value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .bsde import barrier_fields
from .chain import TimeStateGrid, jump_landing
from .model import ProblemSpec


class StabilityError(ValueError):
    pass


@dataclass(eq=False)
class PdeSolution:
    u: np.ndarray
    scheme: str
    residual: np.ndarray
    grid: TimeStateGrid
    penalty_n: float | None = None
    alpha_star: np.ndarray | None = None


class Stencil:
    """Per-control coefficient rows and jump interpolation on a grid."""

    def __init__(self, spec: ProblemSpec, grid: TimeStateGrid):
        self.spec, self.grid = spec, grid
        cs = spec.coefficients
        xs = grid.xs
        M = grid.M
        marks = np.asarray(spec.jumps.marks, dtype=float)
        self.nu = np.ascontiguousarray(spec.jumps.weights, dtype=float)
        J = marks.size
        A = spec.n_controls
        self.alphas = np.asarray(spec.controls, dtype=float)
        self.sigma = np.empty((A, M))
        self.b_eff = np.empty((A, M))
        self.idx = np.zeros((A, M, 3 + 2 * J), dtype=np.int64)
        self.jw = np.zeros((A, M, 3 + 2 * J))
        for a, alpha in enumerate(spec.controls):
            self.sigma[a] = cs.sigma(xs, alpha)
            b = cs.b(xs, alpha) * np.ones(M)
            for j, e in enumerate(marks):
                beta = cs.beta(xs, alpha, e) * np.ones(M)
                b = b - beta * self.nu[j]
                lo, th = jump_landing(grid, xs + beta)
                self.idx[a, :, 3 + 2 * j] = lo
                self.idx[a, :, 4 + 2 * j] = lo + 1
                self.jw[a, :, 3 + 2 * j] = 1.0 - th
                self.jw[a, :, 4 + 2 * j] = th
            self.b_eff[a] = b
        d = spec.driver
        self.rate = np.ascontiguousarray(d.rate(self.alphas), dtype=float)
        self.gnu = np.ascontiguousarray(spec.gamma * self.nu, dtype=float)
        self.gen = np.empty((A, M))
        self.z = np.empty((A, M))
        self.B = np.empty((A, M, J))
        self.G = np.empty((A, M))

    def stability_number(self, dt: float | None = None) -> float:
        g = self.grid
        dt = g.dt if dt is None else dt
        return float(np.max(self.sigma**2 * dt / g.dx**2 + np.abs(self.b_eff) * dt / g.dx)) + float(self.nu.sum()) * dt

    def check_stability(self):
        s = self.stability_number()
        if s > 1.0 + 1e-12:
            raise StabilityError(
                f"explicit stability violated: sigma^2 dt/dx^2 + |b| dt/dx + lambda dt = {s:.6g} > 1"
            )

    def source(self, k: int) -> np.ndarray:
        g = self.grid
        src = self.spec.driver.source_term(g.times[k], g.xs[None, :], self.alphas[:, None])
        return np.ascontiguousarray(src * np.ones((self.alphas.size, g.M)))

    def __call__(self, u_row, k: int, threads: int = 1):
        """Fill and return G[a, i] = (A + K)u + f(a, t_k, x, u, sigma u_x, B u)."""
        d = self.spec.driver
        args = (
            np.ascontiguousarray(u_row, dtype=float), self.idx, self.jw, self.sigma, self.b_eff,
            self.nu, self.grid.dx, self.rate, d.a, d.kappa, self.gnu, self.source(k),
            self.gen, self.z, self.B, self.G,
        )
        _backend.run("pde_step", args, self.grid.M, threads)
        return self.G


def apply_generator(spec: ProblemSpec, grid: TimeStateGrid, u_row, control: int, k: int = 0):
    """(A + K)u, B u per mark and sigma u_x on one row for control index ``control``."""
    st = Stencil(spec, grid)
    st(u_row, k)
    return st.gen[control].copy(), st.B[control].copy(), st.z[control].copy()


def _terminal(spec, grid, terminal):
    if terminal is None:
        return np.asarray(spec.g(grid.xs), dtype=float) * np.ones(grid.M)
    return np.asarray(terminal, dtype=float).copy()


def hjbvi_project_solve(spec: ProblemSpec, grid: TimeStateGrid, terminal=None, threads: int = 1) -> PdeSolution:
    st = Stencil(spec, grid)
    st.check_stability()
    h1, h2 = barrier_fields(spec, grid)
    N, M = grid.N, grid.M
    u = np.empty((N + 1, M))
    u[N] = _terminal(spec, grid, terminal)
    astar = np.zeros((N, M), dtype=np.int64)
    for k in range(N - 1, -1, -1):
        G = st(u[k + 1], k, threads)
        astar[k] = np.argmax(G, axis=0)
        free = u[k + 1] + grid.dt * G.max(axis=0)
        u[k] = np.minimum(np.maximum(free, h1[k]), h2[k])
    res = hjbvi_residual(spec, grid, u)[0]
    return PdeSolution(u, "projection", res, grid, None, astar)


def hjbvi_penalty_solve(spec: ProblemSpec, grid: TimeStateGrid, penalty_n: float, terminal=None,
                        threads: int = 1) -> PdeSolution:
    """Unconstrained explicit steps plus n (h1 - u)^+ - n (u - h2)^+.

    Each grid step is split into ceil(n dt) substeps so the penalty stays
    explicitly stable; penalty_n = 0 skips the penalty entirely.
    """
    if penalty_n < 0:
        raise ValueError("penalty_n must be nonnegative")
    st = Stencil(spec, grid)
    st.check_stability()
    h1, h2 = barrier_fields(spec, grid)
    N, M = grid.N, grid.M
    sub = max(1, math.ceil(penalty_n * grid.dt - 1e-12))
    dt = grid.dt / sub
    u = np.empty((N + 1, M))
    u[N] = _terminal(spec, grid, terminal)
    for k in range(N - 1, -1, -1):
        v = u[k + 1]
        for _ in range(sub):
            G = st(v, k, threads)
            step = G.max(axis=0)
            if penalty_n > 0:
                with np.errstate(invalid="ignore"):
                    step = step + penalty_n * np.maximum(h1[k] - v, 0.0) - penalty_n * np.maximum(v - h2[k], 0.0)
            v = v + dt * step
        u[k] = v
    res = hjbvi_residual(spec, grid, u)[0]
    return PdeSolution(u, "penalty", res, grid, float(penalty_n))


def sandwich_violation(spec: ProblemSpec, grid: TimeStateGrid, u: np.ndarray) -> float:
    h1, h2 = barrier_fields(spec, grid)
    with np.errstate(invalid="ignore"):
        v = np.maximum(h1[:-1] - u[:-1], 0.0) + np.maximum(u[:-1] - h2[:-1], 0.0)
    return float(np.max(v))


@dataclass
class ResidualSummary:
    norm: float
    worst: tuple[int, int]
    flagged: int


def hjbvi_residual(spec: ProblemSpec, grid: TimeStateGrid, u: np.ndarray, tol: float = 0.0):
    """R = max(min(inf_a H^a u, u - h1), u - h2) on rows k < N (row N is 0).

    H^a u = -(u[k+1] - u[k]) / dt - G_a(u[k+1]); returns ``(R, summary)``.
    """
    st = Stencil(spec, grid)
    h1, h2 = barrier_fields(spec, grid)
    N, M = grid.N, grid.M
    R = np.zeros((N + 1, M))
    for k in range(N):
        G = st(u[k + 1], k)
        infH = -(u[k + 1] - u[k]) / grid.dt - G.max(axis=0)
        R[k] = np.maximum(np.minimum(infH, u[k] - h1[k]), u[k] - h2[k])
    a = np.abs(R)
    k, i = np.unravel_index(int(np.argmax(a)), a.shape)
    return R, ResidualSummary(float(a[k, i]), (int(k), int(i)), int(np.count_nonzero(a > tol)))


def comparison_gap(U: np.ndarray, V: np.ndarray) -> float:
    """max(0, max(U - V)) for U[N] <= V[N]; 0 for an ordered sub/super pair."""
    U, V = np.asarray(U, dtype=float), np.asarray(V, dtype=float)
    if U.shape != V.shape:
        raise ValueError(f"fields differ in shape: {U.shape} vs {V.shape}")
    if np.any(U[-1] > V[-1]):
        i = int(np.argmax(U[-1] - V[-1]))
        raise ValueError(f"terminal ordering U[N] <= V[N] violated at i={i}")
    return max(0.0, float(np.max(U - V)))


def uniqueness_form(spec: ProblemSpec) -> bool:
    """True when the driver has no explicit time dependence, the form under
    which comparison (hence uniqueness) is asserted."""
    return spec.driver.source[1] == 0.0


def penalty_sweep(spec: ProblemSpec, grid: TimeStateGrid, levels, threads: int = 1) -> list[dict]:
    proj = hjbvi_project_solve(spec, grid, threads=threads)
    out = []
    for n in levels:
        pen = hjbvi_penalty_solve(spec, grid, float(n), threads=threads)
        out.append(
            {
                "penalty_n": float(n),
                "sandwich_violation": sandwich_violation(spec, grid, pen.u),
                "gap_to_projection": float(np.max(np.abs(pen.u - proj.u))),
            }
        )
    return out

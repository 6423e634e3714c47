"""Controlled Markov-chain approximation of the jump diffusion.

Every node ``(i, a)`` carries the same branch layout::

    0 up, 1 stay, 2 down, then for each mark j: 3+2j lower / 4+2j upper
    interpolation node of the landing point x + beta(x, a, e_j).

The coefficients do not depend on time, so one kernel serves all time steps.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ProblemSpec


class ChainBuildError(ValueError):
    pass


@dataclass(frozen=True)
class TimeStateGrid:
    N: int
    M: int
    x_min: float
    x_max: float
    T: float = 1.0

    def __post_init__(self):
        if self.N < 1:
            raise ChainBuildError(f"need N >= 1 time steps, got {self.N}")
        if self.M < 3:
            raise ChainBuildError(f"need M >= 3 state points, got {self.M}")
        if not self.x_min < self.x_max:
            raise ChainBuildError(f"need x_min < x_max, got [{self.x_min}, {self.x_max}]")
        if not self.T > 0:
            raise ChainBuildError(f"horizon must be positive, got {self.T}")

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.M - 1)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt

    @property
    def xs(self) -> np.ndarray:
        return self.x_min + np.arange(self.M) * self.dx

    def refine(self, factor: int = 2) -> "TimeStateGrid":
        return TimeStateGrid(self.N * factor, (self.M - 1) * factor + 1, self.x_min, self.x_max, self.T)

    def to_json(self):
        return {"N": self.N, "M": self.M, "x_min": self.x_min, "x_max": self.x_max}


@dataclass(frozen=True, eq=False)
class ChainApprox:
    grid: TimeStateGrid
    controls: tuple[float, ...]
    idx: np.ndarray  # (A, M, B) successor state index
    prob: np.ndarray  # (A, M, B)
    w: np.ndarray  # (A, M, B) Brownian increment proxy, 0 on jump branches
    jweight: np.ndarray  # (A, M, B) interpolation weight, 0 on diffusion branches
    jmark: np.ndarray  # (B,) mark index, -1 on diffusion branches
    b: np.ndarray  # (A, M)
    sigma: np.ndarray  # (A, M)
    b_eff: np.ndarray  # (A, M)
    beta: np.ndarray  # (A, M, J)
    nu: np.ndarray  # (J,)

    @property
    def n_controls(self) -> int:
        return self.idx.shape[0]

    @property
    def n_branches(self) -> int:
        return self.idx.shape[2]

    @property
    def n_marks(self) -> int:
        return self.nu.size

    def displacement(self) -> np.ndarray:
        """Nominal displacement per branch before clamping, shape (A, M, B)."""
        g = self.grid
        A, M, B = self.idx.shape
        out = np.zeros((A, M, B))
        out[:, :, 0] = g.dx
        out[:, :, 2] = -g.dx
        for j in range(self.n_marks):
            out[:, :, 3 + 2 * j] = self.beta[:, :, j]
            out[:, :, 4 + 2 * j] = self.beta[:, :, j]
        return out

    def export_json(self, path) -> None:
        """Per-node kernels for diagnostics; not a stable format."""
        nodes = []
        for a in range(self.n_controls):
            for i in range(self.grid.M):
                keep = self.prob[a, i] > 0
                nodes.append(
                    {
                        "control": a,
                        "i": i,
                        "succ": self.idx[a, i, keep].tolist(),
                        "prob": self.prob[a, i, keep].tolist(),
                        "w": self.w[a, i, keep].tolist(),
                    }
                )
        doc = {"grid": self.grid.to_json(), "controls": list(self.controls), "nodes": nodes}
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def jump_landing(grid: TimeStateGrid, land: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lower interpolation node and weight of landing points, clamped to the grid."""
    land = np.clip(land, grid.x_min, grid.x_max)
    pos = (land - grid.x_min) / grid.dx
    lo = np.clip(np.floor(pos).astype(np.int64), 0, grid.M - 2)
    return lo, np.clip(pos - lo, 0.0, 1.0)


def grid_for(spec: ProblemSpec, N: int, M: int, x_min: float, x_max: float) -> TimeStateGrid:
    return TimeStateGrid(N, M, x_min, x_max, spec.T)


def build_chain(spec: ProblemSpec, grid: TimeStateGrid) -> ChainApprox:
    if abs(grid.T - spec.T) > 1e-12 * spec.T:
        raise ChainBuildError(f"grid horizon {grid.T} differs from spec horizon {spec.T}")
    dt, dx, M = grid.dt, grid.dx, grid.M
    xs = grid.xs
    cs = spec.coefficients
    marks = np.asarray(spec.jumps.marks, dtype=float)
    nu = np.asarray(spec.jumps.weights, dtype=float)
    J = marks.size
    lam = float(nu.sum())
    if lam * dt >= 1.0:
        raise ChainBuildError(f"jump bound violated: lambda*dt = {lam * dt:.6g} >= 1")

    A = spec.n_controls
    B = 3 + 2 * J
    idx = np.empty((A, M, B), dtype=np.int64)
    prob = np.zeros((A, M, B))
    w = np.zeros((A, M, B))
    jweight = np.zeros((A, M, B))
    jmark = np.full(B, -1, dtype=np.int64)
    jmark[3:] = np.repeat(np.arange(J), 2)
    bb = np.empty((A, M))
    ss = np.empty((A, M))
    be = np.empty((A, M))
    beta = np.empty((A, M, J))

    ii = np.arange(M)
    for a, alpha in enumerate(spec.controls):
        b = cs.b(xs, alpha) * np.ones(M)
        sig = cs.sigma(xs, alpha) * np.ones(M)
        bet = np.stack([cs.beta(xs, alpha, e) * np.ones(M) for e in marks], axis=-1) if J else np.zeros((M, 0))
        b_eff = b - bet @ nu if J else b.copy()

        s2max = float(np.max(sig**2)) * dt
        if s2max > dx * dx * (1 + 1e-12):
            raise ChainBuildError(
                f"CFL violated: max sigma^2*dt = {s2max:.6g} > dx^2 = {dx * dx:.6g} (control {alpha})"
            )
        bmax = float(np.max(np.abs(b_eff))) * dt
        if bmax > dx * (1 + 1e-12):
            raise ChainBuildError(f"CFL violated: max|b_eff|*dt = {bmax:.6g} > dx = {dx:.6g} (control {alpha})")

        s2 = np.maximum(sig**2, np.abs(b_eff) * dx)
        diff = s2 * dt / (dx * dx)
        drift = b_eff * dt / dx
        # diff >= |drift| by construction; clip the rounding when they are equal
        pu = np.maximum(0.5 * (diff + drift), 0.0)
        pd = np.maximum(0.5 * (diff - drift), 0.0)
        pm = 1.0 - lam * dt - pu - pd
        if np.min(pm) < -1e-12:
            raise ChainBuildError(
                f"CFL violated: diffusion plus jump mass {float(np.max(pu + pd)) + lam * dt:.6g} > 1 (control {alpha})"
            )
        pm = np.maximum(pm, 0.0)

        idx[a, :, 0] = np.minimum(ii + 1, M - 1)
        idx[a, :, 1] = ii
        idx[a, :, 2] = np.maximum(ii - 1, 0)
        prob[a, :, 0], prob[a, :, 1], prob[a, :, 2] = pu, pm, pd

        V = s2 * dt
        c = b_eff * dt / (1.0 - lam * dt)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(V > 0, sig * dt / V, 0.0)
        w[a, :, 0] = scale * (dx - c)
        w[a, :, 1] = scale * (-c)
        w[a, :, 2] = scale * (-dx - c)

        for j in range(J):
            lo, th = jump_landing(grid, xs + bet[:, j])
            q = nu[j] * dt
            idx[a, :, 3 + 2 * j] = lo
            idx[a, :, 4 + 2 * j] = lo + 1
            prob[a, :, 3 + 2 * j] = q * (1.0 - th)
            prob[a, :, 4 + 2 * j] = q * th
            jweight[a, :, 3 + 2 * j] = 1.0 - th
            jweight[a, :, 4 + 2 * j] = th

        bb[a], ss[a], be[a], beta[a] = b, sig, b_eff, bet

    for arr in (idx, prob, w, jweight, jmark, bb, ss, be, beta, nu):
        arr.setflags(write=False)
    return ChainApprox(grid, tuple(spec.controls), idx, prob, w, jweight, jmark, bb, ss, be, beta, nu)


# ---------------------------------------------------------------------------
# forward simulation


@dataclass(frozen=True)
class PathEnsemble:
    k0: int
    states: np.ndarray  # (n_paths, steps + 1)
    branches: np.ndarray  # (n_paths, steps)
    controls: np.ndarray  # (n_paths, steps) control index used at each step
    jmark: np.ndarray  # (B,)

    @property
    def jumps(self) -> np.ndarray:
        """Mark index per step, -1 when no jump occurred."""
        return self.jmark[self.branches]


BLOCK = 8192


def _policy_array(chain: ChainApprox, policy) -> np.ndarray:
    N, M = chain.grid.N, chain.grid.M
    if np.isscalar(policy) or np.ndim(policy) == 0:
        a = int(policy)
        if not 0 <= a < chain.n_controls:
            raise IndexError(f"control index {a} out of range")
        return np.full((N, M), a, dtype=np.int64)
    pol = np.asarray(getattr(policy, "alpha_star", policy), dtype=np.int64)
    if pol.shape != (N, M):
        raise ValueError(f"policy must have shape {(N, M)}, got {pol.shape}")
    return pol


def _simulate_block(chain, pol, k0, i0, n, rng):
    N = chain.grid.N
    steps = N - k0
    states = np.empty((n, steps + 1), dtype=np.int64)
    branches = np.empty((n, steps), dtype=np.int64)
    ctrl = np.empty((n, steps), dtype=np.int64)
    states[:, 0] = i0
    cum = np.cumsum(chain.prob, axis=-1)
    u = rng.random((n, steps))
    for s in range(steps):
        cur = states[:, s]
        a = pol[k0 + s, cur]
        c = cum[a, cur]
        # last cumulative entry may round below 1
        br = np.minimum((c < u[:, s : s + 1] * c[:, -1:]).sum(axis=1), c.shape[1] - 1)
        branches[:, s] = br
        ctrl[:, s] = a
        states[:, s + 1] = chain.idx[a, cur, br]
    return states, branches, ctrl


def simulate_paths(chain: ChainApprox, policy, k0: int, i0: int, n_paths: int, seed: int, threads: int = 1) -> PathEnsemble:
    """Sample paths from the chain under a control index or per-node policy.

    Paths are drawn in fixed blocks whose generators are spawned from
    ``seed``, so output does not depend on ``threads``.
    """
    N, M = chain.grid.N, chain.grid.M
    if not 0 <= k0 <= N:
        raise IndexError(f"time index {k0} out of range [0, {N}]")
    if not 0 <= i0 < M:
        raise IndexError(f"state index {i0} out of range [0, {M})")
    pol = _policy_array(chain, policy)
    nblocks = max(1, math.ceil(n_paths / BLOCK))
    seqs = np.random.SeedSequence(seed).spawn(nblocks)
    sizes = [min(BLOCK, n_paths - b * BLOCK) for b in range(nblocks)]

    def run(b):
        return _simulate_block(chain, pol, k0, i0, sizes[b], np.random.default_rng(seqs[b]))

    if threads > 1 and nblocks > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, range(nblocks)))
    else:
        parts = [run(b) for b in range(nblocks)]
    states = np.concatenate([p[0] for p in parts])
    branches = np.concatenate([p[1] for p in parts])
    ctrl = np.concatenate([p[2] for p in parts])
    return PathEnsemble(k0, states, branches, ctrl, chain.jmark)

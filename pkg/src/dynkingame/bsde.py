"""Backward induction on the chain for plain, reflected and doubly reflected BSDEs.

Value fields are plain ``(N + 1, M)`` arrays indexed ``[k, i]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .chain import ChainApprox
from .model import ProblemSpec

IMPLICIT_TOL = 1e-12
IMPLICIT_MAXIT = 100


class SolverError(RuntimeError):
    pass


@dataclass(eq=False)
class BsdeSolution:
    Y: np.ndarray
    Z: np.ndarray
    K: np.ndarray  # (N + 1, M, J)
    A1_inc: np.ndarray
    A2_inc: np.ndarray
    control: np.ndarray  # (N, M) control index used at each node
    horizon: int

    @property
    def root(self) -> np.ndarray:
        return self.Y[0]


def barrier_fields(spec: ProblemSpec, grid) -> tuple[np.ndarray, np.ndarray]:
    t = grid.times[:, None]
    x = grid.xs[None, :]
    return spec.h1(t, x) * np.ones((grid.N + 1, grid.M)), spec.h2(t, x) * np.ones((grid.N + 1, grid.M))


def _terminal_row(spec, chain, terminal):
    xs = chain.grid.xs
    if terminal is None:
        return np.asarray(spec.g(xs), dtype=float)
    if callable(terminal):
        return np.asarray(terminal(xs), dtype=float) * np.ones(xs.size)
    row = np.asarray(terminal, dtype=float)
    if row.shape != xs.shape:
        raise ValueError(f"terminal row must have shape {xs.shape}, got {row.shape}")
    if not np.all(np.isfinite(row)):
        raise ValueError("terminal row has non-finite entries")
    return row.copy()


def _policy(chain, policy):
    N, M = chain.grid.N, chain.grid.M
    if isinstance(policy, str):
        if policy != "max":
            raise ValueError(f"unknown policy {policy!r}")
        return None
    if np.ndim(policy) == 0:
        a = int(policy)
        if not 0 <= a < chain.n_controls:
            raise IndexError(f"control index {a} out of range")
        return np.full((N, M), a, dtype=np.int64)
    pol = np.asarray(getattr(policy, "alpha_star", policy), dtype=np.int64)
    if pol.shape != (N, M):
        raise ValueError(f"policy must have shape {(N, M)}, got {pol.shape}")
    if pol.min() < 0 or pol.max() >= chain.n_controls:
        raise IndexError("policy holds control indices out of range")
    return pol


class StepOperator:
    """Unconstrained one-step values ``yhat[a, i]`` for every control."""

    def __init__(self, chain: ChainApprox, spec: ProblemSpec, implicit: bool = False, threads: int = 1):
        self.chain, self.spec = chain, spec
        self.implicit, self.threads = implicit, threads
        d = spec.driver
        self.alphas = np.asarray(spec.controls, dtype=float)
        self.rate = np.ascontiguousarray(d.rate(self.alphas), dtype=float)
        self.gnu = np.ascontiguousarray(spec.gamma * chain.nu, dtype=float)
        A, M, J = chain.n_controls, chain.grid.M, chain.n_marks
        self.yhat = np.empty((A, M))
        self.Z = np.empty((A, M))
        self.K = np.empty((A, M, J))

    def source(self, k: int) -> np.ndarray:
        g = self.chain.grid
        src = self.spec.driver.source_term(g.times[k], g.xs[None, :], self.alphas[:, None])
        return np.ascontiguousarray(src * np.ones((self.alphas.size, g.M)))

    def __call__(self, Ynext: np.ndarray, k: int):
        c = self.chain
        d = self.spec.driver
        args = (
            np.ascontiguousarray(Ynext, dtype=float), c.idx, c.prob, c.w, c.jweight, c.jmark,
            c.grid.dt, self.rate, d.a, d.kappa, self.gnu, self.source(k),
            self.implicit, IMPLICIT_TOL, IMPLICIT_MAXIT, self.yhat, self.Z, self.K,
        )
        bad = [b for b in _backend.run("lattice_step", args, c.grid.M, self.threads) if b >= 0]
        if bad:
            a, i = divmod(min(bad), c.grid.M)
            raise SolverError(
                f"implicit fixed point did not converge at node (k={k}, i={i}, control={a}) "
                f"within {IMPLICIT_MAXIT} iterations"
            )
        return self.yhat, self.Z, self.K


def backward(
    chain: ChainApprox,
    spec: ProblemSpec,
    policy,
    terminal=None,
    horizon: int | None = None,
    lower: np.ndarray | None = None,
    upper: np.ndarray | None = None,
    stop_mask: np.ndarray | None = None,
    stop_values: np.ndarray | None = None,
    implicit: bool = False,
    threads: int = 1,
) -> BsdeSolution:
    """Shared recursion behind every solver in this module.

    ``policy="max"`` maximises the one-step value over controls (ties to the
    smallest index). Rows after ``horizon`` are left as NaN.
    """
    g = chain.grid
    N, M, J = g.N, g.M, chain.n_marks
    theta = N if horizon is None else int(horizon)
    if not 0 <= theta <= N:
        raise IndexError(f"horizon index {theta} out of range [0, {N}]")
    pol = _policy(chain, policy)
    Y = np.full((N + 1, M), np.nan)
    Z = np.zeros((N + 1, M))
    K = np.zeros((N + 1, M, J))
    A1 = np.zeros((N + 1, M))
    A2 = np.zeros((N + 1, M))
    ctrl = np.zeros((N, M), dtype=np.int64)
    Y[theta] = _terminal_row(spec, chain, terminal)
    if stop_mask is not None and stop_mask[theta].any():
        Y[theta] = np.where(stop_mask[theta], stop_values[theta], Y[theta])
    step = StepOperator(chain, spec, implicit, threads)
    ii = np.arange(M)
    for k in range(theta - 1, -1, -1):
        yhat, z, kk = step(Y[k + 1], k)
        a = np.argmax(yhat, axis=0) if pol is None else pol[k]
        ctrl[k] = a
        y = yhat[a, ii]
        Z[k] = z[a, ii]
        K[k] = kk[a, ii]
        if lower is not None:
            y1 = np.maximum(y, lower[k])
            A1[k] = y1 - y
            y = y1
        if upper is not None:
            y2 = np.minimum(y, upper[k])
            A2[k] = y - y2
            y = y2
        if stop_mask is not None and stop_mask[k].any():
            s = stop_mask[k]
            y = np.where(s, stop_values[k], y)
            Z[k][s] = 0.0
            K[k][s] = 0.0
            A1[k][s] = 0.0
            A2[k][s] = 0.0
        Y[k] = y
    return BsdeSolution(Y, Z, K, A1, A2, ctrl, theta)


def solve_bsde(chain, spec, policy, terminal=None, horizon=None, stop_mask=None, stop_values=None,
               implicit=False, threads=1) -> BsdeSolution:
    """Nonlinear expectation of the terminal row under a fixed control rule.

    ``stop_mask``/``stop_values`` freeze the solution at a stopping rule: on
    masked nodes Y is the given value and the driver is switched off.
    """
    return backward(chain, spec, policy, terminal, horizon, stop_mask=stop_mask,
                    stop_values=stop_values, implicit=implicit, threads=threads)


def solve_rbsde_lower(chain, spec, policy, lower, terminal=None, horizon=None, implicit=False, threads=1):
    return backward(chain, spec, policy, terminal, horizon, lower=np.asarray(lower, dtype=float),
                    implicit=implicit, threads=threads)


def solve_rbsde_upper(chain, spec, policy, upper, terminal=None, horizon=None, implicit=False, threads=1):
    return backward(chain, spec, policy, terminal, horizon, upper=np.asarray(upper, dtype=float),
                    implicit=implicit, threads=threads)


def solve_drbsde(chain, spec, policy, terminal=None, horizon=None, h1=None, h2=None,
                 implicit=False, threads=1) -> BsdeSolution:
    """Projection min(max(yhat, h1), h2) at every k < horizon; terminal row unclamped."""
    lo, up = barrier_fields(spec, chain.grid)
    lo = lo if h1 is None else np.asarray(h1, dtype=float)
    up = up if h2 is None else np.asarray(h2, dtype=float)
    if np.any(lo[:-1] > up[:-1]):
        k, i = np.argwhere(lo[:-1] > up[:-1])[0]
        raise SolverError(f"barrier order violated at grid node (k={k}, i={i})")
    return backward(chain, spec, policy, terminal, horizon, lower=lo, upper=up,
                    implicit=implicit, threads=threads)


@dataclass
class ResidualReport:
    lower_max: float
    upper_max: float
    flagged: list[tuple[int, int, str, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.flagged


def skorokhod_residual(sol: BsdeSolution, h1=None, h2=None, tol: float = 0.0) -> ResidualReport:
    """max of A1_inc*(Y - h1) and A2_inc*(h2 - Y) over k < horizon; ``None`` skips a barrier."""
    th = sol.horizon
    rep = ResidualReport(0.0, 0.0)
    for kind, barrier, inc, sign in (("lower", h1, sol.A1_inc, 1.0), ("upper", h2, sol.A2_inc, -1.0)):
        if barrier is None:
            continue
        gap = sign * (sol.Y[:th] - np.asarray(barrier, dtype=float)[:th])
        with np.errstate(invalid="ignore"):
            res = np.where(inc[:th] > 0, inc[:th] * gap, 0.0)
        m = float(np.max(np.abs(res))) if res.size else 0.0
        if kind == "lower":
            rep.lower_max = m
        else:
            rep.upper_max = m
        for k, i in np.argwhere(np.abs(res) > tol):
            rep.flagged.append((int(k), int(i), kind, float(res[k, i])))
    return rep


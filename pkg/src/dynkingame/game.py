"""Value functions of the mixed control / Dynkin game problem on the chain."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bsde import BsdeSolution, SolverError, backward, barrier_fields, solve_drbsde
from .chain import ChainApprox, simulate_paths
from .model import ProblemSpec, SpecError, XFunction


@dataclass(eq=False)
class StrategyField:
    alpha_star: np.ndarray  # (N, M) control index
    lower_contact: np.ndarray  # (N + 1, M) bool, row N all False
    upper_contact: np.ndarray
    epsilon: float


@dataclass(eq=False)
class MixedSolution:
    u: np.ndarray
    strategy: StrategyField
    solution: BsdeSolution


def dynkin_value(chain: ChainApprox, spec: ProblemSpec, policy, terminal=None, implicit=False, threads=1) -> BsdeSolution:
    """u^alpha under a fixed control rule: the doubly reflected solution."""
    return solve_drbsde(chain, spec, policy, terminal, implicit=implicit, threads=threads)


def default_epsilon(h1: np.ndarray, h2: np.ndarray) -> float:
    gap = h2 - h1
    gap = gap[np.isfinite(gap)]
    return 1e-8 * (1.0 + (float(np.max(np.abs(gap))) if gap.size else 0.0))


def mixed_value(chain: ChainApprox, spec: ProblemSpec, terminal=None, horizon=None, implicit=False,
                threads=1, epsilon: float | None = None) -> MixedSolution:
    """Feedback Bellman recursion u = min(max(max_a yhat(a), h1), h2), u[N] = g."""
    h1, h2 = barrier_fields(spec, chain.grid)
    sol = backward(chain, spec, "max", terminal, horizon, lower=h1, upper=h2, implicit=implicit, threads=threads)
    strat = extract_strategies(sol.Y, spec, chain.grid, epsilon, alpha_star=sol.control)
    return MixedSolution(sol.Y, strat, sol)


def dpp_residual(chain: ChainApprox, spec: ProblemSpec, u: np.ndarray, s_index: int, threads=1) -> float:
    """Sup-norm gap between u[0..s] and the mixed recursion restarted from row u[s]."""
    N = chain.grid.N
    if not 0 < s_index < N:
        raise IndexError(f"s_index must lie in (0, {N}), got {s_index}")
    h1, h2 = barrier_fields(spec, chain.grid)
    redo = backward(chain, spec, "max", u[s_index], s_index, lower=h1, upper=h2, threads=threads)
    return float(np.max(np.abs(redo.Y[: s_index + 1] - u[: s_index + 1])))


def extract_strategies(u: np.ndarray, spec: ProblemSpec, grid, epsilon: float | None = None,
                       alpha_star: np.ndarray | None = None) -> StrategyField:
    """Contact sets |u - h| <= eps for k < N; stopping rules are their first hitting times."""
    h1, h2 = barrier_fields(spec, grid)
    if epsilon is None:
        epsilon = default_epsilon(h1, h2)
    N, M = grid.N, grid.M
    lower = np.zeros((N + 1, M), dtype=bool)
    upper = np.zeros((N + 1, M), dtype=bool)
    lower[:N] = u[:N] <= h1[:N] + epsilon
    upper[:N] = u[:N] >= h2[:N] - epsilon
    if alpha_star is None:
        alpha_star = np.zeros((N, M), dtype=np.int64)
    return StrategyField(np.asarray(alpha_star, dtype=np.int64), lower, upper, float(epsilon))


def stopping_indices(strategy: StrategyField, states: np.ndarray, k0: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """First-hitting time indices (absolute k) of the contact sets along paths; N if never."""
    steps = states.shape[1]
    ks = k0 + np.arange(steps)
    N = strategy.lower_contact.shape[0] - 1

    def first(mask):
        hit = mask[ks[None, :], states]
        any_hit = hit.any(axis=1)
        return np.where(any_hit, k0 + np.argmax(hit, axis=1), N)

    return first(strategy.lower_contact), first(strategy.upper_contact)


@dataclass
class MonteCarloEstimate:
    mean: float
    stderr: float
    n_paths: int


def evaluate_strategies(chain: ChainApprox, spec: ProblemSpec, mixed: MixedSolution, i0: int,
                        n_paths: int, seed: int, threads: int = 1) -> MonteCarloEstimate:
    """Monte Carlo value of the game criterion under (alpha*, tau*, sigma*) from node (0, i0).

    The driver is linear in (y, z, k) once the sign of z is frozen to the
    solver's Z field, so each step's nonlinear expectation becomes a plain
    expectation with multiplicative branch weights.
    """
    g = chain.grid
    strat = mixed.strategy
    Zf = mixed.solution.Z
    paths = simulate_paths(chain, strat.alpha_star, 0, i0, n_paths, seed, threads)
    tau, sig = stopping_indices(strat, paths.states)
    stop = np.minimum(tau, sig)
    n = paths.states.shape[0]
    rows = np.arange(n)
    xs, ts = g.xs, g.times

    d = spec.driver
    alphas = np.asarray(spec.controls)
    gnu = spec.gamma * chain.nu
    gam_b = np.concatenate([[0.0, 0.0, 0.0], np.repeat(spec.gamma, 2)]) if chain.n_marks else np.zeros(3)
    weight = np.ones(n)
    acc = np.zeros(n)
    for k in range(g.N):
        live = stop > k
        if not live.any():
            break
        i = paths.states[:, k]
        a = paths.controls[:, k]
        br = paths.branches[:, k]
        alpha = alphas[a]
        a_eff = d.a + d.kappa * np.sign(Zf[k, i])
        rho = 1.0 - g.dt * (d.rate(alpha) + gnu.sum()) + a_eff * chain.w[a, i, br] + gam_b[br]
        src = d.source_term(ts[k], xs[i], alpha)
        acc = np.where(live, acc + weight * g.dt * src, acc)
        weight = np.where(live, weight * rho, weight)

    xstop = xs[paths.states[rows, stop]]
    tstop = ts[stop]
    pay = np.where(
        (tau <= sig) & (tau < g.N),
        spec.h1(tstop, xstop),
        np.where(sig < tau, spec.h2(tstop, xstop), spec.g(xstop)),
    )
    vals = acc + weight * pay
    return MonteCarloEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n)), n)


# ---------------------------------------------------------------------------
# discontinuous terminal reward


def inf_convolution(g: XFunction, n: float, x) -> np.ndarray:
    """inf_y { g(y) + n |x - y| } for piecewise-affine g, exact per segment."""
    x = np.asarray(x, dtype=float)
    best = np.full(x.shape, math.inf)
    for lo, hi, ic, sl in g.segments():
        if (lo == -math.inf and sl > n) or (hi == math.inf and sl < -n):
            return np.full(x.shape, -math.inf)
        cands = [np.clip(x, lo, hi)]
        if math.isfinite(lo):
            cands.append(np.full(x.shape, lo))
        if math.isfinite(hi):
            cands.append(np.full(x.shape, hi))
        for y in cands:
            best = np.minimum(best, ic + sl * y + n * np.abs(x - y))
    return best


@dataclass(eq=False)
class EnvelopeSequence:
    levels: list[float]
    g_n: np.ndarray  # (L, M)
    u_n: list[np.ndarray]

    def monotone(self, tol: float = 0.0) -> bool:
        return all(np.all(b >= a - tol) for a, b in zip(self.u_n, self.u_n[1:]))


def lsc_envelope_sequence(chain: ChainApprox, spec: ProblemSpec, levels, threads=1) -> EnvelopeSequence:
    """Terminal rows clamp(inf-convolution of g at level n, h1(T), h2(T)) and their mixed values."""
    if spec.g.family not in ("piecewise", "constant"):
        raise SpecError("envelope sequence needs a piecewise (or constant) terminal reward")
    grid = chain.grid
    xs = grid.xs
    lo = spec.h1(grid.T, xs) * np.ones(xs.size)
    hi = spec.h2(grid.T, xs) * np.ones(xs.size)
    gx = spec.g(xs)
    if np.any(lo > gx) or np.any(gx > hi):
        i = int(np.argmax((lo > gx) | (gx > hi)))
        raise SolverError(f"clamping bound h1(T,x) <= g(x) <= h2(T,x) violated at x={xs[i]:.6g}")
    rows, us = [], []
    for n in levels:
        gn = np.minimum(np.maximum(inf_convolution(spec.g, float(n), xs), lo), hi)
        rows.append(gn)
        us.append(mixed_value(chain, spec, terminal=gn, threads=threads).u)
    return EnvelopeSequence([float(n) for n in levels], np.array(rows), us)

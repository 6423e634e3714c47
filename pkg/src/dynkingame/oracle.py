"""Ground truth for the lattice solvers.

* exhaustive sup-inf over pairs of stopping rules on a small event tree,
* the closed form of the discount driver,
* convergence probes in the terminal data and horizon,
* an exact-arithmetic decomposition of a barrier into two nonnegative
  supermartingales.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .bsde import backward, barrier_fields
from .chain import ChainApprox, TimeStateGrid
from .model import (Barrier, CoefFamily, CoefficientSet, DriverSpec, JumpMeasure, ProblemSpec,
                    driver_array, piecewise)


class OracleError(RuntimeError):
    pass


MAX_NODES = 60
MAX_PAIRS = 2**24


@dataclass(frozen=True)
class StoppingRule:
    """Stop flag per tree node; the induced time is the first flagged node on a path."""

    stop: np.ndarray

    @classmethod
    def from_bits(cls, bits: int, decision_nodes: np.ndarray, n_nodes: int) -> "StoppingRule":
        stop = np.ones(n_nodes, dtype=bool)
        stop[decision_nodes] = [(bits >> b) & 1 for b in range(decision_nodes.size)]
        return cls(stop)


@dataclass
class EventTree:
    k: np.ndarray
    i: np.ndarray
    control: np.ndarray
    children: list  # per node: list of (child, prob, w, mark, weight)

    @property
    def size(self) -> int:
        return self.k.size


def build_tree(chain: ChainApprox, policy, k0: int = 0, i0: int = 0, max_nodes: int = MAX_NODES) -> EventTree:
    """Unrecombined tree of positive-probability branches from node (k0, i0)."""
    N = chain.grid.N
    pol = np.full((N, chain.grid.M), int(policy)) if np.ndim(policy) == 0 else np.asarray(policy)
    ks, iis, ctrl, children = [k0], [i0], [], []
    n = 0
    while n < len(ks):
        k, i = ks[n], iis[n]
        kids = []
        if k < N:
            a = int(pol[k, i])
            ctrl.append(a)
            for b in range(chain.n_branches):
                p = float(chain.prob[a, i, b])
                if p <= 0.0:
                    continue
                ks.append(k + 1)
                iis.append(int(chain.idx[a, i, b]))
                if len(ks) > max_nodes:
                    raise OracleError(f"enumeration budget exceeded: tree has more than {max_nodes} nodes")
                kids.append((len(ks) - 1, p, float(chain.w[a, i, b]), int(chain.jmark[b]), float(chain.jweight[a, i, b])))
        else:
            ctrl.append(-1)
        children.append(kids)
        n += 1
    return EventTree(np.array(ks), np.array(iis), np.array(ctrl), children)


@dataclass
class EnumerationResult:
    value: float  # sup_tau inf_sigma
    upper_value: float  # inf_sigma sup_tau
    tau_star: StoppingRule
    sigma_star: StoppingRule
    saddle_ok: bool
    n_nodes: int
    n_pairs: int
    tree: EventTree = field(repr=False)


class _Evaluator:
    """Criterion of every sigma rule at once for a given tau rule."""

    def __init__(self, chain, spec, tree: EventTree):
        self.tree = tree
        g = chain.grid
        self.dt = g.dt
        t = g.times[tree.k]
        x = g.xs[tree.i]
        self.t, self.x = t, x
        with np.errstate(invalid="ignore"):
            self.h1 = spec.h1(t, x) * np.ones(tree.size)
            self.h2 = spec.h2(t, x) * np.ones(tree.size)
        self.gT = spec.g(x) * np.ones(tree.size)
        self.spec = spec
        self.J = chain.n_marks
        self.N = g.N
        self.decision = np.nonzero(tree.k < g.N)[0]

    def step(self, node, vals):
        """One non-reflected step of the nonlinear expectation at ``node``."""
        kids = self.tree.children[node]
        E = sum(p * vals[c] for c, p, w, m, th in kids)
        Z = sum(p * w * (vals[c] - E) for c, p, w, m, th in kids) / self.dt
        K = np.zeros(np.shape(E) + (self.J,))
        for c, p, w, m, th in kids:
            if m >= 0:
                K[..., m] += th * vals[c]
        K -= np.asarray(E)[..., None]
        alpha = self.spec.controls[self.tree.control[node]]
        f = driver_array(self.spec, alpha, self.t[node], self.x[node], E, Z, K)
        return E + self.dt * f

    def root_values(self, tau_stop, sigma_bits):
        """J(tau, sigma) at the root for one tau and an array of sigma stop masks.

        ``sigma_bits`` has shape (n_decision, n_sigma).
        """
        tree = self.tree
        vals = [None] * tree.size
        dpos = {n: r for r, n in enumerate(self.decision)}
        for n in range(tree.size - 1, -1, -1):
            if tree.k[n] == self.N:
                vals[n] = self.gT[n]
                continue
            if tau_stop[n]:
                vals[n] = self.h1[n]
                continue
            cont = self.step(n, vals)
            vals[n] = np.where(sigma_bits[dpos[n]], self.h2[n], cont)
        return np.broadcast_to(vals[0], sigma_bits.shape[1:]).astype(float)


def enumerate_game_value(chain: ChainApprox, spec: ProblemSpec, policy=0, i0: int = 0, k0: int = 0,
                         max_nodes: int = MAX_NODES, max_pairs: int = MAX_PAIRS) -> EnumerationResult:
    """Brute-force sup over tau, inf over sigma of the stopped nonlinear expectation."""
    if chain.grid.N - k0 > 3:
        raise OracleError(f"enumeration limited to 3 time steps, got {chain.grid.N - k0}")
    tree = build_tree(chain, policy, k0, i0, max_nodes)
    ev = _Evaluator(chain, spec, tree)
    dec = ev.decision
    m = dec.size
    n_rules = 2**m
    if n_rules * n_rules > max_pairs:
        raise OracleError(
            f"enumeration budget exceeded: {tree.size} nodes, {m} decision nodes, "
            f"{n_rules * n_rules} pairs > {max_pairs}"
        )
    # an omitted barrier is never worth stopping at, so that player only has "never stop"
    tau_codes = range(n_rules) if spec.h1.present else range(1)
    n_sigma = n_rules if spec.h2.present else 1
    codes = np.arange(n_sigma)
    sigma_bits = ((codes[None, :] >> np.arange(m)[:, None]) & 1).astype(bool)

    def tau_mask(code):
        return StoppingRule.from_bits(code, dec, tree.size).stop

    best, best_tau, best_row = -math.inf, 0, None
    colmax = np.full(n_sigma, -math.inf)
    for code in tau_codes:
        row = ev.root_values(tau_mask(code), sigma_bits)
        np.maximum(colmax, row, out=colmax)
        lo = float(row.min())
        if lo > best:
            best, best_tau, best_row = lo, code, row
    s_star = int(np.argmin(colmax))
    upper = float(colmax[s_star])
    col = np.array([ev.root_values(tau_mask(c), sigma_bits[:, s_star : s_star + 1])[0] for c in tau_codes])
    v = float(best_row[s_star])
    tol = 1e-12 * (1.0 + abs(v))
    saddle = bool(np.all(col <= v + tol) and np.all(best_row >= v - tol))
    return EnumerationResult(
        best, upper,
        StoppingRule(tau_mask(best_tau)),
        StoppingRule.from_bits(s_star, dec, tree.size),
        saddle, tree.size, len(tau_codes) * n_sigma, tree,
    )


def linear_case_value(spec: ProblemSpec, chain: ChainApprox, c: float, policy=0) -> float:
    """(1 - r dt)^N c for the discount driver with a constant terminal value.

    Raises if the barriers bind anywhere along the recursion, since the closed
    form then no longer holds.
    """
    d = spec.driver
    if d.family not in ("discount", "zero"):
        raise OracleError(f"closed form needs the discount driver, got {d.family!r}")
    if any(d.source) or (d.r_alpha and spec.n_controls > 1):
        raise OracleError("closed form needs a control-free rate and no source term")
    g = chain.grid
    r = float(d.rate(spec.controls[int(policy)]))
    h1, h2 = barrier_fields(spec, g)
    v = float(c)
    for k in range(g.N - 1, -1, -1):
        v = (1.0 - r * g.dt) * v
        if np.any(h1[k] >= v) or np.any(h2[k] <= v):
            raise OracleError(f"barrier binds at time index {k}: closed form invalid")
    closed = (1.0 - r * g.dt) ** g.N * float(c)
    sol = backward(chain, spec, policy, np.full(g.M, float(c)), lower=h1, upper=h2)
    gap = float(np.max(np.abs(sol.Y[0] - closed)))
    if gap > 1e-12:
        raise OracleError(f"lattice root differs from closed form by {gap:.3e}")
    return closed


@dataclass
class ConvergenceReport:
    mode: str  # "continuity" or "fatou"
    gaps: list[float]
    roots: list[np.ndarray] = field(repr=False)
    limit_root: np.ndarray = field(repr=False)
    fatou_ok: bool = True
    note: str = ""

    @property
    def nonincreasing(self) -> bool:
        return all(b <= a + 1e-15 for a, b in zip(self.gaps, self.gaps[1:]))


def _drbsde_root(chain, spec, policy, xi, theta):
    h1, h2 = barrier_fields(spec, chain.grid)
    return backward(chain, spec, policy, xi, theta, lower=h1, upper=h2).Y[0]


def continuity_probe(chain: ChainApprox, spec: ProblemSpec, schedule, limit, policy=0) -> ConvergenceReport:
    """Root values for terminal data (xi_n, theta_n) against the limit (xi, theta).

    When the limit row leaves [h1, h2] at its horizon only the Fatou
    inequality liminf Y0^n >= Y0(liminf xi_n) is checked.
    """
    xi, theta = np.asarray(limit[0], dtype=float), int(limit[1])
    h1, h2 = barrier_fields(spec, chain.grid)
    inside = bool(np.all(h1[theta] <= xi) and np.all(xi <= h2[theta])) if theta < chain.grid.N else True
    limit_root = _drbsde_root(chain, spec, policy, xi, theta)
    roots = [_drbsde_root(chain, spec, policy, np.asarray(x, dtype=float), int(th)) for x, th in schedule]
    gaps = [float(np.max(np.abs(r - limit_root))) for r in roots]
    tail = max(1, len(roots) // 2)
    xi_inf = np.min([np.asarray(x, dtype=float) for x, _ in schedule[-tail:]], axis=0)
    y_inf = _drbsde_root(chain, spec, policy, xi_inf, theta)
    fatou_ok = bool(np.all(np.min(roots[-tail:], axis=0) >= y_inf - 1e-12))
    if inside:
        return ConvergenceReport("continuity", gaps, roots, limit_root, fatou_ok)
    return ConvergenceReport(
        "fatou", gaps, roots, limit_root, fatou_ok,
        note="limit terminal row leaves [h1, h2] at its horizon; only the Fatou inequality is asserted",
    )


# ---------------------------------------------------------------------------
# decomposition into two nonnegative supermartingales


@dataclass
class Decomposition:
    H: np.ndarray  # object arrays of Fraction, shape (N + 1, M)
    Hp: np.ndarray
    target: np.ndarray
    transitions: list = field(repr=False)

    def as_float(self):
        return self.H.astype(float), self.Hp.astype(float)

    def supermartingale_slack(self) -> tuple[Fraction, Fraction]:
        """min over nodes of X_k - E[X_{k+1}] for X = H and X = H'."""
        out = []
        for X in (self.H, self.Hp):
            worst = None
            for k, row in enumerate(self.transitions):
                for i, succ in enumerate(row):
                    s = X[k, i] - sum(p * X[k + 1, j] for j, p in succ)
                    worst = s if worst is None or s < worst else worst
            out.append(worst)
        return out[0], out[1]


def _exact_transitions(chain: ChainApprox, pol) -> list:
    """Merged successor laws in exact arithmetic, renormalised to sum to one."""
    N, M = chain.grid.N, chain.grid.M
    rows = []
    for k in range(N):
        row = []
        for i in range(M):
            a = int(pol[k, i])
            acc: dict[int, Fraction] = {}
            for b in range(chain.n_branches):
                p = chain.prob[a, i, b]
                if p > 0:
                    j = int(chain.idx[a, i, b])
                    acc[j] = acc.get(j, Fraction(0)) + Fraction(float(p))
            total = sum(acc.values())
            row.append([(j, p / total) for j, p in sorted(acc.items())])
        rows.append(row)
    return rows


def mokobodzki_decompose(chain: ChainApprox, spec: ProblemSpec, policy=0, barrier: str = "h1") -> Decomposition:
    """H, H' >= 0 supermartingales with H - H' = h on k < N and g at N.

    The drift increments d_k = h_k - E[h_{k+1}] are split into positive and
    negative parts and accumulated backwards from h(T)^+ and h(T)^-. Both
    fields also carry the martingale D_k = E[(g^+ - h(T)^+)^+ + (g^- - h(T)^-)^+],
    which is what keeps the last step a supermartingale when g differs from
    h(T).
    """
    g = chain.grid
    N, M = g.N, g.M
    pol = np.full((N, M), int(policy)) if np.ndim(policy) == 0 else np.asarray(policy)
    h = {"h1": spec.h1, "h2": spec.h2}[barrier]
    hv = h(g.times[:, None], g.xs[None, :]) * np.ones((N + 1, M))
    if not np.all(np.isfinite(hv)):
        raise OracleError(f"barrier {barrier} is not finite on the grid")
    gv = spec.g(g.xs) * np.ones(M)
    F = np.vectorize(lambda v: Fraction(float(v)), otypes=[object])
    hq, gq = F(hv), F(gv)
    trans = _exact_transitions(chain, pol)
    pos = np.vectorize(lambda v: max(v, Fraction(0)), otypes=[object])
    neg = np.vectorize(lambda v: max(-v, Fraction(0)), otypes=[object])

    def cond_exp(row_next, k):
        return np.array([sum(p * row_next[j] for j, p in trans[k][i]) for i in range(M)], dtype=object)

    I = np.empty((N + 1, M), dtype=object)
    Ip = np.empty((N + 1, M), dtype=object)
    D = np.empty((N + 1, M), dtype=object)
    I[N], Ip[N] = pos(hq[N]), neg(hq[N])
    # common martingale covering the terminal mismatch between g and h(T)
    D[N] = pos(pos(gq) - I[N]) + pos(neg(gq) - Ip[N])
    for k in range(N - 1, -1, -1):
        d = hq[k] - cond_exp(hq[k + 1], k)
        I[k] = pos(d) + cond_exp(I[k + 1], k)
        Ip[k] = neg(d) + cond_exp(Ip[k + 1], k)
        D[k] = cond_exp(D[k + 1], k)
    H = np.empty((N + 1, M), dtype=object)
    Hp = np.empty((N + 1, M), dtype=object)
    H[:N] = I[:N] + D[:N]
    Hp[:N] = Ip[:N] + D[:N]
    H[N], Hp[N] = pos(gq), neg(gq)
    target = hq.copy()
    target[N] = gq
    return Decomposition(H, Hp, target, trans)


# ---------------------------------------------------------------------------
# random small instances


FAMILIES = ("zero", "discount", "linear", "z-ambiguity", "jump-risk")


def _random_piecewise(rng, lo_ic, hi_ic, slope, n_breaks):
    bps = np.sort(rng.uniform(-1.5, 1.5, n_breaks)).round(3)
    bps = np.unique(bps)
    pieces = [(float(rng.uniform(lo_ic, hi_ic)), float(rng.uniform(-slope, slope))) for _ in range(bps.size + 1)]
    at = [str(s) for s in rng.choice(["left", "right"], bps.size)]
    return piecewise(bps.tolist(), pieces, at)


def random_instance(seed: int, family: str | None = None):
    """Small random spec and grid whose event trees fit the enumeration budget.

    Returns ``(spec, grid, i0)``. Instances with no jumps use a binomial
    chain (stay probability exactly 0) over three steps; instances with jumps
    use two trinomial steps. Barriers are piecewise with h1 <= 0 <= h2 on the
    grid so the order holds by construction.
    """
    rng = np.random.default_rng(seed)
    family = FAMILIES[seed % len(FAMILIES)] if family is None else family
    needs_jumps = family in ("linear", "jump-risk")
    J = int(rng.integers(1, 3)) if needs_jumps or rng.random() < 0.5 else 0
    if J == 0:
        # sigma^2 dt = dx^2 with zero drift: up/down 1/2 each, no stay branch
        N, T, x_lim, M = 3, 0.75, 2.0, 9
        coef = CoefficientSet(drift=CoefFamily(c0=0.0), vol=CoefFamily(c0=1.0), jump=CoefFamily(c0=0.0))
        jumps = JumpMeasure()
    else:
        N, T, x_lim, M = 2, 0.5, 2.0, 17
        coef = CoefficientSet(
            drift=CoefFamily(c0=float(rng.uniform(-0.3, 0.3)), cx=float(rng.uniform(-0.1, 0.1))),
            vol=CoefFamily(c0=float(rng.uniform(0.15, 0.3))),
            jump=CoefFamily(c0=float(rng.uniform(0.1, 0.4))),
        )
        marks = (1.0, -1.0)[:J]
        jumps = JumpMeasure(marks, tuple(float(v) for v in rng.uniform(0.2, 0.6, J)))
    r = float(rng.uniform(0.0, 0.5))
    src = (float(rng.uniform(-0.3, 0.3)), float(rng.uniform(-0.2, 0.2)), float(rng.uniform(-0.1, 0.1)), 0.0)
    kw = {
        "zero": {},
        "discount": {"r": r, "source": src},
        "linear": {"r": r, "a": float(rng.uniform(-0.5, 0.5)),
                   "gamma": tuple(float(v) for v in rng.uniform(-0.9, 0.9, J)), "source": src},
        "z-ambiguity": {"r": r, "kappa": float(rng.uniform(0.0, 0.6)), "source": src},
        "jump-risk": {"r": r, "gamma": tuple(float(v) for v in rng.uniform(-0.9, 0.9, J)), "source": src},
    }[family]
    driver = DriverSpec(family, **kw)
    h1 = Barrier(_random_piecewise(rng, -1.0, -0.2, 0.1, int(rng.integers(1, 4))), ct=float(rng.uniform(-0.2, 0.0)))
    h2 = Barrier(_random_piecewise(rng, 0.2, 1.0, 0.1, int(rng.integers(1, 4))), ct=float(rng.uniform(0.0, 0.2)))
    g = _random_piecewise(rng, -1.5, 1.5, 0.5, int(rng.integers(1, 4)))
    spec = ProblemSpec(coef, jumps, driver, h1, h2, g, (0.0,), T)
    grid = TimeStateGrid(N, M, -x_lim, x_lim, T)
    return spec, grid, M // 2

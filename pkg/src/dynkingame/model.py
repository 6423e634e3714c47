"""Problem instances: coefficient families, drivers, barriers and validation.

A :class:`ProblemSpec` is fully declarative. Every function it carries is a
named parametric family so that a spec round-trips through JSON and can be
re-evaluated bit-exactly by the oracle routines.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


class SpecError(ValueError):
    """Malformed problem specification (hard error, not a soft violation)."""


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    extra = set(obj) - allowed
    if extra:
        raise SpecError(f"unknown keys in {where}: {sorted(extra)}")


# ---------------------------------------------------------------------------
# scalar families of x (and optionally t)


@dataclass(frozen=True)
class XFunction:
    """Function of the state: ``constant``, ``poly`` or ``piecewise``.

    ``poly`` holds ascending coefficients. ``piecewise`` holds sorted
    breakpoints and one ``(intercept, slope)`` piece per interval; the value at
    a breakpoint is taken from the piece on the side named by ``at_break``.
    """

    family: str
    value: float = 0.0
    coeffs: tuple[float, ...] = ()
    breakpoints: tuple[float, ...] = ()
    pieces: tuple[tuple[float, float], ...] = ()
    at_break: tuple[str, ...] = ()

    def __post_init__(self):
        if self.family not in ("constant", "poly", "piecewise"):
            raise SpecError(f"unknown function family {self.family!r}")
        if self.family == "piecewise":
            if len(self.pieces) != len(self.breakpoints) + 1:
                raise SpecError("piecewise function needs len(breakpoints) + 1 pieces")
            if any(b >= c for b, c in zip(self.breakpoints, self.breakpoints[1:])):
                raise SpecError("piecewise breakpoints must be strictly increasing")
            if len(self.at_break) != len(self.breakpoints):
                raise SpecError("at_break needs one entry per breakpoint")
            if any(s not in ("left", "right") for s in self.at_break):
                raise SpecError("at_break entries must be 'left' or 'right'")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "constant":
            return np.full(x.shape, self.value)
        if self.family == "poly":
            out = np.zeros(x.shape)
            for c in reversed(self.coeffs):
                out = out * x + c
            return out
        if x.ndim == 0:
            return self(x[None])[0]
        bps = np.asarray(self.breakpoints)
        seg = np.searchsorted(bps, x, side="left")
        # x exactly on a breakpoint sits in the segment to its left by default
        on_bp = np.isin(x, bps)
        if on_bp.any():
            pos = np.searchsorted(bps, x[on_bp])
            right = np.array([self.at_break[p] == "right" for p in pos], dtype=bool)
            adj = seg[on_bp]
            adj[right] += 1
            seg[on_bp] = adj
        ic = np.array([p[0] for p in self.pieces])
        sl = np.array([p[1] for p in self.pieces])
        return ic[seg] + sl[seg] * x

    @property
    def is_smooth(self) -> bool:
        return self.family in ("constant", "poly")

    def segments(self):
        """Yield ``(lo, hi, intercept, slope)`` per piece (infinite ends allowed)."""
        if self.family == "constant":
            yield (-math.inf, math.inf, self.value, 0.0)
            return
        if self.family == "poly":
            raise SpecError("segments() is only defined for piecewise-affine data")
        edges = (-math.inf, *self.breakpoints, math.inf)
        for k, (ic, sl) in enumerate(self.pieces):
            yield (edges[k], edges[k + 1], ic, sl)

    def to_json(self) -> dict:
        if self.family == "constant":
            return {"family": "constant", "value": self.value}
        if self.family == "poly":
            return {"family": "poly", "coeffs": list(self.coeffs)}
        return {
            "family": "piecewise",
            "breakpoints": list(self.breakpoints),
            "pieces": [list(p) for p in self.pieces],
            "at_break": list(self.at_break),
        }

    @classmethod
    def from_json(cls, obj: dict, where: str) -> "XFunction":
        fam = obj.get("family")
        if fam == "constant":
            _check_keys(obj, {"family", "value"}, where)
            return cls("constant", value=float(obj["value"]))
        if fam == "poly":
            _check_keys(obj, {"family", "coeffs"}, where)
            return cls("poly", coeffs=tuple(float(c) for c in obj["coeffs"]))
        if fam == "piecewise":
            _check_keys(obj, {"family", "breakpoints", "pieces", "at_break"}, where)
            bps = tuple(float(b) for b in obj["breakpoints"])
            at = obj.get("at_break", "left")
            if isinstance(at, str):
                at = [at] * len(bps)
            return cls(
                "piecewise",
                breakpoints=bps,
                pieces=tuple((float(a), float(b)) for a, b in obj["pieces"]),
                at_break=tuple(at),
            )
        raise SpecError(f"unknown function family {fam!r} in {where}")


def constant(value: float) -> XFunction:
    return XFunction("constant", value=float(value))


def poly(*coeffs: float) -> XFunction:
    return XFunction("poly", coeffs=tuple(float(c) for c in coeffs))


def piecewise(breakpoints, pieces, at_break="left") -> XFunction:
    bps = tuple(float(b) for b in breakpoints)
    if isinstance(at_break, str):
        at_break = (at_break,) * len(bps)
    return XFunction(
        "piecewise",
        breakpoints=bps,
        pieces=tuple((float(a), float(b)) for a, b in pieces),
        at_break=tuple(at_break),
    )


@dataclass(frozen=True)
class Barrier:
    """``h(t, x) = shape(x) + ct * t``.  ``shape=None`` means no obstacle."""

    shape: XFunction | None
    ct: float = 0.0
    side: float = -1.0  # -1 lower, +1 upper; only used when shape is None

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.shape is None:
            return np.full(x.shape, self.side * math.inf)
        return self.shape(x) + self.ct * t

    @property
    def present(self) -> bool:
        return self.shape is not None

    def to_json(self):
        if self.shape is None:
            return None
        return {"shape": self.shape.to_json(), "ct": self.ct}

    @classmethod
    def from_json(cls, obj, side: float, where: str) -> "Barrier":
        if obj is None:
            return cls(None, side=side)
        _check_keys(obj, {"shape", "ct"}, where)
        return cls(XFunction.from_json(obj["shape"], where), float(obj.get("ct", 0.0)), side)


# ---------------------------------------------------------------------------
# dynamics


@dataclass(frozen=True)
class CoefFamily:
    """``affine``: c0 + cx*x + ca*alpha;  ``saturating``: c0 + cx*tanh(x) + ca*alpha."""

    family: str = "affine"
    c0: float = 0.0
    cx: float = 0.0
    ca: float = 0.0

    def __post_init__(self):
        if self.family not in ("affine", "saturating"):
            raise SpecError(f"unknown coefficient family {self.family!r}")

    def __call__(self, x, alpha):
        x = np.asarray(x, dtype=float)
        base = x if self.family == "affine" else np.tanh(x)
        return self.c0 + self.cx * base + self.ca * alpha

    def to_json(self):
        return {"family": self.family, "c0": self.c0, "cx": self.cx, "ca": self.ca}

    @classmethod
    def from_json(cls, obj, where):
        _check_keys(obj, {"family", "c0", "cx", "ca"}, where)
        return cls(
            obj.get("family", "affine"),
            float(obj.get("c0", 0.0)),
            float(obj.get("cx", 0.0)),
            float(obj.get("ca", 0.0)),
        )


@dataclass(frozen=True)
class JumpMeasure:
    """Finite sum of point masses: intensity ``weights[j]`` at mark ``marks[j]``."""

    marks: tuple[float, ...] = ()
    weights: tuple[float, ...] = ()
    psi: tuple[float, ...] | None = None

    def __post_init__(self):
        if len(self.marks) != len(self.weights):
            raise SpecError("jump marks and weights differ in length")
        if self.psi is not None and len(self.psi) != len(self.marks):
            raise SpecError("psi needs one entry per mark")

    @property
    def n_marks(self) -> int:
        return len(self.marks)

    @property
    def total_intensity(self) -> float:
        return float(sum(self.weights))

    @property
    def psi_values(self) -> np.ndarray:
        if self.psi is not None:
            return np.asarray(self.psi, dtype=float)
        return np.maximum(1.0, np.abs(np.asarray(self.marks, dtype=float)))

    def to_json(self):
        out = {"marks": list(self.marks), "weights": list(self.weights)}
        if self.psi is not None:
            out["psi"] = list(self.psi)
        return out

    @classmethod
    def from_json(cls, obj, where="jumps"):
        _check_keys(obj, {"marks", "weights", "psi"}, where)
        psi = obj.get("psi")
        return cls(
            tuple(float(m) for m in obj.get("marks", [])),
            tuple(float(w) for w in obj.get("weights", [])),
            None if psi is None else tuple(float(p) for p in psi),
        )


@dataclass(frozen=True)
class CoefficientSet:
    """Drift b(x,a), volatility sigma(x,a) and jump size beta(x,a,e) = e * jump(x,a)."""

    drift: CoefFamily = CoefFamily()
    vol: CoefFamily = CoefFamily()
    jump: CoefFamily = CoefFamily(c0=1.0)
    lipschitz: float = 10.0
    domain: tuple[float, float] = (-5.0, 5.0)

    def b(self, x, alpha):
        return self.drift(x, alpha)

    def sigma(self, x, alpha):
        return self.vol(x, alpha)

    def beta(self, x, alpha, mark):
        return mark * self.jump(x, alpha)

    def to_json(self):
        return {
            "drift": self.drift.to_json(),
            "vol": self.vol.to_json(),
            "jump": self.jump.to_json(),
            "lipschitz": self.lipschitz,
            "domain": list(self.domain),
        }

    @classmethod
    def from_json(cls, obj, where="coefficients"):
        _check_keys(obj, {"drift", "vol", "jump", "lipschitz", "domain"}, where)
        return cls(
            CoefFamily.from_json(obj.get("drift", {}), where + ".drift"),
            CoefFamily.from_json(obj.get("vol", {}), where + ".vol"),
            CoefFamily.from_json(obj.get("jump", {"c0": 1.0}), where + ".jump"),
            float(obj.get("lipschitz", 10.0)),
            tuple(float(d) for d in obj.get("domain", (-5.0, 5.0))),
        )


# ---------------------------------------------------------------------------
# drivers

DRIVER_FAMILIES = {
    "zero": set(),
    "discount": {"r", "r_alpha", "source"},
    "linear": {"r", "r_alpha", "a", "gamma", "source"},
    "z-ambiguity": {"kappa", "r", "r_alpha", "source"},
    "jump-risk": {"r", "r_alpha", "gamma", "source"},
}


@dataclass(frozen=True)
class DriverSpec:
    """Driver families.  All share the closed form

        f = -(r + r_alpha*alpha) y + a z + kappa |z| + sum_j gamma_j nu_j k_j + c(t, x, alpha)

    with ``c = c0 + ct*t + cx*x + calpha*alpha``; each family only admits its
    own subset of parameters.
    """

    family: str = "zero"
    r: float = 0.0
    r_alpha: float = 0.0
    a: float = 0.0
    kappa: float = 0.0
    gamma: tuple[float, ...] = ()
    source: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    lipschitz: float = 10.0

    def __post_init__(self):
        if self.family not in DRIVER_FAMILIES:
            raise SpecError(f"unknown driver family {self.family!r}")
        allowed = DRIVER_FAMILIES[self.family]
        used = {
            "r": self.r != 0.0,
            "r_alpha": self.r_alpha != 0.0,
            "a": self.a != 0.0,
            "kappa": self.kappa != 0.0,
            "gamma": any(g != 0.0 for g in self.gamma),
            "source": any(c != 0.0 for c in self.source),
        }
        bad = [k for k, v in used.items() if v and k not in allowed]
        if bad:
            raise SpecError(f"driver family {self.family!r} does not take {bad}")

    def rate(self, alpha):
        return self.r + self.r_alpha * np.asarray(alpha, dtype=float)

    def source_term(self, t, x, alpha):
        c0, ct, cx, ca = self.source
        return c0 + ct * t + cx * np.asarray(x, dtype=float) + ca * np.asarray(alpha, dtype=float)

    def gamma_values(self, n_marks: int) -> np.ndarray:
        if not self.gamma:
            return np.zeros(n_marks)
        if len(self.gamma) != n_marks:
            raise SpecError("driver gamma needs one entry per jump mark")
        return np.asarray(self.gamma, dtype=float)

    def to_json(self):
        out = {"family": self.family, "lipschitz": self.lipschitz}
        for name in ("r", "r_alpha", "a", "kappa"):
            if getattr(self, name):
                out[name] = getattr(self, name)
        if self.gamma:
            out["gamma"] = list(self.gamma)
        if any(self.source):
            out["source"] = dict(zip(("c0", "ct", "cx", "calpha"), self.source))
        return out

    @classmethod
    def from_json(cls, obj, where="driver"):
        _check_keys(obj, {"family", "r", "r_alpha", "a", "kappa", "gamma", "source", "lipschitz"}, where)
        src = obj.get("source", {})
        _check_keys(src, {"c0", "ct", "cx", "calpha"}, where + ".source")
        return cls(
            family=obj.get("family", "zero"),
            r=float(obj.get("r", 0.0)),
            r_alpha=float(obj.get("r_alpha", 0.0)),
            a=float(obj.get("a", 0.0)),
            kappa=float(obj.get("kappa", 0.0)),
            gamma=tuple(float(g) for g in obj.get("gamma", ())),
            source=tuple(float(src.get(k, 0.0)) for k in ("c0", "ct", "cx", "calpha")),
            lipschitz=float(obj.get("lipschitz", 10.0)),
        )


# ---------------------------------------------------------------------------
# the instance

SPEC_KEYS = {"coefficients", "jumps", "driver", "barriers", "terminal", "controls", "horizon", "growth_p"}


@dataclass(frozen=True)
class ProblemSpec:
    coefficients: CoefficientSet
    jumps: JumpMeasure
    driver: DriverSpec
    h1: Barrier
    h2: Barrier
    g: XFunction
    controls: tuple[float, ...]
    T: float
    growth_p: int = 1
    growth_C: float = 100.0

    def __post_init__(self):
        if not self.T > 0:
            raise SpecError(f"horizon must be positive, got {self.T}")
        if len(self.controls) == 0:
            raise SpecError("control grid is empty")
        if self.driver.gamma and len(self.driver.gamma) != self.jumps.n_marks:
            raise SpecError("driver gamma needs one entry per jump mark")

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    @property
    def gamma(self) -> np.ndarray:
        return self.driver.gamma_values(self.jumps.n_marks)

    def with_(self, **changes) -> "ProblemSpec":
        from dataclasses import replace

        return replace(self, **changes)

    def to_json(self) -> dict:
        return {
            "coefficients": self.coefficients.to_json(),
            "jumps": self.jumps.to_json(),
            "driver": self.driver.to_json(),
            "barriers": {"h1": self.h1.to_json(), "h2": self.h2.to_json()},
            "terminal": self.g.to_json(),
            "controls": list(self.controls),
            "horizon": self.T,
            "growth_p": {"p": self.growth_p, "C": self.growth_C},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ProblemSpec":
        if not isinstance(obj, dict):
            raise SpecError("problem spec must be a JSON object")
        _check_keys(obj, SPEC_KEYS | {"schema"}, "problem spec")
        for key in ("horizon", "controls", "terminal"):
            if key not in obj:
                raise SpecError(f"missing required key {key!r}")
        barriers = obj.get("barriers") or {}
        _check_keys(barriers, {"h1", "h2"}, "barriers")
        gp = obj.get("growth_p", 1)
        if isinstance(gp, dict):
            _check_keys(gp, {"p", "C"}, "growth_p")
            p, C = int(gp.get("p", 1)), float(gp.get("C", 100.0))
        else:
            p, C = int(gp), 100.0
        return cls(
            coefficients=CoefficientSet.from_json(obj.get("coefficients", {})),
            jumps=JumpMeasure.from_json(obj.get("jumps", {})),
            driver=DriverSpec.from_json(obj.get("driver", {})),
            h1=Barrier.from_json(barriers.get("h1"), -1.0, "barriers.h1"),
            h2=Barrier.from_json(barriers.get("h2"), 1.0, "barriers.h2"),
            g=XFunction.from_json(obj["terminal"], "terminal"),
            controls=tuple(float(a) for a in obj["controls"]),
            T=float(obj["horizon"]),
            growth_p=p,
            growth_C=C,
        )


def load_spec(path) -> ProblemSpec:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: invalid JSON ({exc})") from exc
    return ProblemSpec.from_json(obj)


def dump_spec(spec: ProblemSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_json(), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# driver evaluation


def _driver_value(spec: ProblemSpec, alpha, t, x, y, z, k):
    d = spec.driver
    k = np.asarray(k, dtype=float)
    gnu = spec.gamma * np.asarray(spec.jumps.weights, dtype=float)
    jump_term = k @ gnu if gnu.size else np.zeros(np.shape(y))
    return (
        -d.rate(alpha) * y
        + d.a * z
        + d.kappa * np.abs(z)
        + jump_term
        + d.source_term(t, x, alpha)
    )


def eval_driver(spec: ProblemSpec, alpha: float, t: float, x: float, y: float, z: float, k) -> float:
    """f(alpha, t, x, y, z, k) for a single point; ``k`` has one entry per mark."""
    if alpha not in spec.controls:
        raise SpecError(f"control {alpha} is not in the control grid {spec.controls}")
    k = np.asarray(k, dtype=float).reshape(-1)
    if k.size != spec.jumps.n_marks:
        raise SpecError(f"k needs {spec.jumps.n_marks} entries, got {k.size}")
    return float(_driver_value(spec, alpha, t, x, float(y), float(z), k))


def driver_array(spec: ProblemSpec, alpha, t, x, y, z, k):
    """Vectorised driver; ``k`` has a trailing mark axis."""
    return _driver_value(spec, alpha, t, x, y, z, k)


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def __str__(self):
        if self.ok:
            return "valid: all structural checks passed"
        return "\n".join(self.violations)


@dataclass
class ConditionReport:
    n_samples: int
    worst_margin: float
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _fmt(v) -> str:
    return f"{float(v):.6g}"


def validate(spec: ProblemSpec, sample_count: int = 200, seed: int = 0) -> ValidationReport:
    """Sampled checks of the standing assumptions.

    Raises :class:`SpecError` for malformed input; returns soft violations.
    """
    if sample_count < 1:
        raise SpecError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    rep = ValidationReport()
    cs = spec.coefficients
    lo, hi = cs.domain
    if not lo < hi:
        raise SpecError(f"empty coefficient domain {cs.domain}")
    A = np.asarray(spec.controls)
    C = cs.lipschitz

    # barrier order: a deterministic sweep first so corner violations are named
    ts = np.concatenate([np.linspace(0.0, spec.T, 5), rng.uniform(0, spec.T, sample_count)])
    xs = np.concatenate([np.linspace(lo, hi, 5), rng.uniform(lo, hi, sample_count)])
    for t in ts[:5]:
        bad = np.nonzero(spec.h1(t, xs) > spec.h2(t, xs))[0]
        if bad.size:
            rep.violations.append(f"barrier order violated at (t,x)=({_fmt(t)}, {_fmt(xs[bad[0]])})")
            break
    else:
        bad = np.nonzero(spec.h1(ts, xs) > spec.h2(ts, xs))[0]
        if bad.size:
            j = bad[0]
            rep.violations.append(f"barrier order violated at (t,x)=({_fmt(ts[j])}, {_fmt(xs[j])})")

    # polynomial growth of barriers and terminal
    bound = spec.growth_C * (1.0 + np.abs(xs) ** spec.growth_p)
    for name, vals in (
        ("h1", spec.h1(ts, xs)),
        ("h2", spec.h2(ts, xs)),
        ("g", spec.g(xs)),
    ):
        vals = np.where(np.isfinite(vals), vals, 0.0)
        bad = np.nonzero(np.abs(vals) > bound)[0]
        if bad.size:
            rep.violations.append(f"growth bound violated for {name} at x={_fmt(xs[bad[0]])}")

    # Lipschitz ratios of b, sigma on sampled pairs
    x1, x2 = rng.uniform(lo, hi, (2, sample_count))
    a1, a2 = A[rng.integers(0, A.size, (2, sample_count))]
    dist = np.abs(x1 - x2) + np.abs(a1 - a2)
    dist = np.where(dist > 0, dist, np.inf)
    for name, fn in (("drift b", cs.b), ("volatility sigma", cs.sigma)):
        ratio = np.abs(fn(x1, a1) - fn(x2, a2)) / dist
        if np.max(ratio) > C:
            rep.violations.append(f"{name} Lipschitz bound {C} exceeded (ratio {_fmt(np.max(ratio))})")

    # jump size bound |beta| <= C psi(e)
    if spec.jumps.n_marks:
        w = np.asarray(spec.jumps.weights)
        m = np.asarray(spec.jumps.marks)
        if np.any(w <= 0):
            rep.violations.append("jump intensities must be strictly positive")
        if np.any(m == 0) or len(set(m.tolist())) != m.size:
            rep.violations.append("jump marks must be distinct and nonzero")
        psi = spec.jumps.psi_values
        for j, e in enumerate(m):
            beta = cs.beta(x1, a1, e)
            if np.max(np.abs(beta)) > C * psi[j]:
                rep.violations.append(f"jump size bound violated for mark {_fmt(e)}")
        gam = spec.gamma
        if np.any(gam < -1.0):
            rep.violations.append("gamma lower bound violated (gamma >= -1 required)")
        if np.any(np.abs(gam) > psi):
            rep.violations.append("gamma magnitude exceeds psi(e)")

    # driver Lipschitz in (alpha, y, z, k) and growth at zero
    d = spec.driver
    J = spec.jumps.n_marks
    y1, y2, z1, z2 = rng.normal(0, 3, (4, sample_count))
    k1, k2 = rng.normal(0, 3, (2, sample_count, J))
    t1 = rng.uniform(0, spec.T, sample_count)
    f1 = driver_array(spec, a1, t1, x1, y1, z1, k1)
    f2 = driver_array(spec, a2, t1, x2, y2, z2, k2)
    nu = np.asarray(spec.jumps.weights) if J else np.zeros(0)
    knorm = np.sqrt(((k1 - k2) ** 2 * nu).sum(-1)) if J else 0.0
    ddist = np.abs(a1 - a2) + np.abs(x1 - x2) + np.abs(y1 - y2) + np.abs(z1 - z2) + knorm
    ddist = np.where(ddist > 0, ddist, np.inf)
    dr = np.abs(f1 - f2) / ddist
    if np.max(dr) > d.lipschitz:
        rep.violations.append(f"driver Lipschitz bound {d.lipschitz} exceeded (ratio {_fmt(np.max(dr))})")
    f0 = driver_array(spec, a1, t1, x1, 0.0 * y1, 0.0 * z1, 0.0 * k1)
    if np.any(np.abs(f0) > spec.growth_C * (1 + np.abs(x1) ** spec.growth_p)):
        rep.violations.append("driver growth bound violated at y=z=k=0")
    return rep


def check_gamma_condition(
    spec: ProblemSpec,
    sample_count: int = 1000,
    rng_seed: int = 0,
    driver: Callable | None = None,
    gamma: Callable | None = None,
    tol: float = 1e-12,
) -> ConditionReport:
    """Sample f(k2) - f(k1) >= <gamma, k2 - k1>_nu.

    ``driver(alpha, t, x, y, z, k)`` and ``gamma(alpha, t, x, y, z, k1, k2)``
    default to the spec's own family; pass both to audit a hand-built driver.
    """
    if sample_count < 1:
        raise SpecError("sample_count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    J = spec.jumps.n_marks
    nu = np.asarray(spec.jumps.weights, dtype=float)
    if driver is None:
        driver = lambda a, t, x, y, z, k: driver_array(spec, a, t, x, y, z, k)  # noqa: E731
    if gamma is None:
        gam = spec.gamma
        gamma = lambda a, t, x, y, z, k1, k2: gam  # noqa: E731
    lo, hi = spec.coefficients.domain
    worst = math.inf
    failures = []
    for n in range(sample_count):
        a = spec.controls[rng.integers(len(spec.controls))]
        t = rng.uniform(0, spec.T)
        x = rng.uniform(lo, hi)
        y, z = rng.normal(0, 3, 2)
        k1, k2 = rng.normal(0, 3, (2, J))
        lhs = float(driver(a, t, x, y, z, k2)) - float(driver(a, t, x, y, z, k1))
        rhs = float(np.dot(np.asarray(gamma(a, t, x, y, z, k1, k2)) * nu, k2 - k1)) if J else 0.0
        margin = lhs - rhs
        worst = min(worst, margin)
        if margin < -tol:
            failures.append(f"sample {n}: margin {margin:.3e} at alpha={a}, k1={k1.tolist()}, k2={k2.tolist()}")
    return ConditionReport(sample_count, float(worst), failures)


def constants_demo(T: float = 1.0) -> ProblemSpec:
    """h1 = 0, h2 = 1, g = 0.5, zero driver, frozen dynamics."""
    return ProblemSpec(
        coefficients=CoefficientSet(jump=CoefFamily(c0=0.0)),
        jumps=JumpMeasure(),
        driver=DriverSpec(),
        h1=Barrier(constant(0.0)),
        h2=Barrier(constant(1.0)),
        g=constant(0.5),
        controls=(0.0,),
        T=T,
    )

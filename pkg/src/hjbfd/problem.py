"""Bellman problems and the built-in problem library.

A problem is a finite control set plus a coefficient oracle.  For control
``j`` and points ``X`` (shape (n, d)) the oracle returns
:class:`Coefficients` whose arrays broadcast against (n, K) or (n,), where K
is the number of unsigned directions.  Coefficients that do not depend on x
may be returned with a leading axis of length 1.

The discrete operator at an interior node is

    max_j [ sum_k a_k D2_k v + sum_k (bp_k dp_k v + bm_k dm_k v) - c v + f ]

with ``D2_k`` the symmetric second difference along ``e_k`` and ``dp_k``,
``dm_k`` the forward differences along ``+e_k`` and ``-e_k``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.stats import qmc

from . import fields
from .fields import SmoothField
from .lattice import Domain, disk, make_domain
from .stencil import DirectionSet, canonical_directions, decompose_matrix


@dataclass
class Coefficients:
    a: np.ndarray
    c: np.ndarray
    f: np.ndarray
    bp: np.ndarray | None = None
    bm: np.ndarray | None = None


Oracle = Callable[[int, np.ndarray], Coefficients]


@dataclass(eq=False)
class BellmanProblem:
    name: str
    directions: DirectionSet
    domain: Domain
    controls: list[dict]
    coeffs: Oracle
    g: Callable[[np.ndarray], np.ndarray]
    delta: float
    bigK: float
    exact: SmoothField | None = None
    outside_theory: bool = False
    params: dict = field(default_factory=dict)

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    def evaluate(self, j: int, X: np.ndarray) -> Coefficients:
        """Oracle output broadcast to full shapes (n, K) and (n,)."""
        X = np.atleast_2d(X)
        n, K = len(X), self.directions.d1
        co = self.coeffs(j, X)
        a = np.broadcast_to(np.asarray(co.a, dtype=float), (n, K))
        zero = np.zeros((n, K))
        bp = zero if co.bp is None else np.broadcast_to(np.asarray(co.bp, dtype=float), (n, K))
        bm = zero if co.bm is None else np.broadcast_to(np.asarray(co.bm, dtype=float), (n, K))
        c = np.broadcast_to(np.asarray(co.c, dtype=float), (n,))
        f = np.broadcast_to(np.asarray(co.f, dtype=float), (n,))
        return Coefficients(a, c, f, bp, bm)

    def continuum_residual(self, X: np.ndarray) -> np.ndarray:
        """max_j [sum_k a_k D^2_{e_k} v - c v + f] at X for the registered exact
        solution (first-order terms need its gradient and are skipped, so only
        drift-free problems are supported)."""
        if self.exact is None:
            raise ValueError(f"problem {self.name!r} has no exact solution")
        X = np.atleast_2d(X)
        v = self.exact.value(X)
        d2 = np.stack([self.exact.d2(X, e) for e in self.directions.unsigned], axis=1)
        out = np.full(len(X), -np.inf)
        for j in range(self.n_controls):
            co = self.evaluate(j, X)
            if np.any(co.bp) or np.any(co.bm):
                raise NotImplementedError("continuum residual with drift")
            out = np.maximum(out, (co.a * d2).sum(axis=1) - co.c * v + co.f)
        return out


# -- validation ----------------------------------------------------------------

@dataclass
class Violation:
    condition: str
    control: int
    point: list[float]
    direction: int | None
    detail: str

    def to_json(self) -> dict:
        return {"condition": self.condition, "control": self.control, "point": self.point,
                "direction": self.direction, "detail": self.detail}


@dataclass
class ValidationReport:
    h: float
    violations: list[Violation]
    h_max_monotone: float
    h_max_theory: float
    n_points: int

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {
            "h": self.h, "ok": self.ok, "n_points": self.n_points,
            "h_max_monotone": None if math.isinf(self.h_max_monotone) else self.h_max_monotone,
            "h_max_theory": self.h_max_theory,
            "violations": [v.to_json() for v in self.violations],
        }


def _sample_points(p: BellmanProblem, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    lo, hi = map(np.asarray, p.domain.bounding_box)
    out = []
    while sum(len(o) for o in out) < n:
        X = lo + (hi - lo) * rng.random((4 * n, p.domain.dim))
        out.append(X[p.domain.inside(X)])
    return np.concatenate(out)[:n]


def validate_problem(p: BellmanProblem, h: float, points: np.ndarray | None = None,
                     *, n_samples: int = 500, seed: int = 0,
                     max_witnesses: int = 20) -> ValidationReport:
    """Check ellipticity, sign and discrete-monotonicity conditions at sample points.

    ``a_k >= 0`` everywhere and ``a_k >= delta`` wherever the direction is in
    use (``a_k > 0``); ``c >= 0`` (and ``c >= delta`` unless the problem is
    flagged outside-theory); ``h |b_k| <= a_k`` for both signs of each
    direction.  Never raises on a violated condition.
    """
    X = _sample_points(p, n_samples, seed) if points is None else np.atleast_2d(points)
    tol = 1e-12
    viol: list[Violation] = []
    h_max = math.inf

    def witness(cond, j, mask2d, detail_fn):
        rows, cols = np.nonzero(mask2d)
        for r, k in list(zip(rows, cols))[:max_witnesses]:
            viol.append(Violation(cond, j, X[r].tolist(), int(k), detail_fn(r, k)))

    for j in range(p.n_controls):
        co = p.evaluate(j, X)
        a, c = co.a, co.c
        witness("a_k >= 0", j, a < -tol, lambda r, k: f"a={a[r, k]:.6g}")
        low = (a > 0) & (a < p.delta * (1 - tol))
        witness("a_k >= delta on used directions", j, low,
                lambda r, k: f"a={a[r, k]:.6g} < delta={p.delta:.6g}")
        cmin = 0.0 if p.outside_theory else p.delta
        badc = c < cmin * (1 - tol) - tol
        witness("c >= delta" if cmin else "c >= 0", j, badc[:, None],
                lambda r, k: f"c={c[r]:.6g}")
        for name, b in (("+", co.bp), ("-", co.bm)):
            bad = h * np.abs(b) > a * (1 + tol) + tol
            witness(f"h|b{name}_k| <= a_k", j, bad,
                    lambda r, k, b=b: f"h|b|={h * abs(b[r, k]):.6g} > a={a[r, k]:.6g}")
            nz = np.abs(b) > 0
            if nz.any():
                h_max = min(h_max, float((a[nz] / np.abs(b[nz])).min()))
    # drop the per-witness direction for scalar conditions
    for v in viol:
        if v.condition.startswith("c "):
            v.direction = None
    return ValidationReport(h, viol, h_max, p.delta / p.bigK, len(X))


def estimate_bigK(p: BellmanProblem, n_pairs: int = 2000, seed: int = 0) -> float:
    """Sampled upper estimate of sup norms and Lipschitz constants of the data."""
    rng = np.random.default_rng(seed)
    X = _sample_points(p, n_pairs, seed)
    Y = X + 1e-3 * rng.standard_normal(X.shape)
    dist = np.linalg.norm(X - Y, axis=1)
    est = 0.0
    gx, gy = p.g(X), p.g(Y)
    est = max(est, np.abs(gx).max(), (np.abs(gx - gy) / dist).max())
    for j in range(p.n_controls):
        cx, cy = p.evaluate(j, X), p.evaluate(j, Y)
        for u, w in ((cx.a, cy.a), (cx.c, cy.c), (cx.f, cy.f), (cx.bp, cy.bp), (cx.bm, cy.bm)):
            u, w = np.asarray(u), np.asarray(w)
            diff = np.abs(u - w)
            if diff.ndim == 2:
                diff = diff.max(axis=1)
            est = max(est, float(np.abs(u).max()), float((diff / dist).max()))
    return float(est)


# -- built-in problems ------------------------------------------------------------

def _min_positive(values) -> float:
    arr = np.asarray(values, dtype=float)
    pos = arr[arr > 0]
    return float(pos.min()) if pos.size else 0.0


def builtin_linear_manufactured(domain: Domain | None = None,
                                exact_v: SmoothField | None = None,
                                a_matrix=None, c0: float = 1.0,
                                directions: DirectionSet | None = None,
                                name: str = "linear-manufactured-disk") -> BellmanProblem:
    """Single control, constant diffusion, no drift; source chosen so that
    ``exact_v`` solves the continuum equation and is the boundary data."""
    domain = disk() if domain is None else domain
    exact_v = fields.sine_product if exact_v is None else exact_v
    d = domain.dim
    directions = canonical_directions(d) if directions is None else directions
    A = np.eye(d) if a_matrix is None else np.asarray(a_matrix, dtype=float)
    if c0 <= 0:
        raise ValueError("c0 must be positive")
    lam = decompose_matrix(A, directions)

    def coeffs(j, X):
        H = exact_v.hess(X)
        f = -np.einsum("ij,nij->n", A, H) + c0 * exact_v.value(X)
        return Coefficients(lam[None, :], np.full(1, c0), f)

    delta = min(c0, _min_positive(lam))
    p = BellmanProblem(name, directions, domain, [{"a": A.tolist()}], coeffs,
                       exact_v.value, delta, 1.0, exact=exact_v,
                       params={"exact": exact_v.name, "a_matrix": A.tolist(), "c0": c0})
    p.bigK = estimate_bigK(p)
    return p


def two_control_sources() -> tuple[SmoothField, SmoothField]:
    f1 = fields.affine([1.0, 0.0], 1.0)
    f2 = fields.affine([0.0, 1.0], 1.0)
    return (SmoothField("1+x1", f1.value, f1.hess, f1.fourth),
            SmoothField("1+x2", f2.value, f2.hess, f2.fourth))


def builtin_two_control(domain: Domain | None = None, f1: SmoothField | None = None,
                        f2: SmoothField | None = None,
                        directions: DirectionSet | None = None,
                        swap: bool = False) -> BellmanProblem:
    """``max`` of two constant-coefficient operators, diffusion I and
    [[2, 1], [1, 2]], with distinct sources, c = 1, zero boundary data."""
    domain = disk() if domain is None else domain
    directions = canonical_directions(2) if directions is None else directions
    d1, d2 = two_control_sources()
    f1 = d1 if f1 is None else f1
    f2 = d2 if f2 is None else f2
    mats = [np.eye(2), np.array([[2.0, 1.0], [1.0, 2.0]])]
    srcs = [f1, f2]
    if swap:
        mats, srcs = mats[::-1], srcs[::-1]
    lams = [decompose_matrix(m, directions) for m in mats]

    def coeffs(j, X):
        return Coefficients(lams[j][None, :], np.ones(1), srcs[j].value(X))

    controls = [{"a": m.tolist(), "f": s.name} for m, s in zip(mats, srcs)]
    p = BellmanProblem("two-control", directions, domain, controls, coeffs,
                       lambda X: np.zeros(len(X)), min(1.0, _min_positive(np.concatenate(lams))),
                       1.0, params={"f1": f1.name, "f2": f2.name, "swap": swap})
    p.bigK = estimate_bigK(p)
    return p


def ma_control_matrix(theta: float, s: float) -> np.ndarray:
    """Trace-one PSD matrix ``R(theta) diag(s, 1 - s) R(theta)^T``."""
    c, sn = math.cos(theta), math.sin(theta)
    R = np.array([[c, -sn], [sn, c]])
    return R @ np.diag([s, 1.0 - s]) @ R.T


def ma_controls(n_controls: int) -> np.ndarray:
    """(theta, s) pairs: the first ``n_controls`` points of the unscrambled
    Halton sequence mapped to [0, pi) x [0, 1].  Prefixes are nested, so a
    larger control set always contains a smaller one."""
    pts = qmc.Halton(d=2, scramble=False).random(n_controls)
    return np.column_stack([math.pi * pts[:, 0], pts[:, 1]])


def builtin_monge_ampere(domain: Domain | None = None, gamma: float = 0.5,
                         f_field: SmoothField | None = None, n_controls: int = 32,
                         c0: float = 0.1, outside_theory: bool = False,
                         g: Callable | None = None) -> BellmanProblem:
    """Regularised Monge-Ampere operator as a maximum over trace-one controls:
    ``max_a [(a + gamma^2 I) : D^2 v + 2 sqrt(det a) f - c0 v]``."""
    domain = disk() if domain is None else domain
    if domain.dim != 2:
        raise ValueError("monge-ampere problem is two-dimensional")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if n_controls < 4:
        raise ValueError("n_controls must be >= 4")
    if c0 < 0:
        raise ValueError("c0 must be nonnegative")
    if c0 == 0 and not outside_theory:
        raise ValueError("c0 = 0 lies outside the theory; pass outside_theory=True")
    f_field = fields.constant(1.0) if f_field is None else f_field
    directions = canonical_directions(2)
    ts = ma_controls(n_controls)
    lams, dets = [], []
    for theta, s in ts:
        A = ma_control_matrix(theta, s) + gamma**2 * np.eye(2)
        lams.append(decompose_matrix(A, directions))
        dets.append(math.sqrt(max(s * (1.0 - s), 0.0)))

    def coeffs(j, X):
        return Coefficients(lams[j][None, :], np.full(1, c0), 2.0 * dets[j] * f_field.value(X))

    controls = [{"theta": float(t), "s": float(s)} for t, s in ts]
    delta = _min_positive(np.concatenate(lams))
    if c0 > 0:
        delta = min(delta, c0)
    gfun = (lambda X: np.zeros(len(X))) if g is None else g
    p = BellmanProblem("monge-ampere", directions, domain, controls, coeffs, gfun,
                       delta, 1.0, outside_theory=c0 == 0 or outside_theory,
                       params={"gamma": gamma, "n_controls": n_controls, "c0": c0,
                               "f": f_field.name})
    p.bigK = estimate_bigK(p)
    return p


# -- catalogue ------------------------------------------------------------------

def _p(type_: str, default, doc: str) -> dict:
    return {"type": type_, "default": default, "doc": doc}


_DOMAIN = _p("object", {"name": "disk", "radius": 1.0}, "domain name and parameters")

CATALOGUE: dict[str, dict[str, Any]] = {
    "linear-manufactured-disk": {
        "doc": "single control, constant SPD diffusion, exact smooth solution",
        "params": {
            "domain": _DOMAIN,
            "exact": _p("string", "sine-product", f"one of {sorted(fields.MANUFACTURED)}"),
            "a_matrix": _p("matrix", [[1.0, 0.0], [0.0, 1.0]], "constant diffusion matrix"),
            "c0": _p("number", 1.0, "zeroth-order coefficient (> 0)"),
            "use_exact": _p("boolean", True, "compare against the exact solution in studies"),
        },
    },
    "two-control": {
        "doc": "max over two constant-coefficient operators, zero boundary data",
        "params": {
            "domain": _DOMAIN,
            "swap": _p("boolean", False, "swap the control labels"),
        },
    },
    "monge-ampere": {
        "doc": "regularised Monge-Ampere equation written as a Bellman equation",
        "params": {
            "domain": _DOMAIN,
            "gamma": _p("number", 0.5, "regularisation parameter (> 0)"),
            "n_controls": _p("integer", 32, "number of sampled trace-one controls (>= 4)"),
            "c0": _p("number", 0.1, "zeroth-order coefficient (>= 0)"),
            "f": _p("string", "one", "source: 'one', 'zero' or 'bump'"),
            "outside_theory": _p("boolean", False, "permit c0 = 0"),
        },
    },
}

_TYPES = {
    "number": (int, float), "integer": (int,), "boolean": (bool,), "string": (str,),
    "object": (dict,), "matrix": (list,),
}


def list_problems() -> dict[str, dict[str, Any]]:
    return json.loads(json.dumps(CATALOGUE))


def parse_params(name: str, raw: dict | None) -> dict:
    """Fill defaults and type-check problem parameters against the catalogue."""
    if name not in CATALOGUE:
        raise KeyError(f"unknown problem {name!r}; available: {', '.join(sorted(CATALOGUE))}")
    schema = CATALOGUE[name]["params"]
    raw = dict(raw or {})
    unknown = set(raw) - set(schema)
    if unknown:
        raise ValueError(f"unknown parameters for {name}: {sorted(unknown)}")
    out = {}
    for key, spec in schema.items():
        val = raw.get(key, spec["default"])
        ok = _TYPES[spec["type"]]
        if isinstance(val, bool) and spec["type"] in ("number", "integer"):
            raise ValueError(f"parameter {key} must be a {spec['type']}")
        if not isinstance(val, ok):
            raise ValueError(f"parameter {key} must be a {spec['type']}, got {val!r}")
        out[key] = json.loads(json.dumps(val))
    return out


def _source(name: str) -> SmoothField:
    if name == "one":
        return fields.constant(1.0)
    if name == "zero":
        return fields.constant(0.0)
    if name == "bump":
        b = fields.bump(width=0.5, height=1.0)
        return SmoothField("bump+0.5", lambda X: 0.5 + b.value(X), None)
    raise ValueError(f"unknown source {name!r}")


def make_problem(name: str, params: dict | None = None) -> BellmanProblem:
    prm = parse_params(name, params)
    dom_spec = dict(prm["domain"])
    domain = make_domain(dom_spec.pop("name"), **dom_spec)
    if name == "linear-manufactured-disk":
        try:
            exact = fields.MANUFACTURED[prm["exact"]]()
        except KeyError:
            raise ValueError(f"unknown exact solution {prm['exact']!r}") from None
        p = builtin_linear_manufactured(domain, exact, prm["a_matrix"], prm["c0"])
        if not prm["use_exact"]:
            p.exact = None
    elif name == "two-control":
        p = builtin_two_control(domain, swap=prm["swap"])
    else:
        p = builtin_monge_ampere(domain, prm["gamma"], _source(prm["f"]), prm["n_controls"],
                                 prm["c0"], prm["outside_theory"])
    p.params = prm
    return p

"""Randomised property suites run by ``hjbfd check``.

Each suite is deterministic for a given seed and returns pass counts plus the
first counterexample found.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import ortho_group

from . import fields
from .lattice import build_grid
from .problem import BellmanProblem, builtin_linear_manufactured, builtin_monge_ampere, \
    builtin_two_control
from .solver import apriori_bound_check, build_cache, comparison_check, solve
from .stencil import (InfeasibleDecomposition, canonical_directions, decompose_matrix,
                      reconstruct, taylor_consistency, wide_directions)


@dataclass
class SuiteResult:
    name: str
    passed: int = 0
    total: int = 0
    skipped: int = 0
    counterexample: dict | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.passed == self.total

    def record(self, ok: bool, witness: Callable[[], dict]) -> None:
        self.total += 1
        if ok:
            self.passed += 1
        elif self.counterexample is None:
            self.counterexample = witness()

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "total": self.total,
                "skipped": self.skipped, "ok": self.ok,
                "counterexample": self.counterexample, "notes": self.notes}


def builtin_problems(small: bool = True) -> list[BellmanProblem]:
    """Default instances of every built-in problem (fewer Monge-Ampere
    controls when ``small``)."""
    return [
        builtin_linear_manufactured(),
        builtin_two_control(),
        builtin_monge_ampere(n_controls=8 if small else 32),
    ]


def comparison_suite(seed: int, n_pairs: int = 100, h: float = 0.1) -> SuiteResult:
    res = SuiteResult("comparison")
    rng = np.random.default_rng(seed)
    for p in builtin_problems():
        grid = build_grid(p.domain, h, p.directions)
        cache = build_cache(p, grid)
        for t in range(n_pairs):
            scale = 10.0 ** rng.uniform(-2, 1)
            v1 = scale * rng.standard_normal(grid.n_nodes)
            v2 = scale * rng.standard_normal(grid.n_nodes)
            rep = comparison_check(cache, v1, v2)
            res.record(rep.ok, lambda: {"problem": p.name, "pair": t, "lhs": rep.lhs,
                                        "rhs": rep.rhs})
    return res


def apriori_suite(seed: int, h: float = 0.1, tol: float = 1e-8) -> SuiteResult:
    res = SuiteResult("apriori")
    for p in builtin_problems():
        grid = build_grid(p.domain, h, p.directions)
        cache = build_cache(p, grid)
        sol, _ = solve(p, grid, "policy", tol, cache=cache)
        rep = apriori_bound_check(cache, sol, tol)
        res.record(rep.ok, lambda: {"problem": p.name, **rep.to_json()})
    return res


def random_elliptic(rng, dim: int, lo: float = 0.2, hi: float = 5.0) -> np.ndarray:
    Q = ortho_group.rvs(dim, random_state=rng)
    return Q @ np.diag(rng.uniform(lo, hi, dim)) @ Q.T


def decomposition_suite(seed: int, n: int = 1000, atol: float = 1e-10) -> SuiteResult:
    """Random elliptic matrices over wide stencils (2D reach 2, 3D reach 3),
    plus diagonally dominant 2D matrices over the canonical set."""
    res = SuiteResult("decomposition")
    rng = np.random.default_rng(seed)
    sets = {2: wide_directions(2, 2), 3: wide_directions(3, 3)}
    for t in range(n):
        dim = 2 if t % 2 == 0 else 3
        a = random_elliptic(rng, dim)
        try:
            lam = decompose_matrix(a, sets[dim])
        except InfeasibleDecomposition:
            res.skipped += 1
            continue
        err = float(np.abs(reconstruct(lam, sets[dim]) - a).max())
        res.record(err <= atol and bool((lam >= 0).all()),
                   lambda: {"matrix": a.tolist(), "lam": lam.tolist(), "err": err})
    canon = canonical_directions(2)
    for t in range(n):
        a12 = rng.uniform(-2, 2)
        a = np.array([[abs(a12) + rng.uniform(0, 3), a12], [a12, abs(a12) + rng.uniform(0, 3)]])
        try:
            lam = decompose_matrix(a, canon)
            err = float(np.abs(reconstruct(lam, canon) - a).max())
            ok = err <= atol and bool((lam >= 0).all())
        except InfeasibleDecomposition:
            ok, lam, err = False, np.zeros(4), float("nan")
        res.record(ok, lambda: {"matrix": a.tolist(), "lam": lam.tolist(), "err": err})
    if res.skipped:
        res.notes.append(f"{res.skipped} random matrices outside the stencil cone")
    return res


def taylor_suite(seed: int, n: int = 200) -> SuiteResult:
    res = SuiteResult("taylor")
    rng = np.random.default_rng(seed)
    dirs = canonical_directions(2).unsigned
    tests = [fields.quadratic([[1.0, 0.3], [0.3, -2.0]], [0.5, 1.0], 2.0), fields.quartic,
             fields.sine1, fields.sine_product, fields.exp_sine]
    for phi in tests:
        for _ in range(n // len(tests)):
            x = rng.uniform(-1, 1, 2)
            h = rng.uniform(1e-3, 0.5)
            e = dirs[rng.integers(len(dirs))] * rng.choice([-1, 1])
            chk = taylor_consistency(phi, x, e, h)
            res.record(chk.ok, lambda: {"field": phi.name, "x": x.tolist(), "e": e.tolist(),
                                        "h": h, "gap": chk.measured_gap,
                                        "bound": chk.certified_bound})
    return res


def contraction_suite(seed: int, h: float = 0.1, tol: float = 1e-8) -> SuiteResult:
    res = SuiteResult("contraction")
    for p in builtin_problems():
        grid = build_grid(p.domain, h, p.directions)
        _, rep = solve(p, grid, "jacobi", tol)
        ratios = rep.contraction_ratios()
        worst = float(ratios.max()) if len(ratios) else 0.0
        res.record(worst <= rep.contraction_bound + 1e-10,
                   lambda: {"problem": p.name, "worst_ratio": worst,
                            "bound": rep.contraction_bound})
    return res


SUITES: dict[str, Callable[[int], SuiteResult]] = {
    "comparison": comparison_suite,
    "apriori": apriori_suite,
    "decomposition": decomposition_suite,
    "taylor": taylor_suite,
    "contraction": contraction_suite,
}

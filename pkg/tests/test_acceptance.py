"""Acceptance criteria, one test each, printing a PASS/FAIL line per criterion.

The studies over h in {0.1, 0.05, 0.025, 0.0125} are computed once per module
and shared by the rate, monitor and Monge-Ampere criteria.
"""

import numpy as np
import pytest

from hjbfd import fields
from hjbfd.checks import (builtin_problems, comparison_suite, decomposition_suite,
                          taylor_suite)
from hjbfd.lattice import build_grid, ellipse
from hjbfd.problem import (builtin_linear_manufactured, builtin_monge_ampere,
                           builtin_two_control, make_problem)
from hjbfd.solver import apriori_bound_check, build_cache, solve
from hjbfd.stencil import taylor_consistency
from hjbfd.study import run_convergence_study
from oracles import dense_oracle

H_SWEEP = [0.1, 0.05, 0.025, 0.0125]
RATE_FLOOR = 2 / 3 - 0.05
TOL = 1e-8


@pytest.fixture
def report(pytestconfig):
    """Print one line per criterion straight to the terminal."""
    capman = pytestconfig.pluginmanager.getplugin("capturemanager")

    def emit(criterion, ok, detail):
        with capman.global_and_fixture_disabled():
            print(f"\n[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
        return ok

    return emit


@pytest.fixture(scope="module")
def studies():
    return {
        "linear-manufactured-disk": run_convergence_study(
            builtin_linear_manufactured(), H_SWEEP, "exact", tol=TOL),
        "two-control": run_convergence_study(builtin_two_control(), H_SWEEP, "fine-grid",
                                             tol=TOL, threads=4),
        "monge-ampere": run_convergence_study(
            make_problem("monge-ampere", {"gamma": 0.5, "f": "bump"}), H_SWEEP, "fine-grid",
            tol=TOL, threads=4),
    }


def test_1_rate_floor(studies, report):
    man, two = studies["linear-manufactured-disk"].rate, studies["two-control"].rate
    ok = man >= RATE_FLOOR and man >= 1.5 and two >= RATE_FLOOR
    assert report(1, ok, f"manufactured p={man:.4f} (>= 1.5), two-control p={two:.4f} "
                         f"(>= {RATE_FLOOR:.4f})")


def test_2_contraction(report):
    worst = -np.inf
    for p in builtin_problems(small=False):
        for h in (0.1, 0.05):
            _, rep = solve(p, build_grid(p.domain, h, p.directions), "jacobi", TOL)
            excess = rep.contraction_ratios().max() - rep.contraction_bound
            worst = max(worst, float(excess))
    assert report(2, worst <= 1e-10, f"max(ratio - bound) = {worst:.3e} (<= 1e-10)")


def test_3_comparison(report):
    res = comparison_suite(seed=42, n_pairs=100, h=0.1)
    assert report(3, res.ok and res.total == 300,
                  f"{res.passed}/{res.total} pairs with slack >= -1e-12")


def test_4_apriori(report):
    margins = []
    for p in builtin_problems(small=False):
        grid = build_grid(p.domain, 0.05, p.directions)
        cache = build_cache(p, grid)
        sol, _ = solve(p, grid, "policy", TOL, cache=cache)
        rep = apriori_bound_check(cache, sol, TOL)
        margins.append((p.name, rep.ok, rep.margin_pos, rep.margin_neg))
    ok = all(m[1] for m in margins)
    assert report(4, ok, "; ".join(f"{n} margins +{mp:.3g}/-{mn:.3g}"
                                   for n, _, mp, mn in margins))


def test_5_decomposition(report):
    res = decomposition_suite(seed=42, n=1000, atol=1e-10)
    ok = res.ok and res.skipped == 0 and res.total == 2000
    assert report(5, ok, f"{res.passed}/{res.total} reconstructions <= 1e-10 "
                         f"({res.skipped} outside the stencil cone)")


def test_6_oracle_equivalence(report):
    worst_dense = 0.0
    cases = [(builtin_linear_manufactured(), 0.3),
             (builtin_linear_manufactured(a_matrix=[[1.5, 0.4], [0.4, 1.0]]), 0.3),
             (builtin_linear_manufactured(domain=ellipse(), exact_v=fields.exp_sine), 0.2)]
    for p, h in cases:
        grid = build_grid(p.domain, h, p.directions)
        assert grid.n_interior <= 50
        ref = dense_oracle(p, grid)
        for method in ("policy", "gauss_seidel", "jacobi"):
            sol, _ = solve(p, grid, method, 1e-11)
            worst_dense = max(worst_dense, float(np.abs(sol.interior_values - ref).max()))
    worst_cross = 0.0
    for p in builtin_problems(small=False):
        grid = build_grid(p.domain, 0.1, p.directions)
        sols = [solve(p, grid, m, TOL)[0].values for m in ("policy", "gauss_seidel", "jacobi")]
        worst_cross = max(worst_cross, max(np.abs(s - sols[0]).max() for s in sols[1:]))
    ok = worst_dense <= 1e-8 and worst_cross <= 10 * TOL
    assert report(6, ok, f"dense oracle gap {worst_dense:.2e} (<= 1e-8), "
                         f"method gap {worst_cross:.2e} (<= {10 * TOL:g})")


@pytest.mark.parametrize("name", ["linear-manufactured-disk", "two-control", "monge-ampere"])
def test_7_monitors(studies, report, name):
    spread = studies[name].monitor_spread
    ok = all(v <= 2.0 for v in spread.values())
    detail = ", ".join(f"{k} {v:.3f}" for k, v in spread.items())
    assert report(f"7 {name}", ok, f"spread {detail} (each <= 2)")


def test_8_monge_ampere(studies, report):
    p0 = builtin_monge_ampere(gamma=0.5, f_field=fields.constant(0.0))
    grid = build_grid(p0.domain, 0.05, p0.directions)
    zero, _ = solve(p0, grid, "policy", TOL)
    zero_sup = float(np.abs(zero.values).max())
    st = studies["monge-ampere"]
    monotone = all(a > b for a, b in zip(st.errors, st.errors[1:]))
    ok = zero_sup <= TOL and monotone and st.rate >= RATE_FLOOR
    errs = ", ".join(f"{e:.3g}" for e in st.errors)
    assert report(8, ok, f"f=0 sup|v|={zero_sup:.1e}; errors {errs}; p={st.rate:.4f}")


def test_9_taylor(report):
    res = taylor_suite(seed=42, n=1000)
    rng = np.random.default_rng(42)
    quad = fields.quadratic([[1.0, 0.3], [0.3, -2.0]], [0.5, 1.0], 2.0)
    worst_quad = 0.0
    for _ in range(200):
        x = rng.uniform(-1, 1, 2)
        e = np.array([[1, 0], [0, 1], [1, 1], [1, -1]][rng.integers(4)])
        h = rng.uniform(1e-3, 0.5)
        chk = taylor_consistency(quad, x, e, h)
        assert chk.certified_bound == 0.0
        # machine precision relative to the magnitudes that enter the quotient
        worst_quad = max(worst_quad, chk.measured_gap / chk.roundoff)
    ok = res.ok and worst_quad <= 1.0
    assert report(9, ok, f"{res.passed}/{res.total} gaps within certified bound; "
                         f"quadratic gap / round-off allowance <= {worst_quad:.3f}")

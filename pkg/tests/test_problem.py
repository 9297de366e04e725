import numpy as np
import pytest
import sympy as sp

from hjbfd import fields
from hjbfd.lattice import disk
from hjbfd.problem import (BellmanProblem, Coefficients, builtin_linear_manufactured,
                           builtin_monge_ampere, builtin_two_control, list_problems,
                           ma_control_matrix, ma_controls, make_problem, parse_params,
                           validate_problem)
from hjbfd.stencil import InfeasibleDecomposition, axis_directions, canonical_directions, \
    decompose_matrix


def _points(n=100, seed=0):
    rng = np.random.default_rng(seed)
    r = np.sqrt(rng.random(n)) * 0.99
    t = 2 * np.pi * rng.random(n)
    return np.column_stack([r * np.cos(t), r * np.sin(t)])


def drift_problem(b, a=1.0):
    dirs = axis_directions(2)

    def coeffs(j, X):
        return Coefficients(np.full((1, 2), a), np.ones(1), np.zeros(1),
                            np.full((1, 2), b), np.full((1, 2), -b))

    return BellmanProblem("drift", dirs, disk(), [{}], coeffs, lambda X: np.zeros(len(X)),
                          min(a, 1.0), abs(b) + a + 1)


# -- validation --------------------------------------------------------------------

def test_validate_builtins_clean(builtins):
    for p in builtins:
        assert validate_problem(p, 0.05).ok, p.name


def test_validate_drift_witness():
    rep = validate_problem(drift_problem(10.0), 0.5)
    assert not rep.ok
    v = rep.violations[0]
    assert v.condition.startswith("h|b")
    assert "5 > a=1" in v.detail
    assert rep.h_max_monotone == pytest.approx(0.1)


def test_validate_drift_small_step_ok():
    assert validate_problem(drift_problem(10.0), 0.1).ok


def test_validate_brute_force_monotonicity():
    # oracle: scan h and compare the reported boundary with h |b| <= a
    p = drift_problem(4.0, a=2.0)
    for h in np.linspace(0.05, 1.0, 20):
        assert validate_problem(p, h, n_samples=50).ok == (h * 4.0 <= 2.0 + 1e-12)


def test_validate_negative_coefficients():
    dirs = axis_directions(2)

    def coeffs(j, X):
        return Coefficients(np.array([[1.0, -0.1]]), np.full(1, -1.0), np.zeros(1))

    p = BellmanProblem("bad", dirs, disk(), [{}], coeffs, lambda X: np.zeros(len(X)), 0.5, 1.0)
    conds = {v.condition for v in validate_problem(p, 0.1).violations}
    assert "a_k >= 0" in conds and "c >= delta" in conds


def test_validate_small_positive_coefficient_flagged():
    dirs = axis_directions(2)

    def coeffs(j, X):
        return Coefficients(np.array([[1.0, 0.01]]), np.ones(1), np.zeros(1))

    p = BellmanProblem("weak", dirs, disk(), [{}], coeffs, lambda X: np.zeros(len(X)), 0.5, 1.0)
    conds = {v.condition for v in validate_problem(p, 0.1).violations}
    assert conds == {"a_k >= delta on used directions"}


def test_h_max_theory(manufactured):
    rep = validate_problem(manufactured, 0.1)
    assert rep.h_max_theory == pytest.approx(manufactured.delta / manufactured.bigK)


# -- manufactured problem --------------------------------------------------------------

def test_bowl_source():
    p = builtin_linear_manufactured(exact_v=fields.quadratic_bowl(2))
    X = _points()
    f = p.evaluate(0, X).f
    assert np.allclose(f, 2 * 2 + 1 - (X**2).sum(axis=1), atol=1e-13)


def test_sine_product_source_sympy():
    x, y = sp.symbols("x y")
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    v = sp.sin(sp.pi * x) * sp.sin(sp.pi * y)
    c0 = 0.7
    f = -(A[0, 0] * sp.diff(v, x, 2) + 2 * A[0, 1] * sp.diff(v, x, y)
          + A[1, 1] * sp.diff(v, y, 2)) + c0 * v
    f_num = sp.lambdify((x, y), f, "numpy")
    p = builtin_linear_manufactured(a_matrix=A, c0=c0)
    X = _points()
    assert np.allclose(p.evaluate(0, X).f, f_num(X[:, 0], X[:, 1]), rtol=0, atol=1e-12)


def test_exp_sine_derivatives_sympy():
    x, y = sp.symbols("x y")
    v = sp.exp(x) * sp.sin(y)
    X = _points(20)
    H = fields.exp_sine.hess(X)
    for (i, si), (j, sj) in [((0, x), (0, x)), ((0, x), (1, y)), ((1, y), (1, y))]:
        ref = sp.lambdify((x, y), sp.diff(v, si, sj), "numpy")(X[:, 0], X[:, 1])
        assert np.allclose(H[:, i, j], ref, atol=1e-13)
    e = np.array([1.0, -1.0])
    t = sp.symbols("t")
    d4 = sp.diff(v.subs({x: x + t * e[0], y: y + t * e[1]}), t, 4).subs(t, 0)
    ref = sp.lambdify((x, y), d4, "numpy")(X[:, 0], X[:, 1])
    assert np.allclose(fields.exp_sine.d4(X, e), ref, atol=1e-12)


def test_continuum_residual_zero(manufactured):
    assert np.abs(manufactured.continuum_residual(_points())).max() <= 1e-12


def test_manufactured_boundary_data(manufactured):
    X = _points()
    assert np.array_equal(manufactured.g(X), manufactured.exact.value(X))


def test_manufactured_rejects_nonpositive_c():
    with pytest.raises(ValueError):
        builtin_linear_manufactured(c0=0.0)


def test_manufactured_3d():
    from hjbfd.lattice import ball
    p = builtin_linear_manufactured(domain=ball(3), exact_v=fields.quadratic_bowl(3))
    X = np.array([[0.1, 0.2, 0.3]])
    assert p.evaluate(0, X).f[0] == pytest.approx(2 * 3 + 1 - 0.14)


# -- two-control problem ----------------------------------------------------------------

def _H_zero(p, X):
    return np.max([p.evaluate(j, X).f for j in range(p.n_controls)], axis=0)


def test_two_control_zero_function(two_control):
    X = _points()
    assert np.array_equal(_H_zero(two_control, X), np.maximum(1 + X[:, 0], 1 + X[:, 1]))


def test_two_control_swap_invariant(two_control):
    X = _points()
    assert np.array_equal(_H_zero(builtin_two_control(swap=True), X), _H_zero(two_control, X))


def test_two_control_decompositions(two_control):
    co = [two_control.evaluate(j, np.zeros((1, 2))).a[0] for j in range(2)]
    assert np.array_equal(co[0], [1, 1, 0, 0])
    assert np.array_equal(co[1], [1, 1, 1, 0])
    assert two_control.delta == 1.0


# -- Monge-Ampere ---------------------------------------------------------------------

def test_ma_decomposition_example():
    canon = canonical_directions(2)
    A = ma_control_matrix(0.0, 1.0) + 0.25 * np.eye(2)
    assert np.allclose(A, [[1.25, 0], [0, 0.25]])
    assert np.allclose(decompose_matrix(A, canon), [1.25, 0.25, 0, 0], atol=1e-15)


def test_ma_det_term():
    p = builtin_monge_ampere(n_controls=4)
    dets = []
    for j, ctl in enumerate(p.controls):
        s = ctl["s"]
        dets.append((p.evaluate(j, np.zeros((1, 2))).f[0], 2 * np.sqrt(s * (1 - s))))
    for got, want in dets:
        assert got == pytest.approx(want)
    # a = diag(1/2, 1/2) in any rotation gives 2 sqrt(det a) = 1
    A = ma_control_matrix(0.7, 0.5)
    assert 2 * np.sqrt(np.linalg.det(A)) == pytest.approx(1.0)


def test_ma_controls_trace_one_psd():
    for theta, s in ma_controls(64):
        A = ma_control_matrix(theta, s)
        assert np.trace(A) == pytest.approx(1.0)
        assert np.linalg.eigvalsh(A).min() >= -1e-15


def test_ma_controls_nested():
    assert np.array_equal(ma_controls(16), ma_controls(32)[:16])


def test_ma_refining_controls_monotone():
    # more controls: the sup over a superset can only grow
    X = _points(50)
    rng = np.random.default_rng(3)
    d2 = rng.standard_normal((50, 4))
    prev = None
    for n in (4, 8, 16, 32, 64):
        p = builtin_monge_ampere(n_controls=n)
        val = np.max([(p.evaluate(j, X).a * d2).sum(axis=1) + p.evaluate(j, X).f
                      for j in range(n)], axis=0)
        if prev is not None:
            assert np.all(val >= prev - 1e-14)
        prev = val


def test_ma_parameter_errors():
    with pytest.raises(ValueError):
        builtin_monge_ampere(gamma=0.0)
    with pytest.raises(ValueError):
        builtin_monge_ampere(n_controls=3)
    with pytest.raises(ValueError):
        builtin_monge_ampere(c0=0.0)
    p = builtin_monge_ampere(c0=0.0, outside_theory=True, n_controls=4)
    assert p.outside_theory
    assert validate_problem(p, 0.1).ok


def test_ma_small_gamma_not_decomposable():
    # the canonical stencil needs diagonal dominance, which fails for small gamma
    with pytest.raises(InfeasibleDecomposition):
        builtin_monge_ampere(gamma=0.1, n_controls=16)


def test_ma_delta_positive(monge_ampere):
    assert monge_ampere.delta > 0
    assert validate_problem(monge_ampere, 0.05).ok


# -- catalogue -----------------------------------------------------------------------

def test_catalogue_round_trip():
    cat = list_problems()
    assert set(cat) == {"linear-manufactured-disk", "two-control", "monge-ampere"}
    for name, entry in cat.items():
        defaults = {k: v["default"] for k, v in entry["params"].items()}
        assert parse_params(name, None) == defaults
        assert parse_params(name, defaults) == defaults
        assert make_problem(name).name == name


def test_parse_params_errors():
    with pytest.raises(KeyError):
        parse_params("nope", {})
    with pytest.raises(ValueError):
        parse_params("monge-ampere", {"gamma": "big"})
    with pytest.raises(ValueError):
        parse_params("monge-ampere", {"n_controls": True})
    with pytest.raises(ValueError):
        parse_params("two-control", {"colour": 1})


def test_make_problem_params():
    p = make_problem("monge-ampere", {"n_controls": 8, "f": "zero"})
    assert p.n_controls == 8
    assert np.all(p.evaluate(3, np.zeros((2, 2))).f == 0)
    p = make_problem("linear-manufactured-disk", {"use_exact": False})
    assert p.exact is None

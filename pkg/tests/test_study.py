import math

import numpy as np
import pytest

from hjbfd import fields
from hjbfd.lattice import build_grid
from hjbfd.problem import builtin_linear_manufactured
from hjbfd.solver import GridFunction, solve
from hjbfd.study import (MonitorRecord, NestingError, RateFitError, estimate_monitor, fit_rate,
                         monitor_spread, restrict_to_coarse, run_convergence_study, step_ratio)

HS = [0.1, 0.05, 0.025, 0.0125]


def test_fit_rate_exact_power():
    fit = fit_rate([(h, 3.0 * h ** (2 / 3)) for h in HS])
    assert fit.rate == pytest.approx(2 / 3, abs=1e-12)
    assert math.exp(fit.intercept) == pytest.approx(3.0)
    assert fit.residual < 1e-12


def test_fit_rate_squared():
    assert fit_rate([(h, h**2) for h in HS]).rate == pytest.approx(2.0)


def test_fit_rate_noisy():
    rng = np.random.default_rng(7)
    for _ in range(50):
        noise = np.exp(rng.uniform(-0.05, 0.05, len(HS)))
        fit = fit_rate([(h, h ** (2 / 3) * z) for h, z in zip(HS, noise)])
        assert 0.55 <= fit.rate <= 0.80


def test_fit_rate_drops_zero_errors():
    fit = fit_rate([(0.1, 0.0), (0.05, 0.1), (0.025, 0.05)])
    assert fit.n_used == 2 and len(fit.notes) == 1
    assert fit.rate == pytest.approx(1.0)
    with pytest.raises(RateFitError):
        fit_rate([(0.1, 0.0), (0.05, 1e-3)])


def test_step_ratio():
    assert step_ratio(0.1, 0.05) == 2
    assert step_ratio(0.1, 0.025) == 4
    with pytest.raises(NestingError):
        step_ratio(0.1, 0.03)


def test_restrict_identity_and_subsample(manufactured):
    coarse = build_grid(manufactured.domain, 0.1, manufactured.directions)
    same = GridFunction.from_field(coarse, manufactured.exact.value)
    assert np.array_equal(restrict_to_coarse(same, coarse).values, same.values)
    fine = build_grid(manufactured.domain, 0.05, manufactured.directions)
    fv = GridFunction.from_field(fine, lambda X: X[:, 0] + 10 * X[:, 1])
    out = restrict_to_coarse(fv, coarse, fill=lambda X: X[:, 0] + 10 * X[:, 1])
    assert np.allclose(out.values, coarse.points[:, 0] + 10 * coarse.points[:, 1], atol=1e-14)
    # interior values are copied, never interpolated
    rows = fine.locate(2 * coarse.nodes[coarse.interior])
    assert np.array_equal(out.interior_values, fv.values[rows])


def test_restrict_non_nested(manufactured):
    coarse = build_grid(manufactured.domain, 0.1, manufactured.directions)
    fine = build_grid(manufactured.domain, 0.03, manufactured.directions)
    with pytest.raises(NestingError):
        restrict_to_coarse(GridFunction.zeros(fine), coarse)


def test_study_exact_reference(manufactured):
    rep = run_convergence_study(manufactured, [0.1, 0.05, 0.025], "exact")
    assert rep.reference_kind == "exact"
    assert all(a > b for a, b in zip(rep.errors, rep.errors[1:]))
    assert rep.rate > 1.5
    assert len(rep.rows()) == 3 and len(rep.rows()[0]) == 6


def test_self_comparison_undefined_rate(manufactured):
    grid = build_grid(manufactured.domain, 0.05, manufactured.directions)
    ref, _ = solve(manufactured, grid)
    rep = run_convergence_study(manufactured, [0.05], ref)
    assert rep.errors == [0.0]
    assert rep.rate is None and rep.rate_notes


def test_study_threads_match(two_control):
    a = run_convergence_study(two_control, [0.2, 0.1], "fine-grid")
    b = run_convergence_study(two_control, [0.2, 0.1], "fine-grid", threads=3)
    assert a.errors == b.errors and a.reference_h == pytest.approx(0.05)


@pytest.mark.parametrize("bad", [[], [0.1, 0.1], [0.05, 0.1], [0.1, -0.05]])
def test_h_list_validation(manufactured, bad):
    with pytest.raises(ValueError):
        run_convergence_study(manufactured, bad)


def test_reference_validation(two_control):
    with pytest.raises(ValueError):
        run_convergence_study(two_control, [0.1], "exact")
    with pytest.raises(ValueError):
        run_convergence_study(two_control, [0.1], "magic")


def test_monitor_exact_values():
    # v = g gives M1 = 0; v affine gives M2 = max |q.e|, M3 = 0
    p = builtin_linear_manufactured(exact_v=fields.affine([0.5, -1.0], 0.2))
    grid = build_grid(p.domain, 0.1, p.directions)
    v = GridFunction.from_field(grid, p.exact.value)
    rec = estimate_monitor(p, grid, v)
    assert rec.M1 == 0.0
    assert rec.M2 == pytest.approx(1.5)
    assert rec.M3 < 1e-10
    assert rec.M4 <= math.hypot(0.5, 1.0) + 1e-12


def test_monitor_spread():
    recs = [MonitorRecord(h, 1.0, m, 1.0, 0.0) for h, m in zip(HS, [1, 2, 1, 1])]
    spread = monitor_spread(recs)
    assert spread["M1"] == 1.0
    assert spread["M2"] == pytest.approx(2.0)
    assert spread["M4"] == 1.0

from __future__ import annotations

import numpy as np
import pytest

from lqgame.adjoint import check_eta_conditions, eta_to_csv, solve_eta, value_at, value_integrand
from lqgame.errors import InvalidInputError
from lqgame.problem import MatrixFunction, ScalarExpr, assemble, builtin_problem, make_problem
from lqgame.riccati import check_regularity, integrate_riccati, supplied_solution, uniform_grid
from lqgame.simulate import BrownianBatch, estimate_J, simulate_closed_loop
from lqgame.strategy import build_saddle

S = ScalarExpr.poly([0.0, 1.0])


def drift_lqr(b=0.5, g=2.0):
    """``dX = (u + b) ds``, cost ``u²`` and ``X(1)² + 2gX(1)``; ``P = 1/(2−s)``, ``η = b + (g−b)/(2−s)``."""
    return assemble(make_problem(0.0, 1.0, 1, 1, B1=1.0, R11=1.0, b=b, G=1.0, g=[g]))


def test_eta_closed_form_with_drift():
    sp = drift_lqr()
    P = integrate_riccati(sp, 200)
    adj = solve_eta(sp, P)
    exact = 0.5 + 1.5 / (2.0 - adj.grid)
    assert np.max(np.abs(adj.eta[:, 0] - exact)) < 1e-9
    assert np.all(adj.zeta == 0)


def test_eta_fourth_order():
    sp = drift_lqr()
    errs = []
    for N in (10, 20, 40):
        adj = solve_eta(sp, integrate_riccati(sp, N))
        errs.append(np.max(np.abs(adj.eta[:, 0] - (0.5 + 1.5 / (2.0 - adj.grid)))))
    for a, b in zip(errs, errs[1:]):
        assert 12 <= a / b <= 20


def test_eta_on_singular_example():
    p = builtin_problem("example-6.1")
    sp = assemble(make_problem(0.0, 1.0, 1, 1, B1=1.0, D1=1.0, R11=p.R11, G=1.0, g=[1.0]))
    P = supplied_solution(MatrixFunction.scalar(S * S), uniform_grid(0.0, 1.0, 1000))
    adj = solve_eta(sp, P)
    assert np.max(np.abs(adj.eta[:, 0] - adj.grid**2)) < 1e-5


def test_value_matches_deterministic_closed_loop_cost():
    sp = drift_lqr()
    P = integrate_riccati(sp, 400)
    adj = solve_eta(sp, P)
    st = build_saddle(sp, P, adj)
    batch = BrownianBatch.uniform(0, 1, 0.0, 1.0, 400)
    for x in (-1.0, 0.0, 2.0):
        J = estimate_J(sp, simulate_closed_loop(sp, st, np.array([x]), batch))
        assert abs(J.mean - value_at(sp, P, adj, 0.0, [x])) < 1e-4


@pytest.mark.parametrize("x", [-1.0, 0.5, 2.0])
def test_value_of_builtins(x):
    sp = assemble(builtin_problem("example-6.2"))
    P = supplied_solution(MatrixFunction.const(-np.eye(1)), uniform_grid(0.0, 1.0, 1000))
    assert abs(value_at(sp, P, solve_eta(sp, P), 0.0, [x]) + x * x / 2) < 1e-12
    sp3 = assemble(builtin_problem("example-6.3"))
    P3 = integrate_riccati(sp3, 100)
    assert abs(value_at(sp3, P3, solve_eta(sp3, P3), 0.0, [x]) - x * x / 2) < 1e-12


def test_value_at_later_time_and_integrand():
    sp = drift_lqr()
    P = integrate_riccati(sp, 100)
    adj = solve_eta(sp, P)
    assert value_at(sp, P, adj, 1.0, [1.5]) == pytest.approx(0.5 * (1.5**2 + 2 * 2.0 * 1.5))
    vals = value_integrand(sp, P, adj, [0.0, 0.5, 1.0])
    assert vals.shape == (3,) and np.all(np.isfinite(vals))
    with pytest.raises(InvalidInputError):
        value_at(sp, P, adj, 1.5, [0.0])
    with pytest.raises(InvalidInputError):
        value_at(sp, P, adj, 0.0, [0.0, 1.0])


def test_eta_range_violation_detected():
    sp = assemble(make_problem(0.0, 1.0, 1, 1, R11=0.0, rho1=1.0, G=1.0))
    P = integrate_riccati(sp, 50)
    adj = solve_eta(sp, P)
    ok, _ = check_eta_conditions(sp, P, adj)
    assert not ok
    rep = check_regularity(P, sp, adj)
    assert "eta_range" in rep.failed and rep.range_ok


def test_grids_must_match(tmp_path):
    sp = drift_lqr()
    P = integrate_riccati(sp, 20)
    other = solve_eta(sp, integrate_riccati(sp, 10))
    with pytest.raises(InvalidInputError):
        check_eta_conditions(sp, P, other)
    adj = solve_eta(sp, P)
    eta_to_csv(adj, tmp_path / "eta.csv")
    lines = (tmp_path / "eta.csv").read_text().splitlines()
    assert lines[0] == "s,eta_1" and len(lines) == 22


def test_incomplete_solution_rejected():
    sp = assemble(make_problem(0.0, 2.0, 1, 1, B1=1.0, R11=-1.0, G=1.0))
    P = integrate_riccati(sp, 200)
    with pytest.raises(InvalidInputError):
        solve_eta(sp, P)

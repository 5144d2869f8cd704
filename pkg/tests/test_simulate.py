from __future__ import annotations

import math

import numpy as np
import pytest

from lqgame.adjoint import solve_eta
from lqgame.errors import InvalidInputError, NumericOverflowError, RegularityError
from lqgame.problem import MatrixFunction, ScalarExpr, assemble, builtin_problem, make_problem
from lqgame.riccati import integrate_riccati, supplied_solution, uniform_grid
from lqgame.simulate import (
    SEED_ENV,
    BrownianBatch,
    MCEstimate,
    Perturbation,
    convexity_probe,
    default_seed,
    divergence_probe,
    estimate_J,
    path_payoffs,
    paths_to_csv,
    saddle_test,
    simulate_closed_loop,
    simulate_open_loop,
    stationarity_probe,
    stationarity_residual,
)
from lqgame.strategy import ClosedLoopStrategy, build_saddle


@pytest.fixture(scope="module")
def ex63():
    sp = assemble(builtin_problem("example-6.3"))
    P = integrate_riccati(sp, 200)
    adj = solve_eta(sp, P)
    return sp, P, adj, build_saddle(sp, P, adj)


def test_increments_are_per_path_streams():
    b = BrownianBatch.uniform(11, 50, 0.0, 2.0, 40)
    full = b.increments()
    assert full.shape == (50, 40)
    assert np.array_equal(full[17:20], b.increments(17, 20))
    assert not np.array_equal(full, BrownianBatch.uniform(12, 50, 0.0, 2.0, 40).increments())
    big = BrownianBatch.uniform(3, 20_000, 0.0, 2.0, 4).increments().sum(axis=1)
    assert abs(big.var() - 2.0) < 0.1 and abs(big.mean()) < 0.05
    with pytest.raises(InvalidInputError):
        b.increments(40, 60)
    with pytest.raises(InvalidInputError):
        BrownianBatch(1, 0, np.array([0.0, 1.0]))


def test_default_seed(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    assert default_seed() == 0
    monkeypatch.setenv(SEED_ENV, "1234")
    assert default_seed() == 1234
    monkeypatch.setenv(SEED_ENV, "abc")
    with pytest.raises(InvalidInputError):
        default_seed()


def test_mc_estimate():
    e = MCEstimate.from_samples([1.0, 2.0, 3.0])
    assert e.mean == 2.0 and math.isclose(e.stderr, 1 / math.sqrt(3))
    assert MCEstimate.from_samples([5.0]).stderr == 0.0
    with pytest.raises(InvalidInputError):
        MCEstimate.from_samples([])


def test_additive_noise_payoff_is_unbiased():
    sp = assemble(make_problem(0.0, 1.0, 1, 1, sigma=0.7, R11=1.0, G=1.0))
    batch = BrownianBatch.uniform(7, 20_000, 0.0, 1.0, 20)
    J = estimate_J(sp, simulate_open_loop(sp, [0.0], [1.0], batch))
    assert abs(J.mean - 0.5 * (1.0 + 0.49)) <= 3 * J.stderr


def test_multiplicative_noise_second_moment():
    a, c = 0.2, 0.5
    sp = assemble(make_problem(0.0, 1.0, 1, 1, A=a, C=c, R11=1.0, G=1.0))
    batch = BrownianBatch.uniform(9, 20_000, 0.0, 1.0, 400)
    J = estimate_J(sp, simulate_open_loop(sp, [0.0], [1.0], batch))
    exact = 0.5 * math.exp(2 * a + c * c)
    assert abs(J.mean - exact) <= 3 * J.stderr + 0.01


def test_saddle_cancels_noise_exactly(ex63):
    sp, P, adj, st = ex63
    batch = BrownianBatch.uniform(1, 500, 0.0, 1.0, 200)
    for x in (1.0, -2.5):
        paths = simulate_closed_loop(sp, st, [x], batch, store=True)
        assert np.all(paths.X_T == x)
        J = estimate_J(sp, paths)
        assert J.mean == 0.5 * x * x and J.stderr == 0.0
        assert np.array_equal(path_payoffs(sp, paths), paths.payoff)


def test_threads_and_chunks_do_not_change_results():
    sp = assemble(make_problem(0.0, 1.0, 1, 1, A=0.3, C=0.4, B1=1.0, D1=0.5, Q=1.0, R11=1.0, G=1.0, sigma=0.2))
    P = integrate_riccati(sp, 100)
    st = build_saddle(sp, P, solve_eta(sp, P))
    batch = BrownianBatch.uniform(4, 300, 0.0, 1.0, 100)
    ref = simulate_closed_loop(sp, st, [1.0], batch, chunk=64)
    again = simulate_closed_loop(sp, st, [1.0], batch, chunk=64, threads=3)
    assert np.array_equal(ref.payoff, again.payoff) and np.array_equal(ref.X_T, again.X_T)
    other = simulate_closed_loop(sp, st, [1.0], batch, chunk=7)
    assert np.allclose(other.payoff, ref.payoff, rtol=1e-13, atol=1e-15)


def test_stored_payoffs_match_recomputation():
    sp = assemble(make_problem(0.0, 1.0, 2, 1, A=[[0.1, 0.2], [0.0, -0.3]], B1=[[1.0], [0.5]],
                               C=0.1 * np.eye(2), D1=[[0.2], [0.0]], Q=np.eye(2), S1=[[0.1, 0.0]],
                               R11=2.0, q=[[0.3], [0.1]], rho1=[[0.2]], b=[[0.1], [0.0]],
                               sigma=[[0.1], [0.2]], G=np.eye(2), g=[0.5, -0.5]))
    P = integrate_riccati(sp, 50)
    st = build_saddle(sp, P, solve_eta(sp, P))
    paths = simulate_closed_loop(sp, st, [1.0, -1.0], BrownianBatch.uniform(2, 40, 0.0, 1.0, 50), store=True)
    assert np.allclose(path_payoffs(sp, paths), paths.payoff, rtol=1e-12, atol=1e-14)
    assert paths.X.shape == (40, 51, 2) and paths.u.shape == (40, 51, 1)


def test_overflow_is_reported():
    batch = BrownianBatch.uniform(0, 3, 0.0, 1.0, 10)
    for A in (1e40, 1e20):
        sp = assemble(make_problem(0.0, 1.0, 1, 1, A=A, R11=1.0, G=1.0))
        with pytest.raises(NumericOverflowError) as exc:
            simulate_open_loop(sp, [0.0], [1.0], batch)
        assert exc.value.path_index == 0


def test_input_checks(ex63):
    sp, P, adj, st = ex63
    with pytest.raises(InvalidInputError):
        simulate_closed_loop(sp, st, [1.0, 2.0], BrownianBatch.uniform(0, 2, 0.0, 1.0, 10))
    with pytest.raises(InvalidInputError):
        simulate_closed_loop(sp, st, [1.0], BrownianBatch.uniform(0, 2, 0.0, 2.0, 10))
    with pytest.raises(InvalidInputError):
        simulate_open_loop(sp, [np.nan, 0.0], [1.0], BrownianBatch.uniform(0, 2, 0.0, 1.0, 10))


def test_saddle_test_small(ex63):
    sp, P, adj, st = ex63
    batch = BrownianBatch.uniform(3, 3000, 0.0, 1.0, 200)
    perts = [Perturbation.constant(1, 0.5), Perturbation.constant(2, 0.5)]
    rep, base = saddle_test(sp, P, adj, st, perts, batch, [1.0])
    assert rep.passed and rep.baseline.mean == 0.5
    assert rep.results[0].predicted == pytest.approx(0.25)
    assert rep.results[1].predicted == 0.0
    assert rep.to_dict()["passed"] is True and len(base) == 3000


def test_saddle_test_refuses_non_regular():
    sp = assemble(builtin_problem("example-6.2"))
    P = supplied_solution(MatrixFunction.scalar(ScalarExpr.poly([-2.0, 1.0])), uniform_grid(0.0, 1.0, 200))
    adj = solve_eta(sp, P)
    st = ClosedLoopStrategy.zero(sp, P.grid)
    with pytest.raises(RegularityError):
        saddle_test(sp, P, adj, st, [], BrownianBatch.uniform(0, 10, 0.0, 1.0, 200))


def test_stationarity_at_and_away_from_saddle(ex63):
    sp, P, adj, st = ex63
    batch = BrownianBatch.uniform(0, 400, 0.0, 1.0, 200)
    assert stationarity_probe(sp, P, adj, st, [1.0], batch) == 0.0
    zero = stationarity_probe(sp, P, adj, ClosedLoopStrategy.zero(sp, P.grid), [1.0], batch)
    assert zero == pytest.approx(math.sqrt(2), rel=1e-12)
    paths = simulate_closed_loop(sp, st, [1.0], batch, store=True)
    assert stationarity_residual(sp, P, adj, st, paths) == 0.0


def test_convexity_probe_signs(ex63):
    sp = ex63[0]
    batch = BrownianBatch.uniform(0, 4000, 0.0, 1.0, 100)
    one = [("one", lambda s: np.ones_like(s))]
    p2 = convexity_probe(sp, 2, one, batch)[0]
    assert p2.violated and abs(p2.value.mean + 0.5) <= 3 * p2.value.stderr
    assert p2.value_raw.mean == pytest.approx(2 * p2.value.mean)
    p1 = convexity_probe(sp, 1, one, batch)[0]
    assert not p1.violated and p1.value.mean > 0
    with pytest.raises(InvalidInputError):
        convexity_probe(assemble(builtin_problem("example-6.2")), 2, one, batch)


def test_divergence_probe_fit(ex63):
    sp = ex63[0]
    batch = BrownianBatch.uniform(1, 4000, 0.0, 1.0, 100)
    fam = lambda lam: (lambda s: np.stack([np.zeros_like(s), np.full_like(s, -lam)], axis=1))
    fit = divergence_probe(sp, fam, [0, 1, 2, 4], [1.0], batch)
    assert abs(fit.a.mean - 0.5) <= 3 * fit.a.stderr
    assert fit.verdict == "+inf"
    assert fit.c.mean == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(InvalidInputError):
        divergence_probe(sp, fam, [0, 1, 1], [1.0], batch)


def test_paths_csv(ex63, tmp_path):
    sp, _, _, st = ex63
    paths = simulate_closed_loop(sp, st, [1.0], BrownianBatch.uniform(0, 5, 0.0, 1.0, 10))
    paths_to_csv(paths, tmp_path / "paths.csv")
    lines = (tmp_path / "paths.csv").read_text().splitlines()
    assert lines[0] == "path,X_T_1,J" and len(lines) == 6

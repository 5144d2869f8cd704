from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lqgame.errors import InvalidInputError, ParseError, ValidationError
from lqgame.problem import (
    BUILTINS,
    MatrixFunction,
    ScalarExpr,
    assemble,
    builtin_problem,
    load_problem,
    make_problem,
    problem_to_json,
    resolve_problem,
    split,
    validate,
)
from oracles import ex61_R, ex62_coefficients

TIMES = np.array([0.0, 0.25, 0.5, 0.75, 1.0])


def test_example_62_coefficient_table():
    sp = assemble(builtin_problem("example-6.2"))
    c = sp.coefficients(TIMES)
    ref = ex62_coefficients(TIMES)
    assert np.allclose(c.A[:, 0, 0], ref["A"], rtol=0, atol=1e-12)
    assert np.allclose(c.B[:, 0, 0], ref["B"], rtol=0, atol=1e-12)
    assert np.allclose(c.Q[:, 0, 0], ref["Q"], rtol=0, atol=1e-12)
    assert np.allclose(c.R[:, 0, 0], ref["R"], rtol=0, atol=1e-12)
    assert np.all(c.C == 0) and np.all(c.D == 1)
    assert abs(c.A[0, 0, 0] + 5 / 18) < 1e-12 and abs(c.B[2, 0, 0] - 3 / 7) < 1e-12


def test_example_61_and_63_coefficients():
    c = assemble(builtin_problem("example-6.1")).coefficients(TIMES)
    assert np.allclose(c.R[:, 0, 0], ex61_R(TIMES), atol=1e-12)
    assert c.R[0, 0, 0] == 0.0
    sp = assemble(builtin_problem("example-6.3"))
    c = sp.coefficients(TIMES)
    assert np.all(c.B[:, 0] == [1.0, -1.0]) and np.all(c.D[:, 0] == [1.0, -1.0])
    assert np.all(c.R[0] == np.diag([1.0, -1.0]))
    assert sp.m1 == 1 and sp.m2 == 1


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_builtins_validate_and_round_trip(name):
    p = builtin_problem(name)
    assert validate(p).ok
    assert split(assemble(p)) == p
    again = load_problem(json.dumps(problem_to_json(p)))
    assert np.allclose(
        assemble(again).coefficients(TIMES).R, assemble(p).coefficients(TIMES).R, rtol=0, atol=1e-15
    )


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 3), st.integers(0, 2**32 - 1))
def test_stacking_split_is_exact(n, m1, m2, seed):
    rng = np.random.default_rng(seed)
    coeffs = {}
    for key, shape in {
        "B1": (n, m1), "B2": (n, m2), "D1": (n, m1), "D2": (n, m2),
        "S1": (m1, n), "S2": (m2, n), "R12": (m1, m2), "rho1": (m1, 1), "rho2": (m2, 1),
    }.items():
        if shape[0] * shape[1]:
            coeffs[key] = rng.standard_normal(shape)
    R11 = rng.standard_normal((m1, m1))
    coeffs["R11"] = R11 + R11.T
    if m2:
        R22 = rng.standard_normal((m2, m2))
        coeffs["R22"] = R22 + R22.T
        coeffs["R21"] = coeffs["R12"].T
    p = make_problem(0.0, 1.0, n, m1, m2, G=np.eye(n), **coeffs)
    sp = assemble(p)
    assert split(sp) == p
    c = sp.coefficients(TIMES)
    s1, s2 = sp.player_slices()
    assert np.array_equal(c.B[0][:, s1], coeffs["B1"])
    if m2:
        assert np.array_equal(c.R[0][s1, s2], coeffs["R12"])
        assert np.array_equal(c.rho[0][s2], coeffs["rho2"][:, 0])
    else:
        assert c.R.shape[1:] == (m1, m1)


def test_scalar_expr_arithmetic_and_derivative():
    s = ScalarExpr.poly([0.0, 1.0])
    f = (1 - 2 * s) / (s * s + 1)
    x = np.linspace(-1, 2, 7)
    assert np.allclose(f(x), (1 - 2 * x) / (x * x + 1), atol=1e-15)
    df = f.derivative()
    ref = (-2 * (x * x + 1) - (1 - 2 * x) * 2 * x) / (x * x + 1) ** 2
    assert np.allclose(df(x), ref, atol=1e-14)
    with pytest.raises(InvalidInputError):
        f / ScalarExpr.const(0.0)


def test_denominator_roots():
    s = ScalarExpr.poly([0.0, 1.0])
    assert ScalarExpr.const(1.0).denominator_roots(0, 1) == []
    roots = (1 / (s - 0.3)).denominator_roots(0, 1)
    assert len(roots) == 1 and abs(roots[0] - 0.3) < 1e-12
    double = (1 / ((s - 0.5) * (s - 0.5))).denominator_roots(0, 1)
    assert len(double) == 1 and abs(double[0] - 0.5) < 1e-6


def test_matrix_function_kinds():
    g = MatrixFunction.sampled([0.0, 1.0], np.array([[[0.0]], [[2.0]]]))
    assert g.evaluate(0.25)[0, 0] == 0.5
    with pytest.raises(InvalidInputError):
        g.evaluate(1.5)
    c = MatrixFunction.const(np.array([[1.0, 2.0]]))
    assert c.transpose().shape == (2, 1) and c.is_constant
    z = MatrixFunction.zeros(0, 3)
    assert z.evaluate_many([0.0, 1.0]).shape == (2, 0, 3)


def test_validation_collects_violations():
    s = ScalarExpr.poly([0.0, 1.0])
    p = make_problem(0.0, 1.0, 1, 1, A=MatrixFunction.scalar(1 / (s - 0.5)), B1=1.0, D1=1.0, R11=1.0, G=1.0)
    rep = validate(p)
    assert not rep.ok and any(v.field.startswith("A") for v in rep.violations)
    bad = make_problem(0.0, 1.0, 2, 1, G=np.array([[1.0, 2.0], [0.0, 1.0]]), R11=1.0)
    assert any(v.field == "G" for v in validate(bad).violations)
    with pytest.raises(InvalidInputError):
        make_problem(0.0, 1.0, 1, 1, G=1.0, Z=1.0)


def _doc(**over):
    doc = {
        "horizon": {"t0": 0.0, "T": 1.0},
        "dims": {"n": 1, "m1": 1, "m2": 0},
        "A": {"const": [[0.0]]},
        "B1": {"const": [[1.0]]},
        "C": {"const": [[0.0]]},
        "D1": {"const": [[1.0]]},
        "R11": {"rational": [[{"num": [1.0, 1.0], "den": [1.0]}]]},
        "G": {"const": [[1.0]]},
    }
    doc.update(over)
    return doc


@pytest.mark.parametrize(
    "over, path",
    [
        ({"A": {"const": [[0.0, 1.0]]}}, "A.const[0]"),
        ({"R11": {"rational": [[{"num": [1.0], "den": [0.0]}]]}}, "R11.rational[0][0].den"),
        ({"R11": {"rational": [[{"num": ["x"]}]]}}, "R11.rational[0][0].num[0]"),
        ({"dims": {"n": 0, "m1": 1}}, "dims.n"),
        ({"B1": {"grid": {"times": [0.0, 0.0], "values": [[[1.0]], [[1.0]]]}}}, "B1.grid.times"),
        ({"bogus": 1}, "bogus"),
        ({"G": {"rational": []}}, "G"),
    ],
)
def test_parse_errors_carry_field_paths(over, path):
    with pytest.raises(ParseError) as exc:
        load_problem(_doc(**over))
    assert exc.value.path == path


def test_parse_missing_required_and_player2_fields():
    doc = _doc()
    del doc["D1"]
    with pytest.raises(ParseError) as exc:
        load_problem(doc)
    assert exc.value.path == "D1"
    with pytest.raises(ParseError) as exc:
        load_problem(_doc(dims={"n": 1, "m1": 1, "m2": 1}))
    assert exc.value.path == "B2"


def test_parse_rejects_invalid_problem():
    s_pole = {"rational": [[{"num": [1.0], "den": [-0.5, 1.0]}]]}
    with pytest.raises(ValidationError) as exc:
        load_problem(_doc(A=s_pole))
    assert exc.value.violations


def test_load_sources(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps(_doc()))
    p = resolve_problem(str(path))
    assert p.name == "p" and p.n == 1
    assert resolve_problem("example-6.3").m2 == 1
    with pytest.raises(InvalidInputError):
        resolve_problem(str(tmp_path / "missing.json"))
    with pytest.raises(ParseError):
        load_problem("{not json")
    with pytest.raises(ParseError):
        load_problem("")


def test_homogeneity_flag():
    assert builtin_problem("example-6.3").is_homogeneous
    p = make_problem(0.0, 1.0, 1, 1, G=1.0, R11=1.0, b=1.0)
    assert not p.is_homogeneous

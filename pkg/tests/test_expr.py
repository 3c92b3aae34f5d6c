import numpy as np
import pytest
from hypothesis import assume, given, settings
import hypothesis.strategies as st

from hyperplateau import expr as ex
from hyperplateau.expr import Binary, Const, EvaluationError, ParseError, RhsSpec, Unary, Var

consts = st.floats(-4, 4, allow_nan=False).map(lambda v: Const(round(v, 3)))
variables = st.sampled_from([Var("u"), Var("x1"), Var("x2")])
trees = st.recursive(
    st.one_of(consts, variables),
    lambda ch: st.one_of(
        st.builds(Unary, st.sampled_from(["-", "sqrt", "exp", "log"]), ch),
        st.builds(Binary, st.sampled_from(["+", "-", "*", "/", "^"]), ch, ch),
    ),
    max_leaves=8,
)


def test_example_psi():
    t = ex.parse("2*u^2")
    assert t == Binary("*", Const(2.0), Binary("^", Var("u"), Const(2.0)))
    assert ex.evaluate(t, {"u": 0.5}) == pytest.approx(0.5)
    assert ex.parse("1") == Const(1.0)


@pytest.mark.parametrize(
    ("text", "tree"),
    [
        ("2^3^2", Binary("^", Const(2.0), Binary("^", Const(3.0), Const(2.0)))),
        ("-u^2", Unary("-", Binary("^", Var("u"), Const(2.0)))),
        ("u^-1", Binary("^", Var("u"), Const(-1.0))),
        ("1 - u - x1", Binary("-", Binary("-", Const(1.0), Var("u")), Var("x1"))),
        ("u/x1*x2", Binary("*", Binary("/", Var("u"), Var("x1")), Var("x2"))),
        ("1 + 2*u", Binary("+", Const(1.0), Binary("*", Const(2.0), Var("u")))),
        ("sqrt(exp(u))", Unary("sqrt", Unary("exp", Var("u")))),
    ],
)
def test_precedence(text, tree):
    assert ex.parse(text) == tree


@pytest.mark.parametrize(
    ("text", "line", "column"),
    [("sqrt(u", 1, 7), ("2*", 1, 3), ("u + y", 1, 5), ("u $ 2", 1, 3), ("1 +\n  (u", 2, 5), ("sqrt(u, 2)", 1, 7), ("u(2)", 1, 2)],
)
def test_parse_errors_carry_position(text, line, column):
    with pytest.raises(ParseError) as err:
        ex.parse(text)
    assert (err.value.line, err.value.column) == (line, column)


def test_x3_needs_n3():
    with pytest.raises(ParseError):
        ex.parse("x3")
    assert ex.parse("x3", n=3) == Var("x3")


def test_derivative_examples():
    assert ex.to_string(ex.differentiate(ex.parse("2*u^2"), "u")) == "4 * u"
    assert ex.differentiate(ex.parse("3.5"), "u") == Const(0.0)
    assert ex.differentiate(ex.parse("x1*x2"), "u") == Const(0.0)


@pytest.mark.parametrize(
    ("text", "env", "tag"),
    [("sqrt(u)", {"u": -1.0}, "domain"), ("log(u)", {"u": 0.0}, "domain"), ("1/u", {"u": 0.0}, "division"), ("u^0.5", {"u": -2.0}, "domain")],
)
def test_evaluation_errors_are_tagged(text, env, tag):
    with pytest.raises(EvaluationError) as err:
        ex.evaluate(ex.parse(text), env)
    assert err.value.tag == tag


@given(trees)
@settings(max_examples=300)
def test_round_trip(tree):
    text = ex.to_string(tree)
    again = ex.parse(text)
    assert again == tree
    assert ex.to_string(again) == text


def fd(node, env, var, h=1e-3):
    # Richardson-extrapolated central difference, O(h^4)
    def d(s):
        hi = dict(env, **{var: env[var] + s})
        lo = dict(env, **{var: env[var] - s})
        return (ex.evaluate(node, hi) - ex.evaluate(node, lo)) / (2 * s)

    return (4 * d(h / 2) - d(h)) / 3


@given(trees, st.sampled_from(["u", "x1", "x2"]), st.floats(0.3, 2.0), st.floats(-1, 1), st.floats(-1, 1))
@settings(max_examples=300, deadline=None)
def test_symbolic_matches_fd(tree, var, u, x1, x2):
    env = {"u": u, "x1": x1, "x2": x2}
    # stay away from the edges of the evaluation domain
    try:
        vals = [ex.evaluate(tree, dict(env, **{var: env[var] + s})) for s in (-2e-3, -1e-3, 0, 1e-3, 2e-3)]
        sym = ex.evaluate(ex.differentiate(tree, var), env)
    except (EvaluationError, FloatingPointError, ZeroDivisionError):
        assume(False)
    assume(all(np.isfinite(v) and abs(v) < 1e4 for v in vals) and np.isfinite(sym) and abs(sym) < 1e4)
    # FD is only an oracle where the function is smooth at the probe scale
    fourth = vals[0] - 4 * vals[1] + 6 * vals[2] - 4 * vals[3] + vals[4]
    assume(abs(fourth) < 1e-9 * (1 + abs(vals[2])))
    ref = fd(tree, env, var)
    assert abs(sym - ref) <= 1e-7 * max(1.0, abs(ref))


def test_symbolic_vs_fd_on_fixed_sample():
    rng = np.random.default_rng(0)
    texts = ["2*u^2", "exp(-x1^2)*u + sqrt(1 + u^2)", "log(1 + u) / (2 + x2^2)", "u^x1 + x1*x2*u^3", "1/(u + 0.5)^2"]
    for text in texts:
        spec = RhsSpec(text)
        pts = rng.uniform(-0.9, 0.9, size=(100, 2))
        us = rng.uniform(0.2, 1.5, size=100)
        fd_u = richardson(lambda s: spec.value(pts, us + s))
        np.testing.assert_allclose(spec.d_u(pts, us), fd_u, rtol=1e-7, atol=1e-7)
        for i in range(2):
            e = np.eye(2)[i]
            fd_x = richardson(lambda s: spec.value(pts + s * e, us))
            np.testing.assert_allclose(spec.d_x(i, pts, us), fd_x, rtol=1e-7, atol=1e-7)


def richardson(g, h=1e-3):
    d = lambda s: (g(s) - g(-s)) / (2 * s)
    return (4 * d(h / 2) - d(h)) / 3


def test_rhs_positivity_check():
    spec = RhsSpec("u - 0.5")
    with pytest.raises(EvaluationError):
        spec.check_positive(np.zeros((3, 2)), np.array([0.1, 0.6, 0.9]))
    assert RhsSpec("2*u^2").check_positive(np.zeros((2, 2)), np.array([0.5, 1.0])) == pytest.approx(0.5)


def test_scaled_spec():
    spec = RhsSpec("2*u^2").scaled(2.0)
    assert spec.value(np.zeros(2), 0.5) == pytest.approx(1.0)
    assert spec.d_u(np.zeros(2), 0.5) == pytest.approx(4.0)

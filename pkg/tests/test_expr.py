import numpy as np
import pytest

from app.utils.expr import Expr, ExpressionError, coordinate_names, graph_names, parse, parse_graph


def test_names():
    assert coordinate_names(3) == ["x1", "x2", "xn", "t"]
    assert graph_names(2) == ["x1", "t"]


def test_grim_reaper_value():
    f = parse_graph("t - log(cos(x1))", 2)
    assert float(f(x1=0.0, t=0.5)) == pytest.approx(0.5)
    assert float(f(x1=0.5, t=0.0)) == pytest.approx(-np.log(np.cos(0.5)))


def test_grim_reaper_solves_graph_flow():
    # f_t = f_11 / (1 + f_1^2) holds identically
    f = parse_graph("t - log(cos(x1))", 2)
    x1 = np.linspace(-1.0, 1.0, 11)
    f1, f11, ft = f.diff("x1")(x1=x1, t=0.3), f.diff("x1", 2)(x1=x1, t=0.3), f.diff("t")(x1=x1, t=0.3)
    assert ft == pytest.approx(f11 / (1.0 + f1 ** 2), abs=1e-12)


def test_translating_plane_derivatives():
    f = parse_graph("0.3 * x1 + 0.5 * t", 2)
    assert float(f.diff("t")(x1=0.2, t=0.7)) == pytest.approx(0.5)
    assert float(f.diff("x1")(x1=0.2, t=0.7)) == pytest.approx(0.3)
    assert float(f.diff("x1", 2)(x1=0.2, t=0.7)) == 0.0
    with pytest.raises(ExpressionError, match="no variable"):
        f.diff("xn")


def test_caret_is_power():
    assert float(parse_graph("x1^2", 2)(x1=3.0, t=0.0)) == pytest.approx(9.0)
    assert float(parse_graph("pow(x1, 3) + 1e-3", 2)(x1=2.0, t=0.0)) == pytest.approx(8.001)


def test_constant_broadcasts():
    out = parse_graph("0", 2)(x1=np.linspace(-1, 1, 5), t=0.0)
    assert out.shape == (5,)
    assert not np.any(out)


def test_ambient_names():
    e = parse("xn * pi + sqrt(abs(x1))", 2)
    assert float(e(x1=-4.0, xn=1.0, t=0.0)) == pytest.approx(np.pi + 2.0)


@pytest.mark.parametrize("text", [
    "y + t",
    "__import__('os')",
    "x1.real",
    "pow(x1)",
    "max(x1, t)",
    "lambda: 1",
    "",
    "x1 +",
    "x1 < t",
])
def test_rejected(text):
    with pytest.raises(ExpressionError):
        parse_graph(text, 2)


def test_missing_variable():
    with pytest.raises(ExpressionError, match="without t"):
        Expr("x1 + t", ["x1", "t"])(x1=1.0)

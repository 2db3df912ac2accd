import numpy as np
import pytest
from hypothesis import given, strategies as st

from bsvi.convex import Box, Quadratic, Zero
from bsvi.model import (Problem, SamplingBudget, check_assumptions, f_sharp, f_sharp_is_estimate, make_driver,
                        make_forward, make_terminal)


def test_linear_driver_passes_assumptions():
    rep = check_assumptions(Box(1, -1.0, 1.0), make_driver("linear", a=-1.0), make_terminal("tanh_clip"),
                            SamplingBudget(samples=2000))
    assert rep.passed
    assert set(rep.details["entries"]) >= {"M_y", "L_z", "B_y", "A4_i"}
    assert not rep.flags["f_sharp_estimate"]


def test_understated_monotonicity_is_reported():
    drv = make_driver("linear", a=2.0)
    from dataclasses import replace
    lying = replace(drv, mu=lambda t: 0.0)
    rep = check_assumptions(Zero(1), lying, make_terminal("identity"), SamplingBudget(samples=500))
    assert not rep.passed
    assert not rep.details["entries"]["M_y"]["pass"]
    assert rep.details["entries"]["M_y"]["worst_margin"] < 0


def test_terminal_outside_domain_fails_a4i():
    rep = check_assumptions(Box(1, 0.0, np.inf), make_driver("zero"), make_terminal("identity"),
                            SamplingBudget(samples=500))
    assert not rep.details["entries"]["A4_i"]["pass"]


def test_a5_clauses():
    drv = make_driver("z_lipschitz", a=0.0, ell=0.5, b=0.2, a5={"M": 1.2, "L": 0.5})
    rep = check_assumptions(Box(1, -1.0, 1.0), drv, make_terminal("tanh_clip"), SamplingBudget(samples=500))
    assert rep.details["entries"]["A5_ii"]["pass"] and rep.details["entries"]["A5_iii"]["pass"]
    tight = make_driver("z_lipschitz", a=0.0, ell=0.5, b=0.2, a5={"M": 0.5, "L": 0.1})
    rep = check_assumptions(Box(1, -1.0, 1.0), tight, make_terminal("tanh_clip"), SamplingBudget(samples=500))
    assert not rep.passed


def test_clipped_push_a4ii_holds():
    drv = make_driver("singular_push", c=1.0, alpha=0.4, clip=1.0, T=2.0)
    rep = check_assumptions(Box(1, -1.0, 1.0), drv, make_terminal("sign_clip"),
                            SamplingBudget(samples=2000, T=2.0))
    assert rep.details["entries"]["A4_ii"]["pass"]


@given(st.floats(0, 10), st.floats(-3, 3))
def test_f_sharp_closed_form_linear(rho, a):
    assert f_sharp(make_driver("linear", a=a), rho, 0.0) == pytest.approx(abs(a) * rho)


def test_f_sharp_sampled_is_lower_estimate():
    drv = make_driver("sine_cubic")
    assert f_sharp_is_estimate(drv)
    est = f_sharp(drv, 2.0, 0.0)
    assert est == pytest.approx(abs(np.sin(2.0) - 8.0))
    with pytest.raises(ValueError):
        f_sharp(drv, -1.0, 0.0)


def test_catalog_rejects_unknown_params():
    with pytest.raises(TypeError):
        make_driver("linear", slope=1.0)
    with pytest.raises(ValueError):
        make_terminal("nope")
    with pytest.raises(ValueError):
        make_forward("nope")


def test_problem_normalized_moves_anchor_into_driver():
    phi = Quadratic(dim=1, scale=1.0, linear=[1.0], anchor=([0.0], [1.0]))
    pb = Problem(phi, make_driver("zero"), make_terminal("identity"), make_forward("identity"))
    nb = pb.normalized()
    y = np.zeros((3, 1))
    assert np.allclose(nb.driver.eval(0.0, y, y, np.zeros((3, 1, 1))), -1.0)
    assert pb.describe()["convex"]["kind"] == "quadratic"


def test_terminals_and_forwards():
    x = np.linspace(-2, 2, 5)[:, None]
    assert np.all(np.abs(make_terminal("tanh_clip")(x)) <= 1.0)
    assert np.array_equal(make_terminal("sign_clip")(x)[:, 0], [-1, -1, 0, 1, 1])
    assert make_terminal("constant", value=0.3, dim=2)(np.zeros((4, 1))).shape == (4, 2)
    assert make_forward("ou", dim=2).dim == 2

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bsvi.convex import (Ball, Box, Halfspace, Normalized, Polyhedron, Quadratic, ScaledNorm, YosidaView, Zero,
                         catalog_examples, check_convex_spec, check_yosida_inequalities, is_normalized,
                         make_convex, normalize, resolvent_of_yosida, yosida_grad, yosida_value)
from bsvi.model import make_driver
from bsvi.oracle import fixed_point_resolvent

finite = st.floats(-20, 20, allow_nan=False)
points2 = st.lists(finite, min_size=2, max_size=2)


@pytest.mark.parametrize("phi", catalog_examples(), ids=lambda p: p.kind)
def test_catalog_invariants(phi):
    assert check_convex_spec(phi, samples=2000, seed=1).passed
    assert check_yosida_inequalities(YosidaView(phi, 0.3), YosidaView(phi, 0.1), samples=2000, seed=1).passed


@given(points2, points2, st.floats(0.01, 5))
def test_ball_prox_nonexpansive(x, y, lam):
    ball = Ball(dim=2, radius=1.5)
    px, py = ball.prox(x, lam), ball.prox(y, lam)
    assert np.linalg.norm(px - py) <= np.linalg.norm(np.subtract(x, y)) + 1e-12
    assert np.linalg.norm(px) <= 1.5 + 1e-12


@given(points2, st.floats(0.01, 5))
def test_polyhedron_prox_lands_in_set(x, lam):
    tri = Polyhedron(A=[[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], b=[1.0, 1.0, 1.0])
    p = tri.prox(x, lam)
    assert np.all(np.asarray(tri.params["A"]) @ p <= np.asarray(tri.params["b"]) + 1e-7)


@given(finite, st.floats(0.05, 2), st.floats(0.01, 1))
def test_resolvent_solves_equation(x, eps, h):
    view = YosidaView(Box(1, -1.0, 1.0), eps)
    y = resolvent_of_yosida(view, h, [x])
    assert np.allclose(y + h * view.grad(y), x, atol=1e-10)


def test_resolvent_matches_fixed_point_across_catalog():
    rng = np.random.default_rng(0)
    for phi in catalog_examples():
        view = YosidaView(phi, 0.2)
        x = phi.u0 + rng.normal(size=(20, phi.dim)) * 3
        assert np.allclose(resolvent_of_yosida(view, 0.1, x), fixed_point_resolvent(view, 0.1, x), atol=1e-9)


def test_resolvent_is_identity_inside_domain():
    view = YosidaView(Box(1, -1.0, 1.0), 0.1)
    x = np.linspace(-1, 1, 11)[:, None]
    assert np.array_equal(resolvent_of_yosida(view, 0.3, x), x)


def test_quadratic_envelope_closed_form():
    q = Quadratic(1, 2.0)
    y = np.linspace(-3, 3, 13)[:, None]
    eps = 0.25
    # envelope of (a/2) y^2 is (a / (2 (1 + a eps))) y^2
    assert np.allclose(yosida_value(YosidaView(q, eps), y), 2.0 / (2 * 1.5) * y[:, 0] ** 2)
    assert np.allclose(yosida_grad(YosidaView(q, eps), y), 2.0 / 1.5 * y)


def test_indicator_values_and_subgradient():
    box = Box(1, 0.0, np.inf)
    assert box.value([[-1.0]])[0] == np.inf
    assert box.value([[2.0]])[0] == 0.0
    assert np.isnan(box.subgrad_at([[-1.0]])).all()
    assert np.array_equal(box.subgrad_at([[2.0]]), [[0.0]])


def test_halfspace_and_norm_prox():
    hs = Halfspace(dim=2, normal=[1.0, 0.0], offset=1.0)
    assert np.allclose(hs.prox([3.0, 2.0], 1.0), [1.0, 2.0])
    nrm = ScaledNorm(dim=2, weight=1.0)
    assert np.allclose(nrm.prox([0.5, 0.0], 1.0), [[0.0, 0.0]])
    assert np.allclose(nrm.prox([3.0, 0.0], 1.0), [[2.0, 0.0]])


def test_normalize_shifts_anchor_and_driver():
    base = Quadratic(dim=1, scale=1.0, linear=[1.0], anchor=([0.0], [1.0]))
    drv = make_driver("constant", value=0.5)
    phi_t, drv_t = normalize(base, drv)
    assert isinstance(phi_t, Normalized) and is_normalized(phi_t, 1e-14)
    assert np.allclose(drv_t.eval(0.0, np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1, 1))), -0.5)
    assert normalize(Zero(1))[0].kind == "zero"


def test_errors():
    with pytest.raises(ValueError):
        Box(1).prox([0.0], 0.0)
    with pytest.raises(ValueError):
        Box(1).prox([np.nan], 1.0)
    with pytest.raises(ValueError):
        YosidaView(Box(1), 0.0)
    with pytest.raises(ValueError):
        make_convex("nope")
    with pytest.raises(TypeError):
        make_convex("box", radius=1.0)

from dataclasses import replace

import numpy as np
import pytest

from bsvi.convex import Box, Quadratic, Zero
from bsvi.model import Problem, make_driver, make_forward, make_terminal
from bsvi.paths import TimeGrid, generate
from bsvi.regression import BasisSpec
from bsvi.solver import (NumericalAbort, SchemeConfig, constraint_monotonicity, run_manifest, solve_limit,
                         solve_penalized, subdiff_measure_check, write_solution_csv)

FWD = make_forward("identity")
HAT = SchemeConfig(basis=BasisSpec("hat", knots=16))


@pytest.fixture(scope="module")
def ens():
    return generate(TimeGrid(1.0, 16), FWD, 20_000, 1, seed=4)


def box_problem(a=-1.0):
    return Problem(Box(1, -1.0, 1.0), make_driver("linear", a=a), make_terminal("abs", scale=1.5), FWD)


def test_free_problem_has_no_reflection(ens):
    pb = Problem(Zero(1), make_driver("zero"), make_terminal("identity"), FWD)
    sol = solve_limit(pb, ens, SchemeConfig())
    assert np.all(sol.K == 0.0) and np.all(sol.U == 0.0)
    # Y tracks X and Z is close to one for the identity terminal
    assert np.sqrt(np.mean((sol.Y - ens.X) ** 2)) < 0.02
    assert abs(sol.Z.mean() - 1.0) < 0.02
    assert np.array_equal(solve_penalized(pb, ens, replace(SchemeConfig(), epsilon=0.1)).Y, sol.Y)


def test_limit_solution_stays_in_domain(ens):
    sol = solve_limit(box_problem(), ens, HAT)
    assert np.all(np.abs(sol.Y[:, :-1]) <= 1.0 + 1e-12)
    assert sol.tv().mean() > 0
    assert sol.summary()["Y0_stderr"] > 0


def test_penalized_penetration_shrinks_with_epsilon(ens):
    pb = box_problem().normalized()
    out = []
    for eps in (0.2, 0.05):
        sol = solve_penalized(pb, ens, replace(HAT, epsilon=eps))
        out.append(np.mean(np.max(np.maximum(np.abs(sol.Y) - 1.0, 0.0), axis=1)))
        assert np.allclose(sol.U, sol.phi_effective().grad(sol.Y[:, :-1].reshape(-1, 1)).reshape(sol.U.shape))
    assert out[1] < out[0]


def test_exact_gradient_mode_matches_quadratic_shrink(ens):
    pb = Problem(Quadratic(1, 1.0), make_driver("zero"), make_terminal("identity"), FWD)
    sol = solve_penalized(pb, ens, SchemeConfig(exact_gradient=True))
    assert sol.mode == "exact"
    exact = np.exp(-(1 - ens.grid.times))[None, :] * ens.X[:, :, 0]
    assert np.sqrt(np.mean((sol.Y[:, :, 0] - exact) ** 2)) < 0.03


def test_penalized_needs_normalized_phi_and_epsilon(ens):
    pb = Problem(Quadratic(dim=1, linear=[1.0], anchor=([-1.0], [0.0])), make_driver("zero"),
                 make_terminal("identity"), FWD)
    with pytest.raises(ValueError):
        solve_penalized(pb, ens, SchemeConfig(epsilon=0.1))
    with pytest.raises(ValueError):
        solve_penalized(box_problem().normalized(), ens, SchemeConfig())


def test_subdiff_inequality_holds_for_limit(ens):
    sol = solve_limit(box_problem(), ens, HAT)
    phi = sol.problem.phi
    rep = subdiff_measure_check(sol, phi, [lambda t: [0.0], lambda t: [0.9], sol.Y, np.full((17, 1), -1.0)])
    assert rep.passed
    with pytest.raises(ValueError):
        subdiff_measure_check(sol, phi, [lambda t: [2.0]])


def test_subdiff_detects_wrong_sign(ens):
    sol = solve_limit(box_problem(), ens, HAT)
    flipped = replace(sol, dK=-sol.dK)
    assert not subdiff_measure_check(flipped, sol.problem.phi, [lambda t: [0.0]]).passed


def test_constraint_monotonicity(ens):
    a = solve_limit(box_problem(), ens, HAT)
    b = solve_limit(replace(box_problem(), terminal=make_terminal("sin")), ens, HAT)
    assert constraint_monotonicity(a, b).min() >= -1e-12


def test_picard_and_plain_estimator(ens):
    from bsvi.oracle import TreeSpec, tree_solve
    pb = box_problem()
    for iters in (0, 3):
        sol = solve_limit(pb, ens, replace(HAT, picard_iters=iters))
        ref = tree_solve(pb, TreeSpec(16), picard_iters=iters).root
        assert abs(sol.Y[:, 0].mean() - ref) < 3 * sol.summary()["Y0_stderr"] + 0.01
    base = solve_limit(pb, ens, HAT)
    plain = solve_limit(pb, ens, replace(HAT, z_estimator="plain"))
    assert abs(plain.Y[:, 0].mean() - base.Y[:, 0].mean()) < 0.01
    with pytest.raises(ValueError):
        SchemeConfig(picard_iters=11)
    with pytest.raises(ValueError):
        SchemeConfig(z_estimator="other")


def test_nan_driver_aborts_with_step(ens):
    bad = replace(make_driver("zero"), func=lambda t, x, y, z: np.full_like(y, np.nan))
    with pytest.raises(NumericalAbort) as exc:
        solve_limit(Problem(Zero(1), bad, make_terminal("identity"), FWD), ens, SchemeConfig())
    assert exc.value.step == ens.N - 1


def test_csv_and_manifest(tmp_path):
    small = generate(TimeGrid(1.0, 2), FWD, 3, 1, seed=0)
    sol = solve_limit(box_problem(), small, SchemeConfig(basis=BasisSpec(degree=1)))
    lines = write_solution_csv(sol, tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "path,step,Y0,Z0_0,U0,K0" and len(lines) == 1 + 3 * 3
    assert lines[3].split(",")[3] == ""
    doc = run_manifest({"x": 1}, sol)
    assert doc["manifest_version"] == 1 and doc["solution"]["mode"] == "limit"

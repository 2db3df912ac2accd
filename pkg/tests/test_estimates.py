import numpy as np
import pytest

from bsvi.continuation import run_epsilon_schedule
from bsvi.convex import Box, Zero
from bsvi.estimates import (AppendixBundle, MissingInput, bundle_prop1, bundle_tv, bundle_uniqueness,
                            check_appendix_estimate, check_prop1, check_tv_bound, check_uniqueness_stability,
                            penetration_rate_study, perturb_terminal, uniqueness_sweep, weight_process)
from bsvi.model import Problem, make_driver, make_forward, make_terminal
from bsvi.paths import TimeGrid, generate
from bsvi.regression import BasisSpec
from bsvi.solver import SchemeConfig, solve_limit

FWD = make_forward("identity")
HAT = SchemeConfig(basis=BasisSpec("hat", knots=16))


@pytest.fixture(scope="module")
def ens():
    return generate(TimeGrid(1.0, 16), FWD, 20_000, 1, seed=8)


def box(a=3.0):
    return Problem(Box(1, -1.0, 1.0), make_driver("linear", a=a), make_terminal("tanh_clip"), FWD)


def test_weight_process():
    w = weight_process(make_driver("z_lipschitz", a=1.0, ell=2.0), TimeGrid(1.0, 4), a=2.0, p=2.0)
    # rate = mu + a ell^2 / (2 n_p) = 1 + 4
    assert np.allclose(w.V, 5.0 * np.arange(5) / 4)
    assert w.n_p == 1.0


def test_prop1_finite_and_refined(ens):
    fine = generate(TimeGrid(1.0, 32), FWD, 20_000, 1, seed=8)
    coarse = fine.coarsen(2)
    rep = check_prop1(solve_limit(box(), coarse, HAT), refined=solve_limit(box(), fine, HAT))
    assert rep.passed and np.isfinite(rep.ratio)
    assert len(rep.details["conditional"]) == 3


def test_prop1_trivial_on_zero_problem(ens):
    pb = Problem(Zero(1), make_driver("zero"), make_terminal("constant", value=0.0), FWD)
    rep = check_prop1(solve_limit(pb, ens, SchemeConfig()))
    assert rep.passed and rep.flags["trivial"]


def test_uniqueness_exact_zero_and_sweep(ens):
    a = solve_limit(box(), ens, HAT)
    rep = check_uniqueness_stability(a, solve_limit(box(), ens, HAT))
    assert rep.passed and rep.flags["exact_zero"]
    sweep = uniqueness_sweep(box(), ens, HAT, deltas=[0.02, 0.04], how="shrink")
    assert sweep.passed and len(sweep.details["rows"]) == 3


def test_perturbations_stay_in_domain():
    pb = box()
    x = np.linspace(-3, 3, 7)[:, None]
    shrunk = perturb_terminal(pb, 0.1)
    assert np.all(np.abs(shrunk.terminal(x)) <= 0.9 + 1e-12)
    shifted = perturb_terminal(pb, 0.1, "shift")
    assert np.allclose(shifted.terminal(x) - pb.terminal(x), 0.1)
    with pytest.raises(ValueError):
        perturb_terminal(pb, 0.1, "twist")


def test_tv_bound(ens):
    rep = check_tv_bound(solve_limit(box(), ens, HAT))
    assert rep.passed and 0 < rep.ratio < 1
    pb = Problem(Box(1, 0.0, np.inf, interior_radius=None), make_driver("zero"), make_terminal("abs"), FWD)
    sol = solve_limit(pb, ens, HAT)
    if sol.problem.phi.interior_radius is None:
        with pytest.raises(MissingInput):
            check_tv_bound(sol)


def test_penetration_vacuous_for_free_problem(ens):
    pb = Problem(Zero(1), make_driver("zero"), make_terminal("identity"), FWD)
    sched = run_epsilon_schedule(pb, ens, SchemeConfig(), eps0=0.1, levels=3, include_limit=False)
    rep = penetration_rate_study(sched)
    assert rep.flags["vacuous"]


def test_appendix_bundles_hold(ens):
    a = solve_limit(box(), ens, HAT)
    b = solve_limit(perturb_terminal(box(), 0.05), ens, HAT)
    for bundle in (bundle_prop1(a), bundle_uniqueness(a, b), bundle_tv(a)):
        rep = check_appendix_estimate(bundle)
        assert rep.passed, bundle.name


def test_appendix_premise_violation_located():
    M, N = 4, 3
    Y = np.ones((M, N + 1, 1))
    bundle = AppendixBundle(Y, np.zeros((M, N, 1, 1)), np.ones((M, N, 1)), np.zeros((M, N)),
                            np.zeros((M, N)), np.zeros((M, N)), np.zeros(N + 1), 0.1, "bad")
    rep = check_appendix_estimate(bundle)
    assert not rep.passed and rep.flags["premise_failed"]
    assert rep.details["premise_location"] == {"path": 0, "step": 0}


def test_shared_ensemble_required(ens):
    other = generate(TimeGrid(1.0, 16), FWD, 20_000, 1, seed=9)
    with pytest.raises(ValueError):
        check_uniqueness_stability(solve_limit(box(), ens, HAT), solve_limit(box(), other, HAT))

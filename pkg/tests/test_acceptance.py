"""Acceptance criteria at their stated tolerances; one status line each."""

import json
import time

import numpy as np
import pytest

from bsvi import cli
from bsvi.continuation import (extract_solution, run_epsilon_schedule,
                               run_truncation_schedule)
from bsvi.convex import (Box, YosidaView, catalog_examples, check_convex_spec, check_yosida_inequalities,
                         resolvent_of_yosida)
from bsvi.estimates import check_tv_bound, penetration_rate_study, uniqueness_sweep
from bsvi.model import Problem, make_driver, make_forward, make_terminal
from bsvi.oracle import TreeSpec, fixed_point_resolvent, tree_solve
from bsvi.paths import TimeGrid, generate
from bsvi.regression import BasisSpec
from bsvi.solver import SchemeConfig, solve_limit, solve_penalized
from bsvi.convex import Quadratic

HAT = BasisSpec("hat", knots=24)
FWD = make_forward("identity")


def box_linear_problem():
    return Problem(Box(1, -1.0, 1.0), make_driver("linear", a=3.0), make_terminal("tanh_clip"), FWD, 1.0,
                   name="box_linear_tanh")


def test_criterion_1_convex_toolkit(record):
    start = time.perf_counter()
    worst = np.inf
    ok = True
    for phi in catalog_examples():
        a = check_convex_spec(phi, samples=10_000, seed=0)
        b = check_yosida_inequalities(YosidaView(phi, 0.1), YosidaView(phi, 0.05), samples=10_000, seed=0)
        margins = [v for _, v, _ in a.terms + b.terms]
        worst = min(worst, min(margins))
        ok = ok and a.passed and b.passed
    elapsed = time.perf_counter() - start
    ok = ok and worst >= -1e-8 and elapsed < 10
    record(1, ok, f"worst margin {worst:.3g} (>= -1e-8), {elapsed:.1f}s (< 10s)")
    assert ok


def test_criterion_2_resolvent_identity(record):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    catalog = catalog_examples()
    worst = 0.0
    count = 0
    per_fn = -(-1000 // len(catalog))
    for phi in catalog:
        for _ in range(-(-per_fn // 10)):
            eps = float(rng.uniform(0.05, 2.0))
            h = float(rng.uniform(0.01, 1.0))
            if h / (h + eps) > 0.95:
                h = 0.95 * eps / 0.05
            view = YosidaView(phi, eps)
            x = phi.u0 + rng.uniform(-4, 4, size=(10, phi.dim))
            closed = resolvent_of_yosida(view, h, x)
            iterated = fixed_point_resolvent(view, h, x, tol=1e-12)
            worst = max(worst, float(np.max(np.abs(closed - iterated))))
            count += x.shape[0]
    elapsed = time.perf_counter() - start
    ok = count >= 1000 and worst <= 1e-8 and elapsed < 5
    record(2, ok, f"{count} triples, max diff {worst:.2g} (<= 1e-8), {elapsed:.1f}s (< 5s)")
    assert ok


def test_criterion_3_closed_form(record):
    start = time.perf_counter()
    problem = Problem(Quadratic(1, 1.0), make_driver("zero"), make_terminal("identity"), FWD, 1.0)
    ens = generate(TimeGrid(1.0, 64), FWD, 100_000, 1, seed=7)
    sol = solve_penalized(problem, ens, SchemeConfig(exact_gradient=True))
    t = ens.grid.times
    exact = np.exp(-(1.0 - t))[None, :] * ens.X[:, :, 0]
    rms = np.sqrt(np.mean((sol.Y[:, :, 0] - exact) ** 2, axis=0))
    elapsed = time.perf_counter() - start
    ok = float(rms.max()) <= 0.02 and elapsed < 120
    record(3, ok, f"max RMS {rms.max():.4f} (<= 0.02), {elapsed:.1f}s (< 120s)")
    assert ok


ORACLE_CASES = {
    "halfline_abs": (Box(1, 0.0, np.inf), make_terminal("abs")),
    "halfline_sin": (Box(1, 0.0, np.inf), make_terminal("sin")),
    "box_sin": (Box(1, -1.0, 1.0), make_terminal("sin")),
    "box_abs": (Box(1, -1.0, 1.0), make_terminal("abs", scale=1.5)),
}


def test_criterion_4_oracle_equivalence(record):
    ens = generate(TimeGrid(1.0, 64), FWD, 100_000, 1, seed=3)
    cfg = SchemeConfig(basis=HAT)
    ok = True
    parts = []
    for name, (phi, term) in ORACLE_CASES.items():
        problem = Problem(phi, make_driver("linear", a=-1.0), term, FWD, 1.0, name=name)
        s = solve_limit(problem, ens, cfg).summary()
        root = tree_solve(problem, TreeSpec(2000)).root
        root2 = tree_solve(problem, TreeSpec(4000)).root
        gap, thr, selfgap = abs(s["Y0_mean"] - root), 3 * s["Y0_stderr"] + 0.01, abs(root - root2)
        ok = ok and gap <= thr and selfgap <= 1e-3
        parts.append(f"{name} gap {gap:.4f}/{thr:.4f} self {selfgap:.1e}")
    record(4, ok, "; ".join(parts))
    assert ok


def test_criterion_5_penetration_rate(record):
    T = 2.0
    problem = Problem(Box(1, -1.0, 1.0), make_driver("singular_push", c=1.0, alpha=0.4, clip=1.0, T=T),
                      make_terminal("sign_clip"), FWD, T, name="box_singular_push").normalized()
    ens = generate(TimeGrid(T, 1024), FWD, 10_000, 1, seed=5)
    sched = run_epsilon_schedule(problem, ens, SchemeConfig(basis=HAT),
                                 eps_values=[0.1, 0.05, 0.025, 0.0125], include_limit=False)
    rep = penetration_rate_study(sched)
    slope, spread = rep.term("slope"), rep.term("energy_spread")
    ok = bool(rep.passed) and 0.8 <= slope <= 1.3 and spread <= 2.0
    record(5, ok, f"slope {slope:.3f} in [0.8, 1.3], energy max/min {spread:.3f} (<= 2)")
    assert ok


@pytest.fixture(scope="module")
def box_schedule():
    problem = box_linear_problem().normalized()
    ens = generate(TimeGrid(1.0, 64), FWD, 100_000, 1, seed=11)
    return run_epsilon_schedule(problem, ens, SchemeConfig(basis=HAT), eps0=0.1, levels=4)


def test_criterion_6_cauchy_in_epsilon(record, box_schedule):
    rep = box_schedule
    gaps = rep.consecutive_gaps()
    monotone = all(b < a for a, b in zip(gaps, gaps[1:]))
    lg = rep.details["limit_gap"]
    diff, thr = abs(lg["Y0_diff"]), 3 * lg["Y0_stderr"] + 0.01
    ok = monotone and diff <= thr
    record(6, ok, "gaps " + ", ".join(f"{g:.2e}" for g in gaps) + f" decreasing={monotone}; "
           f"|Y0 final - limit| {diff:.2e} (<= {thr:.4f})")
    assert ok


def test_criterion_7_stability_contraction(record):
    ens = generate(TimeGrid(1.0, 64), FWD, 100_000, 1, seed=11)
    rep = uniqueness_sweep(box_linear_problem(), ens, SchemeConfig(basis=HAT),
                           deltas=[0.01, 0.02, 0.04, 0.08], mode="limit", how="shrink")
    rows = rep.details["rows"]
    ratios = [r["ratio"] for r in rows[1:]]
    flat = max(ratios) / min(ratios)
    zero_lhs = rows[0]["lhs"]
    ok = bool(rep.passed) and flat <= 1.25 and zero_lhs <= 1e-14
    record(7, ok, "ratios " + ", ".join(f"{r:.3f}" for r in ratios) + f" spread {flat:.3f} (<= 1.25); "
           f"delta=0 LHS {zero_lhs:.1e}")
    assert ok


def test_criterion_8_tv_bound(record, box_schedule):
    problem = box_linear_problem()
    fine = generate(TimeGrid(1.0, 128), FWD, 100_000, 1, seed=11)
    coarse = fine.coarsen(2)
    cfg = SchemeConfig(basis=HAT)
    rep = check_tv_bound(solve_limit(problem, coarse, cfg), refined=solve_limit(problem, fine, cfg))
    r64, r128 = rep.ratio, rep.term("ratio_refined")
    stable = bool(np.isfinite(r64) and np.isfinite(r128) and max(r64, r128) / min(r64, r128) <= 1.25)
    tv = extract_solution(box_schedule).diagnostics["convergence"]["tv_check"]
    ok = stable and rep.passed and tv["pass"]
    record(8, ok, f"ratio N=64 {r64:.4f}, N=128 {r128:.4f}; E TV limit {tv['final']:.4f} "
           f"<= running min {tv['running_min']:.4f} + 2*{tv['stderr']:.4f}")
    assert ok


def test_criterion_9_truncation_inertness(record):
    drv = make_driver("z_lipschitz", a=0.0, ell=0.5, b=0.2, a5={"M": 1.2, "L": 0.5})
    problem = Problem(Box(1, -1.0, 1.0), drv, make_terminal("tanh_clip"), FWD, 1.0, name="bounded_box")
    ens = generate(TimeGrid(1.0, 32), FWD, 20_000, 1, seed=9)
    cfg = SchemeConfig(basis=HAT)
    n = 3 * 1.2 + abs(float(problem.phi.value(problem.phi.u0))) + 1.0
    rep = run_truncation_schedule(problem, ens, cfg, [n, np.inf])
    truncated, full = rep.levels[0].solution, rep.levels[1].solution
    same = all(np.array_equal(getattr(truncated, k), getattr(full, k)) for k in ("Y", "Z", "U", "K"))
    ok = same and bool(rep.flags.get("inert"))
    record(9, ok, f"n={n:g}: Y, Z, U, K bit-identical={same}")
    assert ok


def test_criterion_10_reproducibility(record, tmp_path):
    doc = {"problem": {"name": "repro", "convex": {"kind": "box", "params": {"lower": [-1.0], "upper": [1.0]}},
                       "driver": {"kind": "linear", "params": {"a": -1.0}},
                       "terminal": {"kind": "sin"}},
           "grid": {"N": 32}, "mc": {"M": 20_000, "seed": 42},
           "scheme": {"mode": "limit", "basis": {"kind": "hat", "knots": 16}}}
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(doc))
    first, second, third = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    codes = [cli.main(["solve", "--config", str(cfg), "--out", str(first), "--threads", "1", "--dump-paths"]),
             cli.main(["solve", "--config", str(first / "manifest.json"), "--out", str(second),
                       "--threads", "4", "--dump-paths"]),
             cli.main(["study", "epsilon", "--config", str(first / "manifest.json"), "--out", str(third),
                       "--threads", "3"])]
    fourth = tmp_path / "d"
    codes.append(cli.main(["study", "epsilon", "--config", str(cfg), "--out", str(fourth), "--threads", "1"]))
    same = all((first / f).read_bytes() == (second / f).read_bytes() for f in ("solution.csv", "paths.csv"))
    same = same and (third / "study_epsilon.csv").read_bytes() == (fourth / "study_epsilon.csv").read_bytes()
    ok = codes == [0, 0, 0, 0] and same
    record(10, ok, f"exit codes {codes}; CSVs bit-identical across manifest rerun and threads={same}")
    assert ok

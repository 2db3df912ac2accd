"""Command line entry point.

Exit codes: 0 success (or check passed), 1 configuration error,
2 numerical failure, 3 a property check failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import traceback
from pathlib import Path
from typing import Any

import numpy as np

from . import config as cfgmod
from .continuation import (MissingAssumption, ScheduleDiverged, extract_solution, run_epsilon_schedule,
                           run_refinement_schedule, run_truncation_schedule)
from .convex import (YosidaView, catalog_examples, check_convex_spec, check_yosida_inequalities)
from .estimates import (MissingInput, bundle_prop1, bundle_tv, bundle_uniqueness, check_appendix_estimate,
                        check_prop1, check_tv_bound, penetration_rate_study, perturb_terminal,
                        uniqueness_sweep)
from .model import SamplingBudget, check_assumptions
from .oracle import NonConvergence, TreeSpec, UnsupportedProblem, tree_solve
from .paths import CapacityError, PathEnsemble, dump_paths_csv, generate
from .report import EstimateReport, _jsonable
from .solver import (NumericalAbort, run_manifest, solve_limit, solve_penalized, subdiff_measure_check,
                     write_manifest, write_solution_csv)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_FAIL = 0, 1, 2, 3
CHECKS = ("yosida", "assumptions", "prop1", "uniq", "tv", "penetration", "appendix", "subdiff")
STUDIES = ("epsilon", "truncation", "refinement")


class Run:
    """Resolved configuration plus the objects built from it."""

    def __init__(self, args):
        self.args = args
        self.cfg = cfgmod.load(args.config)
        self.threads = max(1, int(args.threads or 1))
        self.out = Path(args.out or "out")
        self.problem = cfgmod.build_problem(self.cfg)
        self.scheme = cfgmod.build_scheme(self.cfg, self.threads)
        self.mode = self.cfg["scheme"]["mode"]
        if self.mode != "limit":
            self.problem = self.problem.normalized()

    def ensemble(self, refine: int = 1) -> PathEnsemble:
        mc = self.cfg["mc"]
        grid = cfgmod.build_grid(self.cfg)
        if refine > 1:
            grid = type(grid)(grid.T, grid.N * refine)
        ens = generate(grid, self.problem.forward, mc["M"], mc["k"], mc["seed"], mc["antithetic"],
                       threads=self.threads)
        return ens

    def solve(self, ens, problem=None):
        problem = problem or self.problem
        if self.mode == "limit":
            return solve_limit(problem, ens, self.scheme)
        return solve_penalized(problem, ens, self.scheme)

    def write(self, name: str, text: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        return path

    def write_json(self, name: str, doc: Any) -> Path:
        return self.write(name, json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")

    def write_rows(self, name: str, header: list[str], rows: list[list[Any]]) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        return path

    def manifest(self, command: str, extra: dict | None = None, sol=None) -> Path:
        doc = run_manifest(self.cfg, sol, {"command": command, **(extra or {})})
        self.out.mkdir(parents=True, exist_ok=True)
        return write_manifest(doc, self.out / "manifest.json")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return v


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_solve(run: Run) -> int:
    ens = run.ensemble()
    if run.args.dump_paths:
        run.out.mkdir(parents=True, exist_ok=True)
        dump_paths_csv(ens, run.out / "paths.csv")
    sol = run.solve(ens)
    run.out.mkdir(parents=True, exist_ok=True)
    write_solution_csv(sol, run.out / "solution.csv")
    run.manifest("solve", sol=sol)
    s = sol.summary()
    print(f"solved {sol.mode}: Y0={s['Y0_mean']:.6g} (stderr {s['Y0_stderr']:.2g}), E TV(K)={s['E_TV']:.6g}")
    return EXIT_OK


def _emit(run: Run, rep: EstimateReport, name: str, extra: dict | None = None) -> int:
    run.write(f"check_{name}.json", rep.to_json() + "\n")
    run.manifest(f"check {name}", {"report": rep.to_dict(), **(extra or {})})
    print(rep.summary())
    if name == "penetration" and rep.flags.get("vacuous"):
        print("penetration: constraint never active (vacuous)")
        return EXIT_OK
    return EXIT_OK if rep.passed else EXIT_FAIL


def _refined_pair(run: Run):
    if run.cfg["checks"]["refine"]:
        fine = run.ensemble(refine=2)
        coarse = fine.coarsen(2)
        return run.solve(coarse), run.solve(fine)
    return run.solve(run.ensemble()), None


def check_yosida(run: Run) -> EstimateReport:
    n = run.cfg["checks"]["samples"]
    seed = run.cfg["mc"]["seed"]
    e1, e2 = run.cfg["checks"]["yosida_eps"]
    targets = catalog_examples() if run.cfg["checks"]["catalog"] else [run.problem.phi]
    rep = EstimateReport(name="yosida", config={"samples": n, "seed": seed, "eps": [e1, e2],
                                                "catalog": run.cfg["checks"]["catalog"]})
    rows = []
    for phi in targets:
        a = check_convex_spec(phi, samples=n, seed=seed)
        b = check_yosida_inequalities(YosidaView(phi, e1), YosidaView(phi, e2), samples=n, seed=seed)
        ok = bool(a.passed and b.passed)
        rows.append({"convex": phi.describe(), "convex_pass": bool(a.passed), "yosida_pass": bool(b.passed),
                     "convex_terms": a.terms, "yosida_terms": b.terms})
        rep.passed = rep.passed and ok
    rep.details["functions"] = rows
    return rep


def check_subdiff(run: Run) -> EstimateReport:
    sol = run.solve(run.ensemble())
    phi = run.problem.phi
    rng = np.random.default_rng(run.cfg["mc"]["seed"])
    pts = phi.prox(phi.u0 + rng.uniform(-3, 3, size=(4, phi.dim)), 1.0)
    tests = [sol.Y, lambda t: phi.u0] + [(lambda t, q=q: q) for q in np.atleast_2d(pts)]
    return subdiff_measure_check(sol, phi, tests)


def check_appendix(run: Run) -> EstimateReport:
    ens = run.ensemble()
    sol = run.solve(ens)
    d = run.cfg["study"]["deltas"][0] if run.cfg["study"]["deltas"] else 0.01
    other = run.solve(ens, perturb_terminal(run.problem, d, run.cfg["study"]["perturbation"]))
    bundles = [bundle_prop1(sol), bundle_uniqueness(sol, other)]
    if run.problem.phi.interior_radius is not None:
        bundles.append(bundle_tv(sol))
    rep = EstimateReport(name="appendix", config={"bundles": [b.name for b in bundles]})
    for b in bundles:
        r = check_appendix_estimate(b, run.scheme.a, run.scheme.p)
        rep.add(f"ratio[{b.name}]", r.ratio)
        rep.details[b.name] = r.to_dict()
        rep.passed = rep.passed and r.passed
    return rep


def cmd_check(run: Run, name: str) -> int:
    extra = None
    if name == "yosida":
        rep = check_yosida(run)
    elif name == "assumptions":
        budget = SamplingBudget(samples=run.cfg["checks"]["samples"], seed=run.cfg["mc"]["seed"],
                                k=run.cfg["mc"]["k"], T=run.problem.T, x0=run.problem.forward.x0)
        rep = check_assumptions(run.problem.phi, run.problem.driver, run.problem.terminal, budget)
    elif name == "prop1":
        coarse, fine = _refined_pair(run)
        rep = check_prop1(coarse, refined=fine)
    elif name == "tv":
        coarse, fine = _refined_pair(run)
        rep = check_tv_bound(coarse, refined=fine)
    elif name == "uniq":
        st = run.cfg["study"]
        rep = uniqueness_sweep(run.problem, run.ensemble(), run.scheme, st["deltas"],
                               "limit" if run.mode == "limit" else "penalized", st["perturbation"])
        rows = [[r["delta"], r["lhs"], r["rhs"], r["ratio"]] for r in rep.details["rows"]]
        run.write_rows("uniq_ratios.csv", ["delta", "lhs", "rhs", "ratio"], rows)
    elif name == "penetration":
        sch = run.cfg["scheme"]["schedule"]
        problem = run.problem.normalized()
        report = run_epsilon_schedule(problem, run.ensemble(), run.scheme, sch["eps0"], sch["levels"],
                                      sch["eps_values"], include_limit=False)
        rep = penetration_rate_study(report)
    elif name == "appendix":
        rep = check_appendix(run)
    elif name == "subdiff":
        rep = check_subdiff(run)
    else:
        raise cfgmod.ConfigError(f"unknown check {name!r}; choose from {', '.join(CHECKS)}")
    return _emit(run, rep, name, extra)


STUDY_HEADER = ["level", "param", "gap", "gap_stderr", "slope", "E_TV", "Y0_mean", "Y0_stderr"]


def cmd_study(run: Run, name: str) -> int:
    st = run.cfg["study"]
    ens = run.ensemble()
    mode = "limit" if run.mode == "limit" else "penalized"
    if name == "epsilon":
        sch = run.cfg["scheme"]["schedule"]
        report = run_epsilon_schedule(run.problem.normalized(), ens, run.scheme, sch["eps0"], sch["levels"],
                                      sch["eps_values"])
    elif name == "truncation":
        report = run_truncation_schedule(run.problem, ens, run.scheme, cfgmod.truncation_levels(run.cfg),
                                         mode, st["c_ap"])
    elif name == "refinement":
        factors = st["refinement_factors"]
        fine = run.ensemble(refine=1)
        report = run_refinement_schedule(run.problem, fine, run.scheme, factors, mode)
    else:
        raise cfgmod.ConfigError(f"unknown study {name!r}; choose from {', '.join(STUDIES)}")
    final = extract_solution(report)
    rows = [[r[h] for h in STUDY_HEADER] for r in report.rows()]
    run.write_rows(f"study_{name}.csv", STUDY_HEADER, rows)
    summary = {**report.summary(), "convergence": final.diagnostics.get("convergence")}
    run.write_json(f"study_{name}_summary.json", summary)
    run.manifest(f"study {name}", {"summary": summary})
    print(f"study {name}: {len(report.levels)} levels, slope={report.slope:.4g}, flags={report.flags}")
    return EXIT_OK


def cmd_oracle_compare(run: Run) -> int:
    o = run.cfg["oracle"]
    tree = TreeSpec(o["N_tree"], run.problem.T)
    tree2 = TreeSpec(2 * o["N_tree"], run.problem.T)
    mode = o["mode"]
    eps = run.scheme.epsilon
    root = tree_solve(run.problem, tree, mode, eps, run.scheme.picard_iters).root
    root2 = tree_solve(run.problem, tree2, mode, eps, run.scheme.picard_iters).root
    sol = run.solve(run.ensemble())
    s = sol.summary()
    gap = abs(s["Y0_mean"] - root)
    thr = 3 * s["Y0_stderr"] + 0.01
    self_gap = abs(root - root2)
    rows = [["Y0", s["Y0_mean"], root, gap, thr],
            ["tree_self_consistency", root2, root, self_gap, 1e-3]]
    header = ["quantity", "mc_value", "tree_value", "gap", "threshold"]
    run.write_rows("oracle_compare.csv", header, rows)
    ok = gap <= thr and self_gap <= 1e-3
    run.manifest("oracle-compare", {"rows": [dict(zip(header, r)) for r in rows], "pass": ok})
    print(f"oracle-compare: MC {s['Y0_mean']:.6g} vs tree {root:.6g} (gap {gap:.3g}, threshold {thr:.3g}); "
          f"tree self-gap {self_gap:.2g}")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration or emitted manifest")
    common.add_argument("--out", default=None, help="output directory (default: ./out)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads; results do not depend on it")
    common.add_argument("--dump-paths", action="store_true", help="also write the Brownian paths as CSV")

    parser = argparse.ArgumentParser(prog="bsvi", description="Penalization solver for backward "
                                     "stochastic variational inequalities.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve and write solution CSV + manifest")
    p = sub.add_parser("check", parents=[common], help="run a named property check")
    p.add_argument("name", help=", ".join(CHECKS))
    p = sub.add_parser("study", parents=[common], help="run a convergence schedule")
    p.add_argument("name", help=", ".join(STUDIES))
    sub.add_parser("oracle-compare", parents=[common], help="compare Monte Carlo with the lattice oracle")
    return parser


def _error(out: Path, code: int, exc: BaseException) -> int:
    doc = {"exit_code": code, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, NumericalAbort):
        doc["step"] = exc.step
    if code == EXIT_NUMERIC:
        doc["traceback"] = traceback.format_exception_only(type(exc), exc)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError:
        pass
    print(f"error: {exc}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out or "out")
    try:
        run = Run(args)
        if args.command == "solve":
            return cmd_solve(run)
        if args.command == "check":
            return cmd_check(run, args.name)
        if args.command == "study":
            return cmd_study(run, args.name)
        return cmd_oracle_compare(run)
    except (cfgmod.ConfigError, MissingInput, MissingAssumption, UnsupportedProblem) as exc:
        return _error(out, EXIT_CONFIG, exc)
    except (NumericalAbort, NonConvergence, ScheduleDiverged, CapacityError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        return _error(out, EXIT_NUMERIC, exc)


if __name__ == "__main__":
    sys.exit(main())

"""Schedules that build the solution as a limit of approximations.

An epsilon schedule solves the penalized equation for ``eps0 / 2^j`` on
one shared ensemble and compares every pair of levels, then the limit
equation.  A truncation schedule solves a sequence of problems whose data
are cut off at level ``n``.  A refinement schedule reruns one problem on
successively coarsened copies of a fine ensemble.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .model import DriverSpec, Problem, TerminalSpec, f_sharp
from .paths import PathEnsemble
from .report import mean_stderr
from .solver import DiscreteSolution, SchemeConfig, solve_limit, solve_penalized

INF = float("inf")


class ScheduleDiverged(RuntimeError):
    pass


class MissingAssumption(ValueError):
    """The schedule needs data (an a priori radius) the problem does not carry."""


@dataclass
class LevelRecord:
    param: float
    solution: DiscreteSolution
    summary: dict[str, float]


@dataclass
class ContinuationReport:
    """Per-level summaries, pairwise Cauchy gaps and the fitted rate."""

    kind: str
    levels: list[LevelRecord] = field(default_factory=list)
    gaps: list[dict[str, float]] = field(default_factory=list)
    slope: float = float("nan")
    limit: LevelRecord | None = None
    flags: dict[str, bool] = field(default_factory=dict)
    details: dict[str, Any] = field(default_factory=dict)
    halted_at: int | None = None

    def consecutive_gaps(self) -> list[float]:
        return [g["gap"] for g in self.gaps if g["j"] == g["i"] + 1]

    def rows(self) -> list[dict[str, Any]]:
        """Tidy rows: one per level plus one for the limit run, then the slope."""
        cg = {g["j"]: g for g in self.gaps if g["j"] == g["i"] + 1}
        out = []
        for j, lv in enumerate(self.levels):
            g = cg.get(j)
            out.append({"level": j, "param": lv.param, "gap": g["gap"] if g else float("nan"),
                        "gap_stderr": g["gap_stderr"] if g else float("nan"),
                        "slope": float("nan"), "E_TV": lv.summary["E_TV"],
                        "Y0_mean": lv.summary["Y0_mean"], "Y0_stderr": lv.summary["Y0_stderr"]})
        if self.limit is not None:
            lg = self.details.get("limit_gap", {})
            out.append({"level": "limit", "param": 0.0, "gap": lg.get("gap", float("nan")),
                        "gap_stderr": lg.get("gap_stderr", float("nan")), "slope": float("nan"),
                        "E_TV": self.limit.summary["E_TV"], "Y0_mean": self.limit.summary["Y0_mean"],
                        "Y0_stderr": self.limit.summary["Y0_stderr"]})
        out.append({"level": "slope", "param": float("nan"), "gap": float("nan"), "gap_stderr": float("nan"),
                    "slope": self.slope, "E_TV": float("nan"), "Y0_mean": float("nan"),
                    "Y0_stderr": float("nan")})
        return out

    def summary(self) -> dict[str, Any]:
        return {"kind": self.kind, "params": [lv.param for lv in self.levels],
                "gaps": self.gaps, "slope": self.slope, "flags": self.flags,
                "halted_at": self.halted_at, "details": self.details,
                "levels": [lv.summary for lv in self.levels],
                "limit": None if self.limit is None else self.limit.summary}


def sup_gap(a: DiscreteSolution, b: DiscreteSolution) -> tuple[float, float]:
    """``E sup_i |Y^a_i - Y^b_i|^2`` on shared paths and nodes, with its standard error."""
    ya, yb = a.Y, b.Y
    if a.N < b.N:
        yb = yb[:, ::b.N // a.N]
    elif b.N < a.N:
        ya = ya[:, ::a.N // b.N]
    return mean_stderr(np.max(np.sum((ya - yb) ** 2, axis=2), axis=1))


def a_priori_radius(problem: Problem, ensemble: PathEnsemble, c_ap: float = 1.0, p: float = 2.0,
                    a: float = 2.0) -> float:
    """Bounded-data radius ``|u0| + C^{1/p} e^{2 sup V} (M + |u0| + |u0_hat| T)``.

    Uses the driver's (A5) constant ``M`` when present, else the ensemble
    maximum of ``|eta| + int |F(s, u0, 0)| ds``.  ``c_ap`` stands in for
    the non-explicit constant.
    """
    from .estimates import weight_process
    phi, drv = problem.phi, problem.driver
    u0n = float(np.linalg.norm(phi.u0))
    grid = ensemble.grid
    if drv.a5 is not None:
        Mb = drv.a5.M
    else:
        eta = np.asarray(problem.terminal(ensemble.X[:, -1]), float).reshape(ensemble.M, -1)
        fu0 = sum(float(np.max(np.linalg.norm(drv.eval(grid.t(i), ensemble.X[:, i],
                                                          np.broadcast_to(phi.u0, eta.shape),
                                                          np.zeros(eta.shape + (ensemble.k,))), axis=1)))
                  for i in range(grid.N)) * grid.h
        Mb = float(np.max(np.linalg.norm(eta, axis=1))) + fu0
    V = weight_process(drv, grid, a, p).V
    vmax = float(np.max(np.abs(V)))
    return u0n + c_ap ** (1.0 / p) * np.exp(2.0 * vmax) * (Mb + u0n + float(np.linalg.norm(phi.u0_hat)) * grid.T)


def _record(param, sol) -> LevelRecord:
    return LevelRecord(float(param), sol, sol.summary())


def _pairwise(report: ContinuationReport) -> None:
    lv = report.levels
    for i in range(len(lv)):
        for j in range(i + 1, len(lv)):
            g, se = sup_gap(lv[i].solution, lv[j].solution)
            report.gaps.append({"i": i, "j": j, "param_i": lv[i].param, "param_j": lv[j].param,
                                "gap": g, "gap_stderr": se})


def run_epsilon_schedule(problem: Problem, ensemble: PathEnsemble, cfg: SchemeConfig,
                         eps0: float = 0.1, levels: int = 4, eps_values: Sequence[float] | None = None,
                         include_limit: bool = True, divergence_factor: float = 10.0) -> ContinuationReport:
    """Penalized solutions for ``eps0 * 2^-j`` on one ensemble, then the limit run.

    ``eps_values`` overrides the geometric schedule.  Records all pairwise
    gaps and the log-log slope of gap against ``eps_i + eps_j``.  A level
    whose ``E sup |Y|`` exceeds ``divergence_factor`` times the a priori
    radius halts the schedule.
    """
    eps = list(eps_values) if eps_values is not None else [eps0 * 0.5 ** j for j in range(levels)]
    if len(eps) < 2:
        raise ValueError("an epsilon schedule needs at least two levels")
    rep = ContinuationReport(kind="epsilon")
    bound = problem.R0 if problem.R0 is not None else a_priori_radius(problem, ensemble, 1.0, cfg.p, cfg.a)
    rep.details["a_priori_radius"] = bound
    for j, e in enumerate(eps):
        sol = solve_penalized(problem, ensemble, replace(cfg, epsilon=e))
        lv = _record(e, sol)
        if lv.summary["E_sup_abs_Y"] > divergence_factor * bound:
            rep.flags["diverged"] = True
            rep.halted_at = j
            rep.details["divergence"] = {"level": j, "E_sup_abs_Y": lv.summary["E_sup_abs_Y"], "bound": bound}
            break
        rep.levels.append(lv)
    _pairwise(rep)
    xs = np.array([g["param_i"] + g["param_j"] for g in rep.gaps])
    ys = np.array([g["gap"] for g in rep.gaps])
    ok = ys > 1e-300
    if ok.sum() >= 2 and np.ptp(np.log(xs[ok])) > 0:
        rep.slope = float(np.polyfit(np.log(xs[ok]), np.log(ys[ok]), 1)[0])
    else:
        rep.flags["slope_undefined"] = True
    cg = rep.consecutive_gaps()
    rep.flags["monotone_gaps"] = bool(all(b < a for a, b in zip(cg, cg[1:]))) if len(cg) > 1 else True
    if include_limit and not rep.flags.get("diverged"):
        lim = solve_limit(problem, ensemble, replace(cfg, epsilon=None))
        rep.limit = _record(0.0, lim)
        g, se = sup_gap(rep.levels[-1].solution, lim)
        y0 = rep.levels[-1].summary["Y0_mean"] - rep.limit.summary["Y0_mean"]
        se0 = max(rep.levels[-1].summary["Y0_stderr"], rep.limit.summary["Y0_stderr"])
        rep.details["limit_gap"] = {"gap": g, "gap_stderr": se, "Y0_diff": y0, "Y0_stderr": se0}
    return rep


# ---------------------------------------------------------------------------
# truncation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncationLevel:
    """Data cut off at level ``n`` (``n = inf`` leaves the problem unchanged).

    ``eta^n = eta`` where ``|eta| + |phi(eta)| <= n`` and ``u0`` elsewhere;
    ``F^n = F - F(t, u0, 0) 1{|F(t, u0, 0)| >= n}``; the driver is switched
    off at times where ``zeta(t) = ell(t) + F#_{R0}(t) > n``.
    """

    n: float
    R0: float

    def zeta(self, driver: DriverSpec, t: float, m: int = 1) -> float:
        return float(driver.ell(t)) + f_sharp(driver, self.R0, t, m=m)

    def apply(self, problem: Problem) -> Problem:
        if self.n == INF:
            return problem
        n, phi = self.n, problem.phi
        u0 = np.asarray(phi.u0, float)
        g = problem.terminal.g
        drv = problem.driver
        m = problem.m
        gate_cache: dict[float, bool] = {}

        def gate(t):
            if t not in gate_cache:
                gate_cache[t] = self.zeta(drv, t, m) <= n
            return gate_cache[t]

        def eta_n(x):
            eta = g(x)
            size = np.linalg.norm(eta, axis=-1) + np.abs(np.reshape(phi.value(eta), eta.shape[:-1]))
            return np.where((size <= n)[..., None], eta, u0)

        def f_n(t, x, y, z):
            if not gate(t):
                return np.zeros_like(y)
            out = drv.eval(t, x, y, z)
            f0 = drv.eval(t, x, np.broadcast_to(u0, y.shape), np.zeros_like(z))
            cut = np.linalg.norm(f0, axis=-1) >= n
            if cut.any():
                out = np.where(cut[:, None], out - f0, out)
            return out

        term = TerminalSpec(eta_n, problem.terminal.bound, f"{problem.terminal.name}|n={n:g}",
                            {**problem.terminal.params, "truncation": n})
        driver = replace(drv, func=f_n, name=f"{drv.name}|n={n:g}", params={**drv.params, "truncation": n})
        return replace(problem, terminal=term, driver=driver)


def tail_masses(problem: Problem, ensemble: PathEnsemble, level: TruncationLevel) -> dict[str, float]:
    """Ensemble versions of the quantities the truncation gap is bounded by."""
    phi, drv, grid = problem.phi, problem.driver, ensemble.grid
    eta = np.asarray(problem.terminal(ensemble.X[:, -1]), float).reshape(ensemble.M, -1)
    size = np.linalg.norm(eta, axis=1) + np.abs(np.reshape(phi.value(eta), -1))
    u0 = phi.u0
    eta_tail = float(np.mean(np.where(size > level.n, np.linalg.norm(eta - u0, axis=1) ** 2, 0.0)))
    zeta_tail = 0.0
    f0_tail = 0.0
    for i in range(grid.N):
        t = grid.t(i)
        fs = f_sharp(drv, level.R0, t, m=problem.m)
        if float(drv.ell(t)) + fs >= level.n:
            zeta_tail += fs * grid.h
        f0 = np.linalg.norm(drv.eval(t, ensemble.X[:, i], np.broadcast_to(u0, eta.shape),
                                     np.zeros(eta.shape + (ensemble.k,))), axis=1)
        f0_tail += float(np.mean(np.where(f0 >= level.n, f0, 0.0))) * grid.h
    return {"eta": eta_tail, "zeta": zeta_tail, "F_u0": f0_tail}


def run_truncation_schedule(problem: Problem, ensemble: PathEnsemble, cfg: SchemeConfig,
                            n_values: Sequence[float], mode: str = "limit",
                            c_ap: float | None = None) -> ContinuationReport:
    """Solve the truncated problems for each ``n`` and compare consecutive levels.

    The a priori radius is ``problem.R0`` when given; otherwise it is
    computed from the bounded-data constants, which then must be present.
    ``c_ap`` defaults to the empirical prop1 ratio of the untruncated run.
    """
    if problem.R0 is not None:
        R0 = float(problem.R0)
    elif problem.driver.a5 is not None:
        if c_ap is None:
            from .estimates import check_prop1
            base = (solve_limit if mode == "limit" else solve_penalized)(problem, ensemble, cfg)
            r = check_prop1(base)
            c_ap = max(1.0, r.ratio) if np.isfinite(r.ratio) else 1.0
        R0 = a_priori_radius(problem, ensemble, c_ap, cfg.p, cfg.a)
    else:
        raise MissingAssumption("truncation needs R0 or the bounded-data constants (A5: M, L)")
    solve = solve_limit if mode == "limit" else solve_penalized
    rep = ContinuationReport(kind="truncation")
    rep.details["R0"] = R0
    rep.details["c_ap"] = c_ap
    tails = []
    for n in n_values:
        lvl = TruncationLevel(float(n), R0)
        sol = solve(lvl.apply(problem), ensemble, cfg)
        rep.levels.append(_record(n, sol))
        tails.append(tail_masses(problem, ensemble, lvl))
    rep.details["tails"] = tails
    for j in range(1, len(rep.levels)):
        g, se = sup_gap(rep.levels[j - 1].solution, rep.levels[j].solution)
        rep.gaps.append({"i": j - 1, "j": j, "param_i": rep.levels[j - 1].param,
                         "param_j": rep.levels[j].param, "gap": g, "gap_stderr": se})
    cg = rep.consecutive_gaps()
    rep.flags["monotone_gaps"] = bool(all(b <= a for a, b in zip(cg, cg[1:])))
    totals = [sum(t.values()) for t in tails]
    rep.flags["tails_shrink"] = bool(all(b <= a for a, b in zip(totals, totals[1:])))
    rep.flags["inert"] = bool(all(g["gap"] == 0.0 for g in rep.gaps))
    return rep


def run_refinement_schedule(problem: Problem, ensemble: PathEnsemble, cfg: SchemeConfig,
                            factors: Sequence[int] = (4, 2, 1), mode: str = "limit") -> ContinuationReport:
    """Solve on coarsenings of one fine ensemble; gaps compare Y_0 and shared nodes.

    The gap between grids ``N_a < N_b`` is ``E max |Y^a - Y^b|^2`` over the
    nodes of the coarser grid.
    """
    solve = solve_limit if mode == "limit" else solve_penalized
    rep = ContinuationReport(kind="refinement")
    for f in factors:
        ens = ensemble if f == 1 else ensemble.coarsen(f)
        rep.levels.append(_record(ens.N, solve(problem, ens, cfg)))
    for j in range(1, len(rep.levels)):
        a, b = rep.levels[j - 1].solution, rep.levels[j].solution
        g, se = sup_gap(a, b)
        rep.gaps.append({"i": j - 1, "j": j, "param_i": a.N, "param_j": b.N, "gap": g, "gap_stderr": se})
    cg = rep.consecutive_gaps()
    rep.flags["monotone_gaps"] = bool(all(b <= a for a, b in zip(cg, cg[1:])))
    return rep


def extract_solution(report: ContinuationReport, tv_tol_factor: float = 2.0) -> DiscreteSolution:
    """Finest solution of a schedule with the convergence evidence attached.

    For epsilon schedules the finest solution is the limit run when present.
    The total-variation check compares the extracted ``E TV(K)`` with the
    smaller of the last two levels plus ``tv_tol_factor`` standard errors.
    """
    if report.flags.get("diverged"):
        raise ScheduleDiverged(f"schedule halted at level {report.halted_at}")
    if not report.levels:
        raise ValueError("empty schedule")
    final = report.limit if report.limit is not None else report.levels[-1]
    sol = final.solution
    evidence: dict[str, Any] = {"kind": report.kind, "gaps": report.gaps, "slope": report.slope,
                                "flags": dict(report.flags)}
    if len(report.levels) >= 2 or report.limit is not None:
        last = report.levels[-2:] if report.limit is not None else report.levels[-3:-1]
        if last:
            run_min = min(lv.summary["E_TV"] for lv in last)
            tv, se = final.summary["E_TV"], final.summary["E_TV_stderr"]
            evidence["tv_check"] = {"final": tv, "running_min": run_min, "stderr": se,
                                    "pass": bool(tv <= run_min + tv_tol_factor * se)}
            evidence["stieltjes"] = stieltjes_gaps(report)
    sol.diagnostics["convergence"] = evidence
    return sol


def stieltjes_gaps(report: ContinuationReport) -> list[dict[str, float]]:
    """``E |sum <Y^n, dK^n> - sum <Y, dK>|`` of each level against the finest one."""
    final = report.limit if report.limit is not None else report.levels[-1]
    ref = np.sum(final.solution.Y[:, :-1] * final.solution.dK, axis=(1, 2))
    out = []
    for lv in report.levels:
        if lv is final:
            continue
        s = np.sum(lv.solution.Y[:, :-1] * lv.solution.dK, axis=(1, 2))
        g, se = sup_gap(lv.solution, final.solution)
        out.append({"param": lv.param, "stieltjes": float(np.mean(np.abs(s - ref))), "level_gap": g})
    return out

"""Backward least-squares Monte Carlo for the penalized and limit equations.

Both solvers share one recursion.  Going backward from ``Y_N = g(X_N)``,
each step regresses ``Y_{i+1}`` on the state to get the predictor ``P_i``
and ``Z_i``, takes an explicit step in the generator,
``Yhat_i = P_i + h F(t_i, X_i, P_i, Z_i)``, and then an implicit step in
the constraint: the Yosida resolvent (penalized mode) or the prox of
``phi`` (limit mode).  The constraint increment is ``dK_i = Yhat_i - Y_i``
so the discrete equation holds exactly.
"""

from __future__ import annotations

import csv
import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .convex import ConvexSpec, YosidaView, is_normalized, resolvent_of_yosida
from .model import Problem
from .paths import PathEnsemble
from .regression import BasisSpec, build_design
from .report import EstimateReport, _jsonable

PICARD_CAP = 10


class NumericalAbort(ArithmeticError):
    """A non-finite value appeared during the backward recursion."""

    def __init__(self, step: int, what: str):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step
        self.what = what


@dataclass(frozen=True)
class SchemeConfig:
    """Discretization settings.

    Parameters
    ----------
    epsilon
        Penalization level; ignored by :func:`solve_limit`.
    basis
        Regression basis for conditional expectations.
    picard_iters
        Extra fixed-point passes that re-evaluate ``F`` at the latest ``Y_i``
        instead of the predictor (at most 10).
    a, p
        Weight parameters used by the estimates; ``n_p = min(p - 1, 1)``.
    exact_gradient
        Penalized mode only: step with the prox of ``phi`` itself, i.e. use
        the exact gradient when ``phi`` is smooth.
    truncate_radius
        Clip predictors to the ball of this radius (the a priori bound).
    z_estimator
        ``"centered"`` regresses ``(Y_{i+1} - P_i) dB_i``; ``"plain"``
        regresses ``Y_{i+1} dB_i``.  Both estimate the same quantity.
    """

    epsilon: float | None = None
    basis: BasisSpec = BasisSpec()
    picard_iters: int = 0
    a: float = 2.0
    p: float = 2.0
    exact_gradient: bool = False
    truncate_radius: float | None = None
    z_estimator: str = "centered"
    threads: int = 1

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 <= self.picard_iters <= PICARD_CAP:
            raise ValueError(f"picard_iters must lie in [0, {PICARD_CAP}]")
        if not self.a > 0 or not self.p > 1:
            raise ValueError("need a > 0 and p > 1")
        if self.z_estimator not in ("centered", "plain"):
            raise ValueError(f"unknown z_estimator {self.z_estimator!r}")

    @property
    def n_p(self) -> float:
        return min(self.p - 1.0, 1.0)

    def describe(self) -> dict[str, Any]:
        return {"epsilon": self.epsilon, "basis": self.basis.describe(),
                "picard_iters": self.picard_iters, "a": self.a, "p": self.p,
                "exact_gradient": self.exact_gradient, "truncate_radius": self.truncate_radius,
                "z_estimator": self.z_estimator}


@dataclass
class DiscreteSolution:
    """Pathwise output of a backward run.

    Shapes: ``Y`` and ``K`` are ``(M, N + 1, m)``, ``Z`` is ``(M, N, m, k)``,
    ``U`` and ``dK`` are ``(M, N, m)``.  ``K[:, 0] = 0``.
    """

    Y: np.ndarray
    Z: np.ndarray
    U: np.ndarray
    dK: np.ndarray
    K: np.ndarray
    ensemble: PathEnsemble
    problem: Problem
    cfg: SchemeConfig
    mode: str
    epsilon: float | None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def h(self) -> float:
        return self.ensemble.grid.h

    @property
    def N(self) -> int:
        return self.ensemble.N

    @property
    def M(self) -> int:
        return self.Y.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.ensemble.grid.times

    @property
    def warnings(self) -> list[str]:
        return self.diagnostics.setdefault("warnings", [])

    def phi_effective(self):
        """The convex term the run actually discretizes (``phi_eps`` when penalized)."""
        if self.mode == "penalized":
            return YosidaView(self.problem.phi, self.epsilon)
        return self.problem.phi

    def phi_values(self) -> np.ndarray:
        """``phi_eff(Y_i)`` for every path and node, shape ``(M, N + 1)``."""
        f = self.phi_effective()
        m = self.Y.shape[2]
        return np.reshape(f.value(self.Y.reshape(-1, m)), self.Y.shape[:2])

    def tv_path(self) -> np.ndarray:
        """Running total variation of ``K``, shape ``(M, N + 1)``."""
        inc = np.sqrt(np.sum(self.dK ** 2, axis=2))
        out = np.zeros((self.M, self.N + 1))
        np.cumsum(inc, axis=1, out=out[:, 1:])
        return out

    def tv(self) -> np.ndarray:
        return self.tv_path()[:, -1]

    def summary(self) -> dict[str, Any]:
        from .report import mean_stderr
        y0 = float(np.mean(self.Y[:, 0, 0]))
        y0_se = float(self.diagnostics.get("Y0_stderr", mean_stderr(self.Y[:, 0, 0])[1]))
        tv, tv_se = mean_stderr(self.tv())
        sup = float(np.mean(np.max(np.sqrt(np.sum(self.Y ** 2, axis=2)), axis=1)))
        z2 = float(np.mean(np.sum(self.Z ** 2, axis=(1, 2, 3)) * self.h))
        return {"Y0_mean": y0, "Y0_stderr": y0_se, "E_sup_abs_Y": sup, "E_int_Z2": z2,
                "E_TV": tv, "E_TV_stderr": tv_se}


def _clip_ball(y: np.ndarray, radius: float) -> np.ndarray:
    r = np.sqrt(np.sum(y * y, axis=1, keepdims=True))
    return np.where(r > radius, y * (radius / np.maximum(r, 1e-300)), y)


def _run(problem: Problem, ens: PathEnsemble, cfg: SchemeConfig,
         step: Callable[[np.ndarray], np.ndarray], density: Callable, mode: str,
         epsilon: float | None) -> DiscreteSolution:
    grid = ens.grid
    M, N, k, h = ens.M, ens.N, ens.k, grid.h
    m = problem.m
    # time-major work arrays keep per-step slices contiguous
    Xt = np.ascontiguousarray(ens.X.transpose(1, 0, 2))
    dBt = np.ascontiguousarray(ens.dB.transpose(1, 0, 2))
    Y = np.empty((N + 1, M, m))
    Z = np.empty((N, M, m, k))
    U = np.empty((N, M, m))
    dK = np.empty((N, M, m))
    eta = np.asarray(problem.terminal(Xt[N]), float).reshape(M, m)
    if not np.all(np.isfinite(eta)):
        raise NumericalAbort(N, "terminal value")
    Y[N] = eta
    orth = np.zeros(N)
    degree = np.zeros(N, int)
    warnings: list[str] = []
    F = problem.driver.eval
    # Y_N + sum_i (Y_i - P_i) has mean Y_0; its spread gives the Monte Carlo error
    pathwise = eta[:, 0].copy()

    for i in range(N - 1, -1, -1):
        t = grid.t(i)
        x = Xt[i]
        design = build_design(x, cfg.basis, cfg.threads)
        degree[i] = design.degree
        warnings.extend(f"step {i}: {w}" for w in design.warnings)
        y_next = Y[i + 1]
        db = dBt[i]
        P, o1 = design.project(y_next)
        if cfg.z_estimator == "centered":
            target = ((y_next - P)[:, :, None] * db[:, None, :]).reshape(M, m * k)
        else:
            target = (y_next[:, :, None] * db[:, None, :]).reshape(M, m * k)
        zf, o2 = design.project(target)
        orth[i] = max(o1, o2)
        z = zf.reshape(M, m, k) / h
        if cfg.truncate_radius is not None:
            P = _clip_ball(P, cfg.truncate_radius)
        y_hat = P + h * F(t, x, P, z)
        if not (np.all(np.isfinite(y_hat)) and np.all(np.isfinite(z))):
            raise NumericalAbort(i, "predictor")
        y = step(y_hat)
        prev_delta = np.inf
        for it in range(cfg.picard_iters):
            y_hat_new = P + h * F(t, x, y, z)
            if not np.all(np.isfinite(y_hat_new)):
                warnings.append(f"step {i}: picard iteration {it + 1} diverged, kept previous iterate")
                break
            y_new = step(y_hat_new)
            delta = float(np.max(np.abs(y_new - y)))
            if not np.isfinite(delta) or delta > prev_delta:
                warnings.append(f"step {i}: picard iteration {it + 1} diverged, kept previous iterate")
                break
            y_hat, y, prev_delta = y_hat_new, y_new, delta
            if delta == 0.0:
                break
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
            raise NumericalAbort(i, "solution")
        Y[i] = y
        pathwise += y[:, 0] - P[:, 0]
        Z[i] = z
        dK[i] = y_hat - y
        U[i] = density(y, dK[i])

    y0_se = float(np.std(pathwise, ddof=1) / np.sqrt(M)) if M > 1 else 0.0
    K = np.zeros((N + 1, M, m))
    np.cumsum(dK, axis=0, out=K[1:])
    Y, Z, U, dK, K = (np.ascontiguousarray(np.swapaxes(a, 0, 1)) for a in (Y, Z, U, dK, K))
    diag = {"residual_orthogonality": orth, "degree": degree, "warnings": warnings,
            "max_residual_orthogonality": float(orth.max(initial=0.0)), "Y0_stderr": y0_se}
    return DiscreteSolution(Y, Z, U, dK, K, ens, problem, cfg, mode, epsilon, diag)


def solve_penalized(problem: Problem, ensemble: PathEnsemble, cfg: SchemeConfig) -> DiscreteSolution:
    """Solve the penalized equation with ``phi`` replaced by ``phi_eps``.

    ``problem.phi`` must be normalized (zero minimum at the anchor).  With
    ``cfg.exact_gradient`` the implicit step uses the prox of ``phi``
    itself, which is the exact gradient step for smooth ``phi``.
    """
    phi = problem.phi
    if not is_normalized(phi):
        raise ValueError("penalized solver needs a normalized convex function (see Problem.normalized)")
    h = ensemble.grid.h
    if cfg.exact_gradient:
        def step(x):
            return phi.prox(x, h)
        return _run(problem, ensemble, cfg, step, lambda y, dk: dk / h, "exact", None)
    if cfg.epsilon is None:
        raise ValueError("penalized solver needs cfg.epsilon")
    view = YosidaView(phi, cfg.epsilon)

    def step(x):
        return resolvent_of_yosida(view, h, x)

    return _run(problem, ensemble, cfg, step, lambda y, dk: view.grad(y), "penalized", cfg.epsilon)


def solve_limit(problem: Problem, ensemble: PathEnsemble, cfg: SchemeConfig) -> DiscreteSolution:
    """Solve the variational inequality itself: the implicit step is ``prox_phi(., h)``."""
    phi = problem.phi
    h = ensemble.grid.h

    def step(x):
        return phi.prox(x, h)

    return _run(problem, ensemble, cfg, step, lambda y, dk: dk / h, "limit", None)


def subdiff_measure_check(sol: DiscreteSolution, phi: ConvexSpec,
                          test_fns: Sequence, tol: float = 1e-8) -> EstimateReport:
    """Discrete form of the defining inequality for ``dK``.

    For each test path ``y`` and each pair ``i <= j`` checks
    ``sum_{i<=l<j} <y_l - Y_l, dK_l> + h (phi(Y_l) - phi(y_l)) <= tol (j - i) h``.
    Test paths are callables ``t -> point`` or arrays of shape ``(N + 1, m)``
    or ``(M, N + 1, m)``.
    """
    M, N, m, h = sol.M, sol.N, sol.Y.shape[2], sol.h
    rep = EstimateReport(name="subdiff", tolerance=tol,
                         config={"mode": sol.mode, "epsilon": sol.epsilon, "tests": len(test_fns)})
    phiY = np.reshape(phi.value(sol.Y[:, :N].reshape(-1, m)), (M, N))
    worst_all = -np.inf
    per_test = []
    for y_fn in test_fns:
        if callable(y_fn):
            yl = np.stack([np.broadcast_to(np.asarray(y_fn(t), float), (m,)) for t in sol.times[:N]])
        else:
            yl = np.asarray(y_fn, float)
            yl = yl[..., :N, :]
        yl = np.broadcast_to(yl, (M, N, m))
        phiy = np.reshape(phi.value(np.ascontiguousarray(yl).reshape(-1, m)), (M, N))
        if not np.all(np.isfinite(phiy)):
            raise ValueError("test path leaves the domain of phi")
        with np.errstate(invalid="ignore"):
            s = np.sum((yl - sol.Y[:, :N]) * sol.dK, axis=2) + h * (phiY - phiy) - tol * h
        C = np.zeros((M, N + 1))
        np.cumsum(s, axis=1, out=C[:, 1:])
        run_min = np.minimum.accumulate(C, axis=1)
        gap = C[:, 1:] - run_min[:, :-1]
        worst = float(np.max(gap)) if np.all(np.isfinite(gap)) else float("inf")
        per_test.append(worst)
        worst_all = max(worst_all, worst)
    rep.add("worst_violation", worst_all)
    rep.details["per_test"] = per_test
    rep.passed = bool(worst_all <= 0.0)
    return rep


def constraint_monotonicity(sol_a: DiscreteSolution, sol_b: DiscreteSolution) -> np.ndarray:
    """Per-path ``sum_l <Y_l - Y'_l, dK_l - dK'_l>`` for two runs on shared paths."""
    N = sol_a.N
    return np.sum((sol_a.Y[:, :N] - sol_b.Y[:, :N]) * (sol_a.dK - sol_b.dK), axis=(1, 2))


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _build_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).resolve().parent)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_solution_csv(sol: DiscreteSolution, path: str | Path) -> Path:
    """Columnar dump: one row per (path, step) with Y, Z, U and K components.

    ``Z`` and ``U`` are blank at the terminal step.
    """
    path = Path(path)
    M, N, m = sol.M, sol.N, sol.Y.shape[2]
    k = sol.Z.shape[3]
    header = (["path", "step"] + [f"Y{j}" for j in range(m)]
              + [f"Z{j}_{c}" for j in range(m) for c in range(k)]
              + [f"U{j}" for j in range(m)] + [f"K{j}" for j in range(m)])
    fmt = "%.17g"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for p in range(M):
            for i in range(N + 1):
                row = [p, i] + [fmt % v for v in sol.Y[p, i]]
                if i < N:
                    row += [fmt % v for v in sol.Z[p, i].ravel()] + [fmt % v for v in sol.U[p, i]]
                else:
                    row += [""] * (m * k + m)
                row += [fmt % v for v in sol.K[p, i]]
                w.writerow(row)
    return path


def run_manifest(config: dict[str, Any], sol: DiscreteSolution | None = None,
                 extra: dict[str, Any] | None = None) -> dict[str, Any]:
    """Manifest document echoing the resolved configuration and build."""
    doc: dict[str, Any] = {"manifest_version": 1, "config": config, "build": _build_describe()}
    if sol is not None:
        doc["solution"] = {"mode": sol.mode, "epsilon": sol.epsilon, **sol.summary(),
                           "warnings": list(sol.warnings),
                           "max_residual_orthogonality": sol.diagnostics["max_residual_orthogonality"]}
    if extra:
        doc.update(extra)
    return _jsonable(doc)


def write_manifest(doc: dict[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path

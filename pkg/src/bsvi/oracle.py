"""Independent reference solvers.

:func:`tree_solve` replaces regression by exact conditional expectations on
a recombining binomial lattice (one-dimensional problems driven by
``X = x0 + B``).  :func:`fixed_point_resolvent` solves the implicit Yosida
step by a damped fixed-point iteration instead of the closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convex import YosidaView, is_normalized, resolvent_of_yosida
from .model import Problem


class UnsupportedProblem(ValueError):
    """The oracle only handles ``m = k = 1`` with identity forward dynamics."""


class NonConvergence(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"no convergence after {iterations} iterations, residual {residual:.3e}")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class TreeSpec:
    """Binomial lattice with ``N_tree`` steps of size ``+-sqrt(h)`` on ``[0, T]``."""

    N_tree: int
    T: float = 1.0

    def __post_init__(self):
        if self.N_tree < 1:
            raise ValueError("N_tree must be positive")

    @property
    def h(self) -> float:
        return self.T / self.N_tree

    def nodes(self, i: int, x0: float = 0.0) -> np.ndarray:
        """States at level ``i``: ``x0 + (2 j - i) sqrt(h)`` for ``j = 0..i``."""
        return x0 + (2.0 * np.arange(i + 1) - i) * np.sqrt(self.h)


@dataclass
class LatticeSolution:
    tree: TreeSpec
    Y: list[np.ndarray]
    Z: list[np.ndarray]
    mode: str

    @property
    def root(self) -> float:
        return float(np.ravel(self.Y[0])[0])


def tree_solve(problem: Problem, tree: TreeSpec, mode: str = "limit", epsilon: float | None = None,
               picard_iters: int = 0) -> LatticeSolution:
    """Backward dynamic program on the lattice with the Monte Carlo step rule.

    ``mode`` is ``"limit"`` (prox step) or ``"penalized"`` (Yosida resolvent
    at level ``epsilon``; needs a normalized ``phi``).
    """
    fwd = problem.forward
    if problem.m != 1 or not fwd.identity or fwd.dim != 1:
        raise UnsupportedProblem("tree oracle needs m = k = 1 and X = x0 + B")
    if abs(tree.T - problem.T) > 1e-12:
        raise ValueError("tree horizon differs from the problem horizon")
    phi = problem.phi
    h = tree.h
    if mode == "limit":
        def step(x):
            return phi.prox(x, h)
    elif mode == "penalized":
        if epsilon is None or not is_normalized(phi):
            raise ValueError("penalized lattice needs epsilon and a normalized phi")
        view = YosidaView(phi, epsilon)

        def step(x):
            return resolvent_of_yosida(view, h, x)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    x0 = float(fwd.x0[0])
    N = tree.N_tree
    sq = np.sqrt(h)
    F = problem.driver.eval
    Y = [None] * (N + 1)
    Zs = [None] * N
    Y[N] = np.asarray(problem.terminal(tree.nodes(N, x0)[:, None]), float).reshape(-1, 1)
    for i in range(N - 1, -1, -1):
        t = i * tree.T / N
        x = tree.nodes(i, x0)[:, None]
        up, down = Y[i + 1][1:], Y[i + 1][:-1]
        P = 0.5 * (up + down)
        z = ((up - down) / (2.0 * sq))[:, :, None]
        y_hat = P + h * F(t, x, P, z)
        y = step(y_hat)
        for _ in range(picard_iters):
            y_hat = P + h * F(t, x, y, z)
            y = step(y_hat)
        Y[i] = y
        Zs[i] = z[:, :, 0]
    return LatticeSolution(tree, Y, Zs, mode)


def fixed_point_resolvent(view: YosidaView, h: float, x, tol: float = 1e-12,
                          cap: int = 100_000) -> np.ndarray:
    """Solve ``y + h grad phi_eps(y) = x`` by damped fixed-point iteration.

    The damped map ``y -> (eps x + h J_eps(y)) / (eps + h)`` is a
    contraction with factor ``h / (h + eps)``.  Iterates until the
    equation residual is at most ``tol`` at every point.
    """
    if not (h > 0 and view.epsilon > 0):
        raise ValueError("need h > 0 and epsilon > 0")
    x = np.asarray(x, float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    eps = view.epsilon
    y = xs.copy()
    for it in range(1, cap + 1):
        y = (eps * xs + h * view.base.prox(y, eps)) / (eps + h)
        res = float(np.max(np.abs(y + h * view.grad(y) - xs)))
        if res <= tol:
            return y[0] if single else y
    raise NonConvergence(res, cap)

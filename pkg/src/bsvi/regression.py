"""Least-squares conditional expectations on basis functions of the state.

The Gram matrix is accumulated chunk by chunk in a fixed order so results
do not depend on how chunk products are scheduled across threads.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import factorial

import numpy as np
import scipy.linalg as sla

CHUNK = 8192
COND_LIMIT = 1e12


@dataclass(frozen=True)
class BasisSpec:
    """Regression basis.

    ``kind="hermite"``: probabilists' Hermite polynomials of the
    standardized state up to total ``degree``.  ``kind="hat"``: piecewise
    linear hats on ``knots`` empirical quantiles (one state coordinate).
    """

    kind: str = "hermite"
    degree: int = 3
    knots: int = 24

    def __post_init__(self):
        if self.kind not in ("hermite", "hat"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")
        if self.kind == "hat" and self.knots < 2:
            raise ValueError("hat basis needs at least 2 knots")

    def describe(self) -> dict:
        return {"kind": self.kind, "degree": self.degree, "knots": self.knots}


@dataclass
class Design:
    """A basis evaluated on a sample, with its Cholesky factor.

    Dense designs keep the matrix ``A``.  Hat designs keep, for each row,
    the left knot index ``j`` and weight ``w`` (``A[r, j] = 1 - w``,
    ``A[r, j + 1] = w``).
    """

    A: np.ndarray | None
    factor: tuple
    degree: int
    warnings: list[str] = field(default_factory=list)
    threads: int = 1
    hat: tuple[np.ndarray, np.ndarray, int] | None = None

    @property
    def rows(self) -> int:
        return self.A.shape[0] if self.A is not None else self.hat[0].shape[0]

    def rmatmul(self, B: np.ndarray) -> np.ndarray:
        """``A.T @ B`` with a fixed summation order."""
        if self.hat is None:
            return _reduce(self.A, B, self.threads)
        j, w, K = self.hat
        out = np.empty((K, B.shape[1]))
        for q in range(B.shape[1]):
            b = B[:, q]
            out[:, q] = (np.bincount(j, (1.0 - w) * b, minlength=K)
                         + np.bincount(j + 1, w * b, minlength=K))
        return out

    def matmul(self, coef: np.ndarray) -> np.ndarray:
        if self.hat is None:
            return self.A @ coef
        j, w, _ = self.hat
        return (1.0 - w)[:, None] * coef[j] + w[:, None] * coef[j + 1]

    def project(self, targets: np.ndarray) -> tuple[np.ndarray, float]:
        """Fitted values of ``targets`` (``(M, q)``) and worst residual orthogonality."""
        coef = sla.cho_solve(self.factor, self.rmatmul(targets))
        resid = targets - self.matmul(coef)
        coef = coef + sla.cho_solve(self.factor, self.rmatmul(resid))
        fitted = self.matmul(coef)
        orth = self.rmatmul(targets - fitted) / self.rows
        return fitted, float(np.max(np.abs(orth), initial=0.0))


def _reduce(A: np.ndarray, B: np.ndarray, threads: int = 1) -> np.ndarray:
    """``A.T @ B`` summed over fixed row chunks in index order."""
    bounds = [(lo, min(lo + CHUNK, A.shape[0])) for lo in range(0, A.shape[0], CHUNK)]

    def part(b):
        lo, hi = b
        return A[lo:hi].T @ B[lo:hi]

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(part, bounds))
    else:
        parts = [part(b) for b in bounds]
    out = parts[0]
    for p in parts[1:]:
        out = out + p
    return out


def _hermite_columns(u: np.ndarray, degree: int) -> np.ndarray:
    M, d = u.shape
    he = np.empty((degree + 1, M, d))
    he[0] = 1.0
    if degree >= 1:
        he[1] = u
    for n in range(1, degree):
        he[n + 1] = u * he[n] - n * he[n - 1]
    for n in range(degree + 1):
        he[n] /= np.sqrt(factorial(n))
    cols = []
    for total in range(degree + 1):
        for idx in itertools.combinations_with_replacement(range(d), total):
            powers = np.bincount(np.asarray(idx, int), minlength=d) if idx else np.zeros(d, int)
            col = np.ones(M)
            for j in range(d):
                if powers[j]:
                    col = col * he[powers[j], :, j]
            cols.append(col)
    return np.column_stack(cols)


def _hat_weights(x: np.ndarray, knots: int):
    q = np.unique(np.quantile(x, np.linspace(0.0, 1.0, knots)))
    if q.size < 2:
        return None
    K = q.size
    j = np.clip(np.searchsorted(q, x, side="right") - 1, 0, K - 2)
    w = np.clip((x - q[j]) / (q[j + 1] - q[j]), 0.0, 1.0)
    return j, w, K


def _hat_factor(j, w, K):
    M = j.shape[0]
    a, b = 1.0 - w, w
    diag = np.bincount(j, a * a, minlength=K) + np.bincount(j + 1, b * b, minlength=K)
    off = np.bincount(j, a * b, minlength=K)[:K - 1]
    G = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
    ev = np.linalg.eigvalsh(G / M)
    if ev[0] <= ev[-1] / COND_LIMIT:
        return None
    return sla.cho_factor(G, lower=True)


def _factor(A: np.ndarray, threads: int):
    G = _reduce(A, A, threads) / A.shape[0]
    try:
        ev = np.linalg.eigvalsh(G)
        if ev[0] <= ev[-1] / COND_LIMIT:
            return None
        return sla.cho_factor(G * A.shape[0], lower=True)
    except (np.linalg.LinAlgError, sla.LinAlgError):
        return None


def build_design(X: np.ndarray, basis: BasisSpec, threads: int = 1) -> Design:
    """Evaluate ``basis`` on states ``X`` (``(M, d)``), lowering the degree if singular."""
    X = np.asarray(X, float)
    if X.ndim == 1:
        X = X[:, None]
    M = X.shape[0]
    std = X.std(axis=0)
    active = std > 1e-12 * (1.0 + np.abs(X.mean(axis=0)))
    warnings: list[str] = []
    if not active.any():
        A = np.ones((M, 1))
        return Design(A, sla.cho_factor(np.array([[float(M)]]), lower=True), 0, warnings, threads)
    u = (X[:, active] - X[:, active].mean(axis=0)) / std[active]

    if basis.kind == "hat":
        if u.shape[1] != 1:
            raise ValueError("hat basis supports a single active state coordinate")
        knots = basis.knots
        while True:
            hw = _hat_weights(u[:, 0], knots)
            if hw is None:
                A = np.ones((M, 1))
                return Design(A, sla.cho_factor(np.array([[float(M)]]), lower=True), 0, warnings, threads)
            fac = _hat_factor(*hw)
            if fac is not None or knots <= 2:
                break
            knots = max(2, knots // 2)
            warnings.append(f"hat basis singular, knots lowered to {knots}")
        if fac is None:
            raise np.linalg.LinAlgError("regression design is singular")
        return Design(None, fac, hw[2], warnings, threads, hat=hw)

    degree = basis.degree
    while True:
        A = _hermite_columns(u, degree)
        fac = _factor(A, threads)
        if fac is not None or degree == 0:
            break
        degree -= 1
        warnings.append(f"rank-deficient design, degree lowered to {degree}")
    if fac is None:
        raise np.linalg.LinAlgError("regression design is singular")
    return Design(A, fac, degree, warnings, threads)


def conditional_expectation(X: np.ndarray, targets: np.ndarray, basis: BasisSpec = BasisSpec(),
                            threads: int = 1) -> np.ndarray:
    """Regression estimate of ``E[targets | X]`` at the sample points."""
    t = np.asarray(targets, float)
    flat = t.reshape(t.shape[0], -1)
    fitted, _ = build_design(X, basis, threads).project(flat)
    return fitted.reshape(t.shape)

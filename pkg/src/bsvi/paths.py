"""Reproducible Brownian increments and forward states on a uniform grid.

Randomness is counter-based: paths are grouped in fixed-size blocks and
each block draws from its own Philox stream keyed by ``(seed, block)``.
A path's increments therefore depend only on the seed and the path index,
never on how blocks are scheduled across threads.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ForwardSpec

BLOCK = 4096
MAX_BYTES = 4 * 1024 ** 3
_MASK64 = (1 << 64) - 1


class CapacityError(MemoryError):
    """Requested ensemble exceeds the configured memory budget."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i T / N`` on ``[0, T]``."""

    T: float
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T!r}")

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.T / self.N

    def t(self, i: int) -> float:
        return i * self.T / self.N


@dataclass(frozen=True)
class PathEnsemble:
    """Immutable set of ``M`` Brownian paths and the forward state they drive.

    ``dB`` has shape ``(M, N, k)`` and ``X`` has shape ``(M, N + 1, d)``.
    """

    grid: TimeGrid
    forward: ForwardSpec
    dB: np.ndarray
    X: np.ndarray
    seed: int
    antithetic: bool = False

    @property
    def M(self) -> int:
        return self.dB.shape[0]

    @property
    def k(self) -> int:
        return self.dB.shape[2]

    @property
    def N(self) -> int:
        return self.grid.N

    def coarsen(self, factor: int = 2) -> "PathEnsemble":
        """Same Brownian paths seen on a grid ``factor`` times coarser."""
        if self.N % factor:
            raise ValueError(f"N={self.N} is not divisible by {factor}")
        grid = TimeGrid(self.grid.T, self.N // factor)
        dB = self.dB.reshape(self.M, grid.N, factor, self.k).sum(axis=2)
        return _assemble(grid, self.forward, dB, self.seed, self.antithetic)

    def describe(self) -> dict:
        return {"T": self.grid.T, "N": self.N, "M": self.M, "k": self.k,
                "seed": self.seed, "antithetic": self.antithetic,
                "forward": self.forward.describe()}


def _block_normals(seed: int, block: int, rows: int, N: int, k: int) -> np.ndarray:
    key = ((seed & _MASK64) << 64) | block
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.standard_normal((rows, N, k))


def _forward_states(grid: TimeGrid, forward: ForwardSpec, dB: np.ndarray) -> np.ndarray:
    M, N, k = dB.shape
    x0 = np.asarray(forward.x0, float)
    if forward.identity:
        if x0.shape[0] != k:
            raise ValueError(f"identity forward needs d == k, got d={x0.shape[0]}, k={k}")
        X = np.empty((M, N + 1, k))
        X[:, 0] = x0
        X[:, 1:] = x0 + np.cumsum(dB, axis=1)
        return X
    d = x0.shape[0]
    X = np.empty((M, N + 1, d))
    X[:, 0] = x0
    h = grid.h
    for i in range(N):
        t = grid.t(i)
        x = X[:, i]
        sig = forward.diffusion(t, x)
        X[:, i + 1] = x + forward.drift(t, x) * h + np.einsum("mdk,mk->md", sig, dB[:, i])
    return X


def _assemble(grid, forward, dB, seed, antithetic):
    X = _forward_states(grid, forward, dB)
    dB.setflags(write=False)
    X.setflags(write=False)
    return PathEnsemble(grid, forward, dB, X, seed, antithetic)


def generate(grid: TimeGrid, forward: ForwardSpec, M: int, k: int, seed: int,
             antithetic: bool = False, threads: int = 1,
             max_bytes: int = MAX_BYTES) -> PathEnsemble:
    """Simulate ``M`` paths of a ``k``-dimensional Brownian motion.

    Parameters
    ----------
    antithetic
        Pair path ``2j + 1`` with the negation of path ``2j`` (``M`` must be
        even); the ensemble mean of every increment is then exactly zero.
    threads
        Worker count for block generation.  Output does not depend on it.
    max_bytes
        Memory budget for ``dB`` and ``X`` together.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    if k < 1:
        raise ValueError("k must be at least 1")
    if antithetic and M % 2:
        raise ValueError("antithetic sampling needs an even M")
    d = np.asarray(forward.x0).shape[0]
    need = 8 * M * (grid.N * k + (grid.N + 1) * d)
    if need > max_bytes:
        raise CapacityError(f"ensemble needs {need} bytes, budget is {max_bytes}")

    base = M // 2 if antithetic else M
    draws = np.empty((base, grid.N, k))
    sqrt_h = np.sqrt(grid.h)
    blocks = [(b, b * BLOCK, min(base, (b + 1) * BLOCK)) for b in range(-(-base // BLOCK))]

    def fill(job):
        b, lo, hi = job
        draws[lo:hi] = sqrt_h * _block_normals(seed, b, hi - lo, grid.N, k)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, blocks))
    else:
        for job in blocks:
            fill(job)

    if antithetic:
        dB = np.empty((M, grid.N, k))
        dB[0::2] = draws
        dB[1::2] = -draws
    else:
        dB = draws
    return _assemble(grid, forward, dB, int(seed), antithetic)


def dump_paths_csv(ens: PathEnsemble, path: str | Path) -> Path:
    """Write ``path,step,component,dB,X`` rows; ``dB`` is blank at the last step."""
    path = Path(path)
    width = max(ens.k, ens.X.shape[2])
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "step", "component", "dB", "X"])
        for m in range(ens.M):
            for i in range(ens.N + 1):
                for c in range(width):
                    db = "%.17g" % ens.dB[m, i, c] if i < ens.N and c < ens.k else ""
                    x = "%.17g" % ens.X[m, i, c] if c < ens.X.shape[2] else ""
                    w.writerow([m, i, c, db, x])
    return path

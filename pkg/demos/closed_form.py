"""Quadratic convex term with a zero driver: the solution is e^{-(1-t)} B_t.

Run: python3 demos/closed_form.py
"""

import numpy as np

from bsvi import Problem, Quadratic, SchemeConfig, TimeGrid, generate, make_driver, make_forward, make_terminal
from bsvi import solve_penalized


def main():
    fwd = make_forward("identity")
    problem = Problem(Quadratic(1, 1.0), make_driver("zero"), make_terminal("identity"), fwd)
    ens = generate(TimeGrid(1.0, 64), fwd, 100_000, 1, seed=7)
    sol = solve_penalized(problem, ens, SchemeConfig(exact_gradient=True))
    exact = np.exp(-(1 - ens.grid.times))[None, :] * ens.X[:, :, 0]
    rms = np.sqrt(np.mean((sol.Y[:, :, 0] - exact) ** 2, axis=0))
    for i in (0, 16, 32, 48, 64):
        print(f"t={ens.grid.t(i):.2f}  RMS error {rms[i]:.4f}")
    print(f"max RMS error {rms.max():.4f}")


if __name__ == "__main__":
    main()

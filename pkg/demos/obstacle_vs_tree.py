"""Reflection at zero: Monte Carlo regression against a binomial lattice.

Run: python3 demos/obstacle_vs_tree.py
"""

import numpy as np

from bsvi import (BasisSpec, Box, Problem, SchemeConfig, TimeGrid, TreeSpec, generate, make_driver,
                  make_forward, make_terminal, solve_limit, tree_solve)


def main():
    fwd = make_forward("identity")
    ens = generate(TimeGrid(1.0, 64), fwd, 100_000, 1, seed=3)
    cfg = SchemeConfig(basis=BasisSpec("hat", knots=24))
    for name, phi, term in [("half-line, |x|", Box(1, 0.0, np.inf), make_terminal("abs")),
                            ("half-line, sin", Box(1, 0.0, np.inf), make_terminal("sin")),
                            ("[-1, 1], sin", Box(1, -1.0, 1.0), make_terminal("sin"))]:
        problem = Problem(phi, make_driver("linear", a=-1.0), term, fwd)
        s = solve_limit(problem, ens, cfg).summary()
        root = tree_solve(problem, TreeSpec(2000)).root
        print(f"{name:16s} MC {s['Y0_mean']:.4f} +- {s['Y0_stderr']:.4f}   lattice {root:.4f}   "
              f"E TV(K) {s['E_TV']:.4f}")


if __name__ == "__main__":
    main()

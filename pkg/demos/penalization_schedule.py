"""Penalized solutions converge to the reflected one as epsilon shrinks.

Run: python3 demos/penalization_schedule.py
"""

from bsvi import (BasisSpec, Box, Problem, SchemeConfig, TimeGrid, generate, make_driver, make_forward,
                  make_terminal, run_epsilon_schedule)


def main():
    fwd = make_forward("identity")
    problem = Problem(Box(1, -1.0, 1.0), make_driver("linear", a=3.0), make_terminal("tanh_clip"), fwd)
    ens = generate(TimeGrid(1.0, 64), fwd, 50_000, 1, seed=11)
    rep = run_epsilon_schedule(problem.normalized(), ens, SchemeConfig(basis=BasisSpec("hat", knots=24)),
                               eps0=0.1, levels=4)
    print(f"{'level':>6} {'epsilon':>8} {'gap':>10} {'E TV(K)':>9} {'Y0':>9}")
    for r in rep.rows()[:-1]:
        print(f"{r['level']!s:>6} {r['param']:8.4f} {r['gap']:10.3e} {r['E_TV']:9.4f} {r['Y0_mean']:9.4f}")
    print(f"log-log slope of the gaps: {rep.slope:.2f}")


if __name__ == "__main__":
    main()

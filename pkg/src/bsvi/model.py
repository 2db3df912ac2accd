"""Problem data: generator, terminal condition, forward dynamics.

Drivers, terminal maps and forward dynamics are plain callables wrapped
with the metadata the estimates need (monotonicity rate ``mu``, Lipschitz
rate ``ell`` in ``z``, closed-form local bounds).  Named constructors in
:data:`DRIVERS`, :data:`TERMINALS` and :data:`FORWARDS` are what run
configurations refer to.

Array conventions: ``x`` is ``(M, d)``, ``y`` is ``(M, m)``, ``z`` is
``(M, m, k)``, ``t`` a float.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np
from scipy.stats import qmc

from .convex import ConvexSpec, normalize
from .report import EstimateReport

TimeFn = Callable[[float], float]


def _const(c: float) -> TimeFn:
    return lambda t: c


@dataclass(frozen=True)
class A4Params:
    """Constants of the compatibility condition between ``phi`` and ``F``."""

    beta: TimeFn = _const(0.0)
    b: TimeFn = _const(0.0)
    kappa: float = 0.0
    p: float = 2.0


@dataclass(frozen=True)
class A5Params:
    """Bounded-data constants: ``|eta| + int |F(s,u0,0)| ds <= M`` and ``ell <= L``."""

    M: float
    L: float


@dataclass(frozen=True)
class DriverSpec:
    """The generator ``F(t, x, y, z)`` with its structural constants."""

    func: Callable[..., np.ndarray]
    mu: TimeFn
    ell: TimeFn
    local_bound: Callable[[float, float], float] | None = None
    a4: A4Params | None = None
    a5: A5Params | None = None
    name: str = "custom"
    params: dict[str, Any] = field(default_factory=dict)

    def eval(self, t, x, y, z) -> np.ndarray:
        return self.func(t, x, y, z)

    def __call__(self, t, x, y, z) -> np.ndarray:
        return self.func(t, x, y, z)

    def shifted(self, c) -> "DriverSpec":
        """``F + c`` for a constant vector ``c``; rates are unchanged."""
        c = np.asarray(c, float)
        f = self.func
        lb = self.local_bound
        cn = float(np.linalg.norm(c))
        return replace(
            self,
            func=lambda t, x, y, z: f(t, x, y, z) + c,
            local_bound=None if lb is None else (lambda rho, t: lb(rho, t) + cn),
            name=f"{self.name}+shift",
            params={**self.params, "shift": c.tolist()},
        )

    def describe(self) -> dict[str, Any]:
        return {"kind": self.name, **self.params}


@dataclass(frozen=True)
class TerminalSpec:
    """Terminal map ``eta = g(X_T)`` with an optional uniform bound."""

    g: Callable[[np.ndarray], np.ndarray]
    bound: float | None = None
    name: str = "custom"
    params: dict[str, Any] = field(default_factory=dict)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.g(x)

    def shifted(self, delta) -> "TerminalSpec":
        delta = np.asarray(delta, float)
        g = self.g
        b = None if self.bound is None else self.bound + float(np.linalg.norm(delta))
        return TerminalSpec(lambda x: g(x) + delta, b, f"{self.name}+shift",
                            {**self.params, "shift": delta.tolist()})

    def describe(self) -> dict[str, Any]:
        return {"kind": self.name, **self.params}


@dataclass(frozen=True)
class ForwardSpec:
    """Forward state ``dX = drift dt + diffusion dB``, ``X_0 = x0``.

    ``identity=True`` means ``X = x0 + B`` and is simulated exactly.
    """

    x0: np.ndarray
    drift: Callable[[float, np.ndarray], np.ndarray] | None = None
    diffusion: Callable[[float, np.ndarray], np.ndarray] | None = None
    identity: bool = True
    lipschitz: tuple[float, float] = (0.0, 0.0)
    name: str = "identity"
    params: dict[str, Any] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return int(np.asarray(self.x0).shape[0])

    def describe(self) -> dict[str, Any]:
        return {"kind": self.name, **self.params}


@dataclass(frozen=True)
class Problem:
    """A full BSVI instance on ``[0, T]``."""

    phi: ConvexSpec
    driver: DriverSpec
    terminal: TerminalSpec
    forward: ForwardSpec
    T: float = 1.0
    R0: float | None = None
    name: str = "problem"

    @property
    def m(self) -> int:
        return self.phi.dim

    def normalized(self) -> "Problem":
        phi_t, drv_t = normalize(self.phi, self.driver)
        return replace(self, phi=phi_t, driver=drv_t)

    def describe(self) -> dict[str, Any]:
        return {"name": self.name, "T": self.T, "R0": self.R0,
                "convex": self.phi.describe(), "driver": self.driver.describe(),
                "terminal": self.terminal.describe(), "forward": self.forward.describe()}


# ---------------------------------------------------------------------------
# catalogs
# ---------------------------------------------------------------------------

def _row_norms(z):
    return np.sqrt(np.sum(z * z, axis=-1))


def driver_zero():
    return DriverSpec(lambda t, x, y, z: np.zeros_like(y), _const(0.0), _const(0.0),
                      local_bound=lambda rho, t: 0.0,
                      a4=A4Params(), name="zero")


def driver_constant(value=1.0):
    c = np.atleast_1d(np.asarray(value, float))
    cn = float(np.linalg.norm(c))
    return DriverSpec(lambda t, x, y, z: np.broadcast_to(c, y.shape).copy(), _const(0.0), _const(0.0),
                      local_bound=lambda rho, t: cn, name="constant",
                      params={"value": c.tolist()})


def driver_linear(a=-1.0, b=0.0):
    """``F = a y + b``; monotone with ``mu = a``."""
    a = float(a)
    b = np.atleast_1d(np.asarray(b, float))
    bn = float(np.linalg.norm(b))
    return DriverSpec(lambda t, x, y, z: a * y + b, _const(a), _const(0.0),
                      local_bound=lambda rho, t: abs(a) * rho + bn,
                      name="linear", params={"a": a, "b": b.tolist()})


def driver_cubic(c=1.0):
    """``F = -c |y|^2 y``; monotone (``mu = 0``) but not of linear growth."""
    c = float(c)
    return DriverSpec(lambda t, x, y, z: -c * np.sum(y * y, axis=-1, keepdims=True) * y,
                      _const(0.0), _const(0.0),
                      local_bound=lambda rho, t: c * rho ** 3, name="cubic", params={"c": c})


def driver_sine_cubic():
    """``F = sin(y) - y^3`` componentwise; ``mu = 1``, no closed-form local bound."""
    return DriverSpec(lambda t, x, y, z: np.sin(y) - y ** 3, _const(1.0), _const(0.0),
                      local_bound=None, name="sine_cubic")


def driver_z_lipschitz(a=0.0, ell=1.0, b=0.0):
    """``F_j = a y_j + ell |z_j| + b``: Lipschitz in ``z`` with rate ``ell``."""
    a, ell, b = float(a), float(ell), float(b)
    return DriverSpec(lambda t, x, y, z: a * y + ell * _row_norms(z) + b,
                      _const(a), _const(ell),
                      local_bound=lambda rho, t: abs(a) * rho + abs(b),
                      name="z_lipschitz", params={"a": a, "ell": ell, "b": b})


def driver_singular_push(c=1.0, alpha=0.45, T=1.0, clip=None, dim=1):
    """``F = c (T - t)^(-alpha) y``: an outward push that blows up at ``T``.

    Monotone with the integrable rate ``mu(t) = c (T - t)^(-alpha)`` for
    ``alpha < 1``.  With ``clip = r`` the push is ``rate(t) clip(y, -r, r)``
    (componentwise), which is still monotone with the same rate but stays
    bounded outside the cube of half-width ``r``.  When ``|F(t, u, z)|``
    is at most ``rate(t)`` on the constraint set, (A4)(ii) holds with
    ``beta(t) = rate(t)^2 / 2``, integrable for ``alpha < 1/2``.  ``dim``
    only sharpens the closed-form local bound of the clipped push.
    """
    c, alpha, T = float(c), float(alpha), float(T)

    def rate(t):
        return c * max(T - t, 1e-300) ** (-alpha)

    if clip is None:
        func = lambda t, x, y, z: rate(t) * y  # noqa: E731
        bound = lambda rho, t: rate(t) * rho  # noqa: E731
    else:
        r = float(clip)
        func = lambda t, x, y, z: rate(t) * np.clip(y, -r, r)  # noqa: E731
        bound = lambda rho, t: rate(t) * min(rho, r * np.sqrt(dim))  # noqa: E731
    params = {"c": c, "alpha": alpha, "T": T}
    if clip is not None:
        params["clip"] = float(clip)
    return DriverSpec(func, rate, _const(0.0), local_bound=bound,
                      a4=A4Params(beta=lambda t: 0.5 * rate(t) ** 2),
                      name="singular_push", params=params)


DRIVERS: dict[str, Callable[..., DriverSpec]] = {
    "zero": driver_zero,
    "constant": driver_constant,
    "linear": driver_linear,
    "cubic": driver_cubic,
    "sine_cubic": driver_sine_cubic,
    "z_lipschitz": driver_z_lipschitz,
    "singular_push": driver_singular_push,
}


def _componentwise(fn, name, bound=None, **params):
    return TerminalSpec(fn, bound, name, params)


def terminal_identity(scale=1.0):
    s = float(scale)
    return _componentwise(lambda x: s * x, "identity", None, scale=s)


def terminal_abs(scale=1.0):
    s = float(scale)
    return _componentwise(lambda x: s * np.abs(x), "abs", None, scale=s)


def terminal_sin(scale=1.0, freq=1.0):
    s, f = float(scale), float(freq)
    return _componentwise(lambda x: s * np.sin(f * x), "sin", abs(s), scale=s, freq=f)


def terminal_tanh_clip(scale=2.0, lower=-1.0, upper=1.0):
    s, lo, hi = float(scale), float(lower), float(upper)
    return _componentwise(lambda x: np.clip(s * np.tanh(x), lo, hi), "tanh_clip",
                          max(abs(lo), abs(hi)), scale=s, lower=lo, upper=hi)


def terminal_sign_clip(scale=2.0, lower=-1.0, upper=1.0):
    s, lo, hi = float(scale), float(lower), float(upper)
    return _componentwise(lambda x: np.clip(s * np.sign(x), lo, hi), "sign_clip",
                          max(abs(lo), abs(hi)), scale=s, lower=lo, upper=hi)


def terminal_constant(value=0.0, dim=1):
    v = np.broadcast_to(np.asarray(value, float), (int(dim),)).copy()
    return TerminalSpec(lambda x: np.broadcast_to(v, x.shape[:-1] + v.shape).copy(),
                        float(np.linalg.norm(v)), "constant", {"value": v.tolist(), "dim": int(dim)})


TERMINALS: dict[str, Callable[..., TerminalSpec]] = {
    "identity": terminal_identity,
    "abs": terminal_abs,
    "sin": terminal_sin,
    "tanh_clip": terminal_tanh_clip,
    "sign_clip": terminal_sign_clip,
    "constant": terminal_constant,
}


def forward_identity(dim=1, x0=0.0):
    x0 = np.broadcast_to(np.asarray(x0, float), (int(dim),)).copy()
    return ForwardSpec(x0=x0, identity=True, name="identity",
                       params={"dim": int(dim), "x0": x0.tolist()})


def forward_ou(dim=1, x0=0.0, theta=1.0, sigma=1.0):
    """Ornstein-Uhlenbeck state ``dX = -theta X dt + sigma dB``."""
    x0 = np.broadcast_to(np.asarray(x0, float), (int(dim),)).copy()
    theta, sigma = float(theta), float(sigma)
    eye = np.eye(int(dim))
    return ForwardSpec(x0=x0, drift=lambda t, x: -theta * x,
                       diffusion=lambda t, x: np.broadcast_to(sigma * eye, x.shape[:-1] + eye.shape),
                       identity=False, lipschitz=(abs(theta), 0.0), name="ou",
                       params={"dim": int(dim), "x0": x0.tolist(), "theta": theta, "sigma": sigma})


FORWARDS: dict[str, Callable[..., ForwardSpec]] = {
    "identity": forward_identity,
    "ou": forward_ou,
}


def _lookup(table, kind, what):
    try:
        return table[kind]
    except KeyError:
        raise ValueError(f"unknown {what} kind {kind!r}; choose from {sorted(table)}") from None


def make_driver(kind: str, **params) -> DriverSpec:
    a4 = params.pop("a4", None)
    a5 = params.pop("a5", None)
    drv = _lookup(DRIVERS, kind, "driver")(**params)
    if a4 is not None:
        drv = replace(drv, a4=A4Params(beta=_const(float(a4.get("beta", 0.0))),
                                       b=_const(float(a4.get("b", 0.0))),
                                       kappa=float(a4.get("kappa", 0.0)),
                                       p=float(a4.get("p", 2.0))))
    if a5 is not None:
        drv = replace(drv, a5=A5Params(M=float(a5["M"]), L=float(a5["L"])))
    return drv


def make_terminal(kind: str, **params) -> TerminalSpec:
    return _lookup(TERMINALS, kind, "terminal")(**params)


def make_forward(kind: str, **params) -> ForwardSpec:
    return _lookup(FORWARDS, kind, "forward")(**params)


# ---------------------------------------------------------------------------
# local bound and assumption checks
# ---------------------------------------------------------------------------

def _ball_points(m: int, n: int, seed: int) -> np.ndarray:
    sob = qmc.Sobol(d=m, scramble=True, seed=seed)
    u = 2.0 * sob.random(n) - 1.0
    if m == 1:
        return np.vstack([u, [[1.0], [-1.0], [0.0]]])
    r = np.sqrt(np.sum(u * u, axis=1))
    inside = u[r <= 1.0]
    shell = u[r > 0] / r[r > 0][:, None]
    return np.vstack([inside, shell, np.zeros((1, m))])


def f_sharp(driver: DriverSpec, rho: float, t: float, m: int = 1, x=None,
            points: int = 2 ** 14, seed: int = 0) -> float:
    """``sup_{|y| <= rho} |F(t, x, y, 0)|``.

    Uses the driver's closed form when it has one.  Otherwise the supremum
    is taken over a scrambled Sobol sample of the ball (plus its boundary
    shell) and is only a lower estimate of the true value.
    """
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if driver.local_bound is not None:
        return float(driver.local_bound(rho, t))
    y = rho * _ball_points(m, points, seed)
    xx = np.zeros((y.shape[0], 1)) if x is None else np.broadcast_to(x, (y.shape[0],) + np.shape(x)[-1:])
    z = np.zeros(y.shape + (1,))
    vals = driver.eval(t, xx, y, z)
    return float(np.max(np.sqrt(np.sum(vals * vals, axis=-1))))


def f_sharp_is_estimate(driver: DriverSpec) -> bool:
    return driver.local_bound is None


@dataclass(frozen=True)
class SamplingBudget:
    """How hard :func:`check_assumptions` looks for counterexamples."""

    samples: int = 4096
    seed: int = 0
    half_width: float = 3.0
    z_scale: float = 3.0
    k: int = 1
    T: float = 1.0
    x0: np.ndarray | None = None
    rhos: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    prox_steps: tuple[float, ...] = (0.05, 0.2, 1.0)
    tol: float = 1e-10


def check_assumptions(phi: ConvexSpec, driver: DriverSpec, terminal: TerminalSpec,
                      budget: SamplingBudget = SamplingBudget()) -> EstimateReport:
    """Sample every testable clause of the standing assumptions.

    One report entry per clause with its worst margin (negative margins
    beyond ``budget.tol`` are violations) and where it occurred.  Nothing
    is raised: a failed clause shows up as a failed entry.
    """
    rng = np.random.default_rng(budget.seed)
    n, m, k = budget.samples, phi.dim, budget.k
    x0 = np.zeros(m) if budget.x0 is None else np.asarray(budget.x0, float)
    d = x0.shape[0]
    t = rng.uniform(0.0, budget.T, size=n)
    # evaluate per distinct time in a small grid so drivers may take scalar t
    t_grid = np.linspace(0.0, budget.T, 17)[:-1]
    t = t_grid[rng.integers(0, t_grid.size, size=n)]
    x = x0 + np.sqrt(budget.T) * rng.normal(size=(n, d))
    y = phi.u0 + rng.uniform(-budget.half_width, budget.half_width, size=(n, m))
    y2 = phi.u0 + rng.uniform(-budget.half_width, budget.half_width, size=(n, m))
    z = budget.z_scale * rng.normal(size=(n, m, k))
    z2 = budget.z_scale * rng.normal(size=(n, m, k))

    def F(yy, zz):
        out = np.empty_like(yy)
        for tv in t_grid:
            sel = t == tv
            out[sel] = driver.eval(float(tv), x[sel], yy[sel], zz[sel])
        return out

    rep = EstimateReport(name="assumptions", tolerance=budget.tol,
                         config={"driver": driver.describe(), "convex": phi.describe(),
                                 "terminal": terminal.describe(), "samples": n, "seed": budget.seed})
    entries = {}

    def record(clause, margins, where):
        j = int(np.argmin(margins))
        worst = float(margins[j])
        ok = worst >= -budget.tol * (1.0 + float(np.max(np.abs(margins[np.isfinite(margins)]), initial=0.0)) * 1e-6)
        entries[clause] = {"worst_margin": worst, "location": np.atleast_1d(where[j]).tolist(), "pass": bool(ok)}
        rep.add(f"worst_margin[{clause}]", worst)

    mu_t = np.array([driver.mu(float(tv)) for tv in t])
    ell_t = np.array([driver.ell(float(tv)) for tv in t])
    f1, f2 = F(y2, z), F(y, z)
    diff = y2 - y
    record("M_y", mu_t * np.sum(diff ** 2, axis=1) - np.sum(diff * (f1 - f2), axis=1), y)

    g1, g2 = F(y, z2), F(y, z)
    dz = np.sqrt(np.sum((z2 - z) ** 2, axis=(1, 2)))
    record("L_z", ell_t * dz - np.sqrt(np.sum((g1 - g2) ** 2, axis=1)), y)

    zero_z = np.zeros_like(z)
    ynorm = np.sqrt(np.sum(y * y, axis=1))
    fy0 = np.sqrt(np.sum(F(y, zero_z) ** 2, axis=1))
    margins = np.full(n, np.inf)
    for rho in budget.rhos:
        sel = ynorm <= rho
        if not sel.any():
            continue
        bound = np.array([f_sharp(driver, rho, float(tv), m=m) for tv in t_grid])
        bt = bound[np.searchsorted(t_grid, t[sel])]
        margins[sel] = np.minimum(margins[sel], bt - fy0[sel])
    record("B_y", margins, y)
    rep.flags["f_sharp_estimate"] = f_sharp_is_estimate(driver)

    # value of the generator at the anchor (after normalization this is F - u0_hat)
    rep.details["F_at_anchor"] = [
        driver.eval(float(tv), x0[None, :], phi.u0[None, :], np.zeros((1, m, k)))[0].tolist()
        for tv in t_grid]

    eta = terminal(x.reshape(n, d) if d == m else x)
    phi_eta = phi.value(eta)
    entries_i = np.isfinite(phi_eta)
    record("A4_i", np.where(entries_i, 1.0, -np.inf), eta)

    if driver.a4 is not None:
        a4 = driver.a4
        w = phi.u0 + rng.uniform(-budget.half_width, budget.half_width, size=(n, m))
        lam = np.asarray(budget.prox_steps)[rng.integers(0, len(budget.prox_steps), size=n)]
        u = np.empty_like(w)
        for lv in budget.prox_steps:
            sel = lam == lv
            u[sel] = phi.prox(w[sel], lv)
        u_hat = (w - u) / lam[:, None]
        fu = F(u, z)
        beta = np.array([a4.beta(float(tv)) for tv in t])
        bt = np.array([a4.b(float(tv)) for tv in t])
        un = np.sqrt(np.sum(u * u, axis=1))
        rhs = 0.5 * np.sum(u_hat ** 2, axis=1) + beta + bt * un ** a4.p + a4.kappa * np.sum(z * z, axis=(1, 2))
        record("A4_ii", rhs - np.sum(u_hat * fu, axis=1), u)

    if driver.a5 is not None:
        a5 = driver.a5
        ell_grid = np.array([driver.ell(float(tv)) for tv in t_grid])
        record("A5_ii", a5.L - ell_grid, t_grid)
        hgrid = budget.T / t_grid.size
        f_u0 = np.array([np.linalg.norm(driver.eval(float(tv), x0[None, :], phi.u0[None, :],
                                                    np.zeros((1, m, k)))[0]) for tv in t_grid])
        integral = float(np.sum(f_u0) * hgrid)
        eta_norm = np.sqrt(np.sum(eta * eta, axis=1))
        record("A5_iii", a5.M - (eta_norm + integral), eta)

    rep.details["entries"] = entries
    rep.passed = all(e["pass"] for e in entries.values())
    return rep

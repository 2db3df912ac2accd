"""Convex functions with proximal calculus and Moreau-Yosida regularization.

Every function in the catalog works on arrays of points with the state
dimension on the last axis, so a batch of ``M`` points in ``R^m`` is an
array of shape ``(M, m)``.  Values outside the effective domain are
``np.inf``.

The resolvent ``J_lam = (I + lam * d phi)^{-1}`` is exposed as
:meth:`ConvexSpec.prox`; the Yosida envelope and its gradient live on
:class:`YosidaView`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
from scipy.optimize import linprog

from .report import EstimateReport

INF = np.inf

# Slack for indicator membership, absorbs round-off of projections.
MEMBERSHIP_SLACK = 1e-9

EXACT_TOL = 1e-10
ITERATIVE_TOL = 1e-8


def _as_points(y, dim: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 0:
        y = y.reshape(1)
    if y.shape[-1] != dim:
        if dim == 1:
            y = y[..., None]
        else:
            raise ValueError(f"expected trailing dimension {dim}, got shape {y.shape}")
    return y


def _check_finite(y: np.ndarray) -> None:
    if not np.all(np.isfinite(y)):
        raise ValueError("input point has non-finite components")


def _norm(y: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(y * y, axis=-1))


class ConvexSpec:
    """A proper convex lower semicontinuous function on ``R^dim``.

    Subclasses implement ``_value`` and ``_prox``; ``_subgrad`` and
    ``_envelope`` have generic fallbacks.  The anchor ``(u0, u0_hat)`` must
    be a point of the graph of the subdifferential.  ``interior_radius``
    is ``(r0, c0)`` with the closed ball ``B(u0, r0)`` inside the domain
    and ``phi <= c0`` on it, or ``None``.
    """

    kind = "abstract"
    is_indicator = False
    #: absolute tolerance for checks involving this function's prox
    tolerance = EXACT_TOL

    def __init__(self, dim: int, anchor=None, interior_radius=None, params=None):
        if dim < 1:
            raise ValueError("dim must be a positive integer")
        self.dim = int(dim)
        self.params: dict[str, Any] = dict(params or {})
        if anchor is None:
            anchor = self._default_anchor()
        u0, u0_hat = anchor
        self.u0 = _as_points(u0, self.dim).reshape(self.dim).copy()
        self.u0_hat = _as_points(u0_hat, self.dim).reshape(self.dim).copy()
        if interior_radius is None:
            interior_radius = self._default_interior_radius()
        self.interior_radius = None if interior_radius is None else (
            float(interior_radius[0]), float(interior_radius[1]))

    # -- to be provided by subclasses -------------------------------------
    def _value(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _prox(self, y: np.ndarray, lam: float) -> np.ndarray:
        raise NotImplementedError

    def _default_anchor(self):
        raise ValueError(f"{self.kind}: an anchor (u0, u0_hat) is required")

    def _default_interior_radius(self):
        return None

    def _subgrad(self, y: np.ndarray) -> np.ndarray:
        # Minimal-norm element via the prox limit: (y - J_t y)/t -> min-norm
        # element as t -> 0, exact for indicators (returns 0 on the domain).
        t = 1e-8
        g = (y - self._prox(y, t)) / t
        g[~np.isfinite(self._value(y))] = np.nan
        return g

    def _envelope(self, y: np.ndarray, eps: float) -> np.ndarray:
        j = self._prox(y, eps)
        d = y - j
        return np.sum(d * d, axis=-1) / (2.0 * eps) + self._value(j)

    # -- public surface -----------------------------------------------------
    @property
    def anchor(self) -> tuple[np.ndarray, np.ndarray]:
        return self.u0, self.u0_hat

    def value(self, y) -> np.ndarray:
        """Function value, ``np.inf`` outside the domain."""
        return self._value(_as_points(y, self.dim))

    def prox(self, y, lam: float) -> np.ndarray:
        """Resolvent ``(I + lam d phi)^{-1}(y)``; total on ``R^m``."""
        if not lam > 0:
            raise ValueError("prox step must be positive")
        y = _as_points(y, self.dim)
        _check_finite(y)
        return self._prox(y, float(lam))

    def subgrad_at(self, y) -> np.ndarray:
        """Minimal-norm subgradient; rows are NaN outside ``Dom(d phi)``."""
        return self._subgrad(_as_points(y, self.dim))

    def envelope(self, y, eps: float) -> np.ndarray:
        return self._envelope(_as_points(y, self.dim), float(eps))

    def in_domain(self, y) -> np.ndarray:
        return np.isfinite(self.value(y))

    def describe(self) -> dict[str, Any]:
        return {"kind": self.kind, "dim": self.dim, **self.params}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.describe()})"


class Zero(ConvexSpec):
    """``phi = 0``; the unconstrained (free) case."""

    kind = "zero"

    def __init__(self, dim=1, anchor=None, interior_radius=None):
        super().__init__(dim, anchor, interior_radius)

    def _default_anchor(self):
        return np.zeros(self.dim), np.zeros(self.dim)

    def _default_interior_radius(self):
        return (1.0, 0.0)

    def _value(self, y):
        return np.zeros(y.shape[:-1])

    def _prox(self, y, lam):
        return y.copy()

    def _subgrad(self, y):
        return np.zeros_like(y)

    def _envelope(self, y, eps):
        return np.zeros(y.shape[:-1])


class Quadratic(ConvexSpec):
    """``phi(y) = (scale/2)|y - center|^2 + <linear, y>``."""

    kind = "quadratic"

    def __init__(self, dim=1, scale=1.0, center=None, linear=None, anchor=None,
                 interior_radius=None):
        self.scale = float(scale)
        if self.scale < 0:
            raise ValueError("quadratic scale must be nonnegative")
        self.center = np.zeros(dim) if center is None else np.broadcast_to(
            np.asarray(center, float), (dim,)).copy()
        self.linear = np.zeros(dim) if linear is None else np.broadcast_to(
            np.asarray(linear, float), (dim,)).copy()
        super().__init__(dim, anchor, interior_radius, params={
            "scale": self.scale, "center": self.center.tolist(),
            "linear": self.linear.tolist()})

    def _default_anchor(self):
        if self.scale > 0:
            return self.center - self.linear / self.scale, np.zeros(self.dim)
        return self.center, self.linear

    def _default_interior_radius(self):
        r0 = 1.0
        ball_max = 0.5 * self.scale * (np.linalg.norm(self.u0 - self.center) + r0) ** 2 \
            + float(self.linear @ self.u0) + r0 * np.linalg.norm(self.linear)
        return (r0, float(ball_max))

    def _value(self, y):
        d = y - self.center
        return 0.5 * self.scale * np.sum(d * d, axis=-1) + y @ self.linear

    def _prox(self, y, lam):
        return (y + lam * self.scale * self.center - lam * self.linear) / (1.0 + lam * self.scale)

    def _subgrad(self, y):
        return self.scale * (y - self.center) + self.linear

    def _envelope(self, y, eps):
        if self.scale == 0:
            return y @ self.linear - 0.5 * eps * float(self.linear @ self.linear)
        shift = self.center - self.linear / self.scale
        const = float(self.linear @ self.center) - float(self.linear @ self.linear) / (2 * self.scale)
        d = y - shift
        return self.scale / (2.0 * (1.0 + eps * self.scale)) * np.sum(d * d, axis=-1) + const


class _Indicator(ConvexSpec):
    is_indicator = True

    def _contains(self, y) -> np.ndarray:
        raise NotImplementedError

    def _value(self, y):
        return np.where(self._contains(y), 0.0, INF)

    def _envelope(self, y, eps):
        d = y - self._prox(y, eps)
        return np.sum(d * d, axis=-1) / (2.0 * eps)

    def _subgrad(self, y):
        g = np.zeros_like(y)
        g[~self._contains(y)] = np.nan
        return g

    def _default_anchor(self):
        return self._prox(np.zeros((1, self.dim)), 1.0)[0], np.zeros(self.dim)


class Box(_Indicator):
    """Indicator of ``[lower, upper]`` (componentwise, bounds may be infinite)."""

    kind = "box"

    def __init__(self, dim=1, lower=-1.0, upper=1.0, anchor=None, interior_radius=None):
        self.lower = np.broadcast_to(np.asarray(lower, float), (dim,)).copy()
        self.upper = np.broadcast_to(np.asarray(upper, float), (dim,)).copy()
        if np.any(self.lower > self.upper):
            raise ValueError("box lower bound exceeds upper bound")
        super().__init__(dim, anchor, interior_radius, params={
            "lower": self.lower.tolist(), "upper": self.upper.tolist()})

    def _default_anchor(self):
        mid = np.where(np.isfinite(self.lower) & np.isfinite(self.upper),
                       0.5 * (self.lower + self.upper), np.clip(0.0, self.lower, self.upper))
        return mid, np.zeros(self.dim)

    def _default_interior_radius(self):
        gaps = np.concatenate([self.u0 - self.lower, self.upper - self.u0])
        r0 = float(np.min(gaps))
        return (r0, 0.0) if r0 > 0 else None

    def _contains(self, y):
        return np.all((y >= self.lower - MEMBERSHIP_SLACK) & (y <= self.upper + MEMBERSHIP_SLACK), axis=-1)

    def _prox(self, y, lam):
        return np.clip(y, self.lower, self.upper)


class Ball(_Indicator):
    """Indicator of the closed Euclidean ball ``B(center, radius)``."""

    kind = "ball"

    def __init__(self, dim=2, radius=1.0, center=None, anchor=None, interior_radius=None):
        self.radius = float(radius)
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")
        self.center = np.zeros(dim) if center is None else np.broadcast_to(
            np.asarray(center, float), (dim,)).copy()
        super().__init__(dim, anchor, interior_radius, params={
            "radius": self.radius, "center": self.center.tolist()})

    def _default_anchor(self):
        return self.center.copy(), np.zeros(self.dim)

    def _default_interior_radius(self):
        r0 = self.radius - float(np.linalg.norm(self.u0 - self.center))
        return (r0, 0.0) if r0 > 0 else None

    def _contains(self, y):
        return _norm(y - self.center) <= self.radius + MEMBERSHIP_SLACK

    def _prox(self, y, lam):
        d = y - self.center
        n = _norm(d)[..., None]
        scale = np.where(n > self.radius, self.radius / np.where(n > 0, n, 1.0), 1.0)
        return self.center + d * scale


class Halfspace(_Indicator):
    """Indicator of ``{y : <normal, y> <= offset}``."""

    kind = "halfspace"

    def __init__(self, dim=1, normal=1.0, offset=0.0, anchor=None, interior_radius=None):
        self.normal = np.broadcast_to(np.asarray(normal, float), (dim,)).copy()
        self.offset = float(offset)
        self._nn = float(self.normal @ self.normal)
        if self._nn == 0:
            raise ValueError("halfspace normal must be nonzero")
        super().__init__(dim, anchor, interior_radius, params={
            "normal": self.normal.tolist(), "offset": self.offset})

    def _default_interior_radius(self):
        r0 = (self.offset - float(self.normal @ self.u0)) / np.sqrt(self._nn)
        return (r0, 0.0) if r0 > 0 else None

    def _contains(self, y):
        return y @ self.normal <= self.offset + MEMBERSHIP_SLACK * np.sqrt(self._nn)

    def _prox(self, y, lam):
        excess = np.maximum(y @ self.normal - self.offset, 0.0)
        return y - (excess / self._nn)[..., None] * self.normal


class Polyhedron(_Indicator):
    """Indicator of ``{y : A y <= b}``, projected by Dykstra's algorithm.

    The projection is iterative: it stops once successive sweeps move no
    point by more than ``tol`` and the worst constraint violation is below
    ``tol``, or raises after ``max_iter`` sweeps.
    """

    kind = "polyhedron"
    tolerance = ITERATIVE_TOL

    def __init__(self, A, b, anchor=None, interior_radius=None, tol=1e-12, max_iter=10_000):
        self.A = np.atleast_2d(np.asarray(A, float))
        self.b = np.asarray(b, float).reshape(-1)
        if self.A.shape[0] != self.b.shape[0]:
            raise ValueError("A and b disagree on the number of constraints")
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self._row_nn = np.sum(self.A * self.A, axis=1)
        self._cheb = self._chebyshev()
        super().__init__(self.A.shape[1], anchor, interior_radius, params={
            "A": self.A.tolist(), "b": self.b.tolist()})

    def _chebyshev(self):
        m = self.A.shape[1]
        norms = np.sqrt(self._row_nn)
        c = np.zeros(m + 1)
        c[-1] = -1.0
        res = linprog(c, A_ub=np.hstack([self.A, norms[:, None]]), b_ub=self.b,
                      bounds=[(None, None)] * m + [(0, None)], method="highs")
        if res.status != 0:
            raise ValueError("polyhedron is empty or its Chebyshev centre is unbounded")
        return res.x[:m], float(res.x[-1])

    def _default_anchor(self):
        return self._cheb[0], np.zeros(self.dim)

    def _default_interior_radius(self):
        slack = (self.b - self.A @ self.u0) / np.sqrt(self._row_nn)
        r0 = float(np.min(slack))
        return (r0, 0.0) if r0 > 0 else None

    def _contains(self, y):
        return np.all(y @ self.A.T <= self.b + MEMBERSHIP_SLACK * np.sqrt(self._row_nn), axis=-1)

    def _prox(self, y, lam):
        shape = y.shape
        x = y.reshape(-1, self.dim).copy()
        n_c = self.A.shape[0]
        incr = np.zeros((n_c,) + x.shape)
        active = np.ones(x.shape[0], dtype=bool)
        for _ in range(self.max_iter):
            idx = np.nonzero(active)[0]
            xa = x[idx]
            start = xa.copy()
            for j in range(n_c):
                w = xa + incr[j, idx]
                excess = np.maximum(w @ self.A[j] - self.b[j], 0.0)
                z = w - (excess / self._row_nn[j])[:, None] * self.A[j]
                incr[j, idx] = w - z
                xa = z
            x[idx] = xa
            moved = np.max(np.abs(xa - start), axis=1)
            viol = np.max(xa @ self.A.T - self.b, axis=1)
            done = (moved <= self.tol) & (viol <= self.tol)
            active[idx[done]] = False
            if not active.any():
                return x.reshape(shape)
        raise RuntimeError(f"Dykstra projection did not converge in {self.max_iter} sweeps")


class ScaledNorm(ConvexSpec):
    """``phi(y) = weight * |y|`` (Euclidean norm); prox is block soft-thresholding."""

    kind = "norm"

    def __init__(self, dim=1, weight=1.0, anchor=None, interior_radius=None):
        self.weight = float(weight)
        if self.weight < 0:
            raise ValueError("norm weight must be nonnegative")
        super().__init__(dim, anchor, interior_radius, params={"weight": self.weight})

    def _default_anchor(self):
        return np.zeros(self.dim), np.zeros(self.dim)

    def _default_interior_radius(self):
        r0 = 1.0
        return (r0, self.weight * (float(np.linalg.norm(self.u0)) + r0))

    def _value(self, y):
        return self.weight * _norm(y)

    def _prox(self, y, lam):
        n = _norm(y)[..., None]
        shrink = np.maximum(0.0, 1.0 - lam * self.weight / np.where(n > 0, n, 1.0))
        return y * shrink

    def _subgrad(self, y):
        n = _norm(y)[..., None]
        return np.where(n > 0, self.weight * y / np.where(n > 0, n, 1.0), 0.0)

    def _envelope(self, y, eps):
        n = _norm(y)
        thr = eps * self.weight
        return np.where(n <= thr, n * n / (2.0 * eps), self.weight * n - 0.5 * eps * self.weight ** 2)


class Normalized(ConvexSpec):
    """``phi(y) - phi(u0) - <u0_hat, y - u0>`` for an anchored base function.

    The result attains its minimum ``0`` at ``u0``; its prox is the base
    prox applied to ``y + lam * u0_hat``.
    """

    def __init__(self, base: ConvexSpec):
        self.base = base
        self.kind = base.kind
        self.is_indicator = base.is_indicator
        self.tolerance = base.tolerance
        self._phi_u0 = float(np.reshape(base.value(base.u0), -1)[0])
        if not np.isfinite(self._phi_u0):
            raise ValueError("anchor u0 lies outside the domain")
        ir = None
        if base.interior_radius is not None:
            r0, c0 = base.interior_radius
            ir = (r0, c0 - self._phi_u0 + r0 * float(np.linalg.norm(base.u0_hat)))
        super().__init__(base.dim, (base.u0, np.zeros(base.dim)), ir,
                         params={**base.params, "normalized": True})

    def _value(self, y):
        return self.base._value(y) - self._phi_u0 - (y - self.base.u0) @ self.base.u0_hat

    def _prox(self, y, lam):
        return self.base._prox(y + lam * self.base.u0_hat, lam)

    def _subgrad(self, y):
        return self.base._subgrad(y) - self.base.u0_hat


CATALOG: dict[str, Callable[..., ConvexSpec]] = {
    "zero": Zero,
    "quadratic": Quadratic,
    "box": Box,
    "ball": Ball,
    "halfspace": Halfspace,
    "polyhedron": Polyhedron,
    "norm": ScaledNorm,
}


def make_convex(kind: str, **params) -> ConvexSpec:
    """Build a catalog function from its name and parameter block."""
    try:
        ctor = CATALOG[kind]
    except KeyError:
        raise ValueError(f"unknown convex function kind {kind!r}; "
                         f"choose from {sorted(CATALOG)}") from None
    if "anchor" in params and params["anchor"] is not None:
        params["anchor"] = tuple(params["anchor"])
    return ctor(**params)


def catalog_examples() -> list[ConvexSpec]:
    """One representative of each catalog entry (plus a normalized one)."""
    tri = Polyhedron(A=[[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], b=[1.0, 1.0, 1.0])
    return [
        Zero(dim=1),
        Quadratic(dim=2, scale=2.0, center=[0.5, -1.0], linear=[0.3, 0.0]),
        Box(dim=1, lower=-1.0, upper=1.0),
        Box(dim=2, lower=[0.0, -1.0], upper=[np.inf, 2.0]),
        Ball(dim=2, radius=1.0),
        Halfspace(dim=2, normal=[1.0, 2.0], offset=1.0),
        tri,
        ScaledNorm(dim=2, weight=1.5),
        Normalized(Quadratic(dim=1, scale=1.0, linear=[1.0], anchor=([0.0], [1.0]))),
    ]


# ---------------------------------------------------------------------------
# Moreau-Yosida regularization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class YosidaView:
    """The Yosida regularization of ``base`` at level ``epsilon``."""

    base: ConvexSpec
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def J(self, y) -> np.ndarray:
        return self.base.prox(y, self.epsilon)

    def value(self, y) -> np.ndarray:
        return yosida_value(self, y)

    def grad(self, y) -> np.ndarray:
        return yosida_grad(self, y)


def yosida_value(view: YosidaView, y) -> np.ndarray:
    """Moreau envelope ``min_v |y - v|^2/(2 eps) + phi(v)``."""
    y = _as_points(y, view.base.dim)
    _check_finite(y)
    return view.base._envelope(y, view.epsilon)


def yosida_grad(view: YosidaView, y) -> np.ndarray:
    """Gradient ``(y - J_eps y)/eps`` of the envelope."""
    y = _as_points(y, view.base.dim)
    _check_finite(y)
    return (y - view.base._prox(y, view.epsilon)) / view.epsilon


def resolvent_of_yosida(view: YosidaView, h: float, x) -> np.ndarray:
    """Solve ``y + h * grad phi_eps(y) = x`` in closed form.

    Uses ``y = (eps x + h J_{eps+h}(x)) / (eps + h)``.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    x = _as_points(x, view.base.dim)
    _check_finite(x)
    eps = view.epsilon
    j = view.base._prox(x, eps + h)
    y = (eps * x + h * j) / (eps + h)
    # points already fixed by the prox are returned untouched (no rounding)
    fixed = np.all(j == x, axis=-1, keepdims=True)
    return np.where(fixed, x, y)


def normalize(phi: ConvexSpec, driver=None):
    """Shift ``phi`` so that its anchor becomes a zero minimum.

    Returns ``(phi_tilde, driver_tilde)`` with ``phi_tilde(u0) = 0`` and
    ``driver_tilde = F - u0_hat``.  ``driver`` may be ``None``.
    """
    if phi.u0 is None or phi.u0_hat is None:
        raise ValueError("normalize needs an anchor (u0, u0_hat)")
    if isinstance(phi, Normalized) or (not np.any(phi.u0_hat)
                                       and float(np.reshape(phi.value(phi.u0), -1)[0]) == 0.0):
        phi_t = phi
    else:
        phi_t = Normalized(phi)
    drv_t = None
    if driver is not None:
        drv_t = driver.shifted(-phi.u0_hat) if np.any(phi.u0_hat) else driver
    return phi_t, drv_t


def is_normalized(phi: ConvexSpec, atol: float = 0.0) -> bool:
    return (not np.any(np.abs(phi.u0_hat) > atol)) and abs(float(np.reshape(phi.value(phi.u0), -1)[0])) <= atol


# ---------------------------------------------------------------------------
# Sampled property checks
# ---------------------------------------------------------------------------

def _sample_box(rng, n, center, half_width):
    return center + rng.uniform(-half_width, half_width, size=(n, center.shape[0]))


def check_yosida_inequalities(view_a: YosidaView, view_b: YosidaView, samples: int = 10_000,
                              seed: int = 0, half_width: float = 5.0,
                              tol: float | None = None) -> EstimateReport:
    """Sample the standard Yosida inequalities on random pairs.

    Checks, with ``g_e = grad phi_e``:

    * (a) ``g_e(x)`` is a subgradient of ``phi`` at ``J_e(x)``;
    * (b) ``|g_e(x) - g_e(y)| <= |x - y| / e``;
    * (c) ``<g_e(x) - g_e(y), x - y> >= 0``;
    * (d) ``<g_e(x) - g_d(y), x - y> >= -(e + d) <g_e(x), g_d(y)>``.

    Violations are reported, never raised.
    """
    phi = view_a.base
    if view_b.base is not phi:
        raise ValueError("both views must share the same base function")
    tol = phi.tolerance if tol is None else tol
    rng = np.random.default_rng(seed)
    x = _sample_box(rng, samples, phi.u0, half_width)
    y = _sample_box(rng, samples, phi.u0, half_width)
    v = _sample_box(rng, samples, phi.u0, half_width)
    ea, eb = view_a.epsilon, view_b.epsilon
    ga_x, ga_y = yosida_grad(view_a, x), yosida_grad(view_a, y)
    gb_y = yosida_grad(view_b, y)
    diff = x - y

    margins = {}
    for name, view, g in (("a", view_a, ga_x), ("a_b", view_b, yosida_grad(view_b, x))):
        j = view.J(x)
        phi_v = phi.value(v)
        lin = phi.value(j) + np.sum(g * (v - j), axis=-1)
        m = np.where(np.isinf(phi_v), INF, phi_v - lin)
        margins[name] = m
    margins["b"] = _norm(diff) / ea - _norm(ga_x - ga_y)
    margins["b_b"] = _norm(diff) / eb - _norm(gb_y - yosida_grad(view_b, x))
    margins["c"] = np.sum((ga_x - ga_y) * diff, axis=-1)
    margins["d"] = np.sum((ga_x - gb_y) * diff, axis=-1) + (ea + eb) * np.sum(ga_x * gb_y, axis=-1)

    rep = EstimateReport(name="yosida_inequalities", tolerance=tol,
                         config={"kind": phi.kind, "eps_a": ea, "eps_b": eb,
                                 "samples": samples, "seed": seed, "half_width": half_width})
    worst = {}
    for name, m in margins.items():
        k = int(np.argmin(m))
        worst[name] = float(m[k])
        rep.add(f"worst_margin_{name}", m[k])
        rep.details[f"location_{name}"] = x[k].tolist()
    rep.details["worst"] = worst
    rep.passed = all(w >= -tol for w in worst.values())
    return rep


def check_convex_spec(phi: ConvexSpec, samples: int = 10_000, seed: int = 0,
                      half_width: float = 5.0, lam: float = 0.7,
                      eps_grid=(0.05, 0.1, 0.5, 1.0, 2.0), tol: float | None = None) -> EstimateReport:
    """Sample the defining invariants of a catalog function.

    Covers convexity along segments, prox nonexpansiveness, prox
    optimality, anchor validity, the interior-ball bound, the envelope
    identity, the ordering ``phi(J y) <= phi_eps(y) <= phi(y)`` and
    monotonicity of the envelope in ``eps``.
    """
    tol = phi.tolerance if tol is None else tol
    rng = np.random.default_rng(seed)
    x = _sample_box(rng, samples, phi.u0, half_width)
    y = _sample_box(rng, samples, phi.u0, half_width)
    v = _sample_box(rng, samples, phi.u0, half_width)
    theta = rng.uniform(0, 1, size=(samples, 1))
    margins: dict[str, np.ndarray] = {}

    # convexity, only on pairs inside the domain
    px, py = phi.prox(x, lam), phi.prox(y, lam)
    fx, fy = phi.value(px), phi.value(py)
    mid = theta * px + (1 - theta) * py
    margins["convexity"] = theta[:, 0] * fx + (1 - theta[:, 0]) * fy - phi.value(mid)

    margins["nonexpansive"] = _norm(x - y) - _norm(px - py)

    obj_p = np.sum((x - px) ** 2, axis=-1) / (2 * lam) + phi.value(px)
    obj_v = np.sum((x - v) ** 2, axis=-1) / (2 * lam) + phi.value(v)
    margins["prox_optimality"] = np.where(np.isinf(obj_v), INF, obj_v - obj_p)

    f_u0 = float(np.reshape(phi.value(phi.u0), -1)[0])
    fv = phi.value(v)
    margins["anchor"] = np.where(np.isinf(fv), INF, fv - f_u0 - (v - phi.u0) @ phi.u0_hat)

    if phi.interior_radius is not None:
        r0, c0 = phi.interior_radius
        d = rng.normal(size=(samples, phi.dim))
        d /= _norm(d)[:, None]
        d *= rng.uniform(0, 1, size=(samples, 1)) ** (1.0 / phi.dim)
        d[: max(1, samples // 4)] /= _norm(d[: max(1, samples // 4)])[:, None]
        margins["interior_ball"] = c0 - phi.value(phi.u0 + r0 * d)

    prev = None
    for eps in eps_grid:
        view = YosidaView(phi, eps)
        env = yosida_value(view, x)
        j = view.J(x)
        formula = np.sum((x - j) ** 2, axis=-1) / (2 * eps) + phi.value(j)
        margins[f"envelope_identity_{eps}"] = -np.abs(env - formula)
        margins[f"envelope_upper_{eps}"] = np.where(np.isinf(phi.value(x)), INF, phi.value(x) - env)
        if prev is not None:
            margins[f"envelope_monotone_{eps}"] = prev - env
        prev = env
        if is_normalized(phi):
            margins[f"ordering_lower_{eps}"] = env - phi.value(j)
            margins[f"ordering_zero_{eps}"] = phi.value(j) - 0.0

    rep = EstimateReport(name="convex_spec", tolerance=tol,
                         config={**phi.describe(), "samples": samples, "seed": seed})
    worst = {}
    for name, m in margins.items():
        k = int(np.argmin(m))
        worst[name] = float(m[k])
        rep.add(f"worst_margin_{name}", m[k])
    rep.details["worst"] = worst
    rep.passed = all(w >= -tol for w in worst.values())
    return rep

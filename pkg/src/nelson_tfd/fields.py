"""Velocity fields from ``Psi = exp(R + iS)`` and residuals of the field equations.

Scalar fields on the doubled plane ``(x, x_tilde)`` come in two
representations that share one algebra:

* closed form: a sympy expression in :data:`X` and :data:`XT`; derivatives are
  exact and the expression is only evaluated numerically at the end;
* gridded: samples on a uniform square grid; derivatives use second-order
  central stencils (second-order one-sided stencils on the edge rows).

Products and sums are formed before differentiating, so ``d(vP)/dx`` on a
grid is the finite difference of the sampled product.  All residuals are
stationary (``dP/dt = du/dt = dv/dt = 0``); their max-norm is taken over the
whole grid for closed-form inputs and over the grid minus a two-cell margin
otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import sympy as sp

from .core import GridConvergenceError, InsufficientSamplesError, PhysicalParams, coth_half, csch_half
from .analytic import r_eq_matrix, stationary_covariance
from .sde import DriftSet

__all__ = [
    "X",
    "XT",
    "Grid",
    "ScalarField2D",
    "VelocityFields",
    "velocities_from_rs",
    "equilibrium_fields",
    "harmonic_potential",
    "osmotic_residual",
    "osmotic_field",
    "continuity_residual",
    "fokker_planck_residual",
    "kinematical_residual",
    "dynamical_residual",
    "continuity_field",
    "fokker_planck_field",
    "osmotic_divergence_field",
    "kinematical_field",
    "dynamical_field",
    "mean_derivative_check",
    "central_difference",
]

X, XT = sp.symbols("x x_tilde", real=True)
MARGIN = 2


@dataclass(frozen=True)
class Grid:
    """Uniform square grid on ``[-L, L]^2`` with spacing ``h``."""

    L: float
    h: float

    def __post_init__(self):
        if not (self.h > 0 and self.L > 0):
            raise ValueError("grid needs L > 0 and h > 0")
        cells = 2.0 * self.L / self.h
        if abs(cells - round(cells)) > 1e-6 * max(1.0, cells):
            raise ValueError(f"2L/h must be an integer, got {cells}")

    @classmethod
    def default(cls, params: PhysicalParams, h: float | None = None) -> "Grid":
        """``L = 6 sqrt(var_x)`` rounded up to whole cells, ``h = 0.005`` lengths.

        At high temperature ``x`` and ``x_tilde`` are nearly collinear and
        ``exp(2 R_eq)`` would underflow at the corners ``(L, -L)``; ``L`` is
        then capped so that ``2 R_eq >= -600`` everywhere on the grid.
        """
        h = 0.005 * params.length_scale if h is None else h
        L = 6.0 * math.sqrt(stationary_covariance(params).var_x)
        k = params.m * params.omega / params.hbar
        L = min(L, math.sqrt(300.0 / (k * (coth_half(params) + csch_half(params)))))
        return cls(math.ceil(L / h) * h, h)

    @property
    def n(self) -> int:
        return int(round(2.0 * self.L / self.h)) + 1

    @property
    def coords(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.n)

    def mesh(self):
        c = self.coords
        return np.meshgrid(c, c, indexing="ij")

    def refined(self) -> "Grid":
        return Grid(self.L, self.h / 2)

    def interior(self, margin: int = MARGIN):
        s = slice(margin, self.n - margin) if margin else slice(None)
        return (s, s)


def _d1(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    return np.gradient(values, h, axis=axis, edge_order=2)


def _d2(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    f = np.moveaxis(values, axis, 0)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / (h * h)
    out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / (h * h)
    out[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / (h * h)
    return np.moveaxis(out, 0, axis)


class ScalarField2D:
    """A real field ``f(x, x_tilde)``, closed-form or gridded.

    Build with :meth:`from_expr`, :meth:`from_grid` or :meth:`from_function`
    (a vectorized callable, usable only after :meth:`sample`).
    """

    def __init__(self, expr=None, values=None, grid: Grid | None = None, func=None):
        if sum(a is not None for a in (expr, values, func)) != 1:
            raise ValueError("give exactly one of expr, values, func")
        if values is not None:
            values = np.asarray(values, dtype=float)
            if grid is None or values.shape != (grid.n, grid.n):
                raise ValueError("grid values must match the grid shape")
            if not np.all(np.isfinite(values)):
                raise ValueError("grid values must be finite")
        self.expr = None if expr is None else sp.sympify(expr)
        self.values = values
        self.grid = grid if values is not None else None
        self.func = func
        self._compiled = None

    @classmethod
    def from_expr(cls, expr) -> "ScalarField2D":
        return cls(expr=expr)

    @classmethod
    def from_grid(cls, values, grid: Grid) -> "ScalarField2D":
        return cls(values=values, grid=grid)

    @classmethod
    def from_function(cls, func) -> "ScalarField2D":
        return cls(func=func)

    @property
    def closed(self) -> bool:
        return self.expr is not None

    @property
    def gridded(self) -> bool:
        return self.values is not None

    def __repr__(self):
        if self.closed:
            return f"ScalarField2D({self.expr})"
        if self.gridded:
            return f"ScalarField2D(grid L={self.grid.L}, h={self.grid.h})"
        return f"ScalarField2D(func={self.func!r})"

    def evaluate(self, x, x_tilde):
        """Values at arbitrary points (not available for gridded fields)."""
        x = np.asarray(x, dtype=float)
        x_tilde = np.asarray(x_tilde, dtype=float)
        if self.closed:
            if self._compiled is None:
                self._compiled = sp.lambdify((X, XT), self.expr, "numpy")
            out = self._compiled(x, x_tilde)
            return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(x, x_tilde).shape)
        if self.func is not None:
            return np.asarray(self.func(x, x_tilde), dtype=float)
        raise TypeError("gridded fields can only be read on their own grid")

    def on(self, grid: Grid) -> np.ndarray:
        """Values at the nodes of ``grid``."""
        if self.gridded:
            if grid != self.grid:
                raise ValueError("field lives on a different grid")
            return self.values
        xs, xts = grid.mesh()
        return np.array(self.evaluate(xs, xts), dtype=float)

    def sample(self, grid: Grid) -> "ScalarField2D":
        return ScalarField2D.from_grid(self.on(grid), grid)

    def d(self, axis: int) -> "ScalarField2D":
        """First derivative along ``x`` (axis 0) or ``x_tilde`` (axis 1)."""
        if self.closed:
            return ScalarField2D.from_expr(sp.diff(self.expr, (X, XT)[axis]))
        if self.gridded:
            return ScalarField2D.from_grid(_d1(self.values, self.grid.h, axis), self.grid)
        raise TypeError("sample a function-backed field before differentiating")

    def d2(self, axis: int) -> "ScalarField2D":
        """Second derivative; a compact three-point stencil on grids."""
        if self.closed:
            return ScalarField2D.from_expr(sp.diff(self.expr, (X, XT)[axis], 2))
        if self.gridded:
            return ScalarField2D.from_grid(_d2(self.values, self.grid.h, axis), self.grid)
        raise TypeError("sample a function-backed field before differentiating")

    def log(self) -> "ScalarField2D":
        if self.closed:
            return ScalarField2D.from_expr(sp.expand_log(sp.log(self.expr), force=True))
        if self.gridded:
            if np.any(self.values <= 0):
                raise ValueError("log of a non-positive field")
            return ScalarField2D.from_grid(np.log(self.values), self.grid)
        return ScalarField2D.from_function(lambda a, b: np.log(self.func(a, b)))

    def _binary(self, other, op):
        if isinstance(other, (int, float, np.floating, np.integer)):
            if self.closed:
                return ScalarField2D.from_expr(op(self.expr, sp.Float(other)))
            if self.gridded:
                return ScalarField2D.from_grid(op(self.values, float(other)), self.grid)
            f = self.func
            return ScalarField2D.from_function(lambda a, b: op(f(a, b), float(other)))
        if not isinstance(other, ScalarField2D):
            return NotImplemented
        if self.closed and other.closed:
            return ScalarField2D.from_expr(op(self.expr, other.expr))
        grid = self.grid or other.grid
        if grid is None:
            f, g = self, other
            return ScalarField2D.from_function(lambda a, b: op(f.evaluate(a, b), g.evaluate(a, b)))
        return ScalarField2D.from_grid(op(self.on(grid), other.on(grid)), grid)

    def __add__(self, other):
        return self._binary(other, lambda a, b: a + b)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, lambda a, b: a - b)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._binary(other, lambda a, b: a * b)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def to_text(self) -> str:
        """Plain-text matrix: header ``# L=... h=...`` then row-major rows."""
        if not self.gridded:
            raise TypeError("only gridded fields export to text")
        lines = [f"# L={self.grid.L!r} h={self.grid.h!r}"]
        lines += [" ".join("%.17g" % v for v in row) for row in self.values]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ScalarField2D":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("#"):
            raise ValueError("missing '# L=... h=...' header")
        meta = dict(tok.split("=", 1) for tok in lines[0].lstrip("#").split())
        grid = Grid(float(meta["L"]), float(meta["h"]))
        values = np.array([[float(v) for v in ln.split()] for ln in lines[1:]])
        return cls.from_grid(values, grid)


def _field(f) -> ScalarField2D:
    if isinstance(f, ScalarField2D):
        return f
    if isinstance(f, (sp.Basic, int, float)):
        return ScalarField2D.from_expr(f)
    if callable(f):
        return ScalarField2D.from_function(f)
    raise TypeError(f"cannot interpret {f!r} as a scalar field")


def _resolve(fields, grid: Grid | None):
    """Common representation: all closed (exact) or all on one grid."""
    grids = {f.grid for f in fields if f.gridded}
    if len(grids) > 1:
        raise ValueError("gridded inputs live on different grids")
    if grids:
        g = grids.pop()
        return [f if f.gridded else f.sample(g) for f in fields], g, False
    if grid is None:
        raise ValueError("closed-form inputs need an evaluation grid")
    if all(f.closed for f in fields):
        return list(fields), grid, True
    return [f if f.gridded else f.sample(grid) for f in fields], grid, False


def _norm(values: np.ndarray, grid: Grid, exact: bool) -> float:
    return float(np.max(np.abs(values[grid.interior(0 if exact else MARGIN)])))


@dataclass
class VelocityFields:
    """Current and osmotic velocities ``v, v_tilde, u, u_tilde``.

    Only built from a phase ``S`` and amplitude ``R`` (see
    :func:`velocities_from_rs`), so ``v`` and ``v_tilde`` are always gradients
    of one scalar.
    """

    v: ScalarField2D
    v_tilde: ScalarField2D
    u: ScalarField2D
    u_tilde: ScalarField2D
    params: PhysicalParams

    def drift_fields(self):
        """``(b, b_star, b_tilde, b_tilde_star)`` as scalar fields."""
        return (self.v + self.u, self.v - self.u,
                self.v_tilde + self.u_tilde, self.v_tilde - self.u_tilde)

    def to_drifts(self) -> DriftSet:
        """Drift callables for the integrators (closed-form fields only)."""
        fields = self.drift_fields()
        if not all(f.closed for f in fields):
            raise TypeError("integrator drifts need closed-form velocity fields")

        def wrap(f):
            return lambda x, xt, t=0.0: f.evaluate(x, xt)

        return DriftSet(*(wrap(f) for f in fields))


def _convergence_check(field: ScalarField2D, derivative: ScalarField2D, axis: int, tol=0.1):
    fine = derivative.values[::2, ::2]
    coarse = _d1(field.values[::2, ::2], 2 * field.grid.h, axis)
    scale = np.max(np.abs(fine))
    if scale > 0 and np.max(np.abs(fine - coarse)) > tol * scale:
        raise GridConvergenceError(
            f"derivative along axis {axis} changes by more than {tol:.0%} between h and 2h; refine the grid"
        )


def velocities_from_rs(R, S, params: PhysicalParams, check: bool = True) -> VelocityFields:
    """``v = (hbar/m) dS/dx``, ``v_tilde = -(hbar/m) dS/dxt``, ``u = (hbar/m) dR/dx``,
    ``u_tilde = (hbar/m) dR/dxt``.

    Raises
    ------
    GridConvergenceError
        For gridded input whose derivatives at ``h`` and ``2h`` differ by
        more than 10% of their magnitude.
    """
    R, S = _field(R), _field(S)
    if R.func is not None or S.func is not None:
        raise TypeError("sample function-backed R and S onto a grid first")
    k = params.hbar / params.m
    dR = [R.d(0), R.d(1)]
    dS = [S.d(0), S.d(1)]
    if check:
        for field, derivs in ((R, dR), (S, dS)):
            if field.gridded and field.grid.n >= 9:
                for axis in (0, 1):
                    _convergence_check(field, derivs[axis], axis)
    return VelocityFields(v=dS[0] * k, v_tilde=dS[1] * -k, u=dR[0] * k, u_tilde=dR[1] * k,
                          params=params)


def equilibrium_fields(params: PhysicalParams):
    """Closed-form ``(R_eq, S_eq, P_eq)`` with ``P_eq`` normalized."""
    K = r_eq_matrix(params)
    R = -sp.Rational(1, 2) * (sp.Float(K[0, 0]) * X ** 2 + 2 * sp.Float(K[0, 1]) * X * XT
                              + sp.Float(K[1, 1]) * XT ** 2)
    cov = stationary_covariance(params)
    det = cov.var_x * cov.var_x_tilde - cov.cov_xxt ** 2
    P = sp.exp(2 * R) / sp.Float(2 * math.pi * math.sqrt(det))
    return ScalarField2D.from_expr(R), ScalarField2D.from_expr(sp.Integer(0)), ScalarField2D.from_expr(P)


def harmonic_potential(params: PhysicalParams):
    """``V(x) = m omega^2 x^2 / 2`` as a sympy expression in :data:`X`."""
    return sp.Float(0.5 * params.m * params.omega ** 2) * X ** 2


def _potential_difference(potential) -> ScalarField2D:
    if isinstance(potential, sp.Basic):
        return ScalarField2D.from_expr(potential - potential.subs(X, XT))
    if callable(potential):
        return ScalarField2D.from_function(lambda a, b: potential(a) - potential(b))
    raise TypeError("potential must be a sympy expression in X or a callable V(x)")


def _drift_tuple(drifts):
    if isinstance(drifts, VelocityFields):
        return drifts.drift_fields()
    if isinstance(drifts, DriftSet):
        return tuple(ScalarField2D.from_function(lambda a, b, f=f: f(a, b, 0.0))
                     for f in (drifts.b, drifts.b_star, drifts.b_tilde, drifts.b_tilde_star))
    fields = tuple(_field(f) for f in drifts)
    if len(fields) != 4:
        raise ValueError("need four drift fields (b, b_star, b_tilde, b_tilde_star)")
    return fields


def _positive(P: ScalarField2D, grid: Grid):
    if np.any(P.on(grid) <= 0):
        raise ValueError("probability density must be positive on the grid")


def _eval(field: ScalarField2D, grid: Grid) -> np.ndarray:
    return field.on(grid)


def osmotic_field(vel: VelocityFields, P, params: PhysicalParams, grid: Grid | None = None):
    """``u - (hbar/2m) d ln P/dx`` and its tilde partner, stacked on axis 0.

    Returns ``(values, grid, exact)`` with ``values.shape == (2, n, n)``.
    """
    (u, ut, P), grid, exact = _resolve([vel.u, vel.u_tilde, _field(P)], grid)
    _positive(P, grid)
    lnP = P.log()
    D = 0.5 * params.hbar / params.m
    r1 = _eval(u, grid) - D * _eval(lnP.d(0), grid)
    r2 = _eval(ut, grid) - D * _eval(lnP.d(1), grid)
    return np.stack([r1, r2]), grid, exact


def osmotic_residual(vel: VelocityFields, P, params: PhysicalParams, grid: Grid | None = None) -> float:
    """Max-norm of ``u - (hbar/2m) d ln P/dx`` and its tilde partner."""
    values, grid, exact = osmotic_field(vel, P, params, grid)
    return max(_norm(values[0], grid, exact), _norm(values[1], grid, exact))


def continuity_field(vel: VelocityFields, P, params: PhysicalParams, grid: Grid | None = None):
    """``dP/dt`` implied by the continuity equation, ``-(d(vP)/dx + d(vt P)/dxt)``.

    Returns ``(values, grid, exact)``.
    """
    (v, vt, P), grid, exact = _resolve([vel.v, vel.v_tilde, _field(P)], grid)
    _positive(P, grid)
    out = -(_eval((v * P).d(0), grid) + _eval((vt * P).d(1), grid))
    return out, grid, exact


def continuity_residual(vel: VelocityFields, P, params: PhysicalParams, grid: Grid | None = None) -> float:
    """Max-norm of ``d(vP)/dx + d(vt P)/dxt`` (stationary ``P``)."""
    values, grid, exact = continuity_field(vel, P, params, grid)
    return _norm(values, grid, exact)


def fokker_planck_field(drifts, P, params: PhysicalParams, direction: str = "forward",
                        grid: Grid | None = None):
    """Right-hand side of the forward or backward Fokker-Planck equation.

    forward:  ``-d(b P) - dt(bt* P) + (hbar/2m)(d^2 - dt^2) P``
    backward: ``-d(b* P) - dt(bt P) - (hbar/2m)(d^2 - dt^2) P``
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    b, bs, bt, bts = _drift_tuple(drifts)
    first, second = (b, bts) if direction == "forward" else (bs, bt)
    sign = 1.0 if direction == "forward" else -1.0
    (first, second, P), grid, exact = _resolve([first, second, _field(P)], grid)
    _positive(P, grid)
    D = 0.5 * params.hbar / params.m
    out = -_eval((first * P).d(0), grid) - _eval((second * P).d(1), grid)
    out = out + sign * D * (_eval(P.d2(0), grid) - _eval(P.d2(1), grid))
    return out, grid, exact


def fokker_planck_residual(drifts, P, params: PhysicalParams, direction: str = "forward",
                           grid: Grid | None = None) -> float:
    """Max-norm of the stationary Fokker-Planck right-hand side.

    ``drifts`` is a :class:`VelocityFields`, a :class:`DriftSet` (sampled on
    the grid) or a tuple of four fields.
    """
    values, grid, exact = fokker_planck_field(drifts, P, params, direction, grid)
    return _norm(values, grid, exact)


def osmotic_divergence_field(vel: VelocityFields, P, params: PhysicalParams,
                             grid: Grid | None = None):
    """``d(uP) - dt(ut P) - (hbar/2m)(d^2 - dt^2) P``.

    The divergence form of the osmotic relation; half the difference of the
    forward and backward Fokker-Planck right-hand sides, with sign flipped.
    """
    (u, ut, P), grid, exact = _resolve([vel.u, vel.u_tilde, _field(P)], grid)
    D = 0.5 * params.hbar / params.m
    out = _eval((u * P).d(0), grid) - _eval((ut * P).d(1), grid)
    out = out - D * (_eval(P.d2(0), grid) - _eval(P.d2(1), grid))
    return out, grid, exact


def kinematical_field(vel: VelocityFields, params: PhysicalParams, grid: Grid | None = None):
    """Stationary ``du/dt``: ``-(hbar/2m)(d^2 - dt^2) v - d(u v + ut vt)``."""
    (v, vt, u, ut), grid, exact = _resolve([vel.v, vel.v_tilde, vel.u, vel.u_tilde], grid)
    D = 0.5 * params.hbar / params.m
    out = -D * (_eval(v.d2(0), grid) - _eval(v.d2(1), grid))
    out = out - _eval((u * v + ut * vt).d(0), grid)
    return out, grid, exact


def kinematical_residual(vel: VelocityFields, params: PhysicalParams, grid: Grid | None = None) -> float:
    values, grid, exact = kinematical_field(vel, params, grid)
    return _norm(values, grid, exact)


def dynamical_field(vel: VelocityFields, potential, params: PhysicalParams,
                    grid: Grid | None = None):
    """Stationary ``dv/dt`` of the Nelson-Newton equation::

        (hbar/2m)(d^2 - dt^2) u + (u d - ut dt) u - (v d + vt dt) v - (1/m) d(V - Vt)

    ``potential`` is ``V(x)`` as a sympy expression in :data:`X` or a
    callable; ``None`` means the harmonic potential.
    """
    if potential is None:
        potential = harmonic_potential(params)
    dV = _potential_difference(potential)
    (v, vt, u, ut, dV), grid, exact = _resolve([vel.v, vel.v_tilde, vel.u, vel.u_tilde, dV], grid)
    D = 0.5 * params.hbar / params.m
    U, Ut, V, Vt = (_eval(f, grid) for f in (u, ut, v, vt))
    out = D * (_eval(u.d2(0), grid) - _eval(u.d2(1), grid))
    out = out + U * _eval(u.d(0), grid) - Ut * _eval(u.d(1), grid)
    out = out - V * _eval(v.d(0), grid) - Vt * _eval(v.d(1), grid)
    out = out - _eval(dV.d(0), grid) / params.m
    return out, grid, exact


def dynamical_residual(vel: VelocityFields, potential=None, params: PhysicalParams | None = None,
                       grid: Grid | None = None) -> float:
    params = params or vel.params
    values, grid, exact = dynamical_field(vel, potential, params, grid)
    return _norm(values, grid, exact)


def central_difference(func, x, x_tilde, axis: int, h: float):
    """Second-order central difference of ``func(x, x_tilde)`` along one axis."""
    if axis == 0:
        return (func(x + h, x_tilde) - func(x - h, x_tilde)) / (2 * h)
    return (func(x, x_tilde + h) - func(x, x_tilde - h)) / (2 * h)


@dataclass
class MeanDerivativeResult:
    """Cell-wise comparison of empirical and analytic mean derivatives."""

    worst_discrepancy: float
    worst_se: float
    centers: np.ndarray
    counts: np.ndarray
    empirical: np.ndarray
    analytic: np.ndarray
    se: np.ndarray

    def cell(self, x: float, x_tilde: float) -> int:
        """Index of the cell whose centre is nearest to ``(x, x_tilde)``."""
        return int(np.argmin((self.centers[:, 0] - x) ** 2 + (self.centers[:, 1] - x_tilde) ** 2))

    @property
    def worst_z(self) -> float:
        return abs(self.worst_discrepancy) / self.worst_se if self.worst_se > 0 else 0.0


def mean_derivative_check(ensemble, f, drifts: DriftSet | None = None,
                          params: PhysicalParams | None = None, kind: str = "forward",
                          cell_width: float | None = None, window: float = 1.0,
                          min_count: int = 100) -> MeanDerivativeResult:
    """Compare binned path increments with the hybrid mean derivative of ``f``.

    ``kind='forward'`` estimates ``D f = [f(x(t+dt), xt(t)) - f(x(t), xt(t-dt))] / dt``
    against ``b df/dx + bt* df/dxt + (hbar/2m)(d^2 - dt^2) f``; ``'backward'``
    estimates ``[f(x(t), xt(t+dt)) - f(x(t-dt), xt(t))] / dt`` against
    ``b* df/dx + bt df/dxt - (hbar/2m)(d^2 - dt^2) f``.

    Samples are binned on ``(x(t), xt(t))`` in square cells of width
    ``cell_width`` (default ``0.25 sqrt(var_x)``) centred on multiples of
    the width, one of them on the origin.  Only cells whose centre lies
    within Mahalanobis radius ``window`` of the stationary law are used.
    The analytic value of a cell is the mean of the formula over the cell's
    own samples; the estimator is a per-cell least-squares constant with
    an ``O(dt)`` bias.

    Raises
    ------
    InsufficientSamplesError
        If a cell in the window holds fewer than ``min_count`` samples.
    """
    if kind not in ("forward", "backward"):
        raise ValueError(f"kind must be 'forward' or 'backward', got {kind!r}")
    if ensemble.tail is None:
        raise InsufficientSamplesError("ensemble has no three-slice tail (needs >= 2 steps)")
    params = params or ensemble.params
    drifts = drifts or DriftSet.equilibrium(params)
    f = _field(f)
    if not f.closed:
        raise TypeError("test function must be closed-form")
    dt = ensemble.dt
    (x0, xt0), (x1, xt1), (x2, xt2) = ensemble.tail
    t = ensemble.final_time
    t_mid = t - dt if ensemble.config.group == "forward" else t + dt
    fx, fxt = f.d(0), f.d(1)
    lap = f.d2(0) - f.d2(1)
    D = 0.5 * params.hbar / params.m
    if kind == "forward":
        incr = (f.evaluate(x2, xt1) - f.evaluate(x1, xt0)) / dt
        ana = (drifts.b(x1, xt1, t_mid) * fx.evaluate(x1, xt1)
               + drifts.b_tilde_star(x1, xt1, t_mid) * fxt.evaluate(x1, xt1)
               + D * lap.evaluate(x1, xt1))
    else:
        incr = (f.evaluate(x1, xt2) - f.evaluate(x0, xt1)) / dt
        ana = (drifts.b_star(x1, xt1, t_mid) * fx.evaluate(x1, xt1)
               + drifts.b_tilde(x1, xt1, t_mid) * fxt.evaluate(x1, xt1)
               - D * lap.evaluate(x1, xt1))
    incr = np.broadcast_to(incr, x1.shape).astype(float)
    ana = np.broadcast_to(ana, x1.shape).astype(float)

    cov = stationary_covariance(params)
    width = 0.25 * math.sqrt(cov.var_x) if cell_width is None else cell_width
    # cells centred on the lattice width * (i, j); the window keeps cells whose
    # centre lies inside the Mahalanobis ellipse of radius `window`
    half = int(math.ceil(window * math.sqrt(cov.var_x) / width)) + 1
    m = 2 * half + 1
    edges = width * (np.arange(m + 1) - half - 0.5)
    ix = np.digitize(x1, edges) - 1
    it = np.digitize(xt1, edges) - 1
    valid = (ix >= 0) & (ix < m) & (it >= 0) & (it < m)
    cell = np.where(valid, ix * m + it, m * m)
    lattice = width * (np.arange(m) - half)
    cx, ct = np.meshgrid(lattice, lattice, indexing="ij")
    cx, ct = cx.ravel(), ct.ravel()
    prec = np.linalg.inv(cov.matrix)
    inside = prec[0, 0] * cx * cx + 2 * prec[0, 1] * cx * ct + prec[1, 1] * ct * ct <= window ** 2
    counts_all = np.bincount(cell, minlength=m * m + 1)[:m * m]
    counts = counts_all[inside]
    if np.any(counts < min_count):
        raise InsufficientSamplesError(
            f"{int(np.sum(counts < min_count))} of {counts.size} cells hold fewer than "
            f"{min_count} samples"
        )
    s1 = np.bincount(cell, weights=incr, minlength=m * m + 1)[:m * m][inside]
    s2 = np.bincount(cell, weights=incr * incr, minlength=m * m + 1)[:m * m][inside]
    a1 = np.bincount(cell, weights=ana, minlength=m * m + 1)[:m * m][inside]
    emp = s1 / counts
    var = (s2 - counts * emp ** 2) / (counts - 1)
    se = np.sqrt(np.maximum(var, 0.0) / counts)
    analytic_mean = a1 / counts
    disc = emp - analytic_mean
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, np.abs(disc) / se, np.where(disc == 0, 0.0, np.inf))
    worst = int(np.argmax(z))
    centers = np.column_stack([cx[inside], ct[inside]])
    return MeanDerivativeResult(float(disc[worst]), float(se[worst]), centers, counts, emp,
                                analytic_mean, se)

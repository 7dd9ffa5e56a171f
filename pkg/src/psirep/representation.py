"""Monotone representation of a psi model and the convexified loss.

Given a model whose comparison functions are increasing, the pipeline is

1. ``q_star_envelope``: at each grid point, the largest log-derivative ratio
   ``d2psi(y, t) / psi(y, t)`` over family members with ``theta1(y) > t``,
   and the smallest over members with ``theta1(x) < t``;
2. ``build_monotone_weight``: ``p(t) = exp(-integral_tau^t q_lower)``, which
   makes ``t -> p(t) psi(z, t)`` nonincreasing for every family member;
3. ``convexified_loss``: ``rho*(z, t) = -integral_{theta1(z)}^t p psi(z, .)``,
   convex in ``t`` and minimized, when summed over a sample, at the sample's
   estimator.

Everything lives on a compact working grid inside the parameter interval,
and the suprema are taken over a finite family of observations supplied by
the caller.  The resulting weight is only guaranteed for that family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator, PPoly

from .core import ParamInterval, PsiModel, WeightedSample, _probes, theta1_value
from .errors import (
    AtTheta1,
    BracketNotFound,
    ConfigError,
    EnvelopeOrderViolated,
    NonFiniteEvaluation,
    OutsideGridSpan,
    RichnessViolated,
    TauOutsideGrid,
)
from .quadrature import QuadratureOptions, adaptive_simpson, gauss_legendre_cells

__all__ = [
    "EnvelopeConfig",
    "Envelope",
    "MonotoneWeight",
    "ConvexifiedLoss",
    "MinimizeOptions",
    "default_exclusion_radius",
    "log_derivative_ratio",
    "q_star_envelope",
    "lower_envelope",
    "one_sided_fill",
    "build_monotone_weight",
    "weighted_psi",
    "convexified_loss",
    "argmin_objective",
    "objective_sum",
    "working_span",
    "working_grid",
]

ORDER_TOL = 1e-9


def default_exclusion_radius(theta1: float) -> float:
    return 1e-4 * (1.0 + abs(theta1))


def _as_grid(grid, min_points: int = 2) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < min_points:
        raise ConfigError(f"a grid needs at least {min_points} point(s)")
    if not np.all(np.isfinite(g)) or not np.all(np.diff(g) > 0):
        raise ConfigError("grid must be finite and strictly increasing")
    return g


@dataclass(frozen=True, eq=False)
class EnvelopeConfig:
    """Finite observation family and grid on which the envelopes are taken.

    ``exclusion_radius=None`` uses ``1e-4 * (1 + |theta1(z)|)`` for each member.
    With ``require_richness=False`` an empty side yields ``-inf``/``+inf``
    instead of raising :class:`RichnessViolated`.
    """

    family: tuple
    grid: np.ndarray
    exclusion_radius: Optional[float] = None
    require_richness: bool = True

    def __post_init__(self):
        family = tuple(self.family)
        if not family:
            raise ConfigError("envelope family is empty")
        if self.exclusion_radius is not None and not self.exclusion_radius > 0:
            raise ConfigError("exclusion radius must be positive")
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "grid", _as_grid(self.grid, min_points=1))


@dataclass(frozen=True, eq=False)
class Envelope:
    grid: np.ndarray
    q_lower: np.ndarray
    q_upper: np.ndarray

    @property
    def gap(self) -> np.ndarray:
        return self.q_upper - self.q_lower


def _theta1_array(model: PsiModel, family) -> np.ndarray:
    return np.array([theta1_value(model, z) for z in family], dtype=float)


def _central_difference(model: PsiModel, z, t, h):
    return (model.psi(z, t + h) - model.psi(z, t - h)) / (2.0 * h)


def log_derivative_ratio(model: PsiModel, z, t: float, exclusion_radius: Optional[float] = None) -> float:
    """``d2psi(z, t) / psi(z, t)`` away from ``theta1(z)``.

    Without a closed-form derivative a central difference with step
    ``1e-6 * (1 + |t|)`` is used, shortened so the stencil never reaches
    ``theta1(z)``.
    """
    th = theta1_value(model, z)
    radius = default_exclusion_radius(th) if exclusion_radius is None else exclusion_radius
    if abs(t - th) < radius:
        raise AtTheta1(f"t={t!r} is within {radius!r} of theta1={th!r}")
    value = float(model.psi(z, t))
    if model.d2psi is not None:
        deriv = float(model.d2psi(z, t))
    else:
        h = min(1e-6 * (1.0 + abs(t)), 0.5 * abs(t - th))
        deriv = float(_central_difference(model, z, t, h))
    ratio = deriv / value
    if not math.isfinite(ratio):
        raise NonFiniteEvaluation(f"log-derivative ratio {ratio!r} at t={t!r}", t=t)
    return ratio


def _ratio_matrix(model: PsiModel, family, thetas, grid, radii):
    """Ratios for every (grid point, member); NaN inside exclusion zones."""
    T = grid[:, None]
    excluded = np.abs(T - thetas[None, :]) < radii[None, :]
    if model.vectorized:
        Z = np.asarray(family, dtype=float)[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            values = model.psi(Z, T)
            if model.d2psi is not None:
                derivs = model.d2psi(Z, T) * np.ones_like(values)
            else:
                h = np.minimum(1e-6 * (1.0 + np.abs(T)), 0.5 * np.abs(T - thetas[None, :]))
                h = np.where(excluded, 1e-6, h)
                derivs = _central_difference(model, Z, T, h)
            ratios = derivs / values
    else:
        ratios = np.empty((grid.size, len(family)))
        for j, z in enumerate(family):
            for i, t in enumerate(grid):
                ratios[i, j] = np.nan if excluded[i, j] else log_derivative_ratio(model, z, t, radii[j])
    ratios = np.where(excluded, np.nan, ratios)
    bad = ~excluded & ~np.isfinite(ratios)
    if np.any(bad):
        i, _ = np.argwhere(bad)[0]
        raise NonFiniteEvaluation(f"non-finite log-derivative ratio at t={grid[i]!r}", t=float(grid[i]))
    return ratios


def _envelope_values(model, family, grid, exclusion_radius, require_richness):
    if not (model.theta.lo < grid.min() and grid.max() < model.theta.hi):
        raise ConfigError(f"grid [{grid.min()}, {grid.max()}] is not inside the parameter interval")
    thetas = _theta1_array(model, family)
    if exclusion_radius is None:
        radii = 1e-4 * (1.0 + np.abs(thetas))
    else:
        radii = np.full(thetas.shape, float(exclusion_radius))
    ratios = _ratio_matrix(model, family, thetas, grid, radii)

    T = grid[:, None]
    usable = np.isfinite(ratios)
    right = usable & (thetas[None, :] > T)
    left = usable & (thetas[None, :] < T)
    q_lower = np.where(right, ratios, -np.inf).max(axis=1)
    q_upper = np.where(left, ratios, np.inf).min(axis=1)

    if require_richness:
        for side, mask in (("above", right), ("below", left)):
            empty = ~mask.any(axis=1)
            if np.any(empty):
                raise RichnessViolated(float(grid[np.argmax(empty)]), side)
    return q_lower, q_upper


def q_star_envelope(model: PsiModel, cfg: EnvelopeConfig, check_order: bool = True) -> Envelope:
    """Lower and upper log-derivative envelopes over a finite family.

    ``q_lower(t)`` is the max of the ratio over members with ``theta1 > t``,
    ``q_upper(t)`` the min over members with ``theta1 < t``.  Members within
    the exclusion radius of ``t`` are skipped.

    Raises
    ------
    RichnessViolated
        A grid point has no usable member on one side.
    EnvelopeOrderViolated
        ``q_lower > q_upper`` beyond ``1e-9`` (relative, unit floor); the
        model's comparison functions are then not increasing.
    """
    grid = cfg.grid
    q_lower, q_upper = _envelope_values(model, cfg.family, grid, cfg.exclusion_radius, cfg.require_richness)
    if check_order:
        both = np.isfinite(q_lower) & np.isfinite(q_upper)
        scale = np.maximum(1.0, np.maximum(np.abs(q_lower), np.abs(q_upper)))
        broken = both & (q_lower > q_upper + ORDER_TOL * scale)
        if np.any(broken):
            i = int(np.argmax(broken))
            raise EnvelopeOrderViolated(float(grid[i]), float(q_lower[i]), float(q_upper[i]))
    return Envelope(grid=grid, q_lower=q_lower, q_upper=q_upper)


def one_sided_fill(t, q_lower, q_upper) -> np.ndarray:
    """``q_lower`` where a member lies above ``t``, otherwise ``q_upper``.

    With no member above ``t`` every member has ``psi < 0`` there and any
    ``q <= q_upper`` keeps the products decreasing; ``q_upper`` is the
    admissible value closest to the two-sided envelope.  A point with no
    member on either side raises :class:`RichnessViolated`.
    """
    q = np.where(np.isfinite(q_lower), q_lower, q_upper)
    empty = ~np.isfinite(q)
    if np.any(empty):
        i = int(np.argmax(empty.ravel()))
        raise RichnessViolated(float(np.ravel(t)[i]), "on either side of")
    return q


def lower_envelope(
    model: PsiModel,
    family: Sequence,
    exclusion_radius: Optional[float] = None,
    require_richness: bool = True,
    fill_one_sided: bool = False,
) -> Callable:
    """``t -> q_lower(t)`` evaluated at any points, for ``build_monotone_weight``.

    With ``require_richness=False`` and ``fill_one_sided=True`` the points
    lacking a member above ``t`` use :func:`one_sided_fill`.
    """
    family = tuple(family)
    if not family:
        raise ConfigError("envelope family is empty")

    def q(t):
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        q_lower, q_upper = _envelope_values(model, family, flat, exclusion_radius, require_richness)
        if fill_one_sided:
            q_lower = one_sided_fill(flat, q_lower, q_upper)
        return q_lower.reshape(t.shape)

    return q


@dataclass(frozen=True, eq=False)
class MonotoneWeight:
    """Positive weight ``p`` stored as ``log p`` on a fine grid.

    ``tau`` is a node and ``log p(tau) == 0``, so ``p(tau) == 1`` exactly.
    Between nodes ``log p`` is interpolated linearly, or, when its slopes
    ``-q`` at the nodes are known (``slope_values``), by cubic Hermite
    segments wherever those are monotone.  A weight known in closed form (see
    :meth:`from_log_p`) keeps its function in ``exact`` and is evaluated
    through it instead.
    """

    tau: float
    grid: np.ndarray
    log_p_values: np.ndarray
    slope_values: Optional[np.ndarray] = None
    exact: Optional[Callable] = None

    def __post_init__(self):
        spline = None
        if self.slope_values is not None and self.exact is None:
            spline = _guarded_hermite(self.grid, self.log_p_values, self.slope_values)
        object.__setattr__(self, "_spline", spline)

    @property
    def interpolation(self) -> str:
        if self.exact is not None:
            return "exact"
        return "linear" if self._spline is None else "hermite"

    @property
    def span(self):
        return float(self.grid[0]), float(self.grid[-1])

    def contains(self, t) -> bool:
        t = np.asarray(t, dtype=float)
        return bool(np.all((self.grid[0] <= t) & (t <= self.grid[-1])))

    def log_p(self, t):
        if not self.contains(t):
            raise OutsideGridSpan(f"t={t!r} outside weight span {self.span}")
        if self.exact is not None:
            return self.exact(t) - self.exact(self.tau)
        if self._spline is not None:
            return self._spline(t)[()]
        return np.interp(t, self.grid, self.log_p_values)

    def __call__(self, t):
        return np.exp(self.log_p(t))

    def rebased(self, tau: float) -> "MonotoneWeight":
        """The same weight divided by ``p(tau)``; ``tau`` must be a node."""
        hit = np.flatnonzero(self.grid == tau)
        if hit.size == 0:
            raise TauOutsideGrid(f"tau={tau!r} is not a node of the weight grid")
        return MonotoneWeight(
            float(tau), self.grid, self.log_p_values - self.log_p_values[hit[0]], self.slope_values, self.exact
        )

    @classmethod
    def from_log_p(cls, log_p: Callable, grid, tau: Optional[float] = None) -> "MonotoneWeight":
        """Weight ``exp(log_p(t) - log_p(tau))`` given in closed form on the span of ``grid``."""
        grid = _as_grid(grid)
        tau = 0.5 * (grid[0] + grid[-1]) if tau is None else float(tau)
        if not grid[0] <= tau <= grid[-1]:
            raise TauOutsideGrid(f"tau={tau!r} outside grid span [{grid[0]}, {grid[-1]}]")
        k = int(np.searchsorted(grid, tau))
        if k == grid.size or grid[k] != tau:
            grid = np.insert(grid, k, tau)
        values = np.asarray(log_p(grid), dtype=float) - float(log_p(tau))
        return cls(tau, grid, values, exact=log_p)

    @classmethod
    def constant(cls, lo: float, hi: float) -> "MonotoneWeight":
        """``p == 1`` on ``[lo, hi]``."""
        return cls(float(lo), np.array([lo, hi], dtype=float), np.zeros(2))


def _guarded_hermite(x, y, d) -> PPoly:
    """Cubic Hermite segments where they are monotone, straight lines elsewhere.

    A cell keeps its cubic when both end slopes have the sign of the secant
    and lie in the Fritsch-Carlson region ``alpha**2 + beta**2 <= 9``; a
    cell where the slope varies too fast for its width would otherwise
    overshoot wildly.
    """
    h = np.diff(x)
    secant = np.diff(y) / h
    d0, d1 = d[:-1], d[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha, beta = d0 / secant, d1 / secant
    cubic = (secant != 0) & (alpha >= 0) & (beta >= 0) & (alpha**2 + beta**2 <= 9.0)
    c3 = np.where(cubic, (d0 + d1 - 2.0 * secant) / h**2, 0.0)
    c2 = np.where(cubic, (3.0 * secant - 2.0 * d0 - d1) / h, 0.0)
    c1 = np.where(cubic, d0, secant)
    return PPoly(np.stack([c3, c2, c1, y[:-1]]), x, extrapolate=False)


def _refine(grid: np.ndarray, factor: int) -> np.ndarray:
    if factor <= 1:
        return grid.copy()
    frac = np.arange(factor) / factor
    inner = grid[:-1, None] + np.diff(grid)[:, None] * frac[None, :]
    return np.append(inner.ravel(), grid[-1])


def _split_fast_cells(q, fine: np.ndarray, tol: float, max_nodes: int, passes: int = 6) -> np.ndarray:
    """Subdivide cells over which ``q`` changes a lot relative to their width.

    Existing nodes are kept; a cell with ``c = |dq| * h`` is cut into
    ``ceil(sqrt(c / tol))`` equal parts, since ``c`` scales like ``h**2``.
    """
    for _ in range(passes):
        qf = np.asarray(q(fine), dtype=float) * np.ones_like(fine)
        _require_finite(qf, fine)
        h = np.diff(fine)
        parts = np.ceil(np.sqrt(np.abs(np.diff(qf)) * h / tol))
        parts = np.clip(parts, 1, 64).astype(int)
        if np.all(parts == 1) or fine.size + int(parts.sum()) - parts.size > max_nodes:
            break
        pieces = [fine[:-1, None] + h[:, None] * (np.arange(64)[None, :] / parts[:, None])]
        mask = np.arange(64)[None, :] < parts[:, None]
        fine = np.append(pieces[0][mask], fine[-1])
    return fine


def build_monotone_weight(
    q,
    grid,
    tau: Optional[float] = None,
    quadrature: Optional[QuadratureOptions] = None,
) -> MonotoneWeight:
    """``p(t) = exp(-integral_tau^t q(s) ds)`` on a refined copy of ``grid``.

    Parameters
    ----------
    q : callable or array_like
        Either a function of ``t`` (evaluated on the refined grid) or its
        values on ``grid``, replaced by their monotone piecewise-cubic
        (PCHIP) interpolant, which is integrated exactly.  Passing a callable such as
        ``lower_envelope`` avoids the interpolation error altogether.
    grid : array_like
        Working grid, strictly increasing.
    tau : float, optional
        Anchor with ``p(tau) = 1``; defaults to the midpoint of the grid span.
    quadrature : QuadratureOptions, optional
        ``refine`` sets how many sub-cells each grid cell is split into; a
        callable ``q`` additionally gets cells split per ``split_tol`` and
        is integrated over each sub-cell with a ``gauss_points``
        Gauss-Legendre rule.
    """
    grid = _as_grid(grid)
    quadrature = quadrature or QuadratureOptions()
    if tau is None:
        tau = 0.5 * (grid[0] + grid[-1])
    tau = float(tau)
    if not grid[0] <= tau <= grid[-1]:
        raise TauOutsideGrid(f"tau={tau!r} outside grid span [{grid[0]}, {grid[-1]}]")

    fine = _refine(grid, int(quadrature.refine))
    k = int(np.searchsorted(fine, tau))
    if fine[k] != tau:
        fine = np.insert(fine, k, tau)
    if callable(q):
        fine = _split_fast_cells(q, fine, quadrature.split_tol, quadrature.max_nodes)
        k = int(np.searchsorted(fine, tau))
        qf = np.asarray(q(fine), dtype=float) * np.ones_like(fine)
        _require_finite(qf, fine)
        edges = np.stack([fine[:-1], fine[1:]], axis=-1)
        cells = gauss_legendre_cells(lambda s: _checked_q(q, s), edges, quadrature.gauss_points)[:, 0]
        cumulative = np.concatenate([[0.0], np.cumsum(cells)])
    else:
        qv = np.asarray(q, dtype=float)
        if qv.shape != grid.shape:
            raise ConfigError(f"{qv.size} q-values for a grid of {grid.size} points")
        _require_finite(qv, grid)
        interpolant = PchipInterpolator(grid, qv)
        qf = interpolant(fine)
        cumulative = interpolant.antiderivative()(fine)
    log_p = -(cumulative - cumulative[k])
    return MonotoneWeight(tau=tau, grid=fine, log_p_values=log_p, slope_values=-qf)


def _require_finite(values, ts):
    if not np.all(np.isfinite(values)):
        i = int(np.argmax(~np.isfinite(np.ravel(values))))
        t = float(np.ravel(ts)[i])
        raise NonFiniteEvaluation(f"q is not finite at t={t!r}", t=t)


def _checked_q(q, s):
    values = np.asarray(q(s), dtype=float) * np.ones_like(s)
    _require_finite(values, s)
    return values


def weighted_psi(model: PsiModel, weight: MonotoneWeight, z) -> Callable:
    """``t -> p(t) * psi(z, t)``; monotonicity is checked elsewhere."""

    def product(t):
        return weight(t) * model.psi(z, t)

    return product


class _LossTable:
    """``t -> rho*(z, t)`` for one observation, on the weight's own cells.

    The integrand ``-p psi(z, .)`` is smooth inside each cell of the weight
    grid once ``theta1(z)`` is added as a break point, so a fixed
    Gauss-Legendre rule per cell is accurate to rounding and the result is
    smooth in ``t``.
    """

    def __init__(self, loss: "ConvexifiedLoss", z):
        model, weight = loss.model, loss.weight
        self.z = z
        self.theta1 = theta1_value(model, z)
        if not weight.contains(self.theta1):
            raise OutsideGridSpan(f"theta1={self.theta1!r} outside weight span {weight.span}")
        self._points = loss.quadrature.gauss_points
        self._integrand = _loss_integrand(model, weight, z)
        nodes = weight.grid
        k = int(np.searchsorted(nodes, self.theta1))
        if nodes[k] != self.theta1:
            nodes = np.insert(nodes, k, self.theta1)
        cells = gauss_legendre_cells(self._integrand, nodes, self._points)
        cumulative = np.concatenate([[0.0], np.cumsum(cells)])
        self.nodes = nodes
        self.cumulative = cumulative - cumulative[k]
        self._span = weight.span

    def locate(self, t):
        """Node index and cumulative value at the last node at or below ``t``."""
        t = np.asarray(t, dtype=float)
        lo, hi = self._span
        if np.any(t < lo) or np.any(t > hi):
            raise OutsideGridSpan(f"t outside weight span [{lo}, {hi}]")
        j = np.clip(np.searchsorted(self.nodes, t, side="right") - 1, 0, self.nodes.size - 2)
        return self.nodes[j], self.cumulative[j]

    def __call__(self, t):
        start, base = self.locate(t)
        partial = gauss_legendre_cells(self._integrand, np.stack([start, t], axis=-1), self._points)[..., 0]
        return base + partial


def _loss_integrand(model: PsiModel, weight: MonotoneWeight, z):
    if model.vectorized:

        def integrand(s):
            return -weight(s) * model.psi(z, s)

    else:
        scalar_psi = np.vectorize(lambda s: float(model.psi(z, s)), otypes=[float])

        def integrand(s):
            return -weight(s) * scalar_psi(s)

    return integrand


@dataclass(frozen=True, eq=False)
class ConvexifiedLoss:
    """``rho*(z, t) = -integral_{theta1(z)}^t p(s) psi(z, s) ds``."""

    model: PsiModel
    weight: MonotoneWeight
    quadrature: QuadratureOptions = field(default_factory=QuadratureOptions)

    def __call__(self, z, t):
        return convexified_loss(self, z, t)

    def table(self, z) -> Callable:
        """``t -> rho*(z, t)``, vectorized over ``t``; built once per ``z``."""
        if self.quadrature.loss_rule == "simpson":
            return lambda t: self._simpson([z] * np.size(t), np.reshape(t, -1)).reshape(np.shape(t))
        if self.quadrature.loss_rule != "gauss":
            raise ConfigError(f"unknown loss rule {self.quadrature.loss_rule!r}")
        return _LossTable(self, z)

    def many(self, zs: Sequence, ts) -> np.ndarray:
        """``rho*(zs[k], ts[k])`` for paired sequences."""
        zs = list(zs)
        ts = np.asarray(ts, dtype=float)
        if self.quadrature.loss_rule == "simpson":
            return self._simpson(zs, ts)
        out = np.empty(len(zs))
        tables = {}
        for k, (z, t) in enumerate(zip(zs, ts)):
            key = z if _hashable(z) else id(z)
            if key not in tables:
                tables[key] = self.table(z)
            out[k] = tables[key](t)
        return out

    def _simpson(self, zs, ts):
        starts = _theta1_array(self.model, zs)
        lo, hi = self.weight.span
        for a in (starts, ts):
            if np.any(a < lo) or np.any(a > hi):
                raise OutsideGridSpan(f"integration limits leave the weight span [{lo}, {hi}]")
        psi, weight = self.model.psi, self.weight
        if self.model.vectorized:
            zarr = np.asarray(zs, dtype=float)

            def integrand(s, k):
                return -weight(s) * psi(zarr[k], s)

        else:

            def integrand(s, k):
                return -weight(s) * np.array([psi(zs[j], si) for si, j in zip(s, k)], dtype=float)

        q = self.quadrature
        values, _ = adaptive_simpson(
            integrand, starts, ts, tol=q.simpson_tol, rel_tol=q.simpson_rel_tol, max_depth=q.max_depth
        )
        return values

    def total(self, sample: WeightedSample) -> Callable[[float], float]:
        """``t -> sum_i w_i rho*(x_i, t)``; per-observation tables are built up front."""
        active = sample.active()
        tables = [(w, self.table(x)) for x, w in active]
        if not (self.model.vectorized and self.quadrature.loss_rule == "gauss"):

            def objective(t):
                return math.fsum(w * float(table(t)) for w, table in tables)

            return objective

        zs = np.array([x for x, _ in active], dtype=float)[:, None, None]
        ws = np.array([w for w, _ in tables])
        points = self.quadrature.gauss_points
        model, weight = self.model, self.weight

        def integrand(s):
            return -weight(s) * model.psi(zs, s)

        # every table holds the weight grid plus its own theta1, where rho* = 0
        grid = weight.grid
        theta1s = np.array([table.theta1 for _, table in tables])
        at_grid = np.array([
            np.delete(table.cumulative, np.searchsorted(table.nodes, table.theta1))
            if table.nodes.size > grid.size else table.cumulative
            for _, table in tables
        ])
        lo, hi = weight.span

        def objective(t):
            t = float(t)
            if not lo <= t <= hi:
                raise OutsideGridSpan(f"t outside weight span [{lo}, {hi}]")
            j = min(max(int(np.searchsorted(grid, t, side="right")) - 1, 0), grid.size - 2)
            past = (theta1s > grid[j]) & (theta1s <= t)
            starts = np.where(past, theta1s, grid[j])
            bases = np.where(past, 0.0, at_grid[:, j])
            edges = np.stack([starts, np.full(starts.shape, t)], axis=-1)
            partial = gauss_legendre_cells(integrand, edges, points)[:, 0]
            return math.fsum(ws * (bases + partial))

        return objective


def _hashable(z) -> bool:
    try:
        hash(z)
    except TypeError:
        return False
    return True


def convexified_loss(loss: ConvexifiedLoss, z, t: float) -> float:
    """``rho*(z, t)``; ``t`` and ``theta1(z)`` must lie in the weight span."""
    return float(loss.table(z)(t))


def objective_sum(rho: Callable, sample: WeightedSample) -> Callable[[float], float]:
    """``t -> sum_i w_i rho(x_i, t)``."""
    active = sample.active()

    def objective(t):
        return math.fsum(w * float(rho(x, t)) for x, w in active)

    return objective


@dataclass(frozen=True)
class MinimizeOptions:
    """Golden-section stops once the bracket is below ``tol * (1 + |t|)``.

    Comparing function values cannot resolve a minimizer much below
    ``sqrt(machine eps)`` relative, so ``tol`` much under ``1e-8`` buys
    nothing.
    """

    tol: float = 1e-7
    max_iter: int = 500
    max_expansions: int = 200
    initial_probe: Optional[float] = None


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def _bracket_minimum(f, theta: ParamInterval, opts: MinimizeOptions):
    t0 = theta.default_probe() if opts.initial_probe is None else float(opts.initial_probe)
    if t0 not in theta:
        raise ConfigError(f"initial probe {t0!r} outside ({theta.lo}, {theta.hi})")
    f0 = f(t0)
    for end in (theta.hi, theta.lo):
        probes = _probes(t0, end, opts.max_expansions)
        t1 = next(probes)
        if t1 not in theta or t1 == t0:
            continue
        f1 = f(t1)
        if f1 >= f0:
            continue
        a, b, fb = t0, t1, f1
        for t in probes:
            if t not in theta or t == b:
                break
            ft = f(t)
            if ft > fb:
                return (a, b, t) if a < t else (t, b, a)
            a, b, fb = b, t, ft
        raise BracketNotFound(f"objective keeps decreasing toward {end}")
    # f0 is no larger than the first probe on either side
    probes_r = _probes(t0, theta.hi, 1)
    probes_l = _probes(t0, theta.lo, 1)
    return next(probes_l), t0, next(probes_r)


def argmin_objective(f: Callable[[float], float], theta: ParamInterval, opts: Optional[MinimizeOptions] = None) -> float:
    """Minimizer of a function that decreases and then increases on ``theta``.

    Bracket expansion from the initial probe followed by golden-section search.
    """
    opts = opts or MinimizeOptions()

    def g(t):
        v = float(f(t))
        if math.isnan(v):
            raise NonFiniteEvaluation(f"objective is NaN at t={t!r}", t=t)
        return v

    a, _, c = _bracket_minimum(g, theta, opts)
    x1 = c - _INV_PHI * (c - a)
    x2 = a + _INV_PHI * (c - a)
    f1, f2 = g(x1), g(x2)
    for _ in range(opts.max_iter):
        if c - a <= opts.tol * (1.0 + abs(0.5 * (a + c))):
            break
        if f1 <= f2:
            c, x2, f2 = x2, x1, f1
            x1 = c - _INV_PHI * (c - a)
            f1 = g(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INV_PHI * (c - a)
            f2 = g(x2)
    return 0.5 * (a + c)


def working_span(model: PsiModel, observations: Sequence, expand: float = 0.5):
    """Range of ``theta1`` over ``observations``, widened by ``expand`` on each side
    but never past the midpoint between an end value and a finite boundary
    of the parameter interval."""
    thetas = _theta1_array(model, observations)
    lo, hi = float(thetas.min()), float(thetas.max())
    width = hi - lo if hi > lo else max(1.0, abs(lo))
    a, b = lo - expand * width, hi + expand * width
    # never more than halfway to a finite boundary
    if math.isfinite(model.theta.lo):
        a = max(a, lo - 0.5 * (lo - model.theta.lo))
    if math.isfinite(model.theta.hi):
        b = min(b, hi + 0.5 * (model.theta.hi - hi))
    return a, b


def working_grid(model: PsiModel, observations: Sequence, points: int = 512, expand: float = 0.5) -> np.ndarray:
    lo, hi = working_span(model, observations, expand)
    return np.linspace(lo, hi, points)

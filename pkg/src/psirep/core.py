"""Sign-change location and weighted generalized psi-estimators.

A point of sign change (of decreasing type) of ``f`` is the unique ``theta``
with ``f > 0`` strictly to its left and ``f < 0`` strictly to its right.  The
estimator of a weighted sample is the sign-change point of
``t -> sum_i w_i * psi(x_i, t)``.  Nothing here assumes continuity, so the
default refinement is pure sign bisection.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from .errors import (
    BracketNotFound,
    ConfigError,
    DivisionNearZero,
    DomainEmpty,
    InvalidWeights,
    NonFiniteEvaluation,
    NotSignChanging,
)

__all__ = [
    "ParamInterval",
    "PsiModel",
    "WeightedSample",
    "Crossing",
    "SignChangeResult",
    "SolveOptions",
    "ComparisonFunction",
    "locate_sign_change",
    "theta1",
    "theta1_value",
    "estimate",
    "weighted_psi_sum",
    "comparison_function",
    "sign_profile",
]


@dataclass(frozen=True)
class ParamInterval:
    """Open parameter interval ``(lo, hi)``; either end may be infinite."""

    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if math.isnan(lo) or math.isnan(hi) or not lo < hi:
            raise ConfigError(f"degenerate parameter interval ({self.lo}, {self.hi})")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def __contains__(self, t) -> bool:
        return self.lo < t < self.hi

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lo) and math.isfinite(self.hi)

    def default_probe(self) -> float:
        if self.bounded:
            return self.lo + 0.5 * (self.hi - self.lo)
        if math.isfinite(self.lo):
            return self.lo + max(1.0, abs(self.lo))
        if math.isfinite(self.hi):
            return self.hi - max(1.0, abs(self.hi))
        return 0.0


class PsiModel:
    """A psi-function family ``psi(x, t)`` on observations ``x`` and ``t`` in ``theta``.

    Parameters
    ----------
    psi : callable
        ``psi(x, t) -> float``.
    theta : ParamInterval
        Parameter interval.
    d2psi : callable, optional
        Partial derivative of ``psi`` in ``t``.
    theta1_closed_form : callable, optional
        ``x -> theta1(x)``, the single-observation estimator.
    continuous : bool
        Whether ``psi`` is continuous in ``t``.  Enables the optional Brent
        refinement and makes a nonzero residual a failure of the zero property.
    vectorized : bool
        Whether ``psi`` broadcasts over numpy arrays of observations and
        parameters.  Observations must then be real numbers.
    """

    def __init__(
        self,
        psi: Callable[[Any, float], float],
        theta: ParamInterval,
        d2psi: Optional[Callable[[Any, float], float]] = None,
        theta1_closed_form: Optional[Callable[[Any], float]] = None,
        continuous: bool = False,
        vectorized: bool = False,
        name: str = "custom",
    ):
        self.psi = psi
        self.theta = theta
        self.d2psi = d2psi
        self.theta1_closed_form = theta1_closed_form
        self.continuous = continuous
        self.vectorized = vectorized
        self.name = name

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, theta=({self.theta.lo}, {self.theta.hi}))"


@dataclass(frozen=True)
class WeightedSample:
    """Observations with nonnegative weights, not all zero."""

    observations: tuple
    weights: tuple

    def __post_init__(self):
        obs = tuple(self.observations)
        w = tuple(float(v) for v in self.weights)
        if len(obs) == 0:
            raise InvalidWeights("a sample needs at least one observation")
        if len(w) != len(obs):
            raise InvalidWeights(f"{len(obs)} observations but {len(w)} weights")
        if any(not math.isfinite(v) or v < 0 for v in w):
            raise InvalidWeights("weights must be finite and nonnegative")
        if not any(v > 0 for v in w):
            raise InvalidWeights("at least one weight must be positive")
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, observations: Sequence) -> "WeightedSample":
        obs = tuple(observations)
        return cls(obs, (1.0,) * len(obs))

    @property
    def n(self) -> int:
        return len(self.observations)

    @property
    def total_weight(self) -> float:
        return math.fsum(self.weights)

    def active(self):
        """Pairs ``(x, w)`` with ``w > 0``."""
        return [(x, w) for x, w in zip(self.observations, self.weights) if w > 0]


class Crossing(str, enum.Enum):
    ZERO = "ZeroCrossing"
    JUMP = "JumpCrossing"


@dataclass(frozen=True)
class SignChangeResult:
    theta: float
    bracket_lo: float
    bracket_hi: float
    residual: float
    crossing: Crossing
    iterations: int
    # max |f| over the initial search bracket; residual tolerances scale with it
    scale: float = 1.0

    @property
    def width(self) -> float:
        return self.bracket_hi - self.bracket_lo


@dataclass(frozen=True)
class SolveOptions:
    """Knobs for :func:`locate_sign_change`.

    ``tol`` is relative with a unit floor: bisection stops once the bracket
    is no wider than ``tol * (1 + |theta|)``.  With ``polish`` the bracket is
    narrowed further, to adjacent floats, before the residual is taken; this
    is what makes the zero/jump classification meaningful.
    """

    tol: float = 1e-10
    residual_tol: float = 1e-8
    max_iter: int = 4000
    max_expansions: int = 200
    initial_probe: Optional[float] = None
    polish: bool = True
    use_brent: bool = False

    def width(self, theta: float) -> float:
        return self.tol * (1.0 + abs(theta))


def _evaluate(f, t):
    v = float(f(t))
    if not math.isfinite(v):
        raise NonFiniteEvaluation(f"function value {v!r} at t={t!r}", t=t)
    return v


def _probes(t0, end, budget):
    """Geometric probe sequence from ``t0`` toward ``end``.

    Toward a finite end the distance is halved 52 times and then shrinks
    super-geometrically, so roots just above a boundary at zero are reachable
    down to the smallest subnormals.
    """
    if math.isinf(end):
        step = math.copysign(max(1.0, abs(t0)), end)
        for k in range(budget):
            yield t0 + step * 2.0**k
    else:
        e = 0.0
        for k in range(budget):
            e = e + 1.0 if k < 52 else e * 1.25
            yield end - (end - t0) * 2.0**-e


def _find_bracket(f, theta: ParamInterval, opts: SolveOptions):
    t0 = theta.default_probe() if opts.initial_probe is None else float(opts.initial_probe)
    if t0 not in theta:
        raise ConfigError(f"initial probe {t0!r} outside ({theta.lo}, {theta.hi})")
    f0 = _evaluate(f, t0)
    pos = (t0, f0) if f0 > 0 else None
    neg = (t0, f0) if f0 < 0 else None
    evals = 1

    if neg is None:
        for t in _probes(t0, theta.hi, opts.max_expansions):
            if t not in theta or t <= t0:
                break
            ft = float(f(t))
            evals += 1
            if not math.isfinite(ft):
                break
            if ft < 0:
                neg = (t, ft)
                break
            if ft > 0:
                pos = (t, ft)
    if pos is None:
        for t in _probes(t0, theta.lo, opts.max_expansions):
            if t not in theta or t >= t0:
                break
            ft = float(f(t))
            evals += 1
            if not math.isfinite(ft):
                break
            if ft > 0:
                pos = (t, ft)
                break
            if ft < 0:
                neg = (t, ft)
    if pos is None or neg is None or not pos[0] < neg[0]:
        raise BracketNotFound(
            f"no t+ < t- with f(t+) > 0 > f(t-) found from probe {t0!r} "
            f"within {opts.max_expansions} expansions"
        )
    return pos, neg, evals


def _shrink_around_zero(f, m, a, fa, b, fb, half):
    """Bracket ``[c, d]`` around an exact zero ``m`` with ``f(c) > 0 > f(d)``."""
    c, fc = a, fa
    step = half
    while True:
        t = m - step
        if t <= a:
            break
        ft = _evaluate(f, t)
        if ft > 0:
            c, fc = t, ft
            break
        if ft < 0:
            raise NotSignChanging(f"f(m)=0 at m={m!r} but f({t!r}) < 0 on the left")
        step *= 2.0
    d, fd = b, fb
    step = half
    while True:
        t = m + step
        if t >= b:
            break
        ft = _evaluate(f, t)
        if ft < 0:
            d, fd = t, ft
            break
        if ft > 0:
            raise NotSignChanging(f"f(m)=0 at m={m!r} but f({t!r}) > 0 on the right")
        step *= 2.0
    return c, d


def locate_sign_change(f, theta: ParamInterval, opts: Optional[SolveOptions] = None) -> SignChangeResult:
    """Locate the point of sign change of ``f`` on ``theta``.

    The bracket is searched by geometric expansion from the initial probe and
    then refined by sign bisection.  Expansion in a direction stops at the
    first non-finite value.  ``f`` need not be continuous.

    Raises
    ------
    BracketNotFound
        No ``t+ < t-`` with ``f(t+) > 0 > f(t-)`` within the expansion budget.
    NonFiniteEvaluation
        ``f`` returned NaN or an infinity.
    NotSignChanging
        ``f`` vanishes at a bisection midpoint but has the wrong sign next to it.
    """
    opts = opts or SolveOptions()
    (a, fa), (b, fb), evals = _find_bracket(f, theta, opts)
    scale = max(abs(fa), abs(fb))
    iterations = 0

    if opts.use_brent:
        try:
            r, info = optimize.brentq(
                f, a, b, xtol=opts.width(0.5 * (a + b)) / 4, rtol=4 * np.finfo(float).eps,
                maxiter=opts.max_iter, full_output=True,
            )
        except (ValueError, RuntimeError):
            r = None
        if r is not None:
            half = 0.5 * opts.width(r)
            c, d = max(a, r - half), min(b, r + half)
            fc = fa if c == a else _evaluate(f, c)
            fd = fb if d == b else _evaluate(f, d)
            if fc > 0 > fd:
                a, fa, b, fb = c, fc, d, fd
                iterations = info.iterations

    zero_at = None
    while True:
        m = a + 0.5 * (b - a)
        done = b - a <= opts.width(m)
        if (done and not opts.polish) or m <= a or m >= b:
            break
        if iterations >= opts.max_iter:
            if done:
                break
            raise BracketNotFound(f"bisection did not converge in {opts.max_iter} iterations")
        fm = _evaluate(f, m)
        iterations += 1
        if fm > 0:
            a, fa = m, fm
        elif fm < 0:
            b, fb = m, fm
        else:
            zero_at = m
            a, b = _shrink_around_zero(f, m, a, fa, b, fb, 0.25 * opts.width(m))
            break

    if zero_at is not None:
        theta_hat, residual = zero_at, 0.0
    else:
        theta_hat = a + 0.5 * (b - a)
        residual = _evaluate(f, theta_hat)
    crossing = Crossing.ZERO if abs(residual) <= opts.residual_tol * scale else Crossing.JUMP
    return SignChangeResult(
        theta=theta_hat,
        bracket_lo=a,
        bracket_hi=b,
        residual=residual,
        crossing=crossing,
        iterations=iterations,
        scale=scale,
    )


def theta1(model: PsiModel, x, opts: Optional[SolveOptions] = None) -> SignChangeResult:
    """Sign-change point of ``psi(x, .)``: the estimator of a single observation."""
    opts = opts or SolveOptions()
    if opts.use_brent and not model.continuous:
        opts = replace(opts, use_brent=False)
    return locate_sign_change(lambda t: model.psi(x, t), model.theta, opts)


def theta1_value(model: PsiModel, x, opts: Optional[SolveOptions] = None) -> float:
    """``theta1(x)``, from the closed form when the model has one."""
    if model.theta1_closed_form is not None:
        return float(model.theta1_closed_form(x))
    return theta1(model, x, opts).theta


def weighted_psi_sum(model: PsiModel, sample: WeightedSample) -> Callable[[float], float]:
    """Return ``t -> sum_i w_i psi(x_i, t)``, skipping zero weights.

    Terms are added with :func:`math.fsum`, so the value does not depend on
    the order of the observations.  Infinite terms of opposite sign give NaN.
    """
    active = sample.active()
    if model.vectorized:
        xs = np.array([x for x, _ in active], dtype=float)
        ws = np.array([w for _, w in active], dtype=float)

        def terms(t):
            with np.errstate(all="ignore"):
                return ws * model.psi(xs, t)

    else:

        def terms(t):
            return [w * model.psi(x, t) for x, w in active]

    def total(t):
        try:
            return math.fsum(terms(t))
        except ValueError:
            return math.nan

    return total


def estimate(model: PsiModel, sample: WeightedSample, opts: Optional[SolveOptions] = None) -> SignChangeResult:
    """Weighted generalized psi-estimator of ``sample`` under ``model``."""
    if not isinstance(sample, WeightedSample):
        raise InvalidWeights("estimate() expects a WeightedSample")
    opts = opts or SolveOptions()
    if opts.use_brent and not model.continuous:
        opts = replace(opts, use_brent=False)
    return locate_sign_change(weighted_psi_sum(model, sample), model.theta, opts)


@dataclass(frozen=True)
class ComparisonFunction:
    """``t -> -psi(x, t) / psi(y, t)`` on the open interval ``(lo, hi)``.

    ``lo`` and ``hi`` are ``theta1(x)`` and ``theta1(y)``.  Inside that
    interval a model with a single sign change per observation has
    ``psi(y, t) > 0``; values of ``psi(y, t)`` at or below ``guard`` raise
    :class:`DivisionNearZero`.
    """

    model: PsiModel = field(repr=False)
    x: Any
    y: Any
    lo: float
    hi: float
    guard: float = 1e-300

    def __call__(self, t: float) -> float:
        if not self.lo < t < self.hi:
            raise ValueError(f"t={t!r} outside comparison domain ({self.lo}, {self.hi})")
        den = float(self.model.psi(self.y, t))
        if not den > self.guard:
            raise DivisionNearZero(f"psi(y, t)={den!r} at t={t!r}", t=t)
        return -float(self.model.psi(self.x, t)) / den

    def values(self, ts) -> np.ndarray:
        return np.array([self(t) for t in ts], dtype=float)


def comparison_function(model: PsiModel, x, y, opts: Optional[SolveOptions] = None) -> ComparisonFunction:
    lo = theta1_value(model, x, opts)
    hi = theta1_value(model, y, opts)
    if not lo < hi:
        raise DomainEmpty(f"theta1(x)={lo!r} is not below theta1(y)={hi!r}")
    return ComparisonFunction(model, x, y, lo, hi)


def sign_profile(f, theta_hat: float, lo: float, hi: float, points: int = 64, gap: float = 0.0):
    """Probe ``f`` on both sides of ``theta_hat`` within ``[lo, hi]``.

    Each side gets ``points`` uniform probes on ``[lo, theta_hat - gap)`` and
    ``(theta_hat + gap, hi]``.  Returns ``None`` when ``f > 0`` at every left
    probe and ``f < 0`` at every right probe, otherwise the first offending
    ``(t, f(t))`` pair, scanning outward from ``theta_hat``.
    """
    inner = theta_hat - gap
    if lo < inner:
        for k in range(points):
            t = inner - (inner - lo) * (k + 1) / points
            v = float(f(t))
            if not v > 0:
                return (t, v)
    inner = theta_hat + gap
    if inner < hi:
        for k in range(points):
            t = inner + (hi - inner) * (k + 1) / points
            v = float(f(t))
            if not v < 0:
                return (t, v)
    return None

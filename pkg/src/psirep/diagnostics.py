"""Checkable verdicts for the monotonicity conditions behind the estimator.

Each check returns a :class:`CheckResult` (one entry) or a
:class:`DiagnosticReport` (several).  A failing entry always carries a
witness: the arguments and function values that reproduce the violation
when evaluated again.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    Crossing,
    PsiModel,
    SolveOptions,
    WeightedSample,
    comparison_function,
    estimate,
    sign_profile,
    theta1_value,
    weighted_psi_sum,
)
from .errors import DomainEmpty, PsiError
from .representation import MonotoneWeight, working_span

__all__ = [
    "PASS",
    "FAIL",
    "VACUOUS",
    "STRICT_TOL",
    "CheckResult",
    "DiagnosticReport",
    "NonStrictWarning",
    "check_comparison_monotone",
    "check_decreasing_product",
    "check_weighted_estimator_family",
    "check_z_property",
    "comparison_samples",
]

PASS = "pass"
FAIL = "fail"
VACUOUS = "vacuous"

STRICT_TOL = 1e-12
DEFAULT_GRID = 1024


class NonStrictWarning(UserWarning):
    """A strict monotonicity check could only confirm the nonstrict version."""


@dataclass(frozen=True)
class CheckResult:
    """One verdict.

    ``witness`` is ``None`` for passes; for failures it is a dict with the
    offending point(s) and values.  ``flags`` holds qualifiers such as
    ``"nonstrict"`` or ``"JumpCrossing"``.
    """

    name: str
    verdict: str
    witness: Optional[dict] = None
    tolerance_used: float = 0.0
    flags: tuple = ()

    def __post_init__(self):
        if self.verdict not in (PASS, FAIL, VACUOUS):
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if self.verdict == FAIL and self.witness is None:
            raise ValueError("a failing check needs a witness")

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "verdict": self.verdict,
            "witness": self.witness,
            "tolerance_used": self.tolerance_used,
            "flags": list(self.flags),
        }


@dataclass
class DiagnosticReport:
    checks: list = field(default_factory=list)

    def add(self, entry) -> "DiagnosticReport":
        if isinstance(entry, DiagnosticReport):
            self.checks.extend(entry.checks)
        else:
            self.checks.append(entry)
        return self

    @property
    def failures(self) -> list:
        return [c for c in self.checks if c.verdict == FAIL]

    @property
    def ok(self) -> bool:
        return not self.failures

    def counts(self) -> dict:
        out = {PASS: 0, FAIL: 0, VACUOUS: 0}
        for c in self.checks:
            out[c.verdict] += 1
        return out

    def to_dict(self) -> dict:
        return {"checks": [c.to_dict() for c in self.checks], "summary": self.counts()}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), allow_nan=False, **kwargs)


def _interior(lo: float, hi: float, size: int) -> np.ndarray:
    k = np.arange(1, size + 1)
    return lo + (hi - lo) * k / (size + 1)


def _pair(t, s, ft, fs) -> dict:
    return {"t": float(t), "s": float(s), "f_t": float(ft), "f_s": float(fs)}


def _error_witness(err: Exception, **extra) -> dict:
    out = dict(extra)
    out["error"] = getattr(err, "code", type(err).__name__)
    out["message"] = str(err)
    return out


def check_comparison_monotone(
    model: PsiModel,
    x,
    y,
    grid_size: int = DEFAULT_GRID,
    strict: bool = True,
    opts: Optional[SolveOptions] = None,
) -> CheckResult:
    """Is ``t -> -psi(x, t) / psi(y, t)`` increasing on ``(theta1(x), theta1(y))``?

    Consecutive grid values must increase by more than
    ``1e-12 * (1 + |value|)`` for a strict pass.  Steps inside that band
    downgrade the result to a nonstrict pass and emit
    :class:`NonStrictWarning`; a drop below the band is a failure with the
    first offending pair as witness.
    """
    name = f"comparison_monotone(x={x!r}, y={y!r})"
    try:
        r = comparison_function(model, x, y, opts)
    except DomainEmpty:
        return CheckResult(name, VACUOUS, tolerance_used=STRICT_TOL)
    ts = _interior(r.lo, r.hi, int(grid_size))
    try:
        vs = r.values(ts)
    except PsiError as err:
        return CheckResult(name, FAIL, _error_witness(err), STRICT_TOL)
    thr = STRICT_TOL * (1.0 + np.abs(vs[:-1]))
    diff = np.diff(vs)
    drops = np.flatnonzero(diff < -thr)
    if drops.size:
        i = int(drops[0])
        return CheckResult(name, FAIL, _pair(ts[i], ts[i + 1], vs[i], vs[i + 1]), STRICT_TOL)
    flags = ()
    if strict:
        flat = np.flatnonzero(diff <= thr)
        if flat.size:
            i = int(flat[0])
            warnings.warn(
                f"{name}: step {diff[i]!r} at t={ts[i]!r} is within the strictness band; "
                "only nondecreasing is confirmed",
                NonStrictWarning,
                stacklevel=2,
            )
            flags = ("nonstrict",)
    else:
        flags = ("nonstrict",)
    return CheckResult(name, PASS, None, STRICT_TOL, flags)


def check_decreasing_product(
    model: PsiModel,
    weight: MonotoneWeight,
    z,
    grid,
    rel_tol: float = 1e-9,
) -> CheckResult:
    """Is ``p(t) psi(z, t)`` nonincreasing on ``grid``, positive left of ``theta1(z)`` and negative right?

    The cell containing ``theta1(z)`` is skipped for the monotonicity test.
    Values are compared with tolerance ``rel_tol * max |p psi|``; weights
    obtained by quadrature need ``rel_tol`` at the level of their own error.
    """
    name = f"decreasing_product(z={z!r})"
    grid = np.asarray(grid, dtype=float)
    th = theta1_value(model, z)
    if model.vectorized:
        psi = np.asarray(model.psi(z, grid), dtype=float) * np.ones_like(grid)
    else:
        psi = np.array([float(model.psi(z, t)) for t in grid])
    values = weight(grid) * psi
    tol = rel_tol * float(np.max(np.abs(values))) if values.size else 0.0
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        i = int(bad[0])
        return CheckResult(name, FAIL, {"t": float(grid[i]), "value": float(values[i])}, tol)

    diff = np.diff(values)
    around = (grid[:-1] <= th) & (th <= grid[1:])
    rising = np.flatnonzero((diff > tol) & ~around)
    if rising.size:
        i = int(rising[0])
        return CheckResult(name, FAIL, _pair(grid[i], grid[i + 1], values[i], values[i + 1]), tol)
    wrong = np.flatnonzero(((grid < th) & (values < -tol)) | ((grid > th) & (values > tol)))
    if wrong.size:
        i = int(wrong[0])
        return CheckResult(name, FAIL, {"t": float(grid[i]), "value": float(values[i]), "theta1": th}, tol)
    return CheckResult(name, PASS, None, tol)


def check_weighted_estimator_family(
    model: PsiModel,
    samples: Sequence[WeightedSample],
    points: int = 256,
    opts: Optional[SolveOptions] = None,
) -> DiagnosticReport:
    """Estimate each sample and confirm a single sign change of its weighted sum.

    The weighted sum is probed at ``points`` uniform locations on each side
    of the estimate, over a span covering all ``theta1`` values of the
    sample.  Solver errors become failures with the error as witness.
    """
    report = DiagnosticReport()
    for i, sample in enumerate(samples):
        name = f"weighted_estimator[{i}]"
        try:
            res = estimate(model, sample, opts)
            lo, hi = working_span(model, [x for x, _ in sample.active()])
        except PsiError as err:
            report.add(CheckResult(name, FAIL, _error_witness(err, sample=i), 0.0))
            continue
        f = weighted_psi_sum(model, sample)
        hit = sign_profile(f, res.theta, min(lo, res.theta), max(hi, res.theta), points, gap=res.width)
        if hit is None:
            report.add(CheckResult(name, PASS, None, res.width))
        else:
            t, v = hit
            report.add(CheckResult(name, FAIL, {"sample": i, "theta": res.theta, "t": t, "value": v}, res.width))
    return report


def check_z_property(
    model: PsiModel,
    sample: WeightedSample,
    opts: Optional[SolveOptions] = None,
) -> CheckResult:
    """Does the weighted sum vanish at the estimate?

    The tolerance is ``residual_tol`` times the bracket scale used by the
    solver.  Continuous models fail on a nonzero residual; for other models
    it only means the crossing is a jump, reported as vacuous with the
    ``JumpCrossing`` flag.
    """
    name = "z_property"
    opts = opts or SolveOptions()
    try:
        res = estimate(model, sample, opts)
    except PsiError as err:
        return CheckResult(name, FAIL, _error_witness(err), 0.0)
    tol = opts.residual_tol * res.scale
    if res.crossing is Crossing.ZERO:
        return CheckResult(name, PASS, None, tol)
    witness = {"t": res.theta, "value": res.residual}
    if model.continuous:
        return CheckResult(name, FAIL, witness, tol)
    return CheckResult(name, VACUOUS, witness, tol, (Crossing.JUMP.value,))


def comparison_samples(
    model: PsiModel,
    x,
    y,
    levels: int = 17,
    grid_size: int = DEFAULT_GRID,
) -> list:
    """Two-point weighted samples ``((x, y), (1, L))`` probing one comparison function.

    The sum ``psi(x, t) + L psi(y, t)`` changes sign where the comparison
    function crosses ``L``, so each level tests uniqueness at one height.
    Levels are the function's values at ``levels`` interior points, plus the
    midpoint of a failing pair when the monotonicity check finds one.
    """
    try:
        r = comparison_function(model, x, y)
    except DomainEmpty:
        return []
    heights = list(r.values(_interior(r.lo, r.hi, int(levels))))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonStrictWarning)
        verdict = check_comparison_monotone(model, x, y, grid_size)
    if verdict.verdict == FAIL and "f_t" in verdict.witness:
        heights.append(0.5 * (verdict.witness["f_t"] + verdict.witness["f_s"]))
    return [
        WeightedSample((x, y), (1.0, float(h)))
        for h in heights
        if math.isfinite(h) and h > 0
    ]

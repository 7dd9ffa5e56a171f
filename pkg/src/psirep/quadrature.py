"""Quadrature rules used by the representation layer.

``gauss_legendre_cells`` applies a fixed rule cell by cell, for integrands
that are smooth between known break points.
``adaptive_simpson`` integrates a batch of intervals at once, one vectorized
integrand call per refinement level.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class QuadratureOptions:
    """Settings for the log-weight and loss integrals.

    Attributes
    ----------
    refine : int
        Each working-grid cell is split into this many sub-cells when the
        log-weight is built.
    split_tol : float
        For a callable ``q``, sub-cells are split further until
        ``|q(b) - q(a)| * (b - a) <= split_tol``; this keeps the cubic
        interpolation of ``log p`` accurate where ``q`` varies fast, such as
        near a boundary of the parameter interval.
    max_nodes : int
        Node budget for that splitting.
    loss_rule : {"gauss", "simpson"}
        Rule for convexified-loss integrals.  ``"gauss"`` applies a fixed
        Gauss-Legendre rule on every cell of the weight grid, where the
        integrand is smooth; its nodes do not move with the upper limit, so
        sums of losses are smooth in ``t``.  ``"simpson"`` is adaptive and
        re-partitions per call.
    gauss_points : int
        Nodes per cell for ``"gauss"``.
    simpson_tol : float
        Absolute error target of one adaptive Simpson integral.
    simpson_rel_tol : float
        Relative error target, measured against the coarse estimate.
    max_depth : int
        Maximum bisection depth of one Simpson panel.
    """

    refine: int = 4
    split_tol: float = 1e-4
    max_nodes: int = 200_000
    loss_rule: str = "gauss"
    gauss_points: int = 8
    simpson_tol: float = 1e-10
    simpson_rel_tol: float = 1e-13
    max_depth: int = 40


@lru_cache(maxsize=None)
def _leggauss(points: int):
    nodes, weights = np.polynomial.legendre.leggauss(points)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_legendre_cells(f, edges, points=8) -> np.ndarray:
    """Integral of ``f`` over each cell ``[edges[k], edges[k+1]]``.

    ``edges`` may have extra leading dimensions; ``f`` must broadcast over
    the abscissa array it is given.
    """
    nodes, weights = _leggauss(points)
    edges = np.asarray(edges, dtype=float)
    lo = edges[..., :-1, None]
    half = 0.5 * (edges[..., 1:, None] - lo)
    s = lo + half * (1.0 + nodes)
    return (half[..., 0]) * (np.asarray(f(s), dtype=float) @ weights)


def adaptive_simpson(f, a, b, tol=1e-10, rel_tol=0.0, max_depth=40, initial_panels=4):
    """Integrate ``f`` over each interval ``[a[k], b[k]]``.

    Parameters
    ----------
    f : callable
        ``f(s, k)`` with ``s`` an array of abscissae and ``k`` the matching
        array of interval indices; returns an array of integrand values.
    a, b : array_like
        Interval endpoints; ``b < a`` gives a negated integral.
    tol : float
        Absolute tolerance per interval.
    rel_tol : float
        Relative tolerance per interval, against the first Simpson estimate.
    max_depth : int
        Panels at this depth are accepted whatever their error estimate.
    initial_panels : int
        Number of equal panels each interval starts from.

    Returns
    -------
    values, errors : ndarray
        Richardson-corrected integrals and the summed local error estimates.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    size = a.shape[0]
    values = np.zeros(size)
    errors = np.zeros(size)

    idx = np.repeat(np.arange(size), initial_panels)
    frac = np.tile(np.arange(initial_panels + 1) / initial_panels, (size, 1))
    edges = a[:, None] + (b - a)[:, None] * frac
    lo = edges[:, :-1].ravel()
    hi = edges[:, 1:].ravel()
    mid = 0.5 * (lo + hi)

    s = np.concatenate([lo, mid, hi])
    fv = np.asarray(f(s, np.concatenate([idx, idx, idx])), dtype=float)
    n = lo.size
    flo, fmid, fhi = fv[:n], fv[n : 2 * n], fv[2 * n :]
    whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)

    coarse = np.zeros(size)
    np.add.at(coarse, idx, whole)
    budget = np.maximum(tol, rel_tol * np.abs(coarse)) / initial_panels
    panel_tol = budget[idx]

    depth = 0
    while lo.size:
        lm = 0.5 * (lo + mid)
        rm = 0.5 * (mid + hi)
        fv = np.asarray(f(np.concatenate([lm, rm]), np.concatenate([idx, idx])), dtype=float)
        flm, frm = fv[: lo.size], fv[lo.size :]
        left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi)
        delta = left + right - whole
        accept = (np.abs(delta) <= 15.0 * panel_tol) | (depth >= max_depth)
        if np.any(accept):
            np.add.at(values, idx[accept], (left + right + delta / 15.0)[accept])
            np.add.at(errors, idx[accept], np.abs(delta[accept]) / 15.0)
        keep = ~accept
        if not np.any(keep):
            break
        idx = np.concatenate([idx[keep], idx[keep]])
        panel_tol = np.concatenate([panel_tol[keep], panel_tol[keep]]) * 0.5
        lo, mid, hi = (
            np.concatenate([lo[keep], mid[keep]]),
            np.concatenate([lm[keep], rm[keep]]),
            np.concatenate([mid[keep], hi[keep]]),
        )
        flo, fmid, fhi = (
            np.concatenate([flo[keep], fmid[keep]]),
            np.concatenate([flm[keep], frm[keep]]),
            np.concatenate([fmid[keep], fhi[keep]]),
        )
        whole = np.concatenate([left[keep], right[keep]])
        depth += 1
    return values, errors

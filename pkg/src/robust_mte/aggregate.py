"""Combine covariate-cell confidence intervals into one for the population average.

Each covariate cell ``w`` supplies an interval for its own target ``lambda(w)``.
Building every cell interval at coverage ``(1 - alpha)^(1/|W|)`` makes the
intervals hold jointly with probability ``1 - alpha`` when cells are
independent, and the population target ``sum_w q(w) lambda(w)`` then lies in
the mass-weighted combination.  When the masses are estimated, a box for ``q``
at coverage ``1 - alpha_1`` is added with a Bonferroni split of ``alpha``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import ConfigError
from .results import ConfidenceSet

MASS_TOL = 1e-10


@dataclass(frozen=True)
class CellCI:
    """Confidence interval for one covariate cell at coverage ``level``."""

    w: object
    interval: tuple
    level: float

    def __post_init__(self):
        lo, hi = (float(v) for v in self.interval)
        if not lo <= hi:
            raise ConfigError(f"cell {self.w!r}: interval lower end exceeds upper end")
        if not 0.0 < self.level < 1.0:
            raise ConfigError(f"cell {self.w!r}: coverage level must lie in (0, 1)")
        object.__setattr__(self, "interval", (lo, hi))

    @property
    def lo(self):
        return self.interval[0]

    @property
    def hi(self):
        return self.interval[1]

    @property
    def midpoint(self):
        return 0.5 * (self.lo + self.hi)


def sidak_cell_level(alpha, n_cells):
    """Per-cell coverage ``(1 - alpha)^(1/n_cells)``."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    if n_cells < 1:
        raise ConfigError("need at least one covariate cell")
    return (1.0 - alpha) ** (1.0 / n_cells)


def cell_alpha(alpha, n_cells):
    """Per-cell test level matching :func:`sidak_cell_level`."""
    return 1.0 - sidak_cell_level(alpha, n_cells)


def _check_cells(cells, alpha=None):
    cells = list(cells)
    if not cells:
        raise ConfigError("need at least one covariate cell")
    levels = np.array([c.level for c in cells])
    if np.ptp(levels) > 1e-12:
        raise ConfigError("cell confidence levels differ; build every cell at the same level")
    if alpha is not None:
        want = sidak_cell_level(alpha, len(cells))
        if abs(levels[0] - want) > 1e-9:
            raise ConfigError(
                f"cell level {levels[0]:.6g} does not match (1 - alpha)^(1/{len(cells)}) = {want:.6g}")
    return cells


def aggregate_known_mass(cells, mass, alpha=None):
    """Mass-weighted Minkowski sum of the cell intervals.

    Parameters
    ----------
    cells : sequence of CellCI
        All built at the same coverage; with ``alpha`` given it must equal
        :func:`sidak_cell_level` for that ``alpha``.
    mass : array_like
        Known cell masses summing to one.
    alpha : float, optional
        Overall level, inferred from the cell level when omitted.
    """
    cells = _check_cells(cells, alpha)
    q = np.asarray(mass, dtype=float)
    if q.shape != (len(cells),):
        raise ConfigError("mass must have one entry per cell")
    if np.any(q < 0) or abs(q.sum() - 1.0) > MASS_TOL:
        raise ConfigError("cell masses must be nonnegative and sum to 1")
    lo = float(q @ [c.lo for c in cells])
    hi = float(q @ [c.hi for c in cells])
    if alpha is None:
        alpha = 1.0 - cells[0].level ** len(cells)
    return ConfidenceSet(intervals=((lo, hi),), level=1.0 - float(alpha), grid=())


def simplex_box_vertices(lower, upper):
    """Vertices of ``{q : lower <= q <= upper, sum(q) = 1}``.

    Each vertex has every coordinate but one at a bound, with the remaining
    coordinate fixed by the sum constraint.
    """
    lower = np.clip(np.asarray(lower, dtype=float), 0.0, 1.0)
    upper = np.clip(np.asarray(upper, dtype=float), 0.0, 1.0)
    k = lower.size
    if np.any(lower > upper):
        raise ConfigError("mass interval lower end exceeds upper end")
    out = []
    for j in range(k):
        others = [i for i in range(k) if i != j]
        for pick in itertools.product((0, 1), repeat=k - 1):
            q = np.empty(k)
            for i, side in zip(others, pick):
                q[i] = upper[i] if side else lower[i]
            q[j] = 1.0 - q[others].sum()
            if lower[j] - 1e-12 <= q[j] <= upper[j] + 1e-12:
                q[j] = min(max(q[j], lower[j]), upper[j])
                out.append(q)
    if not out:
        raise ConfigError("mass confidence box does not intersect the probability simplex")
    return np.unique(np.round(np.array(out), 15), axis=0)


def aggregate_estimated_mass(cells, mass_ci, alpha2=None, alpha=None):
    """Range of ``sum_w q(w) lambda(w)`` over the mass box and the cell intervals.

    The objective is bilinear, so for each ``q`` the extremes use the cell
    endpoints and the range over ``q`` is attained at a vertex of the box
    intersected with the simplex.

    Parameters
    ----------
    cells : sequence of CellCI
        Built at coverage ``(1 - alpha2)^(1/|W|)``.
    mass_ci : sequence of (lo, hi)
        Per-cell mass intervals holding jointly at coverage ``1 - alpha1``.
    alpha2 : float, optional
        Level spent on the cell intervals; checked against the cell level.
    alpha : float, optional
        Overall level ``alpha1 + alpha2``; the result records coverage ``1 - alpha``.
    """
    cells = _check_cells(cells, alpha2)
    box = np.asarray(mass_ci, dtype=float)
    if box.shape != (len(cells), 2):
        raise ConfigError("mass_ci must hold one (lo, hi) pair per cell")
    verts = simplex_box_vertices(box[:, 0], box[:, 1])
    lo = float(np.min(verts @ [c.lo for c in cells]))
    hi = float(np.max(verts @ [c.hi for c in cells]))
    if alpha is None:
        alpha = 1.0 - cells[0].level ** len(cells)
    return ConfidenceSet(intervals=((lo, hi),), level=1.0 - float(alpha), grid=())


def mass_confidence_box(counts, alpha1):
    """Bonferroni box of Wald intervals for multinomial cell masses.

    Each share gets ``q_hat +- z sqrt(q_hat (1 - q_hat) / n)`` with
    ``z`` the ``1 - alpha1 / (2 |W|)`` normal quantile, clipped to ``[0, 1]``.
    """
    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 1 or counts.size < 1 or np.any(counts < 0) or counts.sum() <= 0:
        raise ConfigError("counts must be a nonnegative vector with positive total")
    if not 0.0 < alpha1 < 1.0:
        raise ConfigError("alpha1 must lie in (0, 1)")
    n = counts.sum()
    q = counts / n
    z = norm.ppf(1.0 - alpha1 / (2.0 * counts.size))
    half = z * np.sqrt(q * (1.0 - q) / n)
    return np.column_stack([np.clip(q - half, 0.0, 1.0), np.clip(q + half, 0.0, 1.0)])


def default_alpha1(alpha):
    """Share of ``alpha`` spent on the mass box when masses are estimated."""
    return alpha / 5.0

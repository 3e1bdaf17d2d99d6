import itertools

import numpy as np
import pytest
from scipy.stats import norm

from robust_mte.aggregate import (CellCI, aggregate_estimated_mass, aggregate_known_mass,
                                  cell_alpha, default_alpha1, mass_confidence_box,
                                  sidak_cell_level, simplex_box_vertices)
from robust_mte.errors import ConfigError


def _cells(intervals, level=0.9):
    return [CellCI(w=i, interval=iv, level=level) for i, iv in enumerate(intervals)]


def test_sidak_level():
    assert sidak_cell_level(0.1, 1) == pytest.approx(0.9)
    assert sidak_cell_level(0.1, 2) == pytest.approx(0.9 ** 0.5)
    assert cell_alpha(0.05, 3) == pytest.approx(1 - 0.95 ** (1 / 3))
    with pytest.raises(ConfigError):
        sidak_cell_level(0.0, 2)
    with pytest.raises(ConfigError):
        sidak_cell_level(0.1, 0)


def test_single_cell_unchanged():
    cs = aggregate_known_mass(_cells([(-0.3, 1.7)]), [1.0])
    assert cs.hull == (-0.3, 1.7)


def test_symmetric_average():
    cs = aggregate_known_mass(_cells([(-1, 1), (-1, 1)]), [0.5, 0.5])
    assert cs.hull == (-1.0, 1.0)


def test_known_mass_weighted_sum():
    cs = aggregate_known_mass(_cells([(0, 1), (2, 3), (-1, 0)]), [0.2, 0.3, 0.5])
    assert cs.hull == pytest.approx((0.2 * 0 + 0.3 * 2 - 0.5, 0.2 + 0.9))


def test_known_mass_errors():
    with pytest.raises(ConfigError):
        aggregate_known_mass(_cells([(0, 1), (0, 1)]), [0.5, 0.5 + 1e-8])
    with pytest.raises(ConfigError):
        aggregate_known_mass([CellCI(0, (0, 1), 0.9), CellCI(1, (0, 1), 0.95)], [0.5, 0.5])
    with pytest.raises(ConfigError):
        aggregate_known_mass(_cells([(0, 1), (0, 1)], 0.9), [0.5, 0.5], alpha=0.1)
    with pytest.raises(ConfigError):
        CellCI(0, (1, 0), 0.9)
    with pytest.raises(ConfigError):
        CellCI(0, (0, 1), 1.0)


def test_level_check_passes_for_sidak_cells():
    level = sidak_cell_level(0.1, 2)
    cs = aggregate_known_mass(_cells([(0, 1), (1, 2)], level), [0.5, 0.5], alpha=0.1)
    assert cs.level == pytest.approx(0.9)


def test_estimated_mass_corner_example():
    cs = aggregate_estimated_mass(_cells([(0, 1), (2, 3)]), [(0.4, 0.6), (0.4, 0.6)])
    assert cs.hull == pytest.approx((0.8, 2.2), abs=1e-14)


def test_degenerate_mass_box_reduces_to_known():
    cells = _cells([(0, 1), (2, 3), (-1, 4)])
    q = np.array([0.25, 0.35, 0.4])
    est = aggregate_estimated_mass(cells, np.column_stack([q, q]))
    known = aggregate_known_mass(cells, q)
    assert est.hull == pytest.approx(known.hull, abs=1e-14)


def test_infeasible_box():
    with pytest.raises(ConfigError, match="simplex"):
        simplex_box_vertices([0.6, 0.6], [0.7, 0.8])
    with pytest.raises(ConfigError):
        simplex_box_vertices([0.5, 0.2], [0.4, 0.3])


def test_vertices_lie_in_box_and_simplex():
    rng = np.random.default_rng(0)
    for _ in range(100):
        k = rng.integers(2, 6)
        q = rng.dirichlet(np.ones(k))
        lo = np.clip(q - rng.uniform(0, 0.2, k), 0, 1)
        hi = np.clip(q + rng.uniform(0, 0.2, k), 0, 1)
        v = simplex_box_vertices(lo, hi)
        np.testing.assert_allclose(v.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(v >= lo - 1e-12) and np.all(v <= hi + 1e-12)


@pytest.mark.parametrize("case", range(20))
def test_three_cell_grid_oracle(case):
    # masses on a 1/40 lattice so that every vertex of the box-simplex polytope is a grid point
    rng = np.random.default_rng(100 + case)
    steps = 40
    while True:
        lo_i = rng.integers(0, 20, 3)
        hi_i = lo_i + rng.integers(1, 20, 3)
        if lo_i.sum() <= steps <= hi_i.sum():
            break
    intervals = np.sort(rng.normal(size=(3, 2)) * 3, axis=1)
    cells = _cells(intervals)
    cs = aggregate_estimated_mass(cells, np.column_stack([lo_i, hi_i]) / steps)
    best_lo, best_hi = np.inf, -np.inf
    for a, b in itertools.product(range(lo_i[0], hi_i[0] + 1), range(lo_i[1], hi_i[1] + 1)):
        c = steps - a - b
        if not lo_i[2] <= c <= hi_i[2]:
            continue
        q = np.array([a, b, c]) / steps
        # interval endpoints of the bilinear objective for fixed q
        best_lo = min(best_lo, q @ intervals[:, 0])
        best_hi = max(best_hi, q @ intervals[:, 1])
    assert cs.hull == pytest.approx((best_lo, best_hi), abs=1e-12)


def test_contains_weighted_midpoint():
    rng = np.random.default_rng(7)
    for _ in range(50):
        k = rng.integers(2, 5)
        intervals = np.sort(rng.normal(size=(k, 2)), axis=1)
        counts = rng.integers(20, 200, k)
        box = mass_confidence_box(counts, 0.02)
        q_hat = counts / counts.sum()
        mid = q_hat @ intervals.mean(axis=1)
        cs = aggregate_estimated_mass(_cells(intervals), box)
        assert cs.contains(mid)


def test_widens_with_more_cells():
    # the same per-cell data, split into more cells, needs higher per-cell coverage
    se, est = 0.1, 1.0
    widths = []
    for k in (1, 2, 4, 8):
        z = norm.ppf(0.5 + sidak_cell_level(0.1, k) / 2)
        cells = _cells([(est - z * se, est + z * se)] * k, sidak_cell_level(0.1, k))
        widths.append(np.ptp(aggregate_known_mass(cells, np.full(k, 1 / k)).hull))
    assert all(np.diff(widths) >= 0)


def test_mass_box():
    box = mass_confidence_box([50, 150], 0.02)
    z = norm.ppf(1 - 0.02 / 4)
    half = z * np.sqrt(0.25 * 0.75 / 200)
    np.testing.assert_allclose(box[0], [0.25 - half, 0.25 + half])
    assert default_alpha1(0.1) == pytest.approx(0.02)
    with pytest.raises(ConfigError):
        mass_confidence_box([0, 0], 0.02)


def _two_cell_draw(rng, n, q, means):
    w = (rng.random(n) < q[1]).astype(int)
    y = np.asarray(means)[w] + rng.standard_normal(n)
    return w, y


@pytest.mark.parametrize("estimated", [False, True])
def test_monte_carlo_coverage(estimated):
    alpha, alpha1 = 0.1, 0.02
    q, means = np.array([0.3, 0.7]), np.array([1.0, -0.5])
    truth = q @ means
    rng = np.random.default_rng(42)
    alpha2 = alpha - alpha1 if estimated else alpha
    level = sidak_cell_level(alpha2, 2)
    z = norm.ppf(0.5 + level / 2)
    hits = []
    for _ in range(500):
        w, y = _two_cell_draw(rng, 400, q, means)
        cells = []
        for cell in (0, 1):
            yc = y[w == cell]
            half = z * yc.std(ddof=1) / np.sqrt(yc.size)
            cells.append(CellCI(cell, (yc.mean() - half, yc.mean() + half), level))
        if estimated:
            box = mass_confidence_box(np.bincount(w, minlength=2), alpha1)
            cs = aggregate_estimated_mass(cells, box, alpha2=alpha2, alpha=alpha)
        else:
            cs = aggregate_known_mass(cells, q, alpha=alpha)
        hits.append(cs.contains(truth))
    assert np.mean(hits) >= 1 - alpha - 0.03

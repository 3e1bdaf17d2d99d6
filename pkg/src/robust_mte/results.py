"""Result containers returned by every test and confidence-set routine."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if np.isfinite(v) else (None if np.isnan(v) else ("inf" if v > 0 else "-inf"))
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


@dataclass(frozen=True)
class TestResult:
    """Outcome of one hypothesis test; ``reject`` is ``statistic > critical_value``."""

    __test__ = False  # keep pytest from collecting this class

    statistic: float
    critical_value: float
    level: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise ValueError(f"level must lie in (0, 1), got {self.level}")

    @property
    def reject(self):
        return bool(self.statistic > self.critical_value)

    def to_dict(self):
        return _jsonable({
            "statistic": self.statistic,
            "critical_value": self.critical_value,
            "reject": self.reject,
            "level": self.level,
            **self.meta,
        })


@dataclass(frozen=True)
class ConfidenceSet:
    """Accepted values from a test inversion.

    ``intervals`` lists the maximal accepted runs (after boundary refinement);
    ``hull`` is their convex hull, or ``None`` when nothing was accepted.
    ``level`` is the coverage ``1 - alpha``.
    ``touches_lower`` / ``touches_upper`` flag runs that reach the grid ends,
    which means the set may extend beyond the searched range.
    """

    intervals: tuple
    level: float
    grid: tuple
    touches_lower: bool = False
    touches_upper: bool = False

    @property
    def empty(self):
        return len(self.intervals) == 0

    @property
    def hull(self):
        if self.empty:
            return None
        return (self.intervals[0][0], self.intervals[-1][1])

    def contains(self, value):
        return any(lo <= value <= hi for lo, hi in self.intervals)

    def to_dict(self):
        return _jsonable({
            "ci": [list(iv) for iv in self.intervals],
            "hull": list(self.hull) if self.hull is not None else None,
            "empty": self.empty,
            "level": self.level,
            "grid": list(self.grid),
            "touches_lower": self.touches_lower,
            "touches_upper": self.touches_upper,
        })

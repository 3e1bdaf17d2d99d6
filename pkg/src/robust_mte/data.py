"""Micro-data loading, cell-level estimators and their covariance estimators."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, OverlapError

DEFAULT_SCHEMA = {"y": "y", "d": "d", "z": "z"}
PROPENSITY_TIE_TOL = 1e-8


@dataclass(frozen=True)
class Dataset:
    """Unit records stored column-wise.

    ``z`` and ``w`` hold integer codes into ``instrument_levels`` and
    ``covariate_levels``.  The first instrument level is the baseline ``z_0``.
    """

    y: np.ndarray
    d: np.ndarray
    z: np.ndarray
    instrument_levels: tuple
    w: np.ndarray | None = None
    covariate_levels: tuple | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        d = np.asarray(self.d)
        z = np.asarray(self.z, dtype=np.int64)
        if y.ndim != 1 or y.size == 0:
            raise DataError("dataset must contain at least one record")
        if not (d.shape == z.shape == y.shape):
            raise DataError("y, d and z must have the same length")
        if not np.all((d == 0) | (d == 1)):
            raise DataError("invalid treatment value: d must be 0 or 1")
        if z.min() < 0 or z.max() >= len(self.instrument_levels):
            raise DataError("instrument code outside instrument_levels")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d.astype(np.int8))
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "instrument_levels", tuple(self.instrument_levels))
        if self.w is not None:
            w = np.asarray(self.w, dtype=np.int64)
            if w.shape != y.shape:
                raise DataError("covariate column must have one entry per record")
            if self.covariate_levels is None:
                raise DataError("covariate codes given without covariate_levels")
            object.__setattr__(self, "w", w)
            object.__setattr__(self, "covariate_levels", tuple(self.covariate_levels))

    @property
    def n(self):
        return self.y.size

    @property
    def n_levels(self):
        return len(self.instrument_levels)

    @classmethod
    def from_labels(cls, y, d, z, w=None, instrument_levels=None, covariate_levels=None):
        """Build a dataset from raw labels, ordering levels by first appearance."""
        z = np.asarray(z).astype(str)
        z_levels, z_codes = _encode(z, instrument_levels, "instrument")
        w_levels = w_codes = None
        if w is not None:
            w = np.asarray(w).astype(str)
            w_levels, w_codes = _encode(w, covariate_levels, "covariate")
        return cls(y=y, d=d, z=z_codes, instrument_levels=z_levels,
                   w=w_codes, covariate_levels=w_levels)


def _encode(labels, levels, what):
    if levels is None:
        levels = tuple(pd.unique(labels))
    else:
        levels = tuple(str(v) for v in levels)
        unknown = set(np.unique(labels)) - set(levels)
        if unknown:
            raise DataError(f"{what} labels {sorted(unknown)} missing from the configured ordering")
    index = {v: i for i, v in enumerate(levels)}
    return levels, np.array([index[v] for v in labels], dtype=np.int64)


def load_csv(path, schema=None, instrument_levels=None, covariate_levels=None):
    """Read unit records from a headed CSV file.

    Parameters
    ----------
    path : str or path-like
    schema : dict, optional
        Maps the roles ``y``, ``d``, ``z`` and optionally ``w`` to column names.
    instrument_levels, covariate_levels : sequence of str, optional
        Explicit level ordering; defaults to first appearance in the file.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    unknown_roles = set(schema) - {"y", "d", "z", "w"}
    if unknown_roles:
        raise ConfigError(f"unknown schema roles {sorted(unknown_roles)}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise DataError(f"empty file: {path}") from None
    if frame.shape[0] == 0:
        raise DataError(f"empty file: {path}")
    for role, column in schema.items():
        if column is not None and column not in frame.columns:
            raise ConfigError(f"missing column {column!r} for role {role!r}")

    try:
        y = frame[schema["y"]].astype(float).to_numpy()
    except ValueError:
        raise DataError(f"unparseable outcome in column {schema['y']!r}") from None
    d_raw = frame[schema["d"]].str.strip()
    d_num = pd.to_numeric(d_raw, errors="coerce")
    if d_num.isna().any() or not d_num.isin([0, 1]).all():
        bad = d_raw[d_num.isna() | ~d_num.isin([0, 1])].iloc[0]
        raise DataError(f"invalid treatment value {bad!r}: d must be 0 or 1")
    w = frame[schema["w"]].to_numpy() if schema.get("w") else None
    return Dataset.from_labels(
        y=y,
        d=d_num.to_numpy().astype(int),
        z=frame[schema["z"]].to_numpy(),
        w=w,
        instrument_levels=instrument_levels,
        covariate_levels=covariate_levels,
    )


def split_by_covariate(data):
    """Split into one dataset per covariate value, keeping the instrument coding.

    Every covariate cell must contain every instrument level.
    """
    if data.w is None:
        raise DataError("dataset has no covariate column")
    out = {}
    for code, label in enumerate(data.covariate_levels):
        mask = data.w == code
        present = np.unique(data.z[mask])
        if present.size != data.n_levels:
            missing = [data.instrument_levels[i] for i in range(data.n_levels) if i not in present]
            raise DataError(
                f"covariate cell {label!r} lacks instrument levels {missing}; "
                "every covariate cell must share the same instrument level set"
            )
        out[label] = Dataset(y=data.y[mask], d=data.d[mask], z=data.z[mask],
                             instrument_levels=data.instrument_levels)
    return out


@dataclass(frozen=True)
class CellStats:
    """Per-instrument-value estimates.

    ``sigma2`` and ``counts`` are indexed ``[d, l]`` with row 0 the untreated arm
    and row 1 the treated arm.
    """

    q_hat: np.ndarray
    p_hat: np.ndarray
    beta1_hat: np.ndarray
    beta0_hat: np.ndarray
    sigma2: np.ndarray
    counts: np.ndarray
    n: int
    instrument_levels: tuple = ()
    thin_cells: bool = False

    def __post_init__(self):
        for name in ("q_hat", "p_hat", "beta1_hat", "beta0_hat", "sigma2"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        counts = np.array(self.counts, dtype=np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "n", int(self.n))
        if not self.instrument_levels:
            object.__setattr__(self, "instrument_levels",
                               tuple(str(i) for i in range(self.q_hat.size)))

    @property
    def K(self):
        return self.q_hat.size - 1

    def q_cell(self, d):
        """``q(d, z_l)``: share of the sample in cell ``(d, z_l)``."""
        return self.p_hat * self.q_hat if d == 1 else (1.0 - self.p_hat) * self.q_hat

    def to_dict(self):
        return {
            "q_hat": self.q_hat.tolist(),
            "p_hat": self.p_hat.tolist(),
            "beta1_hat": self.beta1_hat.tolist(),
            "beta0_hat": self.beta0_hat.tolist(),
            "sigma2": self.sigma2.tolist(),
            "counts": self.counts.tolist(),
            "n": self.n,
            "instrument_levels": list(self.instrument_levels),
        }

    @classmethod
    def from_dict(cls, obj):
        sigma2 = np.asarray(obj["sigma2"], dtype=float)
        counts = np.asarray(obj["counts"], dtype=np.int64)
        return cls(
            q_hat=obj["q_hat"], p_hat=obj["p_hat"],
            beta1_hat=obj["beta1_hat"], beta0_hat=obj["beta0_hat"],
            sigma2=sigma2, counts=counts, n=obj["n"],
            instrument_levels=tuple(obj.get("instrument_levels", ())),
            thin_cells=bool(np.any((counts == 1) & (sigma2 == 0))),
        )

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def cell_stats(data):
    """Sample shares, propensity scores and arm-specific outcome moments by cell."""
    k1 = data.n_levels
    n = data.n
    counts = np.zeros((2, k1), dtype=np.int64)
    sums = np.zeros((2, k1))
    np.add.at(counts, (data.d, data.z), 1)
    np.add.at(sums, (data.d, data.z), data.y)
    for d in (1, 0):
        for ell in range(k1):
            if counts[d, ell] == 0:
                raise OverlapError(
                    f"overlap violated at (d={d}, z={str(data.instrument_levels[ell])!r}): "
                    "no observations in cell"
                )
    means = sums / counts
    resid = data.y - means[data.d, data.z]
    ssq = np.zeros((2, k1))
    np.add.at(ssq, (data.d, data.z), resid**2)
    sigma2 = ssq / counts

    z_counts = counts.sum(axis=0)
    thin = bool(np.any((counts == 1) & (sigma2 == 0)))
    if thin:
        warnings.warn("cells with a single observation give zero outcome variance",
                      RuntimeWarning, stacklevel=2)
    return CellStats(
        q_hat=z_counts / n,
        p_hat=counts[1] / z_counts,
        beta1_hat=means[1],
        beta0_hat=means[0],
        sigma2=sigma2,
        counts=counts,
        n=n,
        instrument_levels=data.instrument_levels,
        thin_cells=thin,
    )


@dataclass(frozen=True)
class CovarianceSet:
    """Asymptotic covariance estimators of ``sqrt(n)`` times the cell estimators."""

    sigma_p: np.ndarray
    sigma_q: np.ndarray
    sigma_beta1: np.ndarray
    sigma_beta0: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def sigma_beta(self):
        k1 = self.sigma_p.shape[0]
        out = np.zeros((2 * k1, 2 * k1))
        out[:k1, :k1] = self.sigma_beta1
        out[k1:, k1:] = self.sigma_beta0
        return out

    def to_dict(self):
        return {
            "sigma_p": self.sigma_p.tolist(),
            "sigma_q": self.sigma_q.tolist(),
            "sigma_beta1": self.sigma_beta1.tolist(),
            "sigma_beta0": self.sigma_beta0.tolist(),
        }


def covariance_estimates(stats):
    p, q = stats.p_hat, stats.q_hat
    sigma_q = -np.outer(q, q)
    np.fill_diagonal(sigma_q, q * (1.0 - q))
    return CovarianceSet(
        sigma_p=np.diag(p * (1.0 - p) / q),
        sigma_q=sigma_q,
        sigma_beta1=np.diag(stats.sigma2[1] / stats.q_cell(1)),
        sigma_beta0=np.diag(stats.sigma2[0] / stats.q_cell(0)),
    )


def n_distinct_propensities(stats, tol=PROPENSITY_TIE_TOL):
    """Number of distinct propensity scores, merging values closer than ``tol``."""
    p = np.sort(stats.p_hat)
    return int(1 + np.sum(np.diff(p) > tol))

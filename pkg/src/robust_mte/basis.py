"""MTR basis functions, control functions and the design matrices built from them.

The treated and untreated control functions are conditional averages of a basis
function over the selection unobservable::

    lambda_1m(p) = (1/p) * int_0^p h_m(u) du
    lambda_0m(p) = (1/(1-p)) * int_p^1 h_m(u) du

with ``lambda_d0 = 1``.  Stacking them at the propensity score of every
instrument value gives the block-diagonal matrix ``A`` of the linear system
``A theta = beta``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

_P_CLAMP = 1e-10


class PolynomialBasis:
    """Centered polynomial basis ``h_m(u) = u**m - 1/(m+1)``."""

    name = "polynomial"

    def h(self, m, u):
        u = np.asarray(u, dtype=float)
        if m == 0:
            return np.ones_like(u)
        return u**m - 1.0 / (m + 1)

    def dh(self, m, u):
        u = np.asarray(u, dtype=float)
        if m == 0:
            return np.zeros_like(u)
        return m * u ** (m - 1)

    def antiderivative(self, m, u):
        """``int_0^u h_m(s) ds``."""
        u = np.asarray(u, dtype=float)
        if m == 0:
            return u
        return (u ** (m + 1) - u) / (m + 1)

    def lam(self, d, m, p):
        p = np.asarray(p, dtype=float)
        if m == 0:
            return np.ones_like(p)
        if d == 1:
            return (p**m - 1.0) / (m + 1)
        # sum_{j=1}^m p^j, which stays finite as p -> 1
        return sum(p**j for j in range(1, m + 1)) / (m + 1)

    def dlam(self, d, m, p):
        p = np.asarray(p, dtype=float)
        if m == 0:
            return np.zeros_like(p)
        if d == 1:
            return m * p ** (m - 1) / (m + 1)
        return sum(j * p ** (j - 1) for j in range(1, m + 1)) / (m + 1)


BASES = {"polynomial": PolynomialBasis}


@dataclass(frozen=True)
class MteSpec:
    """Model order, basis family and parameter box for ``theta``.

    ``theta`` is ordered ``(mu_1, rho_11, ..., rho_1M, mu_0, rho_01, ..., rho_0M)``.
    """

    order: int = 1
    basis: PolynomialBasis = field(default_factory=PolynomialBasis)
    theta_box: np.ndarray | None = None

    def __post_init__(self):
        if int(self.order) < 1:
            raise ConfigError(f"model order must be >= 1, got {self.order}")
        object.__setattr__(self, "order", int(self.order))
        box = self.theta_box
        if box is None:
            box = np.tile([-10.0, 10.0], (self.n_params, 1))
        box = np.array(box, dtype=float)
        if box.shape == (2,):
            box = np.tile(box, (self.n_params, 1))
        if box.shape != (self.n_params, 2):
            raise ConfigError(
                f"theta_box must have shape ({self.n_params}, 2), got {box.shape}"
            )
        if not np.all(np.isfinite(box)) or np.any(box[:, 0] >= box[:, 1]):
            raise ConfigError("theta_box bounds must be finite with lower < upper")
        box.setflags(write=False)
        object.__setattr__(self, "theta_box", box)

    @property
    def n_params(self):
        return 2 * (self.order + 1)

    @classmethod
    def polynomial(cls, order, bound=10.0):
        return cls(order=order, theta_box=np.array([-bound, bound]))


@dataclass(frozen=True)
class DesignMatrices:
    A: np.ndarray
    A1: np.ndarray
    A0: np.ndarray


def _check_m(spec, m, lowest=0):
    if not lowest <= m <= spec.order:
        raise ConfigError(f"basis index m={m} outside [{lowest}, {spec.order}]")


def _clamped(p, strict):
    p = np.asarray(p, dtype=float)
    outside = (p <= 0.0) | (p >= 1.0)
    if np.any(outside):
        if strict:
            raise ValueError(f"propensity score outside (0, 1): {p[outside]}")
        warnings.warn("propensity score clamped into (0, 1)", RuntimeWarning, stacklevel=3)
        p = np.clip(p, _P_CLAMP, 1.0 - _P_CLAMP)
    return p


def basis_h(spec, m, u):
    """Evaluate ``h_m(u)``; ``m`` ranges over ``1..M``."""
    _check_m(spec, m, lowest=1)
    return spec.basis.h(m, u)


def control_lambda(spec, d, m, p, strict=True):
    """Control function ``lambda_dm(p)``.

    With ``strict=False`` a score outside ``(0, 1)`` is clamped with a warning
    instead of raising, which is what optimizers probing the boundary need.
    """
    _check_m(spec, m)
    return spec.basis.lam(d, m, _clamped(p, strict))


def control_lambda_deriv(spec, d, m, p, strict=True):
    """Derivative of :func:`control_lambda` with respect to ``p``."""
    _check_m(spec, m)
    return spec.basis.dlam(d, m, _clamped(p, strict))


def lambda_matrix(spec, d, p_vec, deriv=False):
    """``(K+1) x (M+1)`` matrix with entries ``lambda_dm(p_l)`` (or derivatives)."""
    p_vec = np.asarray(p_vec, dtype=float)
    f = spec.basis.dlam if deriv else spec.basis.lam
    return np.column_stack([f(d, m, p_vec) for m in range(spec.order + 1)])


def build_A(spec, p_vec):
    p_vec = _clamped(np.atleast_1d(p_vec), strict=True)
    A1 = lambda_matrix(spec, 1, p_vec)
    A0 = lambda_matrix(spec, 0, p_vec)
    k1, m1 = A1.shape
    A = np.zeros((2 * k1, 2 * m1))
    A[:k1, :m1] = A1
    A[k1:, m1:] = A0
    return DesignMatrices(A=A, A1=A1, A0=A0)


def build_H(spec, p_vec, theta):
    """Jacobian of ``A(p) theta`` with respect to ``p``: ``2(K+1) x (K+1)``."""
    p_vec = np.asarray(p_vec, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.n_params,):
        raise ValueError(
            f"theta must have length {spec.n_params}, got shape {theta.shape}"
        )
    m1 = spec.order + 1
    top = lambda_matrix(spec, 1, p_vec, deriv=True) @ theta[:m1]
    bottom = lambda_matrix(spec, 0, p_vec, deriv=True) @ theta[m1:]
    return np.vstack([np.diag(top), np.diag(bottom)])


def build_Mj(spec, p_vec, j):
    """Jacobian of column ``j`` (1-based) of ``A`` with respect to ``p``."""
    p_vec = np.asarray(p_vec, dtype=float)
    n_cols = spec.n_params
    if not 1 <= j <= n_cols:
        raise ConfigError(f"column index j={j} outside [1, {n_cols}]")
    k1 = p_vec.size
    out = np.zeros((2 * k1, k1))
    m1 = spec.order + 1
    if j <= m1:
        out[:k1] = np.diag(spec.basis.dlam(1, j - 1, p_vec))
    else:
        out[k1:] = np.diag(spec.basis.dlam(0, j - m1 - 1, p_vec))
    return out

"""Robust inference for linear MTE models (order 1).

The target ``lambda = c_mu (mu_1 - mu_0) + c_rho (rho_11 - rho_01)`` solves the
scalar moment ``g_k(lambda) = pi_k lambda - gamma_k`` for every comparison
level ``k``, where ``pi_k = p_k - p_0`` and ``gamma_k`` is a function of the cell
means only.  Because no other component of ``theta`` enters, AR tests built on
``g_k`` and the conditional Wald test built on the stacked vector are robust to
weak identification.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from . import rng as rng_mod
from .data import covariance_estimates
from .errors import ConfigError, NumericalError
from .results import ConfidenceSet, TestResult

DEFAULT_DRAWS = 2000
_PD_RTOL = 1e-12


@dataclass(frozen=True)
class LinearMomentContext:
    """Everything needed to evaluate the linear-MTE moments.

    ``grad_p`` and ``grad_q`` are ``2 x (K+1)`` Jacobians of ``(c_mu, c_rho)``;
    they are used only when ``estimated_weights`` is set.
    """

    stats: object
    cov: object
    c_mu: float
    c_rho: float
    estimated_weights: bool = False
    grad_p: np.ndarray | None = None
    grad_q: np.ndarray | None = None

    def __post_init__(self):
        if self.c_mu == 0 and self.c_rho == 0:
            raise ConfigError("weight (c_mu, c_rho) must be nonzero")
        if self.stats.K < 1:
            raise ConfigError("linear moments need at least two instrument values")
        k1 = self.stats.K + 1
        for name in ("grad_p", "grad_q"):
            g = getattr(self, name)
            g = np.zeros((2, k1)) if g is None else np.asarray(g, dtype=float)
            if g.shape != (2, k1):
                raise ConfigError(f"{name} must have shape (2, {k1})")
            object.__setattr__(self, name, g)

    @classmethod
    def from_weight(cls, stats, weight, cov=None, estimated_weights=None):
        """Context from a :class:`~robust_mte.weights.WeightVector` of an order-1 model."""
        if weight.c.size != 4:
            raise ConfigError("linear inference requires a model of order 1")
        if estimated_weights is None:
            estimated_weights = weight.target.estimated
        return cls(
            stats=stats,
            cov=covariance_estimates(stats) if cov is None else cov,
            c_mu=weight.c_mu,
            c_rho=weight.c_rho,
            estimated_weights=bool(estimated_weights),
            grad_p=weight.grad_p[:2],
            grad_q=weight.grad_q[:2],
        )

    @property
    def K(self):
        return self.stats.K

    @property
    def n(self):
        return self.stats.n

    def deltas(self):
        """Plug-in ``(Delta_mu, Delta_rho)`` for every ``k = 1..K``."""
        s = self.stats
        p, b1, b0 = s.p_hat, s.beta1_hat, s.beta0_hat
        d_mu = p[1:] * (b1[0] - b0[0]) - p[0] * (b1[1:] - b0[1:]) + b1[1:] - b1[0]
        d_rho = 2.0 * (b0[0] - b1[0] + b1[1:] - b0[1:])
        return d_mu, d_rho

    @property
    def pi_hat(self):
        p = self.stats.p_hat
        return p[1:] - p[0]

    @property
    def gamma_hat(self):
        d_mu, d_rho = self.deltas()
        return self.c_mu * d_mu + self.c_rho * d_rho


def moment_g(ctx, k=None, lam=0.0):
    """Sample moment ``g_k(lambda)``; ``k=None`` returns the whole vector."""
    g = ctx.pi_hat * lam - ctx.gamma_hat
    if k is None:
        return g
    _check_k(ctx, k)
    return float(g[k - 1])


def _check_k(ctx, k):
    if not 1 <= int(k) <= ctx.K:
        raise ConfigError(f"comparison index k={k} outside 1..{ctx.K}")


def moment_gradients(ctx, lam):
    """Jacobians of the moment vector in ``p``, ``beta_1``, ``beta_0`` and ``q``.

    Each is ``K x (K+1)``; only columns 0 and ``k`` of row ``k`` are nonzero
    apart from the estimated-weight corrections.
    """
    s = ctx.stats
    p, b1, b0 = s.p_hat, s.beta1_hat, s.beta0_hat
    K = ctx.K
    rows = np.arange(K)
    cols = rows + 1
    cm, cr = ctx.c_mu, ctx.c_rho

    gp = np.zeros((K, K + 1))
    gp[:, 0] = -lam + (b1[1:] - b0[1:]) * cm
    gp[rows, cols] = lam - (b1[0] - b0[0]) * cm

    gb1 = np.zeros((K, K + 1))
    gb1[:, 0] = (1.0 - p[1:]) * cm + 2.0 * cr
    gb1[rows, cols] = -(1.0 - p[0]) * cm - 2.0 * cr

    gb0 = np.zeros((K, K + 1))
    gb0[:, 0] = p[1:] * cm - 2.0 * cr
    gb0[rows, cols] = -p[0] * cm + 2.0 * cr

    gq = np.zeros((K, K + 1))
    if ctx.estimated_weights:
        d_mu, d_rho = ctx.deltas()
        gp = gp - np.outer(d_mu, ctx.grad_p[0]) - np.outer(d_rho, ctx.grad_p[1])
        gq = -(np.outer(d_mu, ctx.grad_q[0]) + np.outer(d_rho, ctx.grad_q[1]))
    return gp, gb1, gb0, gq


def moment_variance(ctx, lam):
    """Asymptotic variance ``S(lambda)`` of ``sqrt(n) g(lambda)`` and the p-Jacobian."""
    cov = ctx.cov
    gp, gb1, gb0, gq = moment_gradients(ctx, lam)
    S = gp @ cov.sigma_p @ gp.T + gb1 @ cov.sigma_beta1 @ gb1.T + gb0 @ cov.sigma_beta0 @ gb0.T
    if ctx.estimated_weights:
        S = S + gq @ cov.sigma_q @ gq.T
    return 0.5 * (S + S.T), gp


def min_eigen_bound(ctx):
    """Constructive lower bound on the smallest eigenvalue of ``S``.

    ``eps`` is the smallest of the propensity scores, their complements, and
    the cell shares, so every quantity in the bound is a sample quantity.
    """
    s = ctx.stats
    eps = float(min(s.p_hat.min(), (1 - s.p_hat).min(), s.q_hat.min()))
    delta = eps / (1.0 - eps) ** 2
    return delta * max(0.5 * ctx.c_mu**2, 32.0 * eps * (1.0 - eps) * ctx.c_rho**2)


def _checked(S):
    evals = np.linalg.eigvalsh(S)
    if not evals[0] > _PD_RTOL * max(evals[-1], 1e-300):
        raise NumericalError(
            "moment variance is not positive definite; it requires a nonzero weight, "
            "propensity scores inside (0, 1) and positive within-cell outcome variance"
        )
    return evals


def ar_test(ctx, k, lam, alpha=0.05):
    """Anderson-Rubin test of ``H0: c'theta = lam`` from the ``(z_0, z_k)`` pair."""
    _check_k(ctx, k)
    S, _ = moment_variance(ctx, lam)
    s2 = S[k - 1, k - 1]
    if not s2 > 0:
        raise NumericalError("AR variance is zero: the weight or the data are degenerate")
    g = moment_g(ctx, k, lam)
    stat = ctx.n * g * g / s2
    return TestResult(
        statistic=float(stat),
        critical_value=float(sps.chi2.ppf(1 - alpha, 1)),
        level=alpha,
        meta={"method": "ar", "k": int(k), "lambda": float(lam), "s2": float(s2)},
    )


def _sym_power(S, power):
    evals, evecs = np.linalg.eigh(S)
    return (evecs * evals**power) @ evecs.T


def cwald_draws(K, draws=DEFAULT_DRAWS, seed=0):
    """Standard normal draws shared by conditional Wald tests of one run."""
    if draws < 500:
        raise ConfigError("conditional Wald needs at least 500 simulation draws")
    return rng_mod.stream(seed, rng_mod.CWALD_STREAM).standard_normal((draws, K))


def cond_wald_test(ctx, lam, alpha=0.05, draws=DEFAULT_DRAWS, seed=0, eta=None):
    """Conditional Wald test with a simulated conditional critical value.

    Parameters
    ----------
    ctx : LinearMomentContext
    lam : float
        Hypothesised value of ``c'theta``.
    alpha : float
    draws : int
        Number of simulated ``eta`` vectors (ignored when ``eta`` is given).
    seed : int
    eta : ndarray, optional
        ``draws x K`` standard normal matrix; pass the same matrix to every
        call of a confidence-set inversion.
    """
    if eta is None:
        eta = cwald_draws(ctx.K, draws, seed)
    eta = np.asarray(eta, dtype=float)
    n = ctx.n
    S, gp = moment_variance(ctx, lam)
    _checked(S)
    S_inv = np.linalg.inv(S)
    S_inv_half = _sym_power(S, -0.5)
    pi_hat = ctx.pi_hat
    g = moment_g(ctx, None, lam)

    a = S_inv @ pi_hat
    stat = n * (g @ a) ** 2 / (pi_hat @ a)

    K = ctx.K
    d_pi = np.hstack([-np.ones((K, 1)), np.eye(K)])
    B = d_pi @ ctx.cov.sigma_p @ gp.T
    h_hat = np.sqrt(n) * pi_hat - B @ S_inv @ (np.sqrt(n) * g)

    # rows of z are (S^{-1/2} eta)'; S^{-1/2} is symmetric
    z = eta @ S_inv_half
    pi_s = h_hat[None, :] + z @ B.T
    num = np.einsum("ij,ij->i", z, pi_s) ** 2
    den = np.einsum("ij,jk,ik->i", pi_s, S_inv, pi_s)
    w_star = num / den
    crit = float(np.quantile(w_star, 1.0 - alpha))
    return TestResult(
        statistic=float(stat),
        critical_value=crit,
        level=alpha,
        meta={"method": "cwald", "lambda": float(lam), "draws": int(eta.shape[0]),
              "h_hat": h_hat},
    )


def efficient_estimate(ctx, iterations=3):
    """Efficient two-step estimate of ``lambda`` from the stacked moments.

    Returns ``(estimate, standard_error)``; the standard error is ``inf`` when
    the propensity scores carry no information.
    """
    pi_hat, gamma = ctx.pi_hat, ctx.gamma_hat
    lam = float(gamma @ pi_hat / max(pi_hat @ pi_hat, 1e-300))
    info = 0.0
    for _ in range(iterations):
        S, _ = moment_variance(ctx, lam)
        try:
            S_inv = np.linalg.inv(S)
        except np.linalg.LinAlgError:
            break
        info = float(pi_hat @ S_inv @ pi_hat)
        if info <= 0:
            break
        lam = float(pi_hat @ S_inv @ gamma / info)
    se = np.inf if info <= 0 else float(1.0 / np.sqrt(ctx.n * info))
    return lam, se


@dataclass(frozen=True)
class GridSpec:
    """Evaluation grid for test inversion."""

    lo: float
    hi: float
    n_points: int = 201

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise ConfigError(f"grid bounds must be finite with lo < hi, got {(self.lo, self.hi)}")
        if self.n_points < 50:
            raise ConfigError("inversion grid needs at least 50 points")

    @property
    def step(self):
        return (self.hi - self.lo) / (self.n_points - 1)

    def points(self):
        return np.linspace(self.lo, self.hi, self.n_points)


def _refine(accepts, inside, outside, tol):
    """Bisection for the accept/reject boundary between two grid values."""
    while abs(outside - inside) > tol:
        mid = 0.5 * (inside + outside)
        if accepts(mid):
            inside = mid
        else:
            outside = mid
    return inside


def invert_ci(test, grid, refine=True):
    """Confidence set ``{lam : not test(lam).reject}`` on ``grid``.

    Parameters
    ----------
    test : callable
        ``test(lam)`` returning a :class:`TestResult` (or anything with a
        boolean ``reject`` attribute).
    grid : GridSpec
    refine : bool
        Refine every boundary by bisection to ``grid.step / 100``.
    """
    pts = grid.points()
    levels = []

    def accepts(lam):
        res = test(lam)
        levels.append(getattr(res, "level", None))
        return not res.reject

    acc = np.array([accepts(x) for x in pts])
    tol = grid.step / 100.0
    intervals = []
    i = 0
    while i < pts.size:
        if not acc[i]:
            i += 1
            continue
        j = i
        while j + 1 < pts.size and acc[j + 1]:
            j += 1
        lo, hi = pts[i], pts[j]
        if refine and i > 0:
            lo = _refine(accepts, pts[i], pts[i - 1], tol)
        if refine and j < pts.size - 1:
            hi = _refine(accepts, pts[j], pts[j + 1], tol)
        intervals.append((float(lo), float(hi)))
        i = j + 1
    level = next((lv for lv in levels if lv is not None), 0.05)
    return ConfidenceSet(
        intervals=tuple(intervals),
        level=1.0 - level,
        grid=(grid.lo, grid.hi, grid.n_points),
        touches_lower=bool(acc[0]),
        touches_upper=bool(acc[-1]),
    )


def invert_ci_auto(test, center, scale, n_points=201, widen=3.0, max_widenings=2,
                   max_half_width=1e6):
    """Invert on ``center +/- 10 scale``, widening when the set reaches an end."""
    half = min(10.0 * scale, max_half_width) if np.isfinite(scale) and scale > 0 else max_half_width
    cs = None
    for _ in range(max_widenings + 1):
        cs = invert_ci(test, GridSpec(center - half, center + half, n_points))
        if not (cs.touches_lower or cs.touches_upper) or half >= max_half_width:
            break
        half = min(half * widen, max_half_width)
    return cs

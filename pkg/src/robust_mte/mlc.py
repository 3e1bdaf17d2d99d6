"""Modified linear combination (MLC) inference for polynomial MTE models.

For a hypothesised value ``lam`` of ``c'theta`` the test profiles

    MLC(theta) = MRLM(theta) + a * AR(theta)

over the slice ``{theta in box : c'theta = lam}`` and rejects when the infimum
exceeds the ``1 - alpha`` quantile of ``(1 + a) chi2_1 + a chi2_{2K+1}``.

Two implementations of the statistic are provided.  :func:`mlc_stat` follows
the textbook construction with an explicit symmetric ``Omega^{-1/2}`` and
projection matrix.  The profiler calls the compiled kernel in
:mod:`robust_mte._kernels`, which uses the identity

    MRLM = n (m' Omega^{-1} v)^2 / (v' Omega^{-1} v),  v = D (D' Omega^{-1} D)^{-1} c,

and so needs no matrix square root.
"""
from __future__ import annotations

import functools
import hashlib
import json
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg as sla
from scipy import optimize as sopt
from scipy import stats as sps

from . import _kernels
from . import rng as rng_mod
from .basis import build_A, build_H, build_Mj, lambda_matrix
from .data import covariance_estimates
from .errors import ConfigError, NumericalError
from .results import ConfidenceSet, TestResult

DEFAULT_A = 0.05
DEFAULT_KAPPA = 1e-6
DEFAULT_R = 0.5
QUANTILE_DRAWS = 200_000


@dataclass(frozen=True)
class OptSpec:
    """Multi-start Nelder-Mead settings for the profiled statistics.

    ``init_scale`` is the edge length of the initial simplex in null-space
    coordinates; every run is restarted ``restarts`` times from its best point
    with a fresh simplex, which guards against premature collapse.
    """

    n_starts: int = 8
    maxfev: int = 3000
    fatol: float = 1e-8
    xatol: float = 1e-7
    init_scale: float = 1.0
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_starts < 1 or self.maxfev < 10:
            raise ConfigError("optimizer needs n_starts >= 1 and maxfev >= 10")


@dataclass(frozen=True)
class ProfiledResult:
    inf_value: float
    minimizer_theta: np.ndarray | None
    converged: bool
    evaluations: int
    feasible: bool = True


@dataclass(frozen=True)
class MlcContext:
    """Data, tuning constants and the fixed perturbation ``xi`` of one test run."""

    spec: object
    stats: object
    cov: object
    xi: np.ndarray
    a: float = DEFAULT_A
    kappa: float = DEFAULT_KAPPA
    alpha: float = 0.05
    seed: int = 0
    quantile_draws: int = QUANTILE_DRAWS
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.a >= 0:
            raise ConfigError("AR weight a must be nonnegative")
        if not self.kappa > 0:
            raise ConfigError("perturbation scale kappa must be positive")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        shape = (2 * (self.stats.K + 1), self.spec.n_params)
        xi = np.array(self.xi, dtype=float)
        if xi.shape != shape:
            raise ConfigError(f"xi must have shape {shape}, got {xi.shape}")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)

    @classmethod
    def build(cls, spec, stats, cov=None, a=DEFAULT_A, kappa=DEFAULT_KAPPA, alpha=0.05,
              seed=0, quantile_draws=QUANTILE_DRAWS):
        xi = rng_mod.stream(seed, rng_mod.XI_STREAM).standard_normal(
            (2 * (stats.K + 1), spec.n_params))
        return cls(spec=spec, stats=stats, cov=covariance_estimates(stats) if cov is None else cov,
                   xi=xi, a=a, kappa=kappa, alpha=alpha, seed=seed,
                   quantile_draws=quantile_draws)

    @property
    def n(self):
        return self.stats.n

    @property
    def K(self):
        return self.stats.K

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def design(self):
        return self._get("design", lambda: build_A(self.spec, self.stats.p_hat))

    @property
    def beta(self):
        return np.concatenate([self.stats.beta1_hat, self.stats.beta0_hat])

    @property
    def sigma_beta(self):
        return self.cov.sigma_beta


def _xi_r(k1, r):
    return np.concatenate([-r * np.ones(k1), (1.0 - r) * np.ones(k1)])


def _resolve_estimated(weight, estimated):
    if estimated is None:
        return bool(weight is not None and weight.target.estimated)
    return bool(estimated)


# ----------------------------------------------------------------------------
# reference (numpy) implementation


def _g_matrix(ctx, theta, weight, r):
    H = build_H(ctx.spec, ctx.stats.p_hat, theta)
    if weight is None or r is None:
        return H, None
    k1 = ctx.K + 1
    xr = _xi_r(k1, r)
    G = H + np.outer(xr, weight.full_grad("p").T @ theta)
    gq = np.outer(xr, weight.full_grad("q").T @ theta)
    return G, gq


def omega_hat(ctx, theta, weight=None, r=None):
    """Asymptotic variance of ``sqrt(n)(A theta - beta)``.

    With ``weight`` and ``r`` given, the estimated-weight form
    ``Omega(theta; r)`` is returned.
    """
    theta = np.asarray(theta, dtype=float)
    G, gq = _g_matrix(ctx, theta, weight, r)
    om = G @ ctx.cov.sigma_p @ G.T + ctx.sigma_beta
    if gq is not None:
        om = om + gq @ ctx.cov.sigma_q @ gq.T
    return 0.5 * (om + om.T)


def d_tilde(ctx, theta, weight=None, r=None, kappa=None):
    """Orthogonalised and perturbed Jacobian of the moment in ``theta``."""
    theta = np.asarray(theta, dtype=float)
    kappa = ctx.kappa if kappa is None else kappa
    A = ctx.design.A
    resid = A @ theta - ctx.beta
    om = omega_hat(ctx, theta, weight, r)
    try:
        om_inv_m = np.linalg.solve(om, resid)
    except np.linalg.LinAlgError:
        raise NumericalError("moment variance Omega is singular") from None
    G, _ = _g_matrix(ctx, theta, weight, r)
    cols = []
    for j in range(1, ctx.spec.n_params + 1):
        gamma_j = build_Mj(ctx.spec, ctx.stats.p_hat, j) @ ctx.cov.sigma_p @ G.T
        cols.append(A[:, j - 1] - gamma_j @ om_inv_m)
    D = np.column_stack(cols)
    return D + kappa / np.sqrt(ctx.n) * ctx.xi


def mlc_stat(ctx, theta, weight, r=None, a=None, parts=False):
    """MLC statistic at ``theta`` for the weight ``weight.c``.

    Parameters
    ----------
    ctx : MlcContext
    theta : array_like
    weight : WeightVector or array_like
        Supplies ``c``; a plain vector is accepted.
    r : float, optional
        Enables the estimated-weight variance with this ``r``.
    a : float, optional
        AR weight; defaults to ``ctx.a``.
    parts : bool
        Return ``(MLC, AR, MRLM)`` instead of the MLC value.
    """
    theta = np.asarray(theta, dtype=float)
    a = ctx.a if a is None else a
    c = np.asarray(getattr(weight, "c", weight), dtype=float)
    wv = weight if hasattr(weight, "full_grad") else None
    om = omega_hat(ctx, theta, wv, r)
    evals, evecs = np.linalg.eigh(om)
    if evals[0] <= 0:
        raise NumericalError("moment variance Omega is not positive definite")
    om_ih = (evecs / np.sqrt(evals)) @ evecs.T
    D = d_tilde(ctx, theta, wv, r)
    om_inv = om_ih @ om_ih
    gram = D.T @ om_inv @ D
    try:
        q = om_ih @ D @ np.linalg.solve(gram, c)
    except np.linalg.LinAlgError:
        raise NumericalError("perturbed Jacobian is rank deficient; reseed xi") from None
    z = om_ih @ (ctx.design.A @ theta - ctx.beta)
    n = ctx.n
    ar = n * z @ z
    mrlm = n * (q @ z) ** 2 / (q @ q)
    value = mrlm + a * ar
    return (value, ar, mrlm) if parts else value


# ----------------------------------------------------------------------------
# compiled path


def _kernel_params(ctx, c, weight=None, r=None, a=None, kappa=None):
    spec, k1 = ctx.spec, ctx.K + 1
    p = ctx.stats.p_hat
    m1 = spec.order + 1
    A1 = np.ascontiguousarray(ctx.design.A1)
    A0 = np.ascontiguousarray(ctx.design.A0)
    dA1 = np.ascontiguousarray(lambda_matrix(spec, 1, p, deriv=True))
    dA0 = np.ascontiguousarray(lambda_matrix(spec, 0, p, deriv=True))
    est = 0.0
    xr = np.zeros(2 * k1)
    gpc = np.zeros((2 * m1, k1))
    gqc = np.zeros((2 * m1, k1))
    if weight is not None and r is not None:
        est = 1.0
        xr = _xi_r(k1, r)
        gpc = np.ascontiguousarray(weight.full_grad("p"))
        gqc = np.ascontiguousarray(weight.full_grad("q"))
    kappa = ctx.kappa if kappa is None else kappa
    return (
        A1, A0, dA1, dA0,
        np.ascontiguousarray(ctx.beta),
        np.ascontiguousarray(np.diag(ctx.cov.sigma_p)),
        np.ascontiguousarray(np.diag(ctx.sigma_beta)),
        xr, gpc, gqc,
        np.ascontiguousarray(ctx.cov.sigma_q, dtype=float),
        est,
        np.ascontiguousarray(kappa / np.sqrt(ctx.n) * ctx.xi),
        np.ascontiguousarray(c, dtype=float),
        float(ctx.n),
        float(ctx.a if a is None else a),
    )


def mlc_stat_fast(ctx, theta, weight, r=None, a=None):
    """Compiled evaluation of ``(MLC, AR, MRLM)``; same result as :func:`mlc_stat`."""
    c = np.asarray(getattr(weight, "c", weight), dtype=float)
    wv = weight if hasattr(weight, "full_grad") else None
    P = _kernel_params(ctx, c, wv, r, a)
    return _kernels.mlc_eval(np.asarray(theta, dtype=float), P)


def slice_range(c, box):
    """Range of ``c'theta`` over the box."""
    lo = np.minimum(c * box[:, 0], c * box[:, 1]).sum()
    hi = np.maximum(c * box[:, 0], c * box[:, 1]).sum()
    return float(lo), float(hi)


def project_to_slice(y, c, lam, box):
    """Euclidean projection of ``y`` onto ``{c'theta = lam} ∩ box``."""
    lo, hi = box[:, 0], box[:, 1]

    def f(nu):
        return c @ np.clip(y - nu * c, lo, hi) - lam

    span = 1.0
    while f(-span) < 0:
        span *= 2.0
    a_ = -span
    span = 1.0
    while f(span) > 0:
        span *= 2.0
    nu = sopt.brentq(f, a_, span, xtol=1e-15, rtol=1e-15, maxiter=500)
    theta = np.clip(y - nu * c, lo, hi)
    free = (theta > lo) & (theta < hi) & (c != 0)
    if free.any():
        theta[free] += (lam - c @ theta) * c[free] / (c[free] @ c[free])
        theta = np.clip(theta, lo, hi)
    return theta


def _gls(ctx, c=None, lam=None, weight_matrix=None, ridge=1e-8):
    """(Constrained) weighted least squares solution of ``A theta = beta``."""
    A, beta = ctx.design.A, ctx.beta
    W = np.diag(1.0 / np.maximum(np.diag(ctx.sigma_beta), 1e-12)) if weight_matrix is None else weight_matrix
    AtW = A.T @ W
    Q = AtW @ A
    Q = Q + ridge * max(np.trace(Q), 1.0) / Q.shape[0] * np.eye(Q.shape[0])
    rhs = AtW @ beta
    if c is None:
        return np.linalg.solve(Q, rhs)
    k = Q.shape[0]
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = Q
    kkt[:k, k] = c
    kkt[k, :k] = c
    sol = np.linalg.solve(kkt, np.append(rhs, lam))
    return sol[:k]


def _lhs(rng, n, box):
    d = box.shape[0]
    u = (rng.permuted(np.tile(np.arange(n), (d, 1)), axis=1).T + rng.random((n, d))) / n
    return box[:, 0] + u * (box[:, 1] - box[:, 0])


def _run_starts(kind, starts, base, N, box, P, opt, stop_below):
    lo = np.ascontiguousarray(box[:, 0])
    hi = np.ascontiguousarray(box[:, 1])
    best_x, best_f, total, conv = None, np.inf, 0, False
    for x0 in starts:
        x = np.ascontiguousarray(x0, dtype=float)
        for attempt in range(opt.restarts + 1):
            x, f, nfev, ok = _kernels.nelder_mead(
                kind, x, float(opt.init_scale) / (4.0 ** attempt), base, N, lo, hi, P,
                int(opt.maxfev), float(opt.fatol), float(opt.xatol), float(stop_below))
            total += nfev
            if f < best_f:
                best_x, best_f, conv = x, f, ok
            if f <= stop_below:
                return best_x, best_f, total, True
    return best_x, best_f, total, conv


def profile_mlc(ctx, lam, weight, optimizer=None, estimated_weights=None, r=DEFAULT_R,
                a=None, stop_below=-np.inf):
    """Approximate ``inf MLC(theta)`` over ``{c'theta = lam} ∩ box``.

    An empty slice gives ``feasible=False`` and an infinite value, which the
    test treats as a rejection.
    """
    opt = optimizer or OptSpec()
    estimated = _resolve_estimated(weight, estimated_weights)
    c = np.asarray(weight.c, dtype=float)
    box = ctx.spec.theta_box
    lo_l, hi_l = slice_range(c, box)
    if not lo_l <= lam <= hi_l:
        return ProfiledResult(np.inf, None, True, 0, feasible=False)
    P = _kernel_params(ctx, c, weight, r if estimated else None, a)

    first = project_to_slice(_gls(ctx, c, lam), c, lam, box)
    rng = rng_mod.stream(opt.seed, rng_mod.OPTIMIZER_STREAM)
    extra = [project_to_slice(y, c, lam, box) for y in _lhs(rng, max(opt.n_starts - 1, 0), box)]
    base = first
    N = np.ascontiguousarray(sla.null_space(c[None, :]))
    starts = [np.zeros(N.shape[1])] + [N.T @ (t - base) for t in extra]
    x, f, nfev, conv = _run_starts(0, starts, base, N, box, P, opt, stop_below)
    theta = np.clip(base + N @ x, box[:, 0], box[:, 1])
    return ProfiledResult(float(f), theta, bool(conv), int(nfev))


# ----------------------------------------------------------------------------
# critical values


def _cache_dir():
    root = os.environ.get("ROBUST_MTE_CACHE_DIR")
    if root is None:
        root = Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "robust_mte"
    return Path(root)


@functools.lru_cache(maxsize=None)
def _mixture_draws(K, draws, seed):
    rng = rng_mod.stream(seed, rng_mod.MIXTURE_STREAM, K, draws)
    x = rng.chisquare(1, draws)
    y = rng.chisquare(2 * K + 1, draws)
    return x, y


@functools.lru_cache(maxsize=None)
def mixture_quantile(a, K, alpha, draws=QUANTILE_DRAWS, seed=0):
    """``1 - alpha`` quantile of ``(1 + a) X + a Y`` with ``X ~ chi2_1``, ``Y ~ chi2_{2K+1}``.

    The draws for a given ``(K, draws, seed)`` are shared across ``a`` and
    ``alpha``, so the quantile is monotone in ``a``.  Results are memoised in
    memory and in a small on-disk JSON cache.
    """
    if draws < 10_000:
        warnings.warn("mixture quantile from fewer than 10000 draws is imprecise",
                      RuntimeWarning, stacklevel=2)
    key = json.dumps([float(a), int(K), float(alpha), int(draws), int(seed)])
    path = _cache_dir() / f"mixq-{hashlib.sha1(key.encode()).hexdigest()[:16]}.json"
    try:
        stored = json.loads(path.read_text())
        if stored.get("key") == key:
            return float(stored["value"])
    except (OSError, ValueError):
        pass
    x, y = _mixture_draws(int(K), int(draws), int(seed))
    value = float(np.quantile((1.0 + a) * x + a * y, 1.0 - alpha))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"key": key, "value": value}))
    except OSError:
        pass
    return value


def mlc_test(ctx, lam, weight, estimated_weights=None, r=DEFAULT_R, optimizer=None,
             a=None, critical_value=None, early_stop=True):
    """MLC test of ``H0: c'theta = lam``.

    With ``early_stop`` the profile search ends as soon as a point below the
    critical value is found, since the decision is then known; the reported
    statistic is then an upper bound on the infimum.
    """
    a = ctx.a if a is None else a
    estimated = _resolve_estimated(weight, estimated_weights)
    crit = (mixture_quantile(a, ctx.K, ctx.alpha, ctx.quantile_draws, ctx.seed)
            if critical_value is None else float(critical_value))
    prof = profile_mlc(ctx, lam, weight, optimizer, estimated, r, a,
                       stop_below=crit if early_stop else -np.inf)
    return TestResult(
        statistic=prof.inf_value,
        critical_value=crit,
        level=ctx.alpha,
        meta={
            "method": "mlc", "lambda": float(lam), "a": a, "kappa": ctx.kappa,
            "estimated_weights": estimated, "r": r if estimated else None,
            "feasible": prof.feasible, "converged": prof.converged,
            "evaluations": prof.evaluations, "minimizer_theta": prof.minimizer_theta,
            "early_stop": bool(early_stop),
        },
    )


# ----------------------------------------------------------------------------
# classical Wald


UNBOUNDED = 1e8


def cue_estimate(ctx, optimizer=None, constrained=False):
    """Continuously updated minimum-distance estimate of ``theta``.

    The search is unrestricted unless ``constrained`` is set, in which case it
    is confined to the parameter box.  Returns ``(theta, objective,
    converged)``; memoised on the context.
    """
    opt = optimizer or OptSpec(n_starts=3)

    def compute():
        box = ctx.spec.theta_box
        if not constrained:
            box = np.tile([-UNBOUNDED, UNBOUNDED], (box.shape[0], 1))
        A = ctx.design.A
        k2, p2 = A.shape
        if k2 == p2 and np.linalg.matrix_rank(A) == p2:
            theta = np.linalg.solve(A, ctx.beta)
            if np.all(theta >= box[:, 0]) and np.all(theta <= box[:, 1]):
                return theta, 0.0, True
        theta0 = np.clip(_gls(ctx), box[:, 0], box[:, 1])
        om = omega_hat(ctx, theta0)
        theta1 = np.clip(_gls(ctx, weight_matrix=np.linalg.inv(om)), box[:, 0], box[:, 1])
        rng = rng_mod.stream(opt.seed, rng_mod.OPTIMIZER_STREAM, 1)
        lhs_box = ctx.spec.theta_box
        starts = [theta1, theta0] + list(_lhs(rng, max(opt.n_starts - 2, 0), lhs_box))
        c0 = np.zeros(p2)
        c0[0] = 1.0
        P = _kernel_params(ctx, c0)
        N = np.ascontiguousarray(np.eye(p2))
        base = np.zeros(p2)
        x, f, _, conv = _run_starts(1, starts, base, N, box, P, opt, -np.inf)
        return np.clip(x, box[:, 0], box[:, 1]), float(f), bool(conv)

    return ctx._get(("cue", opt, bool(constrained)), compute)


def wald_variance(ctx, theta, weight, estimated_weights=False):
    """Delta-method variance of ``sqrt(n)(c-hat' theta-hat - c' theta)``."""
    A = ctx.design.A
    c = np.asarray(weight.c, dtype=float)
    om = omega_hat(ctx, theta)
    om_inv = np.linalg.inv(om)
    info = A.T @ om_inv @ A
    L = np.linalg.pinv(info, rcond=1e-12, hermitian=True) @ A.T @ om_inv
    cl = c @ L
    if not estimated_weights:
        return float(cl @ om @ cl)
    H = build_H(ctx.spec, ctx.stats.p_hat, theta)
    coef_p = -cl @ H + weight.full_grad("p").T @ theta
    coef_q = weight.full_grad("q").T @ theta
    return float(coef_p @ ctx.cov.sigma_p @ coef_p + cl @ ctx.sigma_beta @ cl
                 + coef_q @ ctx.cov.sigma_q @ coef_q)


def classical_wald(ctx, lam, weight, estimated_weights=None, optimizer=None, constrained=False):
    """Classical Wald test built on the efficient minimum-distance estimator.

    By default the estimator is not restricted to the parameter box; set
    ``constrained`` to minimise over the box instead.
    """
    estimated = _resolve_estimated(weight, estimated_weights)
    theta, obj, conv = cue_estimate(ctx, optimizer, constrained)
    est = float(np.asarray(weight.c) @ theta)
    var = wald_variance(ctx, theta, weight, estimated)
    if not var > 0:
        raise NumericalError("Wald variance is not positive")
    stat = ctx.n * (est - lam) ** 2 / var
    return TestResult(
        statistic=float(stat),
        critical_value=float(sps.chi2.ppf(1 - ctx.alpha, 1)),
        level=ctx.alpha,
        meta={"method": "wald", "lambda": float(lam), "estimate": est,
              "std_error": float(np.sqrt(var / ctx.n)), "theta_hat": theta,
              "cue_objective": obj, "converged": conv, "constrained": bool(constrained)},
    )


def wald_interval(ctx, weight, estimated_weights=None, critical_value=None, constrained=False):
    res = classical_wald(ctx, 0.0, weight, estimated_weights, constrained=constrained)
    crit = res.critical_value if critical_value is None else critical_value
    half = np.sqrt(crit) * res.meta["std_error"]
    return res.meta["estimate"] - half, res.meta["estimate"] + half


# ----------------------------------------------------------------------------
# identification pretest


def solve_a_gamma(gamma, K, alpha=0.05, draws=QUANTILE_DRAWS, seed=0, tol=1e-6):
    """AR weight ``a`` with ``q_mix(a)(1 - alpha - gamma) = q_chi2_1(1 - alpha)``."""
    if gamma == 0:
        return 0.0
    if not 0 < gamma < 1 - alpha:
        raise ConfigError("gamma must lie in [0, 1 - alpha)")
    target = sps.chi2.ppf(1 - alpha, 1)

    def f(a):
        return mixture_quantile(a, K, alpha + gamma, draws, seed) - target

    lo, hi = 1e-6, 10.0
    if not (f(lo) < 0 < f(hi)):
        raise NumericalError("a(gamma) is not bracketed by [1e-6, 10]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class PretestResult:
    weak_identification: bool
    a_gamma: float
    gamma: float
    wald_interval: tuple
    robust_set: ConfidenceSet
    robust_outside_wald: bool = False
    wald_outside_range: bool = False

    def to_dict(self):
        return {
            "weak_identification": self.weak_identification,
            "robust_outside_wald": self.robust_outside_wald,
            "wald_outside_range": self.wald_outside_range,
            "a_gamma": self.a_gamma,
            "gamma": self.gamma,
            "wald_interval": list(self.wald_interval),
            "robust_set": self.robust_set.to_dict(),
        }


def pretest_ics(ctx, gamma, weight, estimated_weights=None, n_points=61, optimizer=None):
    """Identification pretest: flag when the robust set is not inside the Wald interval.

    The robust set uses AR weight ``a(gamma)`` and the ``chi2_1`` critical
    value.  It is inverted on a grid spanning three Wald-interval widths on
    each side (clipped to the feasible range of ``c'theta``), so the flag is
    raised when any grid value outside the Wald interval is accepted.

    The flag is also raised when the Wald interval itself leaves the feasible
    range of ``c'theta`` over the parameter box.  Under identification failure
    the Wald interval is huge and contains the whole robust set, so the
    containment check alone would report strong identification.
    """
    from .linear import GridSpec, invert_ci

    a_g = solve_a_gamma(gamma, ctx.K, ctx.alpha, ctx.quantile_draws, ctx.seed)
    w_lo, w_hi = wald_interval(ctx, weight, estimated_weights)
    crit = float(sps.chi2.ppf(1 - ctx.alpha, 1))
    width = max(w_hi - w_lo, 1e-6)
    f_lo, f_hi = slice_range(np.asarray(weight.c), ctx.spec.theta_box)
    g_lo = max(w_lo - 3 * width, f_lo)
    g_hi = min(w_hi + 3 * width, f_hi)
    if not g_lo < g_hi:
        g_lo, g_hi = f_lo, f_hi

    def test(lam):
        return mlc_test(ctx, lam, weight, estimated_weights, optimizer=optimizer,
                        a=a_g, critical_value=crit)

    cs = invert_ci(test, GridSpec(g_lo, g_hi, max(n_points, 50)), refine=False)
    tol = 1e-9 * max(1.0, abs(w_lo), abs(w_hi))
    outside = any(lo < w_lo - tol or hi > w_hi + tol for lo, hi in cs.intervals)
    beyond = w_lo < f_lo or w_hi > f_hi
    return PretestResult(bool(outside or beyond), float(a_g), float(gamma), (w_lo, w_hi), cs,
                         bool(outside), bool(beyond))

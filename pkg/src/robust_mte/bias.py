"""Bias from wrongly imposing additive separability, and the two-stage singularity check.

The data-generating class has conditional mean outcomes

    E[Y_d | W=w, U=u] = mu_d + w' tau_d + (rho_d + w' eta_d) h(u)

with ``h(u) = u - 1/2``.  Dropping the interactions ``W lambda_d(P)`` from the
arm-wise control-function regressions biases the estimands whenever
``eta_d != 0``.  Arm-conditional population moments are represented as a
weighted support (:class:`ArmMoments`), so the same code evaluates exact
population moments from quadrature and plug-in moments from a sample.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import rng as rng_mod
from .errors import ConfigError, NumericalError

BIAS_STREAM = 6


def lam_treated(p):
    """Mean of ``h(U) = U - 1/2`` over ``U <= p``."""
    return (np.asarray(p, dtype=float) - 1.0) / 2.0


def lam_untreated(p):
    """Mean of ``h(U) = U - 1/2`` over ``U > p``."""
    return np.asarray(p, dtype=float) / 2.0


@dataclass(frozen=True)
class ArmMoments:
    """Distribution of ``(W, lambda_d(P))`` within one treatment arm.

    ``w`` has shape ``(S, L)``, ``lam`` and ``weight`` shape ``(S,)`` with the
    weights summing to one.
    """

    w: np.ndarray
    lam: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        lam = np.asarray(self.lam, dtype=float)
        wt = np.asarray(self.weight, dtype=float)
        if not (w.shape[0] == lam.size == wt.size):
            raise ConfigError("arm moments need matching support sizes")
        if np.any(wt < 0) or abs(wt.sum() - 1.0) > 1e-8:
            raise ConfigError("arm weights must be nonnegative and sum to 1")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "weight", wt)

    @classmethod
    def from_sample(cls, w, lam):
        lam = np.asarray(lam, dtype=float)
        return cls(w=w, lam=lam, weight=np.full(lam.size, 1.0 / lam.size))

    def mean(self, x):
        return np.tensordot(self.weight, x, axes=(0, 0))


@dataclass(frozen=True)
class BiasInputs:
    """Population moments entering the bias formulas.

    Parameters
    ----------
    ew_treated, ew_untreated, ew : array_like
        ``E[W | D=1]``, ``E[W | D=0]`` and ``E[W]``.
    elam_treated, elam_untreated : float
        ``E[lambda_1(P) | D=1]`` and ``E[lambda_0(P) | D=0]``.
    p_treated : float
        ``P(D=1)``.
    eta1, eta0 : array_like
        Loadings of ``W`` on the selection slope in each arm.
    arms : tuple of ArmMoments, optional
        ``(untreated, treated)`` joint moments, required by :func:`bias_general`.
    """

    ew_treated: np.ndarray
    ew_untreated: np.ndarray
    ew: np.ndarray
    elam_treated: float
    elam_untreated: float
    p_treated: float
    eta1: np.ndarray
    eta0: np.ndarray
    arms: tuple | None = None

    def __post_init__(self):
        vecs = {}
        for name in ("ew_treated", "ew_untreated", "ew", "eta1", "eta0"):
            vecs[name] = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            object.__setattr__(self, name, vecs[name])
        if len({v.shape for v in vecs.values()}) != 1:
            raise ConfigError("W moments and eta loadings must share one dimension")
        if not 0.0 < self.p_treated < 1.0:
            raise ConfigError("P(D=1) must lie in (0, 1)")

    @property
    def dim(self):
        return self.ew.size

    @classmethod
    def from_arms(cls, untreated, treated, p_treated, eta1, eta0):
        """Summaries computed from arm-conditional supports."""
        ew1 = treated.mean(treated.w)
        ew0 = untreated.mean(untreated.w)
        return cls(ew_treated=ew1, ew_untreated=ew0,
                   ew=p_treated * ew1 + (1 - p_treated) * ew0,
                   elam_treated=float(treated.mean(treated.lam)),
                   elam_untreated=float(untreated.mean(untreated.lam)),
                   p_treated=p_treated, eta1=eta1, eta0=eta0, arms=(untreated, treated))


@dataclass(frozen=True)
class ArmBias:
    """Short-regression estimand minus truth for one arm."""

    mu: float
    tau: np.ndarray
    rho: float


def _residualize(arm, y, x):
    """Residual of ``y`` from its weighted projection on ``(1, x)`` within ``arm``."""
    X = np.column_stack([np.ones(x.shape[0]), x])
    wt = arm.weight
    gram = X.T @ (wt[:, None] * X)
    coef = np.linalg.lstsq(gram, X.T @ (wt.reshape(-1, *([1] * (y.ndim - 1))) * y), rcond=None)[0]
    return y - X @ coef


def bias_general(inputs, d):
    """Covariance-ratio bias of the short regression in arm ``d``.

    Partialling out ``(1, W)`` from ``lambda_d(P)`` gives the slope bias and
    partialling out ``(1, lambda_d(P))`` from ``W`` gives the covariate bias;
    the intercept bias follows from the arm mean.

    Returns
    -------
    ArmBias
    """
    if inputs.arms is None:
        raise ConfigError("bias_general needs the joint arm moments")
    arm = inputs.arms[int(d)]
    eta = inputs.eta1 if d == 1 else inputs.eta0
    w, lam, wt = arm.w, arm.lam, arm.weight
    omitted = (w @ eta) * lam
    lam_res = _residualize(arm, lam, w)
    var_lam = wt @ lam_res**2
    scale = max(wt @ (lam - wt @ lam) ** 2, 1e-300)
    if var_lam <= 1e-12 * scale:
        raise NumericalError("control function has no variation beyond the covariates")
    rho_bias = float(wt @ (omitted * lam_res) / var_lam)
    w_res = _residualize(arm, w, lam[:, None])
    gram = w_res.T @ (wt[:, None] * w_res)
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise NumericalError("covariates are collinear given the control function")
    tau_bias = np.linalg.solve(gram, w_res.T @ (wt * omitted))
    mu_bias = float(wt @ omitted - arm.mean(w) @ tau_bias - rho_bias * (wt @ lam))
    return ArmBias(mu=mu_bias, tau=tau_bias, rho=rho_bias)


@dataclass(frozen=True)
class EffectBias:
    """Bias of the ATE, CATE (at ``w_point``) and MTE-slope estimands."""

    ate: float
    cate: float | None
    slope: float

    def to_dict(self):
        return {"ate_bias": self.ate, "cate_bias": self.cate, "slope_bias": self.slope}


def effect_bias_general(inputs, w_point=None):
    """Effect-level biases built from :func:`bias_general` in both arms."""
    b1, b0 = bias_general(inputs, 1), bias_general(inputs, 0)
    dtau = b1.tau - b0.tau
    ate = b1.mu - b0.mu + inputs.ew @ dtau
    cate = None if w_point is None else b1.mu - b0.mu + np.atleast_1d(w_point) @ dtau
    slope = b1.rho - b0.rho - inputs.ew @ (inputs.eta1 - inputs.eta0)
    return EffectBias(float(ate), None if cate is None else float(cate), float(slope))


def bias_ate_cate_slope(inputs, w_point=None):
    """Closed-form biases when ``W`` is uncorrelated with the control functions.

    Valid when, within each arm, ``lambda_d(P)`` is uncorrelated with the
    first and second moments of ``W`` and ``lambda_d(P)^2`` is uncorrelated
    with ``W``.  If ``W`` is also balanced across arms the ATE and slope
    biases vanish; the CATE bias need not.
    """
    e1, e0, ew = inputs.ew_treated, inputs.ew_untreated, inputs.ew
    l1, l0 = inputs.elam_treated, inputs.elam_untreated
    ate = (ew - e1) @ inputs.eta1 * l1 - (ew - e0) @ inputs.eta0 * l0
    cate = None
    if w_point is not None:
        wp = np.atleast_1d(np.asarray(w_point, dtype=float))
        cate = float((wp - e1) @ inputs.eta1 * l1 - (wp - e0) @ inputs.eta0 * l0)
    slope = (e1 - e0) @ ((1 - inputs.p_treated) * inputs.eta1 + inputs.p_treated * inputs.eta0)
    return EffectBias(float(ate), cate, float(slope))


# ---------------------------------------------------------------------------
# Logit-selection example with one binary covariate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogitBiasDesign:
    """Binary-covariate logit-selection design.

    ``W ~ Bernoulli(1/2)``, ``Z`` standard logistic, ``P = expit(b W + Z)``,
    ``D = 1[U <= P]``, ``mu_1 = 0.5``, ``mu_0 = 0``, selection slopes
    ``1 + delta W`` (treated) and ``-1 + delta W`` (untreated), standard normal
    errors.  The true ATE is 0.5 for every ``(b, delta)``.
    """

    b: float
    delta: float
    mu1: float = 0.5
    mu0: float = 0.0
    rho1: float = 1.0
    rho0: float = -1.0

    true_ate = 0.5

    def arm_moments(self, nodes=400):
        """Exact arm-conditional supports by Gauss-Legendre quadrature over ``F_Z(Z)``."""
        x, gw = np.polynomial.legendre.leggauss(nodes)
        v = 0.5 * (x + 1.0)
        z = np.log(v) - np.log1p(-v)
        rows_w, lam1, lam0, m1, m0 = [], [], [], [], []
        for wv in (0.0, 1.0):
            p = expit(self.b * wv + z)
            base = 0.5 * 0.5 * gw  # P(W=w) times the quadrature weight on v
            rows_w.append(np.full(nodes, wv))
            lam1.append(lam_treated(p))
            lam0.append(lam_untreated(p))
            m1.append(base * p)
            m0.append(base * (1 - p))
        w = np.concatenate(rows_w)
        m1 = np.concatenate(m1)
        m0 = np.concatenate(m0)
        p_treated = m1.sum()
        treated = ArmMoments(w=w, lam=np.concatenate(lam1), weight=m1 / m1.sum())
        untreated = ArmMoments(w=w, lam=np.concatenate(lam0), weight=m0 / m0.sum())
        return untreated, treated, float(p_treated)

    def bias_inputs(self, nodes=400):
        untreated, treated, p1 = self.arm_moments(nodes)
        return BiasInputs.from_arms(untreated, treated, p1, eta1=[self.delta], eta0=[self.delta])

    def sample(self, n, seed=0, key=()):
        """Draw ``(y, d, w, p)`` from the design."""
        rng = rng_mod.stream(seed, BIAS_STREAM, *key)
        w = (rng.random(n) < 0.5).astype(float)
        z = rng.logistic(size=n)
        u = rng.random(n)
        e = rng.standard_normal((n, 2))
        p = expit(self.b * w + z)
        d = (u <= p).astype(np.int8)
        hu = u - 0.5
        y1 = self.mu1 + (self.rho1 + self.delta * w) * hu + e[:, 0]
        y0 = self.mu0 + (self.rho0 + self.delta * w) * hu + e[:, 1]
        return np.where(d == 1, y1, y0), d, w, p


def ate_bias(b, delta, nodes=400):
    """Population ATE bias of the short regressions in the logit design."""
    return effect_bias_general(LogitBiasDesign(b, delta).bias_inputs(nodes)).ate


def regression_ate(y, d, w, p, interactions=False):
    """ATE estimand from arm-wise OLS of ``Y`` on ``(1, W, lambda_d(P))``.

    With ``interactions=True`` the regressors also include ``W lambda_d(P)``,
    which is the correctly specified regression for this model class.
    """
    w = np.asarray(w, dtype=float).reshape(len(y), -1)
    L = w.shape[1]
    coefs = {}
    for arm, lam_fn in ((1, lam_treated), (0, lam_untreated)):
        sel = d == arm
        lam = lam_fn(p[sel])
        cols = [np.ones(sel.sum()), w[sel], lam]
        if interactions:
            cols.append(w[sel] * lam[:, None])
        coefs[arm] = np.linalg.lstsq(np.column_stack(cols), y[sel], rcond=None)[0]
    dmu = coefs[1][0] - coefs[0][0]
    dtau = coefs[1][1:1 + L] - coefs[0][1:1 + L]
    return float(dmu + w.mean(axis=0) @ dtau)


def simulated_ate_bias(b, delta, n=500_000, seed=0, conditional_mean=True):
    """Brute-force oracle: short-regression ATE on a simulated sample minus 0.5.

    With ``conditional_mean=True`` the outcome is replaced by its mean given
    ``(D, W, P)``, which leaves the OLS estimand unchanged but removes the
    outcome noise, so the remaining error comes only from sampling ``(W, Z, D)``.
    """
    design = LogitBiasDesign(b, delta)
    y, d, w, p = design.sample(n, seed=seed, key=(_key(b), _key(delta)))
    if conditional_mean:
        y = np.where(d == 1,
                     design.mu1 + (design.rho1 + delta * w) * lam_treated(p),
                     design.mu0 + (design.rho0 + delta * w) * lam_untreated(p))
    return regression_ate(y, d, w, p) - design.true_ate


def _key(x):
    return int(round(float(x) * 1000)) & 0xFFFFFFFF


def bias_surface(resolution=21, lo=-5.0, hi=5.0, nodes=400):
    """Grid of ``(b, delta, ate_estimand, ate_bias)`` rows over ``[lo, hi]^2``."""
    if resolution < 2:
        raise ConfigError("resolution must be at least 2")
    grid = np.linspace(lo, hi, resolution)
    rows = []
    for b in grid:
        for delta in grid:
            bias = ate_bias(b, delta, nodes)
            rows.append((float(b), float(delta), LogitBiasDesign.true_ate + bias, bias))
    return rows


# ---------------------------------------------------------------------------
# Two-stage moment singularity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SingularityReport:
    eigenvalues: np.ndarray
    min_eigenvalue: float
    max_eigenvalue: float
    relative: float
    singular: bool

    def to_dict(self):
        return {"min_eigenvalue": self.min_eigenvalue, "max_eigenvalue": self.max_eigenvalue,
                "relative": self.relative, "singular": self.singular}


def _two_stage_moments(y, d, z, p_vec, theta, reparam):
    mu0, mu1, rho0, rho1 = theta
    pz = p_vec[z]
    l0, l1 = lam_untreated(pz), lam_treated(pz)
    if reparam:
        # intercepts absorb the control function at the baseline level
        r0 = y - mu0 - rho0 * (l0 - lam_untreated(p_vec[0]))
        r1 = y - mu1 - rho1 * (l1 - lam_treated(p_vec[0]))
    else:
        r0 = y - mu0 - rho0 * l0
        r1 = y - mu1 - rho1 * l1
    d0 = (d == 0).astype(float)
    d1 = 1.0 - d0
    cols = [r0 * d0, r0 * d0 * l0, r1 * d1, r1 * d1 * l1]
    for k in range(p_vec.size):
        cols.append((z == k) * (p_vec[k] - d1))
    return np.column_stack(cols)


def two_stage_singularity(p_vec, theta=(0.0, 0.0, -1.0, 1.0), n=100_000, seed=0,
                          reparam=False, threshold=1e-8):
    """Smallest eigenvalue of the two-stage control-function moment variance.

    Simulates ``n`` draws from a linear MTE model with a discrete instrument
    taking ``len(p_vec)`` equally likely values, evaluates the two-stage moment
    vector at the true parameters ``theta = (mu_0, mu_1, rho_0, rho_1)`` and
    the true scores, and reports the eigenvalues of its sample covariance.

    ``reparam=True`` uses the intercepts ``mu_d - rho_d lambda_d(p(z_0))``.
    """
    p_vec = np.asarray(p_vec, dtype=float)
    if p_vec.ndim != 1 or p_vec.size < 1 or np.any((p_vec <= 0) | (p_vec >= 1)):
        raise ConfigError("p_vec must hold scores in (0, 1)")
    mu0, mu1, rho0, rho1 = (float(t) for t in theta)
    rng = rng_mod.stream(seed, BIAS_STREAM, 99, p_vec.size)
    z = rng.integers(0, p_vec.size, n)
    u = rng.random(n)
    e = rng.standard_normal((n, 2))
    d = (u <= p_vec[z]).astype(np.int8)
    hu = u - 0.5
    y = np.where(d == 1, mu1 + rho1 * hu + e[:, 0], mu0 + rho0 * hu + e[:, 1])
    if reparam:
        theta_eval = (mu0 - rho0 * float(lam_untreated(p_vec[0])), mu1 - rho1 * float(lam_treated(p_vec[0])),
                      rho0, rho1)
    else:
        theta_eval = (mu0, mu1, rho0, rho1)
    g = _two_stage_moments(y, d, z, p_vec, theta_eval, reparam)
    eig = np.linalg.eigvalsh(np.cov(g, rowvar=False))
    lo, hi = float(max(eig[0], 0.0)), float(eig[-1])
    rel = lo / hi if hi > 0 else 0.0
    return SingularityReport(eigenvalues=eig, min_eigenvalue=lo, max_eigenvalue=hi,
                             relative=rel, singular=rel < threshold)

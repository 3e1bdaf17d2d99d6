"""Weight vectors ``c`` for treatment-effect targets and counterfactual policies.

Every target is a linear functional ``c' theta`` with symmetric weights
``c = (c_1, -c_1)``.  The population-averaged targets share one ratio form::

    c_1m = sum_l q_l N_m(p_l) / sum_l q_l Dn(p_l)

so a single routine gives both the weight and its Jacobians in ``p`` and ``q``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PROPENSITY_TIE_TOL
from .errors import ConfigError, DataError

TARGET_KINDS = (
    "ate", "mte", "att", "atu", "late",
    "additive_prte", "proportional_prte", "quota",
    "additive_mprte", "proportional_mprte", "custom",
)
POLICY_KINDS = ("additive", "proportional", "quota")


@dataclass(frozen=True)
class PolicySpec:
    """Counterfactual shift of the propensity score.

    ``epsilon`` is a scalar for the additive and proportional shifts and a
    ``(lo, hi)`` pair for the quota policy, which keeps the score inside
    ``[lo, hi]`` through a smooth approximation with sharpness ``phi``.
    """

    kind: str
    epsilon: float | tuple = 0.0
    phi: float = 30.0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}; choose from {POLICY_KINDS}")
        if self.kind == "quota":
            try:
                lo, hi = (float(v) for v in self.epsilon)
            except TypeError:
                raise ConfigError("quota policy needs epsilon = (lo, hi)") from None
            if not 0.0 <= lo <= hi <= 1.0:
                raise ConfigError(f"quota bounds must satisfy 0 <= lo <= hi <= 1, got {(lo, hi)}")
            if not self.phi > 0:
                raise ConfigError("quota smoothing phi must be positive")
            object.__setattr__(self, "epsilon", (lo, hi))
        else:
            eps = float(self.epsilon)
            if eps < 0:
                raise ConfigError(f"policy epsilon must be nonnegative, got {eps}")
            object.__setattr__(self, "epsilon", eps)


def _policy_map(policy, p):
    """Counterfactual score and its derivative in ``p``, without range checks."""
    p = np.asarray(p, dtype=float)
    if policy.kind == "additive":
        return p + policy.epsilon, np.ones_like(p)
    if policy.kind == "proportional":
        return (1.0 + policy.epsilon) * p, np.full_like(p, 1.0 + policy.epsilon)
    lo, hi = policy.epsilon
    phi = policy.phi
    log_s = np.logaddexp(phi * p, phi * lo)
    log_x = np.logaddexp(-log_s, -phi * hi)
    value = -log_x / phi
    deriv = np.exp(phi * p - 2.0 * log_s - log_x)
    return value, deriv


def counterfactual_propensity(policy, p):
    """Propensity score after applying ``policy`` to score(s) ``p``."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise DataError("propensity score outside (0, 1)")
    value, _ = _policy_map(policy, p)
    if np.any((value <= 0) | (value >= 1)):
        raise DataError("counterfactual propensity out of range")
    return value if value.ndim else float(value)


@dataclass(frozen=True)
class Target:
    """A treatment-effect target.

    Parameters
    ----------
    kind : str
        One of :data:`TARGET_KINDS`.
    k : int, optional
        Instrument index of the LATE comparison level (baseline is index 0).
    u : float, optional
        Evaluation point of the MTE.
    policy : PolicySpec, optional
        Policy for the PRTE family (built automatically from ``kind`` and
        ``epsilon`` when omitted).
    c1 : sequence, optional
        Treated-arm weights for ``kind="custom"``.
    """

    kind: str
    k: int | None = None
    u: float | None = None
    epsilon: float | tuple | None = None
    phi: float = 30.0
    c1: tuple | None = None

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ConfigError(f"unknown target {self.kind!r}; choose from {TARGET_KINDS}")
        if self.kind == "late" and (self.k is None or int(self.k) < 1):
            raise ConfigError("LATE target needs k >= 1")
        if self.kind == "mte" and (self.u is None or not 0.0 <= float(self.u) <= 1.0):
            raise ConfigError("MTE target needs u in [0, 1]")
        if self.kind in ("additive_prte", "proportional_prte", "quota") and self.epsilon is None:
            raise ConfigError(f"target {self.kind!r} needs epsilon")
        if self.kind == "custom":
            if self.c1 is None:
                raise ConfigError("custom target needs c1")
            object.__setattr__(self, "c1", tuple(float(v) for v in self.c1))
        if self.policy is not None:
            self.policy  # validates epsilon / phi

    @property
    def policy(self):
        if self.kind == "additive_prte":
            return PolicySpec("additive", self.epsilon)
        if self.kind == "proportional_prte":
            return PolicySpec("proportional", self.epsilon)
        if self.kind == "quota":
            return PolicySpec("quota", self.epsilon, self.phi)
        return None

    @property
    def estimated(self):
        """Whether the weight depends on the estimated ``p`` and ``q``."""
        return self.kind not in ("ate", "mte", "custom")


@dataclass(frozen=True)
class WeightVector:
    """Weight ``c = (c_1, -c_1)`` with Jacobians of ``c_1`` in ``p`` and ``q``.

    ``grad_p`` and ``grad_q`` have shape ``(M+1, K+1)``.
    """

    c: np.ndarray
    target: Target
    grad_p: np.ndarray
    grad_q: np.ndarray

    @property
    def c1(self):
        return self.c[: self.c.size // 2]

    @property
    def c_mu(self):
        return float(self.c1[0])

    @property
    def c_rho(self):
        return float(self.c1[1])

    def full_grad(self, which):
        """Jacobian of the full ``2(M+1)`` vector ``c``; ``which`` is ``"p"`` or ``"q"``."""
        g = self.grad_p if which == "p" else self.grad_q
        return np.vstack([g, -g])


def _ratio_parts(target, basis, m, p, pe=None, dpe=None):
    """``N_m``, ``N_m'``, ``Dn`` and ``Dn'`` per cell for the ratio-form targets."""
    h, H = basis.h, basis.antiderivative
    one = np.ones_like(p)
    kind = target.kind
    if kind == "att":
        return H(m, p), h(m, p), p, one
    if kind == "atu":
        return H(m, 1.0) - H(m, p), -h(m, p), 1.0 - p, -one
    if kind in ("additive_prte", "proportional_prte", "quota"):
        return (H(m, pe) - H(m, p), h(m, pe) * dpe - h(m, p), pe - p, dpe - 1.0)
    if kind == "additive_mprte":
        return h(m, p), basis.dh(m, p), one, 0.0 * one
    if kind == "proportional_mprte":
        return p * h(m, p), h(m, p) + p * basis.dh(m, p), p, one
    raise AssertionError(kind)


def _ratio_weights(target, spec, p, q):
    m1, k1 = spec.order + 1, p.size
    c1 = np.zeros(m1)
    gp = np.zeros((m1, k1))
    gq = np.zeros((m1, k1))
    pe = dpe = None
    policy = target.policy
    if policy is not None:
        pe, dpe = _policy_map(policy, p)
        if np.any((pe <= 0) | (pe >= 1)):
            raise DataError("counterfactual propensity out of range")
    c1[0] = 1.0
    for m in range(1, m1):
        num, dnum, den, dden = _ratio_parts(target, spec.basis, m, p, pe, dpe)
        total = q @ den
        if abs(total) < 1e-14:
            raise DataError("null policy: counterfactual shift has zero mass")
        c = (q @ num) / total
        c1[m] = c
        gq[m] = (num - c * den) / total
        gp[m] = q * (dnum - c * dden) / total
    return c1, gp, gq


def weight_vector(target, spec, stats, q=None):
    """Weight vector ``c`` and its Jacobians for ``target``.

    Parameters
    ----------
    target : Target
    spec : MteSpec
    stats : CellStats
        Supplies the estimated scores ``p_hat`` and masses ``q_hat``.
    q : array_like, optional
        Overrides ``q_hat`` as the instrument distribution (for example under
        stratified sampling).  Jacobians in ``q`` are still reported.
    """
    p = np.asarray(stats.p_hat, dtype=float)
    q = np.asarray(stats.q_hat if q is None else q, dtype=float)
    m1, k1 = spec.order + 1, p.size
    gp = np.zeros((m1, k1))
    gq = np.zeros((m1, k1))
    basis = spec.basis
    kind = target.kind
    if kind == "ate":
        c1 = np.eye(m1)[0]
    elif kind == "mte":
        c1 = np.array([basis.h(m, target.u) for m in range(m1)], dtype=float)
    elif kind == "custom":
        c1 = np.asarray(target.c1, dtype=float)
        if c1.shape != (m1,):
            raise ConfigError(f"custom c1 must have length {m1}, got {c1.size}")
    elif kind == "late":
        k = int(target.k)
        if k >= k1:
            raise ConfigError(f"LATE index k={k} outside 1..{k1 - 1}")
        pk, p0 = p[k], p[0]
        if abs(pk - p0) <= PROPENSITY_TIE_TOL:
            raise DataError("degenerate complier group: p(z_k) equals p(z_0)")
        c1 = np.ones(m1)
        for m in range(1, m1):
            H = basis.antiderivative
            c = (H(m, pk) - H(m, p0)) / (pk - p0)
            c1[m] = c
            gp[m, k] = (basis.h(m, pk) - c) / (pk - p0)
            gp[m, 0] = (c - basis.h(m, p0)) / (pk - p0)
    else:
        c1, gp, gq = _ratio_weights(target, spec, p, q)
    if not np.any(c1 != 0):
        raise ConfigError("weight vector must be nonzero")
    c = np.concatenate([c1, -c1])
    return WeightVector(c=c, target=target, grad_p=gp, grad_q=gq)


def weight_gradients(target, spec, stats):
    """Jacobians ``(dc_1/dp, dc_1/dq)`` of the treated-arm weights."""
    w = weight_vector(target, spec, stats)
    return w.grad_p, w.grad_q


def target_from_config(name, **params):
    """Build a :class:`Target` from a CLI/config name and named parameters."""
    name = name.lower().replace("-", "_")
    aliases = {"prte_additive": "additive_prte", "prte_proportional": "proportional_prte",
               "mprte_additive": "additive_mprte", "mprte_proportional": "proportional_mprte"}
    name = aliases.get(name, name)
    kw = {}
    if "k" in params:
        kw["k"] = int(params.pop("k"))
    if "u" in params:
        kw["u"] = float(params.pop("u"))
    if "phi" in params:
        kw["phi"] = float(params.pop("phi"))
    if "eps_lo" in params or "eps_hi" in params:
        kw["epsilon"] = (float(params.pop("eps_lo", 0.0)), float(params.pop("eps_hi", 1.0)))
    elif "epsilon" in params:
        kw["epsilon"] = float(params.pop("epsilon"))
    if "c1" in params:
        kw["c1"] = tuple(params.pop("c1"))
    if params:
        raise ConfigError(f"unknown target parameters {sorted(params)}")
    return Target(name, **kw)

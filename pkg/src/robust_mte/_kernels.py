"""Compiled inner loops for the profiled MLC statistic and the CUE objective.

Profiling evaluates the statistic thousands of times on matrices of size
``2(K+1)``, where numpy call overhead dominates, so the kernels work on plain
loops.  The numpy reference implementation in :mod:`robust_mte.mlc` computes
the same quantities with explicit matrix square roots and is used to test
these kernels.

The parameter tuple ``P`` holds, in order::

    A1, A0, dA1, dA0   (K+1) x (M+1) control functions and their derivatives
    beta               2(K+1) cell means, treated block first
    sp, sb             diagonals of Sigma_p and Sigma_beta
    xr                 2(K+1) vector xi_r (estimated weights only)
    gpc, gqc           2(M+1) x (K+1) Jacobians of c in p and q
    Sq                 (K+1) x (K+1) covariance of q-hat
    est                1.0 when the estimated-weight variance is used
    XI                 2(K+1) x 2(M+1) perturbation, already scaled by kappa/sqrt(n)
    c                  2(M+1) weight vector
    n, a               sample size and AR weight
"""
import numpy as np
from numba import njit

BIG = 1e12


@njit(cache=True)
def _cholesky(S, L):
    k = S.shape[0]
    for i in range(k):
        for j in range(i + 1):
            s = S[i, j]
            for t in range(j):
                s -= L[i, t] * L[j, t]
            if i == j:
                if s <= 0.0:
                    return False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
        for j in range(i + 1, k):
            L[i, j] = 0.0
    return True


@njit(cache=True)
def _chol_solve(L, b, out):
    k = L.shape[0]
    for i in range(k):
        s = b[i]
        for t in range(i):
            s -= L[i, t] * out[t]
        out[i] = s / L[i, i]
    for i in range(k - 1, -1, -1):
        s = out[i]
        for t in range(i + 1, k):
            s -= L[t, i] * out[t]
        out[i] = s / L[i, i]


@njit(cache=True)
def _omega(theta, P, Om, G, m):
    """Fill the moment residual ``m``, ``G = dm/dp`` and ``Omega``."""
    A1, A0, dA1, dA0, beta, sp, sb, xr, gpc, gqc, Sq, est, XI, c, n, a = P
    k1, m1 = A1.shape
    k2 = 2 * k1
    for l in range(k1):
        s1 = 0.0
        s0 = 0.0
        h1 = 0.0
        h0 = 0.0
        for j in range(m1):
            s1 += A1[l, j] * theta[j]
            s0 += A0[l, j] * theta[m1 + j]
            h1 += dA1[l, j] * theta[j]
            h0 += dA0[l, j] * theta[m1 + j]
        m[l] = s1 - beta[l]
        m[k1 + l] = s0 - beta[k1 + l]
        for t in range(k1):
            G[l, t] = 0.0
            G[k1 + l, t] = 0.0
        G[l, l] = h1
        G[k1 + l, l] = h0
    gq_theta = np.zeros(k1)
    if est > 0.0:
        for t in range(k1):
            sp_t = 0.0
            sq_t = 0.0
            for j in range(2 * m1):
                sp_t += gpc[j, t] * theta[j]
                sq_t += gqc[j, t] * theta[j]
            gq_theta[t] = sq_t
            for r in range(k2):
                G[r, t] += xr[r] * sp_t
    vq = 0.0
    if est > 0.0:
        for s in range(k1):
            for t in range(k1):
                vq += gq_theta[s] * Sq[s, t] * gq_theta[t]
    for r in range(k2):
        for s in range(r + 1):
            v = 0.0
            for t in range(k1):
                v += G[r, t] * sp[t] * G[s, t]
            if est > 0.0:
                v += xr[r] * xr[s] * vq
            if r == s:
                v += sb[r]
            Om[r, s] = v
            Om[s, r] = v


@njit(cache=True)
def mlc_eval(theta, P):
    """Return ``(MLC, AR, MRLM)`` at ``theta``; ``inf`` values signal singularity."""
    A1, A0, dA1, dA0, beta, sp, sb, xr, gpc, gqc, Sq, est, XI, c, n, a = P
    k1, m1 = A1.shape
    k2 = 2 * k1
    p2 = 2 * m1
    Om = np.empty((k2, k2))
    G = np.empty((k2, k1))
    m = np.empty(k2)
    _omega(theta, P, Om, G, m)
    L = np.empty((k2, k2))
    if not _cholesky(Om, L):
        return np.inf, np.inf, np.inf
    u = np.empty(k2)
    _chol_solve(L, m, u)
    ar = 0.0
    for r in range(k2):
        ar += m[r] * u[r]
    ar *= n
    # w = Sigma_p G' Omega^{-1} m ; D-tilde = A - blockdiag(diag(w) dA) + XI
    w = np.empty(k1)
    for t in range(k1):
        s = 0.0
        for r in range(k2):
            s += G[r, t] * u[r]
        w[t] = sp[t] * s
    D = np.empty((k2, p2))
    for r in range(k2):
        for j in range(p2):
            D[r, j] = XI[r, j]
    for l in range(k1):
        for j in range(m1):
            D[l, j] += A1[l, j] - w[l] * dA1[l, j]
            D[k1 + l, m1 + j] += A0[l, j] - w[l] * dA0[l, j]
    X = np.empty((k2, p2))
    col = np.empty(k2)
    tmp = np.empty(k2)
    for j in range(p2):
        for r in range(k2):
            col[r] = D[r, j]
        _chol_solve(L, col, tmp)
        for r in range(k2):
            X[r, j] = tmp[r]
    Mm = np.empty((p2, p2))
    for i in range(p2):
        for j in range(i + 1):
            s = 0.0
            for r in range(k2):
                s += D[r, i] * X[r, j]
            Mm[i, j] = s
            Mm[j, i] = s
    Lm = np.empty((p2, p2))
    if not _cholesky(Mm, Lm):
        return np.inf, ar, np.inf
    y = np.empty(p2)
    _chol_solve(Lm, c, y)
    cy = 0.0
    for j in range(p2):
        cy += c[j] * y[j]
    uv = 0.0
    for r in range(k2):
        v = 0.0
        for j in range(p2):
            v += D[r, j] * y[j]
        uv += u[r] * v
    mrlm = n * uv * uv / cy
    return mrlm + a * ar, ar, mrlm


@njit(cache=True)
def cue_eval(theta, P):
    """Continuously updated minimum-distance objective ``n m' Omega^{-1} m``."""
    A1 = P[0]
    n = P[14]
    k1 = A1.shape[0]
    k2 = 2 * k1
    Om = np.empty((k2, k2))
    G = np.empty((k2, k1))
    m = np.empty(k2)
    _omega(theta, P, Om, G, m)
    L = np.empty((k2, k2))
    if not _cholesky(Om, L):
        return np.inf
    u = np.empty(k2)
    _chol_solve(L, m, u)
    s = 0.0
    for r in range(k2):
        s += m[r] * u[r]
    return n * s


@njit(cache=True)
def _objective(kind, x, base, N, lo, hi, P):
    p = base.size
    theta = np.empty(p)
    for i in range(p):
        s = base[i]
        for j in range(x.size):
            s += N[i, j] * x[j]
        theta[i] = s
    viol = 0.0
    for i in range(p):
        if theta[i] < lo[i]:
            viol += lo[i] - theta[i]
        elif theta[i] > hi[i]:
            viol += theta[i] - hi[i]
    if viol > 0.0:
        return BIG * (1.0 + viol)
    if kind == 0:
        f = mlc_eval(theta, P)[0]
    else:
        f = cue_eval(theta, P)
    if not np.isfinite(f):
        return BIG
    return f


@njit(cache=True)
def nelder_mead(kind, x0, scale, base, N, lo, hi, P, maxfev, fatol, xatol, stop_below):
    """Adaptive Nelder-Mead on ``theta = base + N x`` with a box penalty.

    Stops early once the objective drops to ``stop_below``.
    Returns ``(x_best, f_best, n_evaluations, converged)``.
    """
    d = x0.size
    dd = float(d)
    rho = 1.0
    chi = 1.0 + 2.0 / dd
    psi = 0.75 - 1.0 / (2.0 * dd)
    sigma = 1.0 - 1.0 / dd
    sim = np.empty((d + 1, d))
    fs = np.empty(d + 1)
    for i in range(d + 1):
        for j in range(d):
            sim[i, j] = x0[j]
        if i > 0:
            sim[i, i - 1] += scale
    nfev = 0
    for i in range(d + 1):
        fs[i] = _objective(kind, sim[i], base, N, lo, hi, P)
        nfev += 1
    xbar = np.empty(d)
    xr = np.empty(d)
    xe = np.empty(d)
    xc = np.empty(d)
    converged = False
    while nfev < maxfev:
        order = np.argsort(fs)
        sim = sim[order]
        fs = fs[order]
        if fs[0] <= stop_below:
            converged = True
            break
        fspread = fs[d] - fs[0]
        xspread = 0.0
        for i in range(1, d + 1):
            for j in range(d):
                v = abs(sim[i, j] - sim[0, j])
                if v > xspread:
                    xspread = v
        if fspread <= fatol and xspread <= xatol:
            converged = True
            break
        for j in range(d):
            s = 0.0
            for i in range(d):
                s += sim[i, j]
            xbar[j] = s / dd
        for j in range(d):
            xr[j] = (1.0 + rho) * xbar[j] - rho * sim[d, j]
        fr = _objective(kind, xr, base, N, lo, hi, P)
        nfev += 1
        shrink = False
        if fr < fs[0]:
            for j in range(d):
                xe[j] = (1.0 + rho * chi) * xbar[j] - rho * chi * sim[d, j]
            fe = _objective(kind, xe, base, N, lo, hi, P)
            nfev += 1
            if fe < fr:
                sim[d] = xe
                fs[d] = fe
            else:
                sim[d] = xr
                fs[d] = fr
        elif fr < fs[d - 1]:
            sim[d] = xr
            fs[d] = fr
        else:
            if fr < fs[d]:
                for j in range(d):
                    xc[j] = (1.0 + psi * rho) * xbar[j] - psi * rho * sim[d, j]
                fc = _objective(kind, xc, base, N, lo, hi, P)
                nfev += 1
                if fc <= fr:
                    sim[d] = xc
                    fs[d] = fc
                else:
                    shrink = True
            else:
                for j in range(d):
                    xc[j] = (1.0 - psi) * xbar[j] + psi * sim[d, j]
                fc = _objective(kind, xc, base, N, lo, hi, P)
                nfev += 1
                if fc < fs[d]:
                    sim[d] = xc
                    fs[d] = fc
                else:
                    shrink = True
            if shrink:
                for i in range(1, d + 1):
                    for j in range(d):
                        sim[i, j] = sim[0, j] + sigma * (sim[i, j] - sim[0, j])
                    fs[i] = _objective(kind, sim[i], base, N, lo, hi, P)
                    nfev += 1
    best = np.argmin(fs)
    return sim[best].copy(), fs[best], nfev, converged

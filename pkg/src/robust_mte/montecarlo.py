"""Simulation designs and rejection-rate sweeps.

Every replication draws from its own random stream keyed by
``(seed, point, replication)``, so results do not depend on evaluation order
and interrupted sweeps can resume from a checkpoint.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .basis import MteSpec
from .data import CellStats, Dataset, covariance_estimates
from .errors import ConfigError


@dataclass(frozen=True)
class DgpSpec:
    """Polynomial MTE design with a discrete instrument.

    ``Y_d = mu_d + sum_m rho_dm h_m(U) + e_d`` with ``e ~ N(0, sigma_e I)``,
    ``D = 1[U <= p(Z)]`` and ``Z`` drawn from ``q_vec`` (uniform by default).
    """

    order: int
    mu1: float
    mu0: float
    rho1: tuple
    rho0: tuple
    p_vec: tuple
    n: int
    sigma_e: float = 0.5
    q_vec: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        p = np.asarray(self.p_vec, dtype=float)
        if np.any((p <= 0) | (p >= 1)):
            raise ConfigError("p_vec entries must lie in (0, 1)")
        if len(self.rho1) != self.order or len(self.rho0) != self.order:
            raise ConfigError("rho loadings must have one entry per basis function")
        if self.n < 50:
            raise ConfigError("simulated sample size must be at least 50")
        if self.q_vec is not None:
            q = np.asarray(self.q_vec, dtype=float)
            if q.shape != p.shape or np.any(q < 0) or abs(q.sum() - 1) > 1e-10:
                raise ConfigError("q_vec must be a probability vector matching p_vec")
        object.__setattr__(self, "p_vec", tuple(float(v) for v in self.p_vec))
        object.__setattr__(self, "rho1", tuple(float(v) for v in self.rho1))
        object.__setattr__(self, "rho0", tuple(float(v) for v in self.rho0))

    @property
    def theta(self):
        return np.array([self.mu1, *self.rho1, self.mu0, *self.rho0], dtype=float)

    @property
    def q(self):
        k1 = len(self.p_vec)
        return np.full(k1, 1.0 / k1) if self.q_vec is None else np.asarray(self.q_vec, float)

    @property
    def mte_spec(self):
        return MteSpec(order=self.order)

    def population_stats(self):
        """Cell statistics at population values (``n`` kept for scaling)."""
        spec = self.mte_spec
        from .basis import build_A

        p = np.asarray(self.p_vec)
        beta = build_A(spec, p).A @ self.theta
        k1 = p.size
        # Var(Y_d | D=d, Z) = sigma_e + Var(sum_m rho_dm h_m(U) | U in arm)
        sigma2 = np.vstack([
            self.sigma_e + _cond_var(self.rho0, p, arm=0),
            self.sigma_e + _cond_var(self.rho1, p, arm=1),
        ])
        q = self.q
        counts = np.vstack([(1 - p) * q, p * q]) * self.n
        return CellStats(q_hat=q, p_hat=p, beta1_hat=beta[:k1], beta0_hat=beta[k1:],
                         sigma2=sigma2, counts=np.maximum(np.round(counts), 1), n=self.n)

    @classmethod
    def quadratic(cls, p_vec, n=2000, **kw):
        """The quadratic design with strong endogeneity used for size surfaces."""
        return cls(order=2, mu1=0.0, mu0=0.0, rho1=(-5.0, -5.0), rho0=(5.0, 5.0),
                   p_vec=tuple(p_vec), n=n, **kw)

    @classmethod
    def linear(cls, p_vec, n=500, **kw):
        """The linear design used for the linear-MTE power comparison."""
        return cls(order=1, mu1=0.0, mu0=0.0, rho1=(5.0,), rho0=(5.0,),
                   p_vec=tuple(p_vec), n=n, **kw)


def _cond_var(rho, p, arm, nodes=64):
    """Variance of ``sum_m rho_m h_m(U)`` given ``U <= p`` (arm 1) or ``U > p`` (arm 0)."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    out = np.empty(p.size)
    for i, pi in enumerate(p):
        a, b = (0.0, pi) if arm == 1 else (pi, 1.0)
        u = 0.5 * (b - a) * x + 0.5 * (a + b)
        f = sum(r * (u ** (m + 1) - 1.0 / (m + 2)) for m, r in enumerate(rho))
        wt = 0.5 * w
        mean = wt @ f
        out[i] = wt @ (f - mean) ** 2
    return out


def _draw(spec, rng):
    k1 = len(spec.p_vec)
    n = spec.n
    if spec.q_vec is None:
        z = rng.integers(0, k1, n)
    else:
        z = rng.choice(k1, size=n, p=spec.q)
    u = rng.random(n)
    e = rng.standard_normal((n, 2)) * np.sqrt(spec.sigma_e)
    d = (u <= np.asarray(spec.p_vec)[z]).astype(np.int8)
    hu = np.zeros(n)
    h0 = np.zeros(n)
    for m in range(1, spec.order + 1):
        hm = u**m - 1.0 / (m + 1)
        hu += spec.rho1[m - 1] * hm
        h0 += spec.rho0[m - 1] * hm
    y1 = spec.mu1 + hu + e[:, 0]
    y0 = spec.mu0 + h0 + e[:, 1]
    y = np.where(d == 1, y1, y0)
    return y, d, z


def dgp_sample(spec, key=()):
    """Draw a :class:`Dataset`; ``key`` selects an independent replication stream."""
    rng = rng_mod.stream(spec.seed, rng_mod.SIMULATION_STREAM, *key)
    y, d, z = _draw(spec, rng)
    levels = tuple(f"z{i}" for i in range(len(spec.p_vec)))
    return Dataset(y=y, d=d, z=z, instrument_levels=levels)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

METHODS = ("ar", "cwald", "mlc", "wald")
LINEAR_ONLY = ("ar", "cwald")


def _method_seed(seed, point, rep):
    return int(rng_mod.stream(seed, rng_mod.OPTIMIZER_STREAM, point, rep).integers(2**31 - 1))


def replicate(spec, lam, methods, point, rep, target=None, alpha=0.05):
    """Rejection indicators of every method on one simulated sample."""
    from .data import cell_stats
    from .linear import LinearMomentContext, ar_test, cond_wald_test
    from .mlc import MlcContext, classical_wald, mlc_test
    from .weights import Target, weight_vector

    stats = cell_stats(dgp_sample(spec, key=(point, rep)))
    target = Target("ate") if target is None else target
    weight = weight_vector(target, spec.mte_spec, stats)
    seed = _method_seed(spec.seed, point, rep)
    out = {}
    lin = None
    ctx = None
    for m in methods:
        if m in LINEAR_ONLY:
            if lin is None:
                lin = LinearMomentContext.from_weight(stats, weight)
            if m == "ar":
                res = ar_test(lin, lin.K, lam, alpha)
            else:
                res = cond_wald_test(lin, lam, alpha, seed=seed)
        else:
            if ctx is None:
                ctx = MlcContext.build(spec.mte_spec, stats, alpha=alpha, seed=seed)
            if m == "mlc":
                res = mlc_test(ctx, lam, weight)
            else:
                res = classical_wald(ctx, lam, weight)
        out[m] = bool(res.reject)
    return out


def _check_methods(spec, methods):
    methods = tuple(methods)
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
    if spec.order != 1 and any(m in LINEAR_ONLY for m in methods):
        raise ConfigError("AR and conditional Wald sweeps need a model of order 1")
    if not methods:
        raise ConfigError("no methods requested")
    return methods


@dataclass
class SweepResult:
    """Rejection rates per grid point and method.

    ``coords`` lists one tuple per point in the coordinate names ``axes``;
    ``rates[method][i]`` is the rejection frequency at point ``i``.
    """

    kind: str
    axes: tuple
    coords: list
    methods: tuple
    rates: dict
    reps: int
    seed: int
    meta: dict = field(default_factory=dict)

    def mc_se(self, method):
        r = np.asarray(self.rates[method], dtype=float)
        return np.sqrt(r * (1 - r) / self.reps)

    def rate(self, method, coord):
        i = [tuple(c) for c in self.coords].index(tuple(float(v) for v in coord))
        return float(self.rates[method][i])

    def rows(self):
        out = []
        for i, c in enumerate(self.coords):
            for m in self.methods:
                r = float(self.rates[m][i])
                out.append({**dict(zip(self.axes, c)), "method": m, "reject_rate": r,
                            "reps": self.reps, "mc_se": float(np.sqrt(r * (1 - r) / self.reps))})
        return out

    def to_csv(self, path):
        rows = self.rows()
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=[*self.axes, "method", "reject_rate", "reps", "mc_se"],
                                    lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})

    def to_dict(self):
        return {"kind": self.kind, "axes": list(self.axes), "coords": [list(c) for c in self.coords],
                "methods": list(self.methods), "rates": {m: list(map(float, v)) for m, v in self.rates.items()},
                "reps": self.reps, "seed": self.seed, "meta": self.meta}


def _point_task(args):
    spec, lam, methods, point, sample_point, reps, target, alpha = args
    counts = dict.fromkeys(methods, 0)
    for rep in range(reps):
        for m, rej in replicate(spec, lam, methods, sample_point, rep, target, alpha).items():
            counts[m] += rej
    return point, counts


def _load_checkpoint(path, signature):
    if path is None or not Path(path).exists():
        return {}
    done = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("signature") != signature:
                raise ConfigError(f"checkpoint {path} belongs to a different sweep configuration")
            done[int(rec["point"])] = rec["counts"]
    return done


def _run_points(tasks, signature, checkpoint, threads):
    done = _load_checkpoint(checkpoint, signature)
    todo = [t for t in tasks if t[3] not in done]

    def record(point, counts):
        done[point] = counts
        if checkpoint is not None:
            with open(checkpoint, "a") as fh:
                fh.write(json.dumps({"signature": signature, "point": point, "counts": counts}) + "\n")
                fh.flush()
                os.fsync(fh.fileno())

    if threads and threads > 1 and len(todo) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for point, counts in pool.map(_point_task, todo):
                record(point, counts)
    else:
        for task in todo:
            record(*_point_task(task))
    return done


def _signature(kind, spec, coords, methods, reps, alpha, target):
    payload = {"kind": kind, "spec": asdict(spec), "coords": [list(c) for c in coords],
               "methods": list(methods), "reps": reps, "alpha": alpha,
               "target": None if target is None else repr(target)}
    return json.dumps(payload, sort_keys=True, default=list)


def size_surface(design, grid, reps=500, methods=("mlc", "wald"), lam=0.0, target=None,
                 alpha=0.05, checkpoint=None, threads=1):
    """Rejection rates of a true null over a grid of ``(p(z_1), p(z_2))``.

    Parameters
    ----------
    design : DgpSpec
        Base design; ``p(z_0)`` is taken from its ``p_vec[0]``.
    grid : sequence of (p1, p2)
        Grid points, or a 1-D sequence of values expanded to its square.
    lam : float
        Null value, which should be the true target (0 for the default designs).
    checkpoint : path, optional
        JSON-lines file of finished points; an existing file resumes the sweep.
    threads : int
        Worker processes; results are reduced by point index.
    """
    methods = _check_methods(design, methods)
    pts = np.asarray(grid, dtype=float)
    if pts.ndim == 1:
        pts = np.array([(a, b) for a in pts for b in pts])
    coords = [(float(a), float(b)) for a, b in pts]
    specs = [replace(design, p_vec=(design.p_vec[0], a, b)) for a, b in coords]
    if reps < 1:
        raise ConfigError("reps must be positive")
    sig = _signature("size", design, coords, methods, reps, alpha, target)
    tasks = [(s, float(lam), methods, i, i, reps, target, alpha) for i, s in enumerate(specs)]
    done = _run_points(tasks, sig, checkpoint, threads)
    rates = {m: np.array([done[i][m] / reps for i in range(len(coords))]) for m in methods}
    return SweepResult("size", ("p1", "p2"), coords, methods, rates, reps, design.seed,
                       meta={"p0": design.p_vec[0], "n": design.n, "lambda": float(lam), "alpha": alpha})


def power_curve(design, lambda_grid, reps=300, methods=("mlc", "wald"), target=None,
                alpha=0.05, checkpoint=None, threads=1):
    """Rejection rates of ``H0: target = lambda`` for each ``lambda`` in ``lambda_grid``.

    Every ``lambda`` reuses the same simulated samples (the point index is
    fixed at 0), so differences across ``lambda`` are not sampling noise.
    """
    methods = _check_methods(design, methods)
    lams = [float(v) for v in np.atleast_1d(lambda_grid)]
    if reps < 1:
        raise ConfigError("reps must be positive")
    coords = [(v,) for v in lams]
    sig = _signature("power", design, coords, methods, reps, alpha, target)
    tasks = [(design, v, methods, i, 0, reps, target, alpha) for i, v in enumerate(lams)]
    done = _run_points(tasks, sig, checkpoint, threads)
    rates = {m: np.array([done[i][m] / reps for i in range(len(lams))]) for m in methods}
    return SweepResult("power", ("lambda",), coords, methods, rates, reps, design.seed,
                       meta={"p_vec": list(design.p_vec), "n": design.n, "alpha": alpha})

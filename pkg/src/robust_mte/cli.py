"""Command-line interface: ``mte <subcommand> [flags]``.

Subcommands print JSON (``cells``, ``test``, ``ci``, ``pretest``) or CSV
(``bias``, ``simulate``) to stdout or to ``--out``.  Exit codes are 0 on
success, 2 for configuration errors, 3 for data errors and 4 for numerical
failures.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from . import __version__
from . import config as cfgmod
from .errors import ConfigError, MteError
from .results import _jsonable

SUBCOMMANDS = ("cells", "test", "ci", "pretest", "bias", "simulate")


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _flag(parser, name, type_=None, help_="", choices=None, dest=None, action=None):
    key = dest or name.lstrip("-").replace("-", "_")
    default = cfgmod.DEFAULTS["lambda_" if key == "lambda_" else key]
    text = f"{help_} (default: {default})"
    kw = {"dest": key, "default": None, "help": text}
    if action:
        kw["action"] = action
    else:
        kw["type"] = type_
        if choices:
            kw["choices"] = choices
        else:
            kw["metavar"] = key.rstrip("_").upper()
    parser.add_argument(name, **kw)


def _data_flags(p):
    g = p.add_argument_group("data")
    _flag(g, "--input", str, "CSV file with one row per unit")
    _flag(g, "--y-col", str, "outcome column")
    _flag(g, "--d-col", str, "treatment column (0/1)")
    _flag(g, "--z-col", str, "instrument column")
    _flag(g, "--w-col", str, "covariate column")
    _flag(g, "--z-levels", str, "comma-separated instrument order; first is the baseline")


def _model_flags(p):
    g = p.add_argument_group("model and target")
    _flag(g, "--order", int, "polynomial order of the MTE")
    _flag(g, "--bound", float, "parameter box is [-bound, bound] in every coordinate")
    _flag(g, "--target", str, "ate, mte, att, atu, late, additive_prte, proportional_prte, "
          "quota, additive_mprte, proportional_mprte or custom")
    _flag(g, "--k", int, "instrument index for the LATE comparison level")
    _flag(g, "--u", float, "evaluation point for the MTE target")
    _flag(g, "--epsilon", float, "policy shift for the PRTE targets")
    _flag(g, "--eps-lo", float, "lower quota bound")
    _flag(g, "--eps-hi", float, "upper quota bound")
    _flag(g, "--phi", float, "quota smoothing sharpness")
    _flag(g, "--c1", str, "comma-separated treated-arm weights for the custom target")


def _inference_flags(p, with_method=True):
    g = p.add_argument_group("inference")
    if with_method:
        _flag(g, "--method", str, "test to use", choices=("ar", "cwald", "mlc", "wald"))
    _flag(g, "--alpha", float, "test level")
    _flag(g, "--ar-k", int, "AR instrument pair index; None uses the last level")
    _flag(g, "--draws", int, "conditional Wald simulation draws")
    _flag(g, "--quantile-draws", int, "draws for the mixture chi-square critical value")
    _flag(g, "--a", float, "AR weight in the MLC statistic")
    _flag(g, "--kappa", float, "gradient perturbation scale")
    _flag(g, "--r", float, "split of the estimated-weight correction between arms")
    _flag(g, "--estimated-weights", str, "account for estimated weights", choices=("auto", "yes", "no"))
    _flag(g, "--n-starts", int, "optimizer starting points")
    _flag(g, "--maxfev", int, "objective evaluations per optimizer run")


def _run_flags(p):
    g = p.add_argument_group("run")
    g.add_argument("--config", default=None, help="flat key = value config file (default: None)")
    _flag(g, "--seed", int, "root random seed")
    _flag(g, "--threads", int, "worker processes for simulations")
    _flag(g, "--out", str, "output path; stdout when omitted")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mte", description="Weak-instrument-robust inference for marginal treatment effects.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("cells", help="dump cell statistics and covariance estimates")
    _data_flags(p)
    _run_flags(p)

    p = sub.add_parser("test", help="test H0: target = lambda")
    _data_flags(p)
    _model_flags(p)
    _inference_flags(p)
    _flag(p, "--lambda", float, "hypothesised target value", dest="lambda_")
    _run_flags(p)

    p = sub.add_parser("ci", help="confidence set by test inversion")
    _data_flags(p)
    _model_flags(p)
    _inference_flags(p)
    g = p.add_argument_group("confidence set")
    _flag(g, "--grid-lo", float, "lower end of the lambda grid (automatic when omitted)")
    _flag(g, "--grid-hi", float, "upper end of the lambda grid (automatic when omitted)")
    _flag(g, "--grid-points", int, "points on the lambda grid")
    _flag(g, "--by", str, "covariate role to condition on (use 'w')")
    _flag(g, "--aggregate", str, "aggregation rule across covariate cells", choices=("sidak",))
    _flag(g, "--alpha1", float, "level spent on the cell-mass box (alpha/5 when omitted)")
    _flag(g, "--known-mass", None, "treat the sample cell shares as known masses",
          action="store_true")
    _run_flags(p)

    p = sub.add_parser("pretest", help="identification pretest")
    _data_flags(p)
    _model_flags(p)
    _inference_flags(p, with_method=False)
    _flag(p, "--gamma", float, "size distortion allowed for the robust set")
    _flag(p, "--pretest-points", int, "points on the inversion grid")
    _run_flags(p)

    p = sub.add_parser("bias", help="ATE bias surface of the logit-selection example")
    _flag(p, "--grid", str, "surface axes", choices=("bxd",))
    _flag(p, "--resolution", int, "points per axis")
    _flag(p, "--range-lo", float, "lower end of both axes")
    _flag(p, "--range-hi", float, "upper end of both axes")
    _run_flags(p)

    p = sub.add_parser("simulate", help="Monte Carlo size surfaces and power curves")
    p.add_argument("kind", nargs="?", choices=("size", "power"), default=None,
                   help="sweep type (default: size)")
    _flag(p, "--design", str, "simulation design", choices=("quadratic", "linear"))
    _flag(p, "--n", int, "sample size (2000 quadratic, 500 linear when omitted)")
    _flag(p, "--reps", int, "replications per point (500 size, 300 power when omitted)")
    _flag(p, "--p-vec", str, "propensity scores for power curves")
    _flag(p, "--p-values", str, "comma-separated values of p(z1) and p(z2) for the size grid")
    _flag(p, "--lambdas", str, "comma-separated null values for power curves")
    _flag(p, "--methods", str, "comma-separated methods among ar, cwald, mlc, wald")
    _flag(p, "--alpha", float, "test level")
    _flag(p, "--checkpoint", str, "JSON-lines checkpoint file for resuming")
    _run_flags(p)
    return parser


def resolve_config(args):
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    file_values = cfgmod.load_config(args.config) if args.config else {}
    return cfgmod.merge(file_values, overrides)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _load(cfg, with_covariate=False):
    from .data import load_csv

    if cfg.input is None:
        raise ConfigError("no input file: pass --input or set input in the config")
    schema = {"y": cfg.y_col, "d": cfg.d_col, "z": cfg.z_col}
    if cfg.w_col is not None:
        schema["w"] = cfg.w_col
    elif with_covariate:
        raise ConfigError("--by needs a covariate column: pass --w-col")
    levels = cfgmod.parse_list(cfg.z_levels, str, "z_levels") if cfg.z_levels else None
    return load_csv(cfg.input, schema, instrument_levels=levels)


def _spec(cfg):
    from .basis import MteSpec

    return MteSpec.polynomial(cfg.order, cfg.bound)


def _target(cfg):
    from .weights import target_from_config

    params = {}
    for key in ("k", "u", "epsilon", "eps_lo", "eps_hi"):
        value = getattr(cfg, key)
        if value is not None:
            params[key] = value
    if cfg.target == "quota":
        params["phi"] = cfg.phi
    if cfg.c1 is not None:
        params["c1"] = cfgmod.parse_list(cfg.c1, float, "c1")
    return target_from_config(cfg.target, **params)


def _estimated(cfg):
    return {"auto": None, "yes": True, "no": False}[cfg.estimated_weights]


def _optimizer(cfg):
    from .mlc import OptSpec

    return OptSpec(n_starts=cfg.n_starts, maxfev=cfg.maxfev, seed=cfg.seed)


class _Problem:
    """Data-dependent pieces shared by ``test``, ``ci`` and ``pretest``."""

    def __init__(self, cfg, stats, alpha=None):
        from .weights import weight_vector

        self.cfg = cfg
        self.stats = stats
        self.alpha = cfg.alpha if alpha is None else alpha
        self.spec = _spec(cfg)
        self.target = _target(cfg)
        self.weight = weight_vector(self.target, self.spec, stats)
        self.estimated = _estimated(cfg)
        self._lin = None
        self._mlc = None

    @property
    def lin(self):
        from .linear import LinearMomentContext

        if self._lin is None:
            if self.spec.order != 1:
                raise ConfigError(f"method {self.cfg.method!r} needs --order 1")
            self._lin = LinearMomentContext.from_weight(self.stats, self.weight,
                                                        estimated_weights=self.estimated)
        return self._lin

    @property
    def mlc(self):
        from .mlc import MlcContext

        if self._mlc is None:
            self._mlc = MlcContext.build(self.spec, self.stats, a=self.cfg.a, kappa=self.cfg.kappa,
                                         alpha=self.alpha, seed=self.cfg.seed,
                                         quantile_draws=self.cfg.quantile_draws)
        return self._mlc

    def test(self, method, lam):
        from .linear import ar_test, cond_wald_test
        from .mlc import classical_wald, mlc_test

        cfg = self.cfg
        if method == "ar":
            k = self.lin.K if cfg.ar_k is None else cfg.ar_k
            return ar_test(self.lin, k, lam, self.alpha)
        if method == "cwald":
            return cond_wald_test(self.lin, lam, self.alpha, draws=cfg.draws, seed=cfg.seed)
        if method == "mlc":
            return mlc_test(self.mlc, lam, self.weight, self.estimated, r=cfg.r,
                            optimizer=_optimizer(cfg))
        if method == "wald":
            return classical_wald(self.mlc, lam, self.weight, self.estimated)
        raise ConfigError(f"unknown method {method!r}")

    def confidence_set(self, method):
        from .linear import GridSpec, efficient_estimate, invert_ci, invert_ci_auto
        from .mlc import slice_range, wald_interval
        from .results import ConfidenceSet

        cfg = self.cfg
        if method == "wald":
            lo, hi = wald_interval(self.mlc, self.weight, self.estimated)
            return ConfidenceSet(intervals=((float(lo), float(hi)),), level=1.0 - self.alpha, grid=())

        def test(lam):
            return self.test(method, lam)

        if cfg.grid_lo is not None or cfg.grid_hi is not None:
            if cfg.grid_lo is None or cfg.grid_hi is None:
                raise ConfigError("set both grid_lo and grid_hi, or neither")
            return invert_ci(test, GridSpec(cfg.grid_lo, cfg.grid_hi, cfg.grid_points))
        if method in ("ar", "cwald"):
            center, scale = efficient_estimate(self.lin)
            return invert_ci_auto(test, center, scale, n_points=cfg.grid_points)
        f_lo, f_hi = slice_range(np.asarray(self.weight.c), self.spec.theta_box)
        try:
            res = self.test("wald", 0.0)
            center, scale = res.meta["estimate"], res.meta["std_error"]
        except MteError:
            center, scale = 0.5 * (f_lo + f_hi), np.inf
        half = 10.0 * scale if np.isfinite(scale) and scale > 0 else np.inf
        lo, hi = max(center - half, f_lo), min(center + half, f_hi)
        if not lo < hi:
            lo, hi = f_lo, f_hi
        cs = invert_ci(test, GridSpec(lo, hi, cfg.grid_points))
        if (cs.touches_lower and lo > f_lo) or (cs.touches_upper and hi < f_hi):
            lo, hi = max(center - 3 * half, f_lo), min(center + 3 * half, f_hi)
            cs = invert_ci(test, GridSpec(lo, hi, cfg.grid_points))
        return cs


def _emit_json(cfg, command, result):
    payload = {"command": command, "version": __version__, "config": cfgmod.to_echo(cfg),
               "result": result}
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"
    _write(cfg.out, text)


def _emit_csv(cfg, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    _write(cfg.out, buf.getvalue())


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_cells(cfg):
    from .data import cell_stats, covariance_estimates

    stats = cell_stats(_load(cfg))
    _emit_json(cfg, "cells", {"cells": stats.to_dict(),
                              "covariances": covariance_estimates(stats).to_dict()})
    return 0


def cmd_test(cfg):
    from .data import cell_stats

    prob = _Problem(cfg, cell_stats(_load(cfg)))
    res = prob.test(cfg.method, cfg.lambda_)
    _emit_json(cfg, "test", {"method": cfg.method, **res.to_dict()})
    return 0


def _aggregate_ci(cfg):
    from .aggregate import (CellCI, aggregate_estimated_mass, aggregate_known_mass, cell_alpha,
                            default_alpha1, mass_confidence_box, sidak_cell_level)
    from .data import cell_stats, split_by_covariate

    if cfg.by != "w":
        raise ConfigError(f"--by must name the covariate role 'w', got {cfg.by!r}")
    data = _load(cfg, with_covariate=True)
    parts = split_by_covariate(data)
    n_cells = len(parts)
    alpha1 = 0.0 if cfg.known_mass else (default_alpha1(cfg.alpha) if cfg.alpha1 is None else cfg.alpha1)
    alpha2 = cfg.alpha - alpha1
    per_cell_alpha = cell_alpha(alpha2, n_cells)
    cells, details, counts = [], {}, []
    for label, part in parts.items():
        cs = _Problem(cfg, cell_stats(part), alpha=per_cell_alpha).confidence_set(cfg.method)
        details[label] = cs.to_dict()
        if cs.empty:
            raise ConfigError(f"confidence set for covariate cell {label!r} is empty; "
                              "the aggregate interval is undefined")
        cells.append(CellCI(label, cs.hull, sidak_cell_level(alpha2, n_cells)))
        counts.append(part.n)
    counts = np.asarray(counts, dtype=float)
    if cfg.known_mass:
        agg = aggregate_known_mass(cells, counts / counts.sum(), alpha=cfg.alpha)
        box = None
    else:
        box = mass_confidence_box(counts, alpha1)
        agg = aggregate_estimated_mass(cells, box, alpha2=alpha2, alpha=cfg.alpha)
    return {"method": cfg.method, **agg.to_dict(), "alpha1": alpha1, "alpha2": alpha2,
            "cell_alpha": per_cell_alpha, "cells": details,
            "mass_box": None if box is None else box.tolist()}


def cmd_ci(cfg):
    from .data import cell_stats

    if cfg.by is not None:
        result = _aggregate_ci(cfg)
    else:
        cs = _Problem(cfg, cell_stats(_load(cfg))).confidence_set(cfg.method)
        result = {"method": cfg.method, **cs.to_dict()}
    _emit_json(cfg, "ci", result)
    return 0


def cmd_pretest(cfg):
    from .data import cell_stats
    from .mlc import pretest_ics

    prob = _Problem(cfg, cell_stats(_load(cfg)))
    res = pretest_ics(prob.mlc, cfg.gamma, prob.weight, prob.estimated,
                      n_points=cfg.pretest_points,
                      optimizer=_optimizer(cfg))
    _emit_json(cfg, "pretest", res.to_dict())
    return 0


def cmd_bias(cfg):
    from .bias import bias_surface

    rows = bias_surface(cfg.resolution, cfg.range_lo, cfg.range_hi)
    _emit_csv(cfg, ["b", "delta_rho", "ate_estimand", "ate_bias"], rows)
    return 0


def cmd_simulate(cfg):
    from .montecarlo import DgpSpec, power_curve, size_surface

    methods = tuple(cfgmod.parse_list(cfg.methods, str, "methods"))
    if cfg.design == "quadratic":
        default_p, make = (0.5, 0.2, 0.8), DgpSpec.quadratic
    elif cfg.design == "linear":
        default_p, make = (0.2, 0.5, 0.8), DgpSpec.linear
    else:
        raise ConfigError(f"unknown design {cfg.design!r}")
    p_vec = tuple(cfgmod.parse_list(cfg.p_vec, float, "p_vec") or default_p)
    kw = {"seed": cfg.seed}
    if cfg.n is not None:
        kw["n"] = cfg.n
    design = make(p_vec, **kw)
    if cfg.kind == "size":
        values = cfgmod.parse_list(cfg.p_values, float, "p_values")
        if values is None:
            values = [round(v, 10) for v in np.linspace(0.05, 0.95, 21)]
        res = size_surface(design, values, reps=cfg.reps or 500, methods=methods,
                           alpha=cfg.alpha, checkpoint=cfg.checkpoint, threads=cfg.threads)
    elif cfg.kind == "power":
        lams = cfgmod.parse_list(cfg.lambdas, float, "lambdas")
        res = power_curve(design, lams, reps=cfg.reps or 300, methods=methods,
                          alpha=cfg.alpha, checkpoint=cfg.checkpoint, threads=cfg.threads)
    else:
        raise ConfigError(f"unknown simulation kind {cfg.kind!r}")
    rows = res.rows()
    header = [*res.axes, "method", "reject_rate", "reps", "mc_se"]
    _emit_csv(cfg, header, [[row[h] for h in header] for row in rows])
    return 0


COMMANDS = {"cells": cmd_cells, "test": cmd_test, "ci": cmd_ci, "pretest": cmd_pretest,
            "bias": cmd_bias, "simulate": cmd_simulate}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except MteError as exc:
        print(f"mte {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

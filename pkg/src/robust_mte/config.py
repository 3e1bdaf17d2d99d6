"""Run configuration: defaults, a flat ``key = value`` file format, and flag merging.

A config file holds one ``key = value`` pair per line; blank lines and lines
starting with ``#`` are ignored.  Keys are the :class:`RunConfig` field names
(dashes are accepted in place of underscores).  Unknown keys are errors.
Command-line flags override file values, which override the defaults.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .errors import ConfigError


@dataclass
class RunConfig:
    """Every setting a CLI run can use, with its default."""

    # data
    input: str | None = None
    y_col: str = "y"
    d_col: str = "d"
    z_col: str = "z"
    w_col: str | None = None
    z_levels: str | None = None
    # model
    order: int = 1
    bound: float = 10.0
    # target
    target: str = "ate"
    k: int | None = None
    u: float | None = None
    epsilon: float | None = None
    eps_lo: float | None = None
    eps_hi: float | None = None
    phi: float = 30.0
    c1: str | None = None
    # inference
    method: str = "mlc"
    lambda_: float = 0.0
    alpha: float = 0.05
    ar_k: int | None = None
    draws: int = 2000
    quantile_draws: int = 200_000
    a: float = 0.05
    kappa: float = 1e-6
    r: float = 0.5
    estimated_weights: str = "auto"
    n_starts: int = 8
    maxfev: int = 3000
    # confidence sets
    grid_lo: float | None = None
    grid_hi: float | None = None
    grid_points: int = 201
    by: str | None = None
    aggregate: str = "sidak"
    alpha1: float | None = None
    known_mass: bool = False
    # pretest
    gamma: float = 0.10
    pretest_points: int = 61
    # bias surface
    grid: str = "bxd"
    resolution: int = 21
    range_lo: float = -5.0
    range_hi: float = 5.0
    # simulation
    kind: str = "size"
    design: str = "quadratic"
    n: int | None = None
    reps: int | None = None
    p_vec: str | None = None
    p_values: str | None = None
    lambdas: str = "-4,-2,0,2,4"
    methods: str = "mlc,wald"
    checkpoint: str | None = None
    # run
    seed: int = 0
    threads: int = 1
    out: str | None = None


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
DEFAULTS = asdict(RunConfig())


def _key(name):
    name = name.strip().replace("-", "_")
    return "lambda_" if name == "lambda" else name


def _convert(key, text):
    kind = FIELD_TYPES[key]
    text = text.strip()
    if text.lower() in ("none", "") and "None" in kind:
        return None
    try:
        if kind.startswith("bool"):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {text!r} as {kind.split()[0]}") from None
    return text


def parse_config_text(text, source="<config>"):
    """Parse flat ``key = value`` text into a dict of typed values."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        name, value = line.split("=", 1)
        key = _key(name)
        if key not in FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown config key {name.strip()!r}")
        out[key] = _convert(key, value)
    return out


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def merge(file_values=None, overrides=None):
    """Defaults, then file values, then non-``None`` overrides."""
    values = dict(DEFAULTS)
    for src in (file_values or {}, {k: v for k, v in (overrides or {}).items() if v is not None}):
        for key, value in src.items():
            if key not in FIELD_TYPES:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = value
    cfg = RunConfig(**values)
    validate(cfg)
    return cfg


def validate(cfg):
    if not 0.0 < cfg.alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    if cfg.order < 1:
        raise ConfigError("order must be at least 1")
    if not cfg.bound > 0:
        raise ConfigError("bound must be positive")
    if cfg.threads < 1:
        raise ConfigError("threads must be at least 1")
    if cfg.estimated_weights not in ("auto", "yes", "no"):
        raise ConfigError("estimated_weights must be auto, yes or no")
    if cfg.alpha1 is not None and not 0.0 < cfg.alpha1 < cfg.alpha:
        raise ConfigError("alpha1 must lie in (0, alpha)")
    if not 0.0 <= cfg.r <= 1.0:
        raise ConfigError("r must lie in [0, 1]")


def parse_list(text, cast=float, what="list"):
    if text is None:
        return None
    try:
        return [cast(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse {what} {text!r}") from None


def to_echo(cfg):
    """Config as a JSON-ready dict with ``lambda`` under its plain name."""
    out = asdict(cfg)
    out["lambda"] = out.pop("lambda_")
    return out

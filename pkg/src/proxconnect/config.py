"""Flat ``key = value`` experiment configuration.

One setting per line, dotted keys, ``#`` starts a comment. Lists are
comma-separated. Every key has a default, and unknown keys are rejected with
the offending key path so typos never pass silently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import quantizers as Q
from .problems import MLP, Logistic, Quadratic, LeastSquares, SyntheticDataset, gen_blobs, load_csv
from .schedules import StepSchedule

__all__ = ["ConfigError", "DEFAULTS", "Config", "parse_text", "load", "build_problem",
           "build_quantizer", "build_schedule", "mu_rule"]


class ConfigError(ValueError):
    pass


# (default, type); list types parse comma-separated values
DEFAULTS = {
    "problem.kind": ("mlp", str),
    "problem.dim": (1, int),
    "problem.h": ([1.0], "floats"),
    "problem.b": ([0.0], "floats"),
    "problem.init": ([], "floats"),
    "problem.data": ("blobs", str),
    "problem.csv.path": ("", str),
    "problem.csv.header": (False, bool),
    "problem.n_classes": (0, int),
    "problem.blobs.seed": (0, int),
    "problem.blobs.n_samples": (200, int),
    "problem.blobs.n_features": (4, int),
    "problem.blobs.n_classes": (3, int),
    "problem.blobs.separation": (3.0, float),
    "problem.hidden": ([16], "ints"),
    "problem.activation": ("tanh", str),
    "problem.l2": (0.0, float),
    "optimizer.kind": ("PC", str),
    "optimizer.batch_size": (0, int),
    "quantizer.kind": ("piecewise_linear", str),
    "quantizer.levels": ([-1.0, 1.0], "floats"),
    "quantizer.rho0": (0.01, float),
    "quantizer.varrho": (None, float),
    "quantizer.clip": (True, bool),
    "quantizer.midpoint": ("upper", str),
    "quantizer.mu": (1.0, float),
    "quantizer.eps": (0.5, float),
    "quantizer.sigma": (1.0, float),
    "quantizer.groups": (["all"], "strs"),
    "schedule.kind": ("constant_eta", str),
    "schedule.eta0": (0.1, float),
    "schedule.p": (0.0, float),
    "schedule.values": ([], "floats"),
    "schedule.B": (100.0, float),
    "schedule.sharpness": ("pi", str),
    "schedule.mu_rule": ("pi", str),
    "schedule.mu_c": (1.0, float),
    "run.steps": (100, int),
    "run.seed": (0, int),
    "run.hard_quantize_at": (None, int),
    "run.divergence_bound": (1e6, float),
    "run.checkpoint_every": (0, int),
    "run.out": ("out", str),
    "sweep.kinds": (["PC"], "strs"),
    "sweep.rho0": ([0.01], "floats"),
    "sweep.seeds": ([0, 1, 2], "ints"),
}

QUANTIZER_KINDS = ("identity", "projector", "piecewise_linear", "binary_relax", "example43", "shrink")


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_float(text):
    low = text.strip().lower()
    if low in ("inf", "+inf", "infinity"):
        return math.inf
    return float(text)


def _parse(key, text):
    default, typ = DEFAULTS[key]
    text = text.strip()
    try:
        if typ in ("floats", "ints", "strs"):
            items = [t.strip() for t in text.split(",") if t.strip()]
            conv = {"floats": parse_float, "ints": int, "strs": str}[typ]
            return [conv(t) for t in items]
        if text == "" and default is None:
            return None
        if typ is bool:
            return _parse_bool(text)
        if typ is float:
            return parse_float(text)
        return typ(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} ({exc})") from None


@dataclass
class Config:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def set(self, key: str, text: str) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _parse(key, text)

    def copy(self) -> "Config":
        return Config({k: (list(v) if isinstance(v, list) else v) for k, v in self.values.items()})

    def dumps(self) -> str:
        lines = []
        for k in DEFAULTS:
            v = self.values[k]
            if isinstance(v, list):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif v is None:
                v = ""
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def default() -> Config:
    return Config({k: (list(v) if isinstance(v, list) else v) for k, (v, _) in DEFAULTS.items()})


def parse_text(text: str, base: Config | None = None, source: str = "<config>") -> Config:
    cfg = base.copy() if base is not None else default()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            cfg.set(key, val)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return cfg


def load(path=None, overrides=()) -> Config:
    """Read a config file (or defaults) and apply ``key=value`` overrides."""
    cfg = default()
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        cfg = parse_text(text, cfg, str(path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, val = item.split("=", 1)
        cfg.set(key.strip(), val)
    return cfg


# ---------------------------------------------------------------------------
# Builders


def _dataset(cfg: Config):
    src = cfg["problem.data"]
    if src == "blobs":
        spec = SyntheticDataset(seed=cfg["problem.blobs.seed"], n_samples=cfg["problem.blobs.n_samples"],
                                n_features=cfg["problem.blobs.n_features"],
                                n_classes=cfg["problem.blobs.n_classes"],
                                class_separation=cfg["problem.blobs.separation"])
        return gen_blobs(spec)
    if src == "csv":
        if not cfg["problem.csv.path"]:
            raise ConfigError("problem.csv.path: required when problem.data = csv")
        n = cfg["problem.n_classes"] or None
        return load_csv(cfg["problem.csv.path"], n_classes=n, header=cfg["problem.csv.header"])
    raise ConfigError(f"problem.data: unknown source {src!r} (blobs, csv)")


def _broadcast(key, vals, d):
    if len(vals) == 1:
        return np.full(d, vals[0])
    if len(vals) != d:
        raise ConfigError(f"{key}: expected 1 or {d} values, got {len(vals)}")
    return np.asarray(vals, dtype=float)


def build_problem(cfg: Config):
    kind = cfg["problem.kind"]
    try:
        if kind == "quadratic":
            d = cfg["problem.dim"]
            if d <= 0:
                raise ConfigError("problem.dim: must be positive")
            H = np.diag(_broadcast("problem.h", cfg["problem.h"], d))
            b = _broadcast("problem.b", cfg["problem.b"], d)
            w0 = _broadcast("problem.init", cfg["problem.init"], d) if cfg["problem.init"] else None
            return Quadratic(H, b, w0)
        data = _dataset(cfg)
        if kind == "logistic":
            return Logistic(data, l2=cfg["problem.l2"])
        if kind == "mlp":
            return MLP(data, hidden=tuple(cfg["problem.hidden"]), activation=cfg["problem.activation"])
        if kind == "least_squares":
            return LeastSquares(data.X, data.y.astype(float))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"problem: {exc}") from None
    raise ConfigError(f"problem.kind: unknown kind {kind!r} (quadratic, least_squares, logistic, mlp)")


def _base_quantizer(cfg: Config):
    kind = cfg["quantizer.kind"]
    try:
        if kind == "identity":
            return Q.Identity()
        if kind == "shrink":
            return Q.Shrink(cfg["quantizer.sigma"])
        if kind == "example43":
            return Q.Example43(eps=cfg["quantizer.eps"], mu=cfg["quantizer.mu"])
        grid = Q.make_grid(cfg["quantizer.levels"])
        if kind == "projector":
            return Q.Projector(grid, cfg["quantizer.midpoint"])
        if kind == "binary_relax":
            return Q.BinaryRelax(grid, cfg["quantizer.mu"])
        if kind == "piecewise_linear":
            rho = cfg["quantizer.rho0"]
            varrho = rho if cfg["quantizer.varrho"] is None else cfg["quantizer.varrho"]
            plq = Q.PiecewiseLinearQuantizer(grid, rho, varrho, cfg["quantizer.clip"], cfg["quantizer.midpoint"])
            return Q.PiecewiseLinear(plq)
    except ValueError as exc:
        raise ConfigError(f"quantizer: {exc}") from None
    raise ConfigError(f"quantizer.kind: unknown kind {kind!r} ({', '.join(QUANTIZER_KINDS)})")


def build_quantizer(cfg: Config, group_names):
    """The configured quantizer on ``quantizer.groups``; other groups stay full precision."""
    base = _base_quantizer(cfg)
    groups = cfg["quantizer.groups"]
    names = list(group_names)
    if groups == ["all"]:
        return base
    unknown = [g for g in groups if g not in names]
    if unknown:
        raise ConfigError(f"quantizer.groups: unknown groups {unknown}; model has {names}")
    return Q.PerGroup({k: (base if k in groups else Q.Identity()) for k in names})


def build_schedule(cfg: Config) -> StepSchedule:
    try:
        return StepSchedule(kind=cfg["schedule.kind"], eta0=cfg["schedule.eta0"], p=cfg["schedule.p"],
                            values=tuple(cfg["schedule.values"]), rho0=cfg["quantizer.rho0"],
                            B=cfg["schedule.B"])
    except ValueError as exc:
        raise ConfigError(f"schedule: {exc}") from None


def mu_rule(cfg: Config):
    """Smoothing rule for ``mu_{t+1}``: ``pi`` (the default coupling),
    ``sqrt_lambda`` (``c sqrt(lambda_t)``) or ``lambda`` (``c lambda_t``)."""
    name, c = cfg["schedule.mu_rule"], cfg["schedule.mu_c"]
    if name == "pi":
        return None
    if name == "sqrt_lambda":
        return _MuRule(0.0, c)
    if name == "lambda":
        return _MuRule(1.0, c)
    raise ConfigError(f"schedule.mu_rule: unknown rule {name!r} (pi, sqrt_lambda, lambda)")


@dataclass(frozen=True)
class _MuRule:
    sigma0: float
    c: float

    def __call__(self, state):
        from .schedules import mu_rate_for

        # the initial state has lambda_0 = 0; start from mu_1 = c
        if state.t == 0:
            return self.c
        return mu_rate_for(self.sigma0, state, self.c)

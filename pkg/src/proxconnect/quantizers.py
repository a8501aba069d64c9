"""Quantization grids and proximal quantizers.

Every quantizer here is a univariate, monotone map applied coordinatewise
(or per weight group). The main construction is the piecewise-linear
quantizer with a horizontal shift ``rho`` (flat plateaus around the levels)
and a vertical shift ``varrho`` (jump size at the midpoints), which contains
the identity, the projector, BinaryRelax and the ProxQuant soft quantizer as
special cases.

All maps accept a ``sharpness`` argument. Quantizers built from a proximal
parameter interpret it as a multiplier on that parameter, so that letting the
sharpness grow drives the map towards the projector onto its grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "QuantizationGrid",
    "make_grid",
    "project",
    "PiecewiseLinearQuantizer",
    "apply_plq",
    "example43_map",
    "Identity",
    "Projector",
    "PiecewiseLinear",
    "BinaryRelax",
    "Example43",
    "Shrink",
    "Average",
    "PerGroup",
    "RandomSelect",
    "apply",
    "hard_quantize",
    "AxiomReport",
    "check_prox_axioms",
]

UPPER = "upper"
LOWER = "lower"


def _check_finite(w):
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ValueError("quantizer input contains non-finite values")
    return w


@dataclass(frozen=True)
class QuantizationGrid:
    """Strictly increasing set of quantization levels."""

    levels: tuple[float, ...]

    def __post_init__(self):
        lv = self.levels
        if len(lv) < 2:
            raise ValueError("a grid needs at least two levels")
        if not all(math.isfinite(v) for v in lv):
            raise ValueError(f"non-finite level in {lv}")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError(f"levels must be strictly increasing and unique: {lv}")

    @property
    def midpoints(self) -> tuple[float, ...]:
        lv = self.levels
        return tuple((a + b) / 2 for a, b in zip(lv, lv[1:]))

    @property
    def q(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=float)

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.midpoints, dtype=float)

    def __len__(self):
        return len(self.levels)


def make_grid(levels: Sequence[float]) -> QuantizationGrid:
    """Build a grid from an unordered list of levels.

    Duplicates and non-finite values are rejected rather than silently merged.
    """
    vals = [float(v) for v in levels]
    if len(vals) < 2:
        raise ValueError("a grid needs at least two levels")
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"non-finite level in {vals}")
    if len(set(vals)) != len(vals):
        raise ValueError(f"duplicate levels in {vals}")
    return QuantizationGrid(tuple(sorted(vals)))


def project(grid: QuantizationGrid, w, tie: str = UPPER):
    """Nearest grid level; exact midpoints go to the upper level by default."""
    arr = _check_finite(w)
    side = "right" if tie == UPPER else "left"
    idx = np.searchsorted(grid.p, arr, side=side)
    out = grid.q[idx]
    return out if np.ndim(w) else float(out)


@dataclass(frozen=True)
class PiecewiseLinearQuantizer:
    """Piecewise-linear proximal quantizer on a grid.

    Parameters
    ----------
    grid : QuantizationGrid
    rho : float
        Horizontal shift. Inputs within ``rho`` of a level (capped at the
        neighbouring midpoints) are mapped exactly onto that level.
    varrho : float
        Vertical shift. At a midpoint the map jumps from ``p - varrho`` to
        ``p + varrho`` (capped at the neighbouring levels).
    clip : bool
        Clamp inputs outside ``[q_1, q_b]`` to the extreme levels. When off,
        the outer plateau extends by ``rho`` and is followed by a linear piece
        with the slope of the adjacent inner piece.
    midpoint_policy : {"upper", "lower"}
        Value taken exactly at a midpoint: the right or left limit.
    """

    grid: QuantizationGrid
    rho: float = 0.0
    varrho: float = 0.0
    clip: bool = True
    midpoint_policy: str = UPPER

    def __post_init__(self):
        if not (self.rho >= 0 and self.varrho >= 0):
            raise ValueError("rho and varrho must be nonnegative")
        if self.midpoint_policy not in (UPPER, LOWER):
            raise ValueError(f"unknown midpoint policy {self.midpoint_policy!r}")

    def shifted_points(self):
        """Return ``(q_minus, q_plus, p_minus, p_plus)`` as arrays.

        ``q_minus``/``q_plus`` have one entry per level, ``p_minus``/``p_plus``
        one per midpoint.
        """
        q, p = self.grid.q, self.grid.p
        q_minus = q.copy()
        q_plus = q.copy()
        q_minus[1:] = np.maximum(p, q[1:] - self.rho)
        q_plus[:-1] = np.minimum(p, q[:-1] + self.rho)
        p_minus = np.maximum(q[:-1], p - self.varrho)
        p_plus = np.minimum(q[1:], p + self.varrho)
        return q_minus, q_plus, p_minus, p_plus

    def _slopes(self, q_minus, q_plus, p_minus, p_plus):
        q, p = self.grid.q, self.grid.p
        den_lo = p - q_plus[:-1]
        den_hi = q_minus[1:] - p
        lo = np.divide(p_minus - q[:-1], den_lo, out=np.zeros_like(p), where=den_lo > 0)
        hi = np.divide(q[1:] - p_plus, den_hi, out=np.zeros_like(p), where=den_hi > 0)
        return lo, hi

    def _outer_slope(self, half):
        r, v = min(self.rho, half), min(self.varrho, half)
        if r >= half:
            return 1.0
        return (half - v) / (half - r)

    def scaled(self, s: float) -> "PiecewiseLinearQuantizer":
        if math.isinf(s):
            big = math.inf
            return replace(self, rho=big if self.rho > 0 else 0.0,
                           varrho=big if self.varrho > 0 else 0.0)
        return replace(self, rho=self.rho * s, varrho=self.varrho * s)

    def __call__(self, w):
        arr = _check_finite(w)
        q, p = self.grid.q, self.grid.p
        if self.rho == 0 and self.varrho == 0:
            # every piece has slope 1; skip the arithmetic so the map is exact
            out = np.clip(arr, q[0], q[-1]) if self.clip else np.array(arr, dtype=float)
            return out if np.ndim(w) else float(out)
        q_minus, q_plus, p_minus, p_plus = self.shifted_points()
        lo, hi = self._slopes(q_minus, q_plus, p_minus, p_plus)

        k = np.clip(np.searchsorted(q, arr, side="right") - 1, 0, len(q) - 2)
        x = np.clip(arr, q[0], q[-1])
        qk, qk1, pk = q[k], q[k + 1], p[k]
        out = np.where(x <= q_plus[k], qk, 0.0)
        rising = (x > q_plus[k]) & (x < pk)
        out = np.where(rising, qk + (x - q_plus[k]) * lo[k], out)
        tie = p_plus[k] if self.midpoint_policy == UPPER else p_minus[k]
        out = np.where(x == pk, tie, out)
        falling = (x > pk) & (x < q_minus[k + 1])
        out = np.where(falling, p_plus[k] + (x - pk) * hi[k], out)
        out = np.where(x >= q_minus[k + 1], qk1, out)

        if not self.clip:
            h_lo, h_hi = (q[1] - q[0]) / 2, (q[-1] - q[-2]) / 2
            below = arr < q[0] - self.rho
            above = arr > q[-1] + self.rho
            out = np.where(below, q[0] + (arr - q[0] + self.rho) * self._outer_slope(h_lo), out)
            out = np.where(above, q[-1] + (arr - q[-1] - self.rho) * self._outer_slope(h_hi), out)
        return out if np.ndim(w) else float(out)


def apply_plq(q: PiecewiseLinearQuantizer, w: float) -> float:
    return float(q(float(w)))


def example43_map(eps: float, mu: float, w):
    """``sign(w) (eps |w| + 1/mu) / (eps + 1/mu)`` with ``|w|`` clipped at 1.

    ``sign(0)`` is taken as +1. The proximal parameter is ``1/mu``, so the
    map tends to ``sign`` as ``mu -> 0+`` and to the clipped identity as
    ``mu -> inf``.
    """
    if eps <= 0 or not mu > 0:
        raise ValueError("eps and mu must be positive")
    arr = np.clip(_check_finite(w), -1.0, 1.0)
    sgn = np.where(arr >= 0, 1.0, -1.0)
    inv = 1.0 / mu
    if math.isinf(inv):
        out = sgn
    else:
        out = sgn * (eps * np.abs(arr) + inv) / (eps + inv)
    return out if np.ndim(w) else float(out)


# ---------------------------------------------------------------------------
# Quantizer specifications
#
# Each spec is a frozen value with ``__call__(w, sharpness=1.0, draw=0)``
# acting elementwise on an array. ``grid`` is the level set used for hard
# quantization (None for maps that never quantize).


@dataclass(frozen=True)
class Identity:
    grid = None

    def __call__(self, w, sharpness=1.0, draw=0):
        return np.array(_check_finite(w), dtype=float, copy=True)


@dataclass(frozen=True)
class Projector:
    grid: QuantizationGrid
    tie: str = UPPER

    def __call__(self, w, sharpness=1.0, draw=0):
        return project(self.grid, np.asarray(w, dtype=float), self.tie)


@dataclass(frozen=True)
class PiecewiseLinear:
    """Piecewise-linear quantizer whose shifts are multiplied by the sharpness."""

    plq: PiecewiseLinearQuantizer

    @property
    def grid(self):
        return self.plq.grid

    def __call__(self, w, sharpness=1.0, draw=0):
        return self.plq.scaled(sharpness)(np.asarray(w, dtype=float))


@dataclass(frozen=True)
class BinaryRelax:
    """``(id + m P_Q) / (1 + m)`` with ``m = mu * sharpness``."""

    grid: QuantizationGrid
    mu: float = 1.0

    def __call__(self, w, sharpness=1.0, draw=0):
        arr = _check_finite(w)
        pq = project(self.grid, arr)
        m = self.mu * sharpness
        if math.isinf(m):
            return pq
        return (arr + m * pq) / (1.0 + m)


@dataclass(frozen=True)
class Example43:
    """The sign-like soft quantizer; its proximal parameter is ``sharpness / mu``."""

    eps: float = 0.5
    mu: float = 1.0

    @property
    def grid(self):
        return QuantizationGrid((-1.0, 1.0))

    def __call__(self, w, sharpness=1.0, draw=0):
        if sharpness <= 0:
            raise ValueError("sharpness must be positive for Example43")
        if math.isinf(sharpness):
            arr = np.clip(_check_finite(w), -1.0, 1.0)
            return np.where(arr >= 0, 1.0, -1.0)
        return example43_map(self.eps, self.mu / sharpness, np.asarray(w, dtype=float))


@dataclass(frozen=True)
class Shrink:
    """Proximal map of ``(sigma/2) w**2``: ``w / (1 + sigma * sharpness)``."""

    sigma: float = 1.0
    grid = None

    def __call__(self, w, sharpness=1.0, draw=0):
        arr = _check_finite(w)
        if math.isinf(sharpness):
            return np.zeros_like(arr) if self.sigma > 0 else arr.copy()
        return arr / (1.0 + self.sigma * sharpness)


def _common_grid(specs):
    grids = {s.grid for s in specs if s.grid is not None}
    if len(grids) > 1:
        raise ValueError("combined quantizers use different grids; no single hard projection")
    return grids.pop() if grids else None


@dataclass(frozen=True)
class Average:
    """Convex combination ``sum_i alpha_i P_i``."""

    terms: tuple[tuple[float, object], ...]

    def __post_init__(self):
        alphas = [a for a, _ in self.terms]
        if not self.terms or any(a < 0 for a in alphas):
            raise ValueError("average weights must be nonnegative")
        if abs(math.fsum(alphas) - 1.0) > 1e-12:
            raise ValueError(f"average weights must sum to 1, got {math.fsum(alphas)}")

    @property
    def grid(self):
        return _common_grid([s for _, s in self.terms])

    def __call__(self, w, sharpness=1.0, draw=0):
        arr = np.asarray(w, dtype=float)
        out = np.zeros_like(arr)
        for alpha, spec in self.terms:
            out = out + alpha * spec(arr, sharpness, draw)
        return out


@dataclass(frozen=True)
class RandomSelect:
    """Pick one of ``choices`` per call from a counter-keyed stream.

    The draw counter is passed in by the caller, so the choice is a pure
    function of ``(seed, draw)``.
    """

    choices: tuple
    seed: int = 0

    def index(self, draw: int) -> int:
        rng = np.random.default_rng([self.seed, int(draw)])
        return int(rng.integers(len(self.choices)))

    @property
    def grid(self):
        return _common_grid(self.choices)

    def __call__(self, w, sharpness=1.0, draw=0):
        return self.choices[self.index(draw)](w, sharpness, draw)


@dataclass(frozen=True)
class PerGroup:
    """Product map: one spec per named weight group."""

    specs: Mapping[str, object] = field(default_factory=dict)

    def __hash__(self):
        return hash(tuple(sorted(self.specs)))


def apply(spec, weights: Mapping[str, np.ndarray], sharpness: float = 1.0, draw: int = 0):
    """Apply ``spec`` to a dict of weight groups, returning a new dict."""
    for name, arr in weights.items():
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"group {name!r} contains non-finite weights")
    if isinstance(spec, PerGroup):
        if set(spec.specs) != set(weights):
            raise ValueError(
                f"group mismatch: spec has {sorted(spec.specs)}, weights have {sorted(weights)}")
        return {k: spec.specs[k](v, sharpness, draw) for k, v in weights.items()}
    return {k: spec(v, sharpness, draw) for k, v in weights.items()}


def _hard_one(spec, arr):
    grid = spec.grid
    return np.array(arr, dtype=float, copy=True) if grid is None else project(grid, arr)


def hard_quantize(spec, weights: Mapping[str, np.ndarray]):
    """Project every quantized group onto its grid; identity groups pass through."""
    if isinstance(spec, PerGroup):
        return {k: _hard_one(spec.specs[k], v) for k, v in weights.items()}
    return {k: _hard_one(spec, v) for k, v in weights.items()}


# ---------------------------------------------------------------------------
# Proximal-map axioms on the real line: monotone with a closed graph.


@dataclass
class AxiomReport:
    n_probes: int
    monotonicity_violations: int
    max_abs_value: float
    bounded: bool
    jumps: int
    closed_graph_violations: int
    fixed_point_violations: int = 0

    @property
    def ok(self) -> bool:
        return (self.monotonicity_violations == 0 and self.bounded
                and self.closed_graph_violations == 0 and self.fixed_point_violations == 0)


def check_prox_axioms(spec, probes, sharpness: float = 1.0, jump_slope: float = 50.0,
                      tol: float = 1e-12) -> AxiomReport:
    """Probe a univariate quantizer for the proximal-map characterization.

    Monotonicity is checked on sorted consecutive probes, which is equivalent
    to checking every pair. Jumps are located by bisection between probes
    whose difference quotient exceeds ``jump_slope``; the value at the jump
    must lie between the one-sided limits. Grid levels, when the spec has a
    grid, must be fixed points.
    """
    fn = spec if callable(spec) else None
    if fn is None:
        raise TypeError("spec must be callable")

    def f(x):
        return np.asarray(fn(np.asarray(x, dtype=float), sharpness), dtype=float)

    x = np.sort(np.asarray(probes, dtype=float))
    y = f(x)
    finite = bool(np.all(np.isfinite(y)))
    dy = np.diff(y)
    mono = int(np.sum(dy < -tol))

    dx = np.diff(x)
    jump_idx = np.nonzero((dx > 0) & (dy > jump_slope * dx))[0]
    closed_bad = 0
    for i in jump_idx:
        lo, hi = x[i], x[i + 1]
        ylo, yhi = y[i], y[i + 1]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            ym = float(f(mid))
            if ym - ylo > yhi - ym:
                hi, yhi = mid, ym
            else:
                lo, ylo = mid, ym
        # the jump sits in [lo, hi]; its value at either endpoint must lie
        # between the one-sided limits
        span = max(1e-12, 1e-9 * max(1.0, abs(lo)))
        left = float(f(lo - span))
        right = float(f(hi + span))
        for v in (ylo, yhi):
            if not (left - 1e-9 <= v <= right + 1e-9):
                closed_bad += 1

    fixed_bad = 0
    grid = getattr(spec, "grid", None)
    if isinstance(grid, QuantizationGrid) and not isinstance(spec, (Shrink, Identity)):
        lv = grid.q
        fixed_bad = int(np.sum(np.abs(f(lv) - lv) > tol))

    return AxiomReport(
        n_probes=len(x),
        monotonicity_violations=mono,
        max_abs_value=float(np.max(np.abs(y))) if finite else math.inf,
        bounded=finite,
        jumps=len(jump_idx),
        closed_graph_violations=closed_bad,
        fixed_point_violations=fixed_bad,
    )

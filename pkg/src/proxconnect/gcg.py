"""Generalized conditional gradient on the dual, Moreau smoothing, and the
GCG / dual averaging / ProxConnect correspondence.

Regularizers are described by closed-form separable descriptors. Each one
knows its primal ``r``, its convex envelope ``r**``, its conjugate ``r*`` and
the proximal maps of ``r**`` and ``r*``. Losses are convex
:class:`~proxconnect.problems.Problem` instances with a single weight group
``"w"``, so ``l** = l`` and ``-grad l`` is the linearization direction.

Proximal maps follow ``prox(x, gamma) = argmin_u gamma f(u) + |u - x|^2 / 2``.
The quantizer ``P^{1/mu}_{r**}`` is therefore ``prox_bicon(x, 1/mu)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import optimizers
from .problems import Problem, Quadratic
from .quantizers import QuantizationGrid
from .schedules import ScheduleState, StepSchedule, advance, gcg_lambdas

__all__ = [
    "SquaredNorm",
    "ScaledSqDist",
    "BoxedSquaredNorm",
    "Smoothed",
    "DescriptorQuantizer",
    "DualIterate",
    "GCGRun",
    "gcg_step",
    "run_gcg",
    "moreau_value",
    "moreau_gradient",
    "moreau_gradient_envelope",
    "da_equivalence_check",
    "BoundPair",
    "thm41_bound_eval",
    "cor42_eval",
]


def _fsum(a) -> float:
    return math.fsum(np.ravel(a).tolist())


# ---------------------------------------------------------------------------
# Regularizer descriptors


@dataclass(frozen=True)
class SquaredNorm:
    """``r(w) = (sigma/2) |w|^2``; convex, with ``(1/sigma)``-smooth conjugate."""

    sigma: float = 1.0
    convex = True

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def L(self):
        return 1.0 / self.sigma

    def r(self, w):
        return 0.5 * self.sigma * _fsum(np.square(w))

    bicon = r

    def conj(self, v):
        return _fsum(np.square(v)) / (2 * self.sigma)

    def grad_conj(self, v):
        return np.asarray(v, dtype=float) / self.sigma

    def prox_bicon(self, x, gamma):
        return np.asarray(x, dtype=float) / (1.0 + gamma * self.sigma)

    def prox_conj(self, v, gamma):
        return self.sigma * np.asarray(v, dtype=float) / (self.sigma + gamma)


@dataclass(frozen=True)
class ScaledSqDist:
    """``r(w) = (kappa/2) dist(w, Q)^2``, the BinaryRelax regularizer.

    ``r`` is nonconvex; its envelope is ``(kappa/2) dist(w, [q_1, q_b])^2``.
    The conjugate ``v^2/(2 kappa) + max(q_1 v, q_b v)`` has a kink at 0, so
    conditional-gradient runs need :class:`Smoothed`.
    """

    grid: QuantizationGrid
    kappa: float = 1.0
    convex = False
    L = None

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")

    def _lo_hi(self):
        return self.grid.levels[0], self.grid.levels[-1]

    def r(self, w):
        from .quantizers import project

        w = np.asarray(w, dtype=float)
        return 0.5 * self.kappa * _fsum(np.square(w - project(self.grid, w)))

    def bicon(self, w):
        lo, hi = self._lo_hi()
        w = np.asarray(w, dtype=float)
        return 0.5 * self.kappa * _fsum(np.square(w - np.clip(w, lo, hi)))

    def conj(self, v):
        lo, hi = self._lo_hi()
        v = np.asarray(v, dtype=float)
        return _fsum(np.square(v) / (2 * self.kappa) + np.maximum(lo * v, hi * v))

    def grad_conj(self, v):
        # a subgradient; the kink at 0 takes the midpoint of [q_1, q_b]
        lo, hi = self._lo_hi()
        v = np.asarray(v, dtype=float)
        return v / self.kappa + np.where(v > 0, hi, np.where(v < 0, lo, 0.5 * (lo + hi)))

    def prox_bicon(self, x, gamma):
        lo, hi = self._lo_hi()
        x = np.asarray(x, dtype=float)
        gk = gamma * self.kappa
        out = np.where(x > hi, (x + gk * hi) / (1 + gk), x)
        return np.where(x < lo, (x + gk * lo) / (1 + gk), out)

    def prox_conj(self, v, gamma):
        lo, hi = self._lo_hi()
        v = np.asarray(v, dtype=float)
        d = 1.0 + gamma / self.kappa
        up = (v - gamma * hi) / d
        down = (v - gamma * lo) / d
        return np.where(up > 0, up, np.where(down < 0, down, 0.0))


@dataclass(frozen=True)
class BoxedSquaredNorm:
    """``r(w) = (sigma/2) |w|^2`` restricted to the box ``[lo, hi]``."""

    sigma: float = 1.0
    lo: float = -1.0
    hi: float = 1.0
    convex = True

    def __post_init__(self):
        if not self.sigma > 0 or not self.lo < self.hi:
            raise ValueError("need sigma > 0 and lo < hi")

    @property
    def L(self):
        return 1.0 / self.sigma

    def r(self, w):
        w = np.asarray(w, dtype=float)
        if np.any((w < self.lo) | (w > self.hi)):
            return math.inf
        return 0.5 * self.sigma * _fsum(np.square(w))

    bicon = r

    def conj(self, v):
        c = self.grad_conj(v)
        return _fsum(np.asarray(v) * c - 0.5 * self.sigma * np.square(c))

    def grad_conj(self, v):
        return np.clip(np.asarray(v, dtype=float) / self.sigma, self.lo, self.hi)

    def prox_bicon(self, x, gamma):
        return np.clip(np.asarray(x, dtype=float) / (1.0 + gamma * self.sigma), self.lo, self.hi)

    def prox_conj(self, v, gamma):
        v = np.asarray(v, dtype=float)
        s = self.sigma
        mid = s * v / (s + gamma)
        out = np.where(v > s * self.hi + gamma * self.hi, v - gamma * self.hi, mid)
        return np.where(v < s * self.lo + gamma * self.lo, v - gamma * self.lo, out)


@dataclass(frozen=True)
class Smoothed:
    """Moreau-smoothed conjugate ``M^mu_{r*}`` of ``base``.

    Its own conjugate is ``r** + (mu/2)|w|^2``, which plays the role of the
    regularizer for the smoothed problem. The conjugate is ``(1/mu)``-smooth.
    """

    base: object
    mu: float = 1.0
    convex = True

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")

    @property
    def L(self):
        return 1.0 / self.mu

    def r(self, w):
        return self.base.bicon(w) + 0.5 * self.mu * _fsum(np.square(w))

    bicon = r

    def conj(self, v):
        return moreau_value(self.base, self.mu, v)

    def grad_conj(self, v):
        return moreau_gradient(self.base, self.mu, v)

    def prox_bicon(self, x, gamma):
        d = 1.0 + gamma * self.mu
        return self.base.prox_bicon(np.asarray(x, dtype=float) / d, gamma / d)


@dataclass(frozen=True)
class DescriptorQuantizer:
    """Quantizer ``P^{s}_{r**}`` of a descriptor, usable by the optimizers."""

    descriptor: object
    grid = None

    def __call__(self, w, sharpness=1.0, draw=0):
        return self.descriptor.prox_bicon(np.asarray(w, dtype=float), sharpness)


# ---------------------------------------------------------------------------
# Moreau envelope of the conjugate


def _supported(desc):
    if not all(hasattr(desc, a) for a in ("conj", "prox_conj", "prox_bicon")):
        raise TypeError(f"unsupported descriptor {type(desc).__name__}")


def moreau_value(desc, mu: float, v) -> float:
    """``min_z r*(z) + |v - z|^2 / (2 mu)``, evaluated at the exact minimizer."""
    _supported(desc)
    if not mu > 0:
        raise ValueError("mu must be positive")
    v = np.asarray(v, dtype=float)
    z = desc.prox_conj(v, mu)
    return desc.conj(z) + _fsum(np.square(v - z)) / (2 * mu)


def moreau_gradient(desc, mu: float, v) -> np.ndarray:
    """Gradient of the envelope as a primal proximal map: ``P^{1/mu}_{r**}(v/mu)``."""
    _supported(desc)
    if not mu > 0:
        raise ValueError("mu must be positive")
    return desc.prox_bicon(np.asarray(v, dtype=float) / mu, 1.0 / mu)


def moreau_gradient_envelope(desc, mu: float, v) -> np.ndarray:
    """Gradient by the envelope theorem: ``(v - P^mu_{r*}(v)) / mu``."""
    _supported(desc)
    v = np.asarray(v, dtype=float)
    return (v - desc.prox_conj(v, mu)) / mu


# ---------------------------------------------------------------------------
# Conditional gradient on the dual


def _grad(problem: Problem, x):
    return problem.grad({"w": np.asarray(x, dtype=float)})["w"]


def _loss(problem: Problem, x):
    return problem.loss({"w": np.asarray(x, dtype=float)})


@dataclass(frozen=True)
class DualIterate:
    w_star: np.ndarray
    w: np.ndarray
    z_star: np.ndarray

    @classmethod
    def at(cls, w_star, problem, desc):
        w_star = np.asarray(w_star, dtype=float)
        w = desc.grad_conj(w_star)
        return cls(w_star=w_star, w=w, z_star=-_grad(problem, w))


def gcg_step(it: DualIterate, lam: float, problem, desc) -> DualIterate:
    """``w*' = (1 - lam) w* + lam z*`` followed by the new primal image and direction."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return DualIterate.at((1.0 - lam) * it.w_star + lam * it.z_star, problem, desc)


@dataclass
class GCGRun:
    """Iterates ``tau = 0..steps`` of a conditional-gradient run."""

    iterates: list[DualIterate]
    lam: np.ndarray
    pi: np.ndarray

    @property
    def steps(self):
        return len(self.iterates) - 1


def run_gcg(problem, desc, kind: str, steps: int, w_star0, lambda0: float | None = None,
            values=()) -> GCGRun:
    """Run ``steps`` conditional-gradient steps from ``w*_0``.

    ``kind`` is a lambda rule of :func:`~proxconnect.schedules.gcg_lambdas`;
    ``lambda0`` overrides its value at zero.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    weights = gcg_lambdas(kind, steps, lambda0=lambda0, values=values)
    its = [DualIterate.at(w_star0, problem, desc)]
    for tau in range(steps):
        its.append(gcg_step(its[-1], float(weights.lam[tau]), problem, desc))
    return GCGRun(iterates=its, lam=weights.lam, pi=weights.pi)


@dataclass
class BoundPair:
    lhs: float
    rhs: float
    terms: dict = field(default_factory=dict)

    @property
    def scale(self) -> float:
        return max(1.0, abs(self.lhs), abs(self.rhs), *(abs(v) for v in self.terms.values()))

    def holds(self, rel: float = 1e-9) -> bool:
        return self.lhs <= self.rhs + rel * self.scale


def _objective(problem, desc, x):
    return _loss(problem, x) + desc.bicon(x)


def _bregman(desc, w, it: DualIterate):
    return desc.bicon(w) - desc.bicon(it.w) - _fsum((w - it.w) * it.w_star)


def _check_smooth(problem, desc):
    if not getattr(problem, "convex", False) or not getattr(desc, "convex", False):
        raise ValueError("the bound needs a convex loss and a convex regularizer")
    if desc.L is None:
        raise ValueError("the conjugate is not smooth; wrap the descriptor in Smoothed")


def thm41_bound_eval(run: GCGRun, problem, desc, w) -> BoundPair:
    """Both sides of the weighted suboptimality bound for a conditional-gradient run.

    ``lhs = sum_tau (lam_tau/pi_tau) [F(w_tau) - F(w)]`` with ``F = l + r**``
    and ``rhs = (1 - lam_0) D(w, w_0) + sum_tau lam_tau^2/(2 pi_tau) L |w*_tau - z*_tau|^2``,
    summed over every recorded iterate except the last, whose step was not taken.
    """
    _check_smooth(problem, desc)
    w = np.asarray(w, dtype=float)
    f_w = _objective(problem, desc, w)
    taus = range(run.steps)
    lhs = math.fsum((run.lam[t] / run.pi[t]) * (_objective(problem, desc, run.iterates[t].w) - f_w)
                    for t in taus)
    breg = (1.0 - run.lam[0]) * _bregman(desc, w, run.iterates[0])
    energy = math.fsum(run.lam[t] ** 2 / (2 * run.pi[t]) * desc.L
                       * _fsum(np.square(run.iterates[t].w_star - run.iterates[t].z_star))
                       for t in taus)
    return BoundPair(lhs=lhs, rhs=breg + energy, terms={"bregman": breg, "energy": energy})


def cor42_eval(run: GCGRun, problem, desc, w) -> BoundPair:
    """Averaged-iterate form: ``F(w_bar) - F(w) <= D-term / H + (L/2) sum lam Lambda |w* - z*|^2``."""
    _check_smooth(problem, desc)
    T = run.steps
    if T == 0:
        return BoundPair(0.0, 0.0)
    ratio = run.lam[:T] / run.pi[:T]
    H = math.fsum(ratio)
    Lam = ratio / H
    w = np.asarray(w, dtype=float)
    w_bar = np.tensordot(Lam, np.stack([run.iterates[t].w for t in range(T)]), axes=1)
    lhs = _objective(problem, desc, w_bar) - _objective(problem, desc, w)
    breg = (1.0 - run.lam[0]) * _bregman(desc, w, run.iterates[0]) / H
    energy = 0.5 * desc.L * math.fsum(
        run.lam[t] * Lam[t] * _fsum(np.square(run.iterates[t].w_star - run.iterates[t].z_star))
        for t in range(T))
    return BoundPair(lhs=lhs, rhs=breg + energy, terms={"bregman": breg, "energy": energy, "H": H})


# ---------------------------------------------------------------------------
# GCG on the smoothed dual == dual averaging == ProxConnect


def da_equivalence_check(problem: Quadratic, desc, schedule: StepSchedule, steps: int,
                         w_star1=None, mu_scale: float = 1.0) -> float:
    """Max deviation between the primal iterates of three equivalent forms.

    Starting from ``w*_1`` (with ``pi_0 = 1``), the forms are

    (a) GCG on ``l*(-.) + M^{mu_t}_{r*}``: ``w_t = grad M^{mu_t}(w*_t)``,
        ``w*_{t+1} = (1 - lam_t) w*_t + lam_t z*_t``;
    (b) dual averaging on the rescaled dual ``v_t = w*_t / pi_{t-1}``:
        ``w_t = P^{1/mu_t}(pi_{t-1} v_t / mu_t)``, ``v_{t+1} = v_t - (lam_t/pi_t) grad l(w_t)``;
    (c) ProxConnect as run by :func:`proxconnect.optimizers.run` with the
        quantizer ``P^{1/pi_{t-1}}_{r**}``.

    With ``mu_t = pi_{t-1}`` all three coincide. ``mu_scale`` multiplies
    ``mu_t`` in (a) and (b) only, as a negative control.
    """
    if steps == 0:
        return 0.0
    d = len(problem.b)
    w1 = np.zeros(d) if w_star1 is None else np.asarray(w_star1, dtype=float).reshape(d)

    traj = optimizers.run(problem, "PC", DescriptorQuantizer(desc), schedule, steps,
                          w_init={"w": w1})
    pc = [traj.snapshots[t - 1].w_quant["w"] for t in range(1, steps + 1)]

    state = ScheduleState()
    a_star, v = w1.copy(), w1.copy()
    dev = 0.0
    for t in range(1, steps + 1):
        prev = state
        state = advance(prev, schedule)
        mu = mu_scale * prev.pi
        w_a = moreau_gradient(desc, mu, a_star)
        w_b = desc.prox_bicon(prev.pi * v / mu, 1.0 / mu)
        dev = max(dev, float(np.max(np.abs(w_a - w_b))), float(np.max(np.abs(w_a - pc[t - 1]))),
                  float(np.max(np.abs(w_b - pc[t - 1]))))
        a_star = (1.0 - state.lam) * a_star + state.lam * (-_grad(problem, w_a))
        v = v - (state.lam / state.pi) * _grad(problem, w_b)
    return dev

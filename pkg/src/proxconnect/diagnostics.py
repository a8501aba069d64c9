"""Bregman divergences and bound checks on ProxConnect trajectories.

Trajectories come from :func:`proxconnect.optimizers.run` with
``keep_grads=True``. With snapshot ``k`` holding ``w*_{k+1}`` and its
quantized image ``w_{k+1}``, step ``tau`` reads

* ``w_tau``   = ``snapshots[tau-1].w_quant``
* ``w*_tau``  = ``snapshots[tau-1].w_star``
* ``eta_tau``, ``pi_tau``, sampled gradient = ``snapshots[tau]``
* ``mu_{tau+1}`` = ``snapshots[tau].mu_next``

Every sum goes through ``math.fsum`` so that exact identities come out at
rounding level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import quantizers as Q
from . import weights as W

__all__ = [
    "RegularizerForm",
    "squared_norm",
    "scaled_sq_dist",
    "dist",
    "BoundReport",
    "bregman_delta",
    "lemma_a1_residual",
    "thm51_check",
    "thmA3_check",
    "cor52_eval",
    "cor52_expected",
    "a58_terms",
    "min_iterate_gap",
]


# ---------------------------------------------------------------------------
# Regularizer forms paired with their quantizers


@dataclass(frozen=True)
class RegularizerForm:
    """A separable regularizer ``r`` with its proximal map ``P^gamma_r``.

    ``kind`` is ``"squared_norm"`` (``(weight/2)|w|^2``), ``"scaled_sq_dist"``
    (``(weight/2) dist(w, Q)^2``) or ``"dist"`` (``weight * dist(w, Q)``).
    """

    kind: str
    weight: float = 1.0
    grid: Q.QuantizationGrid | None = None

    def __post_init__(self):
        if self.kind not in ("squared_norm", "scaled_sq_dist", "dist"):
            raise ValueError(f"unknown regularizer form {self.kind!r}")
        if self.kind != "squared_norm" and self.grid is None:
            raise ValueError(f"{self.kind} needs a grid")
        if not self.weight > 0:
            raise ValueError("weight must be positive")

    @property
    def convex(self) -> bool:
        return self.kind == "squared_norm"

    @property
    def strong_convexity(self) -> float:
        return self.weight if self.kind == "squared_norm" else 0.0

    def value(self, w) -> float:
        """``r(w)`` summed over every coordinate of every group."""
        x = W.flat(w) if isinstance(w, dict) else np.ravel(np.asarray(w, dtype=float))
        if self.kind == "squared_norm":
            return 0.5 * self.weight * math.fsum((x * x).tolist())
        d = x - Q.project(self.grid, x)
        if self.kind == "scaled_sq_dist":
            return 0.5 * self.weight * math.fsum((d * d).tolist())
        return self.weight * math.fsum(np.abs(d).tolist())

    def quantizer(self):
        """The quantizer spec whose sharpness-``s`` map is ``P^s_r``."""
        if self.kind == "squared_norm":
            return Q.Shrink(self.weight)
        if self.kind == "scaled_sq_dist":
            return Q.BinaryRelax(self.grid, self.weight)
        plq = Q.PiecewiseLinearQuantizer(self.grid, rho=self.weight, varrho=self.weight, clip=False)
        return Q.PiecewiseLinear(plq)

    def prox(self, x, gamma):
        return self.quantizer()(np.asarray(x, dtype=float), gamma)


def squared_norm(weight=1.0):
    return RegularizerForm("squared_norm", weight)


def scaled_sq_dist(grid, weight=1.0):
    return RegularizerForm("scaled_sq_dist", weight, grid)


def dist(grid, weight=1.0):
    return RegularizerForm("dist", weight, grid)


# ---------------------------------------------------------------------------


@dataclass
class BoundReport:
    lhs: float
    rhs: float
    terms: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @property
    def scale(self) -> float:
        vals = [abs(self.lhs), abs(self.rhs)] + [abs(v) for v in self.terms.values()]
        return max([1.0] + vals)

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    def holds(self, rel: float = 1e-9) -> bool:
        return self.lhs <= self.rhs + rel * self.scale


def _sq(w) -> float:
    return W.sqnorm(w)


def bregman_delta(form: RegularizerForm, pi_tau: float, w, w_next, w_star_next,
                  mu_next: float | None = None) -> float:
    """``r_tau(w) - r_tau(w_next) - <w - w_next, w*_next>``.

    ``r_tau(w) = r(w)/pi_tau + (mu_next / (2 pi_tau)) |w|^2`` with
    ``mu_next = pi_tau`` by default.
    """
    c = 1.0 if mu_next is None else mu_next / pi_tau
    as_dict = (lambda v: v if isinstance(v, dict) else {"w": np.asarray(v, dtype=float)})
    w, w_next, w_star_next = as_dict(w), as_dict(w_next), as_dict(w_star_next)
    return math.fsum([
        form.value(w) / pi_tau,
        0.5 * c * _sq(w),
        -form.value(w_next) / pi_tau,
        -0.5 * c * _sq(w_next),
        -W.vdot(W.sub(w, w_next), w_star_next),
    ])


def lemma_a1_residual(etas, z_stars, ws, g, w, w_star_s, s: int = 1,
                      pi_prev: float | None = None) -> float:
    """``|LHS - RHS|`` of the weighted-gap telescoping identity.

    Parameters
    ----------
    etas, z_stars : sequences over ``tau = s..t``
    ws : sequence over ``tau = s..t+1`` (one longer than ``etas``)
    g : callable, any function of a vector
    w : comparison point
    w_star_s : the accumulated dual point at ``s``; later ones follow
        ``v_{tau+1} = v_tau + eta_tau z*_tau``
    pi_prev : ``pi_{s-1}``; defaults to 1 / (1 + 0) for ``s = 1``. The
        remaining ``1/pi_tau`` accumulate as ``1/pi_{s-1} + sum eta``.
    """
    n = len(etas)
    if len(z_stars) != n or len(ws) != n + 1:
        raise ValueError(f"length mismatch: {n} steps need {n} directions and {n + 1} points")
    if n == 0:
        return 0.0
    w = np.asarray(w, dtype=float)
    inv_pi = [1.0 / pi_prev if pi_prev is not None else 1.0]
    vs = [np.asarray(w_star_s, dtype=float)]
    for eta, z in zip(etas, z_stars):
        inv_pi.append(inv_pi[-1] + eta)
        vs.append(vs[-1] + eta * np.asarray(z, dtype=float))

    def dot(a, b):
        return math.fsum((np.ravel(a) * np.ravel(b)).tolist())

    def delta(k, v):
        # delta indexed so that k = 0 is tau = s - 1
        return [inv_pi[k] * g(v), -inv_pi[k] * g(ws[k]), -dot(v - ws[k], vs[k])]

    g_w = g(w)
    lhs = math.fsum(
        term
        for k in range(n)
        for term in (etas[k] * dot(ws[k] - w, -np.asarray(z_stars[k])), etas[k] * g(ws[k]), -etas[k] * g_w)
    )
    rhs_terms = delta(0, w) + [-x for x in delta(n, w)]
    for k in range(n):
        rhs_terms += delta(k + 1, ws[k])
    rhs = math.fsum(rhs_terms)
    scale = max(1.0, abs(lhs), abs(rhs), max(abs(x) for x in rhs_terms))
    return abs(lhs - rhs) / scale


# ---------------------------------------------------------------------------
# Bounds on trajectories


def _window(traj, s, t):
    T = traj.steps
    t = T if t is None else t
    if not (1 <= s <= t + 1 and t <= T):
        raise ValueError(f"window s={s}, t={t} invalid for a trajectory of {T} steps")
    return s, t


def _need_grads(traj, s, t):
    for tau in range(s, t + 1):
        if traj.snapshots[tau].grad is None:
            raise ValueError("trajectory lacks gradients; run with keep_grads=True")


def _consistent(traj, form, mu_general: bool, tol=1e-9):
    """Check that recorded quantized points are the form's proximal images."""
    for snap in (traj.snapshots[0], traj.snapshots[-1]):
        mu = snap.mu_next if mu_general else snap.pi
        x = W.scale(snap.w_star, snap.pi / mu)
        for k, v in x.items():
            want = form.prox(v, 1.0 / mu)
            if np.max(np.abs(want - snap.w_quant[k]), initial=0.0) > tol * max(1.0, np.max(np.abs(want), initial=0.0)):
                raise ValueError(f"quantized iterates at t={snap.t} are not the proximal map of the "
                                 f"{form.kind} form; quantizer and form do not match")


def _delta(traj, form, tau, w, general):
    """``Delta_tau(w)`` from the trajectory (``tau >= 0``)."""
    snap = traj.snapshots[tau]
    return bregman_delta(form, snap.pi, w, snap.w_quant, snap.w_star,
                         snap.mu_next if general else None)


def _bound(traj, form, w, s, t, general):
    s, t = _window(traj, s, t)
    _need_grads(traj, s, t)
    _consistent(traj, form, general)
    snaps = traj.snapshots
    r_w = form.value(w)
    lhs_terms = []
    for tau in range(s, t + 1):
        w_tau, cur = snaps[tau - 1].w_quant, snaps[tau]
        lhs_terms += [cur.eta * W.vdot(W.sub(w_tau, w), cur.grad),
                      cur.eta * form.value(w_tau), -cur.eta * r_w]
    d_start = _delta(traj, form, s - 1, w, general)
    d_end = _delta(traj, form, t, w, general)
    d_path = [_delta(traj, form, tau, snaps[tau - 1].w_quant, general) for tau in range(s, t + 1)]
    drift = []
    if general:
        ww = _sq(w)
        for tau in range(s, t + 1):
            c_now = snaps[tau].mu_next / snaps[tau].pi
            c_prev = snaps[tau - 1].mu_next / snaps[tau - 1].pi
            drift.append(0.5 * (c_now - c_prev) * (ww - _sq(snaps[tau - 1].w_quant)))
    lhs = math.fsum(lhs_terms)
    rhs = math.fsum([d_start, -d_end] + d_path + drift)
    return BoundReport(
        lhs=lhs,
        rhs=rhs,
        terms={"delta_start": d_start, "delta_end": -d_end, "delta_path": math.fsum(d_path),
               "mu_drift": math.fsum(drift)},
        params={"s": s, "t": t, "sigma0": form.strong_convexity},
    )


def thm51_check(traj, form: RegularizerForm, w, s: int = 1, t: int | None = None) -> BoundReport:
    """Weighted gap sum versus its Bregman telescoping bound over steps ``s..t``.

    ``lhs = sum eta_tau [<w_tau - w, g_tau> + r(w_tau) - r(w)]`` and
    ``rhs = Delta_{s-1}(w) - Delta_t(w) + sum Delta_tau(w_tau)``.
    """
    return _bound(traj, form, w, s, t, general=False)


def thmA3_check(traj, form: RegularizerForm, w, s: int = 1, t: int | None = None) -> BoundReport:
    """As :func:`thm51_check` for a run with a general smoothing sequence ``mu_t``.

    ``r_tau`` uses ``mu_{tau+1} / (2 pi_tau)`` and the right side gains
    ``sum 1/2 (mu_{tau+1}/pi_tau - mu_tau/pi_{tau-1}) (|w|^2 - |w_tau|^2)``.
    """
    s_, t_ = _window(traj, s, t)
    ratios = [traj.snapshots[k].mu_next / traj.snapshots[k].pi for k in range(s_ - 1, t_ + 1)]
    if any(b < a * (1 - 1e-12) for a, b in zip(ratios, ratios[1:])):
        raise ValueError("mu_{t+1}/pi_t must be nondecreasing")
    return _bound(traj, form, w, s, t, general=True)


def a58_terms(traj, form: RegularizerForm, s: int = 1, t: int | None = None):
    """Pairs ``(Delta_tau(w_tau), pi_tau eta_tau^2 |g_tau|^2 / (2 (sigma0 + mu_{tau+1})))``."""
    s, t = _window(traj, s, t)
    _need_grads(traj, s, t)
    out = []
    for tau in range(s, t + 1):
        snap = traj.snapshots[tau]
        d = _delta(traj, form, tau, traj.snapshots[tau - 1].w_quant, True)
        bound = snap.pi * snap.eta ** 2 * _sq(snap.grad) / (2 * (form.strong_convexity + snap.mu_next))
        out.append((d, bound))
    return out


def _objective(problem, form, w):
    return problem.loss(w) + form.value(w)


def cor52_eval(traj, problem, form: RegularizerForm, w, s: int = 1,
               t: int | None = None) -> dict[str, BoundReport]:
    """Min-iterate and averaged-iterate suboptimality bounds for convex losses.

    Returns reports keyed ``"min_bregman"`` (always), and ``"min_energy"`` /
    ``"avg_energy"`` when the form is convex. The energy bounds replace the
    Bregman path terms by ``sum eta_tau^2 |g_tau|^2 / 2``.
    """
    if not getattr(problem, "convex", False):
        raise ValueError("the corollary needs a convex loss")
    s, t = _window(traj, s, t)
    base = thm51_check(traj, form, w, s, t)
    snaps = traj.snapshots
    eta_sum = math.fsum(snaps[tau].eta for tau in range(s, t + 1))
    f_w = _objective(problem, form, w)
    if t < s or eta_sum == 0:
        gaps = [0.0]
    else:
        gaps = [_objective(problem, form, snaps[tau - 1].w_quant) - f_w for tau in range(s, t + 1)]
    min_gap = min(gaps)
    params = {"s": s, "t": t, "eta_sum": eta_sum}
    out = {"min_bregman": BoundReport(min_gap, base.rhs / eta_sum if eta_sum else base.rhs,
                                      dict(base.terms), params)}
    if form.convex:
        energy = math.fsum(0.5 * snaps[tau].eta ** 2 * _sq(snaps[tau].grad) for tau in range(s, t + 1))
        rhs = (base.terms["delta_start"] + energy) / eta_sum if eta_sum else base.terms["delta_start"]
        terms = {"delta_start": base.terms["delta_start"], "energy": energy}
        out["min_energy"] = BoundReport(min_gap, rhs, terms, params)
        if eta_sum:
            from .optimizers import ergodic_average

            w_bar = ergodic_average(traj, "eta", start=s, stop=t)
            avg_gap = _objective(problem, form, w_bar) - f_w
        else:
            avg_gap = 0.0
        out["avg_energy"] = BoundReport(avg_gap, rhs, terms, params)
    return out


def cor52_expected(trajectories, problem, form: RegularizerForm, w, s: int = 1,
                   t: int | None = None) -> dict[str, BoundReport]:
    """Seed-averaged version of :func:`cor52_eval` for stochastic runs.

    Expectations are replaced by means over ``trajectories``, which must share
    the step-size sequence. The min-iterate side is ``min_tau mean_seeds``.
    """
    if not trajectories:
        raise ValueError("need at least one trajectory")
    s, t = _window(trajectories[0], s, t)
    n = len(trajectories)
    f_w = _objective(problem, form, w)
    gap_paths = np.array([[_objective(problem, form, tr.snapshots[tau - 1].w_quant) - f_w
                           for tau in range(s, t + 1)] for tr in trajectories])
    per = [cor52_eval(tr, problem, form, w, s, t) for tr in trajectories]
    out = {}
    for key in per[0]:
        rhs = math.fsum(p[key].rhs for p in per) / n
        if key.startswith("min"):
            lhs = float(np.min(gap_paths.mean(axis=0))) if gap_paths.size else 0.0
        else:
            lhs = math.fsum(p[key].lhs for p in per) / n
        out[key] = BoundReport(lhs, rhs, {"seeds": n}, dict(per[0][key].params))
    return out


def min_iterate_gap(traj, problem, form: RegularizerForm, w, s: int, t: int) -> float:
    """``min_{tau=s..t} f(w_tau) - f(w)`` with ``f = l + r``."""
    f_w = _objective(problem, form, w)
    return min(_objective(problem, form, traj.snapshots[tau - 1].w_quant) - f_w
               for tau in range(s, t + 1))

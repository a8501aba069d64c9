"""Step-size, averaging and sharpness schedules.

Steps are numbered ``t = 1, 2, ...``; ``t = 0`` is the initial state with
``pi_0 = 1``. The coupled sequences satisfy

    1/pi_t = 1 + sum_{tau=1}^t eta_tau,    lambda_t = eta_t * pi_t,

and the quantizer applied at step ``t`` has sharpness ``1/pi_{t-1}``. The
convention ``lambda_0 = 0`` is used here, so no ``(1 - lambda_0)`` factor
appears anywhere downstream. Conditional-gradient runs that need the natural
``lambda_0 = 1`` of the ``1/(t+1)`` and ``2/(t+2)`` rules use
:func:`gcg_lambdas` instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KINDS = ("constant_eta", "polynomial_eta", "gcg_lambda_inv_t", "gcg_lambda_two_over", "explicit")


@dataclass(frozen=True)
class StepSchedule:
    kind: str = "constant_eta"
    eta0: float = 0.1
    p: float = 0.0
    values: tuple[float, ...] = ()
    rho0: float = 0.0
    B: float = 100.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; choose from {KINDS}")
        if self.kind == "polynomial_eta" and not 0 <= self.p <= 0.5:
            raise ValueError("polynomial_eta needs p in [0, 1/2]")
        if self.eta0 < 0:
            raise ValueError("eta0 must be nonnegative")


@dataclass(frozen=True)
class ScheduleState:
    t: int = 0
    eta: float = 0.0
    lam: float = 0.0
    pi: float = 1.0
    pi_prev: float = 1.0
    mu: float = 1.0
    cumulative_eta: float = 0.0

    @property
    def sharpness(self) -> float:
        """Quantizer sharpness used at step ``t``: ``1/pi_{t-1}``."""
        return 1.0 / self.pi_prev


def lambda_at(kind: str, t: int) -> float:
    if kind == "gcg_lambda_inv_t":
        return 1.0 / (t + 1)
    if kind == "gcg_lambda_two_over":
        return 2.0 / (t + 2)
    raise ValueError(f"{kind!r} is not a lambda schedule")


def eta_at(schedule: StepSchedule, t: int, state: ScheduleState) -> float:
    """Step size for step ``t >= 1`` given the state after step ``t-1``."""
    kind = schedule.kind
    if kind == "constant_eta":
        return schedule.eta0
    if kind == "polynomial_eta":
        return schedule.eta0 * t ** (-schedule.p)
    if kind == "explicit":
        if t > len(schedule.values):
            raise IndexError(f"explicit schedule has only {len(schedule.values)} entries")
        return float(schedule.values[t - 1])
    lam = lambda_at(kind, t)
    if lam >= 1.0:
        raise ValueError("lambda_t = 1 after t = 0 would make pi_t = 0")
    # eta_t = lambda_t / pi_t with pi_t = pi_{t-1} (1 - lambda_t)
    return lam / (state.pi * (1.0 - lam))


def advance(state: ScheduleState, schedule: StepSchedule) -> ScheduleState:
    """Move from step ``t`` to ``t + 1`` and return the new state."""
    t = state.t + 1
    eta = eta_at(schedule, t, state)
    if eta < 0:
        raise ValueError(f"negative step size at t={t}")
    cum = state.cumulative_eta + eta
    if not math.isfinite(cum):
        raise OverflowError(f"cumulative step size overflowed at t={t}")
    inv_pi = 1.0 + cum
    return ScheduleState(
        t=t,
        eta=eta,
        lam=eta / inv_pi,
        pi=1.0 / inv_pi,
        pi_prev=state.pi,
        mu=state.pi,
        cumulative_eta=cum,
    )


def states(schedule: StepSchedule, steps: int) -> list[ScheduleState]:
    """All states ``t = 0..steps``."""
    out = [ScheduleState()]
    for _ in range(steps):
        out.append(advance(out[-1], schedule))
    return out


def identity_residual(state: ScheduleState) -> float:
    """``|1/pi_t - 1 - sum eta|`` relative to ``1 + sum eta``."""
    scale = 1.0 + state.cumulative_eta
    return abs(1.0 / state.pi - scale) / scale


def rho_at(schedule: StepSchedule, t: int) -> float:
    """Linearly growing shift ``(1 + t/B) rho0``, advanced once per step."""
    if schedule.B <= 0:
        raise ValueError("B must be positive")
    return (1.0 + t / schedule.B) * schedule.rho0


def linear_sharpness(schedule: StepSchedule, t: int) -> float:
    """Multiplier ``rho_t / rho0`` applied to a quantizer's base shifts."""
    if schedule.B <= 0:
        raise ValueError("B must be positive")
    return 1.0 + t / schedule.B


def mu_rate_for(sigma0: float, state: ScheduleState, c: float = 1.0) -> float:
    """Recommended next smoothing parameter ``mu_{t+1}``.

    ``c sqrt(lambda_t)`` without strong convexity of the regularizer and
    ``c lambda_t`` when ``sigma0 > 0``.
    """
    if sigma0 > 0:
        return c * state.lam
    return c * math.sqrt(state.lam)


@dataclass(frozen=True)
class GCGWeights:
    """Averaging quantities of a conditional-gradient run, ``tau = 0..t``."""

    lam: np.ndarray
    pi: np.ndarray

    @property
    def ratio(self) -> np.ndarray:
        return self.lam / self.pi

    @property
    def H(self) -> float:
        return math.fsum(self.ratio)

    @property
    def Lambda(self) -> np.ndarray:
        r = self.ratio
        return r / math.fsum(r)


def gcg_lambdas(kind: str, t: int, lambda0: float | None = None, values=()) -> GCGWeights:
    """``lambda_tau`` and ``pi_tau = prod_{s=1}^tau (1 - lambda_s)`` for ``tau <= t``.

    ``lambda0`` defaults to the rule's own value at zero (1 for both built-in
    rules). ``kind="explicit"`` reads ``values`` as ``lambda_0, lambda_1, ...``.
    """
    if kind == "explicit":
        lam = np.asarray(values[: t + 1], dtype=float)
        if len(lam) < t + 1:
            raise IndexError("not enough explicit lambda values")
    else:
        lam = np.array([lambda_at(kind, tau) for tau in range(t + 1)])
    if lambda0 is not None:
        lam[0] = lambda0
    if np.any((lam < 0) | (lam > 1)):
        raise ValueError("lambda must lie in [0, 1]")
    if np.any(lam[1:] >= 1):
        raise ValueError("lambda_t = 1 is only allowed at t = 0")
    pi = np.ones(t + 1)
    for tau in range(1, t + 1):
        pi[tau] = pi[tau - 1] * (1.0 - lam[tau])
    return GCGWeights(lam=lam, pi=pi)

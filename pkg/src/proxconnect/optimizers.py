"""The two-line quantized training family.

Every scheme computes a quantized point ``w_t = P(w*_t)`` and then takes one
gradient step. They differ only in where the gradient is sampled and which
point the step starts from:

=====  ===================  ==============
kind   gradient at          step from
=====  ===================  ==============
BC     ``w_t``              ``w*_t``
PC     ``w_t`` (sharpened)  ``w*_t``
PQ     ``w_t``              ``w_t``
RPC    ``w*_t``             ``w_t``
PTQ    ``w*_t``             ``w*_t``
=====  ===================  ==============

BC uses the quantizer at unit sharpness throughout. The other schemes use the
schedule's sharpness, by default ``1/pi_{t-1}``.

State convention: a :class:`TrainState` with ``step == t - 1`` holds the
continuous weights ``w*_t`` and their quantized image ``w_t`` that step ``t``
will use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import quantizers as Q
from . import weights as W
from .problems import minibatch_indices
from .schedules import ScheduleState, StepSchedule, advance, linear_sharpness

KINDS = ("BC", "PQ", "RPC", "PC", "PTQ")
SHARPNESS_MODES = ("pi", "linear", "fixed")

__all__ = [
    "KINDS",
    "DivergenceError",
    "TrainState",
    "Snapshot",
    "Trajectory",
    "RunContext",
    "init_state",
    "step",
    "step_bc",
    "step_pq",
    "step_rpc",
    "step_pc",
    "step_ptq",
    "run",
    "ergodic_average",
    "rpc_fixed_point_residual",
]


class DivergenceError(RuntimeError):
    """Raised when weights blow up or a gradient is non-finite.

    ``trajectory`` holds every snapshot recorded before the failure.
    """

    def __init__(self, message, trajectory=None, step=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.step = step


@dataclass
class TrainState:
    w_star: W.Weights
    w_quant: W.Weights
    schedule: ScheduleState
    step: int
    rng_seed: int
    optimizer_kind: str


@dataclass
class Snapshot:
    t: int
    w_star: W.Weights
    w_quant: W.Weights
    eta: float
    lam: float
    pi: float
    sharpness: float
    grad_norm: float
    grad: W.Weights | None = None
    mu_next: float = 1.0


@dataclass
class Trajectory:
    snapshots: list[Snapshot]
    terminal: W.Weights | None = None
    kind: str = "PC"

    def __len__(self):
        return len(self.snapshots)

    @property
    def steps(self) -> int:
        return len(self.snapshots) - 1


@dataclass(frozen=True)
class RunContext:
    problem: object
    quantizer: object
    schedule: StepSchedule
    kind: str = "PC"
    seed: int = 0
    batch_size: int = 0
    sharpness: str = "pi"
    mu_rule: Callable[[ScheduleState], float] | None = None
    hard_quantize_at: int | None = None
    divergence_bound: float = 1e6
    keep_grads: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer kind {self.kind!r}; choose from {KINDS}")
        if self.sharpness not in SHARPNESS_MODES:
            raise ValueError(f"unknown sharpness mode {self.sharpness!r}")


def _quantizer_params(ctx: RunContext, sched: ScheduleState):
    """Sharpness and input scale for the quantization at step ``sched.t + 1``.

    Returns ``(sharpness, scale, mu)``. With a ``mu_rule`` the quantized point
    is ``P^{1/mu}(pi_t w* / mu)``; without one ``mu = pi_t`` and the scale is 1.
    """
    if ctx.kind == "BC" or ctx.sharpness == "fixed":
        return 1.0, 1.0, 1.0
    if ctx.sharpness == "linear":
        return linear_sharpness(ctx.schedule, sched.t + 1), 1.0, 1.0
    if ctx.mu_rule is None:
        return 1.0 / sched.pi, 1.0, sched.pi
    mu = float(ctx.mu_rule(sched))
    if not mu > 0:
        raise ValueError(f"mu_rule returned nonpositive mu={mu} at t={sched.t + 1}")
    return 1.0 / mu, sched.pi / mu, mu


def _hard_phase(ctx: RunContext, t: int) -> bool:
    return ctx.hard_quantize_at is not None and t > ctx.hard_quantize_at


def _free_groups(spec, names):
    if isinstance(spec, Q.PerGroup):
        return {k for k in names if spec.specs[k].grid is None}
    return set(names) if spec.grid is None else set()


def _quantize(ctx: RunContext, w_star, sched: ScheduleState):
    t_next = sched.t + 1
    if _hard_phase(ctx, t_next):
        return Q.hard_quantize(ctx.quantizer, w_star)
    s, scale, _ = _quantizer_params(ctx, sched)
    x = w_star if scale == 1.0 else W.scale(w_star, scale)
    return Q.apply(ctx.quantizer, x, s, draw=t_next)


def init_state(ctx: RunContext, w_init=None) -> TrainState:
    w0 = W.copy(w_init if w_init is not None else ctx.problem.init(ctx.seed))
    sched = ScheduleState()
    return TrainState(w_star=w0, w_quant=_quantize(ctx, w0, sched), schedule=sched,
                      step=0, rng_seed=ctx.seed, optimizer_kind=ctx.kind)


def _indices(ctx: RunContext, t: int):
    n = getattr(ctx.problem, "n_samples", 0)
    if not n or ctx.batch_size <= 0:
        return None
    return minibatch_indices(n, ctx.batch_size, ctx.seed, t)


def step(state: TrainState, ctx: RunContext):
    """Advance one step; returns ``(new_state, gradient)``."""
    sched = advance(state.schedule, ctx.schedule)
    t = sched.t
    idx = _indices(ctx, t)
    problem = ctx.problem
    if _hard_phase(ctx, t):
        # post-quantization phase: quantized groups stay frozen on the grid,
        # remaining groups keep training at the hard-quantized point
        free = _free_groups(ctx.quantizer, state.w_star)
        g = problem.grad(state.w_quant, idx)
        w_next = {k: (v - sched.eta * g[k] if k in free else v.copy())
                  for k, v in state.w_star.items()}
    else:
        kind = ctx.kind
        grad_at = state.w_quant if kind in ("BC", "PC", "PQ") else state.w_star
        base = state.w_quant if kind in ("PQ", "RPC") else state.w_star
        g = problem.grad(grad_at, idx)
        w_next = W.add_scaled(base, -sched.eta, g)
    new = TrainState(w_star=w_next, w_quant=_quantize(ctx, w_next, sched), schedule=sched,
                     step=t, rng_seed=state.rng_seed, optimizer_kind=ctx.kind)
    return new, g


def _step_as(kind):
    def fn(state, problem, quantizer, schedule, **kwargs):
        ctx = RunContext(problem=problem, quantizer=quantizer, schedule=schedule,
                         kind=kind, seed=state.rng_seed, **kwargs)
        return step(state, ctx)[0]
    fn.__name__ = f"step_{kind.lower()}"
    return fn


step_bc = _step_as("BC")
step_bc.__doc__ = "BinaryConnect: gradient at ``P(w*)``, update applied to ``w*``."
step_pq = _step_as("PQ")
step_pq.__doc__ = "ProxQuant: gradient at ``w``, update applied to ``w`` then re-quantized."
step_rpc = _step_as("RPC")
step_rpc.__doc__ = "reverse ProxConnect: gradient at ``w*``, update anchored at ``w``."
step_pc = _step_as("PC")
step_pc.__doc__ = "ProxConnect: BC-shaped update with a time-sharpened quantizer."
step_ptq = _step_as("PTQ")
step_ptq.__doc__ = "Post-training quantization: plain SGD on ``w*``; ``w`` is for reporting."


def _snapshot(ctx, state, g):
    sched = state.schedule
    s, _, mu = _quantizer_params(ctx, sched)
    return Snapshot(
        t=state.step,
        w_star=state.w_star,
        w_quant=state.w_quant,
        eta=sched.eta,
        lam=sched.lam,
        pi=sched.pi,
        sharpness=s,
        grad_norm=W.norm(g) if g is not None else 0.0,
        grad=g if ctx.keep_grads else None,
        mu_next=mu,
    )


def run(problem, kind, quantizer, schedule, steps, seed=0, *, batch_size=0, w_init=None,
        sharpness="pi", mu_rule=None, hard_quantize_at=None, divergence_bound=1e6,
        keep_grads=False, state: TrainState | None = None, on_snapshot=None):
    """Run ``steps`` steps of ``kind`` and return a :class:`Trajectory`.

    The first snapshot is the starting state, so the trajectory has
    ``steps + 1`` entries. The terminal weights are always the hard projection
    of the final continuous weights. ``hard_quantize_at`` is an absolute step
    index at which that projection happens early; after it, quantized groups
    stay frozen on the grid and only unquantized groups keep training.

    Pass ``state`` to continue from a saved :class:`TrainState`.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    ctx = RunContext(problem=problem, quantizer=quantizer, schedule=schedule, kind=kind,
                     seed=seed, batch_size=batch_size, sharpness=sharpness, mu_rule=mu_rule,
                     hard_quantize_at=hard_quantize_at,
                     divergence_bound=divergence_bound, keep_grads=keep_grads)
    if state is None:
        state = init_state(ctx, w_init)
    traj = Trajectory(snapshots=[_snapshot(ctx, state, None)], kind=kind)
    if on_snapshot:
        on_snapshot(traj.snapshots[-1])
    for _ in range(steps):
        try:
            state, g = step(state, ctx)
        except (FloatingPointError, ValueError) as exc:
            raise DivergenceError(f"step {state.step + 1}: {exc}", traj, state.step + 1) from exc
        snap = _snapshot(ctx, state, g)
        traj.snapshots.append(snap)
        if on_snapshot:
            on_snapshot(snap)
        big = W.max_abs(state.w_star)
        if not math.isfinite(big) or big > divergence_bound:
            raise DivergenceError(
                f"step {state.step}: |w*|_inf = {big:.3g} exceeds bound {divergence_bound:.3g}",
                traj, state.step)
    traj.terminal = Q.hard_quantize(quantizer, state.w_star)
    traj.final_state = state
    return traj


def ergodic_average(trajectory: Trajectory, weighting: str = "eta", start: int = 1,
                    stop: int | None = None) -> W.Weights:
    """Weighted average of the quantized iterates ``w_start..w_stop``.

    ``weighting`` is ``"eta"`` (weights ``eta_tau``, which equal
    ``lambda_tau / pi_tau``), ``"uniform"``, or a conditional-gradient rule
    name (``gcg_lambda_inv_t`` / ``gcg_lambda_two_over``) whose weights
    ``lambda_tau / pi_tau`` are recomputed from the rule.
    """
    from .schedules import gcg_lambdas

    snaps = trajectory.snapshots
    T = len(snaps) - 1 if stop is None else stop
    if T < 1:
        return W.copy(snaps[0].w_quant)
    taus = range(start, T + 1)
    if weighting == "eta":
        wts = [snaps[tau].eta for tau in taus]
    elif weighting == "uniform":
        wts = [1.0 for _ in taus]
    else:
        ratio = gcg_lambdas(weighting, T).ratio
        wts = [ratio[tau] for tau in taus]
    total = math.fsum(wts)
    if total <= 0:
        raise ValueError("averaging weights sum to zero")
    names = list(snaps[0].w_quant)
    out = {}
    for k in names:
        stack = np.stack([snaps[tau - 1].w_quant[k] for tau in taus])
        out[k] = np.tensordot(np.asarray(wts) / total, stack, axes=1)
    return out


def rpc_fixed_point_residual(w_star, problem, quantizer, eta, pi) -> float:
    """``|| w* - (P^{1/pi}(w*) - eta grad l(w*)) ||``."""
    pw = Q.apply(quantizer, w_star, 1.0 / pi)
    g = problem.grad(w_star)
    return W.norm(W.sub(w_star, W.add_scaled(pw, -eta, g)))

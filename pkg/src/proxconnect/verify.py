"""Verification suites: every identity, equivalence and bound as a pass/fail check.

Each suite is a function returning a list of :class:`Check`. Suites take
keyword arguments for their sizes so tests can run them at full scale and
quick smoke runs can shrink them.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import diagnostics as D
from . import gcg as G
from . import optimizers as O
from . import problems as P
from . import quantizers as Q
from . import schedules as S

__all__ = ["Check", "SUITES", "MUTATIONS", "run_suites", "builtin_quantizers"]


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0


# ---------------------------------------------------------------------------
# Mutations used to confirm that the suites can fail


class _FlippedSlopePLQ(Q.PiecewiseLinearQuantizer):
    """Piecewise-linear quantizer with the sign of its inner slopes flipped."""

    def _slopes(self, *args):
        lo, hi = super()._slopes(*args)
        return -lo, -hi


MUTATIONS = {"slope_sign_flip": _FlippedSlopePLQ}

BINARY = Q.make_grid([-1.0, 1.0])
TERNARY = Q.make_grid([-1.0, 0.0, 1.0])
QUATERNARY = Q.make_grid([-1.0, -0.3, 0.3, 1.0])
GRIDS = {"binary": BINARY, "ternary": TERNARY, "quaternary": QUATERNARY}


def builtin_quantizers(mutation: str | None = None):
    """Named univariate quantizers covering every built-in variant."""
    plq_cls = MUTATIONS[mutation] if mutation else Q.PiecewiseLinearQuantizer
    out = {"identity": Q.Identity(), "shrink": Q.Shrink(0.5), "example43": Q.Example43(0.5, 1.0)}
    for gname, grid in GRIDS.items():
        out[f"projector/{gname}"] = Q.Projector(grid)
        out[f"projector_lower/{gname}"] = Q.Projector(grid, "lower")
        out[f"binary_relax/{gname}"] = Q.BinaryRelax(grid, 1.0)
        for rho, varrho, clip in ((0.1, 0.0, True), (0.0, 0.1, True), (0.1, 0.1, False),
                                  (0.05, 0.2, True), (0.3, 0.05, False)):
            spec = Q.PiecewiseLinear(plq_cls(grid, rho, varrho, clip))
            out[f"plq(rho={rho},varrho={varrho},clip={clip})/{gname}"] = spec
    out["average"] = Q.Average(((0.5, Q.Identity()), (0.5, Q.Projector(BINARY))))
    out["random_select"] = Q.RandomSelect((Q.Projector(TERNARY), Q.BinaryRelax(TERNARY, 2.0)), seed=3)
    return out


def _timed(suite, name, fn):
    t0 = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        passed, detail = False, f"{type(exc).__name__}: {exc}"
    return Check(suite, name, bool(passed), detail, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Suites


def quantizer_axioms(n_probes: int = 10_000, mutation: str | None = None, sharpness=(1.0, 10.0)):
    probes = np.linspace(-2.0, 2.0, n_probes)
    checks = []
    for name, spec in builtin_quantizers(mutation).items():
        def fn(spec=spec):
            bad = []
            for s in sharpness:
                rep = Q.check_prox_axioms(spec, probes, sharpness=s)
                if not rep.ok:
                    bad.append(f"s={s}: mono={rep.monotonicity_violations} fixed={rep.fixed_point_violations} "
                               f"closed={rep.closed_graph_violations} bounded={rep.bounded}")
            return not bad, "; ".join(bad) or f"{len(probes)} probes clean"
        checks.append(_timed("quantizer_axioms", name, fn))
    return checks


def special_cases(n_probes: int = 10_001):
    probes = np.linspace(-2.0, 2.0, n_probes)
    checks = []
    for mu in (0.1, 1.0, 10.0):
        for grid in (Q.make_grid([0.0, 1.0]), Q.make_grid([-1.0, 0.0, 1.0]), Q.make_grid([-2.0, -1.0, 0.0, 1.0])):
            def fn(mu=mu, grid=grid):
                # the piecewise-linear map lives on the grid hull; outside it clips
                x = np.linspace(grid.levels[0], grid.levels[-1], n_probes)
                plq = Q.PiecewiseLinearQuantizer(grid, 0.0, mu / (2 * (1 + mu)))
                ref = (x + mu * Q.project(grid, x)) / (1 + mu)
                err = float(np.max(np.abs(plq(x) - ref)))
                return err <= 1e-12, f"max |plq - binary_relax| = {err:.3g}"
            checks.append(_timed("special_cases", f"binary_relax mu={mu} levels={grid.levels}", fn))
    for gname, grid in GRIDS.items():
        def fn(grid=grid):
            plq = Q.PiecewiseLinearQuantizer(grid, 1e6, 1e6)
            off = probes[~np.isin(probes, grid.p)]
            err = float(np.max(np.abs(plq(off) - Q.project(grid, off))))
            return err == 0.0, f"max |plq - projector| = {err:.3g} off midpoints"
        checks.append(_timed("special_cases", f"projector limit {gname}", fn))
    return checks


def combinators(n_probes: int = 10_000):
    probes = np.linspace(-2.0, 2.0, n_probes)
    parts = (Q.Projector(TERNARY), Q.PiecewiseLinear(Q.PiecewiseLinearQuantizer(TERNARY, 0.1, 0.2)),
             Q.BinaryRelax(TERNARY, 3.0))
    alphas = (0.2, 0.3, 0.5)
    avg = Q.Average(tuple(zip(alphas, parts)))

    def exact():
        ref = sum(a * p(probes) for a, p in zip(alphas, parts))
        err = float(np.max(np.abs(avg(probes) - ref)))
        return err == 0.0, f"max deviation {err:.3g}"

    def proximal():
        rep = Q.check_prox_axioms(avg, probes)
        return rep.ok, f"monotonicity violations {rep.monotonicity_violations}"

    def product():
        spec = Q.PerGroup({"A": Q.Projector(BINARY), "B": Q.Identity()})
        w = {"A": probes.copy(), "B": probes.copy()}
        out = Q.apply(spec, w)
        ok = np.array_equal(out["A"], Q.project(BINARY, probes)) and np.array_equal(out["B"], probes)
        return ok, "per-group map applies each factor to its own group"

    def random_select():
        rs = Q.RandomSelect(parts, seed=11)
        a = [rs.index(k) for k in range(200)]
        b = [rs.index(k) for k in range(200)]
        ok = a == b and len(set(a)) == len(parts)
        ok = ok and all(Q.check_prox_axioms(rs.choices[rs.index(k)], probes[::10]).ok for k in range(5))
        return ok, "draws are a pure function of (seed, draw) and each draw is proximal"

    return [_timed("combinators", n, f) for n, f in
            (("average equals weighted sum", exact), ("average is proximal", proximal),
             ("per-group product", product), ("random selection", random_select))]


def _descriptors():
    return {
        "squared_norm": G.SquaredNorm(1.5),
        "scaled_sq_dist/ternary": G.ScaledSqDist(TERNARY, 2.0),
        "scaled_sq_dist/quaternary": G.ScaledSqDist(QUATERNARY, 0.7),
        "boxed_squared_norm": G.BoxedSquaredNorm(0.8, -0.5, 1.0),
    }


def prop_a2(n_probes: int = 100, seed: int = 0):
    rng = np.random.default_rng(seed)
    checks = []
    for name, desc in _descriptors().items():
        def fn(desc=desc):
            worst_env, worst_fd = 0.0, 0.0
            for _ in range(n_probes):
                mu = float(rng.uniform(0.1, 3.0))
                v = rng.uniform(-4.0, 4.0, 3)
                a = G.moreau_gradient(desc, mu, v)
                b = G.moreau_gradient_envelope(desc, mu, v)
                worst_env = max(worst_env, float(np.max(np.abs(a - b))))
                h = 1e-5
                fd = np.array([(G.moreau_value(desc, mu, v + h * e) - G.moreau_value(desc, mu, v - h * e)) / (2 * h)
                               for e in np.eye(3)])
                worst_fd = max(worst_fd, float(np.max(np.abs(fd - a))))
            ok = worst_env <= 1e-10 and worst_fd <= 1e-6
            return ok, f"prox route {worst_env:.2e}, finite differences {worst_fd:.2e}"
        checks.append(_timed("prop_a2", name, fn))
    return checks


def lemma_a1(n_sequences: int = 100, steps: int = 10, dim: int = 3, seed: int = 0):
    def fn():
        worst = 0.0
        for k in range(n_sequences):
            rng = np.random.default_rng([seed, k])
            etas = rng.uniform(0.0, 2.0, steps)
            zs = rng.standard_normal((steps, dim))
            ws = rng.standard_normal((steps + 1, dim))
            A = rng.standard_normal((dim, dim))
            g = (lambda x, A=A: float(np.sum(np.sin(A @ x)) + x @ x))
            res = D.lemma_a1_residual(etas, zs, ws, g, rng.standard_normal(dim), rng.standard_normal(dim))
            worst = max(worst, res)
        return worst <= 1e-9, f"max relative residual {worst:.2e} over {n_sequences} sequences"
    return [_timed("lemma_a1", "telescoping identity", fn)]


def _quadratic(seed, dim=3):
    rng = np.random.default_rng([seed, 1])
    A = rng.standard_normal((dim, dim))
    return P.Quadratic(A @ A.T / dim + 0.1 * np.eye(dim), rng.standard_normal(dim))


def da_equivalence(steps: int = 100, seeds=(0, 1, 2)):
    checks = []
    schedules = {"constant": S.StepSchedule("constant_eta", eta0=0.3),
                 "sqrt": S.StepSchedule("polynomial_eta", eta0=0.5, p=0.5),
                 "inv_t": S.StepSchedule("gcg_lambda_inv_t")}
    for dname, desc in _descriptors().items():
        for sname, sch in schedules.items():
            def fn(desc=desc, sch=sch):
                dev = max(G.da_equivalence_check(_quadratic(s), desc, sch, steps,
                                                 np.random.default_rng(s).uniform(-2, 2, 3)) for s in seeds)
                neg = min(G.da_equivalence_check(_quadratic(s), desc, sch, steps,
                                                 np.random.default_rng(s).uniform(-2, 2, 3), mu_scale=1.5)
                          for s in seeds)
                return dev <= 1e-12 and neg > 1e-6, f"deviation {dev:.2e}, perturbed-mu control {neg:.2e}"
            checks.append(_timed("da_equivalence", f"{dname}/{sname}", fn))
    return checks


def containment(steps: int = 1000, seed: int = 0):
    def fn():
        data = P.gen_blobs(P.SyntheticDataset(seed=seed, n_samples=200, n_features=4, n_classes=3))
        prob = P.MLP(data, hidden=(16,))
        sch = S.StepSchedule("constant_eta", eta0=0.1)
        q = Q.Projector(BINARY)
        bc = O.run(prob, "BC", q, sch, steps, seed=seed, batch_size=32)
        pc = O.run(prob, "PC", q, sch, steps, seed=seed, batch_size=32)
        same = all(
            all(np.array_equal(a.w_star[k], b.w_star[k]) and np.array_equal(a.w_quant[k], b.w_quant[k])
                for k in a.w_star)
            for a, b in zip(bc.snapshots, pc.snapshots))
        return same, f"{steps} steps bit-identical" if same else "trajectories differ"
    return [_timed("containment", "BC equals PC with projector", fn)]


def _example43_problem():
    return P.Quadratic(np.eye(1), np.zeros(1), w0=np.array([0.9]))


def example43_bc_tail(steps: int = 10_000, eta: float = 0.1, eps: float = 0.5, mu: float = 1.0):
    """Fixed-mu BC on ``l = w^2/2``; returns ``(max |w*|, min |w|)`` over the final quarter."""
    tr = O.run(_example43_problem(), "BC", Q.Example43(eps, mu), S.StepSchedule("constant_eta", eta0=eta), steps)
    tail = tr.snapshots[3 * steps // 4:]
    return (max(abs(float(s.w_star["w"][0])) for s in tail),
            min(abs(float(s.w_quant["w"][0])) for s in tail))


def example43_pc_average(steps: int = 10_000, eta0: float = 0.5, eps: float = 0.5, mu: float = 1.0):
    """``|w_bar_T|`` for PC with sharpness ``1/pi_{t-1}`` and ``eta_t = eta0/sqrt(t)``."""
    tr = O.run(_example43_problem(), "PC", Q.Example43(eps, mu),
               S.StepSchedule("polynomial_eta", eta0=eta0, p=0.5), steps)
    return abs(float(O.ergodic_average(tr, "eta")["w"][0]))


def example43(steps: int = 10_000, threshold: float = 0.3, avg_tol: float = 0.05):
    """Fixed-mu BC keeps jumping between the two levels; sharpened PC averages to zero."""
    def bc():
        w_star, w_q = example43_bc_tail(steps)
        ok = w_q > threshold and w_star > 0
        return ok, f"final quarter: min |P(w*)| = {w_q:.4f}, max |w*| = {w_star:.4f}"

    def pc():
        avg = example43_pc_average(steps)
        return avg < avg_tol, f"|ergodic average| = {avg:.4f} (needs < {avg_tol})"

    return [_timed("example43", "fixed-mu BC: quantized iterate stays away from 0", bc),
            _timed("example43", "sharpened PC: ergodic average near 0", pc)]


# -- bounds ----------------------------------------------------------------


def _bound_problems(seed):
    quad = _quadratic(seed, dim=3)
    data = P.gen_blobs(P.SyntheticDataset(seed=seed, n_samples=60, n_features=3, n_classes=2,
                                          class_separation=2.0))
    return {"quadratic": quad, "logistic": P.Logistic(data, l2=0.1)}


BOUND_SCHEDULES = {
    "constant": S.StepSchedule("constant_eta", eta0=0.1),
    "sqrt": S.StepSchedule("polynomial_eta", eta0=0.3, p=0.5),
    "inv_t": S.StepSchedule("gcg_lambda_inv_t"),
}


def _forms():
    return {"squared_norm": (D.squared_norm(1.0), G.SquaredNorm(1.0)),
            "scaled_sq_dist": (D.scaled_sq_dist(TERNARY, 1.0), G.Smoothed(G.ScaledSqDist(TERNARY, 1.0), 0.5))}


def _comparison(problem, form):
    """Hard-projected minimizer of the loss, a rough continuous minimizer otherwise."""
    if isinstance(problem, P.Quadratic):
        w = problem.optimum()["w"]
    else:
        w = np.zeros(problem.groups()["w"])
        for _ in range(500):
            w = w - 0.5 * problem.grad({"w": w})["w"]
    return {"w": Q.project(TERNARY, w)}


def bound_case(pname, fname, sname, seed, steps=200, gcg_steps=200):
    """Evaluate every bound on one cell; returns ``{label: BoundReport-like}``."""
    prob = _bound_problems(seed)[pname]
    form, desc = _forms()[fname]
    sch = BOUND_SCHEDULES[sname]
    d = prob.groups()["w"][0]
    w0 = {"w": np.random.default_rng([seed, 2]).uniform(-1, 1, d)}
    w = _comparison(prob, form)
    out = {}
    tr = O.run(prob, "PC", form.quantizer(), sch, steps, w_init=w0, keep_grads=True)
    out["thm51"] = D.thm51_check(tr, form, w)
    out["thm51[s=t/2]"] = D.thm51_check(tr, form, w, s=steps // 2)
    cor = D.cor52_eval(tr, prob, form, w)
    out.update({f"cor52/{k}": v for k, v in cor.items()})
    # mu_{t+1} = pi_t (1 + t/100): differs from the default coupling and keeps mu/pi nondecreasing
    tr_mu = O.run(prob, "PC", form.quantizer(), sch, steps, w_init=w0, keep_grads=True,
                  mu_rule=lambda st: st.pi * (1.0 + st.t / 100.0))
    out["thmA3"] = D.thmA3_check(tr_mu, form, w)
    # conditional gradient on the dual: lambda rule matched to the schedule family
    kind = "gcg_lambda_inv_t" if sname != "constant" else "gcg_lambda_two_over"
    run = G.run_gcg(prob, desc, kind, gcg_steps, np.random.default_rng([seed, 3]).uniform(-1, 1, d))
    out["thm41"] = G.thm41_bound_eval(run, prob, desc, w["w"])
    out["cor42"] = G.cor42_eval(run, prob, desc, w["w"])
    return out


def bounds(seeds=(0, 1, 2, 3, 4), steps: int = 200):
    checks = []
    for pname in ("quadratic", "logistic"):
        for fname in ("squared_norm", "scaled_sq_dist"):
            for sname in BOUND_SCHEDULES:
                def fn(pname=pname, fname=fname, sname=sname):
                    worst, failing = math.inf, []
                    for seed in seeds:
                        for label, rep in bound_case(pname, fname, sname, seed, steps).items():
                            rel = (rep.rhs - rep.lhs) / rep.scale
                            worst = min(worst, rel)
                            if not rep.holds(1e-9):
                                failing.append(f"{label}@seed{seed}")
                    return not failing, (f"min relative slack {worst:.2e}" if not failing
                                         else "violated: " + ", ".join(failing))
                checks.append(_timed("bounds", f"{pname}/{fname}/{sname}", fn))
    return checks


# -- rates -------------------------------------------------------------------


RATE_T = np.unique(np.logspace(2, 4, 30).astype(int))


def averaged_gap_exponent(T: int = 10_000):
    """Log-log slope of the conditional-gradient averaged gap with ``lambda_t = 1/(t+1)``."""
    prob = P.Quadratic(np.diag([1.0, 0.1]), np.array([1.0, 1.0]))
    desc = G.SquaredNorm(0.5)
    run = G.run_gcg(prob, desc, "gcg_lambda_inv_t", T, np.array([20.0, -20.0]))
    Hs = prob.H + desc.sigma * np.eye(2)
    opt = np.linalg.solve(Hs, prob.b)
    csum = np.cumsum(np.stack([it.w for it in run.iterates]), axis=0)
    ts = RATE_T[RATE_T <= T]
    gaps = []
    for t in ts:
        e = csum[t - 1] / t - opt
        gaps.append(0.5 * e @ Hs @ e)
    return float(np.polyfit(np.log(ts), np.log(gaps), 1)[0]), np.asarray(gaps)


def min_iterate_exponent(T: int = 10_000, eta: float = 0.1):
    """Log-log slope of ``min_{tau in [t/2, t]} f(w_tau) - f*`` for constant step size."""
    prob = P.Quadratic(np.diag([1.0, 0.1]), np.array([1.0, 1.0]), w0=np.zeros(2))
    form = D.squared_norm(0.5)
    tr = O.run(prob, "PC", form.quantizer(), S.StepSchedule("constant_eta", eta0=eta), T)
    Hs = prob.H + form.weight * np.eye(2)
    opt = np.linalg.solve(Hs, prob.b)
    # gap of w_tau is stored at snapshot tau - 1
    vals = np.array([0.5 * (s.w_quant["w"] - opt) @ Hs @ (s.w_quant["w"] - opt) for s in tr.snapshots])
    ts = RATE_T[RATE_T <= T]
    gaps = np.array([vals[t // 2 - 1:t].min() for t in ts])
    return float(np.polyfit(np.log(ts), np.log(gaps), 1)[0]), gaps


def rates(T: int = 10_000):
    def avg():
        k, _ = averaged_gap_exponent(T)
        return k <= -0.8, f"fitted exponent {k:.3f} (needs <= -0.8)"

    def mini():
        k, _ = min_iterate_exponent(T)
        return k <= -0.4, f"fitted exponent {k:.3f} (needs <= -0.4)"

    return [_timed("rates", "averaged conditional-gradient gap", avg),
            _timed("rates", "constant-step min-iterate gap", mini)]


SUITES = {
    "quantizer_axioms": quantizer_axioms,
    "special_cases": special_cases,
    "combinators": combinators,
    "prop_a2": prop_a2,
    "lemma_a1": lemma_a1,
    "da_equivalence": da_equivalence,
    "containment": containment,
    "bounds": bounds,
    "example43": example43,
    "rates": rates,
}


def run_suites(selector: str = "all", mutation: str | None = None):
    if mutation is not None and mutation not in MUTATIONS:
        raise KeyError(f"unknown mutation {mutation!r}; available: {', '.join(MUTATIONS)}")
    names = list(SUITES) if selector == "all" else [s.strip() for s in selector.split(",") if s.strip()]
    unknown = [n for n in names if n not in SUITES]
    if unknown or not names:
        raise KeyError(f"unknown suite {', '.join(unknown) or repr(selector)}; "
                       f"available: all, {', '.join(SUITES)}")
    out = []
    for n in names:
        if n == "quantizer_axioms":
            out.extend(quantizer_axioms(mutation=mutation))
        else:
            out.extend(SUITES[n]())
    return out

"""Acceptance gate: one test per criterion, each at its stated tolerance.

A per-criterion PASS/FAIL summary is printed at the end of the pytest run.
"""

import time

import numpy as np
import pytest

from proxconnect import gcg as G
from proxconnect import optimizers as O
from proxconnect import problems as P
from proxconnect import quantizers as Q
from proxconnect import schedules as S
from proxconnect import verify as V
from proxconnect.cli import main

criterion = pytest.mark.criterion


def _require(checks, record_property):
    bad = [f"{c.name}: {c.detail}" for c in checks if not c.passed]
    record_property("detail", f"{len(checks) - len(bad)}/{len(checks)} checks passed"
                    + (f"; first failure {bad[0]}" if bad else ""))
    assert not bad, bad


@criterion(1, "quantizer axioms, 1e4 probes on [-2, 2], every built-in quantizer, < 1 s")
def test_criterion_01_quantizer_axioms(record_property):
    probes = np.linspace(-2.0, 2.0, 10_000)
    t0 = time.perf_counter()
    bad = []
    quantizers = V.builtin_quantizers()
    for name, spec in quantizers.items():
        for s in (1.0, 10.0):
            rep = Q.check_prox_axioms(spec, probes, sharpness=s)
            if rep.monotonicity_violations or rep.fixed_point_violations or not rep.ok:
                bad.append(f"{name} s={s}")
    secs = time.perf_counter() - t0
    record_property("detail", f"{len(quantizers)} quantizers, {len(bad)} with violations, {secs:.2f} s")
    assert not bad and secs < 1.0


@criterion(2, "piecewise-linear special cases: binary-relax to 1e-12, projector limit off midpoints")
def test_criterion_02_special_cases(record_property):
    worst = 0.0
    for mu in (0.1, 1.0, 10.0):
        for levels in ([0.0, 1.0], [-1.0, 0.0, 1.0], [-2.0, -1.0, 0.0, 1.0]):
            grid = Q.make_grid(levels)
            x = np.linspace(levels[0], levels[-1], 10_001)
            plq = Q.PiecewiseLinearQuantizer(grid, 0.0, mu / (2 * (1 + mu)))
            worst = max(worst, float(np.max(np.abs(plq(x) - (x + mu * Q.project(grid, x)) / (1 + mu)))))
    probes = np.linspace(-2.0, 2.0, 10_001)
    proj_err = 0.0
    for grid in V.GRIDS.values():
        off = probes[~np.isin(probes, grid.p)]
        plq = Q.PiecewiseLinearQuantizer(grid, 1e6, 1e6)
        proj_err = max(proj_err, float(np.max(np.abs(plq(off) - Q.project(grid, off)))))
    record_property("detail", f"binary-relax max error {worst:.2e}, projector max error {proj_err:.2e}")
    assert worst <= 1e-12 and proj_err == 0.0


@criterion(3, "telescoping identity residual <= 1e-9 on 100 random sequences")
def test_criterion_03_lemma_a1(record_property):
    _require(V.lemma_a1(n_sequences=100, steps=10, dim=3), record_property)


@criterion(4, "Moreau gradient: prox route to 1e-10, finite differences to 1e-6, 100 probes per form")
def test_criterion_04_moreau_gradient(record_property):
    _require(V.prop_a2(n_probes=100), record_property)


@criterion(5, "GCG / dual averaging / PC agree to 1e-12 over 100 steps; perturbed mu deviates > 1e-6")
def test_criterion_05_equivalence_chain(record_property):
    _require(V.da_equivalence(steps=100), record_property)


@criterion(6, "PC with projector reproduces BC bit-identically over 1e3 steps on blobs-MLP")
def test_criterion_06_containment(record_property):
    _require(V.containment(steps=1000), record_property)


@criterion(7, "fixed-mu BC: |w*| > 0.3 in final quarter; sharpened PC: |ergodic average| < 0.05")
def test_criterion_07_example43_dichotomy(record_property):
    w_star_max, w_quant_min = V.example43_bc_tail(10_000, eta=0.1, eps=0.5)
    avg = V.example43_pc_average(10_000)
    record_property("detail", f"BC final quarter max |w*| = {w_star_max:.4f} (min |P(w*)| = {w_quant_min:.4f}); "
                              f"PC |ergodic average| = {avg:.4f}")
    assert avg < 0.05
    assert w_star_max > 0.3


@criterion(8, "convergence inequalities over problems x forms x 3 schedules x 5 seeds, < 2 min")
def test_criterion_08_bounds(record_property):
    t0 = time.perf_counter()
    checks = V.bounds(seeds=(0, 1, 2, 3, 4))
    secs = time.perf_counter() - t0
    _require(checks, record_property)
    record_property("detail", f"{secs:.1f} s")
    assert secs < 120


@criterion(9, "rates: averaged gap exponent <= -0.8, min-iterate gap exponent <= -0.4")
def test_criterion_09_rates(record_property):
    k_avg, _ = V.averaged_gap_exponent(10_000)
    k_min, _ = V.min_iterate_exponent(10_000)
    record_property("detail", f"averaged gap exponent {k_avg:.3f}, min-iterate exponent {k_min:.3f}")
    assert k_avg <= -0.8 and k_min <= -0.4


# -- criterion 10 ------------------------------------------------------------------
# setting and rho0 frozen from tests/calibration/blobs_results.txt

BLOBS = dict(n_samples=300, n_features=8, n_classes=4, class_separation=3.0)
HIDDEN, ETA, STEPS, BATCH, RHO0, SEEDS = 16, 0.1, 2000, 32, 0.005, (0, 1, 2)
GRID_LEVELS = {"binary": [-1.0, 1.0], "ternary": [-1.0, 0.0, 1.0], "quaternary": [-1.0, -0.3, 0.3, 1.0]}


def _blobs_run(kind, quantizer, seed):
    prob = P.MLP(P.gen_blobs(P.SyntheticDataset(seed=seed, **BLOBS)), hidden=(HIDDEN,))
    tr = O.run(prob, kind, quantizer, S.StepSchedule("constant_eta", eta0=ETA), STEPS, seed=seed,
               batch_size=BATCH)
    init = P.accuracy(prob, Q.hard_quantize(quantizer, prob.init(seed)))
    return P.accuracy(prob, tr.terminal), init


@criterion(10, "blobs-MLP: PC >= PTQ on every grid, PQ gain < 1%, binary PC within 10 pp of full precision, < 5 min")
def test_criterion_10_blobs_behaviour(record_property):
    t0 = time.perf_counter()
    fp = np.mean([_blobs_run("PC", Q.Identity(), s)[0] for s in SEEDS])
    parts, ok = [f"FP {fp:.4f}"], True
    for gname, levels in GRID_LEVELS.items():
        grid = Q.make_grid(levels)
        plq = Q.PiecewiseLinear(Q.PiecewiseLinearQuantizer(grid, RHO0, RHO0))
        pc = np.mean([_blobs_run("PC", plq, s)[0] for s in SEEDS])
        ptq = np.mean([_blobs_run("PTQ", plq, s)[0] for s in SEEDS])
        pq_gain = max(a - b for a, b in (_blobs_run("PQ", Q.Projector(grid), s) for s in SEEDS))
        ok &= pc >= ptq and pq_gain < 0.01
        if gname == "binary":
            ok &= fp - pc <= 0.10
        parts.append(f"{gname}: PC {pc:.4f} PTQ {ptq:.4f} PQ gain {pq_gain:+.4f}")
    secs = time.perf_counter() - t0
    record_property("detail", "; ".join(parts) + f"; {secs:.0f} s")
    assert ok and secs < 300


@criterion(11, "repeated runs byte-identical; checkpoint resume equals uninterrupted run")
def test_criterion_11_determinism(tmp_path, record_property):
    base = ["run", "--set", "problem.kind=mlp", "--set", "quantizer.levels=-1,0,1",
            "--set", "optimizer.batch_size=32", "--set", "run.steps=300"]
    for d in ("a", "b", "c"):
        assert main(base + ["--out", str(tmp_path / d)] + (["--set", "run.steps=137"] if d == "c" else [])) == 0
    assert main(base + ["--out", str(tmp_path / "c"), "--resume"]) == 0
    same = {name: (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
            == (tmp_path / "c" / name).read_bytes()
            for name in ("metrics.csv", "checkpoint.pckpt")}
    # same check directly on the dual-averaging iterates
    q = np.random.default_rng(0).standard_normal(3)
    prob = P.Quadratic(np.diag([1.0, 0.5, 2.0]), q)
    desc = G.ScaledSqDist(Q.make_grid([-1, 0, 1]), 1.0)
    r1 = G.run_gcg(prob, desc, "gcg_lambda_inv_t", 200, q)
    r2 = G.run_gcg(prob, desc, "gcg_lambda_inv_t", 200, q)
    gcg_same = all(np.array_equal(a.w_star, b.w_star) and np.array_equal(a.w, b.w)
                   for a, b in zip(r1.iterates, r2.iterates))
    record_property("detail", f"metrics/checkpoint identical: {same}; GCG repeat identical: {gcg_same}")
    assert all(same.values()) and gcg_same

"""Command-line entry point: ``proxconnect run|sweep|verify|quantize``.

Exit codes: 0 success, 1 usage or config error, 2 numeric divergence,
3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import checkpoint as C
from . import config as K
from . import optimizers as O
from . import problems as P
from . import quantizers as Q
from . import verify as V

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_VERIFY = 0, 1, 2, 3

METRIC_COLUMNS = ("t", "eta", "lambda", "pi", "sharpness", "loss_continuous", "loss_quantized",
                  "grad_norm", "accuracy_quantized")
CHECKPOINT_NAME = "checkpoint.pckpt"
METRICS_NAME = "metrics.csv"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fmt(x) -> str:
    x = float(x)
    return repr(x) if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))


def _safe(fn, *args) -> float:
    try:
        return float(fn(*args))
    except (FloatingPointError, OverflowError, ValueError):
        return math.nan


def _accuracy(problem, w) -> float:
    if not hasattr(problem, "predict"):
        return math.nan
    return _safe(P.accuracy, problem, w)


def metrics_row(problem, snap) -> list[str]:
    with np.errstate(all="ignore"):
        vals = (snap.t, snap.eta, snap.lam, snap.pi, snap.sharpness,
                _safe(problem.loss, snap.w_star), _safe(problem.loss, snap.w_quant),
                snap.grad_norm, _accuracy(problem, snap.w_quant))
    return [str(vals[0])] + [_fmt(v) for v in vals[1:]]


# ---------------------------------------------------------------------------
# run


def _run_options(cfg):
    return dict(
        batch_size=cfg["optimizer.batch_size"],
        sharpness=cfg["schedule.sharpness"],
        mu_rule=K.mu_rule(cfg),
        hard_quantize_at=cfg["run.hard_quantize_at"],
        divergence_bound=cfg["run.divergence_bound"],
    )


def _existing_rows(path: Path, upto: int):
    """Header-checked metric rows with ``t <= upto`` from a previous run."""
    if not path.exists():
        raise K.ConfigError(f"cannot resume: {path} is missing")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != METRIC_COLUMNS:
        raise K.ConfigError(f"cannot resume: {path} has unexpected columns")
    return [r for r in rows[1:] if int(r[0]) <= upto]


def execute(cfg, out: Path, resume: bool = False):
    """Run one configured experiment into ``out``.

    Returns ``(trajectory_final_state, terminal_weights, problem)``; raises
    :class:`~proxconnect.optimizers.DivergenceError` after flushing the
    metrics written so far.
    """
    problem = K.build_problem(cfg)
    quantizer = K.build_quantizer(cfg, problem.groups())
    schedule = K.build_schedule(cfg)
    kind, steps, seed = cfg["optimizer.kind"], cfg["run.steps"], cfg["run.seed"]
    if kind not in O.KINDS:
        raise K.ConfigError(f"optimizer.kind: unknown kind {kind!r} ({', '.join(O.KINDS)})")
    if steps < 0:
        raise K.ConfigError("run.steps: must be nonnegative")
    every = cfg["run.checkpoint_every"]
    opts = _run_options(cfg)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, metrics = out / CHECKPOINT_NAME, out / METRICS_NAME

    state, kept = None, []
    if resume:
        state = C.load(ckpt)
        if state.optimizer_kind != kind or state.rng_seed != seed:
            raise K.ConfigError(f"cannot resume: checkpoint is {state.optimizer_kind} seed {state.rng_seed}, "
                                f"config is {kind} seed {seed}")
        if state.step > steps:
            raise K.ConfigError(f"cannot resume: checkpoint step {state.step} exceeds run.steps {steps}")
        kept = _existing_rows(metrics, state.step)

    with metrics.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        writer.writerows(kept)
        fh.flush()

        def on_snapshot(snap):
            # a resumed chunk starts with the checkpointed state, already written
            if state is not None and snap.t == state.step:
                return
            writer.writerow(metrics_row(problem, snap))
            fh.flush()

        done = state.step if state is not None else 0
        terminal = None
        while True:
            chunk = steps - done if every <= 0 else min(every, steps - done)
            try:
                traj = O.run(problem, kind, quantizer, schedule, chunk, seed, state=state,
                             on_snapshot=on_snapshot, **opts)
            finally:
                fh.flush()
            state, terminal = traj.final_state, traj.terminal
            done = state.step
            C.save(ckpt, state)
            if done >= steps:
                break
    return state, terminal, problem


def cmd_run(args) -> int:
    cfg = _config(args)
    out = Path(args.out or cfg["run.out"])
    try:
        state, terminal, problem = execute(cfg, out, resume=args.resume)
    except O.DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    line = f"{cfg['optimizer.kind']}: {state.step} steps, final loss {_fmt(_safe(problem.loss, terminal))}"
    if hasattr(problem, "predict"):
        line += f", hard-quantized accuracy {_fmt(P.accuracy(problem, terminal))}"
    print(line)
    print(f"wrote {out / METRICS_NAME} and {out / CHECKPOINT_NAME}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def _sweep_cell(values: dict, out: str):
    """Worker: one (kind, rho0, seed) run; returns final hard-quantized accuracy or nan."""
    cfg = K.Config(values)
    try:
        _, terminal, problem = execute(cfg, Path(out))
    except O.DivergenceError:
        return math.nan
    return P.accuracy(problem, terminal)


def sweep_grid(cfg):
    kinds, rhos, seeds = cfg["sweep.kinds"], cfg["sweep.rho0"], cfg["sweep.seeds"]
    if not kinds or not rhos or not seeds:
        raise K.ConfigError("sweep: empty grid (sweep.kinds, sweep.rho0 and sweep.seeds must be nonempty)")
    bad = [k for k in kinds if k not in O.KINDS]
    if bad:
        raise K.ConfigError(f"sweep.kinds: unknown kinds {bad} ({', '.join(O.KINDS)})")
    return [(k, r) for k in kinds for r in rhos], list(seeds)


def cmd_sweep(args) -> int:
    cfg = _config(args)
    cells, seeds = sweep_grid(cfg)
    if not hasattr(K.build_problem(cfg), "predict"):
        raise K.ConfigError("sweep: problem.kind must be a classification problem (logistic, mlp)")
    out = Path(args.out or cfg["run.out"])
    jobs = []
    for kind, rho0 in cells:
        for seed in seeds:
            c = cfg.copy()
            c.values.update({"optimizer.kind": kind, "quantizer.rho0": rho0, "run.seed": seed})
            jobs.append(((kind, rho0), c.values, str(out / f"{kind}_rho0={rho0!r}" / f"seed{seed}")))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            accs = list(pool.map(_sweep_cell, [j[1] for j in jobs], [j[2] for j in jobs]))
    else:
        accs = [_sweep_cell(values, d) for _, values, d in jobs]
    by_cell = {cell: [] for cell in cells}
    for (cell, _, _), acc in zip(jobs, accs):
        by_cell[cell].append(acc)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for (kind, rho0), vals in by_cell.items():
        a = np.asarray(vals, dtype=float)
        std = float(np.std(a, ddof=1)) if a.size > 1 else 0.0
        rows.append((kind, rho0, a.size, float(np.mean(a)), std))
    with (out / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("kind", "rho0", "n_seeds", "accuracy_mean", "accuracy_std"))
        for kind, rho0, n, mean, std in rows:
            w.writerow((kind, _fmt(rho0), n, _fmt(mean), _fmt(std)))
    print(f"{'kind':5s} {'rho0':>10s} {'seeds':>5s} {'accuracy':>18s}")
    for kind, rho0, n, mean, std in rows:
        print(f"{kind:5s} {rho0:10.4g} {n:5d} {100 * mean:8.2f} +- {100 * std:6.2f}")
    diverged = sum(math.isnan(a) for a in accs)
    if diverged:
        print(f"{diverged} run(s) diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    try:
        checks = V.run_suites(args.suite, mutation=args.mutation)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.suite}/{c.name}: {c.detail} [{c.seconds:.2f}s]")
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "verify.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("suite", "check", "passed", "detail"))
            for c in checks:
                w.writerow((c.suite, c.name, int(c.passed), c.detail))
    return EXIT_VERIFY if failed else EXIT_OK


# ---------------------------------------------------------------------------
# quantize


def cmd_quantize(args) -> int:
    cfg = _config(args)
    if not args.checkpoint:
        raise UsageError("quantize: --checkpoint is required")
    if not args.out:
        raise UsageError("quantize: --out is required")
    state = C.load(args.checkpoint)
    try:
        s = K.parse_float(args.sharpness)
    except ValueError:
        raise UsageError(f"--sharpness: not a number: {args.sharpness!r}") from None
    if not s > 0:
        raise UsageError("--sharpness must be positive")
    spec = K.build_quantizer(cfg, state.w_star)
    if math.isinf(s):
        state.w_star, state.w_quant = Q.hard_quantize(spec, state.w_star), Q.hard_quantize(spec, state.w_quant)
    else:
        state.w_star, state.w_quant = Q.apply(spec, state.w_star, s), Q.apply(spec, state.w_quant, s)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    C.save(out, state)
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _config(args):
    cfg = K.load(args.config, args.set or ())
    if args.seed is not None:
        cfg.values["run.seed"] = args.seed
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="proxconnect", description="Quantized training experiments and verification.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_help):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--out", help=out_help)

    p = sub.add_parser("run", help="train one configuration")
    common(p, "output directory (default run.out)")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="grid over optimizer kinds, rho0 and seeds")
    common(p, "output directory (default run.out)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("verify", help="run verification suites")
    p.add_argument("--suite", default="all", help="'all' or comma-separated suite names")
    p.add_argument("--mutation", choices=sorted(V.MUTATIONS), help="inject a known defect")
    p.add_argument("--out", help="directory for verify.csv")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("quantize", help="apply a quantizer to a checkpoint")
    common(p, "output checkpoint path")
    p.add_argument("--checkpoint", help="input checkpoint")
    p.add_argument("--sharpness", default="inf", help="quantizer sharpness; inf projects to the grid")
    p.set_defaults(fn=cmd_quantize)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (K.ConfigError, C.CheckpointError, P.CSVFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Versioned text checkpoints.

Layout::

    PCKPT 1
    <key> <value>             schedule state, step, seed, kind
    shape <group> <dims...>
    group <name> <count>
    <value>                   one per line, 17 significant digits

Weight groups are stored as ``w_star.<name>`` and ``w_quant.<name>``.
Seventeen significant digits round-trip every double exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .optimizers import TrainState
from .schedules import ScheduleState

__all__ = ["CheckpointError", "dumps", "loads", "save", "load"]

MAGIC = "PCKPT 1"
_SCHED_FIELDS = ("t", "eta", "lam", "pi", "pi_prev", "mu", "cumulative_eta")


class CheckpointError(ValueError):
    pass


def _fmt(x: float) -> str:
    return "%.17g" % x


def dumps(state: TrainState) -> str:
    lines = [MAGIC,
             f"kind {state.optimizer_kind}",
             f"step {state.step}",
             f"rng.seed {state.rng_seed}",
             f"rng.draw {state.step}"]
    for f in _SCHED_FIELDS:
        v = getattr(state.schedule, f)
        lines.append(f"schedule.{f} {v if f == 't' else _fmt(v)}")
    for prefix, group in (("w_star", state.w_star), ("w_quant", state.w_quant)):
        for name, arr in group.items():
            arr = np.asarray(arr, dtype=float)
            lines.append(f"shape {prefix}.{name} " + " ".join(str(d) for d in arr.shape))
            lines.append(f"group {prefix}.{name} {arr.size}")
            lines.extend(_fmt(v) for v in arr.ravel().tolist())
    return "\n".join(lines) + "\n"


def loads(text: str) -> TrainState:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise CheckpointError(f"not a checkpoint: expected header {MAGIC!r}")
    meta, shapes, groups = {}, {}, {}
    i = 1
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        parts = line.split()
        if parts[0] == "shape":
            shapes[parts[1]] = tuple(int(d) for d in parts[2:])
        elif parts[0] == "group":
            if len(parts) != 3:
                raise CheckpointError(f"line {i}: malformed group header")
            name, count = parts[1], int(parts[2])
            if i + count > len(lines):
                raise CheckpointError(f"group {name}: expected {count} values, file ends early")
            try:
                vals = np.array([float(v) for v in lines[i:i + count]], dtype=float)
            except ValueError as exc:
                raise CheckpointError(f"group {name}: {exc}") from None
            groups[name] = vals.reshape(shapes.get(name, (count,)))
            i += count
        elif len(parts) == 2:
            meta[parts[0]] = parts[1]
        else:
            raise CheckpointError(f"line {i}: cannot parse {line!r}")
    try:
        sched = ScheduleState(**{f: (int(meta[f"schedule.{f}"]) if f == "t" else float(meta[f"schedule.{f}"]))
                                 for f in _SCHED_FIELDS})
        w_star = {k.split(".", 1)[1]: v for k, v in groups.items() if k.startswith("w_star.")}
        w_quant = {k.split(".", 1)[1]: v for k, v in groups.items() if k.startswith("w_quant.")}
        return TrainState(w_star=w_star, w_quant=w_quant, schedule=sched, step=int(meta["step"]),
                          rng_seed=int(meta["rng.seed"]), optimizer_kind=meta["kind"])
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing {exc.args[0]!r}") from None


def save(path, state: TrainState) -> None:
    Path(path).write_text(dumps(state), encoding="utf-8")


def load(path) -> TrainState:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return loads(text)

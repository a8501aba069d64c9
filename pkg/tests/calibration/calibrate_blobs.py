"""Calibration sweep for the blobs-MLP behavioural acceptance test.

Run ``python tests/calibration/calibrate_blobs.py > tests/calibration/blobs_results.txt``.
Every quantized group (weights and biases) is quantized. Prints, per dataset
setting and grid, the 3-seed mean final hard-quantized accuracy of PTQ and of
PC at several ``rho0``, plus the PQ gain over initialization.
"""

import sys
import time

import numpy as np

from proxconnect import optimizers as O
from proxconnect import problems as P
from proxconnect import quantizers as Q
from proxconnect import schedules as S

GRIDS = {"binary": [-1.0, 1.0], "ternary": [-1.0, 0.0, 1.0], "quaternary": [-1.0, -0.3, 0.3, 1.0]}
SEEDS = (0, 1, 2)
ETA, STEPS, BATCH = 0.1, 2000, 32


def problem(seed, n, features, classes, sep, hidden):
    data = P.gen_blobs(P.SyntheticDataset(seed=seed, n_samples=n, n_features=features,
                                          n_classes=classes, class_separation=sep))
    return P.MLP(data, hidden=(hidden,))


def quantizer(kind, levels, rho0):
    grid = Q.make_grid(levels)
    if kind == "PQ":
        return Q.Projector(grid)
    if kind == "FP":
        return Q.Identity()
    return Q.PiecewiseLinear(Q.PiecewiseLinearQuantizer(grid, rho0, rho0))


def accuracies(kind, levels, rho0, setting):
    final, init = [], []
    for seed in SEEDS:
        prob = problem(seed, *setting)
        q = quantizer(kind, levels, rho0)
        tr = O.run(prob, "PC" if kind == "FP" else kind, q, S.StepSchedule("constant_eta", eta0=ETA),
                   STEPS, seed=seed, batch_size=BATCH)
        final.append(P.accuracy(prob, tr.terminal))
        init.append(P.accuracy(prob, Q.hard_quantize(q, prob.init(seed))))
    return np.array(final), np.array(init)


def main():
    settings = [(300, 4, 3, 3.0, 16), (300, 8, 4, 2.0, 16), (300, 8, 4, 3.0, 16)]
    for setting in settings:
        t0 = time.time()
        fp, _ = accuracies("FP", [-1.0, 1.0], 0.0, setting)
        print(f"setting (n, features, classes, separation, hidden) = {setting}")
        print(f"  FP mean={fp.mean():.4f} per-seed={np.round(fp, 4).tolist()}")
        for g, levels in GRIDS.items():
            ptq, _ = accuracies("PTQ", levels, 0.0, setting)
            pq, pq0 = accuracies("PQ", levels, 0.0, setting)
            parts = [f"PTQ={ptq.mean():.4f}", f"PQgain={np.max(pq - pq0):+.4f}"]
            for rho0 in (0.005, 0.02, 0.1):
                pc, _ = accuracies("PC", levels, rho0, setting)
                parts.append(f"PC[{rho0}]={pc.mean():.4f}")
            print(f"  {g:10s} " + " ".join(parts))
        print(f"  ({time.time() - t0:.0f} s)")
        sys.stdout.flush()


if __name__ == "__main__":
    main()

"""Desk-scale objectives with exact and minibatch gradients.

A problem exposes ``loss(w, idx=None)`` and ``grad(w, idx=None)`` over a dict
of named weight groups. ``idx=None`` means the full batch; an index array
selects a minibatch and returns the mean over those samples, so the sampled
gradient is unbiased under uniform sampling.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import weights as W

__all__ = [
    "Dataset",
    "SyntheticDataset",
    "gen_blobs",
    "load_csv",
    "CSVFormatError",
    "minibatch_indices",
    "Quadratic",
    "LeastSquares",
    "Logistic",
    "MLP",
    "accuracy",
]


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.ndim != 1 or len(self.X) != len(self.y):
            raise ValueError(f"inconsistent dataset shapes {self.X.shape} / {self.y.shape}")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError("labels outside the declared class range")

    def __len__(self):
        return len(self.y)


@dataclass(frozen=True)
class SyntheticDataset:
    seed: int = 0
    n_samples: int = 200
    n_features: int = 2
    n_classes: int = 2
    class_separation: float = 3.0


def gen_blobs(spec: SyntheticDataset) -> Dataset:
    """Gaussian blobs with unit covariance around scaled simplex vertices.

    Class ``k`` is centred at ``separation * (e_k - 1/C)`` embedded in the
    first ``n_classes`` coordinates. Labels are balanced and shuffled.
    """
    if spec.n_samples <= 0 or spec.n_features <= 0:
        raise ValueError("sizes must be positive")
    if spec.n_classes < 2:
        raise ValueError("need at least two classes")
    if spec.n_features < spec.n_classes:
        raise ValueError("n_features must be at least n_classes")
    C = spec.n_classes
    means = np.zeros((C, spec.n_features))
    means[:, :C] = spec.class_separation * (np.eye(C) - 1.0 / C)
    rng = np.random.default_rng(spec.seed)
    y = rng.permutation(np.arange(spec.n_samples) % C)
    X = means[y] + rng.standard_normal((spec.n_samples, spec.n_features))
    return Dataset(X=X, y=y.astype(np.int64), n_classes=C)


class CSVFormatError(ValueError):
    pass


def load_csv(path, n_classes: int | None = None, header: bool = False) -> Dataset:
    """Read numeric feature columns followed by an integer label column."""
    rows, labels = [], []
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise CSVFormatError(f"line {lineno}: need at least one feature and a label")
            if rows and len(row) - 1 != len(rows[0]):
                raise CSVFormatError(
                    f"line {lineno}: expected {len(rows[0]) + 1} columns, got {len(row)}")
            feats = []
            for col, cell in enumerate(row[:-1], start=1):
                try:
                    feats.append(float(cell))
                except ValueError:
                    raise CSVFormatError(f"line {lineno}, column {col}: not a number: {cell!r}") from None
            try:
                lab = int(row[-1])
            except ValueError:
                raise CSVFormatError(
                    f"line {lineno}, column {len(row)}: label is not an integer: {row[-1]!r}") from None
            if lab < 0 or (n_classes is not None and lab >= n_classes):
                raise CSVFormatError(f"line {lineno}: label {lab} outside class range")
            rows.append(feats)
            labels.append(lab)
    if not rows:
        raise CSVFormatError(f"{path}: no data rows")
    y = np.asarray(labels, dtype=np.int64)
    C = n_classes if n_classes is not None else max(2, int(y.max()) + 1)
    return Dataset(X=np.asarray(rows, dtype=float), y=y, n_classes=C)


def minibatch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Indices for step ``step >= 1``: per-epoch permutation keyed on ``(seed, epoch)``."""
    if batch_size <= 0 or batch_size >= n:
        return np.arange(n)
    per_epoch = -(-n // batch_size)
    epoch, j = divmod(step - 1, per_epoch)
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return perm[j * batch_size:(j + 1) * batch_size]


def _finite(value, what="loss"):
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"non-finite {what}")
    return value


class Problem:
    convex = False
    n_samples = 0

    def groups(self) -> dict:
        raise NotImplementedError

    def _check(self, w):
        shapes = self.groups()
        if list(w) != list(shapes) or any(np.shape(w[k]) != shapes[k] for k in shapes):
            raise ValueError(f"weight shapes {[(k, np.shape(v)) for k, v in w.items()]} "
                             f"do not match problem groups {list(shapes.items())}")

    def init(self, seed: int = 0) -> W.Weights:
        return {k: np.zeros(s) for k, s in self.groups().items()}


@dataclass
class Quadratic(Problem):
    """``0.5 w'Hw - b'w``; deterministic, so any sample selector is ignored."""

    H: np.ndarray
    b: np.ndarray
    w0: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.H.shape != (len(self.b), len(self.b)):
            raise ValueError("H must be square and match b")
        if not np.allclose(self.H, self.H.T):
            raise ValueError("H must be symmetric")
        if np.linalg.eigvalsh(self.H).min() < -1e-12:
            raise ValueError("H must be positive semidefinite")

    convex = True

    def groups(self):
        return {"w": (len(self.b),)}

    def init(self, seed=0):
        if self.w0 is not None:
            return {"w": np.array(self.w0, dtype=float).reshape(len(self.b))}
        return {"w": np.random.default_rng(seed).uniform(-1, 1, len(self.b))}

    def loss(self, w, idx=None):
        self._check(w)
        x = w["w"]
        # overflow is reported by _finite below
        with np.errstate(over="ignore", invalid="ignore"):
            val = 0.5 * x @ self.H @ x - self.b @ x
        return float(_finite(val))

    def grad(self, w, idx=None):
        self._check(w)
        return {"w": _finite(self.H @ w["w"] - self.b, "gradient")}

    def optimum(self):
        return {"w": np.linalg.solve(self.H, self.b)}


@dataclass
class LeastSquares(Problem):
    """``(1/2n) ||A w - y||^2``."""

    A: np.ndarray
    y: np.ndarray
    convex = True

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.A.ndim != 2 or len(self.A) != len(self.y):
            raise ValueError("A and y shapes disagree")

    @property
    def n_samples(self):
        return len(self.y)

    def groups(self):
        return {"w": (self.A.shape[1],)}

    def loss(self, w, idx=None):
        self._check(w)
        A, y = (self.A, self.y) if idx is None else (self.A[idx], self.y[idx])
        r = A @ w["w"] - y
        return float(_finite(0.5 * np.mean(r * r)))

    def grad(self, w, idx=None):
        self._check(w)
        A, y = (self.A, self.y) if idx is None else (self.A[idx], self.y[idx])
        return {"w": _finite(A.T @ (A @ w["w"] - y) / len(y), "gradient")}


def _log1pexp(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


@dataclass
class Logistic(Problem):
    """Binary logistic regression with an optional l2 term; labels in {0, 1}."""

    data: Dataset
    l2: float = 0.0
    convex = True

    def __post_init__(self):
        if self.data.n_classes != 2:
            raise ValueError("Logistic is binary; use MLP for more classes")

    @property
    def n_samples(self):
        return len(self.data)

    def groups(self):
        return {"w": (self.data.X.shape[1],)}

    def _xy(self, idx):
        if idx is None:
            return self.data.X, self.data.y
        return self.data.X[idx], self.data.y[idx]

    def loss(self, w, idx=None):
        self._check(w)
        X, y = self._xy(idx)
        z = X @ w["w"]
        val = np.mean(_log1pexp(z) - y * z) + 0.5 * self.l2 * (w["w"] @ w["w"])
        return float(_finite(val))

    def grad(self, w, idx=None):
        self._check(w)
        X, y = self._xy(idx)
        z = X @ w["w"]
        g = X.T @ (_sigmoid(z) - y) / len(y) + self.l2 * w["w"]
        return {"w": _finite(g, "gradient")}

    def predict(self, w):
        return (self.data.X @ w["w"] > 0).astype(np.int64)


@dataclass
class MLP(Problem):
    """Fully connected network with softmax cross-entropy and manual backprop.

    Groups are ``W1, b1, ..., WL, bL``; ``Wk`` has shape ``(out, in)``.
    """

    data: Dataset
    hidden: tuple[int, ...] = (16,)
    activation: str = "tanh"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not self.hidden:
            raise ValueError("MLP needs at least one hidden layer")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_samples(self):
        return len(self.data)

    @property
    def sizes(self):
        return (self.data.X.shape[1], *self.hidden, self.data.n_classes)

    def groups(self):
        out = {}
        for i, (a, b) in enumerate(zip(self.sizes, self.sizes[1:]), start=1):
            out[f"W{i}"] = (b, a)
            out[f"b{i}"] = (b,)
        return out

    def init(self, seed=0):
        rng = np.random.default_rng(seed)
        out = {}
        for i, (a, b) in enumerate(zip(self.sizes, self.sizes[1:]), start=1):
            lim = math.sqrt(6.0 / (a + b))
            out[f"W{i}"] = rng.uniform(-lim, lim, (b, a))
            out[f"b{i}"] = np.zeros(b)
        return out

    def _act(self, z):
        return np.tanh(z) if self.activation == "tanh" else np.maximum(z, 0.0)

    def _dact(self, z, a):
        if self.activation == "tanh":
            return 1.0 - a * a
        return (z > 0).astype(float)

    def _forward(self, w, X):
        n_layers = len(self.sizes) - 1
        acts, pre = [X], []
        h = X
        for i in range(1, n_layers + 1):
            z = h @ w[f"W{i}"].T + w[f"b{i}"]
            pre.append(z)
            h = self._act(z) if i < n_layers else z
            acts.append(h)
        return pre, acts

    @staticmethod
    def _log_softmax(z):
        m = z.max(axis=1, keepdims=True)
        return z - m - np.log(np.exp(z - m).sum(axis=1, keepdims=True))

    def _xy(self, idx):
        if idx is None:
            return self.data.X, self.data.y
        return self.data.X[idx], self.data.y[idx]

    def loss(self, w, idx=None):
        self._check(w)
        X, y = self._xy(idx)
        _, acts = self._forward(w, X)
        logp = self._log_softmax(acts[-1])
        return float(_finite(-np.mean(logp[np.arange(len(y)), y])))

    def grad(self, w, idx=None):
        self._check(w)
        X, y = self._xy(idx)
        n = len(y)
        pre, acts = self._forward(w, X)
        delta = np.exp(self._log_softmax(acts[-1]))
        delta[np.arange(n), y] -= 1.0
        delta /= n
        n_layers = len(self.sizes) - 1
        g = {}
        for i in range(n_layers, 0, -1):
            g[f"W{i}"] = delta.T @ acts[i - 1]
            g[f"b{i}"] = delta.sum(axis=0)
            if i > 1:
                delta = (delta @ w[f"W{i}"]) * self._dact(pre[i - 2], acts[i - 1])
        out = {k: g[k] for k in self.groups()}
        for v in out.values():
            _finite(v, "gradient")
        return out

    def predict(self, w):
        _, acts = self._forward(w, self.data.X)
        return np.argmax(acts[-1], axis=1)


def accuracy(problem, w) -> float:
    """Fraction of training samples classified correctly.

    Ties go to the lowest class index (class 0 for a zero-weight classifier).
    """
    if not hasattr(problem, "predict"):
        raise TypeError(f"{type(problem).__name__} is not a classification problem")
    pred = problem.predict(w)
    return float(np.mean(pred == problem.data.y))

"""
Toy convex learning tasks: data partitions, partial gradients and updates.

Two tasks are supported, linear least squares with per-sample loss
``0.5 * (w.x - y)**2`` and binary logistic regression with labels in {0, 1}.
The training objective is the sum over partitions of the partition mean
loss, so its gradient is exactly the sum of the partial gradients.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .errors import EmptyPartition, TooFewSamples

TASKS = ("least_squares", "logistic")


@dataclass(frozen=True)
class Partition:
    index: int
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


@dataclass(frozen=True)
class Model:
    weights: np.ndarray
    task: str = "least_squares"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        w = np.array(self.weights, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise ValueError("model weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, dim: int, task: str = "least_squares") -> "Model":
        return cls(np.zeros(dim), task)


def make_synthetic(n: int, dim: int, task: str = "least_squares", seed: int = 0, noise: float = 0.1):
    """Gaussian features with planted weights; returns (X, y, w_true)."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, dim))
    w_true = rng.standard_normal(dim)
    z = X @ w_true + noise * rng.standard_normal(n)
    if task == "least_squares":
        y = z
    elif task == "logistic":
        y = (z > 0).astype(float)
    else:
        raise ValueError(f"unknown task {task!r}")
    return X, y, w_true


def load_csv(path) -> tuple:
    """Read a ``f0,...,fd,label`` CSV into (X, y)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1].strip() != "label":
            raise ValueError(f"{path}: last column must be 'label', got {header[-1:]!r}")
        rows = [[float(v) for v in r] for r in reader if r]
    if not rows:
        raise TooFewSamples(f"{path}: no samples")
    data = np.asarray(rows, dtype=float)
    return data[:, :-1], data[:, -1]


def save_csv(path, X, y) -> None:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(X.shape[1])] + ["label"])
        for xi, yi in zip(X, np.asarray(y, dtype=float)):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


def partition_dataset(X, y, K: int, seed: int = 0) -> list:
    """Seeded shuffle, then round-robin split into K partitions (sizes differ by <= 1)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) < K:
        raise TooFewSamples(f"{len(y)} samples cannot fill {K} partitions")
    perm = np.random.default_rng(seed).permutation(len(y))
    return [Partition(k, X[perm[k::K]], y[perm[k::K]]) for k in range(K)]


def _margins(model: Model, X):
    return X @ model.weights


def sample_gradients(model: Model, X, y) -> np.ndarray:
    """Per-sample loss gradients, one row per sample."""
    z = _margins(model, X)
    if model.task == "least_squares":
        resid = z - y
    else:
        resid = expit(z) - y
    return resid[:, None] * X


def partial_gradient(model: Model, partition: Partition) -> np.ndarray:
    if len(partition) == 0:
        raise EmptyPartition(f"partition {partition.index} is empty")
    return sample_gradients(model, partition.X, partition.y).mean(axis=0)


def partition_loss(model: Model, partition: Partition) -> float:
    return loss(model, partition.X, partition.y)


def sgd_step(model: Model, g, eta: float) -> Model:
    g = np.asarray(g, dtype=float)
    if g.shape != model.weights.shape:
        raise ValueError(f"gradient shape {g.shape} != weights shape {model.weights.shape}")
    if eta <= 0:
        raise ValueError("eta must be > 0")
    return replace(model, weights=model.weights - eta * g)


def full_gradient_oracle(model: Model, partitions) -> np.ndarray:
    return np.sum([partial_gradient(model, p) for p in partitions], axis=0)


def loss(model: Model, X, y) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    z = _margins(model, X)
    if model.task == "least_squares":
        return float(0.5 * np.mean((z - y) ** 2))
    # log(1 + exp(-t)) with t = (2y - 1) z, computed stably
    t = (2.0 * y - 1.0) * z
    return float(np.mean(np.logaddexp(0.0, -t)))


def accuracy(model: Model, X, y) -> float:
    """Classification accuracy; for least squares, the fraction predicted within 0.5."""
    z = _margins(model, np.atleast_2d(np.asarray(X, dtype=float)))
    y = np.asarray(y, dtype=float)
    if model.task == "logistic":
        return float(np.mean((z > 0) == (y > 0.5)))
    return float(np.mean(np.abs(z - y) < 0.5))


def objective(model: Model, partitions) -> float:
    """Sum of partition mean losses; its gradient is the full aggregated gradient."""
    return float(sum(partition_loss(model, p) for p in partitions))


def hessian_bound(partitions, task: str = "least_squares") -> np.ndarray:
    """Sum over partitions of X_k^T X_k / |D_k| (scaled by 1/4 for logistic)."""
    H = sum(p.X.T @ p.X / len(p) for p in partitions)
    return 0.25 * H if task == "logistic" else H


def lipschitz_constant(partitions, task: str = "least_squares") -> float:
    return float(np.linalg.eigvalsh(hessian_bound(partitions, task)).max())


def least_squares_optimum(partitions) -> np.ndarray:
    """Minimizer of the summed partition objective via the normal equations."""
    A = sum(p.X.T @ p.X / len(p) for p in partitions)
    b = sum(p.X.T @ p.y / len(p) for p in partitions)
    return np.linalg.solve(A, b)


def gradient_variance(model: Model, partitions) -> float:
    """Mean squared deviation of the partial gradients from their mean."""
    G = np.asarray([partial_gradient(model, p) for p in partitions])
    return float(np.mean(np.sum((G - G.mean(axis=0)) ** 2, axis=1)))


@dataclass(frozen=True)
class BoundParams:
    L: float
    eta: float
    P: int
    K: int
    m: int
    C1: float
    C2: float
    zeta_sq: float
    tau_max: float = 0.0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        for name in ("L", "P", "K", "m", "C1", "C2", "zeta_sq", "tau_max"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.P <= 0 or self.K <= 0:
            raise ValueError("P and K must be positive")


def convergence_bound(bp: BoundParams, F_init: float, F_star: float) -> float:
    """Right-hand side of the average squared-gradient-norm bound."""
    optimisation = 2.0 / (bp.eta * bp.P) * (F_init - F_star)
    variance = 3.0 * bp.L * bp.eta / bp.K * (1.0 + bp.eta * bp.tau_max) * bp.m * (bp.C1 + bp.C2) * bp.zeta_sq
    return float(optimisation + variance)


def mean_sq_grad_norm(grads) -> float:
    grads = np.atleast_2d(np.asarray(grads, dtype=float))
    return float(np.mean(np.sum(grads**2, axis=1)))


__all__ = [
    "BoundParams",
    "Model",
    "Partition",
    "TASKS",
    "accuracy",
    "full_gradient_oracle",
    "gradient_variance",
    "hessian_bound",
    "least_squares_optimum",
    "lipschitz_constant",
    "load_csv",
    "loss",
    "make_synthetic",
    "mean_sq_grad_norm",
    "objective",
    "partial_gradient",
    "partition_dataset",
    "partition_loss",
    "sample_gradients",
    "save_csv",
    "sgd_step",
    "convergence_bound",
]

"""Detection scores, direction-set distances and the logistic baseline."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .radon import N_ANGLES


@dataclass(frozen=True)
class BinaryScore:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f_score(self) -> float:
        return f_from(self.precision, self.recall)

    @property
    def accuracy(self) -> float:
        n = self.tp + self.fp + self.fn + self.tn
        return (self.tp + self.tn) / n if n else 0.0

    def to_json(self) -> dict:
        out = asdict(self)
        out.update(precision=self.precision, recall=self.recall, f_score=self.f_score, accuracy=self.accuracy)
        return out


def f_from(precision: float, recall: float) -> float:
    s = precision + recall
    return 2.0 * precision * recall / s if s > 0 else 0.0


def score(pred: np.ndarray, truth: np.ndarray) -> BinaryScore:
    pred, truth = np.asarray(pred).astype(bool), np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return BinaryScore(tp, fp, fn, pred.size - tp - fp - fn)


def mf_score(scores: Sequence[BinaryScore]) -> float:
    """Mean F-score over classifiers."""
    if not len(scores):
        raise ValueError("mf_score needs at least one score")
    return float(np.mean([s.f_score for s in scores]))


def mean_accuracy(scores: Sequence[BinaryScore]) -> float:
    if not len(scores):
        raise ValueError("mean_accuracy needs at least one score")
    return float(np.mean([s.accuracy for s in scores]))


# --- direction sets ---------------------------------------------------------------


def bins_to_directions(bins: Iterable[int]) -> np.ndarray:
    """Lift orientation bins to unit vectors at twice the angle."""
    t = np.radians(2.0 * np.asarray(list(bins), dtype=float))
    return np.stack([np.cos(t), np.sin(t)], axis=-1).reshape(-1, 2)


def hausdorff_direction_distance(A: np.ndarray, B: np.ndarray) -> float:
    """Hausdorff distance between finite sets of unit vectors, chord metric.

    ``d(X, {}) = d({}, X) = 1`` for nonempty ``X`` and ``d({}, {}) = 0``.
    """
    A = np.asarray(A, dtype=float).reshape(-1, 2)
    B = np.asarray(B, dtype=float).reshape(-1, 2)
    if not len(A) and not len(B):
        return 0.0
    if not len(A) or not len(B):
        return 1.0
    d = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=-1)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def wf_mismatch(pred, truth) -> float:
    """Symmetric-difference size; a list of pairs gives the mean over pairs."""
    if isinstance(pred, (list, tuple)):
        if len(pred) != len(truth) or not len(pred):
            raise ValueError("need equally many, and at least one, prediction/truth pairs")
        return float(np.mean([wf_mismatch(p, t) for p, t in zip(pred, truth)]))
    pred, truth = np.asarray(pred).astype(bool), np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return float(np.count_nonzero(pred ^ truth))


# --- logistic regression baseline ------------------------------------------------------------


@dataclass
class LogisticModel:
    w: np.ndarray
    b: float
    mean: np.ndarray
    std: np.ndarray

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        z = ((X - self.mean) / self.std) @ self.w + self.b
        return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_logistic(X: np.ndarray, y: np.ndarray, iterations: int = 300, lr: float = 0.5, l2: float = 1e-3) -> LogisticModel:
    """Full-batch gradient descent on standardized features."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise ValueError("logistic regression needs both classes in the training data")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std < 1e-12] = 1.0
    Z = (X - mean) / std
    w = np.zeros(X.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(iterations):
        p = 0.5 * (1.0 + np.tanh(0.5 * (Z @ w + b)))
        g = p - y
        w -= lr * (Z.T @ g / n + l2 * w)
        b -= lr * g.mean()
    return LogisticModel(w, b, mean, std)


def logistic_baseline(train, test, heads: Sequence[int] | None = None, iterations: int = 300) -> dict[int, BinaryScore]:
    """Per-head logistic regression on flattened patches of two patch sets.

    ``train`` and ``test`` are :class:`densewf.densee.LabeledPatchSet` objects.
    """
    heads = train.heads if heads is None else list(heads)
    out = {}
    for h in heads:
        rows, y = train.head_data(h)
        model = fit_logistic(train.patches(rows).reshape(len(rows), -1), y, iterations)
        trows, ty = test.head_data(h)
        p = model.predict_proba(test.patches(trows).reshape(len(trows), -1)) > 0.5
        out[h] = score(p, ty.astype(bool))
    return out


def head_scores(results: dict, tau: float = 0.5) -> dict[int, BinaryScore]:
    """Scores from ``{head: (probabilities, targets)}``."""
    return {h: score(np.asarray(p) > tau, np.asarray(y).astype(bool)) for h, (p, y) in results.items()}


def restrict_bins(wf: np.ndarray, bins: Sequence[int]) -> np.ndarray:
    """Keep only the listed direction bins of a ``(..., 180)`` mask."""
    keep = np.zeros(N_ANGLES, bool)
    keep[list(bins)] = True
    return np.where(keep, np.asarray(wf), 0).astype(np.uint8)

"""Moving / exploratory-pausing window classifier.

Stratified split, SMOTE on the training portion only, an RBF-kernel SVM
trained with SMO, and precision/recall/F1 evaluation.  Class ``pausing`` is
the positive (+1) class; a decision value of exactly 0 predicts ``moving``.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .dsp import N_FEATURES, FeatureWindow
from .sensorlog import atomic_write_text, dump_json

logger = logging.getLogger(__name__)

CLASSES = ("moving", "pausing")
MODEL_FORMAT = "aedtrace.pausing-svm/1"


class TrainingError(RuntimeError):
    pass


class ConvergenceError(TrainingError):
    def __init__(self, max_iter: int, violation: float):
        super().__init__(
            f"SMO did not reach KKT tolerance within {max_iter} iterations "
            f"(final violation {violation:.3g})"
        )
        self.max_iter = max_iter
        self.violation = violation


class ModelError(ValueError):
    pass


@dataclass(eq=False)
class PausingModel:
    scaler_mean: np.ndarray
    scaler_std: np.ndarray
    gamma: float
    C: float
    support_vectors: np.ndarray  # in scaled feature space
    alphas: np.ndarray  # alpha_i * y_i
    bias: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.alphas) != len(self.support_vectors):
            raise ModelError("alphas and support vectors differ in length")
        if np.any(np.abs(self.alphas) > self.C * (1 + 1e-12)):
            raise ModelError("a dual coefficient exceeds C")
        if np.any(self.scaler_std <= 0):
            raise ModelError("scaler std must be positive")

    @property
    def n_features(self) -> int:
        return int(self.scaler_mean.shape[0])

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "scaler": {"mean": self.scaler_mean.tolist(), "std": self.scaler_std.tolist()},
            "kernel": {"type": "rbf", "gamma": self.gamma},
            "C": self.C,
            "support_vectors": self.support_vectors.tolist(),
            "alphas": self.alphas.tolist(),
            "bias": self.bias,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PausingModel":
        try:
            if doc.get("format") != MODEL_FORMAT:
                raise ModelError(f"unsupported model format {doc.get('format')!r}")
            if doc["kernel"]["type"] != "rbf":
                raise ModelError("only rbf kernels are supported")
            sv = np.asarray(doc["support_vectors"], dtype=np.float64)
            mean = np.asarray(doc["scaler"]["mean"], dtype=np.float64)
            if sv.size == 0:
                sv = sv.reshape(0, mean.shape[0])
            return cls(
                scaler_mean=mean,
                scaler_std=np.asarray(doc["scaler"]["std"], dtype=np.float64),
                gamma=float(doc["kernel"]["gamma"]),
                C=float(doc["C"]),
                support_vectors=sv,
                alphas=np.asarray(doc["alphas"], dtype=np.float64),
                bias=float(doc["bias"]),
                metadata=dict(doc.get("metadata", {})),
            )
        except (KeyError, TypeError) as exc:
            raise ModelError(f"model document does not match schema: {exc!r}") from exc


def save_model(model: PausingModel, path) -> None:
    atomic_write_text(path, dump_json(model.to_dict()))


def load_model(path) -> PausingModel:
    with open(path, encoding="utf-8") as fh:
        return PausingModel.from_dict(json.load(fh))


# ------------------------------------------------------------------ data prep


def as_arrays(windows: Sequence[FeatureWindow]) -> tuple[np.ndarray, np.ndarray]:
    if not windows:
        return np.empty((0, N_FEATURES)), np.empty(0, dtype=object)
    X = np.vstack([w.features for w in windows]).astype(np.float64)
    y = np.array([w.label for w in windows], dtype=object)
    return X, y


def split_indices(labels: Sequence[str], train_frac: float = 0.7, seed: int = 0):
    """Stratified train/eval index split.

    The training total is ``floor(train_frac * n)``, apportioned to classes
    by largest remainder, so each class keeps its proportion to within one
    item.  Indices within a class are shuffled with ``seed``.
    """
    labels = np.asarray(labels, dtype=object)
    n = len(labels)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise TrainingError("stratified split needs both classes present")
    members = {c: np.flatnonzero(labels == c) for c in classes}
    for c, idx in members.items():
        if len(idx) < 2:
            raise TrainingError(f"class {c!r} has fewer than 2 members")
    n_train = int(math.floor(train_frac * n + 1e-9))
    quotas = {c: n_train * len(idx) / n for c, idx in members.items()}
    alloc = {c: int(math.floor(q)) for c, q in quotas.items()}
    left = n_train - sum(alloc.values())
    for c in sorted(classes, key=lambda c: (-(quotas[c] - alloc[c]), c))[:left]:
        alloc[c] += 1
    rng = np.random.default_rng(seed)
    train, evl = [], []
    for c in classes:
        idx = members[c].copy()
        rng.shuffle(idx)
        k = min(max(alloc[c], 1), len(idx) - 1)
        train.append(idx[:k])
        evl.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(evl))


def stratified_split(windows: Sequence[FeatureWindow], train_frac: float = 0.7, seed: int = 0):
    """Split labelled windows into (train, eval) lists, stratified by label."""
    tr, ev = split_indices([w.label for w in windows], train_frac, seed)
    return [windows[i] for i in tr], [windows[i] for i in ev]


def smote(X: np.ndarray, y: np.ndarray, k: int = 5, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Oversample the minority class to the majority count.

    Each synthetic point is ``x + u * (x_nn - x)`` with ``x`` a random
    minority sample, ``x_nn`` one of its ``k`` nearest same-class neighbours
    (Euclidean, raw features) and ``u ~ U[0, 1)``.  Originals come first and
    are unchanged; synthetics are appended.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=object)
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) != 2:
        raise TrainingError("SMOTE needs exactly two classes")
    if counts[0] == counts[1]:
        return X.copy(), y.copy()
    minority = classes[int(np.argmin(counts))]
    n_new = int(counts.max() - counts.min())
    M = X[y == minority]
    m = M.shape[0]
    if m < 2:
        raise TrainingError(f"minority class {minority!r} has {m} member(s); SMOTE needs at least 2")
    if m <= k:
        warnings.warn(f"minority class has {m} members; reducing SMOTE k from {k} to {m - 1}", stacklevel=2)
        k = m - 1
    d2 = ((M[:, None, :] - M[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    nn = np.argsort(d2, axis=1, kind="stable")[:, :k]

    rng = np.random.default_rng(seed)
    base = rng.integers(0, m, size=n_new)
    pick = rng.integers(0, k, size=n_new)
    u = rng.random(n_new)
    src = M[base]
    dst = M[nn[base, pick]]
    synth = src + u[:, None] * (dst - src)
    X_out = np.vstack([X, synth])
    y_out = np.concatenate([y, np.full(n_new, minority, dtype=object)])
    return X_out, y_out


# ------------------------------------------------------------------ training


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    aa = (A * A).sum(axis=1)[:, None]
    bb = (B * B).sum(axis=1)[None, :]
    d2 = np.maximum(aa + bb - 2.0 * (A @ B.T), 0.0)
    return np.exp(-gamma * d2)


def fit_scaler(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def default_gamma(Xs: np.ndarray) -> float:
    """``1 / (n_features * mean feature variance)`` on scaled features."""
    var = float(Xs.var(axis=0).mean())
    return 1.0 / (Xs.shape[1] * var) if var > 0 else 1.0


def train(
    X: np.ndarray,
    y: Sequence[str],
    C: float = 1.0,
    gamma: float | None = None,
    seed: int = 0,
    tol: float = 1e-3,
    max_iter: int = 1_000_000,
    trained_at: int | None = None,
) -> PausingModel:
    """Fit scaler + RBF SVM.  Deterministic in (data order, parameters).

    ``trained_at`` is recorded in metadata; it defaults to 0 so that two
    runs over the same data produce identical model documents.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=object)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise TrainingError("X must be (n, d) with one label per row")
    if not (C > 0):
        raise TrainingError("C must be positive")
    present = set(y.tolist())
    if present != set(CLASSES):
        raise TrainingError(f"training data must contain both classes {CLASSES}, got {sorted(present)}")

    mean, std = fit_scaler(X)
    Xs = (X - mean) / std
    g = default_gamma(Xs) if gamma is None else float(gamma)
    if not (g > 0):
        raise TrainingError("gamma must be positive")
    ys = np.where(y == "pausing", 1.0, -1.0)
    K = rbf_kernel(Xs, Xs, g)
    alpha, rho, n_iter, violation, converged = _kernels.smo_solve(
        np.ascontiguousarray(K), np.ascontiguousarray(ys), float(C), float(tol), int(max_iter)
    )
    if not converged:
        raise ConvergenceError(max_iter, violation)
    sv = alpha > 0
    logger.info("SMO converged in %d iterations; %d support vectors", n_iter, int(sv.sum()))
    meta = {
        "seed": int(seed),
        "trained_at": int(trained_at or 0),
        "class_counts": {c: int(np.count_nonzero(y == c)) for c in CLASSES},
        "iterations": int(n_iter),
        "kkt_violation": float(violation),
        "tol": float(tol),
    }
    return PausingModel(
        scaler_mean=mean,
        scaler_std=std,
        gamma=g,
        C=float(C),
        support_vectors=Xs[sv].copy(),
        alphas=(alpha[sv] * ys[sv]).copy(),
        bias=-float(rho),
        metadata=meta,
    )


def decision_function(model: PausingModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise ModelError(f"expected {model.n_features} features, got {X.shape[1]}")
    Xs = (X - model.scaler_mean) / model.scaler_std
    if len(model.alphas) == 0:
        return np.full(X.shape[0], model.bias)
    return rbf_kernel(Xs, model.support_vectors, model.gamma) @ model.alphas + model.bias


def predict(model: PausingModel, X) -> np.ndarray:
    """Labels per row (or per FeatureWindow)."""
    if len(X) and isinstance(X[0], FeatureWindow):
        X = np.vstack([w.features for w in X])
    f = decision_function(model, X)
    return np.where(f > 0, "pausing", "moving").astype(object)


# ---------------------------------------------------------------- evaluation


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalMetrics:
    per_class: dict[str, ClassMetrics]
    weighted_f1: float
    confusion: dict[str, dict[str, int]]  # confusion[true][pred]

    def to_dict(self) -> dict:
        return {
            "per_class": {c: vars(m) for c, m in self.per_class.items()},
            "weighted_f1": self.weighted_f1,
            "confusion": self.confusion,
        }


def metrics_from_confusion(confusion: dict[str, dict[str, int]]) -> EvalMetrics:
    per = {}
    total = sum(sum(row.values()) for row in confusion.values())
    for c in CLASSES:
        tp = confusion[c][c]
        fp = sum(confusion[o][c] for o in CLASSES if o != c)
        fn = sum(confusion[c][o] for o in CLASSES if o != c)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        per[c] = ClassMetrics(p, r, f1, tp + fn)
    wf1 = sum(per[c].f1 * per[c].support for c in CLASSES) / total if total else 0.0
    return EvalMetrics(per, wf1, confusion)


def score(y_true: Sequence[str], y_pred: Sequence[str]) -> EvalMetrics:
    if len(y_true) == 0:
        raise ValueError("cannot evaluate on an empty set")
    if len(y_true) != len(y_pred):
        raise ValueError("y_true and y_pred differ in length")
    conf = {t: {p: 0 for p in CLASSES} for t in CLASSES}
    for t, p in zip(y_true, y_pred):
        conf[t][p] += 1
    return metrics_from_confusion(conf)


def evaluate(model: PausingModel, windows: Sequence[FeatureWindow]) -> EvalMetrics:
    if not windows:
        raise ValueError("cannot evaluate on an empty set")
    if any(w.label is None for w in windows):
        raise ValueError("evaluation windows must all be labelled")
    X, y = as_arrays(windows)
    return score(y.tolist(), predict(model, X).tolist())


@dataclass
class PipelineResult:
    model: PausingModel
    metrics: EvalMetrics
    train_windows: list
    eval_windows: list
    n_train_augmented: int


def fit_pipeline(
    windows: Sequence[FeatureWindow],
    train_frac: float = 0.7,
    smote_k: int = 5,
    C: float = 1.0,
    gamma: float | None = None,
    seed: int = 0,
    tol: float = 1e-3,
    max_iter: int = 1_000_000,
) -> PipelineResult:
    """split -> SMOTE(train only) -> train -> evaluate on the held-out part."""
    labelled = [w for w in windows if w.label is not None]
    tr, ev = stratified_split(labelled, train_frac, seed)
    X, y = as_arrays(tr)
    Xa, ya = smote(X, y, smote_k, seed)
    trained_at = max(w.start_t for w in labelled)
    model = train(Xa, ya, C=C, gamma=gamma, seed=seed, tol=tol, max_iter=max_iter, trained_at=trained_at)
    return PipelineResult(model, evaluate(model, ev), tr, ev, len(ya))

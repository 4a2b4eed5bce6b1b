"""Kernel classifiers and retrieval distances over image descriptors.

Classification uses a hand-rolled SMO solver (max-violating-pair working
set on a precomputed Gram matrix) wrapped in one-vs-one majority voting.
Retrieval replaces raw descriptor distances with shortest-path distances
through a k-nearest-neighbor graph, which follows the data manifold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import ParameterError

_CHUNK = 2048


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def hik(x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    """Histogram intersection kernel: sum of elementwise minima."""
    x = np.asarray(x, dtype=float)
    y = x if y is None else np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ParameterError("kernel inputs must be 2-d with equal dims")
    if (x < 0).any() or (y < 0).any():
        raise ParameterError(
            "intersection kernel is defined on nonnegative descriptors")
    out = np.empty((x.shape[0], y.shape[0]))
    # keep the broadcast intermediate under ~32M floats
    chunk = max(1, 2 ** 25 // max(1, y.shape[0] * max(1, y.shape[1])))
    for lo in range(0, x.shape[0], chunk):
        part = x[lo:lo + chunk]
        out[lo:lo + chunk] = np.minimum(part[:, None, :],
                                        y[None, :, :]).sum(axis=2)
    return out


def squared_distances(x: np.ndarray, y: np.ndarray | None = None):
    x = np.asarray(x, dtype=float)
    y = x if y is None else np.asarray(y, dtype=float)
    x_sq = (x * x).sum(axis=1)
    y_sq = (y * y).sum(axis=1)
    d2 = x_sq[:, None] + y_sq[None, :] - 2.0 * x @ y.T
    return np.maximum(d2, 0.0)


def median_sigma(x: np.ndarray) -> float:
    """Median pairwise Euclidean distance; 1.0 when degenerate."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 2:
        return 1.0
    d2 = squared_distances(x)
    upper = d2[np.triu_indices(x.shape[0], k=1)]
    med = float(np.median(np.sqrt(upper)))
    return med if med > 0 else 1.0


def rbf(x: np.ndarray, y: np.ndarray | None = None,
        sigma: float = 1.0) -> np.ndarray:
    if sigma <= 0:
        raise ParameterError("sigma must be > 0")
    return np.exp(-squared_distances(x, y) / (2.0 * sigma * sigma))


# ---------------------------------------------------------------------------
# support vector machine, one-vs-one
# ---------------------------------------------------------------------------


def _smo_binary(kernel: np.ndarray, y: np.ndarray, c: float,
                tol: float = 1e-3, max_iter: int | None = None):
    """Two-class dual solver: max-violating-pair updates on a Gram matrix.

    y must be in {-1, +1}. Returns (alpha, bias)."""
    n = y.shape[0]
    if max_iter is None:
        max_iter = max(200_000, 2_000 * n)
    eps = 1e-12 * c  # snap radius: keeps one-ulp-from-bound multipliers
    alpha = np.zeros(n)  # from re-entering the working set
    f = -y.astype(float)  # gradient cache: sum_j a_j y_j K_ij - y_i
    for _ in range(max_iter):
        up_mask = ((y > 0) & (alpha < c - eps)) | ((y < 0) & (alpha > eps))
        low_mask = ((y > 0) & (alpha > eps)) | ((y < 0) & (alpha < c - eps))
        if not up_mask.any() or not low_mask.any():
            break
        up_idx = np.flatnonzero(up_mask)
        low_idx = np.flatnonzero(low_mask)
        i = up_idx[int(np.argmin(f[up_idx]))]
        j = low_idx[int(np.argmax(f[low_idx]))]
        b_up, b_low = f[i], f[j]
        if b_low - b_up < tol:
            break
        s = y[i] * y[j]
        if s < 0:
            lo = max(0.0, alpha[j] - alpha[i])
            hi = min(c, c + alpha[j] - alpha[i])
        else:
            lo = max(0.0, alpha[i] + alpha[j] - c)
            hi = min(c, alpha[i] + alpha[j])
        eta = kernel[i, i] + kernel[j, j] - 2.0 * kernel[i, j]
        if eta <= 0:
            eta = 1e-12
        a_j = alpha[j] + y[j] * (f[i] - f[j]) / eta
        a_j = min(max(a_j, lo), hi)
        d_j = a_j - alpha[j]
        if d_j == 0.0:
            break
        a_i = alpha[i] - s * d_j
        if a_i < eps:
            a_i = 0.0
        elif a_i > c - eps:
            a_i = c
        if a_j < eps:
            a_j = 0.0
        elif a_j > c - eps:
            a_j = c
        d_i = a_i - alpha[i]
        d_j = a_j - alpha[j]
        alpha[i] = a_i
        alpha[j] = a_j
        f += y[i] * d_i * kernel[:, i] + y[j] * d_j * kernel[:, j]
    up_mask = ((y > 0) & (alpha < c - eps)) | ((y < 0) & (alpha > eps))
    low_mask = ((y > 0) & (alpha > eps)) | ((y < 0) & (alpha < c - eps))
    b_up = f[up_mask].min() if up_mask.any() else 0.0
    b_low = f[low_mask].max() if low_mask.any() else 0.0
    bias = -(b_up + b_low) / 2.0
    return alpha, float(bias)


@dataclass
class SVMModel:
    labels: list           # sorted distinct class labels
    pairs: list            # [(label_a, label_b)] in training order
    support: list          # per pair: train indices with nonzero influence
    coefs: list            # per pair: alpha * y at those indices
    biases: list
    c: float
    meta: dict = field(default_factory=dict)


def svm_train(kernel: np.ndarray, labels, c: float = 10.0,
              tol: float = 1e-3) -> SVMModel:
    """One-vs-one training on a precomputed train Gram matrix."""
    kernel = np.asarray(kernel, dtype=float)
    labels = np.asarray(labels)
    n = labels.shape[0]
    if kernel.shape != (n, n):
        raise ParameterError("gram matrix and labels disagree in size")
    if c <= 0:
        raise ParameterError("c must be > 0")
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise ParameterError("need at least two classes")
    pairs, support, coefs, biases = [], [], [], []
    for ai in range(len(classes)):
        for bi in range(ai + 1, len(classes)):
            a, b = classes[ai], classes[bi]
            mask = (labels == a) | (labels == b)
            idx = np.flatnonzero(mask)
            y = np.where(labels[idx] == a, 1.0, -1.0)
            sub = kernel[np.ix_(idx, idx)]
            alpha, bias = _smo_binary(sub, y, c, tol=tol)
            keep = alpha > 1e-12
            pairs.append((a, b))
            support.append(idx[keep].tolist())
            coefs.append((alpha[keep] * y[keep]).tolist())
            biases.append(bias)
    return SVMModel(labels=classes, pairs=pairs, support=support,
                    coefs=coefs, biases=biases, c=c,
                    meta={"tol": tol, "n_train": int(n)})


def svm_decision(model: SVMModel, cross_kernel: np.ndarray) -> np.ndarray:
    """Per-pair decision values for rows of a (test x train) Gram matrix."""
    cross_kernel = np.asarray(cross_kernel, dtype=float)
    out = np.empty((cross_kernel.shape[0], len(model.pairs)))
    for p, (idx, coef, bias) in enumerate(
            zip(model.support, model.coefs, model.biases)):
        if idx:
            out[:, p] = cross_kernel[:, idx] @ np.asarray(coef) + bias
        else:
            out[:, p] = bias
    return out


def majority_vote(decisions: np.ndarray, pairs: list, classes: list):
    """Vote over pairwise decisions; ties go to the smallest label."""
    n = decisions.shape[0]
    index = {lab: i for i, lab in enumerate(classes)}
    votes = np.zeros((n, len(classes)), dtype=np.int64)
    for p, (a, b) in enumerate(pairs):
        winner = np.where(decisions[:, p] > 0, index[a], index[b])
        np.add.at(votes, (np.arange(n), winner), 1)
    picked = np.argmax(votes, axis=1)  # argmax takes the first maximum,
    return [classes[i] for i in picked]  # and classes are sorted ascending


def svm_predict(model: SVMModel, cross_kernel: np.ndarray) -> list:
    return majority_vote(svm_decision(model, cross_kernel),
                         model.pairs, model.labels)


def accuracy(predictions, truth) -> float:
    """Fraction of matching entries. Empty input is an error, not 0/0."""
    preds = list(predictions)
    want = list(truth)
    if len(preds) != len(want):
        raise ParameterError("predictions and truth disagree in length")
    if not want:
        raise ParameterError("cannot score an empty prediction set")
    return sum(p == t for p, t in zip(preds, want)) / len(want)


def select_regularization(kernel: np.ndarray, labels, grid=(0.1, 1.0, 10.0,
                                                            100.0),
                          folds: int = 3, seed: int = 0) -> float:
    """Pick c by stratified cross-validation on the train Gram matrix.

    Ties prefer the smallest c."""
    kernel = np.asarray(kernel, dtype=float)
    labels = np.asarray(labels)
    n = labels.shape[0]
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    for lab in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == lab)
        idx = idx[rng.permutation(idx.size)]
        fold_of[idx] = np.arange(idx.size) % folds
    best_c, best_acc = None, -1.0
    for c in grid:
        hits = 0
        for fold in range(folds):
            tr = np.flatnonzero(fold_of != fold)
            te = np.flatnonzero(fold_of == fold)
            if te.size == 0 or len(set(labels[tr].tolist())) < 2:
                continue
            model = svm_train(kernel[np.ix_(tr, tr)], labels[tr], c=c)
            pred = svm_predict(model, kernel[np.ix_(te, tr)])
            hits += sum(p == t for p, t in zip(pred, labels[te]))
        acc = hits / n
        if acc > best_acc:
            best_acc, best_c = acc, c
    return float(best_c)


# ---------------------------------------------------------------------------
# retrieval
# ---------------------------------------------------------------------------


def geodesic_distances(base: np.ndarray, n_neighbors: int = 10) -> np.ndarray:
    """Shortest-path distances through the symmetric kNN graph of a base
    distance matrix. Unreachable pairs get 1 + the largest finite distance."""
    base = np.asarray(base, dtype=float)
    n = base.shape[0]
    if base.shape != (n, n):
        raise ParameterError("base distances must be square")
    if n_neighbors < 1:
        raise ParameterError("n_neighbors must be >= 1")
    k = min(n_neighbors, n - 1)
    if k <= 0:
        return np.zeros((n, n))
    rows, cols, vals = [], [], []
    for i in range(n):
        order = np.argsort(base[i], kind="stable")
        picked = [j for j in order if j != i][:k]
        rows.extend([i] * len(picked))
        cols.extend(picked)
        # an exact zero would be dropped by the sparse union below
        vals.extend(np.maximum(base[i, picked], 1e-300))
    graph = csr_matrix((vals, (rows, cols)), shape=(n, n))
    sym = graph.maximum(graph.T)  # union of neighborhoods
    dist = dijkstra(sym, directed=False)
    finite = dist[np.isfinite(dist)]
    cap = 1.0 + (finite.max() if finite.size else 0.0)
    dist[~np.isfinite(dist)] = cap
    return dist


def recall_curve(dist: np.ndarray, labels, max_rank: int | None = None):
    """Mean fraction of a query's class retrieved within the first N
    neighbors, for N = 1..max_rank. Distance ties break by index."""
    dist = np.asarray(dist, dtype=float)
    labels = np.asarray(labels)
    n = labels.shape[0]
    if dist.shape != (n, n):
        raise ParameterError("distances and labels disagree in size")
    if max_rank is None:
        max_rank = n - 1
    if not 1 <= max_rank <= n - 1:
        raise ParameterError("max_rank out of range")
    curve = np.zeros(max_rank)
    counted = 0
    for i in range(n):
        same = labels == labels[i]
        class_size = int(same.sum()) - 1
        if class_size <= 0:
            continue
        counted += 1
        order = np.argsort(dist[i], kind="stable")
        order = order[order != i][:max_rank]
        found = np.cumsum(same[order].astype(float))
        curve += found / class_size
    if counted == 0:
        raise ParameterError("no class has more than one member")
    return curve / counted


def expected_null_recall(n_total: int, max_rank: int) -> np.ndarray:
    """Recall of distance-blind retrieval: N draws out of n-1 candidates."""
    ranks = np.arange(1, max_rank + 1, dtype=float)
    return ranks / (n_total - 1)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_FORMAT = 1


def svm_model_to_dict(model: SVMModel) -> dict:
    return {
        "format_version": _FORMAT,
        "kind": "svm-model",
        "labels": model.labels,
        "pairs": [list(p) for p in model.pairs],
        "support": model.support,
        "coefs": model.coefs,
        "biases": model.biases,
        "c": model.c,
        "meta": model.meta,
    }


def svm_model_from_dict(blob: dict) -> SVMModel:
    if blob.get("kind") != "svm-model":
        raise ParameterError("not a serialized svm model")
    if blob.get("format_version") != _FORMAT:
        raise ParameterError("unsupported svm model format")
    return SVMModel(labels=blob["labels"],
                    pairs=[tuple(p) for p in blob["pairs"]],
                    support=blob["support"], coefs=blob["coefs"],
                    biases=blob["biases"], c=blob["c"],
                    meta=blob.get("meta", {}))


def save_svm_model(model: SVMModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(svm_model_to_dict(model), fh)


def load_svm_model(path) -> SVMModel:
    with open(path) as fh:
        return svm_model_from_dict(json.load(fh))

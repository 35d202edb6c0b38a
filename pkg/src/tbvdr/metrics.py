"""Evaluation protocols: 1-NN recognition, k-means clustering, AC/NMI, reconstruction error."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class LabeledFeatures:
    features: np.ndarray  # M x K
    labels: np.ndarray

    def __post_init__(self):
        features = np.atleast_2d(np.asarray(self.features, dtype=float))
        labels = np.asarray(self.labels, dtype=int).ravel()
        if features.shape[0] != labels.shape[0]:
            raise ValueError(f"{features.shape[0]} feature rows but {labels.shape[0]} labels")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)


@dataclass(frozen=True)
class ClusterEval:
    ac: float
    nmi: float


def knn1_classify(train, test_features):
    """Label of the Euclidean-nearest training row; ties go to the lowest index."""
    test_features = np.atleast_2d(np.asarray(test_features, dtype=float))
    if train.features.shape[0] == 0:
        raise ValueError("empty training set")
    if test_features.shape[1] != train.features.shape[1]:
        raise ValueError(
            f"feature dimension {test_features.shape[1]} != training dimension {train.features.shape[1]}"
        )
    dist = cdist(test_features, train.features, "sqeuclidean")
    return train.labels[np.argmin(dist, axis=1)]


def recognition_rate(pred, truth):
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    if pred.size == 0:
        raise ValueError("empty input")
    return float(np.mean(pred == truth))


def _kmeans_pp(x, k, rng):
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(x.shape[0])]
    closest = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(x.shape[0], p=closest / total)
        else:
            idx = rng.integers(x.shape[0])
        centers[j] = x[idx]
        closest = np.minimum(closest, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def lloyd(x, centers, max_iters=300):
    """Lloyd iterations from ``centers``; returns labels, centers and the inertia trace."""
    trace = []
    labels = None
    for _ in range(max_iters):
        dist = cdist(x, centers, "sqeuclidean")
        new_labels = np.argmin(dist, axis=1)
        trace.append(float(dist[np.arange(x.shape[0]), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(centers.shape[0]):
            members = x[labels == j]
            if len(members):  # empty clusters keep their previous center
                centers[j] = members.mean(axis=0)
    return labels, centers, trace


def kmeans(features, k, restarts=20, max_iters=300, seed=0, return_inertia=False):
    """k-means++ seeded Lloyd's algorithm, best inertia over ``restarts`` runs.

    Ties in inertia keep the earliest restart.
    """
    x = np.atleast_2d(np.asarray(features, dtype=float))
    if not 1 <= k <= x.shape[0]:
        raise ValueError(f"k={k} out of range for {x.shape[0]} points")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        labels, _, trace = lloyd(x, _kmeans_pp(x, k, rng), max_iters)
        if best is None or trace[-1] < best[1]:
            best = (labels, trace[-1])
    if return_inertia:
        return best
    return best[0]


def _contingency(pred, truth):
    pred, truth = np.asarray(pred).ravel(), np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    if pred.size == 0:
        raise ValueError("empty input")
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    table = np.zeros((p.max() + 1, t.max() + 1))
    np.add.at(table, (p, t), 1)
    return table


def cluster_accuracy(pred, truth):
    """Fraction of agreeing labels under the best one-to-one cluster mapping."""
    table = _contingency(pred, truth)
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum() / table.sum())


def _entropy(p):
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def nmi(pred, truth):
    """Mutual information normalized by the geometric mean of the two entropies.

    When either partition has zero entropy the score is 1 if the partitions
    coincide and 0 otherwise.
    """
    table = _contingency(pred, truth)
    joint = table / table.sum()
    pp, pt = joint.sum(axis=1), joint.sum(axis=0)
    hp, ht = _entropy(pp), _entropy(pt)
    if hp == 0 or ht == 0:
        return 1.0 if hp == ht else 0.0
    nz = joint > 0
    mi = float(np.sum(joint[nz] * np.log(joint[nz] / np.outer(pp, pt)[nz])))
    return float(np.clip(mi / np.sqrt(hp * ht), 0.0, 1.0))


def evaluate_clustering(pred, truth):
    return ClusterEval(ac=cluster_accuracy(pred, truth), nmi=nmi(pred, truth))


def relative_recon_error(original, reconstructed):
    original = np.asarray(original, dtype=float)
    reconstructed = np.asarray(reconstructed, dtype=float)
    if original.shape != reconstructed.shape:
        raise ValueError(f"shape mismatch: {original.shape} vs {reconstructed.shape}")
    norm = np.linalg.norm(original)
    if norm == 0:
        raise ValueError("relative error undefined for an all-zero original")
    return float(np.linalg.norm(original - reconstructed) / norm)

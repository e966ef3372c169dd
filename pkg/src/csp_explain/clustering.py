"""Time-series k-means under soft-DTW, cluster quality scores and the K sweep.

Series are compared with the debiased soft-DTW divergence (non-negative,
zero on identical series) for seeding, assignment, barycenters and
prediction. The quality scores use classic DTW.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .errors import EmptySeries, KTooSmall, LengthMismatch, TooFewSeries
from .metrics import (
    _gamma,
    _soft_dtw_grad,
    _stack,
    cdist_dtw,
    cdist_soft_dtw_divergence,
    self_soft_dtw,
)

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.4
DEFAULT_K_RANGE = tuple(range(2, 16))


@dataclass
class KMeansModel:
    """Fitted centroids for one meteorological variable."""

    variable: str
    k: int
    centroids: np.ndarray
    gamma: float
    seed: int
    counts: np.ndarray
    lam: float = DEFAULT_LAMBDA
    labels: np.ndarray | None = field(default=None, repr=False)
    inertia_history: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.k < 2:
            raise KTooSmall(f"k must be >= 2, got {self.k}")
        if self.centroids.shape[0] != self.k:
            raise ValueError("centroid count does not match k")

    @property
    def length(self) -> int:
        return self.centroids.shape[1]

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1] if self.inertia_history else float("nan")

    def to_dict(self) -> dict:
        return {
            "variable": self.variable,
            "k": int(self.k),
            "gamma": float(self.gamma),
            "seed": int(self.seed),
            "lambda": float(self.lam),
            "counts": [int(c) for c in self.counts],
            "centroids": [[float(v) for v in c] for c in self.centroids],
        }

    @classmethod
    def from_dict(cls, d) -> "KMeansModel":
        return cls(
            variable=d["variable"],
            k=int(d["k"]),
            centroids=np.array(d["centroids"], dtype=np.float64),
            gamma=float(d["gamma"]),
            seed=int(d["seed"]),
            counts=np.array(d["counts"], dtype=np.int64),
            lam=float(d.get("lambda", DEFAULT_LAMBDA)),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "KMeansModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ClusterScores:
    k: int
    intra: float
    inter: float

    @property
    def goodness(self) -> float:
        return self.inter / self.intra


@njit(cache=True, nogil=True)
def _bary_value_grad(c, members, self_members, gamma):
    n = members.shape[0]
    self_c, grad_cc = _soft_dtw_grad(c, c, gamma)
    # d/dc sdtw(c, c) is twice the first-argument gradient by symmetry
    grad = -n * grad_cc
    total = -0.5 * n * self_c
    for j in range(n):
        v, g = _soft_dtw_grad(c, members[j], gamma)
        total += v - 0.5 * self_members[j]
        grad += g
    return total, grad


@njit(cache=True, nogil=True)
def _barycenter(init, members, self_members, gamma, n_steps, lr, stall_tol=1e-7):
    c = init.copy()
    n = members.shape[0]
    f, grad = _bary_value_grad(c, members, self_members, gamma)
    step = lr / n
    for _ in range(n_steps):
        accepted = False
        # halve on overshoot so the objective never increases
        for _ in range(30):
            cand = c - step * grad
            fc, gc = _bary_value_grad(cand, members, self_members, gamma)
            if fc <= f:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        # the summed divergence is non-negative, so a purely relative test is safe
        stalled = f - fc <= stall_tol * abs(f)
        c, f, grad = cand, fc, gc
        if stalled:
            break
        step *= 2.0
    return c, f


def soft_dtw_barycenter(members, gamma=1.0, init=None, n_steps=30, lr=0.05) -> np.ndarray:
    """Series minimizing the summed soft-DTW divergence to ``members``.

    Gradient descent from ``init`` (default: the pointwise mean) starting at
    step ``lr / len(members)``. The step doubles after each accepted move and
    halves on overshoot, so the objective never increases; at most
    ``n_steps`` moves are made.
    """
    X = _stack(members)
    g = _gamma(gamma)
    c0 = X.mean(axis=0) if init is None else np.asarray(init, dtype=np.float64)
    return _barycenter(c0, X, self_soft_dtw(X, g), g, int(n_steps), float(lr))[0]


def _kmeanspp(X, self_X, k, gamma, rng) -> np.ndarray:
    """Greedy k-means++: each pick keeps the best of a few sampled candidates."""
    n = X.shape[0]
    trials = 2 + int(np.log(k))

    def dist_to(idx):
        d = cdist_soft_dtw_divergence(X, X[idx], gamma, self_X, self_X[idx])
        return np.maximum(d, 0.0)

    chosen = [int(rng.integers(n))]
    d = dist_to(chosen)[:, 0]
    for _ in range(1, k):
        total = d.sum()
        if total > 0:
            cand = rng.choice(n, size=trials, p=d / total)
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            cand = rng.choice(rest if rest.size else np.arange(n), size=1)
        dc = np.minimum(d[:, None], dist_to(cand))
        best = int(np.argmin(dc.sum(axis=0)))
        chosen.append(int(cand[best]))
        d = dc[:, best]
    return X[chosen].copy()


def _assign(X, C, self_X, gamma):
    D = cdist_soft_dtw_divergence(X, C, gamma, self_X)
    labels = D.argmin(axis=1)
    return labels, D[np.arange(X.shape[0]), labels]


def kmeans_fit(
    series,
    k: int,
    gamma: float = 1.0,
    seed: int = 0,
    max_iter: int = 50,
    tol: float = 1e-4,
    variable: str = "",
    lam: float = DEFAULT_LAMBDA,
    bary_steps: int = 30,
    bary_lr: float = 0.05,
) -> KMeansModel:
    """Lloyd-style k-means with soft-DTW barycenters.

    Seeding is k-means++ on soft-DTW divergences with ``seed``; an emptied
    cluster is re-seeded with the worst-fitting series. Iteration stops once
    the inertia improves by less than a fraction ``tol`` of its previous value,
    or after ``max_iter`` rounds.
    """
    try:
        X = _stack(series)
    except EmptySeries:
        raise
    except ValueError as exc:
        raise LengthMismatch(f"series must share one length: {exc}") from None
    if k < 2:
        raise KTooSmall(f"k must be >= 2, got {k}")
    n = X.shape[0]
    if n < k:
        raise TooFewSeries(f"{n} series cannot form {k} clusters")
    g = _gamma(gamma)
    rng = np.random.default_rng(seed)
    self_X = self_soft_dtw(X, g)

    C = _kmeanspp(X, self_X, k, g, rng)
    history: list[float] = []
    for it in range(max_iter):
        labels, dmin = _assign(X, C, self_X, g)
        counts = np.bincount(labels, minlength=k)
        repaired = False
        for j in np.flatnonzero(counts == 0):
            donors = counts[labels] > 1
            if not donors.any():
                break
            worst = int(np.flatnonzero(donors)[np.argmax(dmin[donors])])
            logger.debug("re-seeding empty cluster %d from series %d", j, worst)
            counts[labels[worst]] -= 1
            C[j] = X[worst]
            labels[worst] = j
            dmin[worst] = 0.0
            counts[j] = 1
            repaired = True
        inertia = float(dmin.sum())
        converged = bool(history) and not repaired and history[-1] - inertia <= tol * abs(history[-1])
        history.append(inertia)
        if converged:
            break
        for j in range(k):
            members = X[labels == j]
            C[j] = _barycenter(C[j], members, self_X[labels == j], g, bary_steps, bary_lr)[0]
    else:
        labels, dmin = _assign(X, C, self_X, g)
        history.append(float(dmin.sum()))
    logger.info("k=%d converged after %d rounds, inertia %.6g", k, len(history) - 1, history[-1])
    return KMeansModel(
        variable=variable,
        k=k,
        centroids=C,
        gamma=g,
        seed=seed,
        counts=np.bincount(labels, minlength=k),
        lam=lam,
        labels=labels,
        inertia_history=history,
    )


def predict_clusters(model: KMeansModel, Q) -> np.ndarray:
    """Cluster index of every row of ``Q`` (closest centroid, lowest index on ties)."""
    Q = _stack(Q)
    if Q.shape[1] != model.length:
        raise LengthMismatch(f"series length {Q.shape[1]} != centroid length {model.length}")
    return _assign(Q, model.centroids, self_soft_dtw(Q, model.gamma), model.gamma)[0]


def predict_cluster(model: KMeansModel, q) -> int:
    return int(predict_clusters(model, np.asarray(q, dtype=np.float64)[None, :])[0])


def intra_cluster_score(model: KMeansModel, series, labels=None) -> float:
    """Dataset-wide mean of ``exp(DTW(assigned centroid, series))``.

    Equals the cluster-size weighted average of per-cluster means; 1 when
    every series coincides with its centroid, larger otherwise.
    """
    X = _stack(series)
    if labels is None:
        labels = predict_clusters(model, X)
    labels = np.asarray(labels)
    d = np.array([cdist_dtw(model.centroids[l], x)[0, 0] for x, l in zip(X, labels)])
    return float(np.exp(d).mean())


def inter_centroid_score(centroids, lam: float = DEFAULT_LAMBDA) -> float:
    """Uniqueness of centroids: ``(pairs - similar**2) / pairs``.

    ``similar`` counts unordered centroid pairs closer than ``lam`` in DTW.
    The score is 1 when no pair is similar and drops below zero once
    ``similar**2`` exceeds the number of pairs.
    """
    C = centroids.centroids if isinstance(centroids, KMeansModel) else _stack(centroids)
    k = C.shape[0]
    if k < 2:
        raise KTooSmall(f"need at least two centroids, got {k}")
    pairs = k * (k - 1) // 2
    iu = np.triu_indices(k, 1)
    similar = int((cdist_dtw(C)[iu] < lam).sum())
    return (pairs - similar**2) / pairs


def score_model(model: KMeansModel, series, lam: float | None = None) -> ClusterScores:
    lam = model.lam if lam is None else lam
    return ClusterScores(
        k=model.k,
        intra=intra_cluster_score(model, series, model.labels),
        inter=inter_centroid_score(model, lam),
    )


def sweep_k(
    series,
    k_range=DEFAULT_K_RANGE,
    gamma: float = 1.0,
    seed: int = 0,
    lam: float = DEFAULT_LAMBDA,
    jobs: int = 1,
    **fit_kwargs,
) -> tuple[KMeansModel, list[ClusterScores]]:
    """Fit one model per K and keep the one with the highest goodness.

    Returns the best model and the score table in ``k_range`` order. Ties
    go to the smaller K.
    """
    X = _stack(series)
    ks = sorted({int(k) for k in k_range})
    if not ks or ks[0] < 2 or ks[-1] > X.shape[0]:
        raise TooFewSeries(f"k_range {ks} must lie within [2, {X.shape[0]}]")

    def run(k):
        m = kmeans_fit(X, k, gamma=gamma, seed=seed, lam=lam, **fit_kwargs)
        return m, score_model(m, X, lam)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            results = list(ex.map(run, ks))
    else:
        results = [run(k) for k in ks]
    best_model, best_score = results[0]
    for m, s in results[1:]:
        if s.goodness > best_score.goodness:
            best_model, best_score = m, s
    return best_model, [s for _, s in results]


def write_scores_csv(scores, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "intra", "inter", "goodness"])
        for s in scores:
            w.writerow([s.k, repr(float(s.intra)), repr(float(s.inter)), repr(float(s.goodness))])


def write_centroids_csv(model: KMeansModel, path) -> None:
    """Long-format centroid table: ``cluster,count,timestep,value``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster", "count", "timestep", "value"])
        for i, (c, n) in enumerate(zip(model.centroids, model.counts)):
            for t, v in enumerate(c):
                w.writerow([i, int(n), t, repr(float(v))])

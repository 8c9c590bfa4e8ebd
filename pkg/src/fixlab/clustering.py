"""Sparsify fixation maps by clustering their points into weighted centers.

Ward-linkage agglomerative clustering is the primary method; KMeans and a
spherical-covariance Gaussian mixture are provided for comparison, along
with a sweep that measures how much saliency information survives
sparsification at each cluster count.

Determinism contract: ward is fully deterministic (cost ties broken by
member indices); kmeans and gmm are deterministic given a seed.  Cluster
ids are canonical: clusters are numbered by their smallest member index,
and every id in [0, k) is nonempty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics as _metrics
from .raster import (
    Center,
    FixationPixelMap,
    SparseFixation,
    default_blur_sigma,
    gaussian_blur,
    gaussian_blur_image,
    rasterize_sparse,
)

CLUSTER_METHODS = ("ward", "kmeans", "gmm")

#: Merge costs within this absolute tolerance of the minimum count as tied.
WARD_TIE_TOL = 1e-12

GMM_VARIANCE_FLOOR = 1e-4


@dataclass(frozen=True)
class ClusterAssignment:
    """One cluster id per input point; ids are contiguous and all nonempty."""

    labels: np.ndarray
    k: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.intp)
        if labels.ndim != 1 or labels.size == 0:
            raise ValueError("labels must be a nonempty 1-D sequence")
        if self.k < 1:
            raise ValueError("cluster count must be >= 1")
        present = np.unique(labels)
        if present[0] < 0 or present[-1] >= self.k:
            raise ValueError("cluster ids must lie in [0, k)")
        if present.size != self.k:
            raise ValueError("every cluster id in [0, k) must be nonempty")
        labels = np.ascontiguousarray(labels)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)


@dataclass(frozen=True)
class PreservationScore:
    """Saliency-information preservation at one cluster count."""

    cluster_count: int
    auc_judd: float
    nss: float
    sim: float
    kld: float


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a nonempty (n, 2) sequence of (x, y)")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return pts


def _canonical_labels(groups: list[list[int]], n: int) -> ClusterAssignment:
    ordered = sorted(groups, key=min)
    labels = np.empty(n, dtype=np.intp)
    for cid, members in enumerate(ordered):
        labels[members] = cid
    return ClusterAssignment(labels, len(ordered))


def _singletons(n: int) -> ClusterAssignment:
    return ClusterAssignment(np.arange(n, dtype=np.intp), n)


def ward_cluster(points, k: int) -> ClusterAssignment:
    """Agglomerative clustering minimizing the Ward variance increase.

    Pairwise merge costs are maintained with the Lance-Williams update;
    the initial cost of merging two singletons is half their squared
    Euclidean distance.  When two candidate merges cost the same within
    WARD_TIE_TOL, the pair with the lexicographically smallest
    (min member index, max member index, member tuple) merges first, which
    makes the procedure fully deterministic.
    """
    if k < 1:
        raise ValueError("cluster count must be >= 1")
    pts = _as_points(points)
    n = pts.shape[0]
    if n <= k:
        return _singletons(n)

    diff = pts[:, None, :] - pts[None, :, :]
    cost = 0.5 * np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(cost, np.inf)
    active = np.ones(n, dtype=bool)
    sizes = np.ones(n, dtype=np.float64)
    members: list[list[int]] = [[i] for i in range(n)]

    for _ in range(n - k):
        masked = np.where(active[:, None] & active[None, :], cost, np.inf)
        best = masked.min()
        tied = np.argwhere(masked <= best + WARD_TIE_TOL)
        candidates = {(int(i), int(j)) for i, j in tied if i < j}

        def merge_key(pair):
            merged = members[pair[0]] + members[pair[1]]
            return (min(merged), max(merged), tuple(sorted(merged)))

        a, b = min(candidates, key=merge_key)
        sa, sb = sizes[a], sizes[b]
        others = np.flatnonzero(active)
        others = others[(others != a) & (others != b)]
        sc = sizes[others]
        updated = (
            (sa + sc) * cost[a, others] + (sb + sc) * cost[b, others] - sc * cost[a, b]
        ) / (sa + sb + sc)
        cost[a, others] = updated
        cost[others, a] = updated
        active[b] = False
        sizes[a] = sa + sb
        members[a] = members[a] + members[b]

    return _canonical_labels([members[i] for i in np.flatnonzero(active)], n)


def _kmeans_pp_centers(pts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = pts.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((pts - pts[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(k - 1):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # all remaining distances zero (duplicate points): deterministic pick
            remaining = sorted(set(range(n)) - set(chosen))
            idx = remaining[0] if remaining else chosen[0]
        chosen.append(idx)
        d2 = np.minimum(d2, ((pts - pts[idx]) ** 2).sum(axis=1))
    return pts[chosen].copy()


def _repair_empty(labels: np.ndarray, d2: np.ndarray, k: int) -> np.ndarray:
    """Give every empty cluster one point, donated from a multi-point cluster.

    The donor is the point farthest from its current center (lowest index on
    ties), which never increases the within-cluster sum of squares once
    centers are recomputed.
    """
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k)
    for empty in np.flatnonzero(counts == 0):
        dist = d2[np.arange(labels.size), labels].astype(np.float64)
        dist[counts[labels] < 2] = -np.inf
        donor = int(np.argmax(dist))
        counts[labels[donor]] -= 1
        labels[donor] = empty
        counts[empty] += 1
    return labels


def kmeans_cluster(points, k: int, seed=None, max_iter: int = 300) -> ClusterAssignment:
    """Lloyd's algorithm from k-means++ seeding with a seeded RNG.

    Iterates until assignments stabilize or ``max_iter`` passes; the
    within-cluster sum of squares never increases between iterations.
    Empty clusters are repaired so exactly min(k, n) clusters come back.
    """
    if k < 1:
        raise ValueError("cluster count must be >= 1")
    pts = _as_points(points)
    n = pts.shape[0]
    if n <= k:
        return _singletons(n)

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_centers(pts, k, rng)
    labels = None
    for _ in range(max_iter):
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = _repair_empty(d2.argmin(axis=1), d2, k)
        for c in range(k):
            centers[c] = pts[new_labels == c].mean(axis=0)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels

    groups = [np.flatnonzero(labels == c).tolist() for c in range(k)]
    return _canonical_labels([g for g in groups if g], n)


def kmeans_sse(points, assignment: ClusterAssignment) -> float:
    """Within-cluster sum of squared distances to cluster means."""
    pts = _as_points(points)
    total = 0.0
    for c in range(assignment.k):
        cluster = pts[assignment.labels == c]
        total += float(((cluster - cluster.mean(axis=0)) ** 2).sum())
    return total


def spherical_gmm_em(points, k: int, seed=None, max_iter: int = 200, tol: float = 1e-9):
    """EM for a spherical-covariance Gaussian mixture; returns (labels, trace).

    Initialized from kmeans_cluster with the same seed.  ``trace`` is the
    per-iteration log-likelihood (non-decreasing up to the variance floor).
    Hard labels come from the maximum responsibility.
    """
    if k < 1:
        raise ValueError("cluster count must be >= 1")
    pts = _as_points(points)
    n, d = pts.shape
    init = kmeans_cluster(points, k, seed)
    k_eff = init.k

    means = np.stack([pts[init.labels == c].mean(axis=0) for c in range(k_eff)])
    variances = np.empty(k_eff)
    weights = np.empty(k_eff)
    for c in range(k_eff):
        cluster = pts[init.labels == c]
        weights[c] = cluster.shape[0] / n
        variances[c] = max(
            GMM_VARIANCE_FLOOR, float(((cluster - means[c]) ** 2).sum() / (d * cluster.shape[0]))
        )

    trace: list[float] = []
    resp = None
    for _ in range(max_iter):
        sq = ((pts[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
        log_pdf = -0.5 * sq / variances - 0.5 * d * np.log(2.0 * np.pi * variances)
        log_weighted = np.log(weights) + log_pdf
        log_norm = np.logaddexp.reduce(log_weighted, axis=1)
        trace.append(float(log_norm.sum()))
        resp = np.exp(log_weighted - log_norm[:, None])

        mass = resp.sum(axis=0)
        for c in range(k_eff):
            if mass[c] < 1e-12:
                weights[c] = mass[c] / n
                continue  # keep a dying component's parameters frozen
            means[c] = resp[:, c] @ pts / mass[c]
            variances[c] = max(
                GMM_VARIANCE_FLOOR,
                float(resp[:, c] @ ((pts - means[c]) ** 2).sum(axis=1) / (d * mass[c])),
            )
            weights[c] = mass[c] / n
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol:
            break

    hard = resp.argmax(axis=1)
    groups = [np.flatnonzero(hard == c).tolist() for c in range(k_eff)]
    return _canonical_labels([g for g in groups if g], n), trace


def gmm_cluster(points, k: int, seed=None) -> ClusterAssignment:
    """Hard assignment from the spherical Gaussian mixture fit."""
    assignment, _ = spherical_gmm_em(points, k, seed)
    return assignment


def centers_of(points, assignment: ClusterAssignment, width: int, height: int) -> SparseFixation:
    """Average location and member count of each cluster.

    ``width``/``height`` record the source map extent on the result.
    """
    pts = _as_points(points)
    if pts.shape[0] != assignment.labels.size:
        raise ValueError("assignment does not match the point list")
    centers = []
    for c in range(assignment.k):
        cluster = pts[assignment.labels == c]
        mean = cluster.mean(axis=0)
        centers.append(Center(float(mean[0]), float(mean[1]), int(cluster.shape[0])))
    return SparseFixation(width, height, tuple(centers))


def sparsify(
    fmap: FixationPixelMap, method: str = "ward", k: int = 24, seed=None
) -> SparseFixation:
    """Cluster a fixation map's points and return the weighted centers.

    Points are processed in row-major order, so ward results do not depend
    on set iteration order.
    """
    if method not in CLUSTER_METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {CLUSTER_METHODS}")
    if len(fmap) == 0:
        raise ValueError("cannot sparsify an empty fixation map")
    points = fmap.coords()
    if method == "ward":
        assignment = ward_cluster(points, k)
    elif method == "kmeans":
        assignment = kmeans_cluster(points, k, seed)
    else:
        assignment = gmm_cluster(points, k, seed)
    return centers_of(points, assignment, fmap.width, fmap.height)


def preservation_sweep(
    fmap: FixationPixelMap,
    method: str = "ward",
    k_values=(2, 4, 8, 16, 24, 32),
    sigma: float | None = None,
    seed=None,
) -> list[PreservationScore]:
    """Score how well sparse centers preserve the blurred fixation map.

    For each k: sparsify, rasterize the centers at full resolution
    (count-proportional), blur both the sparse raster and the raw fixation
    raster with the same sigma, and score the sparse blob against the raw
    blob (AUC-Judd and NSS use the raw fixation points).
    """
    if len(fmap) == 0:
        raise ValueError("cannot sweep an empty fixation map")
    if sigma is None:
        sigma = default_blur_sigma(fmap.height)
    raw_blob = gaussian_blur(fmap, sigma)
    scores = []
    for k in k_values:
        sf = sparsify(fmap, method, k, seed)
        sparse_raster = rasterize_sparse(sf, fmap.width, fmap.height, "count-proportional")
        sparse_blob = gaussian_blur_image(sparse_raster, sigma)
        scores.append(
            PreservationScore(
                cluster_count=int(k),
                auc_judd=_metrics.auc_judd(sparse_blob, fmap),
                nss=_metrics.nss(sparse_blob, fmap),
                sim=_metrics.sim(sparse_blob, raw_blob),
                kld=_metrics.kld_metric(sparse_blob, raw_blob),
            )
        )
    return scores

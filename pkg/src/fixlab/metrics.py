"""Saliency evaluation metrics: AUC variants, NSS, CC, Sim, KLD, batch scoring.

The implementations follow the de-facto benchmark formulations.  ``S``
denotes the predicted saliency map, ``G`` a ground-truth blob map, and
fixation maps supply the positive locations for the location-based metrics.

Undefined cases (no fixations, constant maps) raise UndefinedMetricError;
the batch scorer records those as absent values instead of aborting.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields

import numpy as np

from .raster import FixationPixelMap, image_data, normalize_to_distribution

METRIC_NAMES = ("auc_judd", "auc_borji", "sauc", "nss", "cc", "sim", "kld")

CSV_HEADER = ("id",) + METRIC_NAMES


class UndefinedMetricError(ValueError):
    """The metric is mathematically undefined for these inputs."""


def _saliency(S) -> np.ndarray:
    arr = image_data(S)
    if not np.all(np.isfinite(arr)):
        raise ValueError("saliency values must be finite")
    return arr


def _fixation_values(arr: np.ndarray, fixations: FixationPixelMap) -> np.ndarray:
    if arr.shape != (fixations.height, fixations.width):
        raise ValueError(
            f"saliency {arr.shape} and fixation map "
            f"({fixations.height}, {fixations.width}) dimensions differ"
        )
    if len(fixations) == 0:
        raise UndefinedMetricError("metric undefined without fixations")
    coords = fixations.coords()
    xs = np.array([c[0] for c in coords])
    ys = np.array([c[1] for c in coords])
    return arr[ys, xs]


def _roc_area(points: list[tuple[float, float]]) -> float:
    pts = np.array(sorted(set(points)))
    return float(np.trapz(pts[:, 1], pts[:, 0]))


def auc_judd(S, fixations: FixationPixelMap) -> float:
    """ROC area with one threshold per distinct fixated saliency value.

    At threshold t, TPR is the fraction of fixations with S >= t and FPR the
    fraction of non-fixation pixels with S >= t; the curve is closed with
    (0,0) and (1,1) and integrated by the trapezoidal rule.  A map that
    ranks every fixation above every other pixel scores 1; a constant map
    scores 0.5.
    """
    arr = _saliency(S)
    pos = _fixation_values(arr, fixations)
    mask = fixations.to_mask()
    neg = arr[~mask]
    if neg.size == 0:
        raise UndefinedMetricError("every pixel is a fixation; FPR undefined")
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    thresholds = np.unique(pos)[::-1]
    points = [(0.0, 0.0), (1.0, 1.0)]
    for t in thresholds:
        tpr = (pos_sorted.size - np.searchsorted(pos_sorted, t, side="left")) / pos_sorted.size
        fpr = (neg_sorted.size - np.searchsorted(neg_sorted, t, side="left")) / neg_sorted.size
        points.append((float(fpr), float(tpr)))
    return _roc_area(points)


def _rank_auc(pos: np.ndarray, neg: np.ndarray) -> float:
    """Exact ROC area between two samples; ties contribute half credit."""
    combined = np.concatenate([pos, neg])
    order = np.argsort(combined, kind="mergesort")
    ranks = np.empty(combined.size, dtype=np.float64)
    ranks[order] = np.arange(1, combined.size + 1)
    # average ranks over tied values
    sorted_vals = combined[order]
    i = 0
    while i < sorted_vals.size:
        j = i
        while j + 1 < sorted_vals.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    r_pos = ranks[: pos.size].sum()
    return float((r_pos - pos.size * (pos.size + 1) / 2.0) / (pos.size * neg.size))


def auc_borji(
    S,
    fixations: FixationPixelMap,
    n_splits: int = 100,
    n_negatives: int | None = None,
    seed=None,
) -> float:
    """Mean ROC area over splits with uniformly sampled negative pixels.

    Each split samples ``n_negatives`` non-fixation pixel values uniformly
    with replacement (seeded, so runs are reproducible bit-for-bit) and
    scores the exact ROC area between fixated and sampled values.
    """
    arr = _saliency(S)
    pos = _fixation_values(arr, fixations)
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    neg_pool = arr[~fixations.to_mask()]
    if neg_pool.size == 0:
        raise UndefinedMetricError("every pixel is a fixation; no negatives to sample")
    n_neg = len(pos) if n_negatives is None else int(n_negatives)
    if n_neg < 1:
        raise ValueError("n_negatives must be >= 1")
    rng = np.random.default_rng(seed)
    areas = [
        _rank_auc(pos, neg_pool[rng.integers(0, neg_pool.size, n_neg)])
        for _ in range(n_splits)
    ]
    return float(np.mean(areas))


def sauc(
    S,
    fixations: FixationPixelMap,
    other_fixations: FixationPixelMap,
    n_splits: int = 100,
    n_negatives: int | None = None,
    seed=None,
) -> float:
    """Shuffled AUC: negatives drawn from fixations of other images.

    Sampling negatives from a pool of plausible fixation locations instead
    of uniform pixels discounts whatever spatial bias (e.g. center bias) the
    pool shares with the positives.
    """
    arr = _saliency(S)
    pos = _fixation_values(arr, fixations)
    if len(other_fixations) == 0:
        raise ValueError("shuffled AUC needs a nonempty pool of other fixations")
    pool = _fixation_values(arr, other_fixations)
    n_neg = len(pos) if n_negatives is None else int(n_negatives)
    if n_neg < 1:
        raise ValueError("n_negatives must be >= 1")
    rng = np.random.default_rng(seed)
    areas = [
        _rank_auc(pos, pool[rng.integers(0, pool.size, n_neg)]) for _ in range(n_splits)
    ]
    return float(np.mean(areas))


def nss(S, fixations: FixationPixelMap) -> float:
    """Mean of the z-scored saliency map at fixation locations.

    Uses the population standard deviation.  Invariant under positive
    affine transforms of S.
    """
    arr = _saliency(S)
    sd = float(arr.std())
    if sd == 0.0:
        raise UndefinedMetricError("NSS undefined for a constant map (std 0)")
    z = (arr - arr.mean()) / sd
    return float(_fixation_values(z, fixations).mean())


def cc(S, G) -> float:
    """Pearson linear correlation between two maps, flattened."""
    a = _saliency(S).ravel()
    b = _saliency(G).ravel()
    if a.shape != b.shape:
        raise ValueError("maps must have identical dimensions")
    if a.std() == 0.0 or b.std() == 0.0:
        raise UndefinedMetricError("CC undefined for a constant map")
    return float(np.corrcoef(a, b)[0, 1])


def sim(S, G) -> float:
    """Histogram intersection: sum of the element-wise minimum after each map
    is normalized to unit mass.  1 means identical distributions, 0 disjoint
    support."""
    a = _saliency(S)
    b = _saliency(G)
    if a.shape != b.shape:
        raise ValueError("maps must have identical dimensions")
    if a.sum() <= 0 or b.sum() <= 0:
        raise ValueError("Sim needs maps with positive total mass")
    return float(np.minimum(a / a.sum(), b / b.sum()).sum())


def kld_metric(S, G, eps: float = 1e-8) -> float:
    """Information lost when S is used to encode G.

    Both maps are eps-smoothed and normalized; returns
    sum_i G_i * (log G_i - log S_i).  Note the direction: the ground truth
    is the reference distribution.
    """
    a = _saliency(S)
    b = _saliency(G)
    if a.shape != b.shape:
        raise ValueError("maps must have identical dimensions")
    if a.sum() <= 0 or b.sum() <= 0:
        raise ValueError("KLD needs maps with positive total mass")
    s = normalize_to_distribution(a, eps).data
    g = normalize_to_distribution(b, eps).data
    with np.errstate(divide="ignore"):
        terms = np.where(g > 0, g * (np.log(g) - np.log(s)), 0.0)
    return float(terms.sum())


@dataclass
class MetricsReport:
    """Scores for one (prediction, ground truth) pair; absent metrics are None.

    ``failures`` maps a metric name to the reason it could not be computed.
    """

    auc_judd: float | None = None
    auc_borji: float | None = None
    sauc: float | None = None
    nss: float | None = None
    cc: float | None = None
    sim: float | None = None
    kld: float | None = None
    failures: dict[str, str] = field(default_factory=dict)

    def values(self) -> dict[str, float | None]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "failures"}


def score_pair(
    S,
    G_blob,
    G_pixels: FixationPixelMap,
    other_fixations: FixationPixelMap | None = None,
    *,
    metrics: tuple[str, ...] | None = None,
    n_splits: int = 100,
    n_negatives: int | None = None,
    seed=None,
    eps: float = 1e-8,
) -> MetricsReport:
    """Compute the requested metrics for one pair, recording failures.

    ``sauc`` is skipped when no pool of other fixations is supplied.  A
    metric that raises records its reason under ``failures`` and stays
    absent; the call itself only raises for inconsistent dimensions.
    """
    arr_s = _saliency(S)
    arr_g = _saliency(G_blob)
    if arr_s.shape != arr_g.shape or arr_s.shape != (G_pixels.height, G_pixels.width):
        raise ValueError("prediction, blob map and fixation map dimensions differ")
    requested = METRIC_NAMES if metrics is None else tuple(metrics)
    unknown = set(requested) - set(METRIC_NAMES)
    if unknown:
        raise ValueError(f"unknown metrics requested: {sorted(unknown)}")

    report = MetricsReport()

    def attempt(name, fn):
        try:
            setattr(report, name, fn())
        except ValueError as exc:  # includes UndefinedMetricError
            report.failures[name] = str(exc)

    for name in requested:
        if name == "auc_judd":
            attempt(name, lambda: auc_judd(arr_s, G_pixels))
        elif name == "auc_borji":
            attempt(
                name,
                lambda: auc_borji(arr_s, G_pixels, n_splits, n_negatives, seed),
            )
        elif name == "sauc":
            if other_fixations is None:
                continue
            attempt(
                name,
                lambda: sauc(arr_s, G_pixels, other_fixations, n_splits, n_negatives, seed),
            )
        elif name == "nss":
            attempt(name, lambda: nss(arr_s, G_pixels))
        elif name == "cc":
            attempt(name, lambda: cc(arr_s, arr_g))
        elif name == "sim":
            attempt(name, lambda: sim(arr_s, arr_g))
        elif name == "kld":
            attempt(name, lambda: kld_metric(arr_s, arr_g, eps))
    return report


def score_batch(pairs, *, metrics=None, n_splits: int = 100, seed=0, eps: float = 1e-8):
    """Score (S, G_blob, G_pixels, other_fixations) tuples in input order.

    Each pair gets its own RNG stream derived from (seed, index), so serial
    and parallel evaluation produce identical numbers.
    """
    reports = []
    for index, (S, G_blob, G_pixels, other) in enumerate(pairs):
        reports.append(
            score_pair(
                S,
                G_blob,
                G_pixels,
                other,
                metrics=metrics,
                n_splits=n_splits,
                seed=[seed, index],
                eps=eps,
            )
        )
    return reports


def _format(v: float | None) -> str:
    return "" if v is None else f"{v:.12g}"


def reports_to_csv(ids, reports, *, append_mean: bool = False) -> str:
    """Render reports as RFC-4180 CSV with the fixed metric column order.

    Absent values become empty fields.  With ``append_mean`` a final row
    (id ``mean``) averages each column over the rows where it is present.
    """
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_HEADER)
    for pair_id, report in zip(ids, reports):
        row = report.values()
        writer.writerow([str(pair_id)] + [_format(row[name]) for name in METRIC_NAMES])
    if append_mean:
        means = []
        for name in METRIC_NAMES:
            present = [r.values()[name] for r in reports if r.values()[name] is not None]
            means.append(_format(float(np.mean(present)) if present else None))
        writer.writerow(["mean"] + means)
    return buf.getvalue()

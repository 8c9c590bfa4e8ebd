"""Downsample/upsample round trips and the precision-loss study.

Downsampling is block averaging (mass-preserving, deterministic);
upsampling is bilinear interpolation with edge clamping using the
half-pixel-center convention (sample centers at (i + 0.5)/scale - 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import MetricsReport, score_pair
from .raster import FixationPixelMap, GrayImage, image_data

DEFAULT_FACTORS = (1, 2, 4, 8, 16, 20, 24, 32)

CURVE_METRICS = ("auc_judd", "nss", "cc", "sim", "kld")


@dataclass(frozen=True)
class PrecisionLossCurve:
    """Per-factor scores of the round-tripped map against the original."""

    factors: tuple[int, ...]
    reports: tuple[MetricsReport, ...]

    def __post_init__(self):
        factors = tuple(int(f) for f in self.factors)
        if not factors or factors[0] != 1:
            raise ValueError("factor list must start with the factor-1 baseline")
        if any(b <= a for a, b in zip(factors, factors[1:])):
            raise ValueError("factors must be strictly increasing")
        if len(factors) != len(self.reports):
            raise ValueError("one report per factor required")
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "reports", tuple(self.reports))


def downsample(img, factor: int) -> GrayImage:
    """Average over factor x factor blocks; trailing partial blocks average
    over their actual extent.  Output dims are ceil(dim / factor)."""
    if factor < 1:
        raise ValueError("downsample factor must be >= 1")
    arr = image_data(img)
    if factor == 1:
        return img if isinstance(img, GrayImage) else GrayImage(arr)
    h, w = arr.shape
    row_edges = np.arange(0, h, factor)
    col_edges = np.arange(0, w, factor)
    sums = np.add.reduceat(np.add.reduceat(arr, row_edges, axis=0), col_edges, axis=1)
    row_sizes = np.diff(np.append(row_edges, h))
    col_sizes = np.diff(np.append(col_edges, w))
    return GrayImage(sums / np.outer(row_sizes, col_sizes))


def _sample_axis(out_size: int, in_size: int):
    coords = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
    coords = np.clip(coords, 0.0, in_size - 1.0)
    lo = np.floor(coords).astype(np.intp)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = coords - lo
    return lo, hi, frac


def upsample(img, out_width: int, out_height: int) -> GrayImage:
    """Bilinear resampling to (out_width, out_height) with edge clamping."""
    if out_width < 1 or out_height < 1:
        raise ValueError("output dimensions must be positive")
    arr = image_data(img)
    h, w = arr.shape
    y0, y1, fy = _sample_axis(out_height, h)
    x0, x1, fx = _sample_axis(out_width, w)
    top = arr[y0][:, x0] * (1 - fx) + arr[y0][:, x1] * fx
    bottom = arr[y1][:, x0] * (1 - fx) + arr[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bottom * fy[:, None]
    return GrayImage(np.maximum(out, 0.0))


def precision_loss_curve(
    G_blob,
    G_pixels: FixationPixelMap,
    factors=DEFAULT_FACTORS,
    *,
    metrics=CURVE_METRICS,
    eps: float = 1e-8,
) -> PrecisionLossCurve:
    """Round-trip the blob map through each downsample factor and score it.

    Each factor's report compares upsample(downsample(G_blob, f)) against
    the untouched G_blob (and its fixation points); the factor-1 row is the
    self-comparison ceiling.
    """
    arr = image_data(G_blob)
    reports = []
    for f in factors:
        small = downsample(arr, int(f))
        restored = upsample(small, arr.shape[1], arr.shape[0])
        reports.append(
            score_pair(restored, arr, G_pixels, metrics=tuple(metrics), eps=eps)
        )
    return PrecisionLossCurve(tuple(int(f) for f in factors), tuple(reports))


def curve_to_csv(curve: PrecisionLossCurve) -> str:
    """CSV rows ``factor,auc_judd,nss,cc,sim,kld`` in factor order."""
    lines = ["factor," + ",".join(CURVE_METRICS)]
    for factor, report in zip(curve.factors, curve.reports):
        vals = report.values()
        cells = ["" if vals[m] is None else f"{vals[m]:.12g}" for m in CURVE_METRICS]
        lines.append(f"{factor}," + ",".join(cells))
    return "\r\n".join(lines) + "\r\n"

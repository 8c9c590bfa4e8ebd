"""Core raster types and fixation-map operations.

Coordinate convention used throughout the package: ``x`` indexes columns,
``y`` indexes rows, origin at the top-left.  Rasters are stored row-major
with shape ``(height, width)``, so pixel ``(x, y)`` lives at ``data[y, x]``.

All types are immutable after construction (the wrapped arrays are marked
read-only), so values can be shared freely across concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal, NamedTuple

import numpy as np
from scipy import ndimage

Weighting = Literal["uniform", "count-proportional"]

WEIGHTING_MODES = ("uniform", "count-proportional")

#: Blur width in pixels for a 480-pixel-high map (roughly one degree of
#: visual angle for typical viewing setups); scaled linearly with height.
BASE_BLUR_SIGMA = 19.0
BASE_BLUR_HEIGHT = 480


def _as_raster(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("raster data must be a nonempty 2-D array")
    return arr


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr and arr.flags.writeable:
        out = arr.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GrayImage:
    """2-D intensity raster: stimuli, fixation blob maps, saliency maps.

    Intensities are finite nonnegative reals, nominally in ``[0, 255]``
    (the nominal range is not enforced; blurred and normalized maps use
    much smaller values).
    """

    data: np.ndarray

    def __post_init__(self):
        arr = _as_raster(self.data)
        if not np.all(np.isfinite(arr)):
            raise ValueError("image intensities must be finite")
        if np.any(arr < 0):
            raise ValueError("image intensities must be nonnegative")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class FixationPixelMap:
    """Binary raster of discrete fixation locations, stored as a point set."""

    width: int
    height: int
    points: frozenset[tuple[int, int]]

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("map dimensions must be positive")
        pts = frozenset((int(x), int(y)) for x, y in self.points)
        for x, y in pts:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError(
                    f"fixation ({x}, {y}) outside {self.width}x{self.height} map"
                )
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def coords(self) -> list[tuple[int, int]]:
        """Points in deterministic row-major order (sorted by (y, x))."""
        return sorted(self.points, key=lambda p: (p[1], p[0]))

    def to_mask(self) -> np.ndarray:
        mask = np.zeros((self.height, self.width), dtype=bool)
        for x, y in self.points:
            mask[y, x] = True
        return mask

    @classmethod
    def from_mask(cls, mask) -> "FixationPixelMap":
        arr = np.asarray(mask)
        if arr.ndim != 2:
            raise ValueError("mask must be 2-D")
        ys, xs = np.nonzero(arr)
        pts = frozenset(zip(xs.tolist(), ys.tolist()))
        return cls(arr.shape[1], arr.shape[0], pts)


@dataclass(frozen=True)
class ProbabilityMap:
    """Nonnegative raster summing to 1; a spatial probability distribution."""

    data: np.ndarray

    SUM_TOL = 1e-9

    def __post_init__(self):
        arr = _as_raster(self.data)
        if not np.all(np.isfinite(arr)):
            raise ValueError("probability mass must be finite")
        if np.any(arr < 0):
            raise ValueError("probability mass must be nonnegative")
        total = float(arr.sum())
        if abs(total - 1.0) > self.SUM_TOL:
            raise ValueError(f"probability map sums to {total!r}, expected 1")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


class Center(NamedTuple):
    """One weighted cluster center: subpixel location plus member count."""

    x: float
    y: float
    weight: int


@dataclass(frozen=True)
class SparseFixation:
    """Weighted cluster centers summarizing a fixation map, one per salient spot.

    ``width``/``height`` are the dimensions of the source fixation map, so
    the centers can later be rasterized onto grids of any resolution.
    """

    width: int
    height: int
    centers: tuple[Center, ...]

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("source dimensions must be positive")
        centers = tuple(Center(float(c[0]), float(c[1]), int(c[2])) for c in self.centers)
        for c in centers:
            if not (math.isfinite(c.x) and math.isfinite(c.y)):
                raise ValueError("center coordinates must be finite")
            if not (0 <= c.x < self.width and 0 <= c.y < self.height):
                raise ValueError(f"center ({c.x}, {c.y}) outside source map")
            if c.weight < 1:
                raise ValueError("center weights must be positive integers")
        object.__setattr__(self, "centers", centers)

    def total_weight(self) -> int:
        return sum(c.weight for c in self.centers)


def image_data(img) -> np.ndarray:
    """Accept GrayImage, ProbabilityMap, or a bare 2-D array; return the array."""
    if isinstance(img, (GrayImage, ProbabilityMap)):
        return img.data
    return _as_raster(img)


def threshold_fixations(gray: GrayImage, threshold: float = 250.0) -> FixationPixelMap:
    """Extract fixation pixels: all locations strictly brighter than ``threshold``."""
    arr = image_data(gray)
    ys, xs = np.nonzero(arr > threshold)
    pts = frozenset(zip(xs.tolist(), ys.tolist()))
    return FixationPixelMap(arr.shape[1], arr.shape[0], pts)


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Truncated 1-D Gaussian, radius ceil(3*sigma), normalized to sum 1."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    radius = math.ceil(3.0 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return weights / weights.sum()


def gaussian_blur_image(img, sigma: float) -> GrayImage:
    """Convolve a raster with a truncated 2-D Gaussian (reflective borders).

    The 2-D kernel is the outer product of two normalized 1-D kernels, which
    equals the normalized 2-D kernel exactly, so the blur is computed
    separably.  The kernel sums to 1, so total mass is preserved away from
    the borders.
    """
    kernel = gaussian_kernel_1d(sigma)
    arr = image_data(img)
    out = ndimage.correlate1d(arr, kernel, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="reflect")
    # Clamp tiny negative rounding residue; inputs and kernel are nonnegative.
    np.maximum(out, 0.0, out=out)
    return GrayImage(out)


def gaussian_blur(fmap: FixationPixelMap, sigma: float) -> GrayImage:
    """Blur the binary fixation raster; each point contributes unit mass."""
    return gaussian_blur_image(fmap.to_mask().astype(np.float64), sigma)


def default_blur_sigma(height: int) -> float:
    """Blur width scaled to map height (19 px at height 480)."""
    return BASE_BLUR_SIGMA * float(height) / float(BASE_BLUR_HEIGHT)


def normalize_to_distribution(img, eps: float = 1e-8) -> ProbabilityMap:
    """Shift by ``eps`` and divide by total mass: out_i = (v_i + eps) / sum_j (v_j + eps).

    With ``eps > 0`` the result is strictly positive everywhere, which keeps
    downstream logarithms finite; this is the package-wide guard against
    log(0).
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    arr = image_data(img)
    if np.any(arr < 0):
        raise ValueError("cannot normalize a raster with negative entries")
    shifted = arr + eps
    total = shifted.sum()
    if total <= 0:
        raise ValueError("zero-mass raster cannot be normalized with eps=0")
    return ProbabilityMap(shifted / total)


def rasterize_sparse(
    sf: SparseFixation,
    out_width: int,
    out_height: int,
    weighting: Weighting = "count-proportional",
) -> ProbabilityMap:
    """Deposit sparse centers onto an ``out_width`` x ``out_height`` grid.

    Center coordinates are scaled by ``out_width/width`` and
    ``out_height/height`` and land in the containing output cell.  Cell mass
    is proportional to 1 (``uniform``) or to the center weight
    (``count-proportional``); colliding centers accumulate.  The result is
    normalized to total mass 1.
    """
    if out_width <= 0 or out_height <= 0:
        raise ValueError("output dimensions must be positive")
    if weighting not in WEIGHTING_MODES:
        raise ValueError(f"unknown weighting {weighting!r}; expected one of {WEIGHTING_MODES}")
    if not sf.centers:
        raise ValueError("cannot rasterize an empty sparse fixation: a label needs mass")
    grid = np.zeros((out_height, out_width), dtype=np.float64)
    sx = out_width / sf.width
    sy = out_height / sf.height
    for c in sf.centers:
        cx = min(int(c.x * sx), out_width - 1)
        cy = min(int(c.y * sy), out_height - 1)
        grid[cy, cx] += 1.0 if weighting == "uniform" else float(c.weight)
    return ProbabilityMap(grid / grid.sum())


def scale_fixations(fmap: FixationPixelMap, out_width: int, out_height: int) -> FixationPixelMap:
    """Map fixation coordinates onto a grid of different resolution.

    Uses the same containing-cell rule as rasterize_sparse; distinct points
    that land in the same cell collapse to one.
    """
    if out_width <= 0 or out_height <= 0:
        raise ValueError("output dimensions must be positive")
    sx = out_width / fmap.width
    sy = out_height / fmap.height
    pts = frozenset(
        (min(int(x * sx), out_width - 1), min(int(y * sy), out_height - 1))
        for x, y in fmap.points
    )
    return FixationPixelMap(out_width, out_height, pts)

"""Distribution losses for sparse saliency targets.

Two losses share one smoothing rule: both operands are shifted by ``eps``
and renormalized before any logarithm is taken, so zeros on either side stay
finite.  ``kld`` compares the smoothed label against the smoothed prediction
directly.  ``pooling_kld`` first dilates the smoothed prediction with a
same-size max-pool and deliberately does NOT renormalize the pooled map:
sparse label cells act as gateways, so a predicted spike within the pooling
window of a label spike is no longer penalized, while pooled mass at cells
without label mass contributes nothing.

Gradients are taken with respect to the raw (pre-normalization) prediction,
which is what a trainer updates.  Closed forms, with x the raw prediction,
Z = sum(x) + N*eps, p = (x + eps)/Z and l the smoothed label:

* kld:          d/dx_t = 1/Z - l_t / (x_t + eps)
* pooling_kld:  d/dx_t = (g_t - sum_j g_j p_j) / Z  where
                g_j = -sum_{i: argmax(i)=j} l_i / pooled_i
                routes each output cell's pull to the argmax cell of its
                window (subgradient; ties go to the row-major-first cell).

Both forms are verified against central finite differences by grad_check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import GrayImage, ProbabilityMap, image_data

LOSS_NAMES = ("kld", "pooling_kld")


@dataclass(frozen=True)
class PoolingSpec:
    """Same-size max-pooling: odd window, stride 1, borders treated as -inf."""

    window: int = 3

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("pooling window must be an odd integer >= 1")

    @property
    def radius(self) -> int:
        return self.window // 2


@dataclass(frozen=True)
class LossValue:
    """Scalar loss plus its gradient with respect to the raw prediction."""

    value: float
    gradient: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("loss value is not finite")
        if not np.all(np.isfinite(self.gradient)):
            raise ValueError("loss gradient is not finite")


def _smoothed_label(label: ProbabilityMap, eps: float) -> np.ndarray:
    shifted = label.data + eps
    return shifted / shifted.sum()


def _smoothed_pred(pred_raw, eps: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Return (raw array, smoothed distribution, smoothed total mass Z)."""
    x = image_data(pred_raw)
    if np.any(x < 0):
        raise ValueError("prediction entries must be nonnegative")
    z = float(x.sum() + eps * x.size)
    if z <= 0:
        raise ValueError("prediction has zero mass and eps=0")
    return x, (x + eps) / z, z


def _check_dims(label: ProbabilityMap, x: np.ndarray) -> None:
    if label.data.shape != x.shape:
        raise ValueError(
            f"label {label.data.shape} and prediction {x.shape} dimensions differ"
        )


def _xlogy(l: np.ndarray, logs: np.ndarray) -> float:
    # 0 * log(0) := 0; only reachable when eps == 0.
    return float(np.sum(np.where(l > 0, l * logs, 0.0)))


def kld(label: ProbabilityMap, pred_raw, eps: float = 1e-8) -> LossValue:
    """Kullback-Leibler divergence of the smoothed prediction from the label.

    value = sum_i l_i * (log l_i - log p_i).
    """
    x, p, z = _smoothed_pred(pred_raw, eps)
    _check_dims(label, x)
    l = _smoothed_label(label, eps)
    with np.errstate(divide="ignore"):
        value = _xlogy(l, np.log(l) - np.log(p))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(l > 0, l / (x + eps), 0.0)
    grad = 1.0 / z - ratio
    return LossValue(value, grad)


def _pool_scan(data: np.ndarray, window: int):
    """Sliding-window max with -inf borders.

    Returns (pooled, argmax_flat, runner_up): per output cell the window
    maximum, the row-major-first source index attaining it, and the largest
    window value excluding that one source cell.
    """
    h, w = data.shape
    r = window // 2
    best = np.full((h, w), -np.inf)
    second = np.full((h, w), -np.inf)
    arg = np.zeros((h, w), dtype=np.intp)
    flat_index = np.arange(h * w, dtype=np.intp).reshape(h, w)
    # Offsets scanned in row-major order so a strict ">" keeps the
    # lexicographically first source cell on ties.
    for dy in range(-r, r + 1):
        oy = slice(max(0, -dy), h - max(0, dy))
        sy = slice(max(0, -dy) + dy, h - max(0, dy) + dy)
        for dx in range(-r, r + 1):
            ox = slice(max(0, -dx), w - max(0, dx))
            sx = slice(max(0, -dx) + dx, w - max(0, dx) + dx)
            src = data[sy, sx]
            cur_best = best[oy, ox]
            cur_second = second[oy, ox]
            take = src > cur_best
            second[oy, ox] = np.where(take, cur_best, np.maximum(cur_second, src))
            best[oy, ox] = np.where(take, src, cur_best)
            arg[oy, ox] = np.where(take, flat_index[sy, sx], arg[oy, ox])
    return best, arg, second


def maxpool(pred, spec: PoolingSpec) -> GrayImage:
    """Padded max-pooling: out(x, y) = max of the window centered at (x, y).

    Out-of-bounds cells are ignored (-inf padding), so output dimensions
    equal input dimensions.  Window 1 is the identity.
    """
    arr = image_data(pred)
    pooled, _, _ = _pool_scan(arr, spec.window)
    return GrayImage(pooled)


def pooling_kld(
    label: ProbabilityMap, pred_raw, spec: PoolingSpec = PoolingSpec(), eps: float = 1e-8
) -> LossValue:
    """KLD against the max-pooled, deliberately un-renormalized prediction.

    value = sum_i l_i * (log l_i - log pooled_i), with pooled the window
    maximum of the smoothed prediction.  Because pooled_i >= p_i pointwise
    and log is monotone, this never exceeds ``kld`` on the same inputs.
    """
    x, p, z = _smoothed_pred(pred_raw, eps)
    _check_dims(label, x)
    l = _smoothed_label(label, eps)
    pooled, arg, _ = _pool_scan(p, spec.window)
    with np.errstate(divide="ignore"):
        value = _xlogy(l, np.log(l) - np.log(pooled))
    pull = np.zeros(x.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        contrib = np.where(l > 0, l / pooled, 0.0)
    np.add.at(pull, arg.ravel(), -contrib.ravel())
    pull = pull.reshape(x.shape)
    grad = (pull - float(np.sum(pull * p))) / z
    return LossValue(value, grad)


@dataclass(frozen=True)
class GradCheckResult:
    """Finite-difference verification summary."""

    max_rel_error: float
    tie_count: int
    n_checked: int


def _tied_coordinates(p: np.ndarray, window: int, tol: float) -> np.ndarray:
    """Mark coordinates whose max-pool routing is ambiguous.

    A coordinate is tied when, in some window containing it, its value is
    within ``tol`` of the best among the window's other members; a small
    perturbation could then flip the argmax.  Perturbing one raw entry
    rescales all smoothed values by a common factor, so comparisons not
    involving the perturbed cell cannot flip.
    """
    h, w = p.shape
    r = window // 2
    pooled, arg, second = _pool_scan(p, window)
    flat_index = np.arange(h * w, dtype=np.intp).reshape(h, w)
    tied = np.zeros((h, w), dtype=bool)
    # The windows containing cell t are those centered within radius r of t.
    for dy in range(-r, r + 1):
        ty = slice(max(0, -dy), h - max(0, dy))
        cy = slice(max(0, -dy) + dy, h - max(0, dy) + dy)
        for dx in range(-r, r + 1):
            tx = slice(max(0, -dx), w - max(0, dx))
            cx = slice(max(0, -dx) + dx, w - max(0, dx) + dx)
            is_argmax = arg[cy, cx] == flat_index[ty, tx]
            best_other = np.where(is_argmax, second[cy, cx], pooled[cy, cx])
            tied[ty, tx] |= np.abs(p[ty, tx] - best_other) <= tol
    return tied


def grad_check(
    loss: str,
    label: ProbabilityMap,
    pred_raw,
    spec: PoolingSpec = PoolingSpec(),
    eps: float = 1e-8,
    h: float = 1e-5,
    tie_tol: float = 1e-9,
) -> GradCheckResult:
    """Compare the analytic gradient against central finite differences.

    Coordinates whose pooling argmax is ambiguous (two window members equal
    within ``tie_tol``) are excluded from the error and counted separately;
    the loss is only subdifferentiable there.  The prediction should be
    strictly positive so perturbations stay in the valid domain.
    """
    if loss not in LOSS_NAMES:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSS_NAMES}")
    x = np.array(image_data(pred_raw), dtype=np.float64)

    if loss == "kld":
        evaluate = lambda arr: kld(label, arr, eps)
        tied = np.zeros(x.shape, dtype=bool)
    else:
        evaluate = lambda arr: pooling_kld(label, arr, spec, eps)
        _, p, _ = _smoothed_pred(x, eps)
        tied = _tied_coordinates(p, spec.window, tie_tol)

    analytic = evaluate(x).gradient
    max_rel = 0.0
    n_checked = 0
    flat = x.ravel()
    tied_flat = tied.ravel()
    for t in range(flat.size):
        if tied_flat[t]:
            continue
        bumped = flat.copy()
        bumped[t] = flat[t] + h
        up = evaluate(bumped.reshape(x.shape)).value
        bumped[t] = flat[t] - h
        down = evaluate(bumped.reshape(x.shape)).value
        numeric = (up - down) / (2.0 * h)
        rel = abs(analytic.ravel()[t] - numeric) / max(1e-12, abs(numeric))
        max_rel = max(max_rel, rel)
        n_checked += 1
    return GradCheckResult(max_rel, int(tied_flat.sum()), n_checked)

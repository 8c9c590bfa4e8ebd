"""Desk-scale training demo: fixed feature bank, 1x1 readout, Adam.

The feature extractor is a frozen bank of seeded random 5x5 kernels whose
responses are block-averaged to 1/16 of the input resolution, standing in
for a pretrained backbone; only the per-channel readout weights and a bias
train.  The readout output passes through softplus so the raw saliency grid
is strictly positive and the distribution losses are always defined.

Scenes are synthetic: dark background plus a few bright Gaussian blobs with
known centers, so the training labels are exact sparse fixations.  The
point of the demo is the loss comparison: trained on sparse rasterized
labels, the max-pooled loss keeps improving where the plain one stalls on
near-miss penalties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .losses import PoolingSpec, kld, pooling_kld
from .raster import Center, GrayImage, ProbabilityMap, SparseFixation, rasterize_sparse

#: Frozen seed of the random kernel bank; changing it changes the "backbone".
FEATURE_BANK_SEED = 61842315

DOWNSCALE = 16

KERNEL_SIZE = 5


@dataclass(frozen=True)
class FeatureStack:
    """C feature rasters at 1/16 input resolution."""

    channels: np.ndarray  # (C, h, w)

    def __post_init__(self):
        arr = np.asarray(self.channels, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise ValueError("channels must be a (C, h, w) array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature values must be finite")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "channels", arr)

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]


@dataclass(frozen=True)
class ReadoutModel:
    """1x1 readout: per-channel weights, a bias, and a softplus output."""

    weights: np.ndarray
    bias: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or not np.all(np.isfinite(w)) or not math.isfinite(self.bias):
            raise ValueError("readout parameters must be a finite 1-D weight vector and bias")
        w = np.ascontiguousarray(w)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, n_channels: int) -> "ReadoutModel":
        return cls(np.zeros(n_channels), 0.0)

    def as_vector(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "ReadoutModel":
        return cls(np.asarray(vec[:-1], dtype=np.float64), float(vec[-1]))


@dataclass(frozen=True)
class AdamState:
    """Adam optimizer state; moments match the parameter vector shape."""

    step: int
    m: np.ndarray
    v: np.ndarray
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, n_params: int, lr: float = 1e-3, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(0, np.zeros(n_params), np.zeros(n_params), lr, beta1, beta2, eps)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and moment shapes must agree")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads**2
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, step=t, m=m, v=v)


def _kernel_bank(n_channels: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    bank = rng.standard_normal((n_channels - 1, KERNEL_SIZE, KERNEL_SIZE))
    norms = np.sqrt((bank**2).sum(axis=(1, 2), keepdims=True))
    return bank / norms


def _block_mean(arr: np.ndarray, factor: int) -> np.ndarray:
    h, w = arr.shape
    return arr.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def extract_features(image: GrayImage, n_channels: int = 16,
                     bank_seed: int = FEATURE_BANK_SEED) -> FeatureStack:
    """Frozen feature bank: channel 0 is the plain 1/16 intensity downsample,
    the rest are seeded random 5x5 convolutions block-averaged to 1/16.

    Inputs whose dimensions are not multiples of 16 are padded by edge
    replication first.  All filters are linear with no bias, so
    features(a * img) == a * features(img).
    """
    if n_channels < 1:
        raise ValueError("need at least one channel")
    arr = image.data
    pad_h = (-arr.shape[0]) % DOWNSCALE
    pad_w = (-arr.shape[1]) % DOWNSCALE
    if pad_h or pad_w:
        arr = np.pad(arr, ((0, pad_h), (0, pad_w)), mode="edge")
    channels = [_block_mean(arr, DOWNSCALE)]
    for kernel in _kernel_bank(n_channels, bank_seed):
        response = ndimage.correlate(arr, kernel, mode="nearest")
        channels.append(_block_mean(response, DOWNSCALE))
    return FeatureStack(np.stack(channels[:n_channels]))


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def forward(model: ReadoutModel, feats: FeatureStack) -> GrayImage:
    """Readout saliency grid: softplus(sum_c w_c * feat_c + b); strictly positive."""
    if model.weights.size != feats.n_channels:
        raise ValueError(
            f"model has {model.weights.size} weights for {feats.n_channels} channels"
        )
    z = np.tensordot(model.weights, feats.channels, axes=(0, 0)) + model.bias
    return GrayImage(softplus(z))


def backward(
    model: ReadoutModel,
    feats: FeatureStack,
    label: ProbabilityMap,
    spec: PoolingSpec = PoolingSpec(),
    *,
    loss: str = "pooling_kld",
    eps: float = 1e-8,
):
    """Loss and its gradient over the C+1 readout parameters.

    Chains the loss gradient (taken with respect to the raw saliency grid)
    through softplus and the 1x1 readout.  Returns (loss_value, grads)
    with grads[:-1] the weight gradients and grads[-1] the bias gradient.
    """
    if model.weights.size != feats.n_channels:
        raise ValueError("model/feature channel mismatch")
    z = np.tensordot(model.weights, feats.channels, axes=(0, 0)) + model.bias
    y = softplus(z)
    if loss == "pooling_kld":
        lv = pooling_kld(label, y, spec, eps)
    elif loss == "kld":
        lv = kld(label, y, eps)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    dz = lv.gradient * expit(z)
    grad_w = np.tensordot(feats.channels, dz, axes=([1, 2], [0, 1]))
    return lv.value, np.append(grad_w, dz.sum())


@dataclass(frozen=True)
class SyntheticScene:
    """A generated stimulus plus its exact object centers."""

    image: GrayImage
    true_centers: SparseFixation


def generate_scene(
    seed,
    n_objects: int | None = None,
    dims: tuple[int, int] = (256, 256),
    *,
    blob_sigma: float = 8.0,
    min_separation: float = 64.0,
    margin: int = 32,
    peak_range: tuple[int, int] = (128, 255),
) -> SyntheticScene:
    """Dark background with 1..4 bright Gaussian blobs at seeded positions.

    Blob centers keep ``min_separation`` pixels apart and ``margin`` pixels
    from the border; each center's weight is its integer peak brightness,
    so brighter objects carry more label mass.
    """
    width, height = dims
    rng = np.random.default_rng(seed)
    n = int(n_objects) if n_objects is not None else int(rng.integers(1, 5))
    if not 1 <= n <= 4:
        raise ValueError("n_objects must be in [1, 4]")

    positions: list[tuple[float, float]] = []
    attempts = 0
    while len(positions) < n:
        attempts += 1
        if attempts > 10_000:
            raise RuntimeError("could not place separated objects; loosen the geometry")
        x = rng.uniform(margin, width - margin)
        y = rng.uniform(margin, height - margin)
        if all(math.hypot(x - px, y - py) >= min_separation for px, py in positions):
            positions.append((x, y))

    peaks = rng.integers(peak_range[0], peak_range[1] + 1, size=n)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    canvas = np.zeros((height, width))
    centers = []
    for (x, y), peak in zip(positions, peaks):
        canvas += float(peak) * np.exp(
            -((xs - x) ** 2 + (ys - y) ** 2) / (2.0 * blob_sigma**2)
        )
        centers.append(Center(x, y, int(peak)))
    return SyntheticScene(GrayImage(canvas), SparseFixation(width, height, tuple(centers)))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch: int = 16
    lr: float = 1e-3
    loss: str = "pooling_kld"
    window: int = 3
    seed: int = 0
    n_scenes: int = 200
    n_eval: int = 50
    n_channels: int = 16
    eps: float = 1e-8
    scene_dims: tuple[int, int] = (256, 256)
    n_objects: int | None = None


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    hit_rate: float


@dataclass(frozen=True)
class TrainResult:
    trace: tuple[EpochStats, ...]
    model: ReadoutModel
    config: TrainConfig = field(repr=False, default=TrainConfig())


def _label_for(scene: SyntheticScene, grid_w: int, grid_h: int) -> ProbabilityMap:
    return rasterize_sparse(scene.true_centers, grid_w, grid_h, "count-proportional")


def _center_cells(scene: SyntheticScene, grid_w: int, grid_h: int):
    sx = grid_w / scene.true_centers.width
    sy = grid_h / scene.true_centers.height
    return [
        (min(int(c.x * sx), grid_w - 1), min(int(c.y * sy), grid_h - 1))
        for c in scene.true_centers.centers
    ]


def hit_rate(model: ReadoutModel, scenes, feature_stacks, window: int) -> float:
    """Fraction of scenes whose predicted argmax lands within the pooling
    radius (Chebyshev distance window//2 on the coarse grid) of a true center."""
    radius = window // 2
    hits = 0
    for scene, feats in zip(scenes, feature_stacks):
        pred = forward(model, feats).data
        flat = int(np.argmax(pred))
        ay, ax = divmod(flat, pred.shape[1])
        cells = _center_cells(scene, pred.shape[1], pred.shape[0])
        if any(abs(ax - cx) <= radius and abs(ay - cy) <= radius for cx, cy in cells):
            hits += 1
    return hits / len(scenes)


def train(config: TrainConfig = TrainConfig()) -> TrainResult:
    """Minibatch Adam on synthetic scenes; fully deterministic given the seed.

    The trace starts with an epoch-0 row (no updates yet: initial mean loss
    over the training scenes and hit-rate on the held-out evaluation
    scenes), then one row per training epoch.
    """
    if config.loss not in ("kld", "pooling_kld"):
        raise ValueError(f"unknown loss {config.loss!r}")
    spec = PoolingSpec(config.window)
    scenes = [
        generate_scene([config.seed, i], config.n_objects, config.scene_dims)
        for i in range(config.n_scenes)
    ]
    eval_scenes = [
        generate_scene([config.seed, 1_000_000 + i], config.n_objects, config.scene_dims)
        for i in range(config.n_eval)
    ]
    feats = [extract_features(s.image, config.n_channels) for s in scenes]
    eval_feats = [extract_features(s.image, config.n_channels) for s in eval_scenes]
    grid_h, grid_w = feats[0].channels.shape[1:]
    labels = [_label_for(s, grid_w, grid_h) for s in scenes]

    model = ReadoutModel.zeros(config.n_channels)
    state = AdamState.init(config.n_channels + 1, lr=config.lr)

    def mean_loss(m: ReadoutModel) -> float:
        total = 0.0
        for f, lab in zips:
            value, _ = backward(m, f, lab, spec, loss=config.loss, eps=config.eps)
            total += value
        return total / config.n_scenes

    zips = list(zip(feats, labels))
    trace = [EpochStats(0, mean_loss(model), hit_rate(model, eval_scenes, eval_feats, config.window))]

    order_rng = np.random.default_rng([config.seed, 424242])
    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(config.n_scenes)
        epoch_losses = []
        for start in range(0, config.n_scenes, config.batch):
            batch = order[start : start + config.batch]
            grads = np.zeros(config.n_channels + 1)
            for idx in batch:
                value, g = backward(
                    model, feats[idx], labels[idx], spec, loss=config.loss, eps=config.eps
                )
                epoch_losses.append(value)
                grads += g
            grads /= batch.size
            params, state = adam_step(state, model.as_vector(), grads)
            model = ReadoutModel.from_vector(params)
        trace.append(
            EpochStats(
                epoch,
                float(np.mean(epoch_losses)),
                hit_rate(model, eval_scenes, eval_feats, config.window),
            )
        )
    return TrainResult(tuple(trace), model, config)


def trace_to_csv(trace) -> str:
    lines = ["epoch,mean_loss,hit_rate"]
    for row in trace:
        lines.append(f"{row.epoch},{row.mean_loss:.12g},{row.hit_rate:.12g}")
    return "\r\n".join(lines) + "\r\n"

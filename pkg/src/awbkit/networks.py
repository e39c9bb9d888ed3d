"""The cross-sensor illuminant estimator.

Pipeline for one image I (a 3xn pixel matrix):

  1. featurize I with the log-chroma histogram;
  2. a conv net maps the feature to 9 numbers v; the image-specific matrix
     M = |V| / (sum|V| + eps), with V = v reshaped row-major to 3x3, takes
     the image into a learned device-independent working space;
  3. the working-space image M @ I is featurized again and a second conv
     net estimates the working-space illuminant;
  4. the estimate is pulled back through M^-1 and normalized to unit length.

Both nets share one architecture (three conv/ReLU stages and a final
affine layer, no nonlinearity at the output) but have separate weights.
When M is numerically singular (|det| below a floor) small Gaussian
offsets are added entrywise and the inverse is retried a bounded number
of times; gradients then flow through the inverse of the matrix actually
inverted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .exceptions import InvalidArgumentError, SingularMatrixError
from .histogram import HistogramBlock, HistogramConfig, compute_histogram
from .optim import Parameter, xavier_init

MATRIX_EPS = 1e-6
DET_FLOOR = 1e-9
JITTER_SCALE = 1e-4
JITTER_MAX_TRIES = 5


@dataclass(frozen=True)
class ModelConfig:
    hist: HistogramConfig = field(default_factory=HistogramConfig)
    channels: tuple = (64, 128, 256)
    kernels: tuple = (5, 3, 3)
    strides: tuple = (2, 2, 2)
    pads: tuple = (2, 1, 1)
    matrix_eps: float = MATRIX_EPS
    image_size: int = 150

    def __post_init__(self):
        for name in ("channels", "kernels", "strides", "pads"):
            if len(getattr(self, name)) != 3:
                raise InvalidArgumentError(f"{name} must list exactly 3 conv stages")
        if self.image_size < 1:
            raise InvalidArgumentError("image_size must be positive")


def default_config() -> ModelConfig:
    """Full-size configuration (61-bin features, 150x150 thumbnails)."""
    return ModelConfig()


def desk_config(image_size: int = 24) -> ModelConfig:
    """Small configuration for fast CPU experiments on synthetic scenes."""
    return ModelConfig(
        hist=HistogramConfig(bins=31),
        channels=(16, 32, 64),
        image_size=image_size,
    )


def toy_config() -> ModelConfig:
    """Minimal configuration used by the gradient integrity checks."""
    return ModelConfig(
        hist=HistogramConfig(bins=9),
        channels=(2, 2, 2),
        kernels=(3, 3, 3),
        strides=(2, 2, 1),
        pads=(1, 1, 1),
        image_size=8,
    )


class FeatureNet:
    """Three conv/ReLU stages and a final affine layer."""

    def __init__(self, cfg: ModelConfig, out_width: int, prefix: str, rng, dtype):
        self.stages = []
        in_ch, size = 3, cfg.hist.bins
        for i, (ch, k, s, p) in enumerate(
            zip(cfg.channels, cfg.kernels, cfg.strides, cfg.pads), start=1
        ):
            w = Parameter(f"{prefix}.conv{i}.w", xavier_init((ch, in_ch, k, k), rng, dtype))
            b = Parameter(f"{prefix}.conv{i}.b", xavier_init((ch,), rng, dtype))
            size = (size + 2 * p - k) // s + 1
            if size < 1:
                raise InvalidArgumentError(
                    f"conv stage {i} collapses a {cfg.hist.bins}-bin feature to nothing"
                )
            self.stages.append((w, b, s, p))
            in_ch = ch
        self.flat = in_ch * size * size
        self.fc_w = Parameter(f"{prefix}.fc.w", xavier_init((self.flat, out_width), rng, dtype))
        self.fc_b = Parameter(f"{prefix}.fc.b", xavier_init((out_width,), rng, dtype))

    def forward(self, x: Tensor) -> Tensor:
        for w, b, s, p in self.stages:
            x = ad.relu(ad.conv2d(x, w.tensor, b.tensor, stride=s, pad=p))
        x = ad.reshape(x, (x.shape[0], self.flat))
        return ad.linear(x, self.fc_w.tensor, self.fc_b.tensor)

    def parameters(self):
        out = []
        for w, b, _, _ in self.stages:
            out += [w, b]
        return out + [self.fc_w, self.fc_b]


def build_mapping_matrix(v: Tensor, eps: float = MATRIX_EPS) -> Tensor:
    """Turn a 9-vector into the nonnegative, L1-normalized 3x3 matrix
    |V| / (sum|V| + eps) with V filled row-major."""
    if v.shape != (9,):
        raise InvalidArgumentError(f"mapping vector must have 9 entries, got {v.shape}")
    mag = ad.absolute(ad.reshape(v, (3, 3)))
    return mag / (mag.sum() + eps)


def invert_with_jitter(m: Tensor, rng=None, det_floor: float = DET_FLOOR,
                       max_tries: int = JITTER_MAX_TRIES):
    """Invert a 3x3 matrix, jittering it while |det| stays below the floor.

    Each retry adds fresh N(0,1)*1e-4 offsets on top of the previous
    candidate. Returns (inverse, target, tries) where target is the matrix
    actually inverted (== m when tries is 0); raises SingularMatrixError
    when the retry budget is exhausted. The offsets are constants, so
    gradients flow through the inverse of that target.
    """
    if m.shape != (3, 3):
        raise InvalidArgumentError(f"expected a 3x3 matrix, got {m.shape}")
    rng = rng if rng is not None else np.random.default_rng(0)
    offset = np.zeros((3, 3))
    tries = 0

    def small_det():
        with np.errstate(invalid="ignore"):  # NaN det fails the test downstream
            return abs(np.linalg.det(m.data.astype(np.float64) + offset)) < det_floor

    while small_det():
        if tries >= max_tries:
            raise SingularMatrixError(
                f"matrix still singular after {max_tries} jitter attempts"
            )
        offset = offset + rng.standard_normal((3, 3)) * JITTER_SCALE
        tries += 1
    target = m if tries == 0 else m + Tensor(offset.astype(m.dtype))
    return ad.inverse3(target), target, tries


@dataclass
class IlluminantEstimate:
    illuminant: np.ndarray        # unit-norm, sensor space
    working_estimate: np.ndarray  # raw output of the second net
    matrix: np.ndarray            # the mapping actually inverted (jitter included)
    jittered: bool


class _ImageResult:
    __slots__ = ("matrix", "inverse", "working", "raw", "jittered")

    def __init__(self, matrix, inverse, working, raw, jittered):
        self.matrix = matrix
        self.inverse = inverse
        self.working = working
        self.raw = raw
        self.jittered = jittered


class IlluminantEstimator:
    """Bundles the histogram block and the two networks."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0,
                 dtype=np.float32):
        self.config = config or default_config()
        self.dtype = dtype
        self.seed = int(seed)
        ss = np.random.SeedSequence(self.seed)
        init_rng = np.random.default_rng(ss.spawn(1)[0])
        self.hist = HistogramBlock(self.config.hist, dtype=dtype)
        self.mapping_net = FeatureNet(self.config, 9, "map", init_rng, dtype)
        self.estimator_net = FeatureNet(self.config, 3, "est", init_rng, dtype)
        # jitter noise is reseeded per forward call so prediction is a pure
        # function of (image, parameters)
        self.jitter_seed = int(ss.spawn(1)[0].generate_state(1)[0])

    def parameters(self) -> list[Parameter]:
        return (
            self.hist.parameters()
            + self.mapping_net.parameters()
            + self.estimator_net.parameters()
        )

    def param_table(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def forward_batch(self, pixel_sets) -> list[_ImageResult]:
        """Run the full pipeline on a list of (3, n_i) pixel matrices.

        Builds one joint graph (network passes are batched); per-image
        matrix work stays per image. Raises SingularMatrixError if any
        image exhausts its jitter budget.
        """
        if not pixel_sets:
            return []
        tensors = []
        for px in pixel_sets:
            t = px if isinstance(px, Tensor) else Tensor(
                np.asarray(px).astype(self.dtype, copy=False)
            )
            if t.ndim != 2 or t.shape[0] != 3 or t.shape[1] < 1:
                raise InvalidArgumentError(f"pixels must be (3, n>=1), got {t.shape}")
            tensors.append(t)

        feats = [
            ad.permute(compute_histogram(t, self.hist), (2, 0, 1)) for t in tensors
        ]
        v = self.mapping_net.forward(ad.stack(feats))  # (B, 9)

        matrices, mapped_feats = [], []
        for i, t in enumerate(tensors):
            m = build_mapping_matrix(ad.index(v, i), self.config.matrix_eps)
            matrices.append(m)
            mapped = ad.matmul(m, t)
            mapped_feats.append(ad.permute(compute_histogram(mapped, self.hist), (2, 0, 1)))
        lm = self.estimator_net.forward(ad.stack(mapped_feats))  # (B, 3)

        results = []
        for i, m in enumerate(matrices):
            # fresh generator per image: the jitter an image receives does
            # not depend on its position in the batch
            inv, target, tries = invert_with_jitter(
                m, rng=np.random.default_rng(self.jitter_seed)
            )
            working = ad.index(lm, i)
            raw = ad.matmul(inv, working)
            results.append(_ImageResult(target, inv, working, raw, tries > 0))
        return results


def _extract_pixels(image, model: IlluminantEstimator):
    """Accept a RawImage-like object or a bare (3, n) array; apply the mask
    and the model's expected thumbnail size check where dimensions are known."""
    mask = None
    if hasattr(image, "pixels"):
        px = np.asarray(image.pixels)
        w = getattr(image, "width", None)
        h = getattr(image, "height", None)
        if w is not None and h is not None:
            expect = model.config.image_size
            if (w, h) != (expect, expect):
                raise InvalidArgumentError(
                    f"image is {w}x{h} but the model expects {expect}x{expect}"
                )
        mask = getattr(image, "mask", None)
    else:
        px = np.asarray(image)
    if px.ndim != 2 or px.shape[0] != 3:
        raise InvalidArgumentError(f"pixels must be (3, n), got {px.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        if mask.shape[0] != px.shape[1]:
            raise InvalidArgumentError("mask length does not match pixel count")
        px = px[:, ~mask]
    if px.shape[1] == 0:
        raise InvalidArgumentError("image has no unmasked pixels")
    return px


def forward(image, model: IlluminantEstimator) -> IlluminantEstimate:
    """Estimate the scene illuminant of one image; the result's
    `illuminant` is unit-norm in the image's own sensor space."""
    px = _extract_pixels(image, model)
    res = model.forward_batch([px])[0]
    raw = res.raw.data.astype(np.float64)
    n = np.linalg.norm(raw)
    if n == 0 or not np.isfinite(n):
        raise SingularMatrixError("estimate collapsed to a zero vector")
    return IlluminantEstimate(
        illuminant=raw / n,
        working_estimate=res.working.data.copy(),
        matrix=res.matrix.data.copy(),
        jittered=res.jittered,
    )


def predict_batch(images, model: IlluminantEstimator):
    """Inference over a list of images, one at a time (so results match
    single-image calls bit for bit). Per-image failures are collected, not
    raised. Returns (estimates, failures); failed slots hold None."""
    estimates, failures = [], []
    with no_grad():
        for i, image in enumerate(images):
            try:
                estimates.append(forward(image, model))
            except Exception as exc:  # noqa: BLE001 - recorded per image
                estimates.append(None)
                failures.append((i, f"{type(exc).__name__}: {exc}"))
    return estimates, failures

"""Differentiable log-chroma histogram features.

An image (a 3xn matrix of linear RGB pixels) is summarized as an m x m x 3
histogram over log-ratio chroma coordinates. Layer c anchors the ratios at
one color channel:

    layer 0:  u = log(R/G + eps),  v = log(R/B + eps)
    layer 1:  u = log(G/R + eps),  v = log(G/B + eps)
    layer 2:  u = log(B/R + eps),  v = log(B/G + eps)

Each pixel contributes its intensity  iy = sqrt(R^2 + G^2 + B^2)  to every
bin, attenuated by a Laplacian-shaped kernel exp(-|coord - center| / sigma^2)
along both axes, and the accumulated layer is scaled by a per-layer gain and
passed through a square root:

    H(u, v, c) = ( s_c * sum_i iy_i * K_u * K_v ) ** 0.5

The gain s_c and fall-off sigma_c are trainable; both are stored as logs so
they stay positive. Gradients flow to the pixels as well, which is what lets
an upstream color transform be trained through this feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import InvalidArgumentError
from .optim import Parameter

DEFAULT_EPS = 1e-6
PIXEL_FLOOR = 1e-9  # channel floor applied before ratio division


@dataclass(frozen=True)
class HistogramConfig:
    bins: int = 61
    coord_min: float = -3.0
    coord_max: float = 3.0
    eps: float = DEFAULT_EPS
    pixel_floor: float = PIXEL_FLOOR
    init_scale: float = 1.0
    init_falloff: float = 0.25

    def grid(self) -> np.ndarray:
        """Uniform bin centers; the middle bin sits exactly at the midpoint
        when `bins` is odd."""
        if self.bins < 2:
            raise InvalidArgumentError(f"need at least 2 bins, got {self.bins}")
        if not self.coord_max > self.coord_min:
            raise InvalidArgumentError("empty coordinate range")
        spacing = (self.coord_max - self.coord_min) / (self.bins - 1)
        center = 0.5 * (self.coord_max + self.coord_min)
        half = (self.bins - 1) / 2.0
        return center + (np.arange(self.bins) - half) * spacing


class HistogramBlock:
    """Config plus the two trainable 3-vectors (log gain, log fall-off)."""

    def __init__(self, config: HistogramConfig | None = None, dtype=np.float32,
                 name_prefix: str = "hist"):
        self.config = config or HistogramConfig()
        self.dtype = dtype
        grid = self.config.grid()
        if np.any(np.diff(grid) <= 0):
            raise InvalidArgumentError("histogram grid must be strictly increasing")
        self.grid = grid
        self.log_scale = Parameter(
            f"{name_prefix}.log_scale",
            Tensor(np.full(3, np.log(self.config.init_scale), dtype=dtype), requires_grad=True),
        )
        self.log_falloff = Parameter(
            f"{name_prefix}.log_falloff",
            Tensor(np.full(3, np.log(self.config.init_falloff), dtype=dtype), requires_grad=True),
        )

    def parameters(self):
        return [self.log_scale, self.log_falloff]

    def scale_values(self) -> np.ndarray:
        return np.exp(self.log_scale.data.astype(np.float64))

    def falloff_values(self) -> np.ndarray:
        return np.exp(self.log_falloff.data.astype(np.float64))


def compute_histogram(pixels, block: HistogramBlock, mask=None) -> Tensor:
    """Histogram feature of shape (bins, bins, 3).

    pixels: (3, n) array or Tensor of linear RGB values in [0, 1]. A boolean
    mask (n,) drops pixels from the sum entirely; masked input is only
    supported for plain arrays (filter before building a graph otherwise).
    """
    if isinstance(pixels, Tensor):
        if mask is not None:
            raise InvalidArgumentError("mask must be applied before graph input")
        px = pixels
    else:
        arr = np.asarray(pixels)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != (arr.shape[-1],):
                raise InvalidArgumentError(
                    f"mask shape {mask.shape} does not match pixel count {arr.shape}"
                )
            arr = arr[:, ~mask]
        px = Tensor(arr.astype(block.dtype, copy=False))
    if px.ndim != 2 or px.shape[0] != 3:
        raise InvalidArgumentError(f"pixels must be (3, n), got {px.shape}")
    n = px.shape[1]
    if n == 0:
        raise InvalidArgumentError("no unmasked pixels")

    cfg = block.config
    grid = Tensor(block.grid.astype(px.dtype))

    r, g, b = ad.index(px, 0), ad.index(px, 1), ad.index(px, 2)
    # intensity uses the raw values so an all-zero image yields a zero feature
    iy = ad.sqrt(r * r + g * g + b * b)
    rf = ad.clamp_min(r, cfg.pixel_floor)
    gf = ad.clamp_min(g, cfg.pixel_floor)
    bf = ad.clamp_min(b, cfg.pixel_floor)

    gain = ad.exp(block.log_scale.tensor)
    falloff = ad.exp(block.log_falloff.tensor)

    layers = []
    anchored = [(rf, gf, bf), (gf, rf, bf), (bf, rf, gf)]
    for c, (anchor, first, second) in enumerate(anchored):
        u = ad.log(anchor / first + cfg.eps)
        v = ad.log(anchor / second + cfg.eps)
        sg = ad.index(falloff, c)
        inv_s2 = 1.0 / (sg * sg)
        ku = ad.exp(-(ad.absolute(ad.reshape(u, (n, 1)) - grid) * inv_s2))
        kv = ad.exp(-(ad.absolute(ad.reshape(v, (n, 1)) - grid) * inv_s2))
        mass = ad.weighted_cross_bin(ku, iy, kv)
        layers.append(ad.sqrt(ad.index(gain, c) * mass))
    return ad.permute(ad.stack(layers), (1, 2, 0))


def histogram_gradcheck(block: HistogramBlock, pixels: np.ndarray,
                        h: float = 1e-4, rtol: float = 1e-3, atol: float = 1e-5,
                        probe_seed: int = 0):
    """Finite-difference check of the feature's three gradient paths.

    Projects the histogram onto a fixed random probe to get a scalar, then
    compares reverse-mode gradients with central differences for the gain,
    the fall-off, and the pixels. Runs in float64 regardless of the block's
    training dtype. Returns a dict with per-input max relative deviation
    and an overall 'ok' flag.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    twin = HistogramBlock(block.config, dtype=np.float64)
    twin.log_scale.data[...] = block.log_scale.data
    twin.log_falloff.data[...] = block.log_falloff.data

    px = Tensor(pixels, requires_grad=True)
    probe = np.random.default_rng(probe_seed).standard_normal(
        (block.config.bins, block.config.bins, 3)
    )

    def build():
        return (compute_histogram(px, twin) * Tensor(probe)).sum()

    report = {}
    ok_all = True
    for key, tensor in (
        ("scale", twin.log_scale.tensor),
        ("falloff", twin.log_falloff.tensor),
        ("pixels", px),
    ):
        ok, worst = ad.gradcheck(build, [tensor], h=h, rtol=rtol, atol=atol)
        report[key] = worst["rel"]
        ok_all = ok_all and ok
    report["ok"] = ok_all
    return report


def export_csv(values: np.ndarray, grid: np.ndarray, path):
    """Dump a computed histogram as flat rows (u, v, c, value) for plotting."""
    values = np.asarray(values)
    m = grid.shape[0]
    if values.shape != (m, m, 3):
        raise InvalidArgumentError(f"expected ({m},{m},3) values, got {values.shape}")
    with open(path, "w") as fh:
        fh.write("u,v,c,value\n")
        for i in range(m):
            for j in range(m):
                for c in range(3):
                    fh.write(
                        f"{float(grid[i])!r},{float(grid[j])!r},{c},{float(values[i, j, c])!r}\n"
                    )

"""What the log-chroma histogram sees.

A two-patch image (one gray patch, one orange patch) lands in two distinct
histogram cells; scaling exposure moves no mass between cells and only
rescales it by sqrt(k).
"""

import numpy as np

from awbkit.autodiff import Tensor
from awbkit.histogram import HistogramBlock, HistogramConfig, compute_histogram

block = HistogramBlock(HistogramConfig(bins=21), dtype=np.float64)

gray = np.tile([[0.4], [0.4], [0.4]], (1, 60))
orange = np.tile([[0.6], [0.3], [0.1]], (1, 40))
pixels = np.concatenate([gray, orange], axis=1)

h = compute_histogram(Tensor(pixels), block).data
print("histogram shape:", h.shape)          # (bins, bins, 3)
print("occupied cells :", int(np.count_nonzero(h > 1e-3)))

# where did the mass go? (layer 0 anchors ratios at the red channel)
layer = h[:, :, 0]
for flat in np.argsort(layer, axis=None)[::-1][:4]:
    i, j = np.unravel_index(flat, layer.shape)
    print(f"  cell ({i:2d},{j:2d})  weight {layer[i, j]:.4f}")

# exposure scaling: same cells, sqrt(k) times the mass
for k in (0.25, 4.0):
    hk = compute_histogram(Tensor(pixels * k), block).data
    print(f"k={k:4g}: max |H(k*I) - sqrt(k)*H(I)| =",
          np.max(np.abs(hk - np.sqrt(k) * h)))

"""The five classical estimators on one synthetic scene.

Generates a small multi-patch image under a warm illuminant, then asks each
statistics-based method for the light source and scores it in degrees.
"""

import numpy as np

from awbkit.baselines import METHODS, BaselineConfig, estimate_baseline
from awbkit.dataio import RawImage
from awbkit.metrics import recovery_angular_error

rng = np.random.default_rng(7)

# reflectances x illuminant, patchwise
h = w = 32
illuminant = np.array([0.62, 0.45, 0.28])        # warm light
reflect = np.ones((h, w, 3)) * 0.5
for _ in range(12):
    r0, c0 = rng.integers(0, h - 8), rng.integers(0, w - 8)
    reflect[r0:r0 + 8, c0:c0 + 8] = rng.uniform(0.1, 0.95, 3)
image = reflect * illuminant

pixels = image.reshape(h * w, 3).T
raw = RawImage(pixels, w, h, "demo", gt_illuminant=illuminant)

print(f"{'method':<16} {'estimate':<30} error")
for method in METHODS:
    est = estimate_baseline(raw, BaselineConfig(method))
    err = recovery_angular_error(illuminant, est)
    vec = " ".join(f"{v:.3f}" for v in est)
    print(f"{method:<16} ({vec})   {err:6.2f} deg")

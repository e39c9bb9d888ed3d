"""Tour of the reverse-mode engine underneath the estimator.

Builds a few small graphs, checks one gradient against finite differences,
and backprops through the 3x3 matrix inverse that the illuminant pipeline
relies on.
"""

import numpy as np

from awbkit import autodiff as ad
from awbkit.autodiff import Tensor

# --- scalars-and-broadcasts warm-up ----------------------------------------

x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
y = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
z = (x * y + ad.relu(x - 2.0)).sum()
z.backward()
print("z =", float(z.data))
print("dz/dx =", x.grad)   # y plus the relu gate on (x - 2)
print("dz/dy =", y.grad)   # x

# --- check a composite gradient numerically ---------------------------------

a = Tensor(np.random.default_rng(0).uniform(0.5, 1.5, (4,)), requires_grad=True)
loss = ad.tmean(ad.sqrt(a) * ad.arccos(a / 2.0))
loss.backward()

h = 1e-6
fd = np.empty(4)
for i in range(4):
    bumped = a.data.copy(); bumped[i] += h
    up = np.mean(np.sqrt(bumped) * np.arccos(bumped / 2.0))
    bumped[i] -= 2 * h
    dn = np.mean(np.sqrt(bumped) * np.arccos(bumped / 2.0))
    fd[i] = (up - dn) / (2 * h)
print("\nanalytic:", a.grad)
print("numeric :", fd)
print("max gap :", np.max(np.abs(a.grad - fd)))

# --- gradients through a matrix inverse -------------------------------------

m = Tensor(np.eye(3) + 0.2 * np.random.default_rng(1).standard_normal((3, 3)),
           requires_grad=True)
inv = ad.inverse3(m)
s = inv.sum()
s.backward()
print("\nsum(inv(M)) =", float(s.data))
print("d sum / dM :\n", m.grad)  # equals -inv.T @ ones @ inv.T
ones = np.ones((3, 3))
print("closed form:\n", -(inv.data.T @ ones @ inv.data.T))

"""Parameters, initialization, and the Adam update rule."""

from __future__ import annotations

import numpy as np

from .autodiff import DEFAULT_DTYPE, Tensor
from .exceptions import InvalidArgumentError, InvalidStateError

# optimizer defaults used throughout training
ADAM_BETA1 = 0.85
ADAM_BETA2 = 0.99
ADAM_EPS = 1e-8


def xavier_init(shape, seed_or_rng, dtype=DEFAULT_DTYPE) -> Tensor:
    """Uniform Glorot initialization, zeros for 1-D bias shapes.

    Weights (ndim >= 2) are drawn from U(-a, a) with a = sqrt(6/(fan_in+fan_out));
    fan counts follow the usual conv convention (receptive field folded into
    both fans). Same (shape, seed) always yields bit-identical values.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s <= 0 for s in shape):
        raise InvalidArgumentError(f"xavier_init: bad shape {shape}")
    if len(shape) == 1:
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)
    rng = (
        seed_or_rng
        if isinstance(seed_or_rng, np.random.Generator)
        else np.random.default_rng(seed_or_rng)
    )
    if len(shape) == 2:
        fan_in, fan_out = shape[0], shape[1]
    else:
        receptive = int(np.prod(shape[2:]))
        fan_in = shape[1] * receptive
        fan_out = shape[0] * receptive
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    vals = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(vals, requires_grad=True)


class Parameter:
    """A named trainable tensor plus its Adam state."""

    __slots__ = ("name", "tensor", "m", "v", "step")

    def __init__(self, name: str, tensor: Tensor):
        if not tensor.requires_grad:
            raise InvalidArgumentError(f"parameter '{name}' must require grad")
        self.name = name
        self.tensor = tensor
        self.m = np.zeros_like(tensor.data)
        self.v = np.zeros_like(tensor.data)
        self.step = 0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    def zero_grad(self):
        self.tensor.zero_grad()

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.tensor.shape}, step={self.step})"


def adam_step(params, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """One bias-corrected Adam update, in place; clears gradients after.

    First step from fresh state moves each weight by exactly
    -lr * g / (|g| + eps).
    """
    if lr < 0:
        raise InvalidArgumentError(f"negative learning rate {lr}")
    for p in params:
        if p.tensor.grad is None:
            raise InvalidStateError(f"parameter '{p.name}' has no gradient buffer")
    for p in params:
        g = p.tensor.grad
        p.step += 1
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * (g * g)
        m_hat = p.m / (1.0 - beta1 ** p.step)
        v_hat = p.v / (1.0 - beta2 ** p.step)
        p.tensor.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(
            p.tensor.data.dtype, copy=False
        )
        p.zero_grad()

"""Pure-numpy kernel backend.

matmul accumulates over the contraction index one step at a time in
float32, which reproduces the compiled kernel's left-to-right accumulation
bit for bit. The transcendental kernels use numpy/scipy vectorized math;
those may differ from libm by ULPs, so cross-backend comparisons for them
are tolerance-based (within one backend everything is deterministic).
"""

import numpy as np
from scipy.special import erf

_SQRT1_2 = np.float32(0.70710678118654752440)
_INV_SQRT_2PI = np.float32(0.3989422804014327)


def matmul_f32(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, kk = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float32)
    for k in range(kk):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def softmax_rows_f32(a: np.ndarray) -> np.ndarray:
    mx = a.max(axis=1, keepdims=True)
    e = np.exp(a - mx, dtype=np.float32)
    # left-to-right row sums, matching the compiled loop
    s = np.add.reduce(e, axis=1, keepdims=True)
    return (e / s).astype(np.float32)


def gelu_f32(x: np.ndarray) -> np.ndarray:
    cdf = np.float32(0.5) * (np.float32(1.0) + erf(x * _SQRT1_2).astype(np.float32))
    return (x * cdf).astype(np.float32)


def gelu_grad_f32(x: np.ndarray) -> np.ndarray:
    cdf = np.float32(0.5) * (np.float32(1.0) + erf(x * _SQRT1_2).astype(np.float32))
    phi = _INV_SQRT_2PI * np.exp(np.float32(-0.5) * x * x, dtype=np.float32)
    return (cdf + x * phi).astype(np.float32)


def relu_f32(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.float32(0.0))


def relu_grad_f32(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0.0, np.float32(1.0), np.float32(0.0))

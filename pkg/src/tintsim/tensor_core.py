"""Minimal dense float32 kernels: matmul, row softmax, activations.

Everything higher up is built on these three operations plus numpy
glue. Arrays are float32, row-major; matmul accumulates left-to-right
over the contraction index so repeated runs are bit-identical (see
_backend for the compiled/python kernel selection).

The finite-difference quotients (norm_quotient, act_quotient) run in
float64 internally: the subtraction cancels ~log10(1/eps) digits, so
float32 rounding of the two function values would leave noise of order
ulp/eps (~1e-4 at eps=1e-3) in the result. Both the reference model
and the simulator call these, which is what keeps their backward
passes in agreement at the advertised tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from ._backend import BACKEND_NAME, kernels
from .errors import ConfigError, DegenerateInputError, DimensionError

__all__ = ["Tensor", "BACKEND_NAME", "SIGMA_FLOOR", "as_f32", "matmul",
           "softmax_rows", "activation_eval", "norm_quotient", "act_quotient"]

SIGMA_FLOOR = 1e-12


@dataclass
class Tensor:
    """Validated container: shape + contiguous float32 data, all finite."""

    shape: tuple
    data: np.ndarray

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.data = np.ascontiguousarray(self.data, dtype=np.float32).reshape(-1)
        n = 1
        for s in self.shape:
            n *= s
        if n != self.data.size:
            raise DimensionError(
                f"shape {self.shape} wants {n} entries, data has {self.data.size}"
            )
        if not np.all(np.isfinite(self.data)):
            raise DimensionError("non-finite entries rejected")

    @classmethod
    def from_array(cls, a) -> "Tensor":
        a = np.asarray(a, dtype=np.float32)
        return cls(a.shape, a.reshape(-1).copy())

    @property
    def array(self) -> np.ndarray:
        return self.data.reshape(self.shape)


def as_f32(a) -> np.ndarray:
    """Coerce to a contiguous float32 ndarray (no finiteness check)."""
    if isinstance(a, Tensor):
        a = a.array
    return np.ascontiguousarray(a, dtype=np.float32)


def matmul(a, b) -> np.ndarray:
    """a @ b with fixed-order float32 accumulation. 1-D operands are
    promoted to a row (a) / column (b) and the result squeezed back."""
    a = as_f32(a)
    b = as_f32(b)
    a_vec = a.ndim == 1
    b_vec = b.ndim == 1
    if a_vec:
        a = a[None, :]
    if b_vec:
        b = b[:, None]
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul expects 1-D or 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    out = kernels.matmul_f32(a, b)
    if a_vec and b_vec:
        return out.reshape(())
    if a_vec:
        return out[0]
    if b_vec:
        return out[:, 0]
    return out


def softmax_rows(a) -> np.ndarray:
    """Row-wise softmax with max subtraction. -inf entries are legal and
    give exact zeros (used for masked attention scores)."""
    a = as_f32(a)
    vec = a.ndim == 1
    if vec:
        a = a[None, :]
    if a.ndim != 2:
        raise DimensionError("softmax_rows expects a 1-D or 2-D array")
    out = kernels.softmax_rows_f32(a)
    return out[0] if vec else out


def activation_eval(x, kind: str, derivative: bool = False) -> np.ndarray:
    """Elementwise activation or its exact derivative.

    GeLU is the exact Gaussian-CDF form x*Phi(x); ReLU' at 0 is defined
    as 1 (the convention the alignment bound is proved under).
    """
    x = as_f32(x)
    flat = x.reshape(-1)
    if kind == "gelu":
        out = kernels.gelu_grad_f32(flat) if derivative else kernels.gelu_f32(flat)
    elif kind == "relu":
        out = kernels.relu_grad_f32(flat) if derivative else kernels.relu_f32(flat)
    else:
        raise ConfigError(f"unknown activation kind {kind!r}")
    return out.reshape(x.shape)


def _normalize_rows_f64(x64: np.ndarray, kind: str) -> np.ndarray:
    if x64.shape[-1] < 2:
        raise DimensionError("normalization needs at least 2 coordinates")
    if kind == "layernorm":
        mu = x64.mean(axis=-1, keepdims=True)
    elif kind == "rmsnorm":
        mu = np.zeros_like(x64[..., :1])
    else:
        raise ConfigError(f"unknown norm kind {kind!r}")
    sigma = np.sqrt(((x64 - mu) ** 2).mean(axis=-1, keepdims=True))
    if np.any(sigma < SIGMA_FLOOR):
        raise DegenerateInputError(
            f"{kind} statistics below floor (sigma < {SIGMA_FLOOR})")
    return (x64 - mu) / sigma


def norm_quotient(x, dz, eps, kind: str) -> np.ndarray:
    """(f(x + eps*dz) - f(x)) / eps for the parameter-free row
    normalization f, evaluated in float64 (see module docstring)."""
    x64 = as_f32(x).astype(np.float64)
    dz64 = as_f32(dz).astype(np.float64)
    fx = _normalize_rows_f64(x64, kind)
    fs = _normalize_rows_f64(x64 + float(eps) * dz64, kind)
    return ((fs - fx) / float(eps)).astype(np.float32)


def _act_f64(z64: np.ndarray, kind: str) -> np.ndarray:
    if kind == "gelu":
        return 0.5 * z64 * (1.0 + erf(z64 / np.sqrt(2.0)))
    if kind == "relu":
        return np.maximum(z64, 0.0)
    raise ConfigError(f"unknown activation kind {kind!r}")


def act_quotient(x, dy, eps, kind: str) -> np.ndarray:
    """(act(x + eps*dy) - act(x)) / eps with float64 internals."""
    x64 = as_f32(x).astype(np.float64)
    dy64 = as_f32(dy).astype(np.float64)
    num = _act_f64(x64 + float(eps) * dy64, kind) - _act_f64(x64, kind)
    return (num / float(eps)).astype(np.float32)

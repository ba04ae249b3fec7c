"""Primitive operations the simulator's layers are assembled from.

A simulator layer only ever touches its input through a handful of
structured primitives: gated position-aware attention (linear or
softmax score function), the two head-split linear maps, group
normalization, and a GeLU-based multiplication gadget. Keeping these
as standalone, testable functions lets the layer constructions in
tint_modules stay purely about wiring.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DegenerateInputError, DimensionError, PreconditionError
from .tensor_core import activation_eval, as_f32, matmul, softmax_rows


# ---------------------------------------------------------------------------
# gated position-aware attention


@dataclass
class TintAttnParams:
    """One simulator attention layer.

    Content projections are full (D, D) linear maps; positional tables
    hold one per-position row of width D/H shared across heads, switched
    on per head by the gate vectors. f_attn selects the score function.
    """
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    b_q: np.ndarray
    b_k: np.ndarray
    b_v: np.ndarray
    wp_q: np.ndarray          # (T, D/H)
    wp_k: np.ndarray
    wp_v: np.ndarray
    lam_q: np.ndarray         # (H,)
    lam_k: np.ndarray
    lam_v: np.ndarray
    f_attn: str = "linear"    # linear | softmax

    @property
    def n_heads(self) -> int:
        return int(self.lam_q.shape[0])

    def validate(self, t: int, d: int):
        h = self.n_heads
        if d % h != 0:
            raise ConfigError("width must be divisible by head count")
        dh = d // h
        for name in ("w_q", "w_k", "w_v"):
            if getattr(self, name).shape != (d, d):
                raise DimensionError(f"{name} must be ({d},{d})")
        for name in ("wp_q", "wp_k", "wp_v"):
            if getattr(self, name).shape != (t, dh):
                raise DimensionError(f"{name} must be ({t},{dh})")
        for name in ("lam_q", "lam_k", "lam_v"):
            if getattr(self, name).shape != (h,):
                raise DimensionError(f"{name} must be ({h},)")
        if self.f_attn not in ("linear", "softmax"):
            raise ConfigError(f"unknown f_attn {self.f_attn!r}")
        return self


def zero_attn(t: int, d: int, h: int, f_attn: str = "linear") -> TintAttnParams:
    dh = d // h
    z = np.zeros
    return TintAttnParams(
        w_q=z((d, d), np.float32), w_k=z((d, d), np.float32), w_v=z((d, d), np.float32),
        b_q=z(d, np.float32), b_k=z(d, np.float32), b_v=z(d, np.float32),
        wp_q=z((t, dh), np.float32), wp_k=z((t, dh), np.float32), wp_v=z((t, dh), np.float32),
        lam_q=z(h, np.float32), lam_k=z(h, np.float32), lam_v=z(h, np.float32),
        f_attn=f_attn,
    )


def position_onehots(t: int, width: int, indices=None, scale=1.0) -> np.ndarray:
    """Positional table whose row at position p is scale * e_{indices[p]}
    (rows with index None/-1 stay zero)."""
    out = np.zeros((t, width), dtype=np.float32)
    if indices is None:
        indices = range(min(t, width))
        for p in indices:
            out[p, p] = scale
        return out
    for p, idx in enumerate(indices):
        if idx is None or idx < 0:
            continue
        if idx >= width:
            raise DimensionError(f"one-hot index {idx} exceeds width {width}")
        out[p, idx] = np.float32(scale)
    return out


def tint_attention(params: TintAttnParams, xs, mask) -> tuple:
    """Runs one simulator attention layer. Returns (output, scores) where
    scores are post-normalization weights per head, with masked entries
    exactly zero under the linear score function."""
    xs = np.atleast_2d(as_f32(xs))
    t, d = xs.shape
    params.validate(t, d)
    h = params.n_heads
    dh = d // h
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (t, t):
        raise DimensionError("mask shape mismatch")
    q = matmul(xs, params.w_q.T) + params.b_q
    k = matmul(xs, params.w_k.T) + params.b_k
    v = matmul(xs, params.w_v.T) + params.b_v
    ys = np.zeros_like(xs)
    scores = np.zeros((h, t, t), dtype=np.float32)
    for hi in range(h):
        sl = slice(hi * dh, (hi + 1) * dh)
        qh = (q[:, sl] + params.lam_q[hi] * params.wp_q).astype(np.float32)
        kh = (k[:, sl] + params.lam_k[hi] * params.wp_k).astype(np.float32)
        vh = (v[:, sl] + params.lam_v[hi] * params.wp_v).astype(np.float32)
        s = matmul(qh, kh.T)
        if params.f_attn == "linear":
            a = np.where(mask, s, np.float32(0.0)).astype(np.float32)
        else:
            s = np.where(mask, s, np.float32(-np.inf)).astype(np.float32)
            live = mask.any(axis=1)
            a = np.zeros_like(s)
            if live.any():
                a[live] = softmax_rows(s[live])
        scores[hi] = a
        ys[:, sl] = matmul(a, vh)
    return ys, scores


# ---------------------------------------------------------------------------
# head-split linear maps


def hsplit_splitwise(w, b, e) -> np.ndarray:
    """Independent (d x d) map per band: out_h = W_h @ e_h + B_h.
    Shapes: w (H, d, d), b (H, d), e (..., H*d)."""
    w = as_f32(w)
    b = as_f32(b)
    e = as_f32(e)
    if w.ndim != 3 or w.shape[1] != w.shape[2]:
        raise DimensionError("splitwise weights must be (H, d, d)")
    h, d, _ = w.shape
    if b.shape != (h, d):
        raise DimensionError("splitwise bias must be (H, d)")
    if e.shape[-1] != h * d:
        raise DimensionError(f"input width must be {h * d}")
    single = e.ndim == 1
    e2 = np.atleast_2d(e)
    out = np.zeros_like(e2)
    for hi in range(h):
        sl = slice(hi * d, (hi + 1) * d)
        out[:, sl] = matmul(e2[:, sl], w[hi].T) + b[hi]
    out = out.astype(np.float32)
    return out[0] if single else out


def hsplit_dimwise(w, b, e) -> np.ndarray:
    """Per-coordinate mixing across bands: out band h, coordinate c is
    (W_c @ s_c)_h + B[c, h], where s_c stacks coordinate c of every band.
    Shapes: w (d, H, H), b (d, H), e (..., H*d)."""
    w = as_f32(w)
    b = as_f32(b)
    e = as_f32(e)
    if w.ndim != 3 or w.shape[1] != w.shape[2]:
        raise DimensionError("dimwise weights must be (d, H, H)")
    d, h, _ = w.shape
    if b.shape != (d, h):
        raise DimensionError("dimwise bias must be (d, H)")
    if e.shape[-1] != h * d:
        raise DimensionError(f"input width must be {h * d}")
    single = e.ndim == 1
    e2 = np.atleast_2d(e)
    t = e2.shape[0]
    bands = e2.reshape(t, h, d)            # [token, band, coord]
    out = np.zeros_like(bands)
    for c in range(d):
        s_c = bands[:, :, c]               # (t, H)
        out[:, :, c] = matmul(s_c, w[c].T) + b[c]
    out = out.reshape(t, h * d).astype(np.float32)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# group normalization


def group_norm(gamma, b, e, group_size: int, kind: str = "layernorm") -> np.ndarray:
    """Normalizes each contiguous group of group_size coordinates
    independently, then applies the full-width scale/shift."""
    e = as_f32(e)
    d = e.shape[-1]
    if group_size < 2:
        raise ConfigError("group_size must be >= 2")
    if d % group_size != 0:
        raise DimensionError(f"width {d} not divisible by group size {group_size}")
    if kind not in ("layernorm", "rmsnorm"):
        raise ConfigError(f"unknown norm kind {kind!r}")
    single = e.ndim == 1
    e2 = np.atleast_2d(e)
    t = e2.shape[0]
    g = e2.reshape(t, d // group_size, group_size)
    if kind == "layernorm":
        mu = g.mean(axis=-1, keepdims=True, dtype=np.float32)
    else:
        mu = np.zeros_like(g[..., :1])
    var = ((g - mu) ** 2).mean(axis=-1, keepdims=True, dtype=np.float32)
    sigma = np.sqrt(var)
    if np.any(sigma < 1e-12):
        raise DegenerateInputError("degenerate group in group_norm (sigma < 1e-12)")
    z = ((g - mu) / sigma).reshape(t, d)
    out = (as_f32(gamma) * z + as_f32(b)).astype(np.float32)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# multiplication through GeLU


SQRT_HALF_PI = float(np.sqrt(np.pi / 2.0))


def _gelu64(z: np.ndarray) -> np.ndarray:
    from scipy.special import erf
    return 0.5 * z * (1.0 + erf(z / np.sqrt(2.0)))


def gelu_multiply(x, y, scale: float = 0.1) -> np.ndarray:
    """Elementwise product via three GeLU evaluations:

        sqrt(pi/2) * (GeLU(s(x+y)) - GeLU(sx) - GeLU(sy)) / s^2

    The quadratic Taylor term of GeLU supplies the cross term xy; odd
    and quartic terms leave an O(s^2 * cubic(x,y)) error, so shrinking
    the operand scale shrinks the error cubically relative to the
    product. Evaluated in float64 so the gadget's own error dominates
    rounding."""
    if scale <= 0:
        raise ConfigError("scale must be positive")
    x64 = np.asarray(as_f32(x), dtype=np.float64)
    y64 = np.asarray(as_f32(y), dtype=np.float64)
    if x64.shape != y64.shape:
        raise DimensionError("operand shapes must match")
    s = float(scale)
    out = SQRT_HALF_PI * (_gelu64(s * (x64 + y64)) - _gelu64(s * x64) - _gelu64(s * y64)) / (s * s)
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# linear attention realized by softmax attention


def linear_as_softmax_bound(scores, t: int, u_exponent: float) -> float:
    """Largest admissible epsilon for the conversion below."""
    amax = float(np.max(np.abs(scores))) if np.size(scores) else 0.0
    bound = min(1.0, (0.25 / max(t, 1)) ** (1.0 / u_exponent))
    if amax > 0:
        bound = min(bound, 0.25 / amax)
    return bound


def linear_as_softmax(scores, values, eps: float, u_exponent: float = 1.5) -> np.ndarray:
    """Evaluates a linear-attention layer (given its post-mask scores and
    per-head values) with softmax heads only: each original head becomes
    two softmax heads over the sequence plus one extra absorbing token.

    Head one sees logits [eps * a_t1, ..., eps * a_tT, -u_exponent*ln(eps)]
    with values scaled by eps^-(1+u_exponent) (absorber value 0); head two
    is uniform over the same T+1 slots. Combining head1 - ((T+1)/eps)*head2
    cancels the bulk term and leaves sum_j a_tj v_j with a deviation of
    order eps^(u_exponent - 1).

    Raises PreconditionError when eps exceeds the admissible bound."""
    a = np.asarray(as_f32(scores), dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    h, t, t2 = a.shape
    if t != t2:
        raise DimensionError("scores must be square per head")
    v = np.asarray(as_f32(values), dtype=np.float64)
    v = np.atleast_2d(v)
    if v.shape[0] != t or v.shape[1] % h != 0:
        raise DimensionError("values must be (T, H*dv)")
    if u_exponent <= 1.0:
        raise ConfigError("u_exponent must exceed 1 for the error to vanish")
    bound = linear_as_softmax_bound(a, t, u_exponent)
    if not (0.0 < eps <= bound):
        raise PreconditionError(
            f"eps={eps!r} outside admissible range (0, {bound:.6g}]", bound=bound)
    dv = v.shape[1] // h
    u_logit = -u_exponent * np.log(eps)
    vscale = eps ** (-(1.0 + u_exponent))
    out = np.zeros((t, h * dv), dtype=np.float64)
    for hi in range(h):
        sl = slice(hi * dv, (hi + 1) * dv)
        logits = np.concatenate([eps * a[hi], np.full((t, 1), u_logit)], axis=1)
        shifted = logits - logits.max(axis=1, keepdims=True)
        w1 = np.exp(shifted)
        w1 /= w1.sum(axis=1, keepdims=True)
        ext1 = np.concatenate([vscale * v[:, sl], np.zeros((1, dv))], axis=0)
        head1 = w1 @ ext1
        # uniform head: logits identically zero over the T+1 slots
        ext2 = np.concatenate([v[:, sl], np.zeros((1, dv))], axis=0)
        head2 = np.full((t, t + 1), 1.0 / (t + 1)) @ ext2
        out[:, sl] = head1 - ((t + 1) / eps) * head2
    return out.astype(np.float32)

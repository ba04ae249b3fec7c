"""Simulator primitives: gated attention, head-split maps, group norm,
the GeLU multiplication gadget, and the linear->softmax conversion."""

import numpy as np
import pytest

from tintsim.aux_reference import attach_heads, attn_fwd, AttnParams
from tintsim.errors import (ConfigError, DegenerateInputError, DimensionError,
                            PreconditionError)
from tintsim.tensor_core import matmul
from tintsim.tint_kernels import (TintAttnParams, gelu_multiply, group_norm,
                                  hsplit_dimwise, hsplit_splitwise,
                                  linear_as_softmax, linear_as_softmax_bound,
                                  position_onehots, tint_attention, zero_attn)

F32 = np.float32


# ---------------------------------------------------------------------------
# gated position-aware attention


def test_tint_attention_ungated_softmax_matches_plain():
    # with all position gates at zero, the layer is ordinary attention
    d, h, t = 8, 2, 5
    rng = np.random.default_rng(0)
    mats = {n: (0.4 * rng.standard_normal((d, d))).astype(F32)
            for n in ("w_q", "w_k", "w_v")}
    vecs = {n: rng.standard_normal(d).astype(F32) * 0.2
            for n in ("b_q", "b_k", "b_v")}
    params = zero_attn(t, d, h, f_attn="softmax")
    for n, v in {**mats, **vecs}.items():
        setattr(params, n, v)
    xs = rng.standard_normal((t, d)).astype(F32)
    mask = np.tril(np.ones((t, t), dtype=bool))
    ys, scores = tint_attention(params, xs, mask)
    ref_y, ref_s = attn_fwd(attach_heads(AttnParams(**mats, **vecs), h), xs, mask)
    assert np.max(np.abs(ys - ref_y)) <= 1e-6
    assert np.max(np.abs(scores - ref_s)) <= 1e-6


def test_tint_attention_positional_copy():
    # a pure positional construction that copies row src[t] to row t:
    # query row t = e_{src[t]}, key row j = e_j, huge score scale + softmax
    t, d, h = 4, 4, 1
    src = [2, 0, 3, 1]
    params = zero_attn(t, d, h, f_attn="softmax")
    params.wp_q = position_onehots(t, d, src, scale=50.0)
    params.wp_k = position_onehots(t, d, scale=1.0)
    params.lam_q = np.ones(1, dtype=F32)
    params.lam_k = np.ones(1, dtype=F32)
    params.w_v = np.eye(d, dtype=F32)
    rng = np.random.default_rng(1)
    xs = rng.standard_normal((t, d)).astype(F32)
    ys, _ = tint_attention(params, xs, np.ones((t, t), dtype=bool))
    assert np.max(np.abs(ys - xs[src])) <= 1e-4


def test_tint_attention_linear_scores_are_plain_sums():
    # f_attn=linear: output row t is sum_j s_tj v_j with masked s zeroed
    t, d, h = 3, 4, 1
    rng = np.random.default_rng(2)
    params = zero_attn(t, d, h, f_attn="linear")
    params.w_q = (0.5 * rng.standard_normal((d, d))).astype(F32)
    params.w_k = (0.5 * rng.standard_normal((d, d))).astype(F32)
    params.w_v = np.eye(d, dtype=F32)
    xs = rng.standard_normal((t, d)).astype(F32)
    mask = np.tril(np.ones((t, t), dtype=bool))
    ys, scores = tint_attention(params, xs, mask)
    q = xs @ params.w_q.T
    k = xs @ params.w_k.T
    s = np.where(mask, q @ k.T, 0.0).astype(F32)
    assert np.max(np.abs(scores[0] - s)) <= 1e-6
    assert np.max(np.abs(ys - s @ xs)) <= 1e-5


def test_tint_attention_gate_selects_heads():
    # the same positional table is on for head 0 and off for head 1
    t, d, h = 3, 8, 2
    params = zero_attn(t, d, h, f_attn="linear")
    params.wp_v = position_onehots(t, d // h, scale=1.0)
    params.lam_v = np.array([1.0, 0.0], dtype=F32)
    params.wp_q = np.ones((t, d // h), dtype=F32)
    params.wp_k = np.ones((t, d // h), dtype=F32)
    params.lam_q = np.ones(2, dtype=F32)
    params.lam_k = np.ones(2, dtype=F32)
    xs = np.zeros((t, d), dtype=F32)
    ys, _ = tint_attention(params, xs, np.eye(t, dtype=bool))
    assert np.any(ys[:, : d // h] != 0.0)       # head 0 carried the values
    assert np.all(ys[:, d // h:] == 0.0)        # head 1 was gated off


def test_tint_attention_validation():
    params = zero_attn(3, 4, 1)
    params.f_attn = "quadratic"
    with pytest.raises(ConfigError):
        tint_attention(params, np.zeros((3, 4), dtype=F32), np.ones((3, 3), bool))
    params = zero_attn(3, 4, 1)
    with pytest.raises(DimensionError):
        tint_attention(params, np.zeros((3, 4), dtype=F32), np.ones((2, 2), bool))


def test_position_onehots_semantics():
    tab = position_onehots(3, 5)
    assert np.array_equal(tab, np.eye(3, 5, dtype=F32))
    tab = position_onehots(3, 5, [4, -1, 0], scale=2.0)
    assert np.array_equal(tab[0], [0, 0, 0, 0, 2])
    assert np.all(tab[1] == 0.0)
    assert np.array_equal(tab[2], [2, 0, 0, 0, 0])
    with pytest.raises(DimensionError):
        position_onehots(2, 3, [3, 0])


# ---------------------------------------------------------------------------
# head-split linear maps


def test_hsplit_splitwise_identity():
    t, h, d = 4, 2, 3
    w = np.stack([np.eye(d, dtype=F32)] * h)
    b = np.zeros((h, d), dtype=F32)
    e = np.random.default_rng(3).standard_normal((t, h * d)).astype(F32)
    assert np.allclose(hsplit_splitwise(w, b, e), e, atol=1e-7)


def test_hsplit_splitwise_hand():
    # H=2, d=2: head 0 swaps its pair, head 1 zeroes -> [a,b,c,d] -> [b,a,0,0]
    w = np.stack([np.array([[0, 1], [1, 0]], dtype=F32),
                  np.zeros((2, 2), dtype=F32)])
    b = np.zeros((2, 2), dtype=F32)
    e = np.array([[1.0, 2.0, 3.0, 4.0]], dtype=F32)
    out = hsplit_splitwise(w, b, e)
    assert np.array_equal(out, np.array([[2.0, 1.0, 0.0, 0.0]], dtype=F32))


def test_hsplit_splitwise_parameter_footprint():
    # per head one (d, d) matrix and one (d,) bias: H * (d^2 + d) numbers
    h, d = 3, 4
    w = np.zeros((h, d, d), dtype=F32)
    b = np.zeros((h, d), dtype=F32)
    assert w.size + b.size == h * (d * d + d)


def test_hsplit_dimwise_identity():
    t, h, d = 4, 3, 2
    w = np.stack([np.eye(h, dtype=F32)] * d)
    b = np.zeros((d, h), dtype=F32)
    e = np.random.default_rng(4).standard_normal((t, h * d)).astype(F32)
    assert np.allclose(hsplit_dimwise(w, b, e), e, atol=1e-7)


def test_hsplit_dimwise_hand():
    # d=1, H=2, W = [[1,1],[0,0]] mixes across heads: [a,b] -> [a+b, 0]
    w = np.array([[[1.0, 1.0], [0.0, 0.0]]], dtype=F32)
    b = np.zeros((1, 2), dtype=F32)
    e = np.array([[3.0, 4.0]], dtype=F32)
    out = hsplit_dimwise(w, b, e)
    assert np.array_equal(out, np.array([[7.0, 0.0]], dtype=F32))


# ---------------------------------------------------------------------------
# group normalization


def test_group_norm_single_group_is_layernorm():
    d = 6
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, d)).astype(F32)
    gamma = (1 + 0.1 * rng.standard_normal(d)).astype(F32)
    b = rng.standard_normal(d).astype(F32) * 0.1
    from tintsim.aux_reference import ln_fwd
    ref, _, _, _ = ln_fwd(gamma, b, x)
    got = group_norm(gamma, b, x, d, "layernorm")
    assert np.max(np.abs(got - ref)) <= 1e-6


def test_group_norm_pairwise_hand():
    # groups of 2: [1,-1 | 2,-2] -> each pair normalizes to [1,-1]
    x = np.array([[1.0, -1.0, 2.0, -2.0]], dtype=F32)
    out = group_norm(np.ones(4, dtype=F32), np.zeros(4, dtype=F32), x, 2,
                     "layernorm")
    assert np.allclose(out, [[1.0, -1.0, 1.0, -1.0]], atol=1e-6)


def test_group_norm_constant_group_rejected():
    x = np.array([[1.0, -1.0, 3.0, 3.0]], dtype=F32)
    with pytest.raises(DegenerateInputError):
        group_norm(np.ones(4, dtype=F32), np.zeros(4, dtype=F32), x, 2,
                   "layernorm")


def test_group_norm_validation():
    x = np.zeros((1, 6), dtype=F32)
    ones = np.ones(6, dtype=F32)
    zeros = np.zeros(6, dtype=F32)
    with pytest.raises(ConfigError):
        group_norm(ones, zeros, x, 1, "layernorm")  # group too small
    with pytest.raises(DimensionError):
        group_norm(ones, zeros, x, 4, "layernorm")  # 6 % 4 != 0
    with pytest.raises(ConfigError):
        group_norm(ones, zeros, x, 2, "maxnorm")


# ---------------------------------------------------------------------------
# multiplication through GeLU


def test_gelu_multiply_zero_operand_exact():
    y = np.array([1.0, -2.0, 3.0], dtype=F32)
    assert np.array_equal(gelu_multiply(np.zeros(3, dtype=F32), y),
                          np.zeros(3, dtype=F32))


def test_gelu_multiply_small_operands():
    got = float(gelu_multiply(np.array([0.1], dtype=F32),
                              np.array([0.1], dtype=F32))[0])
    assert abs(got - 0.01) <= 1e-5


def test_gelu_multiply_error_shrinks_cubically():
    # leading error term is cubic-or-better in the operand size; halving
    # the operands must shrink the error by at least 2^3 (measured ~2^4:
    # the gadget's odd Taylor terms cancel, leaving a quartic residue)
    rng = np.random.default_rng(6)
    x = rng.standard_normal(64).astype(F32)
    y = rng.standard_normal(64).astype(F32)
    errs = []
    for c in (1.0, 0.5, 0.25):
        got = gelu_multiply(c * x, c * y)
        ref = (c * x).astype(np.float64) * (c * y).astype(np.float64)
        errs.append(float(np.max(np.abs(got - ref))))
    for hi, lo in zip(errs, errs[1:]):
        assert np.log2(hi / max(lo, 1e-15)) >= 3.0


def test_gelu_multiply_validation():
    with pytest.raises(ConfigError):
        gelu_multiply(np.ones(2, dtype=F32), np.ones(2, dtype=F32), scale=0.0)
    with pytest.raises(DimensionError):
        gelu_multiply(np.ones(2, dtype=F32), np.ones(3, dtype=F32))


# ---------------------------------------------------------------------------
# linear attention on softmax heads


def test_linear_as_softmax_zero_values():
    t = 3
    scores = np.random.default_rng(7).standard_normal((1, t, t)).astype(F32)
    out = linear_as_softmax(scores, np.zeros((t, 2), dtype=F32), 1e-5)
    assert np.max(np.abs(out)) <= 1e-7


def test_linear_as_softmax_small_eps_accuracy():
    t, dv = 2, 3
    rng = np.random.default_rng(8)
    scores = rng.standard_normal((1, t, t)).astype(F32)
    scores /= np.float32(np.abs(scores).max())  # unit-norm scores
    values = rng.standard_normal((t, dv)).astype(F32)
    out = linear_as_softmax(scores, values, 1e-6)
    exact = matmul(scores[0], values)
    assert np.max(np.abs(out - exact)) <= 1e-2


def test_linear_as_softmax_precondition():
    t = 4
    scores = np.ones((1, t, t), dtype=F32) * 3.0
    values = np.ones((t, 2), dtype=F32)
    bound = linear_as_softmax_bound(scores, t, 1.5)
    assert 0 < bound <= 0.25 / 3.0
    with pytest.raises(PreconditionError) as ei:
        linear_as_softmax(scores, values, bound * 2)
    assert ei.value.bound == pytest.approx(bound)
    # just inside the bound is accepted
    linear_as_softmax(scores, values, bound * 0.5)


def test_linear_as_softmax_u_exponent_guard():
    scores = np.zeros((1, 2, 2), dtype=F32)
    values = np.zeros((2, 2), dtype=F32)
    with pytest.raises(ConfigError):
        linear_as_softmax(scores, values, 1e-4, u_exponent=1.0)

"""Primitive tensor ops: matmul, row softmax, activations, quotients.

Hand values are frozen from independent computation (closed forms or
float64 numpy evaluated separately), not from the functions under test.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tintsim._backend import BACKEND_NAME, get_backend
from tintsim.errors import ConfigError, DegenerateInputError, DimensionError
from tintsim.tensor_core import (Tensor, activation_eval, as_f32, matmul,
                                 norm_quotient, softmax_rows)

F32 = np.float32


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    a = np.arange(12, dtype=F32).reshape(3, 4)
    assert np.array_equal(matmul(np.eye(3, dtype=F32), a), a)
    assert np.array_equal(matmul(a, np.eye(4, dtype=F32)), a)


def test_matmul_hand_value():
    # [[1,2],[3,4]] @ [1,1]^T = [3, 7]
    w = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=F32)
    out = matmul(w, np.array([1.0, 1.0], dtype=F32))
    assert np.array_equal(out, np.array([3.0, 7.0], dtype=F32))


def test_matmul_zeros():
    z = matmul(np.zeros((2, 3), dtype=F32), np.zeros((3, 5), dtype=F32))
    assert z.shape == (2, 5)
    assert np.all(z == 0.0)


def test_matmul_dim_mismatch():
    with pytest.raises(DimensionError):
        matmul(np.zeros((2, 3), dtype=F32), np.zeros((4, 2), dtype=F32))


def test_matmul_deterministic():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((17, 9)).astype(F32)
    b = rng.standard_normal((9, 13)).astype(F32)
    first = matmul(a, b)
    for _ in range(5):
        assert np.array_equal(matmul(a, b), first)


@settings(max_examples=40, deadline=None)
@given(
    a=arrays(F32, (4, 6), elements=st.floats(-8, 8, width=32)),
    b=arrays(F32, (6, 3), elements=st.floats(-8, 8, width=32)),
)
def test_matmul_matches_numpy(a, b):
    ref = np.matmul(a.astype(np.float64), b.astype(np.float64))
    got = matmul(a, b)
    assert np.max(np.abs(got - ref)) <= 1e-3 * (1.0 + np.max(np.abs(ref)))


# ---------------------------------------------------------------------------
# softmax


def test_softmax_uniform_pair():
    out = softmax_rows(np.array([[0.0, 0.0]], dtype=F32))
    assert np.allclose(out, [[0.5, 0.5]], atol=1e-7)


def test_softmax_ln2_pair():
    # softmax([ln 2, 0]) = [2/3, 1/3]
    out = softmax_rows(np.array([[np.log(2.0), 0.0]], dtype=F32))
    assert np.allclose(out, [[2.0 / 3.0, 1.0 / 3.0]], atol=1e-6)


def test_softmax_large_logit_no_overflow():
    out = softmax_rows(np.array([[1000.0, 0.0]], dtype=F32))
    assert np.all(np.isfinite(out))
    assert np.allclose(out, [[1.0, 0.0]], atol=1e-7)


def test_softmax_neg_inf_is_exact_zero():
    out = softmax_rows(np.array([[1.0, -np.inf, 2.0]], dtype=F32))
    assert out[0, 1] == 0.0
    assert abs(float(out.sum()) - 1.0) <= 1e-6


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(1)
    s = rng.standard_normal((7, 7)).astype(F32) * 5
    out = softmax_rows(s)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(out >= 0)


# ---------------------------------------------------------------------------
# activations


def test_relu_values_and_derivative():
    x = np.array([-1.0, 2.0], dtype=F32)
    assert np.array_equal(activation_eval(x, "relu"), np.array([0.0, 2.0], dtype=F32))
    # subgradient choice at 0 is pinned to 1
    d = activation_eval(np.array([0.0], dtype=F32), "relu", derivative=True)
    assert d[0] == 1.0


def test_gelu_values():
    assert activation_eval(np.array([0.0], dtype=F32), "gelu")[0] == 0.0
    # GeLU(1) = 0.5 * (1 + erf(1/sqrt 2)) = 0.8413447...
    got = activation_eval(np.array([1.0], dtype=F32), "gelu")[0]
    assert abs(float(got) - 0.84134475) <= 1e-6
    # derivative at 0 is exactly 1/2
    d = activation_eval(np.array([0.0], dtype=F32), "gelu", derivative=True)
    assert abs(float(d[0]) - 0.5) <= 1e-6


def test_unknown_activation_rejected():
    with pytest.raises(ConfigError):
        activation_eval(np.zeros(3, dtype=F32), "swish")


# ---------------------------------------------------------------------------
# difference quotients


def test_norm_quotient_matches_analytic_direction():
    # for layernorm f and small eps, (f(x+eps dz) - f(x))/eps ~ Jf dz
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 8)).astype(F32)
    dz = rng.standard_normal((3, 8)).astype(F32)
    q1 = norm_quotient(x, dz, 1e-3, "layernorm")
    q2 = norm_quotient(x, dz, 5e-4, "layernorm")
    # quotients at nearby eps agree to first order
    assert np.max(np.abs(q1 - q2)) <= 5e-3


def test_norm_quotient_degenerate_raises():
    with pytest.raises(DegenerateInputError):
        norm_quotient(np.ones((2, 4), dtype=F32), np.ones((2, 4), dtype=F32),
                      1e-3, "layernorm")


def test_norm_quotient_zero_direction_is_zero():
    x = np.random.default_rng(2).standard_normal((2, 6)).astype(F32)
    q = norm_quotient(x, np.zeros_like(x), 1e-3, "rmsnorm")
    assert np.all(q == 0.0)


# ---------------------------------------------------------------------------
# Tensor wrapper and backend parity


def test_tensor_rejects_non_finite():
    with pytest.raises(DimensionError):
        Tensor.from_array(np.array([[1.0, np.nan]], dtype=F32))


def test_tensor_rejects_shape_mismatch():
    with pytest.raises(DimensionError):
        Tensor((2, 3), np.zeros(5, dtype=F32))


def test_tensor_keeps_f32_contiguous():
    t = Tensor.from_array(np.asfortranarray(np.ones((3, 2), dtype=np.float64)))
    assert t.data.dtype == F32
    assert t.data.flags["C_CONTIGUOUS"]
    assert t.array.shape == (3, 2)


def test_as_f32_casts():
    out = as_f32([1, 2, 3])
    assert out.dtype == F32


@pytest.mark.skipif(get_backend("compiled") is None,
                    reason="compiled backend not built")
def test_backend_parity():
    # matmul and relu are pure f32 arithmetic: bit-identical across backends.
    # softmax/gelu go through libm vs numpy transcendentals: ULP-level only.
    comp = get_backend("compiled")
    py = get_backend("python")
    rng = np.random.default_rng(11)
    a = rng.standard_normal((19, 23)).astype(F32)
    b = rng.standard_normal((23, 17)).astype(F32)
    assert np.array_equal(comp.matmul_f32(a, b), py.matmul_f32(a, b))
    x = rng.standard_normal(257).astype(F32) * 2
    assert np.array_equal(comp.relu_f32(x), py.relu_f32(x))
    assert np.array_equal(comp.relu_grad_f32(x), py.relu_grad_f32(x))
    s = rng.standard_normal((9, 9)).astype(F32) * 4
    assert np.max(np.abs(comp.softmax_rows_f32(s) - py.softmax_rows_f32(s))) <= 1e-6
    assert np.max(np.abs(comp.gelu_f32(x) - py.gelu_f32(x))) <= 1e-5
    assert np.max(np.abs(comp.gelu_grad_f32(x) - py.gelu_grad_f32(x))) <= 1e-5


def test_backend_selected():
    assert BACKEND_NAME in ("python", "compiled")
    with pytest.raises(ValueError):
        get_backend("cuda")

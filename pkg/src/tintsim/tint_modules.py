"""Simulator layer constructions.

Each auxiliary layer kind gets three simulator procedures (forward,
backward, descent) built entirely out of the primitives in
tint_kernels. Auxiliary weights enter through prefix tokens: a square
(D, D) matrix is cut into rows, S rows stacked per prefix token (one
per band), plus one dedicated bias token. Activations travel in band 0
of the real tokens; anything a later pass needs again (inputs, scores,
value gradients) is kept by the caller and re-assembled into scratch
bands, which are zero at entry to every module.

Head indexing convention: the simulator width D_sim = S * D_aux is cut
into H_sim = S * S' slots of width d_head = D_aux / S'. Slot h = i*S'+l
coincides with shard l of band i, which is what lets descent outputs
land on the prefix rows they update without any extra routing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConstructionError, DimensionError
from .tensor_core import (act_quotient, activation_eval, as_f32, matmul,
                          norm_quotient, softmax_rows)
from .tint_kernels import (TintAttnParams, group_norm, gelu_multiply,
                           hsplit_dimwise, hsplit_splitwise, position_onehots,
                           tint_attention, zero_attn)

GLU_MULT_SCALE = 1e-4   # operand scale for the product gadget inside GLU


# ---------------------------------------------------------------------------
# prefix layout


@dataclass(frozen=True)
class PrefixLayout:
    d_aux: int
    s: int          # rows stacked per prefix token (= band count)
    s_prime: int    # shards per row
    d_sim: int
    h_sim: int
    d_head: int
    k_w: int        # weight-token count
    k: int          # total prefix tokens (weights + bias)

    @classmethod
    def build(cls, d_aux: int, s: int, s_prime: int) -> "PrefixLayout":
        if d_aux < 2 or s < 1 or s_prime < 1:
            raise ConstructionError("need d_aux >= 2, s >= 1, s_prime >= 1")
        if d_aux % s_prime != 0:
            raise ConstructionError(f"s_prime={s_prime} must divide d_aux={d_aux}")
        d_head = d_aux // s_prime
        k_w = -(-d_aux // s)  # ceil
        if k_w > d_head:
            raise ConstructionError(
                f"layout infeasible: {k_w} weight tokens need one-hot slots in "
                f"head width {d_head} (raise s or lower s_prime)")
        return cls(d_aux=d_aux, s=s, s_prime=s_prime, d_sim=s * d_aux,
                   h_sim=s * s_prime, d_head=d_head, k_w=k_w, k=k_w + 1)

    def row_slot(self, r: int) -> tuple:
        """(prefix token, band) holding row r of the encoded matrix."""
        return r // self.s, r % self.s

    def band(self, i: int) -> slice:
        return slice(i * self.d_aux, (i + 1) * self.d_aux)


def encode_prefix(lo: PrefixLayout, w, b=None) -> np.ndarray:
    """Packs a square (d_aux, d_aux) matrix and bias into prefix tokens.
    Pure copies — decode_prefix inverts this bit-for-bit."""
    w = as_f32(w)
    if w.shape != (lo.d_aux, lo.d_aux):
        raise DimensionError(f"prefix weights must be ({lo.d_aux},{lo.d_aux})")
    prefix = np.zeros((lo.k, lo.d_sim), dtype=np.float32)
    for r in range(lo.d_aux):
        j, i = lo.row_slot(r)
        prefix[j, lo.band(i)] = w[r]
    if b is not None:
        b = as_f32(b)
        if b.shape != (lo.d_aux,):
            raise DimensionError(f"prefix bias must be ({lo.d_aux},)")
        prefix[lo.k_w, lo.band(0)] = b
    return prefix


def decode_prefix(lo: PrefixLayout, prefix) -> tuple:
    prefix = as_f32(prefix)
    if prefix.shape != (lo.k, lo.d_sim):
        raise DimensionError(f"prefix must be ({lo.k},{lo.d_sim})")
    w = np.zeros((lo.d_aux, lo.d_aux), dtype=np.float32)
    for r in range(lo.d_aux):
        j, i = lo.row_slot(r)
        w[r] = prefix[j, lo.band(i)]
    b = prefix[lo.k_w, lo.band(0)].copy()
    return w, b


def assemble_tokens(lo: PrefixLayout, t: int, bands: dict) -> np.ndarray:
    """Real-token rows, with the given (t, d_aux) matrices placed into
    their bands; every other band is scratch and stays zero."""
    out = np.zeros((t, lo.d_sim), dtype=np.float32)
    for i, mat in bands.items():
        if i >= lo.s:
            raise ConstructionError(f"band {i} does not exist at s={lo.s}")
        mat = as_f32(mat)
        if mat.shape != (t, lo.d_aux):
            raise DimensionError(f"band {i} payload must be ({t},{lo.d_aux})")
        out[:, lo.band(i)] = mat
    return out


def _with_prefix(lo: PrefixLayout, prefix, tokens) -> np.ndarray:
    return np.concatenate([prefix, tokens], axis=0)


# ---------------------------------------------------------------------------
# 0/1 projection builders for the shared linear constructions


def _pick_shard_of_band(lo: PrefixLayout, band_of=None, scale=1.0) -> np.ndarray:
    """Content projection sending shard l of band `band_of(i)` to head
    slot (i, l). band_of=None reads each slot's own band i."""
    w = np.zeros((lo.d_sim, lo.d_sim), dtype=np.float32)
    for i in range(lo.s):
        src = i if band_of is None else band_of(i)
        for l in range(lo.s_prime):
            h = i * lo.s_prime + l
            for c in range(lo.d_head):
                w[h * lo.d_head + c, src * lo.d_aux + l * lo.d_head + c] = scale
    return w


def _gather_rows(lo: PrefixLayout) -> np.ndarray:
    """Head slot (i, l) coordinate j reads band-0 coordinate j*s + i —
    turning a band-0 vector into per-token scores against row j*s+i."""
    w = np.zeros((lo.d_sim, lo.d_sim), dtype=np.float32)
    for i in range(lo.s):
        for l in range(lo.s_prime):
            h = i * lo.s_prime + l
            for j in range(lo.k_w):
                r = j * lo.s + i
                if r < lo.d_aux:
                    w[h * lo.d_head + j, r] = 1.0
    return w


def _band0_identity(lo: PrefixLayout, scale=1.0) -> np.ndarray:
    w = np.zeros((lo.d_sim, lo.d_sim), dtype=np.float32)
    for c in range(lo.d_aux):
        w[c, c] = scale
    return w


def _sum_stacks(lo: PrefixLayout) -> np.ndarray:
    """Dimwise mixer: output slot l sums slot (i, l) over all stacks i."""
    w = np.zeros((lo.d_head, lo.h_sim, lo.h_sim), dtype=np.float32)
    for l in range(lo.s_prime):
        for i in range(lo.s):
            w[:, l, i * lo.s_prime + l] = 1.0
    return w


def _sum_shards(lo: PrefixLayout) -> np.ndarray:
    """Dimwise mixer: every slot of stack i receives the sum over that
    stack's shards (coordinate-wise)."""
    w = np.zeros((lo.d_head, lo.h_sim, lo.h_sim), dtype=np.float32)
    for ho in range(lo.h_sim):
        for hi_ in range(lo.h_sim):
            if ho // lo.s_prime == hi_ // lo.s_prime:
                w[:, ho, hi_] = 1.0
    return w


def _route_dots_to_rows(lo: PrefixLayout) -> np.ndarray:
    """Splitwise permutation: slot (i, l) moves the dot for row r = j*s+i
    from coordinate j to coordinate r % d_head, kept only when the row's
    output shard r // d_head equals l."""
    w = np.zeros((lo.h_sim, lo.d_head, lo.d_head), dtype=np.float32)
    for i in range(lo.s):
        for l in range(lo.s_prime):
            h = i * lo.s_prime + l
            for j in range(lo.k_w):
                r = j * lo.s + i
                if r < lo.d_aux and r // lo.d_head == l:
                    w[h, r % lo.d_head, j] = 1.0
    return w


def _zero_bias(lo: PrefixLayout) -> tuple:
    return (np.zeros((lo.h_sim, lo.d_head), dtype=np.float32),
            np.zeros((lo.d_head, lo.h_sim), dtype=np.float32))


def _mask_rows_to_cols(t_sim: int, rows, cols) -> np.ndarray:
    m = np.zeros((t_sim, t_sim), dtype=bool)
    m[np.ix_(rows, cols)] = True
    return m


# ---------------------------------------------------------------------------
# linear layer: forward / backward / descent


def tint_linear_forward(lo: PrefixLayout, w, b, xs) -> np.ndarray:
    """y = W x + b via prefix attention.

    One linear-attention layer turns token/prefix dot products into
    per-row partial dots (head slot (i,l) scores shard l of x against
    shard l of row j*s+i, and deposits them on the one-hot value of
    prefix token j). Three head-split stages then sum shards, permute
    dots to output coordinates, and sum stacks; a second attention layer
    adds the bias token's payload."""
    xs = np.atleast_2d(as_f32(xs))
    t = xs.shape[0]
    prefix = encode_prefix(lo, w, b)
    seq = _with_prefix(lo, prefix, assemble_tokens(lo, t, {0: xs}))
    t_sim = lo.k + t
    real = range(lo.k, t_sim)

    a1 = zero_attn(t_sim, lo.d_sim, lo.h_sim, "linear")
    a1.w_q = _pick_shard_of_band(lo, band_of=lambda i: 0)
    a1.w_k = _pick_shard_of_band(lo)
    a1.wp_v = position_onehots(t_sim, lo.d_head, indices=[j if j < lo.k_w else -1
                                                          for j in range(t_sim)])
    a1.lam_v = np.ones(lo.h_sim, dtype=np.float32)
    dots, _ = tint_attention(a1, seq, _mask_rows_to_cols(t_sim, real, range(lo.k_w)))

    bs, bd = _zero_bias(lo)
    summed = hsplit_dimwise(_sum_shards(lo), bd, dots)
    routed = hsplit_splitwise(_route_dots_to_rows(lo), bs, summed)
    y = hsplit_dimwise(_sum_stacks(lo), bd, routed)

    a2 = zero_attn(t_sim, lo.d_sim, lo.h_sim, "linear")
    a2.wp_q = position_onehots(t_sim, lo.d_head,
                               indices=[0 if p >= lo.k else -1 for p in range(t_sim)])
    a2.wp_k = position_onehots(t_sim, lo.d_head,
                               indices=[0 if p == lo.k_w else -1 for p in range(t_sim)])
    a2.lam_q = np.ones(lo.h_sim, dtype=np.float32)
    a2.lam_k = np.ones(lo.h_sim, dtype=np.float32)
    a2.w_v = _band0_identity(lo)
    bias_add, _ = tint_attention(a2, seq, _mask_rows_to_cols(t_sim, real, [lo.k_w]))

    out = y[lo.k:, :lo.d_aux] + bias_add[lo.k:, :lo.d_aux]
    return out.astype(np.float32)


def tint_linear_backward(lo: PrefixLayout, w, dys) -> np.ndarray:
    """dx = W^T dy: scores gather dy coordinates against one-hot prefix
    keys, values carry the matching weight-row shards, so head slot
    (i, l) accumulates shard l of sum_r dy_r * row_r over rows r = i mod
    s; one stack-sum stage finishes the transpose product."""
    dys = np.atleast_2d(as_f32(dys))
    t = dys.shape[0]
    prefix = encode_prefix(lo, w)
    seq = _with_prefix(lo, prefix, assemble_tokens(lo, t, {0: dys}))
    t_sim = lo.k + t
    real = range(lo.k, t_sim)

    b1 = zero_attn(t_sim, lo.d_sim, lo.h_sim, "linear")
    b1.w_q = _gather_rows(lo)
    b1.wp_k = position_onehots(t_sim, lo.d_head, indices=[j if j < lo.k_w else -1
                                                          for j in range(t_sim)])
    b1.lam_k = np.ones(lo.h_sim, dtype=np.float32)
    b1.w_v = _pick_shard_of_band(lo)
    parts, _ = tint_attention(b1, seq, _mask_rows_to_cols(t_sim, real, range(lo.k_w)))

    _, bd = _zero_bias(lo)
    dx = hsplit_dimwise(_sum_stacks(lo), bd, parts)
    return dx[lo.k:, :lo.d_aux].astype(np.float32)


def _descent_rows(lo: PrefixLayout, seq, t_sim: int, eta: float) -> np.ndarray:
    """Prefix-row updates: weight token j queries its one-hot, keys gather
    dy (band 0), values carry -eta * x (band 1); the head-slot layout
    drops each update directly onto the row it belongs to."""
    d1 = zero_attn(t_sim, lo.d_sim, lo.h_sim, "linear")
    d1.wp_q = position_onehots(t_sim, lo.d_head, indices=[j if j < lo.k_w else -1
                                                          for j in range(t_sim)])
    d1.lam_q = np.ones(lo.h_sim, dtype=np.float32)
    d1.w_k = _gather_rows(lo)
    d1.w_v = _pick_shard_of_band(lo, band_of=lambda i: 1, scale=-np.float32(eta))
    upd, _ = tint_attention(d1, seq, _mask_rows_to_cols(t_sim, range(lo.k_w),
                                                        range(lo.k, t_sim)))
    return upd


def _descent_bias(lo: PrefixLayout, seq, t_sim: int, eta: float) -> np.ndarray:
    d2 = zero_attn(t_sim, lo.d_sim, lo.h_sim, "linear")
    d2.wp_q = position_onehots(t_sim, lo.d_head,
                               indices=[0 if p == lo.k_w else -1 for p in range(t_sim)])
    d2.wp_k = position_onehots(t_sim, lo.d_head,
                               indices=[0 if p >= lo.k else -1 for p in range(t_sim)])
    d2.lam_q = np.ones(lo.h_sim, dtype=np.float32)
    d2.lam_k = np.ones(lo.h_sim, dtype=np.float32)
    d2.w_v = _band0_identity(lo, scale=-np.float32(eta))
    upd, _ = tint_attention(d2, seq, _mask_rows_to_cols(t_sim, [lo.k_w],
                                                        range(lo.k, t_sim)))
    return upd


def tint_linear_descent(lo: PrefixLayout, w, b, xs, dys, eta) -> tuple:
    """One SGD step on (W, b): the attention outputs land on the prefix
    rows, the residual stream adds them in place, and decoding reads the
    updated weights back out. Needs s >= 2: the update pairs each dy
    (band 0) with the forward input x, which rides in band 1."""
    if lo.s < 2:
        raise ConstructionError(
            "descent needs s >= 2: band 1 must hold the forward inputs")
    xs = np.atleast_2d(as_f32(xs))
    dys = np.atleast_2d(as_f32(dys))
    if xs.shape != dys.shape:
        raise DimensionError("xs and dys must align")
    t = xs.shape[0]
    prefix = encode_prefix(lo, w, b)
    seq = _with_prefix(lo, prefix, assemble_tokens(lo, t, {0: dys, 1: xs}))
    t_sim = lo.k + t
    upd = _descent_rows(lo, seq, t_sim, eta) + _descent_bias(lo, seq, t_sim, eta)
    prefix2 = (prefix + upd[:lo.k]).astype(np.float32)
    return decode_prefix(lo, prefix2)


# ---------------------------------------------------------------------------
# normalization layer


def tint_norm_forward(lo: PrefixLayout, gamma, beta, xs, kind="layernorm") -> np.ndarray:
    """Group-normalize the activation band, then run the ordinary linear
    forward with diag(gamma) rows and beta on the bias token."""
    xs = np.atleast_2d(as_f32(xs))
    z = group_norm(np.ones(lo.d_aux, np.float32), np.zeros(lo.d_aux, np.float32),
                   xs, lo.d_aux, kind)
    return tint_linear_forward(lo, np.diag(as_f32(gamma)), beta, z)


def tint_norm_backward(lo: PrefixLayout, gamma, dys, xs, eps, kind="layernorm") -> np.ndarray:
    """First-order backward: push dy through the diag(gamma) prefix
    transpose, nudge the input, and difference the two normalizations."""
    xs = np.atleast_2d(as_f32(xs))
    dz = tint_linear_backward(lo, np.diag(as_f32(gamma)), dys)
    return norm_quotient(xs, dz, eps, kind)


def tint_norm_descent(lo: PrefixLayout, gamma, beta, dys, eta, kind="layernorm") -> tuple:
    """Bias-only update: just the bias-token attention runs, so the
    diag(gamma) rows come back bit-identical."""
    dys = np.atleast_2d(as_f32(dys))
    t = dys.shape[0]
    prefix = encode_prefix(lo, np.diag(as_f32(gamma)), beta)
    seq = _with_prefix(lo, prefix, assemble_tokens(lo, t, {0: dys}))
    upd = _descent_bias(lo, seq, lo.k + t, eta)
    w2, b2 = decode_prefix(lo, (prefix + upd[:lo.k]).astype(np.float32))
    return np.diag(w2).copy(), b2


# ---------------------------------------------------------------------------
# elementwise activation layer (static: no prefix, no attention)


def tint_act_forward(xs, kind) -> np.ndarray:
    return activation_eval(np.atleast_2d(as_f32(xs)), kind)


def tint_act_backward(dys, xs, eps, kind) -> np.ndarray:
    xs = np.atleast_2d(as_f32(xs))
    dys = np.atleast_2d(as_f32(dys))
    return act_quotient(xs, dys, eps, kind)


# ---------------------------------------------------------------------------
# softmax self-attention layer


def attention_capacity_check(lo: PrefixLayout, h_aux: int, t: int, alibi: bool,
                             backward: bool = False):
    if lo.s < 4:
        raise ConstructionError("attention simulation needs s >= 4 (q/k/v bands)")
    if lo.h_sim < h_aux:
        raise ConstructionError(f"h_sim={lo.h_sim} cannot host {h_aux} heads")
    if lo.d_aux % h_aux != 0:
        raise ConstructionError("h_aux must divide d_aux")
    dh_aux = lo.d_aux // h_aux
    if dh_aux > lo.d_head:
        raise ConstructionError("head slices wider than simulator head slots")
    if t > lo.d_head:
        raise ConstructionError(f"score deposit needs t <= d_head ({t} > {lo.d_head})")
    if backward and t + dh_aux > lo.d_head:
        raise ConstructionError("score rows plus gradient slices exceed head width")
    if alibi and dh_aux + 2 > lo.d_head:
        raise ConstructionError("no room for the two position coordinates (alibi)")


def _softmax_qkv_params(lo: PrefixLayout, t: int, h_aux: int, slopes,
                        deposit: bool) -> TintAttnParams:
    """Shared projections for the attention and score-deposit layers:
    head h < h_aux reads the aux head-h slices of the q/k/v bands; the
    slope term enters through the gated position rows ([1, -t] against
    [j, 1] reproduces slope * (j - t))."""
    dh_aux = lo.d_aux // h_aux
    p = zero_attn(t, lo.d_sim, lo.h_sim, "softmax")
    for h in range(h_aux):
        for c in range(dh_aux):
            p.w_q[h * lo.d_head + c, 0 * lo.d_aux + h * dh_aux + c] = 1.0
            p.w_k[h * lo.d_head + c, 1 * lo.d_aux + h * dh_aux + c] = 1.0
            if not deposit:
                p.w_v[h * lo.d_head + c, 2 * lo.d_aux + h * dh_aux + c] = 1.0
    if slopes is not None:
        for j in range(t):
            p.wp_q[j, dh_aux] = 1.0
            p.wp_q[j, dh_aux + 1] = -np.float32(j)
            p.wp_k[j, dh_aux] = np.float32(j)
            p.wp_k[j, dh_aux + 1] = 1.0
        p.lam_q[:h_aux] = as_f32(slopes)[:h_aux]
        p.lam_k[:h_aux] = 1.0
    if deposit:
        p.wp_v = position_onehots(t, lo.d_head)
        p.lam_v = np.ones(lo.h_sim, dtype=np.float32)
    return p


def _extract_heads(lo: PrefixLayout, out, h_aux: int, width: int) -> np.ndarray:
    """Compacts per-slot head outputs back to a (t, h_aux*width) matrix."""
    t = out.shape[0]
    res = np.zeros((t, h_aux * width), dtype=np.float32)
    for h in range(h_aux):
        res[:, h * width:(h + 1) * width] = out[:, h * lo.d_head:h * lo.d_head + width]
    return res


def tint_attn_scores(lo: PrefixLayout, q, k, h_aux: int, mask_aux, slopes=None) -> np.ndarray:
    """Score-deposit layer: same logits as the attention step, but the
    values are one-hots of the key position, so each token ends up
    holding its own attention row per head."""
    t = q.shape[0]
    seq = assemble_tokens(lo, t, {0: q, 1: k})
    p = _softmax_qkv_params(lo, t, h_aux, slopes, deposit=True)
    dep, _ = tint_attention(p, seq, np.asarray(mask_aux, dtype=bool))
    rows = _extract_heads(lo, dep, h_aux, t)
    return np.stack([rows[:, h * t:(h + 1) * t] for h in range(h_aux)], axis=0)


def tint_attn_forward(lo: PrefixLayout, attn, xs, mask_aux, h_aux: int) -> tuple:
    """Softmax attention over aux activations: three prefix linear layers
    materialize q/k/v, the combined layer applies head-sliced identity
    projections, and a twin deposit layer writes out the score rows.
    Returns (y, scores, q, k, v) — y is pre output-projection."""
    xs = np.atleast_2d(as_f32(xs))
    t = xs.shape[0]
    attention_capacity_check(lo, h_aux, t, attn.slopes is not None)
    q = tint_linear_forward(lo, attn.w_q, attn.b_q, xs)
    k = tint_linear_forward(lo, attn.w_k, attn.b_k, xs)
    v = tint_linear_forward(lo, attn.w_v, attn.b_v, xs)
    seq = assemble_tokens(lo, t, {0: q, 1: k, 2: v})
    p = _softmax_qkv_params(lo, t, h_aux, attn.slopes, deposit=False)
    out, _ = tint_attention(p, seq, np.asarray(mask_aux, dtype=bool))
    dh_aux = lo.d_aux // h_aux
    y = _extract_heads(lo, out, h_aux, dh_aux)
    scores = tint_attn_scores(lo, q, k, h_aux, mask_aux, attn.slopes)
    return y, scores, q, k, v


def tint_attn_backward(lo: PrefixLayout, attn, q, k, dys, mask_aux, h_aux: int) -> tuple:
    """Approximate backward: gradients flow only through the value path.
    The deposit layer re-derives the score rows; a linear-attention layer
    with one-hot position queries then reads them transposed (score(t,j)
    = a_jt) against gradient slices packed behind the score rows in each
    band, yielding dv; the value-prefix transpose finishes dx."""
    dys = np.atleast_2d(as_f32(dys))
    t = dys.shape[0]
    attention_capacity_check(lo, h_aux, t, attn.slopes is not None, backward=True)
    scores = tint_attn_scores(lo, q, k, h_aux, mask_aux, attn.slopes)
    dh_aux = lo.d_aux // h_aux

    payload = np.zeros((t, lo.d_sim), dtype=np.float32)
    for h in range(h_aux):
        payload[:, h * lo.d_head:h * lo.d_head + t] = scores[h].astype(np.float32)
        payload[:, h * lo.d_head + t:h * lo.d_head + t + dh_aux] = \
            dys[:, h * dh_aux:(h + 1) * dh_aux]

    p = zero_attn(t, lo.d_sim, lo.h_sim, "linear")
    p.wp_q = position_onehots(t, lo.d_head)
    p.lam_q = np.ones(lo.h_sim, dtype=np.float32)
    for h in range(h_aux):
        for m in range(t):
            p.w_k[h * lo.d_head + m, h * lo.d_head + m] = 1.0
        for c in range(dh_aux):
            p.w_v[h * lo.d_head + c, h * lo.d_head + t + c] = 1.0
    out, _ = tint_attention(p, payload, np.ones((t, t), dtype=bool))
    dv = _extract_heads(lo, out, h_aux, dh_aux)
    dx = tint_linear_backward(lo, attn.w_v, dv)
    return dx, dv


def tint_attn_value_descent(lo: PrefixLayout, attn, xs, dv, eta) -> tuple:
    """Descent on the value projection only (the score path is frozen)."""
    return tint_linear_descent(lo, attn.w_v, attn.b_v, xs, dv, eta)


# ---------------------------------------------------------------------------
# feed-forward (4-way split into square sub-layers)


def _ffn_chunks(ffn) -> tuple:
    d = ffn.w.shape[1]
    ws = [ffn.w[i * d:(i + 1) * d] for i in range(4)]
    bws = [ffn.b_w[i * d:(i + 1) * d] for i in range(4)]
    as_ = [ffn.a[:, i * d:(i + 1) * d] for i in range(4)]
    return ws, bws, as_


def tint_ffn_forward(lo: PrefixLayout, ffn, xs, kind) -> tuple:
    """y = sum_i A^i act(W^i x + b^i) + b_A, as four parameter-shared
    square pipelines; the second bias rides on pipeline 0. Returns
    (y, hs, us) with the per-chunk pre-/post-activation states."""
    ws, bws, as_ = _ffn_chunks(ffn)
    zero = np.zeros(lo.d_aux, dtype=np.float32)
    y = None
    hs, us = [], []
    for i in range(4):
        h = tint_linear_forward(lo, ws[i], bws[i], xs)
        u = tint_act_forward(h, kind)
        f = tint_linear_forward(lo, as_[i], ffn.b_a if i == 0 else zero, u)
        hs.append(h)
        us.append(u)
        y = f if y is None else (y + f).astype(np.float32)
    return y, hs, us


def tint_ffn_backward(lo: PrefixLayout, ffn, dys, hs, eps, kind) -> tuple:
    """dx = sum_i W^iT fd_act(A^iT dy); also returns the per-chunk hidden
    gradients for descent."""
    ws, _, as_ = _ffn_chunks(ffn)
    dx = None
    dhs = []
    for i in range(4):
        du = tint_linear_backward(lo, as_[i], dys)
        dh = tint_act_backward(du, hs[i], eps, kind)
        dhs.append(dh)
        part = tint_linear_backward(lo, ws[i], dh)
        dx = part if dx is None else (dx + part).astype(np.float32)
    return dx, dhs


def tint_ffn_descent(lo: PrefixLayout, ffn, xs, dys, dhs, us, eta):
    """Updates every chunk of both projections; b_A moves once (pipeline
    0 carries it)."""
    from .aux_reference import FfnParams
    ws, bws, as_ = _ffn_chunks(ffn)
    zero = np.zeros(lo.d_aux, dtype=np.float32)
    w_new, bw_new, a_new = [], [], []
    b_a_new = None
    for i in range(4):
        w2, bw2 = tint_linear_descent(lo, ws[i], bws[i], xs, dhs[i], eta)
        a2, ba2 = tint_linear_descent(lo, as_[i], ffn.b_a if i == 0 else zero,
                                      us[i], dys, eta)
        w_new.append(w2)
        bw_new.append(bw2)
        a_new.append(a2)
        if i == 0:
            b_a_new = ba2
    return FfnParams(w=np.concatenate(w_new, axis=0),
                     b_w=np.concatenate(bw_new, axis=0),
                     a=np.concatenate(a_new, axis=1),
                     b_a=b_a_new)


# ---------------------------------------------------------------------------
# gated linear unit


def tint_glu_forward(lo: PrefixLayout, glu, xs, kind) -> tuple:
    """yhat = W_o(u * act(wg)) + b_o with the product taken by the GeLU
    gadget. Returns (yhat, inter) mirroring the reference layout."""
    u = tint_linear_forward(lo, glu.w, glu.b_w, xs)
    wg = tint_linear_forward(lo, glu.v, glu.b_v, xs)
    gate = tint_act_forward(wg, kind)
    y = gelu_multiply(u, gate, scale=GLU_MULT_SCALE)
    yhat = tint_linear_forward(lo, glu.w_o, glu.b_o, y)
    return yhat, {"u": u, "wg": wg, "gate": gate, "y": y}


def tint_glu_backward(lo: PrefixLayout, glu, d_yhat, inter, eps, kind) -> tuple:
    """First the plain transpose through W_o, then the two product-rule
    terms: the gate side uses a finite difference of the activation, and
    every multiplication runs through the GeLU gadget."""
    d_y = tint_linear_backward(lo, glu.w_o, d_yhat)
    du = gelu_multiply(d_y, inter["gate"], scale=GLU_MULT_SCALE)
    fd = tint_act_backward(d_y, inter["wg"], eps, kind)
    dwg = gelu_multiply(fd, inter["u"], scale=GLU_MULT_SCALE)
    dx = (tint_linear_backward(lo, glu.w, du)
          + tint_linear_backward(lo, glu.v, dwg)).astype(np.float32)
    return dx, d_y, du, dwg


def tint_glu_descent(lo: PrefixLayout, glu, xs, d_yhat, du, dwg, inter, eta):
    from .aux_reference import GluParams
    w2, bw2 = tint_linear_descent(lo, glu.w, glu.b_w, xs, du, eta)
    v2, bv2 = tint_linear_descent(lo, glu.v, glu.b_v, xs, dwg, eta)
    wo2, bo2 = tint_linear_descent(lo, glu.w_o, glu.b_o, inter["y"], d_yhat, eta)
    return GluParams(w=w2, v=v2, w_o=wo2, b_w=bw2, b_v=bv2, b_o=bo2)


# ---------------------------------------------------------------------------
# readout gradient


def tint_lm_head_grad(lo: PrefixLayout, embed, x_top, x_emb, positions, t: int) -> np.ndarray:
    """dx_t = E^T softmax(E x_t) - emb_{t+1} at loss positions (zero
    elsewhere). The softmax pullback is a static wide readout; the two
    gather terms are single-head linear-attention layers whose position
    tables implement `next token` and `self` one-hot matches (two layers
    because position tables are shared across heads within a layer)."""
    x_top = np.atleast_2d(as_f32(x_top))
    if t > lo.d_sim // 2:
        raise ConstructionError(f"need t <= d_sim/2 one-hot slots ({t} > {lo.d_sim // 2})")
    embed = as_f32(embed)
    logits = matmul(x_top, embed.T)
    probs = softmax_rows(logits)
    g = matmul(probs, embed)

    pos_set = set(int(p) for p in positions)
    q_idx = [p if p in pos_set else -1 for p in range(t)]

    neg = zero_attn(t, lo.d_sim, 1, "linear")
    neg.wp_q = position_onehots(t, lo.d_sim, indices=q_idx)
    neg.lam_q = np.ones(1, dtype=np.float32)
    neg.wp_k = position_onehots(t, lo.d_sim, indices=[p - 1 for p in range(t)])
    neg.lam_k = np.ones(1, dtype=np.float32)
    neg.w_v = np.zeros((lo.d_sim, lo.d_sim), dtype=np.float32)
    for c in range(lo.d_aux):
        neg.w_v[c, c] = -1.0
    seq_emb = assemble_tokens(lo, t, {0: x_emb})
    out_n, _ = tint_attention(neg, seq_emb, np.ones((t, t), dtype=bool))

    pos = zero_attn(t, lo.d_sim, 1, "linear")
    pos.wp_q = position_onehots(t, lo.d_sim, indices=q_idx)
    pos.lam_q = np.ones(1, dtype=np.float32)
    pos.wp_k = position_onehots(t, lo.d_sim)
    pos.lam_k = np.ones(1, dtype=np.float32)
    pos.w_v = _band0_identity(lo)
    seq_g = assemble_tokens(lo, t, {0: g})
    out_p, _ = tint_attention(pos, seq_g, np.ones((t, t), dtype=bool))

    return (out_n[:, :lo.d_aux] + out_p[:, :lo.d_aux]).astype(np.float32)

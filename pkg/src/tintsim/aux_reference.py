"""The auxiliary transformer and its gradient regimes, used as the oracle.

Implements the model being simulated (pre-LN residual blocks, tied
embedding readout) with three per-layer gradient paths:

  exact      - full backpropagation formulas,
  simulated  - the approximations the simulator realizes: stop-gradient
               through attention scores (value-path only), first-order
               finite-difference gradients for normalization/activation
               layers, bias-only norm updates,
  descent    - SGD-style parameter updates built from either path.

Everything is float32 on top of tensor_core kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BudgetError, ConfigError, DegenerateInputError, DimensionError
from .tensor_core import (SIGMA_FLOOR, act_quotient, activation_eval, as_f32,
                          matmul, norm_quotient, softmax_rows)

# ---------------------------------------------------------------------------
# configuration and weights


@dataclass
class AuxConfig:
    d_aux: int
    h_aux: int
    l: int
    t_aux: int
    vocab: int
    ln_kind: str = "layernorm"      # layernorm | rmsnorm
    pos_bias: str = "none"          # none | alibi
    ffn_kind: str = "mlp"           # mlp | glu
    activation: str = "gelu"        # gelu | relu

    def validate(self):
        for name in ("d_aux", "h_aux", "l", "t_aux", "vocab"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.d_aux % self.h_aux != 0:
            raise ConfigError("d_aux must be divisible by h_aux")
        if self.ln_kind not in ("layernorm", "rmsnorm"):
            raise ConfigError(f"unknown ln_kind {self.ln_kind!r}")
        if self.pos_bias not in ("none", "alibi"):
            raise ConfigError(f"unknown pos_bias {self.pos_bias!r}")
        if self.ffn_kind not in ("mlp", "glu"):
            raise ConfigError(f"unknown ffn_kind {self.ffn_kind!r}")
        if self.activation not in ("gelu", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        return self


@dataclass
class AttnParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    b_q: np.ndarray
    b_k: np.ndarray
    b_v: np.ndarray
    slopes: Optional[np.ndarray] = None   # ALiBi, one per head


@dataclass
class NormParams:
    gamma: np.ndarray
    beta: np.ndarray


@dataclass
class FfnParams:
    w: np.ndarray      # (4D, D)
    b_w: np.ndarray
    a: np.ndarray      # (D, 4D)
    b_a: np.ndarray


@dataclass
class GluParams:
    w: np.ndarray      # (D, D)
    v: np.ndarray      # (D, D)
    w_o: np.ndarray    # (D, D)
    b_w: np.ndarray
    b_v: np.ndarray
    b_o: np.ndarray


@dataclass
class AuxBlock:
    ln1: NormParams
    attn: AttnParams
    w_o: np.ndarray    # attention output projection (plain linear layer)
    b_o: np.ndarray
    ln2: NormParams
    ffn: object        # FfnParams or GluParams


@dataclass
class AuxModel:
    config: AuxConfig
    embed: np.ndarray  # (vocab, D), frozen in every regime
    blocks: list


def alibi_slopes(h: int) -> np.ndarray:
    # geometric slopes 2^(-8/h), 2^(-16/h), ...
    return np.float32(2.0) ** (-(8.0 / h) * np.arange(1, h + 1, dtype=np.float32))


def random_model(config: AuxConfig, seed: int, scale: float = 0.25) -> AuxModel:
    config.validate()
    rng = np.random.default_rng(seed)
    d = config.d_aux

    def mat(*shape):
        return (rng.standard_normal(shape) * scale / np.sqrt(shape[-1])).astype(np.float32)

    def vec(n):
        return (rng.standard_normal(n) * 0.02).astype(np.float32)

    blocks = []
    for _ in range(config.l):
        attn = AttnParams(
            w_q=mat(d, d), w_k=mat(d, d), w_v=mat(d, d),
            b_q=vec(d), b_k=vec(d), b_v=vec(d),
            slopes=alibi_slopes(config.h_aux) if config.pos_bias == "alibi" else None,
        )
        if config.ffn_kind == "mlp":
            ffn = FfnParams(w=mat(4 * d, d), b_w=vec(4 * d), a=mat(d, 4 * d), b_a=vec(d))
        else:
            ffn = GluParams(w=mat(d, d), v=mat(d, d), w_o=mat(d, d),
                            b_w=vec(d), b_v=vec(d), b_o=vec(d))
        blocks.append(AuxBlock(
            ln1=NormParams(np.ones(d, np.float32) + vec(d), vec(d)),
            attn=attn,
            w_o=mat(d, d), b_o=vec(d),
            ln2=NormParams(np.ones(d, np.float32) + vec(d), vec(d)),
            ffn=ffn,
        ))
    embed = (rng.standard_normal((config.vocab, d)) * 0.5).astype(np.float32)
    return AuxModel(config=config, embed=embed, blocks=blocks)


# ---------------------------------------------------------------------------
# gradients container


@dataclass
class BlockGrads:
    dw_q: np.ndarray
    dw_k: np.ndarray
    dw_v: np.ndarray
    db_q: np.ndarray
    db_k: np.ndarray
    db_v: np.ndarray
    dw_o: np.ndarray
    db_o: np.ndarray
    dgamma1: np.ndarray
    dbeta1: np.ndarray
    dgamma2: np.ndarray
    dbeta2: np.ndarray
    ffn: dict


@dataclass
class GradSet:
    blocks: list               # BlockGrads per layer
    dxs: np.ndarray            # gradient at the block-stack input
    regime: str


@dataclass
class LossSpec:
    mode: str = "full_context_loss"   # label_loss | full_context_loss
    format: str = "single"            # single | multi
    positions: Optional[np.ndarray] = None  # explicit loss positions (label mode)

    def validate(self):
        if self.mode not in ("label_loss", "full_context_loss"):
            raise ConfigError(f"unknown loss mode {self.mode!r}")
        if self.format not in ("single", "multi"):
            raise ConfigError(f"unknown loss format {self.format!r}")
        if self.mode == "label_loss" and self.positions is None:
            raise ConfigError("label_loss needs explicit loss positions")
        return self


def loss_positions(spec: LossSpec, r: int) -> np.ndarray:
    """Positions t whose next token (t+1) is scored. Positions without a
    next token inside the training segment contribute nothing. The
    `single` format carries one labeled example, `multi` several."""
    if spec.mode == "full_context_loss":
        return np.arange(0, max(r - 1, 0), dtype=np.int64)
    pos = np.unique(np.asarray(spec.positions, dtype=np.int64))
    if pos.size and (pos[0] < 0 or pos[-1] >= r):
        raise ConfigError("loss positions must lie inside the training segment")
    if spec.format == "single" and pos.size > 1:
        raise ConfigError("single-example format allows one loss position")
    return pos[pos <= r - 2]  # the final training position has no target


# ---------------------------------------------------------------------------
# per-layer ops


def linear_fwd(w, b, x) -> np.ndarray:
    w = as_f32(w)
    x = as_f32(x)
    y = matmul(x, w.T)
    return (y + as_f32(b)).astype(np.float32)


def linear_bwd(w, dy) -> np.ndarray:
    return matmul(as_f32(dy), as_f32(w))


def linear_desc(w, b, xs, dys, eta):
    xs = np.atleast_2d(as_f32(xs))
    dys = np.atleast_2d(as_f32(dys))
    if xs.shape[0] != dys.shape[0]:
        raise DimensionError("batch lengths disagree")
    w2 = as_f32(w) - np.float32(eta) * matmul(dys.T, xs)
    b2 = as_f32(b) - np.float32(eta) * dys.sum(axis=0, dtype=np.float32)
    return w2.astype(np.float32), b2.astype(np.float32)


def train_eval_masks(t: int, r: int) -> np.ndarray:
    """Visibility mask: training positions attend bidirectionally among
    themselves; evaluation positions attend causally to everything."""
    if not (1 <= r < t):
        raise ConfigError(f"split r={r} must satisfy 1 <= r < T={t}")
    mask = np.zeros((t, t), dtype=bool)
    mask[:r, :r] = True
    for i in range(r, t):
        mask[i, : i + 1] = True
    return mask


def _alibi_bias(t: int, slope: float) -> np.ndarray:
    # score bias at (t, j) is slope * (j - t)
    j = np.arange(t, dtype=np.float32)
    return (np.float32(slope) * (j[None, :] - j[:, None])).astype(np.float32)


def attn_fwd(attn: AttnParams, xs, mask) -> tuple:
    xs = np.atleast_2d(as_f32(xs))
    t, d = xs.shape
    q = linear_fwd(attn.w_q, attn.b_q, xs)
    k = linear_fwd(attn.w_k, attn.b_k, xs)
    v = linear_fwd(attn.w_v, attn.b_v, xs)
    h = _head_count(attn, d)
    dh = d // h
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (t, t):
        raise DimensionError("mask shape mismatch")
    if not mask.any(axis=1).all():
        raise DimensionError("every position must see at least one position")
    ys = np.zeros_like(xs)
    scores = np.zeros((h, t, t), dtype=np.float32)
    neg = np.float32(-np.inf)
    for hi in range(h):
        sl = slice(hi * dh, (hi + 1) * dh)
        s = matmul(q[:, sl], k[:, sl].T)
        if attn.slopes is not None:
            s = s + _alibi_bias(t, attn.slopes[hi])
        s = np.where(mask, s, neg).astype(np.float32)
        a = softmax_rows(s)
        scores[hi] = a
        ys[:, sl] = matmul(a, v[:, sl])
    return ys, scores


def _head_count(attn: AttnParams, d: int) -> int:
    # heads are implicit in the slope vector when present; otherwise the
    # caller tracks them via AuxConfig. Fall back to d // slope length.
    if attn.slopes is not None:
        return int(len(attn.slopes))
    return attn._h  # set by callers that know the config


def attach_heads(attn: AttnParams, h: int) -> AttnParams:
    attn._h = h
    return attn


def attn_bwd_exact(attn: AttnParams, xs, dys, scores) -> tuple:
    """Full softmax-attention backprop, including the score Jacobian."""
    xs = np.atleast_2d(as_f32(xs))
    dys = np.atleast_2d(as_f32(dys))
    t, d = xs.shape
    h = scores.shape[0]
    if scores.shape != (h, t, t):
        raise DimensionError("stale scores: shape mismatch with inputs")
    dh = d // h
    q = linear_fwd(attn.w_q, attn.b_q, xs)
    k = linear_fwd(attn.w_k, attn.b_k, xs)
    v = linear_fwd(attn.w_v, attn.b_v, xs)
    dq = np.zeros_like(xs)
    dk = np.zeros_like(xs)
    dv = np.zeros_like(xs)
    for hi in range(h):
        sl = slice(hi * dh, (hi + 1) * dh)
        a = scores[hi]
        dyh = dys[:, sl]
        dv[:, sl] = matmul(a.T, dyh)
        # ds_tj = a_tj * (c_tj - sum_j' a_tj' c_tj'), c = dy . v
        c = matmul(dyh, v[:, sl].T)
        row = (a * c).sum(axis=1, keepdims=True, dtype=np.float32)
        ds = (a * (c - row)).astype(np.float32)
        dq[:, sl] = matmul(ds, k[:, sl])
        dk[:, sl] = matmul(ds.T, q[:, sl])
    dxs = linear_bwd(attn.w_q, dq) + linear_bwd(attn.w_k, dk) + linear_bwd(attn.w_v, dv)
    return dxs.astype(np.float32), dq, dk, dv


def attn_dv_approx(dys, scores) -> np.ndarray:
    """Value gradient under stopped score gradients: dv_t = sum_j a_jt dy_j."""
    dys = np.atleast_2d(as_f32(dys))
    h, t, _ = scores.shape
    dh = dys.shape[1] // h
    dv = np.zeros_like(dys)
    for hi in range(h):
        sl = slice(hi * dh, (hi + 1) * dh)
        dv[:, sl] = matmul(scores[hi].T, dys[:, sl])
    return dv


def attn_bwd_approx(attn: AttnParams, dys, scores) -> np.ndarray:
    dv = attn_dv_approx(dys, scores)
    return linear_bwd(attn.w_v, dv)


def attn_value_desc(attn: AttnParams, xs, dys, scores, eta) -> tuple:
    dv = attn_dv_approx(dys, scores)
    return linear_desc(attn.w_v, attn.b_v, xs, dv, eta)


def _norm_stats(x, kind):
    x = as_f32(x)
    d = x.shape[-1]
    if d < 2:
        raise DimensionError("normalization needs at least 2 coordinates")
    if kind == "layernorm":
        mu = x.mean(axis=-1, keepdims=True, dtype=np.float32)
        sigma = np.sqrt(((x - mu) ** 2).mean(axis=-1, keepdims=True, dtype=np.float32))
    elif kind == "rmsnorm":
        mu = np.zeros(x.shape[:-1] + (1,), dtype=np.float32)
        sigma = np.sqrt((x ** 2).mean(axis=-1, keepdims=True, dtype=np.float32))
    else:
        raise ConfigError(f"unknown norm kind {kind!r}")
    if np.any(sigma < SIGMA_FLOOR):
        raise DegenerateInputError(f"{kind} statistics below floor (sigma < {SIGMA_FLOOR})")
    return mu.astype(np.float32), sigma.astype(np.float32)


def ln_fwd(gamma, beta, x, kind="layernorm") -> tuple:
    """Returns (y, mu, sigma, z) with population statistics."""
    x = as_f32(x)
    mu, sigma = _norm_stats(x, kind)
    z = ((x - mu) / sigma).astype(np.float32)
    y = (as_f32(gamma) * z + as_f32(beta)).astype(np.float32)
    return y, np.squeeze(mu, -1), np.squeeze(sigma, -1), z


def ln_bwd_exact(gamma, dy, z, sigma, kind="layernorm") -> np.ndarray:
    """True gradient of the normalization map: the z-component is removed
    with its 1/D weight (matches finite differences; see the decision
    notes for why the looser textbook-free form is not used)."""
    dy = as_f32(dy)
    z = as_f32(z)
    d = z.shape[-1]
    dz = (as_f32(gamma) * dy).astype(np.float32)
    sig = np.asarray(sigma, dtype=np.float32)[..., None]
    zdot = (dz * z).sum(axis=-1, keepdims=True, dtype=np.float32) / np.float32(d)
    if kind == "layernorm":
        mean_dz = dz.mean(axis=-1, keepdims=True, dtype=np.float32)
        return ((dz - mean_dz - zdot * z) / sig).astype(np.float32)
    if kind == "rmsnorm":
        return ((dz - zdot * z) / sig).astype(np.float32)
    raise ConfigError(f"unknown norm kind {kind!r}")


def norm_apply(x, kind):
    """The parameter-free normalization map f alone."""
    mu, sigma = _norm_stats(x, kind)
    return ((as_f32(x) - mu) / sigma).astype(np.float32)


def ln_bwd_approx(gamma, dy, x, eps, kind="layernorm") -> np.ndarray:
    """First-order gradient (f(x + eps*gamma*dy) - f(x)) / eps."""
    dz = (as_f32(gamma) * as_f32(dy)).astype(np.float32)
    return norm_quotient(x, dz, eps, kind)


def ln_desc(gamma, beta, zs, dys, eta, update_gamma=False) -> tuple:
    zs = np.atleast_2d(as_f32(zs))
    dys = np.atleast_2d(as_f32(dys))
    beta2 = as_f32(beta) - np.float32(eta) * dys.sum(axis=0, dtype=np.float32)
    if update_gamma:
        gamma2 = as_f32(gamma) - np.float32(eta) * (dys * zs).sum(axis=0, dtype=np.float32)
    else:
        gamma2 = as_f32(gamma).copy()
    return gamma2.astype(np.float32), beta2.astype(np.float32)


def act_bwd_exact(dy, x, kind) -> np.ndarray:
    return (activation_eval(x, kind, derivative=True) * as_f32(dy)).astype(np.float32)


def act_bwd_approx(dy, x, eps, kind) -> np.ndarray:
    return act_quotient(x, dy, eps, kind)


def glu_fwd(glu: GluParams, x, kind="gelu") -> tuple:
    """Gated linear unit: yhat = W_o (u * act(wgate)) + b_o."""
    u = linear_fwd(glu.w, glu.b_w, x)
    wg = linear_fwd(glu.v, glu.b_v, x)
    y = (u * activation_eval(wg, kind)).astype(np.float32)
    yhat = linear_fwd(glu.w_o, glu.b_o, y)
    return yhat, {"u": u, "wg": wg, "y": y}


def glu_bwd_approx(glu: GluParams, dy, inter, eps, kind="gelu") -> tuple:
    """Approximate backprop through the gate: the act-derivative term is
    replaced by a finite difference. dy is the gradient w.r.t. the gate
    output y (i.e. already backpropagated through W_o). Returns
    (dx, du_surrogate, dwg_surrogate) — the surrogates feed descent."""
    dy = as_f32(dy)
    u, wg = inter["u"], inter["wg"]
    gate = activation_eval(wg, kind)
    du = (dy * gate).astype(np.float32)
    fd = act_quotient(wg, dy, eps, kind)
    dwg = (fd * u).astype(np.float32)
    dx = linear_bwd(glu.w, du) + linear_bwd(glu.v, dwg)
    return dx.astype(np.float32), du, dwg


def glu_bwd_exact(glu: GluParams, dy, inter, kind="gelu") -> np.ndarray:
    dy = as_f32(dy)
    u, wg = inter["u"], inter["wg"]
    du = (dy * activation_eval(wg, kind)).astype(np.float32)
    dwg = (activation_eval(wg, kind, derivative=True) * dy * u).astype(np.float32)
    return (linear_bwd(glu.w, du) + linear_bwd(glu.v, dwg)).astype(np.float32)


def lm_head_grad(e, x, q) -> np.ndarray:
    """Readout gradient E^T (softmax(Ex) - q) with E frozen."""
    e = as_f32(e)
    q = as_f32(q)
    if abs(float(q.sum()) - 1.0) > 1e-6:
        raise ConfigError("q must be a probability vector (sums to 1 within 1e-6)")
    logits = matmul(e, as_f32(x))
    p = softmax_rows(logits[None, :])[0]
    return matmul(e.T, (p - q)).astype(np.float32)


def epsilon_hardness(scores) -> float:
    """1 - min_t max_j a_tj, maximized over heads."""
    a = as_f32(scores)
    if a.ndim == 2:
        a = a[None]
    worst = 0.0
    for hi in range(a.shape[0]):
        worst = max(worst, 1.0 - float(a[hi].max(axis=1).min()))
    return worst


# ---------------------------------------------------------------------------
# whole-model forward / backward / descent


def embed_tokens(model: AuxModel, tokens) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if np.any(tokens < 0) or np.any(tokens >= model.config.vocab):
        raise ConfigError("token id out of range")
    return model.embed[tokens].astype(np.float32)


def forward_collect(model: AuxModel, x0, mask) -> tuple:
    """Runs the block stack, returning the final states and per-block
    caches with everything the backward passes need."""
    cfg = model.config
    x = as_f32(x0).copy()
    caches = []
    for blk in model.blocks:
        c = {"x_in": x}
        y1, mu1, sig1, z1 = ln_fwd(blk.ln1.gamma, blk.ln1.beta, x, cfg.ln_kind)
        c.update(y1=y1, sig1=sig1, z1=z1)
        attach_heads(blk.attn, cfg.h_aux)
        attn_y, scores = attn_fwd(blk.attn, y1, mask)
        c.update(attn_y=attn_y, scores=scores)
        x = (x + linear_fwd(blk.w_o, blk.b_o, attn_y)).astype(np.float32)
        c["x_mid"] = x
        y2, mu2, sig2, z2 = ln_fwd(blk.ln2.gamma, blk.ln2.beta, x, cfg.ln_kind)
        c.update(y2=y2, sig2=sig2, z2=z2)
        if cfg.ffn_kind == "mlp":
            h = linear_fwd(blk.ffn.w, blk.ffn.b_w, y2)
            u = activation_eval(h, cfg.activation)
            f = linear_fwd(blk.ffn.a, blk.ffn.b_a, u)
            c.update(h=h, u=u)
        else:
            f, inter = glu_fwd(blk.ffn, y2, cfg.activation)
            c["glu_inter"] = inter
        x = (x + f).astype(np.float32)
        caches.append(c)
    return x, caches


def loss_grad_top(model: AuxModel, x_top, tokens, positions) -> np.ndarray:
    """Summed readout gradients at the loss positions, zero elsewhere."""
    t = x_top.shape[0]
    dx = np.zeros_like(x_top)
    for p in np.asarray(positions, dtype=np.int64):
        target = int(tokens[p + 1])
        q = np.zeros(model.config.vocab, dtype=np.float32)
        q[target] = 1.0
        dx[p] = lm_head_grad(model.embed, x_top[p], q)
    return dx


def _zero_grads_like(blk: AuxBlock, cfg: AuxConfig) -> BlockGrads:
    z = lambda a: np.zeros_like(a)
    if cfg.ffn_kind == "mlp":
        ffn = {k: z(getattr(blk.ffn, k)) for k in ("w", "b_w", "a", "b_a")}
    else:
        ffn = {k: z(getattr(blk.ffn, k)) for k in ("w", "v", "w_o", "b_w", "b_v", "b_o")}
    return BlockGrads(
        dw_q=z(blk.attn.w_q), dw_k=z(blk.attn.w_k), dw_v=z(blk.attn.w_v),
        db_q=z(blk.attn.b_q), db_k=z(blk.attn.b_k), db_v=z(blk.attn.b_v),
        dw_o=z(blk.w_o), db_o=z(blk.b_o),
        dgamma1=z(blk.ln1.gamma), dbeta1=z(blk.ln1.beta),
        dgamma2=z(blk.ln2.gamma), dbeta2=z(blk.ln2.beta),
        ffn=ffn,
    )


def _outer_sum(dys, xs):
    return matmul(np.atleast_2d(as_f32(dys)).T, np.atleast_2d(as_f32(xs)))


def backward(model: AuxModel, caches, d_top, regime, eps_ln=1e-3, eps_act=1e-3,
             eps_glu=1e-3) -> GradSet:
    """Backpropagates d_top through the stack under the chosen regime and
    collects parameter gradients (frozen slots stay exactly zero)."""
    cfg = model.config
    if regime not in ("exact", "simulated"):
        raise ConfigError(f"unknown regime {regime!r}")
    dx = as_f32(d_top).copy()
    grads = []
    for blk, c in zip(reversed(model.blocks), reversed(caches)):
        g = _zero_grads_like(blk, cfg)
        # ffn branch: x_out = x_mid + f(ln2(x_mid))
        d_f = dx
        if cfg.ffn_kind == "mlp":
            g.ffn["a"] = _outer_sum(d_f, c["u"])
            g.ffn["b_a"] = d_f.sum(axis=0, dtype=np.float32)
            du = linear_bwd(blk.ffn.a, d_f)
            if regime == "exact":
                dh = act_bwd_exact(du, c["h"], cfg.activation)
            else:
                dh = act_bwd_approx(du, c["h"], eps_act, cfg.activation)
            g.ffn["w"] = _outer_sum(dh, c["y2"])
            g.ffn["b_w"] = dh.sum(axis=0, dtype=np.float32)
            d_y2 = linear_bwd(blk.ffn.w, dh)
        else:
            inter = c["glu_inter"]
            g.ffn["w_o"] = _outer_sum(d_f, inter["y"])
            g.ffn["b_o"] = d_f.sum(axis=0, dtype=np.float32)
            d_y = linear_bwd(blk.ffn.w_o, d_f)
            if regime == "exact":
                gate = activation_eval(inter["wg"], cfg.activation)
                du = (d_y * gate).astype(np.float32)
                dwg = (activation_eval(inter["wg"], cfg.activation, derivative=True)
                       * d_y * inter["u"]).astype(np.float32)
                d_y2 = linear_bwd(blk.ffn.w, du) + linear_bwd(blk.ffn.v, dwg)
            else:
                d_y2, du, dwg = glu_bwd_approx(blk.ffn, d_y, inter, eps_glu, cfg.activation)
            g.ffn["w"] = _outer_sum(du, c["y2"])
            g.ffn["b_w"] = du.sum(axis=0, dtype=np.float32)
            g.ffn["v"] = _outer_sum(dwg, c["y2"])
            g.ffn["b_v"] = dwg.sum(axis=0, dtype=np.float32)
        if regime == "exact":
            g.dgamma2 = (d_y2 * c["z2"]).sum(axis=0, dtype=np.float32)
            dx_b = ln_bwd_exact(blk.ln2.gamma, d_y2, c["z2"], c["sig2"], cfg.ln_kind)
        else:
            dx_b = ln_bwd_approx(blk.ln2.gamma, d_y2, c["x_mid"], eps_ln, cfg.ln_kind)
        g.dbeta2 = d_y2.sum(axis=0, dtype=np.float32)
        dx_mid = (dx + dx_b).astype(np.float32)

        # attention branch: x_mid = x_in + W_o(attn(ln1(x_in)))
        d_proj = dx_mid
        g.dw_o = _outer_sum(d_proj, c["attn_y"])
        g.db_o = d_proj.sum(axis=0, dtype=np.float32)
        d_ay = linear_bwd(blk.w_o, d_proj)
        if regime == "exact":
            d_y1, dq, dk, dv = attn_bwd_exact(blk.attn, c["y1"], d_ay, c["scores"])
            g.dw_q = _outer_sum(dq, c["y1"])
            g.db_q = dq.sum(axis=0, dtype=np.float32)
            g.dw_k = _outer_sum(dk, c["y1"])
            g.db_k = dk.sum(axis=0, dtype=np.float32)
        else:
            dv = attn_dv_approx(d_ay, c["scores"])
            d_y1 = linear_bwd(blk.attn.w_v, dv)
        g.dw_v = _outer_sum(dv, c["y1"])
        g.db_v = dv.sum(axis=0, dtype=np.float32)
        if regime == "exact":
            g.dgamma1 = (d_y1 * c["z1"]).sum(axis=0, dtype=np.float32)
            dx_a = ln_bwd_exact(blk.ln1.gamma, d_y1, c["z1"], c["sig1"], cfg.ln_kind)
        else:
            dx_a = ln_bwd_approx(blk.ln1.gamma, d_y1, c["x_in"], eps_ln, cfg.ln_kind)
        g.dbeta1 = d_y1.sum(axis=0, dtype=np.float32)
        dx = (dx_mid + dx_a).astype(np.float32)
        grads.append(g)
    grads.reverse()
    return GradSet(blocks=grads, dxs=dx, regime=regime)


def apply_descent(model: AuxModel, gset: GradSet, eta, layers=None) -> AuxModel:
    """Returns an updated model (functional). Frozen slots per regime are
    untouched because their gradients are identically zero."""
    eta = np.float32(eta)
    layers = set(range(len(model.blocks))) if layers is None else set(layers)
    new_blocks = []
    for i, (blk, g) in enumerate(zip(model.blocks, gset.blocks)):
        if i not in layers:
            new_blocks.append(blk)
            continue
        attn = AttnParams(
            w_q=blk.attn.w_q - eta * g.dw_q, w_k=blk.attn.w_k - eta * g.dw_k,
            w_v=blk.attn.w_v - eta * g.dw_v,
            b_q=blk.attn.b_q - eta * g.db_q, b_k=blk.attn.b_k - eta * g.db_k,
            b_v=blk.attn.b_v - eta * g.db_v,
            slopes=None if blk.attn.slopes is None else blk.attn.slopes.copy(),
        )
        if isinstance(blk.ffn, FfnParams):
            ffn = FfnParams(w=blk.ffn.w - eta * g.ffn["w"], b_w=blk.ffn.b_w - eta * g.ffn["b_w"],
                            a=blk.ffn.a - eta * g.ffn["a"], b_a=blk.ffn.b_a - eta * g.ffn["b_a"])
        else:
            ffn = GluParams(w=blk.ffn.w - eta * g.ffn["w"], v=blk.ffn.v - eta * g.ffn["v"],
                            w_o=blk.ffn.w_o - eta * g.ffn["w_o"],
                            b_w=blk.ffn.b_w - eta * g.ffn["b_w"],
                            b_v=blk.ffn.b_v - eta * g.ffn["b_v"],
                            b_o=blk.ffn.b_o - eta * g.ffn["b_o"])
        new_blocks.append(AuxBlock(
            ln1=NormParams(blk.ln1.gamma - eta * g.dgamma1, blk.ln1.beta - eta * g.dbeta1),
            attn=attn,
            w_o=blk.w_o - eta * g.dw_o, b_o=blk.b_o - eta * g.db_o,
            ln2=NormParams(blk.ln2.gamma - eta * g.dgamma2, blk.ln2.beta - eta * g.dbeta2),
            ffn=ffn,
        ))
    return AuxModel(config=model.config, embed=model.embed, blocks=new_blocks)


def sequence_loss(model: AuxModel, x_top, tokens, positions) -> float:
    """Summed cross-entropy of next tokens at the loss positions."""
    total = 0.0
    for p in np.asarray(positions, dtype=np.int64):
        logits = matmul(model.embed, x_top[p])
        p_row = softmax_rows(logits[None, :])[0]
        total += -float(np.log(max(float(p_row[int(tokens[p + 1])]), 1e-30)))
    return total


def finetune_eval(model: AuxModel, tokens, split: int, loss_spec: LossSpec, eta,
                  n_steps: int, regime: str, eps_ln=1e-3, eps_act=1e-3, eps_glu=1e-3,
                  schedule=None, depth_budget: int = 64) -> tuple:
    """N descent steps on the training segment, then evaluation logits on
    the remainder with the updated weights."""
    tokens = np.asarray(tokens, dtype=np.int64)
    t = len(tokens)
    if not (1 <= split < t):
        raise ConfigError(f"invalid split {split} for sequence length {t}")
    if n_steps < 1:
        raise ConfigError("n_steps must be >= 1")
    loss_spec.validate()
    if schedule is None:
        schedule = [list(range(model.config.l))] * n_steps
    if len(schedule) != n_steps:
        raise ConfigError("schedule length must equal n_steps")
    if sum(len(s) for s in schedule) > depth_budget:
        raise BudgetError(
            f"schedule uses {sum(len(s) for s in schedule)} layer-steps, budget {depth_budget}")
    positions = loss_positions(loss_spec, split)
    train_tokens = tokens[:split]
    train_mask = np.ones((split, split), dtype=bool)
    cur = model
    for step_layers in schedule:
        x0 = embed_tokens(cur, train_tokens)
        x_top, caches = forward_collect(cur, x0, train_mask)
        d_top = loss_grad_top(cur, x_top, tokens, positions)
        gset = backward(cur, caches, d_top, regime, eps_ln, eps_act, eps_glu)
        cur = apply_descent(cur, gset, eta, step_layers)
    full_mask = train_eval_masks(t, split)
    x0 = embed_tokens(cur, tokens)
    x_top, _ = forward_collect(cur, x0, full_mask)
    eval_logits = matmul(x_top[split:], cur.embed.T)
    return cur, eval_logits

"""Whole-simulator assembly: sizing, structure, and execution.

count_params prices a simulator for a given auxiliary architecture
without materializing anything; build_tint lays out the module plan
(one forward/backward/descent trio per auxiliary layer, parameters
shared across update steps and the final evaluation pass) and checks
that its tally agrees with the closed-form count; run_simulation
executes the plan with the constructions from tint_modules, performing
the requested number of internal descent steps on the training segment
and returning evaluation logits computed with the updated weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .aux_reference import (AttnParams, AuxBlock, AuxConfig, AuxModel, LossSpec,
                            NormParams, embed_tokens, loss_positions,
                            train_eval_masks)
from .errors import BudgetError, ConfigError, ConstructionError
from .tensor_core import matmul
from . import tint_modules as tm


# ---------------------------------------------------------------------------
# configuration


@dataclass
class TinTConfig:
    aux: AuxConfig
    s: int = 4
    s_prime: Optional[int] = None     # None: derive from h_sim = min(s^2, h_aux)
    bias_token: bool = True           # dedicated bias prefix token (off: priced as
                                      # if the bias rides the first value row)
    eta: float = 0.0
    n_steps: int = 1
    eps_ln: float = 1e-3
    eps_act: float = 1e-3
    eps_glu: float = 1e-3
    depth_budget: int = 64
    loss_mode: str = "full_context_loss"
    loss_format: str = "single"
    loss_positions: Optional[tuple] = None
    schedule: Optional[list] = None   # per-step layer index lists

    def resolved_s_prime(self) -> int:
        if self.s_prime is not None:
            return int(self.s_prime)
        h_sim = min(self.s * self.s, self.aux.h_aux)
        if h_sim % self.s != 0:
            raise ConfigError(
                f"h_sim={h_sim} from the default policy is not a multiple of "
                f"s={self.s}; pass s_prime explicitly")
        return h_sim // self.s

    @property
    def h_sim(self) -> int:
        return self.s * self.resolved_s_prime()

    @property
    def d_sim(self) -> int:
        return self.s * self.aux.d_aux

    @property
    def k(self) -> int:
        return -(-self.aux.d_aux // self.s) + (1 if self.bias_token else 0)

    def t_sim(self, t: Optional[int] = None) -> int:
        return self.k + (self.aux.t_aux if t is None else t)

    def loss_spec(self) -> LossSpec:
        return LossSpec(mode=self.loss_mode, format=self.loss_format,
                        positions=None if self.loss_positions is None
                        else np.asarray(self.loss_positions, dtype=np.int64))

    def validate(self) -> "TinTConfig":
        self.aux.validate()
        if self.s < 1:
            raise ConfigError("s must be >= 1")
        sp = self.resolved_s_prime()
        if sp < 1 or self.aux.d_aux % sp != 0:
            raise ConfigError(f"s_prime={sp} must divide d_aux={self.aux.d_aux}")
        if self.n_steps < 1:
            raise ConfigError("n_steps must be >= 1")
        for name in ("eps_ln", "eps_act", "eps_glu"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.schedule is not None:
            if len(self.schedule) != self.n_steps:
                raise ConfigError("schedule length must equal n_steps")
            for step in self.schedule:
                for li in step:
                    if not (0 <= li < self.aux.l):
                        raise ConfigError(f"schedule references layer {li}")
        return self

    def step_schedule(self) -> list:
        if self.schedule is not None:
            sched = [list(step) for step in self.schedule]
        else:
            sched = [list(range(self.aux.l))] * self.n_steps
        if sum(len(step) for step in sched) > self.depth_budget:
            raise BudgetError(
                f"schedule uses {sum(len(s) for s in sched)} layer-steps, "
                f"budget {self.depth_budget}")
        return sched


# ---------------------------------------------------------------------------
# parameter pricing

# Every simulator attention layer spends 4 full projections of
# d_sim^2/h_sim + h_sim*d_sim each (content maps priced per head plus
# gates) and 3 position tables of t_sim * d_sim / h_sim. A head-split
# stage or a static elementwise layer is one projection's worth; norm
# backward and activation backward add 2 * d_sim * h_sim of mixing
# weight. Biases are not priced.


def _q_split(d_sim: int, h_sim: int) -> int:
    return d_sim * d_sim // h_sim + h_sim * d_sim


def _q_attn(d_sim: int, h_sim: int, t_sim: int) -> int:
    return 4 * _q_split(d_sim, h_sim) + 3 * t_sim * d_sim // h_sim


MODULE_KINDS = ("norm", "attention", "linear", "activation")


def module_rows(kind: str, d_sim: int, h_sim: int, t_sim: int) -> tuple:
    """(forward, backward, descent) simulated-parameter prices."""
    q = _q_attn(d_sim, h_sim, t_sim)
    qs = _q_split(d_sim, h_sim)
    dh = 2 * d_sim * h_sim
    if kind == "linear":
        return q, q, q
    if kind == "norm":
        return q, q + dh, q
    if kind == "attention":
        return 2 * q, 2 * q, 2 * q
    if kind == "activation":
        return qs, dh, 0
    raise ConfigError(f"unknown module kind {kind!r}")


def _block_kinds(ffn_kind: str) -> list:
    kinds = ["norm", "attention", "linear", "norm"]
    if ffn_kind == "mlp":
        kinds += ["linear", "activation", "linear"]
    else:
        kinds += ["linear", "linear", "activation", "activation", "linear"]
    return kinds


@dataclass
class CountReport:
    rows: list          # (label, fwd, bwd, desc, total)
    fwd: int
    bwd: int
    desc: int
    total: int
    constants: tuple    # (c1, c2, c3) of the per-layer closed form
    d_sim: int
    h_sim: int
    t_sim: int
    k: int

    def lines(self) -> list:
        out = ["{:<22} {:>16} {:>16} {:>16} {:>16}".format(
            "module", "forward", "backward", "descent", "total")]
        for label, f, b, d, t in self.rows:
            out.append("{:<22} {:>16} {:>16} {:>16} {:>16}".format(label, f, b, d, t))
        out.append("{:<22} {:>16} {:>16} {:>16} {:>16}".format(
            "total", self.fwd, self.bwd, self.desc, self.total))
        c1, c2, c3 = self.constants
        out.append(f"per-layer closed form: {c1}*s^2*d^2/h + {c2}*s*d*h + {c3}*t_sim*s*d/h"
                   f"  (constants bounded by 150)")
        out.append(f"d_sim={self.d_sim} h_sim={self.h_sim} t_sim={self.t_sim} "
                   f"prefix_tokens={self.k}")
        return out


def count_params(cfg: TinTConfig) -> CountReport:
    """Prices the full simulator. The per-layer total also collapses to
    c1*s^2*d^2/h_sim + c2*s*d*h_sim + c3*t_sim*s*d/h_sim with small
    integer constants, which is asserted here."""
    cfg.validate()
    d_sim, h_sim, t_sim = cfg.d_sim, cfg.h_sim, cfg.t_sim()
    kinds = _block_kinds(cfg.aux.ffn_kind)
    rows = []
    fwd = bwd = desc = 0
    for kind in kinds:
        f, b, d = module_rows(kind, d_sim, h_sim, t_sim)
        rows.append((kind, f, b, d, f + b + d))
        fwd, bwd, desc = fwd + f, bwd + b, desc + d
    block_total = fwd + bwd + desc
    l = cfg.aux.l
    rows.append(("per-block", fwd, bwd, desc, block_total))

    if cfg.aux.ffn_kind == "mlp":
        d, s, h = cfg.aux.d_aux, cfg.s, h_sim
        c1, c2, c3 = 85, 91, 63
        closed = (c1 * s * s * d * d // h + c2 * s * d * h + c3 * t_sim * s * d // h)
        if closed != block_total:
            raise ConstructionError(
                f"pricing drifted from its closed form: {closed} != {block_total}")
        if max(c1, c2, c3) >= 150:
            raise ConstructionError("closed-form constants exceed the O(1) budget")
        constants = (c1, c2, c3)
    else:
        constants = (0, 0, 0)

    return CountReport(rows=rows, fwd=fwd * l, bwd=bwd * l, desc=desc * l,
                       total=block_total * l, constants=constants,
                       d_sim=d_sim, h_sim=h_sim, t_sim=t_sim, k=cfg.k)


# ---------------------------------------------------------------------------
# structural plan


@dataclass
class SimModule:
    layer: int     # auxiliary layer index (-1 for the loss-gradient layer)
    kind: str      # norm | attention | linear | activation | loss
    role: str      # forward | backward | descent | gradient
    step: object   # update-step index, or "eval" for the final pass
    params: int


@dataclass
class TinTStack:
    cfg: TinTConfig
    layout: tm.PrefixLayout
    modules: list       # execution order, unrolled over the update steps
    param_total: int    # distinct parameters (steps reuse the same modules)
    schedule: list


def build_tint(cfg: TinTConfig) -> TinTStack:
    """Lays out the module plan in execution order: for each update step
    a forward chain, the loss-gradient layer, a backward chain and the
    scheduled descent modules, then one evaluation forward chain. Module
    weights are identical across steps by construction, so the stored
    parameter total counts each layer's trio once and is cross-checked
    against count_params."""
    cfg.validate()
    lo = tm.PrefixLayout.build(cfg.aux.d_aux, cfg.s, cfg.resolved_s_prime())
    d_sim, h_sim, t_sim = cfg.d_sim, cfg.h_sim, cfg.t_sim()
    kinds = _block_kinds(cfg.aux.ffn_kind)
    schedule = cfg.step_schedule()

    def rows(kind):
        return module_rows(kind, d_sim, h_sim, t_sim)

    modules = []
    for step, layers in enumerate(schedule):
        for li in range(cfg.aux.l):
            for kind in kinds:
                modules.append(SimModule(li, kind, "forward", step, rows(kind)[0]))
        # readout gradient: its one-hot tables follow the published
        # accounting, which prices only the block modules
        modules.append(SimModule(-1, "loss", "gradient", step, 0))
        for li in range(cfg.aux.l - 1, -1, -1):
            for kind in reversed(kinds):
                modules.append(SimModule(li, kind, "backward", step, rows(kind)[1]))
        for li in sorted(layers):
            for kind in kinds:
                if kind != "activation":  # static layer: nothing to update
                    modules.append(SimModule(li, kind, "descent", step, rows(kind)[2]))
    for li in range(cfg.aux.l):
        for kind in kinds:
            modules.append(SimModule(li, kind, "forward", "eval", rows(kind)[0]))

    total = 0
    for li in range(cfg.aux.l):
        for kind in kinds:
            total += sum(rows(kind))
    expected = count_params(cfg).total
    if total != expected:
        raise ConstructionError(f"plan materializes {total} parameters, "
                                f"pricing says {expected}")
    return TinTStack(cfg=cfg, layout=lo, modules=modules, param_total=total,
                     schedule=schedule)


# ---------------------------------------------------------------------------
# input formatting


@dataclass
class FormattedInput:
    tokens: np.ndarray
    split: int
    segments: np.ndarray    # 0 = training, 1 = evaluation
    attn_mask: np.ndarray   # (t, t) bool: bidirectional train, causal eval
    loss_mask: np.ndarray   # (t,) bool over training positions


def format_input(tokens, split: int, loss_spec: LossSpec) -> FormattedInput:
    tokens = np.asarray(tokens, dtype=np.int64)
    t = len(tokens)
    mask = train_eval_masks(t, split)
    segments = (np.arange(t) >= split).astype(np.int64)
    loss_mask = np.zeros(t, dtype=bool)
    loss_mask[loss_positions(loss_spec.validate(), split)] = True
    return FormattedInput(tokens=tokens, split=split, segments=segments,
                          attn_mask=mask, loss_mask=loss_mask)


# ---------------------------------------------------------------------------
# execution


@dataclass
class SimResult:
    model: AuxModel          # decoded post-update weights
    eval_logits: np.ndarray  # (t - split, vocab)
    stack: TinTStack


def _sim_forward(lo, model, cfg, x0, mask):
    """Forward through every block with the simulator constructions,
    caching what backward and descent re-assemble into scratch bands."""
    acfg = model.config
    x = x0
    caches = []
    for blk in model.blocks:
        c = {"x_in": x}
        y1 = tm.tint_norm_forward(lo, blk.ln1.gamma, blk.ln1.beta, x, acfg.ln_kind)
        c["y1"] = y1
        y_attn, scores, q, k, v = tm.tint_attn_forward(lo, blk.attn, y1, mask,
                                                       acfg.h_aux)
        c.update(attn_y=y_attn, q=q, k=k)
        x = (x + tm.tint_linear_forward(lo, blk.w_o, blk.b_o, y_attn)).astype(np.float32)
        c["x_mid"] = x
        y2 = tm.tint_norm_forward(lo, blk.ln2.gamma, blk.ln2.beta, x, acfg.ln_kind)
        c["y2"] = y2
        if acfg.ffn_kind == "mlp":
            f, hs, us = tm.tint_ffn_forward(lo, blk.ffn, y2, acfg.activation)
            c.update(hs=hs, us=us)
        else:
            f, inter = tm.tint_glu_forward(lo, blk.ffn, y2, acfg.activation)
            c["glu_inter"] = inter
        x = (x + f).astype(np.float32)
        caches.append(c)
    return x, caches


def _sim_backward(lo, model, cfg, caches, d_top, mask):
    """Backward chain under the simulator's approximations, parking per
    layer whatever the descent modules consume."""
    acfg = model.config
    dx = d_top
    parked = [None] * len(model.blocks)
    for li in range(len(model.blocks) - 1, -1, -1):
        blk, c = model.blocks[li], caches[li]
        park = {}
        d_f = dx
        if acfg.ffn_kind == "mlp":
            d_y2, dhs = tm.tint_ffn_backward(lo, blk.ffn, d_f, c["hs"],
                                             cfg.eps_act, acfg.activation)
            park.update(d_f=d_f, dhs=dhs)
        else:
            d_y2, d_y, du, dwg = tm.tint_glu_backward(lo, blk.ffn, d_f,
                                                      c["glu_inter"], cfg.eps_glu,
                                                      acfg.activation)
            park.update(d_f=d_f, glu_du=du, glu_dwg=dwg)
        dx_b = tm.tint_norm_backward(lo, blk.ln2.gamma, d_y2, c["x_mid"],
                                     cfg.eps_ln, acfg.ln_kind)
        park["d_y2"] = d_y2
        dx_mid = (dx + dx_b).astype(np.float32)
        d_proj = dx_mid
        park["d_proj"] = d_proj
        d_ay = tm.tint_linear_backward(lo, blk.w_o, d_proj)
        dx_v, dv = tm.tint_attn_backward(lo, blk.attn, c["q"], c["k"], d_ay,
                                         mask, acfg.h_aux)
        park["dv"] = dv
        dx_a = tm.tint_norm_backward(lo, blk.ln1.gamma, dx_v, c["x_in"],
                                     cfg.eps_ln, acfg.ln_kind)
        park["d_y1"] = dx_v
        dx = (dx_mid + dx_a).astype(np.float32)
        parked[li] = park
    return parked


def _sim_descend(lo, model, cfg, caches, parked, layers):
    """Descent modules for the scheduled layers; everything else is
    carried over untouched."""
    acfg = model.config
    eta = cfg.eta
    new_blocks = []
    for li, blk in enumerate(model.blocks):
        if li not in layers:
            new_blocks.append(blk)
            continue
        c, park = caches[li], parked[li]
        g1, b1 = tm.tint_norm_descent(lo, blk.ln1.gamma, blk.ln1.beta,
                                      park["d_y1"], eta, acfg.ln_kind)
        g2, b2 = tm.tint_norm_descent(lo, blk.ln2.gamma, blk.ln2.beta,
                                      park["d_y2"], eta, acfg.ln_kind)
        wv2, bv2 = tm.tint_attn_value_descent(lo, blk.attn, c["y1"], park["dv"], eta)
        attn = AttnParams(w_q=blk.attn.w_q, w_k=blk.attn.w_k, w_v=wv2,
                          b_q=blk.attn.b_q, b_k=blk.attn.b_k, b_v=bv2,
                          slopes=blk.attn.slopes)
        wo2, bo2 = tm.tint_linear_descent(lo, blk.w_o, blk.b_o, c["attn_y"],
                                          park["d_proj"], eta)
        if acfg.ffn_kind == "mlp":
            ffn = tm.tint_ffn_descent(lo, blk.ffn, c["y2"], park["d_f"],
                                      park["dhs"], c["us"], eta)
        else:
            ffn = tm.tint_glu_descent(lo, blk.ffn, c["y2"], park["d_f"],
                                      park["glu_du"], park["glu_dwg"],
                                      c["glu_inter"], eta)
        new_blocks.append(AuxBlock(ln1=NormParams(g1, b1), attn=attn,
                                   w_o=wo2, b_o=bo2,
                                   ln2=NormParams(g2, b2), ffn=ffn))
    return AuxModel(config=model.config, embed=model.embed, blocks=new_blocks)


def run_simulation(model: AuxModel, tokens, split: int, cfg: TinTConfig) -> SimResult:
    """The whole internal fine-tuning pass: N times (forward on the
    training segment, readout gradient, backward chain, descent on the
    scheduled layers), then one forward over the full sequence with the
    updated weights to produce evaluation logits."""
    if model.config is not cfg.aux and model.config != cfg.aux:
        raise ConfigError("model and simulator configs disagree")
    stack = build_tint(cfg)
    lo = stack.layout
    if not cfg.bias_token:
        raise ConfigError("execution requires the dedicated bias token")
    fmt = format_input(tokens, split, cfg.loss_spec())
    tokens = fmt.tokens
    t = len(tokens)
    positions = loss_positions(cfg.loss_spec(), split)

    cur = model
    train_tokens = tokens[:split]
    train_mask = np.ones((split, split), dtype=bool)
    for step_layers in stack.schedule:
        x_emb = embed_tokens(cur, train_tokens)
        x_top, caches = _sim_forward(lo, cur, cfg, x_emb, train_mask)
        d_top = tm.tint_lm_head_grad(lo, cur.embed, x_top, x_emb, positions, split)
        parked = _sim_backward(lo, cur, cfg, caches, d_top, train_mask)
        cur = _sim_descend(lo, cur, cfg, caches, parked, set(step_layers))

    x_emb_full = embed_tokens(cur, tokens)
    x_top, _ = _sim_forward(lo, cur, cfg, x_emb_full, fmt.attn_mask)
    eval_logits = matmul(x_top[split:], cur.embed.T)
    return SimResult(model=cur, eval_logits=eval_logits, stack=stack)

"""Check suites behind `tint verify`.

Each suite returns CheckRecord rows; the runner canonicalizes order and
prints one record per line so runs are diffable. Suites are pure
functions of the seed, so a fixed seed reproduces byte-identical
reports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import aux_reference as ar
from . import tint_modules as tm
from .aux_reference import (AttnParams, GluParams, LossSpec, attn_bwd_approx,
                            attn_bwd_exact, attn_fwd, attach_heads,
                            act_bwd_approx, act_bwd_exact, epsilon_hardness,
                            finetune_eval, forward_collect, glu_bwd_approx,
                            glu_fwd, linear_bwd, linear_desc, linear_fwd,
                            ln_bwd_approx, ln_bwd_exact, ln_fwd, random_model,
                            train_eval_masks)
from .checkpoint import load_checkpoint, model_tensors, save_checkpoint
from .errors import ConfigError, ConstructionError
from .presets import preset_config, preset_model_and_tokens
from .tensor_core import matmul, softmax_rows
from .tint_builder import TinTConfig, count_params, run_simulation
from .tint_kernels import gelu_multiply, linear_as_softmax


@dataclass
class CheckRecord:
    suite: str
    name: str
    ok: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.suite}.{self.name} {self.detail}"


def rel_err(got, ref) -> float:
    got = np.asarray(got, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    return float(np.max(np.abs(got - ref)) / (np.max(np.abs(ref)) + 1e-12))


def max_abs(got, ref) -> float:
    return float(np.max(np.abs(np.asarray(got, np.float64) - np.asarray(ref, np.float64))))


# ---------------------------------------------------------------------------
# 1. parameter counts


def check_param_counts(seed=0):
    targets = {  # (field, billions) against published rounding
        "opt125m-shapes": [("fwd", 0.4), ("total", 1.2)],
        "opt350m-shapes": [("total", 3.4)],
        "opt1.3b-shapes": [("total", 10.8)],
        "opt2.7b-shapes": [("total", 21.8)],
    }
    out = []
    for preset, pairs in targets.items():
        rep = count_params(preset_config(preset))
        for field_name, tgt in pairs:
            val = getattr(rep, field_name) / 1e9
            ok = abs(val - tgt) <= 0.1
            out.append(CheckRecord("param_counts", f"{preset}.{field_name}", ok,
                                   f"got {val:.4f}b target {tgt}b (±0.1b)"))
    return out


# ---------------------------------------------------------------------------
# 2. exact linear modules


def admissible_layouts(d_values=(8, 16), s_values=(1, 2, 4)):
    for d in d_values:
        for s in s_values:
            for sp in (1, 2, 4):
                if d % sp:
                    continue
                if -(-d // s) > d // sp:
                    continue
                yield d, s, sp


def check_linear_exact(seed=0):
    out = []
    t = 5
    n_instances = 0
    n_descent = 0
    worst = {"forward": 0.0, "backward": 0.0, "descent_w": 0.0, "descent_b": 0.0}
    for d, s, sp in admissible_layouts():
        lo = tm.PrefixLayout.build(d, s, sp)
        for rep in range(5):
            rng = np.random.default_rng(seed + 7919 * rep + 31 * d + 7 * s + sp)
            w = (rng.standard_normal((d, d)) / np.sqrt(d)).astype(np.float32)
            b = rng.standard_normal(d).astype(np.float32) * 0.3
            xs = rng.standard_normal((t, d)).astype(np.float32)
            dys = rng.standard_normal((t, d)).astype(np.float32)
            eta = 0.07
            n_instances += 1
            worst["forward"] = max(worst["forward"], rel_err(
                tm.tint_linear_forward(lo, w, b, xs), linear_fwd(w, b, xs)))
            worst["backward"] = max(worst["backward"], rel_err(
                tm.tint_linear_backward(lo, w, dys), linear_bwd(w, dys)))
            if s >= 2:
                # descent pairs dy (band 0) with x (band 1), so it only
                # exists on layouts with a second band
                n_descent += 1
                w2, b2 = tm.tint_linear_descent(lo, w, b, xs, dys, eta)
                w2r, b2r = linear_desc(w, b, xs, dys, eta)
                worst["descent_w"] = max(worst["descent_w"], rel_err(w2, w2r))
                worst["descent_b"] = max(worst["descent_b"], rel_err(b2, b2r))
    for op, err in worst.items():
        n = n_descent if op.startswith("descent") else n_instances
        out.append(CheckRecord("linear_exact", op, err <= 1e-5,
                               f"max rel err {err:.3g} over {n} instances "
                               f"(tol 1e-5)"))
    single_band = tm.PrefixLayout.build(8, 1, 1)
    try:
        tm.tint_linear_descent(single_band, np.eye(8, dtype=np.float32),
                               np.zeros(8, dtype=np.float32),
                               np.ones((2, 8), dtype=np.float32),
                               np.ones((2, 8), dtype=np.float32), 0.1)
        rejected = False
    except ConstructionError:
        rejected = True
    out.append(CheckRecord("linear_exact", "descent_needs_two_bands", rejected,
                           "s=1 layout rejected" if rejected
                           else "s=1 descent did not raise"))
    return out


# ---------------------------------------------------------------------------
# 3. approximation-rule realization


def check_approx_rules(seed=0):
    out = []
    rng = np.random.default_rng(seed)
    d, s, sp, t = 16, 4, 1, 6
    lo = tm.PrefixLayout.build(d, s, sp)
    eps = 1e-3

    for kind in ("layernorm", "rmsnorm"):
        gamma = (1.0 + 0.1 * rng.standard_normal(d)).astype(np.float32)
        xs = rng.standard_normal((t, d)).astype(np.float32)
        dys = rng.standard_normal((t, d)).astype(np.float32)
        got = tm.tint_norm_backward(lo, gamma, dys, xs, eps, kind)
        ref = ln_bwd_approx(gamma, dys, xs, eps, kind)
        err = rel_err(got, ref)
        out.append(CheckRecord("approx_rules", f"norm_backward.{kind}", err <= 1e-5,
                               f"rel err {err:.3g} (tol 1e-5)"))

    for kind in ("gelu", "relu"):
        xs = rng.standard_normal((t, d)).astype(np.float32)
        dys = rng.standard_normal((t, d)).astype(np.float32)
        got = tm.tint_act_backward(dys, xs, eps, kind)
        ref = act_bwd_approx(dys, xs, eps, kind)
        err = rel_err(got, ref)
        out.append(CheckRecord("approx_rules", f"activation_backward.{kind}",
                               err <= 1e-5, f"rel err {err:.3g} (tol 1e-5)"))

    glu = GluParams(
        w=(rng.standard_normal((d, d)) / np.sqrt(d)).astype(np.float32),
        v=(rng.standard_normal((d, d)) / np.sqrt(d)).astype(np.float32),
        w_o=(rng.standard_normal((d, d)) / np.sqrt(d)).astype(np.float32),
        b_w=rng.standard_normal(d).astype(np.float32) * 0.1,
        b_v=rng.standard_normal(d).astype(np.float32) * 0.1,
        b_o=rng.standard_normal(d).astype(np.float32) * 0.1)
    xs = rng.standard_normal((t, d)).astype(np.float32)
    d_yhat = rng.standard_normal((t, d)).astype(np.float32)
    _, inter = glu_fwd(glu, xs, "gelu")
    d_y_ref = linear_bwd(glu.w_o, d_yhat)
    dx_ref, _, _ = glu_bwd_approx(glu, d_y_ref, inter, eps, "gelu")
    _, tint_inter = tm.tint_glu_forward(lo, glu, xs, "gelu")
    dx_got, _, _, _ = tm.tint_glu_backward(lo, glu, d_yhat, tint_inter, eps, "gelu")
    err = rel_err(dx_got, dx_ref)
    out.append(CheckRecord("approx_rules", "glu_backward", err <= 1e-5,
                           f"rel err {err:.3g} (tol 1e-5)"))

    h_aux = 4
    attn = AttnParams(
        w_q=(rng.standard_normal((d, d)) / np.sqrt(d)).astype(np.float32),
        w_k=(rng.standard_normal((d, d)) / np.sqrt(d)).astype(np.float32),
        w_v=(rng.standard_normal((d, d)) / np.sqrt(d)).astype(np.float32),
        b_q=rng.standard_normal(d).astype(np.float32) * 0.1,
        b_k=rng.standard_normal(d).astype(np.float32) * 0.1,
        b_v=rng.standard_normal(d).astype(np.float32) * 0.1)
    attach_heads(attn, h_aux)
    xs = rng.standard_normal((t, d)).astype(np.float32)
    dys = rng.standard_normal((t, d)).astype(np.float32)
    mask = np.ones((t, t), dtype=bool)
    _, scores_ref = attn_fwd(attn, xs, mask)
    dx_ref = attn_bwd_approx(attn, dys, scores_ref)
    _, _, q, k, _ = tm.tint_attn_forward(lo, attn, xs, mask, h_aux)
    dx_got, _ = tm.tint_attn_backward(lo, attn, q, k, dys, mask, h_aux)
    err = rel_err(dx_got, dx_ref)
    out.append(CheckRecord("approx_rules", "attention_backward", err <= 1e-5,
                           f"rel err {err:.3g} (tol 1e-5)"))
    return out


# ---------------------------------------------------------------------------
# 4a. first-order norm gradient: error linear in eps


def check_ln_firstorder(seed=0):
    out = []
    rng = np.random.default_rng(seed)
    d = 16
    for kind in ("layernorm", "rmsnorm"):
        gamma = (1.0 + 0.1 * rng.standard_normal(d)).astype(np.float32)
        x = rng.standard_normal(d).astype(np.float32)
        dy = rng.standard_normal(d).astype(np.float32)
        _, _, sig, z = ln_fwd(gamma, np.zeros(d, np.float32), x, kind)
        exact = ln_bwd_exact(gamma, dy, z, sig, kind)
        errs = []
        for eps in (2e-2, 1e-2, 5e-3):
            approx = ln_bwd_approx(gamma, dy, x, eps, kind)
            errs.append(max_abs(approx, exact))
        ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
        ok = all(1.8 <= r <= 2.2 for r in ratios)
        out.append(CheckRecord("ln_firstorder", kind, ok,
                               "halving ratios " + ", ".join(f"{r:.3f}" for r in ratios)
                               + " (want 2 ± 0.2)"))
    return out


# ---------------------------------------------------------------------------
# 4b. activation first-order bounds


def check_act_bounds(seed=0):
    out = []
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(32).astype(np.float32)
    dy = rng.standard_normal(32).astype(np.float32)
    exact = act_bwd_exact(dy, x, "gelu")
    errs = [max_abs(act_bwd_approx(dy, x, eps, "gelu"), exact)
            for eps in (2e-2, 1e-2, 5e-3)]
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    ok = all(1.6 <= r <= 2.4 for r in ratios)
    out.append(CheckRecord("act_bounds", "gelu_linear_in_eps", ok,
                           "halving ratios " + ", ".join(f"{r:.3f}" for r in ratios)
                           + " (want ~2)"))

    # dyadic inputs staying strictly on one side of the kink: the finite
    # difference equals the exact gradient bit for bit
    eps = float(2.0 ** -10)
    x = np.array([1.0, -1.0, 2.0, -2.0, 0.5, -0.5, 4.0, -4.0], dtype=np.float32)
    dy = np.array([0.25, 0.5, -0.25, -0.5, 0.25, -0.25, 0.5, 0.5], dtype=np.float32)
    gap = max_abs(act_bwd_approx(dy, x, eps, "relu"), act_bwd_exact(dy, x, "relu"))
    out.append(CheckRecord("act_bounds", "relu_aligned_zero_gap", gap == 0.0,
                           f"gap {gap:.3g} (want exactly 0)"))
    return out


# ---------------------------------------------------------------------------
# 4c. eps-hard attention


def _hard_attention_inputs(eps: float, seed: int):
    """Attention whose every row puts >= 1-eps weight on one key."""
    rng = np.random.default_rng(seed)
    t, d, h = 6, 16, 2  # head width 8 >= t so every row gets its own peak
    attn = AttnParams(
        w_q=np.eye(d, dtype=np.float32), w_k=np.eye(d, dtype=np.float32),
        w_v=(rng.standard_normal((d, d)) / np.sqrt(d)).astype(np.float32),
        b_q=np.zeros(d, np.float32), b_k=np.zeros(d, np.float32),
        b_v=np.zeros(d, np.float32))
    attach_heads(attn, h)
    # per-head one-hot rows scaled so the diagonal logit hits the target
    target = np.log((1.0 - eps) * (t - 1) / eps)
    xs = np.zeros((t, d), dtype=np.float32)
    dh = d // h
    for i in range(t):
        for hh in range(h):
            xs[i, hh * dh + i] = np.sqrt(target)
    dys = rng.standard_normal((t, d)).astype(np.float32) * 0.5
    return attn, xs, dys


def check_attn_hard(seed=0):
    out = []
    gaps = {}
    for eps in (1e-2, 1e-3):
        attn, xs, dys = _hard_attention_inputs(eps, seed)
        mask = np.ones((xs.shape[0],) * 2, dtype=bool)
        _, scores = attn_fwd(attn, xs, mask)
        hard = epsilon_hardness(scores)
        ok_h = hard <= 1.5 * eps
        out.append(CheckRecord("attn_hard", f"hardness_at_{eps:g}", ok_h,
                               f"measured hardness {hard:.3g} (target <= {1.5 * eps:.3g})"))
        dx_exact, _, _, _ = attn_bwd_exact(attn, xs, dys, scores)
        dx_approx = attn_bwd_approx(attn, dys, scores)
        gaps[eps] = max_abs(dx_approx, dx_exact)
    ratio = gaps[1e-2] / max(gaps[1e-3], 1e-30)
    ok = 5.0 <= ratio <= 20.0
    out.append(CheckRecord("attn_hard", "gap_proportional_to_eps", ok,
                           f"gap(1e-2)/gap(1e-3) = {ratio:.2f} (want ~10, accept 5-20)"))
    return out


# ---------------------------------------------------------------------------
# 4d. linear attention through softmax heads


def check_linsoftmax(seed=0):
    rng = np.random.default_rng(seed)
    t, dv = 5, 4
    scores = rng.standard_normal((1, t, t)).astype(np.float32) * 0.5
    values = (rng.standard_normal((t, dv)) + 1.0).astype(np.float32)
    exact = matmul(scores[0], values)
    devs = []
    eps_list = (1e-4, 2.5e-5, 6.25e-6)
    for eps in eps_list:
        approx = linear_as_softmax(scores, values, eps)
        devs.append(max_abs(approx, exact))
    ratios = [devs[i] / devs[i + 1] for i in range(len(devs) - 1)]
    ok = all(1.7 <= r <= 2.3 for r in ratios)
    return [CheckRecord("linsoftmax", "sqrt_eps_deviation", ok,
                        "quartering ratios " + ", ".join(f"{r:.3f}" for r in ratios)
                        + " (want 2 ± 0.3)")]


# ---------------------------------------------------------------------------
# 4e. multiplication gadget


def check_gelu_mult(seed=0):
    out = []
    got = float(gelu_multiply(np.array([0.1], np.float32),
                              np.array([0.1], np.float32))[0])
    err = abs(got - 0.01)
    out.append(CheckRecord("gelu_mult", "value_at_0.1", err <= 1e-5,
                           f"0.1*0.1 -> {got:.8f}, err {err:.3g} (tol 1e-5)"))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(64).astype(np.float32)
    y = rng.standard_normal(64).astype(np.float32)
    errs = []
    for c in (1.0, 0.5, 0.25):
        got = gelu_multiply(c * x, c * y)
        ref = (c * x).astype(np.float64) * (c * y).astype(np.float64)
        errs.append(float(np.max(np.abs(got - ref))))
    slopes = [np.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
    ok = all(s >= 3.0 for s in slopes)
    out.append(CheckRecord("gelu_mult", "cubic_shrinkage", ok,
                           "halving slopes " + ", ".join(f"{s:.2f}" for s in slopes)
                           + " (want >= 3)"))
    return out


# ---------------------------------------------------------------------------
# 5. end-to-end simulation vs oracle


def e2e_cases():
    """12 toy cases covering layer count, width, steps, loss modes and
    formats."""
    cases = []
    i = 0
    for l in (1, 2):
        for d in (8, 16):
            for n in (1, 2):
                mode = "full_context_loss" if i % 2 == 0 else "label_loss"
                fmt = "multi" if i % 3 == 0 else "single"
                cases.append((l, d, n, mode, fmt))
                i += 1
    # make sure every (mode, format) pair occurs
    cases.append((1, 8, 1, "label_loss", "multi"))
    cases.append((2, 16, 1, "full_context_loss", "single"))
    cases.append((1, 16, 2, "label_loss", "single"))
    cases.append((2, 8, 1, "full_context_loss", "multi"))
    return cases


def _case_cfg(l, d, n, mode, fmt, eta):
    t = 8 if d == 8 else 12
    split = 5 if d == 8 else 8
    aux = ar.AuxConfig(d_aux=d, h_aux=4, l=l, t_aux=t, vocab=11 + d)
    if mode == "label_loss":
        positions = (2,) if fmt == "single" else (1, split - 2)
    else:
        positions = None
    cfg = TinTConfig(aux=aux, s=4, s_prime=1, eta=eta, n_steps=n,
                     loss_mode=mode, loss_format=fmt, loss_positions=positions)
    return cfg, t, split


def check_end_to_end(seed=0):
    out = []
    worst_logit = worst_w = worst_eta0 = 0.0
    n_cases = 0
    for idx, (l, d, n, mode, fmt) in enumerate(e2e_cases()):
        cfg, t, split = _case_cfg(l, d, n, mode, fmt, eta=0.02)
        rng = np.random.default_rng(seed + idx)
        model = random_model(cfg.aux, seed=seed + 100 + idx)
        tokens = rng.integers(0, cfg.aux.vocab, size=t)
        res = run_simulation(model, tokens, split, cfg)
        ref_model, ref_logits = finetune_eval(
            model, tokens, split, cfg.loss_spec(), cfg.eta, cfg.n_steps,
            "simulated", eps_ln=cfg.eps_ln, eps_act=cfg.eps_act,
            eps_glu=cfg.eps_glu)
        worst_logit = max(worst_logit, max_abs(res.eval_logits, ref_logits))
        got_t = model_tensors(res.model)
        ref_t = model_tensors(ref_model)
        for name in ref_t:
            worst_w = max(worst_w, rel_err(got_t[name], ref_t[name]))

        cfg0, _, _ = _case_cfg(l, d, n, mode, fmt, eta=0.0)
        res0 = run_simulation(model, tokens, split, cfg0)
        mask = train_eval_masks(t, split)
        x_top, _ = forward_collect(model, ar.embed_tokens(model, tokens), mask)
        plain_logits = matmul(x_top[split:], model.embed.T)
        worst_eta0 = max(worst_eta0, max_abs(res0.eval_logits, plain_logits))
        n_cases += 1
    out.append(CheckRecord("end_to_end", "logits_vs_oracle", worst_logit <= 1e-3,
                           f"max abs {worst_logit:.3g} over {n_cases} cases (tol 1e-3)"))
    out.append(CheckRecord("end_to_end", "decoded_weights", worst_w <= 1e-4,
                           f"max rel {worst_w:.3g} (tol 1e-4)"))
    out.append(CheckRecord("end_to_end", "eta0_plain_forward", worst_eta0 <= 1e-4,
                           f"max abs {worst_eta0:.3g} (tol 1e-4)"))
    return out


# ---------------------------------------------------------------------------
# 6. one simulated step helps


def eval_segment_loss(logits, tokens, split) -> float:
    """Summed next-token cross-entropy over the evaluation rows."""
    total = 0.0
    t = len(tokens)
    for pos in range(split, t - 1):
        row = logits[pos - split]
        p = softmax_rows(row[None, :])[0]
        total += -float(np.log(max(float(p[int(tokens[pos + 1])]), 1e-30)))
    return total


def check_loss_decrease(seed=0):
    wins = 0
    details = []
    etas = (0.005, 0.01, 0.02, 0.05, 0.1)
    for s in range(10):
        model, tokens, split, cfg = preset_model_and_tokens("toy-8", seed + s)
        spec = cfg.loss_spec()
        _, logits0 = finetune_eval(model, tokens, split, spec, 0.0, 1, "simulated")
        base = eval_segment_loss(logits0, tokens, split)
        best = min(
            eval_segment_loss(
                finetune_eval(model, tokens, split, spec, eta, 1, "simulated")[1],
                tokens, split)
            for eta in etas)
        if best < base:
            wins += 1
        details.append(f"s{s}:{base:.3f}->{best:.3f}")
    ok = wins >= 8
    return [CheckRecord("loss_decrease", "simulated_step_helps", ok,
                        f"{wins}/10 seeds improved ({'; '.join(details)})")]


# ---------------------------------------------------------------------------
# 7. roundtrips and determinism


def check_roundtrip(seed=0, workdir=None):
    import tempfile
    out = []
    cfg = preset_config("toy-16")
    model = random_model(cfg.aux, seed)
    with tempfile.TemporaryDirectory(dir=workdir) as td:
        save_checkpoint(td, model)
        loaded, _ = load_checkpoint(td)
    a, b = model_tensors(model), model_tensors(loaded)
    same = all(np.array_equal(a[k], b[k]) for k in a) and set(a) == set(b)
    out.append(CheckRecord("roundtrip", "checkpoint_bit_exact", same,
                           f"{len(a)} tensors compared"))

    rng = np.random.default_rng(seed)
    ok = True
    for d, s, sp in admissible_layouts():
        lo = tm.PrefixLayout.build(d, s, sp)
        w = rng.standard_normal((d, d)).astype(np.float32)
        b_vec = rng.standard_normal(d).astype(np.float32)
        w2, b2 = tm.decode_prefix(lo, tm.encode_prefix(lo, w, b_vec))
        ok = ok and np.array_equal(w, w2) and np.array_equal(b_vec, b2)
    out.append(CheckRecord("roundtrip", "prefix_bit_exact", ok,
                           "encode/decode over all desk layouts"))
    return out


def check_determinism(seed=0):
    model, tokens, split, cfg = preset_model_and_tokens("toy-8", seed)
    r1 = run_simulation(model, tokens, split, cfg)
    r2 = run_simulation(model, tokens, split, cfg)
    same_logits = r1.eval_logits.tobytes() == r2.eval_logits.tobytes()
    t1, t2 = model_tensors(r1.model), model_tensors(r2.model)
    same_w = all(t1[k].tobytes() == t2[k].tobytes() for k in t1)
    ok = same_logits and same_w
    return [CheckRecord("determinism", "rerun_bitwise_identical", ok,
                        f"logits {'==' if same_logits else '!='}, "
                        f"weights {'==' if same_w else '!='}")]


# ---------------------------------------------------------------------------
# runner


SUITES = {
    "param_counts": check_param_counts,
    "linear_exact": check_linear_exact,
    "approx_rules": check_approx_rules,
    "ln_firstorder": check_ln_firstorder,
    "act_bounds": check_act_bounds,
    "attn_hard": check_attn_hard,
    "linsoftmax": check_linsoftmax,
    "gelu_mult": check_gelu_mult,
    "end_to_end": check_end_to_end,
    "loss_decrease": check_loss_decrease,
    "roundtrip": check_roundtrip,
    "determinism": check_determinism,
}


def run_suites(only=None, seed=0) -> tuple:
    """Returns (records, all_ok). Order is canonical (suite registry
    order) regardless of how checks execute."""
    names = list(SUITES) if not only else list(only)
    for n in names:
        if n not in SUITES:
            raise ConfigError(f"unknown check id {n!r} (have: {', '.join(SUITES)})")
    records = []
    for n in names:
        records.extend(SUITES[n](seed=seed))
    return records, all(r.ok for r in records)

"""Command-line entry point: `tint count|build|simulate|verify|oracle`.

Exit codes: 0 all good, 1 a verification check failed, 2 configuration
error, 3 I/O error. Config files are flat `key = value` text; unknown
keys are rejected.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .aux_reference import AuxConfig, finetune_eval, random_model
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (BudgetError, CheckpointError, ConfigError, ConstructionError,
                     DegenerateInputError, DimensionError, PreconditionError)
from .presets import (PRESET_NAMES, preset_config, preset_is_runnable,
                      preset_model_and_tokens, preset_split, synthetic_tokens)
from .tint_builder import TinTConfig, build_tint, count_params, run_simulation
from .verify import eval_segment_loss, run_suites

_AUX_KEYS = {
    "d_aux": int, "h_aux": int, "l": int, "t_aux": int, "vocab": int,
    "ln_kind": str, "pos_bias": str, "ffn_kind": str, "activation": str,
}
_TINT_KEYS = {
    "s": int, "s_prime": int, "bias_token": bool, "eta": float, "n_steps": int,
    "eps_ln": float, "eps_act": float, "eps_glu": float, "depth_budget": int,
    "loss_mode": str, "loss_format": str, "loss_positions": "int_list",
}
_EXTRA_KEYS = {"split": int, "seed": int}


def _parse_value(key, kind, raw):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int_list":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config_file(path) -> tuple:
    """Flat key=value parser. Returns (TinTConfig, extras)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    aux_kw, tint_kw, extras = {}, {}, {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in _AUX_KEYS:
            aux_kw[key] = _parse_value(key, _AUX_KEYS[key], raw)
        elif key in _TINT_KEYS:
            tint_kw[key] = _parse_value(key, _TINT_KEYS[key], raw)
        elif key in _EXTRA_KEYS:
            extras[key] = _parse_value(key, _EXTRA_KEYS[key], raw)
        else:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    missing = [k for k in ("d_aux", "h_aux", "l", "t_aux", "vocab") if k not in aux_kw]
    if missing:
        raise ConfigError(f"config file lacks required keys: {', '.join(missing)}")
    cfg = TinTConfig(aux=AuxConfig(**aux_kw), **tint_kw).validate()
    return cfg, extras


def _resolve(args) -> tuple:
    """(cfg, extras) from --preset or --config."""
    if getattr(args, "preset", None) and getattr(args, "config", None):
        raise ConfigError("pass either --preset or --config, not both")
    if getattr(args, "preset", None):
        cfg = preset_config(args.preset)
        extras = {}
        if preset_is_runnable(args.preset):
            extras["split"] = preset_split(args.preset)
        return cfg, extras
    if getattr(args, "config", None):
        return parse_config_file(args.config)
    raise ConfigError("need --preset or --config")


def _runnable_setup(args):
    """(model, tokens, split, cfg) for simulate/oracle."""
    cfg, extras = _resolve(args)
    if args.eta is not None:
        cfg.eta = args.eta
    if args.steps is not None:
        cfg.n_steps = args.steps
    cfg.validate()
    split = extras.get("split")
    if split is None:
        raise ConfigError("config must provide a split (train/eval boundary)")
    if getattr(args, "checkpoint", None):
        model, _ = load_checkpoint(args.checkpoint)
        if model.config != cfg.aux:
            raise ConfigError("checkpoint architecture disagrees with the config")
    else:
        model = random_model(cfg.aux, args.seed)
    tokens = synthetic_tokens(cfg.aux.t_aux, cfg.aux.vocab, args.seed)
    return model, tokens, split, cfg


def cmd_count(args) -> int:
    cfg, _ = _resolve(args)
    for line in count_params(cfg).lines():
        print(line)
    return 0


def cmd_build(args) -> int:
    cfg, _ = _resolve(args)
    stack = build_tint(cfg)
    print(f"layout d_sim={stack.layout.d_sim} h_sim={stack.layout.h_sim} "
          f"d_head={stack.layout.d_head} prefix_tokens={stack.layout.k}")
    n_steps = len(stack.schedule)
    print(f"modules {len(stack.modules)} (execution order, {n_steps} update "
          f"step{'s' if n_steps != 1 else ''} + eval pass) "
          f"param_total {stack.param_total}")
    report = count_params(cfg)
    for role, subtotal in (("forward", report.fwd), ("backward", report.bwd),
                           ("descent", report.desc)):
        print(f"{role} params {subtotal}")
    if args.out:
        model = random_model(cfg.aux, args.seed)
        save_checkpoint(args.out, model, extra={"seed": args.seed})
        print(f"checkpoint written to {args.out}")
    return 0


def _digest(arr) -> str:
    import hashlib
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()[:16]


def cmd_simulate(args) -> int:
    model, tokens, split, cfg = _runnable_setup(args)
    if args.no_tint:
        _, logits = finetune_eval(model, tokens, split, cfg.loss_spec(), cfg.eta,
                                  cfg.n_steps, "simulated", eps_ln=cfg.eps_ln,
                                  eps_act=cfg.eps_act, eps_glu=cfg.eps_glu)
        source = "reference(simulated)"
    else:
        res = run_simulation(model, tokens, split, cfg)
        logits = res.eval_logits
        source = "tint"
    loss = eval_segment_loss(logits, tokens, split)
    print(f"source {source} eta {cfg.eta} steps {cfg.n_steps}")
    print(f"eval_positions {logits.shape[0]} eval_loss {loss:.6f} "
          f"logits_sha256 {_digest(logits)}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if not args.no_tint:
            save_checkpoint(out, res.model, extra={"seed": args.seed, "eta": cfg.eta})
            print(f"updated checkpoint written to {out}")
    return 0


def cmd_oracle(args) -> int:
    model, tokens, split, cfg = _runnable_setup(args)
    _, logits = finetune_eval(model, tokens, split, cfg.loss_spec(), cfg.eta,
                              cfg.n_steps, args.regime, eps_ln=cfg.eps_ln,
                              eps_act=cfg.eps_act, eps_glu=cfg.eps_glu)
    loss = eval_segment_loss(logits, tokens, split)
    print(f"regime {args.regime} eta {cfg.eta} steps {cfg.n_steps}")
    print(f"eval_positions {logits.shape[0]} eval_loss {loss:.6f} "
          f"logits_sha256 {_digest(logits)}")
    return 0


def cmd_verify(args) -> int:
    only = args.only.split(",") if args.only else None
    records, ok = run_suites(only=only, seed=args.seed)
    for rec in records:
        print(rec.line())
    print(f"{'OK' if ok else 'FAILED'} {sum(r.ok for r in records)}/{len(records)} "
          f"checks passed")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tint",
        description="Build and verify transformer-in-transformer simulators.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, runnable=False):
        sp.add_argument("--preset", choices=PRESET_NAMES)
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--seed", type=int, default=0)
        if runnable:
            sp.add_argument("--eta", type=float, default=None)
            sp.add_argument("--steps", type=int, default=None)
            sp.add_argument("--checkpoint", help="load model weights from here")

    sp = sub.add_parser("count", help="price the simulator for an architecture")
    common(sp)
    sp.set_defaults(func=cmd_count)

    sp = sub.add_parser("build", help="lay out the simulator and check its tally")
    common(sp)
    sp.add_argument("--out", help="write a random-weight checkpoint here")
    sp.set_defaults(func=cmd_build)

    sp = sub.add_parser("simulate", help="run internal fine-tuning in one pass")
    common(sp, runnable=True)
    sp.add_argument("--no-tint", action="store_true",
                    help="run the reference simulated-gradient path instead")
    sp.add_argument("--out", help="write the updated checkpoint here")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("oracle", help="run reference fine-tuning (exact or simulated)")
    common(sp, runnable=True)
    sp.add_argument("--regime", choices=("exact", "simulated"), default="exact")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("verify", help="run the check suites")
    sp.add_argument("--only", help="comma-separated check ids")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ConstructionError, DimensionError, BudgetError,
            PreconditionError, DegenerateInputError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (CheckpointError, FileNotFoundError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

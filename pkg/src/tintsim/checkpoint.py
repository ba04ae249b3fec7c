"""Checkpoint format: manifest.json + weights.bin.

The manifest carries the architecture fields and a tensor directory
(name, shape, element offset); weights.bin is a 4-byte little-endian
magic word followed by raw little-endian float32 data. The magic is
read back as a little-endian u32, so a byte-swapped file (or a file
that is not a checkpoint at all) is rejected up front instead of
yielding garbage weights. Save and load are exact inverses on the
stored bits.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .aux_reference import (AttnParams, AuxBlock, AuxConfig, AuxModel, FfnParams,
                            GluParams, NormParams)
from .errors import CheckpointError

MAGIC = 0x544E4954  # "TiNT" as a little-endian word
FORMAT_VERSION = 1


def model_tensors(model: AuxModel) -> "OrderedDict[str, np.ndarray]":
    out = OrderedDict()
    out["embed"] = model.embed
    for i, blk in enumerate(model.blocks):
        p = f"block{i}"
        out[f"{p}.ln1.gamma"] = blk.ln1.gamma
        out[f"{p}.ln1.beta"] = blk.ln1.beta
        for n in ("w_q", "w_k", "w_v", "b_q", "b_k", "b_v"):
            out[f"{p}.attn.{n}"] = getattr(blk.attn, n)
        if blk.attn.slopes is not None:
            out[f"{p}.attn.slopes"] = blk.attn.slopes
        out[f"{p}.w_o"] = blk.w_o
        out[f"{p}.b_o"] = blk.b_o
        out[f"{p}.ln2.gamma"] = blk.ln2.gamma
        out[f"{p}.ln2.beta"] = blk.ln2.beta
        if isinstance(blk.ffn, FfnParams):
            for n in ("w", "b_w", "a", "b_a"):
                out[f"{p}.ffn.{n}"] = getattr(blk.ffn, n)
        else:
            for n in ("w", "v", "w_o", "b_w", "b_v", "b_o"):
                out[f"{p}.glu.{n}"] = getattr(blk.ffn, n)
    return out


def save_checkpoint(directory, model: AuxModel, extra: dict = None):
    """Writes manifest.json and weights.bin under `directory`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = model_tensors(model)
    entries = []
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.astype("<f4", copy=False).tobytes())
        offset += arr.size
    cfg = model.config
    manifest = {
        "format": FORMAT_VERSION,
        "config": {
            "d_aux": cfg.d_aux, "h_aux": cfg.h_aux, "l": cfg.l,
            "t_aux": cfg.t_aux, "vocab": cfg.vocab, "ln_kind": cfg.ln_kind,
            "pos_bias": cfg.pos_bias, "ffn_kind": cfg.ffn_kind,
            "activation": cfg.activation,
        },
        "tensors": entries,
    }
    if extra:
        manifest["extra"] = extra
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1))
    with open(directory / "weights.bin", "wb") as f:
        f.write(struct.pack("<I", MAGIC))
        for blob in blobs:
            f.write(blob)


def _expected_names(cfg: AuxConfig) -> list:
    # mirrors model_tensors' naming without building a model
    names = ["embed"]
    for i in range(cfg.l):
        p = f"block{i}"
        names += [f"{p}.ln1.gamma", f"{p}.ln1.beta"]
        names += [f"{p}.attn.{n}" for n in ("w_q", "w_k", "w_v", "b_q", "b_k", "b_v")]
        if cfg.pos_bias == "alibi":
            names.append(f"{p}.attn.slopes")
        names += [f"{p}.w_o", f"{p}.b_o", f"{p}.ln2.gamma", f"{p}.ln2.beta"]
        if cfg.ffn_kind == "mlp":
            names += [f"{p}.ffn.{n}" for n in ("w", "b_w", "a", "b_a")]
        else:
            names += [f"{p}.glu.{n}" for n in ("w", "v", "w_o", "b_w", "b_v", "b_o")]
    return names


def load_checkpoint(directory) -> tuple:
    """Returns (model, manifest_dict)."""
    directory = Path(directory)
    man_path = directory / "manifest.json"
    bin_path = directory / "weights.bin"
    if not man_path.exists() or not bin_path.exists():
        raise CheckpointError(f"no checkpoint at {directory} "
                              f"(need manifest.json and weights.bin)")
    try:
        manifest = json.loads(man_path.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"manifest.json is not valid JSON: {e}") from e
    if manifest.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
    raw = bin_path.read_bytes()
    if len(raw) < 4 or struct.unpack("<I", raw[:4])[0] != MAGIC:
        raise CheckpointError("weights.bin magic mismatch: byte-swapped file or "
                              "not a checkpoint")
    payload = raw[4:]
    if len(payload) % 4:
        raise CheckpointError("weights.bin payload is not a whole number of floats")
    flat = np.frombuffer(payload, dtype="<f4")

    cfg = AuxConfig(**manifest["config"]).validate()
    table = {}
    for ent in manifest["tensors"]:
        shape = tuple(ent["shape"])
        n = int(np.prod(shape)) if shape else 1
        off = ent["offset"]
        if off + n > flat.size:
            raise CheckpointError(f"tensor {ent['name']} overruns weights.bin")
        table[ent["name"]] = np.asarray(flat[off:off + n].reshape(shape),
                                        dtype=np.float32)
    expected = _expected_names(cfg)
    missing = [n for n in expected if n not in table]
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors: {', '.join(missing)}")
    surplus = [n for n in table if n not in expected]
    if surplus:
        raise CheckpointError(f"checkpoint has unexpected tensors: {', '.join(surplus)}")

    blocks = []
    for i in range(cfg.l):
        p = f"block{i}"
        attn = AttnParams(
            w_q=table[f"{p}.attn.w_q"], w_k=table[f"{p}.attn.w_k"],
            w_v=table[f"{p}.attn.w_v"], b_q=table[f"{p}.attn.b_q"],
            b_k=table[f"{p}.attn.b_k"], b_v=table[f"{p}.attn.b_v"],
            slopes=table.get(f"{p}.attn.slopes"),
        )
        if cfg.ffn_kind == "mlp":
            ffn = FfnParams(w=table[f"{p}.ffn.w"], b_w=table[f"{p}.ffn.b_w"],
                            a=table[f"{p}.ffn.a"], b_a=table[f"{p}.ffn.b_a"])
        else:
            ffn = GluParams(w=table[f"{p}.glu.w"], v=table[f"{p}.glu.v"],
                            w_o=table[f"{p}.glu.w_o"], b_w=table[f"{p}.glu.b_w"],
                            b_v=table[f"{p}.glu.b_v"], b_o=table[f"{p}.glu.b_o"])
        blocks.append(AuxBlock(
            ln1=NormParams(table[f"{p}.ln1.gamma"], table[f"{p}.ln1.beta"]),
            attn=attn, w_o=table[f"{p}.w_o"], b_o=table[f"{p}.b_o"],
            ln2=NormParams(table[f"{p}.ln2.gamma"], table[f"{p}.ln2.beta"]),
            ffn=ffn,
        ))
    model = AuxModel(config=cfg, embed=table["embed"], blocks=blocks)
    return model, manifest

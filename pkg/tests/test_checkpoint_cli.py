"""Checkpoint format roundtrips/rejections and the CLI surface.

CLI tests run real subprocesses so argument parsing, exit codes and
stdout formats are covered as a user sees them. One canary test injects
a fault into a construction and demands the verifier notice.
"""

import json
import re
import struct
import subprocess
import sys

import numpy as np
import pytest

from tintsim.checkpoint import (FORMAT_VERSION, MAGIC, load_checkpoint,
                                model_tensors, save_checkpoint)
from tintsim.errors import CheckpointError

from conftest import make_model

F32 = np.float32


# ---------------------------------------------------------------------------
# checkpoint roundtrip


def _models_equal(a, b):
    ta, tb = model_tensors(a), model_tensors(b)
    assert list(ta) == list(tb)
    for name in ta:
        assert np.array_equal(ta[name], tb[name]), name
    return True


def test_checkpoint_roundtrip_mlp(tmp_path):
    model = make_model(seed=5)
    save_checkpoint(tmp_path, model, extra={"note": "x"})
    loaded, manifest = load_checkpoint(tmp_path)
    assert _models_equal(model, loaded)
    assert manifest["extra"] == {"note": "x"}
    assert loaded.config == model.config


def test_checkpoint_roundtrip_glu_alibi(tmp_path):
    model = make_model(seed=6, ffn_kind="glu", pos_bias="alibi")
    save_checkpoint(tmp_path, model)
    loaded, _ = load_checkpoint(tmp_path)
    assert _models_equal(model, loaded)
    assert loaded.blocks[0].attn.slopes is not None


def test_checkpoint_missing_files(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nowhere")


def test_checkpoint_magic_rejected(tmp_path):
    save_checkpoint(tmp_path, make_model(seed=7))
    raw = (tmp_path / "weights.bin").read_bytes()
    # byte-swap the magic word: simulates an endianness mixup
    swapped = struct.pack(">I", MAGIC) + raw[4:]
    (tmp_path / "weights.bin").write_bytes(swapped)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path)


def test_checkpoint_bad_version(tmp_path):
    save_checkpoint(tmp_path, make_model(seed=8))
    man = json.loads((tmp_path / "manifest.json").read_text())
    man["format"] = FORMAT_VERSION + 1
    (tmp_path / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(CheckpointError, match="format"):
        load_checkpoint(tmp_path)


def test_checkpoint_bad_json(tmp_path):
    save_checkpoint(tmp_path, make_model(seed=9))
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(CheckpointError, match="JSON"):
        load_checkpoint(tmp_path)


def test_checkpoint_missing_tensor_is_named(tmp_path):
    save_checkpoint(tmp_path, make_model(seed=10))
    man = json.loads((tmp_path / "manifest.json").read_text())
    man["tensors"] = [e for e in man["tensors"] if e["name"] != "block0.w_o"]
    (tmp_path / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(CheckpointError, match="block0.w_o"):
        load_checkpoint(tmp_path)


def test_checkpoint_surplus_tensor_rejected(tmp_path):
    save_checkpoint(tmp_path, make_model(seed=11))
    man = json.loads((tmp_path / "manifest.json").read_text())
    man["tensors"].append({"name": "mystery", "shape": [1], "offset": 0})
    (tmp_path / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(CheckpointError, match="mystery"):
        load_checkpoint(tmp_path)


def test_checkpoint_overrun_rejected(tmp_path):
    save_checkpoint(tmp_path, make_model(seed=12))
    man = json.loads((tmp_path / "manifest.json").read_text())
    man["tensors"][0]["offset"] = 10 ** 9
    (tmp_path / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(CheckpointError, match="overrun"):
        load_checkpoint(tmp_path)


def test_checkpoint_truncated_payload(tmp_path):
    save_checkpoint(tmp_path, make_model(seed=13))
    raw = (tmp_path / "weights.bin").read_bytes()
    (tmp_path / "weights.bin").write_bytes(raw[:-2])  # not whole floats
    with pytest.raises(CheckpointError, match="whole number"):
        load_checkpoint(tmp_path)


# ---------------------------------------------------------------------------
# CLI


def run_cli(*args, **kw):
    return subprocess.run([sys.executable, "-m", "tintsim.cli_harness", *args],
                          capture_output=True, text=True, timeout=300, **kw)


def test_cli_count_ok():
    res = run_cli("count", "--preset", "opt125m-shapes")
    assert res.returncode == 0
    assert "1275936768" in res.stdout


def test_cli_build_ok():
    res = run_cli("build", "--preset", "toy-8")
    assert res.returncode == 0
    assert "modules 55" in res.stdout
    assert "param_total 77904" in res.stdout


def test_cli_build_writes_checkpoint(tmp_path):
    out = tmp_path / "ckpt"
    res = run_cli("build", "--preset", "toy-8", "--out", str(out))
    assert res.returncode == 0
    model, manifest = load_checkpoint(out)
    assert manifest["extra"]["seed"] == 0
    assert model.config.d_aux == 8


def test_cli_simulate_deterministic():
    a = run_cli("simulate", "--preset", "toy-8", "--seed", "3")
    b = run_cli("simulate", "--preset", "toy-8", "--seed", "3")
    assert a.returncode == 0 and b.returncode == 0
    assert a.stdout == b.stdout
    assert "logits_sha256" in a.stdout


def test_cli_simulate_eta_zero_matches_no_tint():
    a = run_cli("simulate", "--preset", "toy-8", "--eta", "0")
    b = run_cli("simulate", "--preset", "toy-8", "--eta", "0", "--no-tint")
    assert a.returncode == 0 and b.returncode == 0
    get = lambda out: float(re.search(r"eval_loss (\S+)", out).group(1))
    assert abs(get(a.stdout) - get(b.stdout)) <= 1e-4


def test_cli_simulate_roundtrips_through_checkpoint(tmp_path):
    ck = tmp_path / "in"
    res = run_cli("build", "--preset", "toy-8", "--out", str(ck), "--seed", "4")
    assert res.returncode == 0
    direct = run_cli("simulate", "--preset", "toy-8", "--seed", "4")
    via_ck = run_cli("simulate", "--preset", "toy-8", "--seed", "4",
                     "--checkpoint", str(ck))
    assert via_ck.returncode == 0
    assert direct.stdout == via_ck.stdout


def test_cli_oracle_regimes_differ():
    ex = run_cli("oracle", "--preset", "toy-8", "--regime", "exact")
    sim = run_cli("oracle", "--preset", "toy-8", "--regime", "simulated")
    assert ex.returncode == 0 and sim.returncode == 0
    sha = lambda out: re.search(r"logits_sha256 (\S+)", out).group(1)
    # different gradient regimes update the model differently
    assert sha(ex.stdout) != sha(sim.stdout)


def test_cli_config_file(tmp_path):
    cfgf = tmp_path / "run.cfg"
    cfgf.write_text(
        "d_aux = 8\nh_aux = 4\nl = 2\nt_aux = 8\nvocab = 12\n"
        "s = 4\ns_prime = 1\neta = 0.02\nsplit = 5\n# comment line\n")
    res = run_cli("simulate", "--config", str(cfgf))
    assert res.returncode == 0
    assert "eval_loss" in res.stdout


def test_cli_config_unknown_key_exits_2(tmp_path):
    cfgf = tmp_path / "bad.cfg"
    cfgf.write_text("d_aux = 8\nh_aux = 4\nl = 2\nt_aux = 8\nvocab = 12\n"
                    "warp_factor = 9\n")
    res = run_cli("count", "--config", str(cfgf))
    assert res.returncode == 2
    assert "warp_factor" in res.stderr


def test_cli_config_bad_dims_exit_2(tmp_path):
    cfgf = tmp_path / "bad.cfg"
    # s_prime=3 does not divide d_aux=8
    cfgf.write_text("d_aux = 8\nh_aux = 4\nl = 2\nt_aux = 8\nvocab = 12\n"
                    "s = 4\ns_prime = 3\n")
    res = run_cli("count", "--config", str(cfgf))
    assert res.returncode == 2


def test_cli_missing_config_exits_3():
    res = run_cli("count", "--config", "/nonexistent/path.cfg")
    assert res.returncode == 3


def test_cli_missing_checkpoint_exits_3(tmp_path):
    res = run_cli("simulate", "--preset", "toy-8",
                  "--checkpoint", str(tmp_path / "void"))
    assert res.returncode == 3


def test_cli_corrupt_checkpoint_exits_3(tmp_path):
    model = make_model(seed=14)
    save_checkpoint(tmp_path, model)
    raw = (tmp_path / "weights.bin").read_bytes()
    (tmp_path / "weights.bin").write_bytes(b"\x00\x00\x00\x00" + raw[4:])
    res = run_cli("simulate", "--preset", "toy-8", "--checkpoint", str(tmp_path))
    assert res.returncode == 3


def test_cli_verify_only_filter():
    res = run_cli("verify", "--only", "param_counts,gelu_mult")
    assert res.returncode == 0
    assert "param_counts" in res.stdout and "gelu_mult" in res.stdout
    assert "end_to_end" not in res.stdout
    assert "FAIL" not in res.stdout


def test_cli_verify_unknown_suite_exits_2():
    res = run_cli("verify", "--only", "nosuchsuite")
    assert res.returncode == 2
    assert "nosuchsuite" in res.stderr


# ---------------------------------------------------------------------------
# verifier canary: a broken construction must turn checks red


def test_verify_catches_injected_fault(monkeypatch):
    import tintsim.tint_modules as tm
    from tintsim.verify import run_suites

    real = tm.tint_linear_forward

    def corrupted(lo, w, b, xs):
        out = real(lo, w, b, xs)
        return out + np.float32(1e-2)  # systematic bias no tolerance absorbs

    monkeypatch.setattr(tm, "tint_linear_forward", corrupted)
    records, ok = run_suites(only=["linear_exact"])
    assert not ok
    assert any(not r.ok for r in records)


def test_verify_all_green_without_fault():
    from tintsim.verify import run_suites
    records, ok = run_suites(only=["linear_exact"])
    assert ok and all(r.ok for r in records)

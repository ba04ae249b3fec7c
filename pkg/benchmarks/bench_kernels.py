#!/usr/bin/env python3
"""Times the compiled kernels against the pure-python fallback.

Covers the three hot primitives (matmul, row softmax, gelu) at the
shapes the simulator actually hits, plus one end-to-end toy simulation
per backend. Run from anywhere:

    python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from tintsim._backend import get_backend


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_primitives(repeats):
    rng = np.random.default_rng(0)
    cases = {
        "matmul 64x64 @ 64x64": (rng.standard_normal((64, 64)).astype(np.float32),
                                 rng.standard_normal((64, 64)).astype(np.float32)),
        "matmul 208x32 @ 32x32": (rng.standard_normal((208, 32)).astype(np.float32),
                                  rng.standard_normal((32, 32)).astype(np.float32)),
        "matmul 256x128 @ 128x128": (rng.standard_normal((256, 128)).astype(np.float32),
                                     rng.standard_normal((128, 128)).astype(np.float32)),
    }
    soft = rng.standard_normal((208, 208)).astype(np.float32)
    act = rng.standard_normal(8192).astype(np.float32)

    rows = []
    for name, (a, b) in cases.items():
        per = {}
        for backend in ("compiled", "python"):
            k = get_backend(backend)
            if k is None:
                per[backend] = None
                continue
            per[backend] = _time(lambda: k.matmul_f32(a, b), repeats)
        rows.append((name, per))
    per = {}
    for backend in ("compiled", "python"):
        k = get_backend(backend)
        per[backend] = None if k is None else _time(
            lambda: k.softmax_rows_f32(soft), repeats)
    rows.append(("softmax_rows 208x208", per))
    per = {}
    for backend in ("compiled", "python"):
        k = get_backend(backend)
        per[backend] = None if k is None else _time(
            lambda: k.gelu_f32(act), repeats)
    rows.append(("gelu 8192", per))
    return rows


def bench_end_to_end():
    """One toy-8 simulation per backend, each in a fresh interpreter so
    the import-time backend choice is honest."""
    snippet = (
        "import time; t0=time.perf_counter();"
        "from tintsim.presets import preset_model_and_tokens;"
        "from tintsim.tint_builder import run_simulation;"
        "m,tok,split,cfg = preset_model_and_tokens('toy-8', seed=0);"
        "run_simulation(m,tok,split,cfg);"
        "print(time.perf_counter()-t0)"
    )
    out = {}
    for backend in ("compiled", "python"):
        env = dict(os.environ, TINT_KERNEL_BACKEND=backend)
        try:
            r = subprocess.run([sys.executable, "-c", snippet], env=env,
                               capture_output=True, text=True, timeout=300)
            out[backend] = float(r.stdout.strip()) if r.returncode == 0 else None
        except (subprocess.TimeoutExpired, ValueError):
            out[backend] = None
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    print(f"{'kernel':<28} {'compiled':>12} {'python':>12} {'speedup':>9}")
    for name, per in bench_primitives(args.repeats):
        c, p = per.get("compiled"), per.get("python")
        cs = f"{c * 1e3:.3f}ms" if c is not None else "n/a"
        ps = f"{p * 1e3:.3f}ms" if p is not None else "n/a"
        sp = f"{p / c:.1f}x" if (c and p) else "-"
        print(f"{name:<28} {cs:>12} {ps:>12} {sp:>9}")

    print()
    e2e = bench_end_to_end()
    c, p = e2e.get("compiled"), e2e.get("python")
    cs = f"{c:.2f}s" if c is not None else "n/a"
    ps = f"{p:.2f}s" if p is not None else "n/a"
    sp = f"{p / c:.1f}x" if (c and p) else "-"
    print(f"{'toy-8 full simulation':<28} {cs:>12} {ps:>12} {sp:>9}")


if __name__ == "__main__":
    main()

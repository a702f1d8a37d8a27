#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the numpy reference backend.

Micro-benchmarks hit the individual kernels; the end-to-end rows time a
denoiser training step and a guided sampling step under each backend (via
subprocess, since backend selection happens at import).

Run: python3 benchmarks/bench_kernels.py [--quick]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from protodiff.backend import reference

try:
    from protodiff.backend import _fastcore
except ImportError:
    _fastcore = None


def time_call(fn, repeat=5, number=20):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def micro_cases(quick):
    gen = np.random.default_rng(0)
    sizes = [(8, 8, 8), (32, 32, 32), (128, 64, 128)]
    if not quick:
        sizes.append((256, 256, 256))
    cases = []
    for m, k, n in sizes:
        a = gen.standard_normal((m, k))
        b = gen.standard_normal((k, n))
        cases.append((f"matmul {m}x{k}x{n}",
                      lambda mod, a=a, b=b: mod.matmul(a, b)))
    x = gen.standard_normal((256, 64))
    cases.append(("softmax_rows 256x64",
                  lambda mod, x=x: mod.softmax_rows(x)))
    cases.append(("layernorm_rows 256x64",
                  lambda mod, x=x: mod.layernorm_rows(x, 1e-5)))
    xe = gen.standard_normal(16384)
    ye = gen.standard_normal(16384)
    cases.append(("ewise_mul 16k", lambda mod, a=xe, b=ye: mod.ewise_mul(a, b)))
    cases.append(("sigmoid 16k", lambda mod, a=xe: mod.sigmoid(a)))
    pts = gen.standard_normal((5000, 16))
    cents = gen.standard_normal((32, 16))
    cases.append(("sqdist_assign 5000x16 k=32",
                  lambda mod, p=pts, c=cents: mod.sqdist_assign(p, c)))
    return cases


END_TO_END_SNIPPET = r"""
import time
import numpy as np
from protodiff.backend import backend_name
from protodiff.diffusion import (DiffusionTrainConfig, SampleRequest,
                                 build_schedule, sample, train_denoiser,
                                 train_guidance_classifier)

schedule = build_schedule(32, 1e-3, 0.3)
gen = np.random.default_rng(0)
data = np.vstack([gen.standard_normal((200, 2)) * 0.4 + (2, 0),
                  gen.standard_normal((200, 2)) * 0.4 - (2, 0)])
labels = np.repeat([0, 1], 200)
cfg = DiffusionTrainConfig(steps=200, batch_size=64, lr=2e-3,
                           hidden=(48, 48), temb_dim=8, seed=1)
t0 = time.monotonic()
den, _ = train_denoiser(data, schedule, cfg)
train_s = time.monotonic() - t0
clf, _, _ = train_guidance_classifier(
    data, labels, schedule,
    DiffusionTrainConfig(steps=100, batch_size=64, lr=2e-3, hidden=(32,),
                         temb_dim=8, seed=2))
t0 = time.monotonic()
sample(SampleRequest(prototype_id=0, count=200, guidance_w=2.0, seed=3),
       den, clf, schedule)
sample_s = time.monotonic() - t0
print(f"{backend_name()},{train_s:.4f},{sample_s:.4f}")
"""


def run_end_to_end(backend):
    env = dict(os.environ, PROTODIFF_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", END_TO_END_SNIPPET],
                         capture_output=True, text=True, env=env, check=True)
    name, train_s, sample_s = out.stdout.strip().split(",")
    return float(train_s), float(sample_s)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true",
                        help="smaller matmul sizes, skip end-to-end rows")
    args = parser.parse_args()

    backends = [("python", reference)]
    if _fastcore is not None:
        backends.append(("compiled", _fastcore))
    else:
        print("compiled core not built; benchmarking reference only\n")

    header = f"{'kernel':<28}" + "".join(f"{name:>12}" for name, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, call in micro_cases(args.quick):
        times = [time_call(lambda mod=mod: call(mod)) for _, mod in backends]
        row = f"{label:<28}" + "".join(f"{t * 1e6:>10.1f}us" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>9.2f}x"
        print(row)

    if not args.quick:
        print("\nend-to-end (subprocess per backend)")
        rows = []
        for name, _ in backends:
            train_s, sample_s = run_end_to_end(name)
            rows.append((name, train_s, sample_s))
        print(f"{'backend':<12}{'train 200 steps':>18}{'sample 200x32':>16}")
        for name, train_s, sample_s in rows:
            print(f"{name:<12}{train_s:>16.2f}s{sample_s:>14.2f}s")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Benchmark the compiled kernels against the NumPy fallback.

Times each hot kernel at model-realistic shapes (encoder convolutions at
96x320, decoder upsampling, altitude-difference and densify grids), then
a full supervised training step per backend in a subprocess with
UDEER_BACKEND forced.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from udeer._kernels import pure

try:
    from udeer._kernels import _core as core
except ImportError:
    core = None


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases():
    rng = np.random.default_rng(0)
    x1 = np.ascontiguousarray(rng.normal(size=(1, 3, 96, 320)))
    w1 = np.ascontiguousarray(rng.normal(size=(16, 3, 3, 3)))
    b1 = np.ascontiguousarray(rng.normal(size=16))
    x2 = np.ascontiguousarray(rng.normal(size=(1, 32, 24, 80)))
    w2 = np.ascontiguousarray(rng.normal(size=(64, 32, 3, 3)))
    b2 = np.ascontiguousarray(rng.normal(size=64))
    d2 = np.ascontiguousarray(rng.normal(size=(1, 64, 12, 40)))
    up_in = np.ascontiguousarray(rng.normal(size=(1, 32, 24, 80)))
    up_g = np.ascontiguousarray(rng.normal(size=(1, 32, 48, 160)))
    alt = np.ascontiguousarray(rng.normal(size=(96, 320)))
    hit = np.ascontiguousarray((rng.random((96, 320)) < 0.35).astype(np.uint8))
    vals = np.ascontiguousarray(np.where(hit, rng.uniform(0, 1, (96, 320)), 0.0))

    return [
        ("conv2d fwd 3->16 s2 @96x320", lambda m: m.conv2d_forward(x1, w1, b1, 2, 1)),
        ("conv2d fwd 32->64 s2 @24x80", lambda m: m.conv2d_forward(x2, w2, b2, 2, 1)),
        ("conv2d bwd 32->64 s2 @24x80", lambda m: m.conv2d_backward(x2, w2, 2, 1, d2)),
        ("upsample x2 fwd @24x80x32", lambda m: m.upsample2d_forward(up_in, 2)),
        ("upsample x2 bwd @24x80x32", lambda m: m.upsample2d_backward(24, 80, 2, up_g)),
        ("altitude diff r=2 @96x320", lambda m: m.altitude_difference_grid(alt, hit, 2)),
        ("densify ring<=8 @96x320", lambda m: m.densify_fill(vals, hit, 8)),
    ]


def bench_kernels(repeats):
    print(f"{'kernel':<34} {'numpy':>10} {'cython':>10} {'speedup':>8}")
    for name, call in kernel_cases():
        t_pure = best_of(lambda: call(pure), repeats)
        if core is not None:
            t_core = best_of(lambda: call(core), repeats)
            print(f"{name:<34} {t_pure * 1e3:>8.2f}ms {t_core * 1e3:>8.2f}ms {t_pure / t_core:>7.2f}x")
        else:
            print(f"{name:<34} {t_pure * 1e3:>8.2f}ms {'n/a':>10} {'':>8}")


_STEP_SNIPPET = """
import time
import udeer._kernels as K
from udeer.kitti_io import synth_scene
from udeer.model import TrainConfig, prepare_frame, init_model_params, train_steps

frame = synth_scene(0)
prep = prepare_frame(frame)
params = init_model_params(0)
cfg = TrainConfig(steps=0, lr=0.05, momentum=0.9, seed=0)
train_steps(params, [prep], 2, cfg)  # warm up
t0 = time.perf_counter()
train_steps(params, [prep], {steps}, cfg)
dt = (time.perf_counter() - t0) / {steps}
print(f"{{K.BACKEND}}: {{dt * 1e3:.1f}} ms/step")
"""


def bench_train_step(steps):
    print(f"\nfull training step at 96x320 ({steps} steps, subprocess per backend):")
    backends = ["python"] + (["cython"] if core is not None else [])
    for backend in backends:
        env = dict(os.environ, UDEER_BACKEND=backend)
        out = subprocess.run(
            [sys.executable, "-c", _STEP_SNIPPET.format(steps=steps)],
            env=env,
            capture_output=True,
            text=True,
            check=True,
        )
        print("  " + out.stdout.strip())


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--steps", type=int, default=10, help="training steps per backend")
    args = parser.parse_args()
    if core is None:
        print("compiled extension not available; showing NumPy fallback timings only\n")
    bench_kernels(args.repeats)
    bench_train_step(args.steps)


if __name__ == "__main__":
    main()

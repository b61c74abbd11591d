"""Time the hot kernels and one training step under both backends.

Each backend runs in its own interpreter because the backend is fixed at
import time by TAGNOISE_DISABLE_NUMBA.

    python benchmarks/bench_kernels.py [--repeat 20]
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from tagnoise import backend, kernels
from tagnoise.nncore import bce_loss
from tagnoise.tagger import DESK_CONFIG, build

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
x1 = rng.standard_normal((16, 1, 90, 96))
x8 = rng.standard_normal((16, 8, 45, 48))
w8 = rng.standard_normal((16, 8, 3, 3))
b8 = np.zeros(16)
out, cols = kernels.conv2d_im2col(x8, w8, b8, 1, 1, keep_cols=True)
g = rng.standard_normal(out.shape)
bn = x8.reshape(16, 8, -1)
gamma, beta = np.ones(8), np.zeros(8)
model = build(DESK_CONFIG, 0).train()
y = (rng.random((16, 12)) < 0.2).astype(float)

def step():
    model.params.zero_grad()
    bce_loss(model.forward(x1, rng), y).backward()

cases = {
    "conv im2col fwd": lambda: kernels.conv2d_im2col(x8, w8, b8, 1, 1),
    "conv im2col bwd": lambda: kernels.conv2d_im2col_backward(x8, w8, g, 1, 1, True, cols),
    "batchnorm fwd": lambda: kernels.bn_forward(bn, gamma, beta),
    "avgpool fwd": lambda: kernels.avgpool_forward(x8, 2),
    "relu fwd": lambda: kernels.relu_forward(x8),
    "train step (desk, batch 16)": step,
}
res = {}
for name, fn in cases.items():
    fn()  # warm-up, includes JIT compilation
    t = time.perf_counter()
    for _ in range(repeat):
        fn()
    res[name] = (time.perf_counter() - t) / repeat * 1e3
print(json.dumps({"backend": backend(), "ms": res}))
"""


def run(disable, repeat):
    env = dict(os.environ, TAGNOISE_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    fast, slow = run(False, args.repeat), run(True, args.repeat)
    width = max(map(len, fast["ms"]))
    print(f"{'kernel':<{width}}  {fast['backend']:>9}  {slow['backend']:>9}  speedup")
    for name, t_fast in fast["ms"].items():
        t_slow = slow["ms"][name]
        print(f"{name:<{width}}  {t_fast:7.2f}ms  {t_slow:7.2f}ms  {t_slow / t_fast:6.1f}x")


if __name__ == "__main__":
    main()

"""Time the compiled kernels against the numpy fallback, plus one training step.

    python benchmarks/bench_kernels.py [--repeat 50]

Shapes follow the default run: batches of 4 episodes, 256 audio and 64 video
frames, width 32, 4 heads.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from gatefusion import _kernels_py, kernels


def cases(rng):
    x_a = rng.standard_normal((4, 256, 32))
    x = rng.standard_normal((4 * 64, 32))
    gamma, beta = np.ones(32), np.zeros(32)
    y, xhat, inv = kernels.layer_norm_forward(x, gamma, beta, 1e-5, impl=_kernels_py)
    q, k, v = (rng.standard_normal((16, 64, 8)) for _ in range(3))
    _, w = kernels.attention_forward(q, k, v, impl=_kernels_py)
    labels = (rng.random(4096) < 0.4).astype(np.int8)
    return {
        "align down 256->64": lambda impl: kernels.align_forward(x_a, 64, impl=impl),
        "align up 64->256": lambda impl: kernels.align_forward(x_a[:, :64], 256, impl=impl),
        "layer_norm fwd": lambda impl: kernels.layer_norm_forward(x, gamma, beta, 1e-5, impl=impl),
        "layer_norm bwd": lambda impl: kernels.layer_norm_backward(y, xhat, inv, gamma, impl=impl),
        "gelu fwd": lambda impl: kernels.gelu_forward(x, impl=impl),
        "gelu bwd": lambda impl: kernels.gelu_backward(x, y, impl=impl),
        "attention fwd": lambda impl: kernels.attention_forward(q, k, v, impl=impl),
        "attention bwd": lambda impl: kernels.attention_backward(q, q, k, v, w, impl=impl),
        "precision_at_hits": lambda impl: kernels.precision_at_hits(labels, impl=impl),
    }


def train_step_time(pure: bool, steps: int = 20) -> float:
    code = (
        "import time\n"
        "from gatefusion.config import RunConfig\n"
        "from gatefusion.train import train\n"
        f"cfg = RunConfig().with_overrides(['train.steps={steps}', 'train.eval_interval=100000'])\n"
        "t = time.perf_counter(); train(cfg, None); print(time.perf_counter() - t)\n"
    )
    env = dict(os.environ, GATEFUSION_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.split()[-1]) / steps


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--skip-train", action="store_true")
    args = ap.parse_args()
    if kernels.BACKEND != "cython":
        sys.exit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    compiled = kernels._impl
    print(f"{'kernel':<22} {'numpy us':>10} {'cython us':>10} {'speedup':>8}")
    for name, fn in cases(np.random.default_rng(0)).items():
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=args.repeat, repeat=3)) / args.repeat
        t_c = min(timeit.repeat(lambda: fn(compiled), number=args.repeat, repeat=3)) / args.repeat
        print(f"{name:<22} {t_py * 1e6:>10.1f} {t_c * 1e6:>10.1f} {t_py / t_c:>7.1f}x")
    if not args.skip_train:
        t_py, t_c = train_step_time(True), train_step_time(False)
        print(f"{'train step (default)':<22} {t_py * 1e3:>9.1f}m {t_c * 1e3:>9.1f}m {t_py / t_c:>7.1f}x")


if __name__ == "__main__":
    main()

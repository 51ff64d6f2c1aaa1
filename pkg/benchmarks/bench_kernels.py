"""Compare the compiled window kernels against the numpy fallback.

Runs each backend in a child process (the backend is fixed at import time)
and reports best-of-N wall times for the raw gather/scatter kernels, a full
conv forward/backward through the tape, and one encoding layer forward.

    python3 benchmarks/bench_kernels.py [--repeats 5]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def run_worker(repeats):
    import numpy as np

    from tsrm import kernels
    from tsrm import tensor as tt
    from tsrm.model import ModelConfig, EncodingLayer

    rng = np.random.default_rng(0)
    results = {"backend": kernels.BACKEND}

    # raw kernels: [N, L, C] windows with dilation
    x = rng.standard_normal((64, 336, 64))
    kernel, stride, dilation = 8, 8, 2
    n_windows = (336 - dilation * (kernel - 1) - 1) // stride + 1
    results["gather"] = _time(
        lambda: kernels.gather_windows(x, kernel, stride, dilation, n_windows), repeats
    )
    cols = kernels.gather_windows(x, kernel, stride, dilation, n_windows)
    results["scatter"] = _time(
        lambda: kernels.scatter_windows(cols, stride, dilation, 336), repeats
    )

    # conv1d forward + backward through the tape
    w = tt.Tensor(rng.standard_normal((64, 64, 5)) * 0.05, requires_grad=True)
    b = tt.Tensor(np.zeros(64), requires_grad=True)
    inp = tt.Tensor(rng.standard_normal((56, 96, 64)), requires_grad=True)

    def conv_step():
        with tt.Tape():
            out = tt.conv1d(inp, w, b, stride=5, dilation=1)
            loss = tt.reduce(out * out, kind="mean")
        loss.backward()
        inp.grad = w.grad = b.grad = None

    results["conv_fwd_bwd"] = _time(conv_step, repeats)

    # one encoding layer forward at benchmark-ish size
    cfg = ModelConfig(lookback=96, horizon=96, num_features=7, num_layers=1,
                      num_heads=8, embed_dim=64, num_convs=3).validate()
    layer = EncodingLayer(cfg, np.random.default_rng(1))
    e = tt.Tensor(rng.standard_normal((8, 7, 96, 64)))
    results["encoding_layer_fwd"] = _time(lambda: layer(e, None), repeats)

    print(json.dumps(results))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.worker:
        run_worker(args.repeats)
        return 0

    rows = {}
    for backend in ("numpy", "compiled"):
        env = dict(os.environ, TSRM_KERNELS=backend)
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--worker",
             "--repeats", str(args.repeats)],
            env=env, capture_output=True, text=True,
        )
        if proc.returncode != 0:
            print(f"{backend} backend unavailable:\n{proc.stderr.strip()}", file=sys.stderr)
            continue
        rows[backend] = json.loads(proc.stdout.strip().splitlines()[-1])

    if not rows:
        return 1
    names = ["gather", "scatter", "conv_fwd_bwd", "encoding_layer_fwd"]
    header = f"{'benchmark':<22}" + "".join(f"{b + ' (ms)':>16}" for b in rows)
    if len(rows) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name in names:
        line = f"{name:<22}"
        for backend in rows:
            line += f"{rows[backend][name] * 1e3:>16.3f}"
        if len(rows) == 2:
            line += f"{rows['numpy'][name] / rows['compiled'][name]:>10.2f}x"
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())

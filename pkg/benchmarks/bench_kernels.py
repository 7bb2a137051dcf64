"""Time the numba row kernels against their numpy fallbacks, plus one training step per backend.

    python benchmarks/bench_kernels.py [--rows 4000] [--width 16] [--repeat 50]

Kernel timings run in-process (both tables are importable side by side). The
end-to-end step is timed in a subprocess per backend because the backend is
fixed at import time by SLOTFILTER_BACKEND.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from slotfilter import kernels

STEP_SNIPPET = """
import time
from slotfilter import SynthConfig, TrainConfig, generate_synthetic, train
store = generate_synthetic(SynthConfig(n_classes=10, images_per_class=20, n_test=0))
cfg = TrainConfig(episodes_train=3)
train(store, cfg)  # warm-up (and JIT compile)
t0 = time.perf_counter()
train(store, cfg.with_(episodes_train=20))
print((time.perf_counter() - t0) / 20)
"""


def kernel_cases(rows, width, rng):
    x = rng.standard_normal((rows, width))
    g = rng.standard_normal((rows, width))
    y = kernels.NUMPY["softmax_fwd"](x)
    yn, norm = kernels.NUMPY["l2n_fwd"](x, 1e-12)
    xhat, rstd = kernels.NUMPY["ln_fwd"](x, 1e-5)
    return {
        "softmax_fwd": (x,),
        "softmax_bwd": (y, g),
        "l2n_fwd": (x, 1e-12),
        "l2n_bwd": (yn, norm, g, 1e-12),
        "ln_fwd": (x, 1e-5),
        "ln_bwd": (xhat, rstd, g, 1e-5),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=4000)
    ap.add_argument("--width", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--no-step", action="store_true", help="skip the end-to-end step timing")
    args = ap.parse_args(argv)

    if not kernels.NUMBA:
        print("numba unavailable: nothing to compare")
        return 1
    cases = kernel_cases(args.rows, args.width, np.random.default_rng(0))
    print(f"{'kernel':<12} {'numpy us':>10} {'numba us':>10} {'speedup':>8}  max|diff|")
    for name, call_args in cases.items():
        f_np, f_nb = kernels.NUMPY[name], kernels.NUMBA[name]
        out_np, out_nb = f_np(*call_args), f_nb(*call_args)  # second call also compiles
        out_np = out_np if isinstance(out_np, tuple) else (out_np,)
        out_nb = out_nb if isinstance(out_nb, tuple) else (out_nb,)
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(out_np, out_nb))
        t_np = min(timeit.repeat(lambda: f_np(*call_args), number=args.repeat, repeat=3))
        t_nb = min(timeit.repeat(lambda: f_nb(*call_args), number=args.repeat, repeat=3))
        t_np, t_nb = 1e6 * t_np / args.repeat, 1e6 * t_nb / args.repeat
        print(f"{name:<12} {t_np:>10.1f} {t_nb:>10.1f} {t_np / t_nb:>7.2f}x  {diff:.1e}")

    if not args.no_step:
        for backend in ("numpy", "numba"):
            env = dict(os.environ, SLOTFILTER_BACKEND=backend)
            out = subprocess.run([sys.executable, "-c", STEP_SNIPPET], env=env, check=True,
                                 capture_output=True, text=True).stdout.strip()
            print(f"train step ({backend}): {1e3 * float(out):.1f} ms")
    return 0


if __name__ == "__main__":
    sys.exit(main())
